use recmatch::market::Side;
use recmatch::metrics::{gini_counts, spearman};
use recmatch::simgen::{generate_market, SimConfig};

fn like_gini(skew: f64, seed: u64) -> f64 {
    let sim = generate_market(&SimConfig {
        n_x: 1000,
        n_y: 1000,
        popularity_skew: skew,
        seed,
        ..Default::default()
    })
    .unwrap();
    gini_counts(&sim.market.like_in_degree(Side::Y)).unwrap()
}

#[test]
fn no_skew_means_low_concentration() {
    let g = like_gini(0.0, 1);
    println!("skew 0.0: like in-degree gini {g:.3}");
    assert!(g <= 0.2, "{g}");
}

#[test]
fn strong_skew_concentrates_likes() {
    let g = like_gini(1.5, 1);
    println!("skew 1.5: like in-degree gini {g:.3}");
    assert!(g >= 0.5, "{g}");
}

#[test]
fn concentration_grows_with_skew() {
    let gs: Vec<f64> = [0.0, 0.5, 1.0, 1.5, 2.0].iter().map(|&s| like_gini(s, 2)).collect();
    println!("gini by skew: {gs:?}");
    assert!(gs.windows(2).all(|w| w[1] > w[0]));
}

// Rank correlation needs every sender to see every receiver, otherwise the
// low-popularity tail is tied at zero likes. Beyond skew 2 the tail is tied
// at zero even then (skew 3 gives about 0.6).
#[test]
fn in_degree_tracks_popularity() {
    for skew in [1.0, 1.5, 2.0] {
        let sim = generate_market(&SimConfig {
            popularity_skew: skew,
            events_per_user: 1000.0,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let likes: Vec<f64> = sim.market.like_in_degree(Side::Y).iter().map(|&c| c as f64).collect();
        let rho = spearman(&sim.popularity_y, &likes).unwrap();
        println!("skew {skew}: spearman(popularity, likes) = {rho:.3}");
        assert!(rho >= 0.8, "skew {skew}: {rho}");
    }
}
