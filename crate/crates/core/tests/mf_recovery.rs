use recmatch::market::Direction;
use recmatch::mf::{score_matrix, train_mf, TrainConfig};
use recmatch::simgen::{generate_market, SimConfig};

// Pure rank-2 truth (no popularity offsets), every pair swiped once in each
// direction. At 100 swipes per user the per-user estimates alone leave an
// RMSE near 0.1.
#[test]
fn recovers_rank_two_probabilities() {
    let sim = generate_market(&SimConfig {
        n_x: 500,
        n_y: 500,
        d_true: 2,
        popularity_skew: 0.0,
        events_per_user: 500.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig {
        d: 2,
        epochs: 50,
        learning_rate: 0.01,
        use_explicit_negatives: true,
        negative_sampling_rate: 0.0,
        ..Default::default()
    };
    let mxy = train_mf(&sim.market, Direction::XToY, &config).unwrap();
    let myx = train_mf(&sim.market, Direction::YToX, &config).unwrap();
    let fitted = score_matrix(&mxy, &myx).unwrap();
    let rmse = |a: &recmatch::Matrix, b: &recmatch::Matrix| {
        let n = a.as_slice().len() as f64;
        (a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n).sqrt()
    };
    let (e_xy, e_yx) = (rmse(fitted.p_xy(), sim.truth.p_xy()), rmse(fitted.p_yx(), sim.truth.p_yx()));
    println!("rank-2 recovery RMSE: x_to_y {e_xy:.4}, y_to_x {e_yx:.4}");
    assert!(e_xy <= 0.05 && e_yx <= 0.05);
}

#[test]
fn scores_100x100_stay_in_unit_interval() {
    let sim = generate_market(&SimConfig { n_x: 100, n_y: 100, events_per_user: 20.0, ..Default::default() }).unwrap();
    let config = TrainConfig { d: 8, ..Default::default() };
    let mxy = train_mf(&sim.market, Direction::XToY, &config).unwrap();
    let myx = train_mf(&sim.market, Direction::YToX, &config).unwrap();
    let s = score_matrix(&mxy, &myx).unwrap();
    assert!(s.p_xy().as_slice().iter().chain(s.p_yx().as_slice()).all(|p| (0.0..=1.0).contains(p)));
}
