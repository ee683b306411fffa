use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recmatch::approx::{approx_row_sum, ApproxConfig};
use recmatch::equilibrium::{reciprocal_weight, solve_ipfp, ReciprocalWeights, SolverConfig};
use recmatch::lsh::{pair_keys, NeighborIndex};
use recmatch::market::{Direction, Side};
use recmatch::mf::{score_matrix, FactorModel};

fn random_models(n: usize, d: usize, seed: u64) -> (FactorModel, FactorModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |direction| {
        let mut m = FactorModel::zeros(n, n, d, direction);
        for v in m.u_x.as_mut_slice().iter_mut().chain(m.v_y.as_mut_slice()) {
            *v = rng.random_range(-0.8..0.8);
        }
        for b in m.bias_x.iter_mut().chain(m.bias_y.iter_mut()) {
            *b = rng.random_range(-1.0..1.0);
        }
        m
    };
    let a = make(Direction::XToY);
    (a, make(Direction::YToX))
}

struct Setup {
    weights: ReciprocalWeights,
    index: NeighborIndex,
    queries: recmatch::Matrix,
    sqrt_mu_y0: Vec<f64>,
}

fn setup(n: usize, config: &ApproxConfig) -> Setup {
    let (mxy, myx) = random_models(n, 4, 21);
    let scores = score_matrix(&mxy, &myx).unwrap();
    let weights = ReciprocalWeights::from_scores(&scores);
    let eq = solve_ipfp(&weights, &SolverConfig::default()).unwrap();
    let (keys, queries) = pair_keys(&mxy, &myx, Side::Y).unwrap();
    let index = NeighborIndex::from_keys(Side::Y, &keys, config).unwrap();
    // the oracle weight path is the dense matrix, the estimator sees the same values
    assert_eq!(weights.get(3, 4), reciprocal_weight(scores.p_xy()[(3, 4)], scores.p_yx()[(3, 4)]));
    Setup {
        weights,
        index,
        queries,
        sqrt_mu_y0: eq.mu_y0.iter().map(|m| m.sqrt()).collect(),
    }
}

fn dense_row_sum(s: &Setup, x: usize) -> f64 {
    s.weights.matrix().row(x).iter().zip(&s.sqrt_mu_y0).map(|(w, m)| w * m).sum()
}

#[test]
fn relative_error_on_500_users() {
    let config = ApproxConfig { top_m: 50, tail_samples: 100, seed: 4, ..Default::default() };
    let s = setup(500, &config);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut total = 0.0;
    for x in 0..500 {
        let est = approx_row_sum(&s.index, s.queries.row(x), |y| s.weights.get(x, y), &s.sqrt_mu_y0, &config, &mut rng)
            .unwrap();
        let exact = dense_row_sum(&s, x);
        total += (est.value - exact).abs() / exact;
    }
    let mean = total / 500.0;
    println!("mean relative error of b_x: {mean:.5}");
    assert!(mean <= 0.02, "{mean}");
}

#[test]
fn tail_estimator_is_unbiased() {
    let config = ApproxConfig { top_m: 20, tail_samples: 30, seed: 9, ..Default::default() };
    let s = setup(300, &config);
    for x in [0, 17, 123] {
        let exact = dense_row_sum(&s, x);
        let mut rng = ChaCha8Rng::seed_from_u64(x as u64);
        let draws: Vec<f64> = (0..1000)
            .map(|_| {
                approx_row_sum(&s.index, s.queries.row(x), |y| s.weights.get(x, y), &s.sqrt_mu_y0, &config, &mut rng)
                    .unwrap()
                    .value
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / 1000.0;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        let se = (var / 1000.0).sqrt();
        println!("row {x}: exact {exact:.6}, mean {mean:.6}, se {se:.2e}");
        assert!(var > 0.0);
        assert!((mean - exact).abs() <= 3.0 * se, "row {x}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn reported_variance_tracks_resampling_variance() {
    let config = ApproxConfig { top_m: 10, tail_samples: 40, seed: 2, ..Default::default() };
    let s = setup(300, &config);
    let x = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let est: Vec<_> = (0..2000)
        .map(|_| {
            approx_row_sum(&s.index, s.queries.row(x), |y| s.weights.get(x, y), &s.sqrt_mu_y0, &config, &mut rng)
                .unwrap()
        })
        .collect();
    let mean = est.iter().map(|e| e.value).sum::<f64>() / 2000.0;
    let empirical = est.iter().map(|e| (e.value - mean).powi(2)).sum::<f64>() / 1999.0;
    let reported = est.iter().map(|e| e.variance).sum::<f64>() / 2000.0;
    println!("empirical {empirical:.3e}, reported {reported:.3e}");
    assert!((reported / empirical - 1.0).abs() < 0.15);
}
