use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use recmatch::approx::ApproxConfig;
use recmatch::lsh::build_index;
use recmatch::market::{Direction, Side};
use recmatch::mf::FactorModel;

fn top_by_inner_product(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.iter().take(k).map(|p| p.0).collect()
}

#[test]
fn recall_at_10_over_1000_users() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = FactorModel::zeros(100, 1000, d, Direction::XToY);
    for v in model.u_x.as_mut_slice().iter_mut().chain(model.v_y.as_mut_slice()) {
        *v = rng.sample(StandardNormal);
    }
    for b in &mut model.bias_y {
        *b = rng.sample::<f64, _>(StandardNormal) * 0.5;
    }
    let config = ApproxConfig { tables: 8, bits: 10, seed: 1, ..Default::default() };
    let index = build_index(&model, Side::Y, &config).unwrap();

    let mut hits = 0;
    let mut candidates = 0;
    for x in 0..100 {
        let mut query = model.u_x.row(x).to_vec();
        query.push(1.0);
        let brute: Vec<(usize, f64)> = (0..1000).map(|y| (y, model.affinity(x, y))).collect();
        let truth = top_by_inner_product(&brute, 10);
        let found = index.query(&query).unwrap();
        candidates += found.len();
        let ranked: Vec<(usize, f64)> = found.iter().map(|&y| (y, model.affinity(x, y))).collect();
        let got = top_by_inner_product(&ranked, 10);
        hits += truth.iter().filter(|y| got.contains(y)).count();
    }
    let recall = hits as f64 / 1000.0;
    println!("recall@10 = {recall:.3}, mean candidates {}", candidates / 100);
    assert!(recall >= 0.8, "{recall}");
}
