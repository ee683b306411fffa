//! Top-k candidate lists and exposure concentration.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_matrix, FusionKind};
use crate::market::{EquilibriumMatching, Market, ScoreMatrix, Side, Transfers};
use crate::matrix::Matrix;
use crate::metrics::gini_counts;

/// What a ranking sorts candidates by.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankKey {
    /// Fused reciprocal score `φ(p_xy, p_yx)`.
    Fused(FusionKind),
    /// Equilibrium match probability `μ[x, y]`.
    Mtrs,
    /// Own preference net of the transfer: `p_xy − τ` for men, `p_yx + τ`
    /// for women.
    Transfer,
}

impl fmt::Display for RankKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankKey::Fused(kind) => write!(f, "fused:{kind}"),
            RankKey::Mtrs => f.write_str("mu"),
            RankKey::Transfer => f.write_str("transfer"),
        }
    }
}

impl FromStr for RankKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mu" | "mtrs" => Ok(RankKey::Mtrs),
            "transfer" | "tau" => Ok(RankKey::Transfer),
            other => match other.strip_prefix("fused:") {
                Some(kind) => Ok(RankKey::Fused(kind.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown rank key '{s}', expected mu, transfer or fused:<fusion>"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user: String,
    /// Candidate id and ranking score, best first.
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

/// Ranking keys for `side`'s users, laid out `(x, y)` like the scores.
pub fn ranking_keys(
    key: RankKey,
    side: Side,
    scores: &ScoreMatrix,
    equilibrium: Option<(&EquilibriumMatching, &Transfers)>,
) -> Result<Matrix> {
    let need = || Error::Config(format!("rank key {key} needs an equilibrium"));
    match key {
        RankKey::Fused(kind) => fuse_matrix(kind, scores),
        RankKey::Mtrs => Ok(equilibrium.ok_or_else(need)?.0.mu.clone()),
        RankKey::Transfer => {
            let tau = &equilibrium.ok_or_else(need)?.1.tau;
            if tau.shape() != scores.shape() {
                return Err(Error::DimensionMismatch("transfers and scores differ in shape".into()));
            }
            let (n_x, n_y) = scores.shape();
            Ok(match side {
                Side::X => Matrix::from_fn(n_x, n_y, |x, y| scores.p_xy()[(x, y)] - tau[(x, y)]),
                Side::Y => Matrix::from_fn(n_x, n_y, |x, y| scores.p_yx()[(x, y)] + tau[(x, y)]),
            })
        }
    }
}

/// Descending score, then ascending candidate id.
fn order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn top_k(ids: &[String], score: impl Fn(usize) -> f64, k: usize) -> Result<Vec<(String, f64)>> {
    let mut all: Vec<(String, f64)> = Vec::with_capacity(ids.len());
    for (j, id) in ids.iter().enumerate() {
        let s = score(j);
        if s.is_nan() {
            return Err(Error::NotFinite("ranking score"));
        }
        all.push((id.clone(), s));
    }
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_unstable_by(order);
    Ok(all)
}

/// Ranks every user of the other side for `user` by `keys`, which are
/// indexed `(x, y)`. Returns at most `k` candidates.
pub fn recommend_topk(market: &Market, keys: &Matrix, user: &str, k: usize) -> Result<RecommendationList> {
    check_keys(market, keys)?;
    let (side, i) = market.user(user)?;
    recommend_index(market, &|x, y| keys[(x, y)], side, i, k)
}

fn check_keys(market: &Market, keys: &Matrix) -> Result<()> {
    if keys.shape() != (market.n_x(), market.n_y()) {
        return Err(Error::DimensionMismatch(format!(
            "ranking keys are {:?} for a {}x{} market",
            keys.shape(),
            market.n_x(),
            market.n_y()
        )));
    }
    Ok(())
}

fn recommend_index(
    market: &Market,
    key: &(dyn Fn(usize, usize) -> f64 + Sync),
    side: Side,
    i: usize,
    k: usize,
) -> Result<RecommendationList> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let ranked = match side {
        Side::X => top_k(market.ids(Side::Y), |y| key(i, y), k)?,
        Side::Y => top_k(market.ids(Side::X), |x| key(x, i), k)?,
    };
    Ok(RecommendationList {
        user: market.id(side, i).to_string(),
        ranked,
        k,
    })
}

/// Lists for every user of `side`, in index order.
pub fn recommend_all(market: &Market, keys: &Matrix, side: Side, k: usize) -> Result<Vec<RecommendationList>> {
    check_keys(market, keys)?;
    recommend_all_by(market, |x, y| keys[(x, y)], side, k)
}

/// Like [`recommend_all`] with keys computed on demand, `key(x, y)`.
pub fn recommend_all_by(
    market: &Market,
    key: impl Fn(usize, usize) -> f64 + Sync,
    side: Side,
    k: usize,
) -> Result<Vec<RecommendationList>> {
    (0..market.ids(side).len())
        .into_par_iter()
        .map(|i| recommend_index(market, &key, side, i, k))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    /// Side the recommended candidates belong to.
    pub candidate_side: Side,
    pub lists: usize,
    /// Appearances in any list, per candidate in index order.
    pub exposure: Vec<u64>,
    pub gini: f64,
    /// `Σ μ[x, y]` when a matching is supplied.
    pub expected_matches: Option<f64>,
}

/// Exposure counts and their Gini. The lists must cover one whole side,
/// each user exactly once.
pub fn exposure_metrics(
    market: &Market,
    lists: &[RecommendationList],
    matching: Option<&EquilibriumMatching>,
) -> Result<ExposureReport> {
    let first = lists.first().ok_or(Error::Empty("recommendation lists"))?;
    let (side, _) = market.user(&first.user)?;
    let n_side = market.ids(side).len();
    let mut seen = vec![false; n_side];
    let candidate_side = side.other();
    let mut exposure = vec![0u64; market.ids(candidate_side).len()];
    for list in lists {
        let (s, i) = market.user(&list.user)?;
        if s != side {
            return Err(Error::Config(format!(
                "lists mix sides: {} is on side {s}, {} on side {side}",
                list.user, first.user
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!("two lists for user {}", list.user)));
        }
        for (cand, _) in &list.ranked {
            match market.user(cand)? {
                (s, j) if s == candidate_side => exposure[j] += 1,
                _ => {
                    return Err(Error::Config(format!(
                        "candidate {cand} is on the same side as {}",
                        list.user
                    )))
                }
            }
        }
    }
    if lists.len() != n_side {
        return Err(Error::Config(format!(
            "lists cover {} of {n_side} users on side {side}",
            lists.len()
        )));
    }
    Ok(ExposureReport {
        candidate_side,
        lists: lists.len(),
        gini: gini_counts(&exposure)?,
        exposure,
        expected_matches: matching.map(|m| m.mu.as_slice().iter().sum()),
    })
}

/// Writes `user_id,rank,candidate_id,score`, ranks starting at 1.
pub fn write_recommendations_csv(path: &Path, lists: &[RecommendationList]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "rank", "candidate_id", "score"])?;
    for list in lists {
        for (r, (cand, score)) in list.ranked.iter().enumerate() {
            w.write_record([list.user.as_str(), &(r + 1).to_string(), cand, &score.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{recover_transfers, solve_ipfp, ReciprocalWeights, SolverConfig};

    fn market(n_x: usize, n_y: usize) -> Market {
        let men = (0..n_x).map(|i| format!("m{i}")).collect();
        let women = (0..n_y).map(|i| format!("w{i}")).collect();
        Market::new(men, women, Vec::new()).unwrap()
    }

    fn ids(list: &RecommendationList) -> Vec<&str> {
        list.ranked.iter().map(|(c, _)| c.as_str()).collect()
    }

    #[test]
    fn fused_scores_order_candidates() {
        let m = market(1, 2);
        let keys = Matrix::from_rows(&[vec![0.1, 0.9]]);
        let list = recommend_topk(&m, &keys, "m0", 2).unwrap();
        assert_eq!(ids(&list), ["w1", "w0"]);
        assert_eq!(list.ranked[0].1, 0.9);
        let keys = Matrix::from_rows(&[vec![0.9, 0.1]]);
        assert_eq!(ids(&recommend_topk(&m, &keys, "m0", 2).unwrap()), ["w0", "w1"]);
    }

    #[test]
    fn large_k_returns_whole_pool() {
        let m = market(3, 4);
        let keys = Matrix::from_fn(3, 4, |x, y| (x * 4 + y) as f64);
        let list = recommend_topk(&m, &keys, "w2", 10).unwrap();
        assert_eq!(ids(&list), ["m2", "m1", "m0"]);
        assert_eq!(list.k, 10);
        assert_eq!(recommend_topk(&m, &keys, "m1", 2).unwrap().ranked.len(), 2);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let m = market(1, 3);
        let keys = Matrix::from_rows(&[vec![0.5, 0.7, 0.5]]);
        assert_eq!(ids(&recommend_topk(&m, &keys, "m0", 3).unwrap()), ["w1", "w0", "w2"]);
        assert_eq!(ids(&recommend_topk(&m, &keys, "m0", 2).unwrap()), ["w1", "w0"]);
    }

    #[test]
    fn equal_mu_in_golden_ratio_market_ties_by_id() {
        let m = market(1, 2);
        let scores = ScoreMatrix::uniform(1, 2, 0.0).unwrap();
        let eq = solve_ipfp(&ReciprocalWeights::from_scores(&scores), &SolverConfig::default()).unwrap();
        let tau = recover_transfers(&scores, &eq).unwrap();
        assert_eq!(eq.mu[(0, 0)], eq.mu[(0, 1)]);
        let keys = ranking_keys(RankKey::Mtrs, Side::X, &scores, Some((&eq, &tau))).unwrap();
        let list = recommend_topk(&m, &keys, "m0", 2).unwrap();
        assert_eq!(ids(&list), ["w0", "w1"]);
    }

    #[test]
    fn errors() {
        let m = market(2, 2);
        let keys = Matrix::zeros(2, 2);
        assert!(matches!(recommend_topk(&m, &keys, "nobody", 1), Err(Error::UnknownUser(_))));
        assert!(recommend_topk(&m, &keys, "m0", 0).is_err());
        assert!(recommend_topk(&m, &Matrix::zeros(2, 3), "m0", 1).is_err());
        let nan = Matrix::filled(2, 2, f64::NAN);
        assert!(recommend_topk(&m, &nan, "m0", 1).is_err());
        let scores = ScoreMatrix::uniform(2, 2, 0.5).unwrap();
        assert!(ranking_keys(RankKey::Mtrs, Side::X, &scores, None).is_err());
    }

    #[test]
    fn transfer_keys_follow_side() {
        let scores = ScoreMatrix::new(
            Matrix::from_rows(&[vec![0.8, 0.2]]),
            Matrix::from_rows(&[vec![0.1, 0.6]]),
        )
        .unwrap();
        let eq = EquilibriumMatching {
            mu: Matrix::zeros(1, 2),
            mu_x0: vec![1.0],
            mu_y0: vec![1.0, 1.0],
            residual: 0.0,
            iterations: 0,
            converged: true,
        };
        let tau = Transfers {
            tau: Matrix::from_rows(&[vec![0.3, -0.1]]),
        };
        let kx = ranking_keys(RankKey::Transfer, Side::X, &scores, Some((&eq, &tau))).unwrap();
        let ky = ranking_keys(RankKey::Transfer, Side::Y, &scores, Some((&eq, &tau))).unwrap();
        assert!((kx[(0, 0)] - 0.5).abs() < 1e-15 && (kx[(0, 1)] - 0.3).abs() < 1e-15);
        assert!((ky[(0, 0)] - 0.4).abs() < 1e-15 && (ky[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rank_key_tokens() {
        assert_eq!("mu".parse::<RankKey>().unwrap(), RankKey::Mtrs);
        assert_eq!("transfer".parse::<RankKey>().unwrap(), RankKey::Transfer);
        assert_eq!(
            "fused:harmonic".parse::<RankKey>().unwrap(),
            RankKey::Fused(FusionKind::Harmonic)
        );
        for key in [RankKey::Mtrs, RankKey::Transfer, RankKey::Fused(FusionKind::Geometric)] {
            assert_eq!(key.to_string().parse::<RankKey>().unwrap(), key);
        }
        assert!("best".parse::<RankKey>().is_err());
    }

    #[test]
    fn uniform_exposure_has_zero_gini() {
        let m = market(4, 4);
        // user x sees candidates x and x+1 (mod 4): every candidate twice
        let keys = Matrix::from_fn(4, 4, |x, y| if y == x || y == (x + 1) % 4 { 1.0 } else { 0.0 });
        let lists = recommend_all(&m, &keys, Side::X, 2).unwrap();
        let report = exposure_metrics(&m, &lists, None).unwrap();
        assert_eq!(report.exposure, vec![2, 2, 2, 2]);
        assert_eq!(report.gini, 0.0);
        assert_eq!(report.candidate_side, Side::Y);
    }

    #[test]
    fn same_k_of_2k_has_gini_half() {
        let k = 3;
        let m = market(5, 2 * k);
        let keys = Matrix::from_fn(5, 2 * k, |_, y| if y < k { 1.0 } else { 0.0 });
        let lists = recommend_all(&m, &keys, Side::X, k).unwrap();
        let report = exposure_metrics(&m, &lists, None).unwrap();
        // brute force: mean |a_i − a_j| over all ordered pairs / (2·mean)
        let e: Vec<f64> = report.exposure.iter().map(|&c| c as f64).collect();
        let n = e.len() as f64;
        let mad: f64 = e.iter().flat_map(|a| e.iter().map(move |b| (a - b).abs())).sum::<f64>() / (n * n);
        let brute = mad / (2.0 * e.iter().sum::<f64>() / n);
        assert!((brute - 0.5).abs() < 1e-15);
        assert!((report.gini - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exposure_requires_a_full_side() {
        let m = market(3, 3);
        let keys = Matrix::zeros(3, 3);
        let lists = recommend_all(&m, &keys, Side::X, 1).unwrap();
        assert!(exposure_metrics(&m, &lists[..2], None).is_err());
        assert!(exposure_metrics(&m, &[], None).is_err());
        let mut twice = lists.clone();
        twice[1] = twice[0].clone();
        assert!(exposure_metrics(&m, &twice, None).is_err());
        let mut mixed = lists.clone();
        mixed[2] = recommend_topk(&m, &keys, "w0", 1).unwrap();
        assert!(exposure_metrics(&m, &mixed, None).is_err());

        let eq = EquilibriumMatching {
            mu: Matrix::filled(3, 3, 0.25),
            mu_x0: vec![0.25; 3],
            mu_y0: vec![0.25; 3],
            residual: 0.0,
            iterations: 1,
            converged: true,
        };
        let report = exposure_metrics(&m, &lists, Some(&eq)).unwrap();
        assert_eq!(report.expected_matches, Some(2.25));
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let lists = vec![RecommendationList {
            user: "m0".into(),
            ranked: vec![("w1".into(), 0.75), ("w0".into(), 0.5)],
            k: 2,
        }];
        write_recommendations_csv(&p, &lists).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "user_id,rank,candidate_id,score\nm0,1,w1,0.75\nm0,2,w0,0.5\n"
        );
    }
}
