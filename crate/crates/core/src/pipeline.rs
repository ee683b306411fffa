//! End-to-end run: train both directions, score, solve or fuse, rank.

use serde::{Deserialize, Serialize};

use crate::approx::{solve_ipfp_approx, ApproxConfig, ApproxEquilibrium};
use crate::equilibrium::{recover_transfers, solve_ipfp, ReciprocalWeights, SolverConfig};
use crate::error::{Error, Result};
use crate::market::{Direction, EquilibriumMatching, Market, ScoreMatrix, Side, Transfers};
use crate::mf::{logistic, score_matrix, train_mf, FactorModel, TrainConfig};
use crate::recommend::{ranking_keys, recommend_all, recommend_all_by, RankKey, RecommendationList};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Root seed; overrides the seeds inside the nested configs.
    pub seed: u64,
    pub train_xy: TrainConfig,
    pub train_yx: TrainConfig,
    pub solver: SolverConfig,
    /// Solve with the sampled solver instead of the dense one.
    pub approx: Option<ApproxConfig>,
    #[serde(with = "rank_key_str")]
    pub rank_key: RankKey,
    pub k: usize,
}

mod rank_key_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::recommend::RankKey;

    pub fn serialize<S: Serializer>(key: &RankKey, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(key)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RankKey, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_xy: TrainConfig::default(),
            train_yx: TrainConfig::default(),
            solver: SolverConfig::default(),
            approx: None,
            rank_key: RankKey::Mtrs,
            k: 10,
        }
    }
}

/// The equilibrium behind an MTRS ranking.
#[derive(Clone, Debug)]
pub enum Solution {
    Exact {
        matching: EquilibriumMatching,
        transfers: Transfers,
    },
    Approx(Box<ApproxEquilibrium>),
}

impl Solution {
    pub fn converged(&self) -> bool {
        match self {
            Solution::Exact { matching, .. } => matching.converged,
            Solution::Approx(a) => a.converged,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub model_xy: FactorModel,
    pub model_yx: FactorModel,
    /// Dense scores; absent when the sampled solver was used.
    pub scores: Option<ScoreMatrix>,
    /// Absent for fused rankings.
    pub solution: Option<Solution>,
    pub lists_x: Vec<RecommendationList>,
    pub lists_y: Vec<RecommendationList>,
}

pub fn train_both(market: &Market, config: &PipelineConfig) -> Result<(FactorModel, FactorModel)> {
    let cxy = TrainConfig {
        seed: config.seed,
        ..config.train_xy.clone()
    };
    let cyx = TrainConfig {
        seed: config.seed,
        ..config.train_yx.clone()
    };
    let (a, b) = rayon::join(
        || train_mf(market, Direction::XToY, &cxy),
        || train_mf(market, Direction::YToX, &cyx),
    );
    Ok((a?, b?))
}

/// Solves, then ranks for both sides, from already trained models.
pub fn rank_from_models(
    market: &Market,
    model_xy: FactorModel,
    model_yx: FactorModel,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    if config.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let needs_equilibrium = !matches!(config.rank_key, RankKey::Fused(_));
    if let (Some(aconfig), true) = (&config.approx, needs_equilibrium) {
        let aconfig = ApproxConfig {
            seed: config.seed,
            ..aconfig.clone()
        };
        let sol = solve_ipfp_approx(&model_xy, &model_yx, &config.solver, &aconfig)?;
        let (lists_x, lists_y) = {
            let rank = |side: Side| match config.rank_key {
                RankKey::Transfer => {
                    let own = |x: usize, y: usize| match side {
                        Side::X => logistic(model_xy.affinity(x, y)) - sol.transfer(x, y),
                        Side::Y => logistic(model_yx.affinity(x, y)) + sol.transfer(x, y),
                    };
                    recommend_all_by(market, own, side, config.k)
                }
                _ => recommend_all_by(market, |x, y| sol.mu(x, y), side, config.k),
            };
            (rank(Side::X)?, rank(Side::Y)?)
        };
        return Ok(PipelineOutput {
            model_xy,
            model_yx,
            scores: None,
            solution: Some(Solution::Approx(Box::new(sol))),
            lists_x,
            lists_y,
        });
    }

    let scores = score_matrix(&model_xy, &model_yx)?;
    let solution = if needs_equilibrium {
        let matching = solve_ipfp(&ReciprocalWeights::from_scores(&scores), &config.solver)?;
        let transfers = recover_transfers(&scores, &matching)?;
        Some(Solution::Exact { matching, transfers })
    } else {
        None
    };
    let eq = match &solution {
        Some(Solution::Exact { matching, transfers }) => Some((matching, transfers)),
        _ => None,
    };
    let mut lists = Vec::with_capacity(2);
    for side in [Side::X, Side::Y] {
        let keys = ranking_keys(config.rank_key, side, &scores, eq)?;
        lists.push(recommend_all(market, &keys, side, config.k)?);
    }
    let lists_y = lists.pop().expect("two sides");
    let lists_x = lists.pop().expect("two sides");
    Ok(PipelineOutput {
        model_xy,
        model_yx,
        scores: Some(scores),
        solution,
        lists_x,
        lists_y,
    })
}

/// `train → score → solve or fuse → recommend` for every user.
pub fn run_pipeline(market: &Market, config: &PipelineConfig) -> Result<PipelineOutput> {
    let (model_xy, model_yx) = train_both(market, config)?;
    rank_from_models(market, model_xy, model_yx, config)
}
