//! Seeded synthetic two-sided markets with controllable popularity skew.
//!
//! Every user has a latent taste vector (what they look for) and a trait
//! vector (what they offer). The probability that `a` likes `b` is
//! `logistic(scale·taste_a·trait_b/√d + pop_b + base)`. The receiver's
//! popularity offset is `ln w_b`, where `w_b ∝ rank_b^−skew` for a random
//! popularity rank and the weights average to one. Odds of being liked
//! therefore fall off as `rank^−skew`.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Action, Direction, FeedbackEvent, Market, ScoreMatrix, Side};
use crate::matrix::Matrix;
use crate::mf::{score_matrix, FactorModel};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub d_true: usize,
    /// Zipf-like exponent of receiver attractiveness; 0 means no stars.
    pub popularity_skew: f64,
    /// Mean number of swipes each user sends.
    pub events_per_user: f64,
    pub seed: u64,
    /// Multiplier on the normalized taste/trait affinity.
    pub affinity_scale: f64,
    /// Global log-odds offset.
    pub base_logit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_x: 1000,
            n_y: 1000,
            d_true: 4,
            popularity_skew: 1.0,
            events_per_user: 100.0,
            seed: 0,
            affinity_scale: 1.5,
            base_logit: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 {
            return Err(Error::Config("n_x and n_y must be at least 1".into()));
        }
        if self.d_true == 0 {
            return Err(Error::Config("d_true must be at least 1".into()));
        }
        if !(self.popularity_skew >= 0.0) || !(self.events_per_user > 0.0) {
            return Err(Error::Config(
                "popularity_skew must be >= 0 and events_per_user > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A generated market together with the generating quantities.
#[derive(Clone, Debug)]
pub struct SimMarket {
    pub market: Market,
    pub truth: ScoreMatrix,
    /// Direction models that reproduce `truth` exactly through
    /// [`crate::mf::score_matrix`].
    pub truth_xy: FactorModel,
    pub truth_yx: FactorModel,
    /// Popularity log-odds offset per X user.
    pub popularity_x: Vec<f64>,
    pub popularity_y: Vec<f64>,
}

struct Population {
    taste: Matrix,
    traits: Matrix,
    popularity: Vec<f64>,
}

fn population<R: Rng>(rng: &mut R, n: usize, d: usize, skew: f64) -> Population {
    let mut normal = |rows| Matrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let taste = normal(n);
    let traits = normal(n);
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(rng);
    // attractiveness weights rank^-skew normalized to mean one, as log-odds
    let log_w: Vec<f64> = ranks.iter().map(|&r| -skew * (r as f64).ln()).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_mean = max + (log_w.iter().map(|w| (w - max).exp()).sum::<f64>() / n as f64).ln();
    let popularity = log_w.iter().map(|w| w - log_mean).collect();
    Population {
        taste,
        traits,
        popularity,
    }
}

/// Model of `senders`' preferences over `receivers`, in (x, y) indexing.
fn truth_model(senders: &Population, receivers: &Population, direction: Direction, config: &SimConfig) -> FactorModel {
    let norm = config.affinity_scale / (config.d_true as f64).sqrt();
    let taste = senders.taste.map(|v| norm * v);
    let bias: Vec<f64> = receivers.popularity.iter().map(|p| p + config.base_logit).collect();
    let (u_x, v_y, bias_x, bias_y) = match direction {
        Direction::XToY => (taste, receivers.traits.clone(), vec![0.0; senders.taste.rows()], bias),
        Direction::YToX => (receivers.traits.clone(), taste, bias, vec![0.0; senders.taste.rows()]),
    };
    FactorModel {
        d: config.d_true,
        u_x,
        v_y,
        bias_x,
        bias_y,
        direction,
    }
}

pub fn generate_market(config: &SimConfig) -> Result<SimMarket> {
    config.validate()?;
    let mut rng = rng::substream(config.seed, 10, 0);
    let xs = population(&mut rng, config.n_x, config.d_true, config.popularity_skew);
    let ys = population(&mut rng, config.n_y, config.d_true, config.popularity_skew);
    let truth_xy = truth_model(&xs, &ys, Direction::XToY, config);
    let truth_yx = truth_model(&ys, &xs, Direction::YToX, config);
    let truth = score_matrix(&truth_xy, &truth_yx)?;
    let (p_xy, p_yx) = (truth.p_xy(), truth.p_yx());

    let mut events = Vec::new();
    let mut clock = 0u64;
    let whole = config.events_per_user.floor() as usize;
    let frac = config.events_per_user - whole as f64;
    for side in [Side::X, Side::Y] {
        let (n_send, n_recv) = match side {
            Side::X => (config.n_x, config.n_y),
            Side::Y => (config.n_y, config.n_x),
        };
        for sender in 0..n_send {
            let count = (whole + usize::from(frac > 0.0 && rng.random::<f64>() < frac)).min(n_recv);
            for receiver in index::sample(&mut rng, n_recv, count) {
                let (x, y) = match side {
                    Side::X => (sender, receiver),
                    Side::Y => (receiver, sender),
                };
                let (p_send, p_reply) = match side {
                    Side::X => (p_xy[(x, y)], p_yx[(x, y)]),
                    Side::Y => (p_yx[(x, y)], p_xy[(x, y)]),
                };
                let liked = rng.random::<f64>() < p_send;
                events.push(FeedbackEvent {
                    sender_side: side,
                    sender,
                    receiver,
                    action: if liked { Action::Like } else { Action::Nope },
                    timestamp: clock,
                });
                clock += 1;
                if liked {
                    let thanked = rng.random::<f64>() < p_reply;
                    events.push(FeedbackEvent {
                        sender_side: side.other(),
                        sender: receiver,
                        receiver: sender,
                        action: if thanked { Action::Thank } else { Action::Sorry },
                        timestamp: clock,
                    });
                    clock += 1;
                }
            }
        }
    }

    let men = (0..config.n_x).map(|i| format!("m{i:05}")).collect();
    let women = (0..config.n_y).map(|i| format!("w{i:05}")).collect();
    Ok(SimMarket {
        market: Market::new(men, women, events)?,
        truth,
        truth_xy,
        truth_yx,
        popularity_x: xs.popularity,
        popularity_y: ys.popularity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_log() {
        let cfg = SimConfig { n_x: 60, n_y: 40, seed: 3, events_per_user: 7.5, ..Default::default() };
        let a = generate_market(&cfg).unwrap();
        let b = generate_market(&cfg).unwrap();
        assert_eq!(a.market, b.market);
        assert_eq!(a.truth, b.truth);
        let c = generate_market(&SimConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.market.feedback(), c.market.feedback());
    }

    #[test]
    fn truth_follows_taste_trait_and_popularity() {
        let cfg = SimConfig { n_x: 12, n_y: 9, d_true: 3, seed: 5, popularity_skew: 1.5, base_logit: -0.3, ..Default::default() };
        let sim = generate_market(&cfg).unwrap();
        let mut rng = rng::substream(cfg.seed, 10, 0);
        let xs = population(&mut rng, cfg.n_x, cfg.d_true, cfg.popularity_skew);
        let ys = population(&mut rng, cfg.n_y, cfg.d_true, cfg.popularity_skew);
        let scale = cfg.affinity_scale / (cfg.d_true as f64).sqrt();
        let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        for x in 0..cfg.n_x {
            for y in 0..cfg.n_y {
                let xy = sigma(scale * dot(xs.taste.row(x), ys.traits.row(y)) + ys.popularity[y] + cfg.base_logit);
                let yx = sigma(scale * dot(ys.taste.row(y), xs.traits.row(x)) + xs.popularity[x] + cfg.base_logit);
                assert!((sim.truth.p_xy()[(x, y)] - xy).abs() < 1e-12);
                assert!((sim.truth.p_yx()[(x, y)] - yx).abs() < 1e-12);
            }
        }
        // attractiveness weights average to one
        for pop in [&sim.popularity_x, &sim.popularity_y] {
            let mean = pop.iter().map(|p| p.exp()).sum::<f64>() / pop.len() as f64;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truth_is_strictly_inside_unit_interval() {
        let cfg = SimConfig { n_x: 50, n_y: 70, popularity_skew: 2.0, ..Default::default() };
        let sim = generate_market(&cfg).unwrap();
        for p in sim.truth.p_xy().as_slice().iter().chain(sim.truth.p_yx().as_slice()) {
            assert!(*p > 0.0 && *p < 1.0);
        }
        assert_eq!(sim.truth.shape(), (50, 70));
    }

    #[test]
    fn events_respect_sides_and_counts() {
        let cfg = SimConfig { n_x: 5, n_y: 3, events_per_user: 10.0, ..Default::default() };
        let sim = generate_market(&cfg).unwrap();
        // more swipes requested than partners: everyone swipes on everyone
        let swipes = sim
            .market
            .feedback()
            .iter()
            .filter(|e| matches!(e.action, Action::Like | Action::Nope))
            .count();
        assert_eq!(swipes, 2 * 5 * 3);
        for e in sim.market.feedback() {
            if matches!(e.action, Action::Thank | Action::Sorry) {
                let (x, y) = e.pair();
                assert!(sim.market.feedback().iter().any(|l| l.action == Action::Like
                    && l.pair() == (x, y)
                    && l.sender_side != e.sender_side));
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(generate_market(&SimConfig { n_x: 0, ..Default::default() }).is_err());
        assert!(generate_market(&SimConfig { events_per_user: 0.0, ..Default::default() }).is_err());
        assert!(generate_market(&SimConfig { popularity_skew: -1.0, ..Default::default() }).is_err());
    }
}
