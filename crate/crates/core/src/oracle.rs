//! Independent equilibrium oracle for small markets.
//!
//! Demands are computed explicitly as logit (softmax) choice probabilities,
//! the closed form of the argmax under i.i.d. standard Gumbel noise, and
//! the transfers are adjusted until both sides demand every pair equally.
//! Nothing here shares code with the IPFP path beyond the data types.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{reciprocal_weight, residual};
use crate::error::{Error, Result};
use crate::market::{EquilibriumMatching, ScoreMatrix, Transfers};
use crate::matrix::Matrix;

/// Choice probabilities over `n` options plus an outside option of utility
/// zero. The outside option is the last entry.
pub fn demand_softmax(utilities: &[f64]) -> Result<Vec<f64>> {
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(Error::NotFinite("demand utilities"));
    }
    let (lse, _) = log_partition(utilities.iter().copied());
    let mut out: Vec<f64> = utilities.iter().map(|u| (u - lse).exp()).collect();
    out.push((-lse).exp());
    Ok(out)
}

/// `ln(1 + Σ exp(u))` with the max shifted out; also returns the shift.
fn log_partition(utilities: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = utilities.clone().fold(0.0f64, f64::max);
    let s: f64 = utilities.map(|u| (u - m).exp()).sum::<f64>() + (-m).exp();
    (m + s.ln(), m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TatonnementConfig {
    /// Step in `(0, 1]` on the log-demand gap.
    pub step: f64,
    /// Stop when `max |ln μ_x-side − ln μ_y-side| ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Largest side size accepted.
    pub size_cap: usize,
}

impl Default for TatonnementConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-10,
            max_iters: 100_000,
            size_cap: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub matching: EquilibriumMatching,
    pub transfers: Transfers,
    /// `max |gap|` before each transfer update, in iteration order.
    pub gap_history: Vec<f64>,
}

/// Both sides' logit demands for every pair under transfers `tau`.
pub struct Demands {
    /// `x`'s demand for `y`.
    pub from_x: Matrix,
    /// `y`'s demand for `x`, indexed `(x, y)`.
    pub from_y: Matrix,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// `ln from_x − ln from_y`.
    pub log_gap: Matrix,
}

pub fn demands(scores: &ScoreMatrix, tau: &Matrix) -> Demands {
    let (n_x, n_y) = scores.shape();
    let (p_xy, p_yx) = (scores.p_xy(), scores.p_yx());
    let lse_x: Vec<f64> = (0..n_x)
        .map(|x| log_partition((0..n_y).map(|y| p_xy[(x, y)] - tau[(x, y)])).0)
        .collect();
    let lse_y: Vec<f64> = (0..n_y)
        .map(|y| log_partition((0..n_x).map(|x| p_yx[(x, y)] + tau[(x, y)])).0)
        .collect();
    let log_x = Matrix::from_fn(n_x, n_y, |x, y| p_xy[(x, y)] - tau[(x, y)] - lse_x[x]);
    let log_y = Matrix::from_fn(n_x, n_y, |x, y| p_yx[(x, y)] + tau[(x, y)] - lse_y[y]);
    Demands {
        from_x: log_x.map(f64::exp),
        from_y: log_y.map(f64::exp),
        x0: lse_x.iter().map(|l| (-l).exp()).collect(),
        y0: lse_y.iter().map(|l| (-l).exp()).collect(),
        log_gap: Matrix::from_fn(n_x, n_y, |x, y| log_x[(x, y)] - log_y[(x, y)]),
    }
}

fn max_abs(m: &Matrix) -> f64 {
    m.as_slice().iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn tatonnement_equilibrium(scores: &ScoreMatrix, config: &TatonnementConfig) -> Result<OracleSolution> {
    let (n_x, n_y) = scores.shape();
    tatonnement_from(scores, Matrix::zeros(n_x, n_y), config)
}

/// Tâtonnement from an arbitrary starting transfer matrix:
/// `τ ← τ + (step/2)·(ln μ_x-side − ln μ_y-side)`.
pub fn tatonnement_from(
    scores: &ScoreMatrix,
    mut tau: Matrix,
    config: &TatonnementConfig,
) -> Result<OracleSolution> {
    let (n_x, n_y) = scores.shape();
    if n_x > config.size_cap || n_y > config.size_cap {
        return Err(Error::OracleTooLarge {
            n_x,
            n_y,
            cap: config.size_cap,
        });
    }
    if tau.shape() != (n_x, n_y) {
        return Err(Error::DimensionMismatch("initial transfers".into()));
    }
    if !(config.step > 0.0 && config.step <= 1.0) || !(config.tol > 0.0) {
        return Err(Error::Config("oracle step must lie in (0, 1] and tol be positive".into()));
    }
    let mut history = Vec::new();
    for iter in 0..=config.max_iters {
        let d = demands(scores, &tau);
        let gap = max_abs(&d.log_gap);
        if !gap.is_finite() {
            return Err(Error::NotFinite("oracle demand gap"));
        }
        history.push(gap);
        if gap <= config.tol {
            let matching = EquilibriumMatching {
                mu: d.from_x,
                mu_x0: d.x0,
                mu_y0: d.y0,
                residual: 0.0,
                iterations: iter,
                converged: true,
            };
            let residual = residual(&matching);
            return Ok(OracleSolution {
                matching: EquilibriumMatching { residual, ..matching },
                transfers: Transfers { tau },
                gap_history: history,
            });
        }
        if iter == config.max_iters {
            break;
        }
        let half = 0.5 * config.step;
        for (t, g) in tau.as_mut_slice().iter_mut().zip(d.log_gap.as_slice()) {
            *t += half * g;
        }
    }
    Err(Error::OracleDiverged {
        iterations: config.max_iters,
        gap: *history.last().unwrap_or(&f64::INFINITY),
    })
}

/// Outcome of [`check_equilibrium`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// Largest `|Σμ + μ0 − 1|`.
    pub marginal_violation: f64,
    /// Largest `|μ_x-side − μ_y-side|` under the supplied transfers.
    pub demand_violation: f64,
    /// Largest `|μ − p̃·√μ_x0·√μ_y0|`.
    pub closed_form_violation: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn check_equilibrium(
    scores: &ScoreMatrix,
    matching: &EquilibriumMatching,
    transfers: &Transfers,
    tol: f64,
) -> Result<EquilibriumReport> {
    let shape = scores.shape();
    if matching.mu.shape() != shape
        || transfers.tau.shape() != shape
        || matching.mu_x0.len() != shape.0
        || matching.mu_y0.len() != shape.1
    {
        return Err(Error::DimensionMismatch("equilibrium check inputs".into()));
    }
    let marginal_violation = residual(matching);
    let d = demands(scores, &transfers.tau);
    let demand_violation = d.from_x.max_abs_diff(&d.from_y);
    let mut closed_form_violation: f64 = 0.0;
    for x in 0..shape.0 {
        for y in 0..shape.1 {
            let w = reciprocal_weight(scores.p_xy()[(x, y)], scores.p_yx()[(x, y)]);
            let expect = w * matching.mu_x0[x].max(0.0).sqrt() * matching.mu_y0[y].max(0.0).sqrt();
            closed_form_violation = closed_form_violation.max((matching.mu[(x, y)] - expect).abs());
        }
    }
    let worst = marginal_violation
        .max(demand_violation)
        .max(closed_form_violation);
    Ok(EquilibriumReport {
        marginal_violation,
        demand_violation,
        closed_form_violation,
        tol,
        passed: worst <= tol,
    })
}
