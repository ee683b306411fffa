//! Exact transferable-utility matching equilibrium via IPFP.
//!
//! With logit (Gumbel) noise the equilibrium satisfies
//! `μ_xy = exp((p_xy + p_yx)/2)·√μ_x0·√μ_y0` together with the unit-mass
//! constraints `Σ_y μ_xy + μ_x0 = 1` and `Σ_x μ_xy + μ_y0 = 1`. The solver
//! alternates closed-form updates of `√μ_x0` and `√μ_y0` until the largest
//! constraint violation drops below the tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{EquilibriumMatching, ScoreMatrix, Side, Transfers};
use crate::matrix::Matrix;
use crate::sweep::{self, MarginalSums};

/// Below this many pairs the sums run on the calling thread.
const COLUMN_BLOCK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once the largest marginal violation is at most this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Relaxation in `(0, 1]` applied to the `√μ0` updates.
    pub damping: f64,
    /// Apply the singles-mass exchange after each x-update. It leaves every
    /// `μ_xy` unchanged and removes the slowly contracting mode of plain
    /// IPFP on near-balanced markets.
    pub rebalance: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 1000,
            damping: 1.0,
            rebalance: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `exp((p_xy + p_yx) / 2)`.
#[inline]
pub fn reciprocal_weight(p_xy: f64, p_yx: f64) -> f64 {
    ((p_xy + p_yx) / 2.0).exp()
}

/// The matrix of reciprocal weights `p̃[x, y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReciprocalWeights {
    weights: Matrix,
}

impl ReciprocalWeights {
    pub fn from_scores(scores: &ScoreMatrix) -> Self {
        let (n_x, n_y) = scores.shape();
        let (p_xy, p_yx) = (scores.p_xy().as_slice(), scores.p_yx().as_slice());
        let data = p_xy
            .iter()
            .zip(p_yx)
            .map(|(&a, &b)| reciprocal_weight(a, b))
            .collect();
        Self {
            weights: Matrix::from_vec(n_x, n_y, data),
        }
    }

    /// Arbitrary weights; every entry must be finite and positive.
    pub fn from_matrix(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Empty("reciprocal weights"));
        }
        if let Some(v) = weights.as_slice().iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::OutOfRange(format!(
                "reciprocal weight {v} is not finite and positive"
            )));
        }
        Ok(Self { weights })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.weights[(x, y)]
    }
}

impl MarginalSums for ReciprocalWeights {
    fn n_x(&self) -> usize {
        self.weights.rows()
    }

    fn n_y(&self) -> usize {
        self.weights.cols()
    }

    fn row_sums(&self, s_y: &[f64], out: &mut [f64]) -> f64 {
        let w = &self.weights;
        let row = |(x, o): (usize, &mut f64)| {
            let mut acc = 0.0;
            for (wv, s) in w.row(x).iter().zip(s_y) {
                acc += wv * s;
            }
            *o = acc;
        };
        if sweep::parallel(w.rows() * w.cols()) {
            out.par_iter_mut().enumerate().for_each(row);
        } else {
            out.iter_mut().enumerate().for_each(row);
        }
        0.0
    }

    fn col_sums(&self, s_x: &[f64], out: &mut [f64]) -> f64 {
        let w = &self.weights;
        let block = |(k, chunk): (usize, &mut [f64])| {
            let c0 = k * COLUMN_BLOCK;
            chunk.fill(0.0);
            for (x, &s) in s_x.iter().enumerate() {
                let row = &w.row(x)[c0..c0 + chunk.len()];
                for (acc, wv) in chunk.iter_mut().zip(row) {
                    *acc += wv * s;
                }
            }
        };
        if sweep::parallel(w.rows() * w.cols()) {
            out.par_chunks_mut(COLUMN_BLOCK).enumerate().for_each(block);
        } else {
            out.chunks_mut(COLUMN_BLOCK).enumerate().for_each(block);
        }
        0.0
    }
}

/// Solver diagnostics, serialized as the `solve` report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

impl SolveDiagnostics {
    pub fn of(matching: &EquilibriumMatching, wall_ms: f64) -> Self {
        Self {
            sweeps: matching.iterations,
            residual: matching.residual,
            converged: matching.converged,
            wall_ms,
        }
    }
}

fn mu_from_roots(s_x: &[f64], s_y: &[f64], weights: &ReciprocalWeights) -> Matrix {
    let (n_x, n_y) = weights.shape();
    let mut mu = Matrix::zeros(n_x, n_y);
    mu.as_mut_slice()
        .par_chunks_mut(n_y)
        .enumerate()
        .for_each(|(x, row)| {
            for (y, m) in row.iter_mut().enumerate() {
                *m = weights.get(x, y) * s_x[x] * s_y[y];
            }
        });
    mu
}

/// Runs IPFP from the all-singles start. A run that exhausts `max_sweeps`
/// returns `Ok` with `converged == false`; NaNs are a hard error.
pub fn solve_ipfp(weights: &ReciprocalWeights, config: &SolverConfig) -> Result<EquilibriumMatching> {
    let state = sweep::run_ipfp(weights, config)?;
    let mu = mu_from_roots(&state.s_x, &state.s_y, weights);
    Ok(EquilibriumMatching {
        mu,
        mu_x0: state.s_x.iter().map(|s| s * s).collect(),
        mu_y0: state.s_y.iter().map(|s| s * s).collect(),
        residual: state.residual,
        iterations: state.sweeps,
        converged: state.converged,
    })
}

/// `μ[x, y] = p̃[x, y]·√μ_x0[x]·√μ_y0[y]`.
pub fn matching_probabilities(
    mu_x0: &[f64],
    mu_y0: &[f64],
    weights: &ReciprocalWeights,
) -> Result<Matrix> {
    let (n_x, n_y) = weights.shape();
    if mu_x0.len() != n_x || mu_y0.len() != n_y {
        return Err(Error::DimensionMismatch(format!(
            "singles vectors {}/{} for {n_x}x{n_y} weights",
            mu_x0.len(),
            mu_y0.len()
        )));
    }
    for (side, v) in [(Side::X, mu_x0), (Side::Y, mu_y0)] {
        if let Some(i) = v.iter().position(|m| !(*m >= 0.0)) {
            return Err(Error::NonPositiveSingles {
                side,
                index: i,
                value: v[i],
            });
        }
    }
    let s_x: Vec<f64> = mu_x0.iter().map(|m| m.sqrt()).collect();
    let s_y: Vec<f64> = mu_y0.iter().map(|m| m.sqrt()).collect();
    Ok(mu_from_roots(&s_x, &s_y, weights))
}

/// `τ[x, y] = (p_xy − p_yx)/2 + ½·ln(μ_x0/μ_y0)`, the unique transfer at
/// which both sides' logit demands for the pair coincide.
pub fn recover_transfers(scores: &ScoreMatrix, matching: &EquilibriumMatching) -> Result<Transfers> {
    let (n_x, n_y) = scores.shape();
    if matching.mu.shape() != (n_x, n_y) {
        return Err(Error::DimensionMismatch(format!(
            "matching is {:?}, scores are {:?}",
            matching.mu.shape(),
            (n_x, n_y)
        )));
    }
    for (side, v) in [(Side::X, &matching.mu_x0), (Side::Y, &matching.mu_y0)] {
        if let Some(i) = v.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::NonPositiveSingles {
                side,
                index: i,
                value: v[i],
            });
        }
    }
    let ln_x: Vec<f64> = matching.mu_x0.iter().map(|m| m.ln()).collect();
    let ln_y: Vec<f64> = matching.mu_y0.iter().map(|m| m.ln()).collect();
    let tau = Matrix::from_fn(n_x, n_y, |x, y| {
        0.5 * (scores.p_xy()[(x, y)] - scores.p_yx()[(x, y)]) + 0.5 * (ln_x[x] - ln_y[y])
    });
    Ok(Transfers { tau })
}

/// Largest `|Σμ + μ0 − 1|` over all rows and columns.
pub fn residual(matching: &EquilibriumMatching) -> f64 {
    let mu = &matching.mu;
    let mut worst: f64 = 0.0;
    let mut cols = matching.mu_y0.clone();
    for (x, &m0) in matching.mu_x0.iter().enumerate() {
        let row = mu.row(x);
        worst = worst.max((row.iter().sum::<f64>() + m0 - 1.0).abs());
        for (c, v) in cols.iter_mut().zip(row) {
            *c += v;
        }
    }
    cols.iter().fold(worst, |m, c| m.max((c - 1.0).abs()))
}
