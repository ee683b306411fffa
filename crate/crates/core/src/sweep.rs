//! Alternating IPFP driver shared by the exact and approximate solvers.
//!
//! The state is `s_x = √μ_x0`, `s_y = √μ_y0`. A sweep sets every `s_x` to the
//! positive root of `s² + b_x·s − 1 = 0` with `b_x = Σ_y w[x,y]·s_y`, then
//! every `s_y` likewise from the new `s_x`.

use std::time::Instant;

use crate::equilibrium::SolverConfig;
use crate::error::{Error, Result};

/// Weighted marginal sums over a reciprocal-weight matrix `w`.
///
/// Implementations must produce results that depend only on their inputs,
/// never on thread scheduling.
pub(crate) trait MarginalSums: Sync {
    fn n_x(&self) -> usize;
    fn n_y(&self) -> usize;
    /// `out[x] = Σ_y w[x,y]·s_y`. Returns the mean estimator variance, zero
    /// for exact sums.
    fn row_sums(&self, s_y: &[f64], out: &mut [f64]) -> f64;
    /// `out[y] = Σ_x w[x,y]·s_x`.
    fn col_sums(&self, s_x: &[f64], out: &mut [f64]) -> f64;
    /// Whether the column sums use the transpose of the row-sum weights.
    /// Estimated sums generally do not, so the row and column systems imply
    /// slightly different total match mass.
    fn transposed(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
pub(crate) struct IpfpState {
    pub s_x: Vec<f64>,
    pub s_y: Vec<f64>,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    pub sweep_seconds: f64,
    /// Mean (row, column) estimator variance per sweep.
    pub variance: Vec<(f64, f64)>,
}

/// Whether a pass over `work` terms is worth splitting across the pool.
pub(crate) fn parallel(work: usize) -> bool {
    work >= 1 << 14 && rayon::current_num_threads() > 1
}

/// Positive root of `s² + b·s − 1 = 0`, i.e. `√(1 + (b/2)²) − b/2`, written
/// in the cancellation-free form.
#[inline]
pub(crate) fn singles_root(b: f64) -> f64 {
    let h = 0.5 * b;
    1.0 / ((1.0 + h * h).sqrt() + h)
}

/// `max |s² + s·b − 1|`.
fn violation(s: &[f64], b: &[f64]) -> f64 {
    s.iter()
        .zip(b)
        .fold(0.0, |m, (&s, &b)| f64::max(m, (s * s + s * b - 1.0).abs()))
}

/// Scale factor `λ` for the exchange `s_x ← λ·s_x` (and, implicitly,
/// `s_y ← s_y/λ`), which leaves every `μ_xy` unchanged. Chosen so that the
/// singles mass of both sides implies the same number of matches:
/// `|X| − λ²Σμ_x0 = |Y| − Σμ_y0/λ² + gap`, where `gap` is the row-implied
/// minus the column-implied match mass (zero for exact sums).
fn exchange_scale(s_x: &[f64], s_y: &[f64], gap: f64) -> f64 {
    let a: f64 = s_x.iter().map(|s| s * s).sum();
    let b: f64 = s_y.iter().map(|s| s * s).sum();
    if !(a > 0.0 && b > 0.0) {
        return 1.0;
    }
    let d = s_x.len() as f64 - s_y.len() as f64 - gap;
    let root = (d * d + 4.0 * a * b).sqrt();
    // positive root of a·t² − d·t − b = 0
    let t = if d >= 0.0 {
        (d + root) / (2.0 * a)
    } else {
        2.0 * b / (root - d)
    };
    t.sqrt()
}

fn update(s: &mut [f64], b: &[f64], damping: f64) {
    if damping >= 1.0 {
        for (s, &b) in s.iter_mut().zip(b) {
            *s = singles_root(b);
        }
    } else {
        for (s, &b) in s.iter_mut().zip(b) {
            *s = (1.0 - damping) * *s + damping * singles_root(b);
        }
    }
}

pub(crate) fn run_ipfp<S: MarginalSums>(sums: &S, config: &SolverConfig) -> Result<IpfpState> {
    config.validate()?;
    let (n_x, n_y) = (sums.n_x(), sums.n_y());
    let mut s_x = vec![1.0; n_x];
    let mut s_y = vec![1.0; n_y];
    let mut b_x = vec![0.0; n_x];
    let mut b_y = vec![0.0; n_y];
    let mut col_violation = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    let mut variance = Vec::new();
    // match mass implied by the column system at the current point
    let mut col_mass: Option<f64> = None;
    let mut gap = 0.0;
    let start = Instant::now();

    loop {
        let row_var = sums.row_sums(&s_y, &mut b_x);
        if b_x.iter().any(|v| v.is_nan()) {
            return Err(Error::NotFinite("IPFP row sums"));
        }
        if sweeps > 0 {
            residual = violation(&s_x, &b_x).max(col_violation);
            if residual <= config.tol {
                converged = true;
                break;
            }
        }
        if sweeps == config.max_sweeps {
            break;
        }
        if let Some(m) = col_mass {
            let row_mass: f64 = s_x.iter().zip(&b_x).map(|(s, b)| s * b).sum();
            gap = row_mass - m;
        }

        update(&mut s_x, &b_x, config.damping);
        if config.rebalance {
            let lambda = exchange_scale(&s_x, &s_y, gap);
            for s in &mut s_x {
                *s *= lambda;
            }
        }

        let col_var = sums.col_sums(&s_x, &mut b_y);
        if b_y.iter().any(|v| v.is_nan()) {
            return Err(Error::NotFinite("IPFP column sums"));
        }
        update(&mut s_y, &b_y, config.damping);
        if !sums.transposed() {
            col_mass = Some(s_y.iter().zip(&b_y).map(|(s, b)| s * b).sum());
        }
        // s_x is unchanged since b_y was computed, so this is exact
        col_violation = violation(&s_y, &b_y);
        variance.push((row_var, col_var));
        sweeps += 1;
    }

    if s_x.iter().chain(&s_y).any(|v| !v.is_finite()) {
        return Err(Error::NotFinite("IPFP singles probabilities"));
    }
    Ok(IpfpState {
        s_x,
        s_y,
        sweeps,
        residual,
        converged,
        sweep_seconds: start.elapsed().as_secs_f64(),
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_solves_quadratic() {
        for b in [0.0, 1e-9, 0.5, 1.0, 2.0, 3.0, 1e3, 1e8] {
            let s = singles_root(b);
            let naive = (1.0 + b * b / 4.0).sqrt() - b / 2.0;
            assert!(s > 0.0 && s <= 1.0);
            assert!((s * s + b * s - 1.0).abs() < 1e-12, "b = {b}");
            if b < 10.0 {
                assert!((s - naive).abs() < 1e-15);
            }
        }
        assert_eq!(singles_root(0.0), 1.0);
    }

    #[test]
    fn exchange_balances_singles_mass() {
        let s_x = vec![0.3, 0.5];
        let s_y = vec![0.7, 0.2, 0.4];
        let l = exchange_scale(&s_x, &s_y, 0.0);
        let ax: f64 = s_x.iter().map(|s| (l * s).powi(2)).sum();
        let ay: f64 = s_y.iter().map(|s| (s / l).powi(2)).sum();
        assert!(((2.0 - ax) - (3.0 - ay)).abs() < 1e-12);
    }
}
