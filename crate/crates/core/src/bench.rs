//! Scaling measurements for score construction and IPFP sweeps.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{ApproxConfig, ApproxPlan};
use crate::equilibrium::{ReciprocalWeights, SolverConfig};
use crate::error::{Error, Result};
use crate::market::Direction;
use crate::mf::{score_matrix, FactorModel};
use crate::rng;
use crate::sweep;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sizes: Vec<(usize, usize)>,
    pub d: usize,
    /// Sweeps timed per run.
    pub sweeps: usize,
    /// Timed runs per size; the fastest is reported.
    pub repeats: usize,
    pub seed: u64,
    /// Also time the approximate solver with these settings.
    pub approx: Option<ApproxConfig>,
    /// Skip the exact solver, e.g. for sizes whose weights do not fit.
    pub skip_exact: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![(250, 250), (500, 500), (1000, 1000), (2000, 2000)],
            d: 8,
            sweeps: 10,
            repeats: 5,
            seed: 0,
            approx: None,
            skip_exact: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub n_x: usize,
    pub n_y: usize,
    pub score_build_ms: Option<f64>,
    pub exact_sweep_ms: Option<f64>,
    pub approx_setup_ms: Option<f64>,
    pub approx_sweep_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub d: usize,
    pub sweeps: usize,
    pub points: Vec<BenchPoint>,
    /// Log-log slope of exact per-sweep time against `|X|·|Y|`.
    pub exact_slope: Option<f64>,
    /// Log-log slope of score-matrix build time against `|X|·|Y|`.
    pub score_slope: Option<f64>,
    /// Log-log slope of approximate per-sweep time against `|X| + |Y|`.
    pub approx_slope: Option<f64>,
}

/// Least-squares slope of `ln y` on `ln x`. `None` with fewer than two
/// distinct `x` or any non-positive value.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn random_model(n_x: usize, n_y: usize, d: usize, direction: Direction, seed: u64) -> FactorModel {
    let mut rng = rng::substream(seed, 50, direction.code() as u64);
    let mut m = FactorModel::zeros(n_x, n_y, d, direction);
    let a = 1.0 / (d as f64).sqrt();
    for v in m.u_x.as_mut_slice().iter_mut().chain(m.v_y.as_mut_slice()) {
        *v = rng.random_range(-a..a);
    }
    for b in m.bias_x.iter_mut().chain(m.bias_y.iter_mut()) {
        *b = rng.random_range(-1.0..1.0);
    }
    m
}

fn fastest(repeats: usize, mut run: impl FnMut() -> Result<f64>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        best = best.min(run()?);
    }
    Ok(best)
}

/// Times exactly `sweeps` sweeps at every size by disabling the stopping
/// rule.
pub fn bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.d == 0 || config.sweeps == 0 || config.repeats == 0 {
        return Err(Error::Config("bench needs d, sweeps and repeats of at least 1".into()));
    }
    if config.sizes.iter().any(|&(x, y)| x == 0 || y == 0) {
        return Err(Error::Config("bench sizes must be at least 1x1".into()));
    }
    let solver = SolverConfig {
        tol: f64::MIN_POSITIVE,
        max_sweeps: config.sweeps,
        ..Default::default()
    };
    // Build everything first, then time the sizes round-robin so that a
    // slow stretch on a shared machine hits every size alike.
    let mut points = Vec::with_capacity(config.sizes.len());
    let mut exact = Vec::with_capacity(config.sizes.len());
    let mut plans = Vec::with_capacity(config.sizes.len());
    for &(n_x, n_y) in &config.sizes {
        let mxy = random_model(n_x, n_y, config.d, Direction::XToY, config.seed);
        let myx = random_model(n_x, n_y, config.d, Direction::YToX, config.seed);
        let mut point = BenchPoint {
            n_x,
            n_y,
            score_build_ms: None,
            exact_sweep_ms: None,
            approx_setup_ms: None,
            approx_sweep_ms: None,
        };
        if !config.skip_exact {
            let mut scores = None;
            point.score_build_ms = Some(fastest(config.repeats, || {
                let t = Instant::now();
                scores = Some(score_matrix(&mxy, &myx)?);
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })?);
            exact.push(ReciprocalWeights::from_scores(&scores.expect("built at least once")));
        }
        if let Some(aconfig) = &config.approx {
            let plan = ApproxPlan::prepare(&mxy, &myx, aconfig)?;
            point.approx_setup_ms = Some(plan.setup_ms);
            plans.push(plan);
        }
        points.push(point);
    }
    for _ in 0..config.repeats {
        for (point, weights) in points.iter_mut().zip(&exact) {
            let state = sweep::run_ipfp(weights, &solver)?;
            let ms = state.sweep_seconds * 1e3 / state.sweeps.max(1) as f64;
            point.exact_sweep_ms = Some(point.exact_sweep_ms.map_or(ms, |m| m.min(ms)));
        }
        for (point, plan) in points.iter_mut().zip(&plans) {
            let ms = plan.solve(&solver)?.report.sweep_ms;
            point.approx_sweep_ms = Some(point.approx_sweep_ms.map_or(ms, |m| m.min(ms)));
        }
    }

    let pairs: Vec<f64> = points.iter().map(|p| (p.n_x * p.n_y) as f64).collect();
    let users: Vec<f64> = points.iter().map(|p| (p.n_x + p.n_y) as f64).collect();
    let slope = |xs: &[f64], ys: Vec<Option<f64>>| -> Option<f64> {
        let ys: Option<Vec<f64>> = ys.into_iter().collect();
        loglog_slope(xs, &ys?)
    };
    Ok(BenchReport {
        d: config.d,
        sweeps: config.sweeps,
        exact_slope: slope(&pairs, points.iter().map(|p| p.exact_sweep_ms).collect()),
        score_slope: slope(&pairs, points.iter().map(|p| p.score_build_ms).collect()),
        approx_slope: slope(&users, points.iter().map(|p| p.approx_sweep_ms).collect()),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
        assert_eq!(loglog_slope(&[2.0, 2.0], &[1.0, 3.0]), None);
        assert_eq!(loglog_slope(&[1.0, 2.0], &[0.0, 3.0]), None);
    }

    #[test]
    fn single_pair_report_is_json() {
        let config = BenchConfig {
            sizes: vec![(1, 1)],
            d: 2,
            sweeps: 2,
            repeats: 1,
            approx: Some(ApproxConfig::default()),
            ..Default::default()
        };
        let report = bench(&config).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["points"][0]["n_x"], 1);
        assert!(back["exact_slope"].is_null());
        assert!(report.points[0].exact_sweep_ms.unwrap() >= 0.0);
    }

    #[test]
    fn rejects_empty_sizes_and_zero_sweeps() {
        let bad = BenchConfig {
            sweeps: 0,
            ..Default::default()
        };
        assert!(bench(&bad).is_err());
        let bad = BenchConfig {
            sizes: vec![(0, 3)],
            ..Default::default()
        };
        assert!(bench(&bad).is_err());
    }
}
