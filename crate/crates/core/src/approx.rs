//! Approximate IPFP for markets too large for a dense weight matrix.
//!
//! Each row sum `b_x = Σ_y p̃[x,y]·√μ_y0` is split into a head, the `top_m`
//! largest-weight candidates returned by a [`NeighborIndex`], summed exactly,
//! and a tail estimated from a uniform sample without replacement scaled by
//! `|tail|/tail_samples`. Heads and samples are drawn once, so every sweep
//! costs `O((|X| + |Y|)·(top_m + tail_samples))` and memory stays linear in
//! the number of users. Weights are evaluated from the factor models and
//! never stored densely.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{reciprocal_weight, SolverConfig};
use crate::error::{Error, Result};
use crate::lsh::{pair_keys, NeighborIndex};
use crate::market::{Direction, EquilibriumMatching, Side};
use crate::matrix::Matrix;
use crate::mf::{logistic, FactorModel};
use crate::rng;
use crate::sweep::{self, MarginalSums};

const MAX_PROBE_RADIUS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproxConfig {
    /// Exact head size per row.
    pub top_m: usize,
    /// Uniform tail sample size per row.
    pub tail_samples: usize,
    /// Hash tables `L`.
    pub tables: usize,
    /// Hash bits per table `k`.
    pub bits: usize,
    pub seed: u64,
    /// Hamming radius probed around each query's bucket.
    pub probes: usize,
    /// Rows and columns whose residual is recomputed exactly after solving.
    pub audit: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            top_m: 64,
            tail_samples: 256,
            tables: 8,
            bits: 10,
            seed: 0,
            probes: 2,
            audit: 64,
        }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tail_samples == 0 {
            return Err(Error::Config("tail_samples must be at least 1".into()));
        }
        if self.tables == 0 {
            return Err(Error::Config("tables must be at least 1".into()));
        }
        if !(1..=62).contains(&self.bits) {
            return Err(Error::Config("bits must lie in 1..=62".into()));
        }
        if self.probes > MAX_PROBE_RADIUS {
            return Err(Error::Config(format!("probes must be at most {MAX_PROBE_RADIUS}")));
        }
        Ok(())
    }
}

impl fmt::Display for ApproxConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "top_m={},tail={},tables={},bits={},seed={},probes={},audit={}",
            self.top_m, self.tail_samples, self.tables, self.bits, self.seed, self.probes, self.audit
        )
    }
}

/// Parses `top_m=64,tail=256,tables=8,bits=10`; omitted keys keep their
/// defaults. `seed`, `probes` and `audit` are also accepted.
impl FromStr for ApproxConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut config = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{part}'")))?;
            let bad = |_| Error::Config(format!("'{value}' is not a non-negative integer for {key}"));
            let value = value.trim();
            match key.trim() {
                "top_m" => config.top_m = value.parse().map_err(bad)?,
                "tail" | "tail_samples" => config.tail_samples = value.parse().map_err(bad)?,
                "tables" => config.tables = value.parse().map_err(bad)?,
                "bits" => config.bits = value.parse().map_err(bad)?,
                "seed" => config.seed = value.parse().map_err(bad)?,
                "probes" => config.probes = value.parse().map_err(bad)?,
                "audit" => config.audit = value.parse().map_err(bad)?,
                other => return Err(Error::Config(format!("unknown approx key '{other}'"))),
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// A sampled sum and the estimated variance of its tail part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumEstimate {
    pub value: f64,
    pub variance: f64,
}

/// One row's head and tail sample. Indices in each part are ascending.
#[derive(Clone, Debug, Default, PartialEq)]
struct RowPlan {
    idx: Vec<u32>,
    w: Vec<f64>,
    head: usize,
    /// `|tail| / tail_samples`.
    scale: f64,
    /// `|tail|²/t·(1 − t/|tail|)`, multiplies the sample variance.
    var_factor: f64,
}

fn plan_row<R: Rng>(
    candidates: &[usize],
    weight: &dyn Fn(usize) -> f64,
    n: usize,
    config: &ApproxConfig,
    rng: &mut R,
) -> RowPlan {
    let mut head: Vec<(usize, f64)> = candidates.iter().map(|&j| (j, weight(j))).collect();
    if head.len() > config.top_m {
        let by_weight = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if config.top_m > 0 {
            head.select_nth_unstable_by(config.top_m - 1, by_weight);
        }
        head.truncate(config.top_m);
    }
    head.sort_unstable_by_key(|h| h.0);

    let remaining = n - head.len();
    let t = config.tail_samples.min(remaining);
    let mut tail: Vec<usize> = if t == remaining {
        (0..remaining).collect()
    } else {
        let mut s = index::sample(rng, remaining, t).into_vec();
        s.sort_unstable();
        s
    };
    // map ranks among non-head users to user indices
    let mut j = 0;
    for p in &mut tail {
        while j < head.len() && head[j].0 <= *p + j {
            j += 1;
        }
        *p += j;
    }

    let (scale, var_factor) = if t == 0 || t == remaining {
        (1.0, 0.0)
    } else {
        let r = remaining as f64;
        let t = t as f64;
        (r / t, r * r / t * (1.0 - t / r))
    };
    let mut plan = RowPlan {
        idx: Vec::with_capacity(head.len() + tail.len()),
        w: Vec::with_capacity(head.len() + tail.len()),
        head: head.len(),
        scale,
        var_factor,
    };
    for (j, w) in head {
        plan.idx.push(j as u32);
        plan.w.push(w);
    }
    for j in tail {
        plan.idx.push(j as u32);
        plan.w.push(weight(j));
    }
    plan
}

/// Evaluates a plan stored as `(idx, w)` with the given head length.
#[inline]
fn estimate(idx: &[u32], w: &[f64], head: usize, scale: f64, var_factor: f64, s: &[f64]) -> SumEstimate {
    let mut head_sum = 0.0;
    for (&j, &w) in idx[..head].iter().zip(&w[..head]) {
        head_sum += w * s[j as usize];
    }
    let (mut tail_sum, mut tail_sq) = (0.0, 0.0);
    for (&j, &w) in idx[head..].iter().zip(&w[head..]) {
        let z = w * s[j as usize];
        tail_sum += z;
        tail_sq += z * z;
    }
    let t = (idx.len() - head) as f64;
    let variance = if var_factor > 0.0 && t > 1.0 {
        var_factor * ((tail_sq - tail_sum * tail_sum / t) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    SumEstimate {
        value: head_sum + scale * tail_sum,
        variance,
    }
}

/// Estimates `Σ_j weight(j)·sqrt_mu0[j]` over the indexed side: exact over
/// the `top_m` heaviest index candidates for `query`, plus a scaled uniform
/// sample of the rest drawn from `rng`. When the sample would cover the
/// whole tail the tail is summed exactly.
pub fn approx_row_sum<R: Rng>(
    index: &NeighborIndex,
    query: &[f64],
    weight: impl Fn(usize) -> f64,
    sqrt_mu0: &[f64],
    config: &ApproxConfig,
    rng: &mut R,
) -> Result<SumEstimate> {
    config.validate()?;
    if sqrt_mu0.len() != index.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} singles roots for an index of {}",
            sqrt_mu0.len(),
            index.len()
        )));
    }
    if let Some(i) = sqrt_mu0.iter().position(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(Error::NonPositiveSingles {
            side: index.side(),
            index: i,
            value: sqrt_mu0[i],
        });
    }
    let candidates = if config.top_m > 0 { index.query(query)? } else { Vec::new() };
    let plan = plan_row(&candidates, &weight, index.len(), config, rng);
    Ok(estimate(&plan.idx, &plan.w, plan.head, plan.scale, plan.var_factor, sqrt_mu0))
}

/// Reciprocal weights evaluated from the two direction models.
#[derive(Clone, Debug, PartialEq)]
struct PairWeights {
    model_xy: FactorModel,
    model_yx: FactorModel,
}

impl PairWeights {
    fn new(model_xy: &FactorModel, model_yx: &FactorModel) -> Result<Self> {
        if model_xy.direction != Direction::XToY || model_yx.direction != Direction::YToX {
            return Err(Error::DimensionMismatch(format!(
                "expected (x_to_y, y_to_x) models, got ({}, {})",
                model_xy.direction, model_yx.direction
            )));
        }
        if model_xy.n_x() != model_yx.n_x() || model_xy.n_y() != model_yx.n_y() {
            return Err(Error::DimensionMismatch("models cover different markets".into()));
        }
        model_xy.validate()?;
        model_yx.validate()?;
        if model_xy.n_x() == 0 || model_xy.n_y() == 0 {
            return Err(Error::Empty("market"));
        }
        Ok(Self {
            model_xy: model_xy.clone(),
            model_yx: model_yx.clone(),
        })
    }

    #[inline]
    fn get(&self, x: usize, y: usize) -> f64 {
        reciprocal_weight(
            logistic(self.model_xy.affinity(x, y)),
            logistic(self.model_yx.affinity(x, y)),
        )
    }

    fn n_x(&self) -> usize {
        self.model_xy.n_x()
    }

    fn n_y(&self) -> usize {
        self.model_xy.n_y()
    }
}

/// All rows of one side, in compressed form.
#[derive(Clone, Debug, Default)]
struct SidePlans {
    offsets: Vec<usize>,
    idx: Vec<u32>,
    w: Vec<f64>,
    head: Vec<usize>,
    scale: Vec<f64>,
    var_factor: Vec<f64>,
}

impl SidePlans {
    fn build(
        weights: &PairWeights,
        side: Side,
        config: &ApproxConfig,
    ) -> Result<Self> {
        // rows of `side` sum over the other side
        let (n_rows, n_other) = match side {
            Side::X => (weights.n_x(), weights.n_y()),
            Side::Y => (weights.n_y(), weights.n_x()),
        };
        let lookup = if config.top_m > 0 {
            let (keys, queries) = pair_keys(&weights.model_xy, &weights.model_yx, side.other())?;
            Some((NeighborIndex::from_keys(side.other(), &keys, config)?, queries))
        } else {
            None
        };
        let tag = match side {
            Side::X => 30,
            Side::Y => 31,
        };
        let rows: Vec<RowPlan> = (0..n_rows)
            .into_par_iter()
            .map(|r| {
                let weight = |j: usize| match side {
                    Side::X => weights.get(r, j),
                    Side::Y => weights.get(j, r),
                };
                let candidates = match &lookup {
                    Some((index, queries)) => index.query(queries.row(r))?,
                    None => Vec::new(),
                };
                let mut rng = rng::substream(config.seed, tag, r as u64);
                Ok(plan_row(&candidates, &weight, n_other, config, &mut rng))
            })
            .collect::<Result<_>>()?;

        let total = rows.iter().map(|p| p.idx.len()).sum();
        let mut plans = Self {
            offsets: Vec::with_capacity(n_rows + 1),
            idx: Vec::with_capacity(total),
            w: Vec::with_capacity(total),
            head: Vec::with_capacity(n_rows),
            scale: Vec::with_capacity(n_rows),
            var_factor: Vec::with_capacity(n_rows),
        };
        plans.offsets.push(0);
        for p in rows {
            plans.idx.extend_from_slice(&p.idx);
            plans.w.extend_from_slice(&p.w);
            plans.offsets.push(plans.idx.len());
            plans.head.push(p.head);
            plans.scale.push(p.scale);
            plans.var_factor.push(p.var_factor);
        }
        Ok(plans)
    }

    fn sums(&self, s: &[f64], out: &mut [f64]) -> f64 {
        let row = |(r, o): (usize, &mut f64)| {
            let span = self.offsets[r]..self.offsets[r + 1];
            let e = estimate(
                &self.idx[span.clone()],
                &self.w[span],
                self.head[r],
                self.scale[r],
                self.var_factor[r],
                s,
            );
            *o = e.value;
            e.variance
        };
        let variances: Vec<f64> = if sweep::parallel(self.idx.len()) {
            out.par_iter_mut().enumerate().map(row).collect()
        } else {
            out.iter_mut().enumerate().map(row).collect()
        };
        variances.iter().sum::<f64>() / variances.len().max(1) as f64
    }

    fn mean_len(&self) -> f64 {
        self.idx.len() as f64 / self.head.len().max(1) as f64
    }
}

/// How one side's sums are formed.
#[derive(Clone, Debug)]
enum SideSums {
    Sampled(SidePlans),
    /// Full sums in ascending order, evaluated on the fly.
    Exact,
}

struct ApproxSums<'a> {
    weights: &'a PairWeights,
    rows: &'a SideSums,
    cols: &'a SideSums,
}

impl MarginalSums for ApproxSums<'_> {
    fn n_x(&self) -> usize {
        self.weights.n_x()
    }

    fn n_y(&self) -> usize {
        self.weights.n_y()
    }

    fn row_sums(&self, s_y: &[f64], out: &mut [f64]) -> f64 {
        match self.rows {
            SideSums::Sampled(plans) => plans.sums(s_y, out),
            SideSums::Exact => {
                out.par_iter_mut().enumerate().for_each(|(x, o)| {
                    let mut acc = 0.0;
                    for (y, s) in s_y.iter().enumerate() {
                        acc += self.weights.get(x, y) * s;
                    }
                    *o = acc;
                });
                0.0
            }
        }
    }

    fn col_sums(&self, s_x: &[f64], out: &mut [f64]) -> f64 {
        match self.cols {
            SideSums::Sampled(plans) => plans.sums(s_x, out),
            SideSums::Exact => {
                out.par_iter_mut().enumerate().for_each(|(y, o)| {
                    let mut acc = 0.0;
                    for (x, s) in s_x.iter().enumerate() {
                        acc += self.weights.get(x, y) * s;
                    }
                    *o = acc;
                });
                0.0
            }
        }
    }

    fn transposed(&self) -> bool {
        matches!((self.rows, self.cols), (SideSums::Exact, SideSums::Exact))
    }
}

/// Estimator variance of the row and column sums for one sweep, averaged
/// over rows (columns).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepVariance {
    pub rows: f64,
    pub cols: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    /// Largest exact marginal violation over the audited rows and columns.
    pub audit_residual: f64,
    pub rows_audited: usize,
    pub cols_audited: usize,
    /// Whether each side fell back to exact sums.
    pub exact_rows: bool,
    pub exact_cols: bool,
    /// Mean stored terms (head plus tail) per row and per column.
    pub terms_per_row: f64,
    pub terms_per_col: f64,
    pub b_variance: Vec<SweepVariance>,
    pub setup_ms: f64,
    /// Mean wall time of one sweep.
    pub sweep_ms: f64,
}

/// Solution of the approximate solver. Pair masses are evaluated on demand.
#[derive(Clone, Debug)]
pub struct ApproxEquilibrium {
    pub mu_x0: Vec<f64>,
    pub mu_y0: Vec<f64>,
    /// Largest violation as measured by the estimated sums.
    pub residual: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub report: ApproxReport,
    s_x: Vec<f64>,
    s_y: Vec<f64>,
    weights: PairWeights,
}

impl ApproxEquilibrium {
    pub fn n_x(&self) -> usize {
        self.s_x.len()
    }

    pub fn n_y(&self) -> usize {
        self.s_y.len()
    }

    /// `μ[x, y] = p̃[x, y]·√μ_x0·√μ_y0`.
    pub fn mu(&self, x: usize, y: usize) -> f64 {
        self.weights.get(x, y) * self.s_x[x] * self.s_y[y]
    }

    pub fn mu_row(&self, x: usize) -> Vec<f64> {
        (0..self.n_y()).map(|y| self.mu(x, y)).collect()
    }

    /// `τ[x, y] = (p_xy − p_yx)/2 + ½·ln(μ_x0/μ_y0)`.
    pub fn transfer(&self, x: usize, y: usize) -> f64 {
        let p_xy = logistic(self.weights.model_xy.affinity(x, y));
        let p_yx = logistic(self.weights.model_yx.affinity(x, y));
        0.5 * (p_xy - p_yx) + 0.5 * (self.mu_x0[x].ln() - self.mu_y0[y].ln())
    }

    /// Dense copy of the solution. Allocates `|X|·|Y|` entries.
    pub fn to_matching(&self) -> EquilibriumMatching {
        let mut mu = Matrix::zeros(self.n_x(), self.n_y());
        mu.as_mut_slice()
            .par_chunks_mut(self.n_y())
            .enumerate()
            .for_each(|(x, row)| {
                for (y, m) in row.iter_mut().enumerate() {
                    *m = self.mu(x, y);
                }
            });
        EquilibriumMatching {
            mu,
            mu_x0: self.mu_x0.clone(),
            mu_y0: self.mu_y0.clone(),
            residual: self.residual,
            iterations: self.sweeps,
            converged: self.converged,
        }
    }
}

fn audit_set(seed: u64, tag: u64, n: usize, k: usize) -> Vec<usize> {
    let mut rng = rng::substream(seed, 40, tag);
    let mut v = index::sample(&mut rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

fn audit(weights: &PairWeights, s_x: &[f64], s_y: &[f64], config: &ApproxConfig) -> (f64, usize, usize) {
    let rows = audit_set(config.seed, 0, s_x.len(), config.audit);
    let cols = audit_set(config.seed, 1, s_y.len(), config.audit);
    let row_worst = rows
        .par_iter()
        .map(|&x| {
            let mut acc = 0.0;
            for (y, s) in s_y.iter().enumerate() {
                acc += weights.get(x, y) * s;
            }
            (acc * s_x[x] + s_x[x] * s_x[x] - 1.0).abs()
        })
        .reduce(|| 0.0, f64::max);
    let col_worst = cols
        .par_iter()
        .map(|&y| {
            let mut acc = 0.0;
            for (x, s) in s_x.iter().enumerate() {
                acc += weights.get(x, y) * s;
            }
            (acc * s_y[y] + s_y[y] * s_y[y] - 1.0).abs()
        })
        .reduce(|| 0.0, f64::max);
    (row_worst.max(col_worst), rows.len(), cols.len())
}

/// Index lookups and sampled row plans for both sides, reusable across
/// solves.
#[derive(Clone, Debug)]
pub struct ApproxPlan {
    weights: PairWeights,
    rows: SideSums,
    cols: SideSums,
    config: ApproxConfig,
    /// Wall time of [`ApproxPlan::prepare`].
    pub setup_ms: f64,
}

impl ApproxPlan {
    pub fn prepare(model_xy: &FactorModel, model_yx: &FactorModel, aconfig: &ApproxConfig) -> Result<Self> {
        aconfig.validate()?;
        let setup = Instant::now();
        let weights = PairWeights::new(model_xy, model_yx)?;
        let exact = |n_other: usize| aconfig.top_m >= n_other || aconfig.tail_samples >= n_other;
        let side = |s: Side, n_other: usize| -> Result<SideSums> {
            Ok(if exact(n_other) {
                SideSums::Exact
            } else {
                SideSums::Sampled(SidePlans::build(&weights, s, aconfig)?)
            })
        };
        let rows = side(Side::X, weights.n_y())?;
        let cols = side(Side::Y, weights.n_x())?;
        Ok(Self {
            weights,
            rows,
            cols,
            config: aconfig.clone(),
            setup_ms: setup.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn solve(&self, config: &SolverConfig) -> Result<ApproxEquilibrium> {
        config.validate()?;
        let weights = &self.weights;
        let terms = |s: &SideSums, n_other: usize| match s {
            SideSums::Sampled(p) => p.mean_len(),
            SideSums::Exact => n_other as f64,
        };
        let sums = ApproxSums {
            weights,
            rows: &self.rows,
            cols: &self.cols,
        };
        let state = sweep::run_ipfp(&sums, config)?;
        let (audit_residual, rows_audited, cols_audited) = audit(weights, &state.s_x, &state.s_y, &self.config);

        let report = ApproxReport {
            audit_residual,
            rows_audited,
            cols_audited,
            exact_rows: matches!(self.rows, SideSums::Exact),
            exact_cols: matches!(self.cols, SideSums::Exact),
            terms_per_row: terms(&self.rows, weights.n_y()),
            terms_per_col: terms(&self.cols, weights.n_x()),
            b_variance: state
                .variance
                .iter()
                .map(|&(rows, cols)| SweepVariance { rows, cols })
                .collect(),
            setup_ms: self.setup_ms,
            sweep_ms: state.sweep_seconds * 1e3 / state.sweeps.max(1) as f64,
        };
        Ok(ApproxEquilibrium {
            mu_x0: state.s_x.iter().map(|s| s * s).collect(),
            mu_y0: state.s_y.iter().map(|s| s * s).collect(),
            residual: state.residual,
            sweeps: state.sweeps,
            converged: state.converged,
            report,
            s_x: state.s_x,
            s_y: state.s_y,
            weights: weights.clone(),
        })
    }
}

/// IPFP with sampled marginal sums. With `top_m` or `tail_samples` at least
/// the opposite side's size, that side's sums are exact and accumulated in
/// the same order as [`crate::equilibrium::solve_ipfp`], so the result is
/// bit-identical to the exact solver on the corresponding score matrix.
pub fn solve_ipfp_approx(
    model_xy: &FactorModel,
    model_yx: &FactorModel,
    config: &SolverConfig,
    aconfig: &ApproxConfig,
) -> Result<ApproxEquilibrium> {
    config.validate()?;
    ApproxPlan::prepare(model_xy, model_yx, aconfig)?.solve(config)
}
