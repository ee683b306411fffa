//! Direction-specific logistic matrix factorization.
//!
//! Each [`FactorModel`] predicts one side's unilateral preference,
//! `p = logistic(u_x · v_y + bias_x + bias_y)`. The model trained on the men's
//! actions gives `p_xy`, the one trained on the women's gives `p_yx`; both
//! store factors per side, so `score(model, x, y)` is indexed the same way
//! regardless of direction.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Direction, Market, ScoreMatrix, Side};
use crate::matrix::{dot, Matrix};
use crate::rng;

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub d: usize,
    pub u_x: Matrix,
    pub v_y: Matrix,
    pub bias_x: Vec<f64>,
    pub bias_y: Vec<f64>,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Uniformly drawn unobserved pairs per positive, may be fractional.
    pub negative_sampling_rate: f64,
    pub seed: u64,
    /// Train on `nope`/`sorry` as explicit zero labels.
    pub use_explicit_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 8,
            epochs: 30,
            learning_rate: 0.05,
            l2: 1e-4,
            negative_sampling_rate: 1.0,
            seed: 0,
            use_explicit_negatives: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("embedding dimension d must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0) || !(self.negative_sampling_rate >= 0.0) {
            return Err(Error::Config(
                "l2 and negative_sampling_rate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A labelled `(x, y)` pair used for training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub x: usize,
    pub y: usize,
    pub label: f64,
}

/// Parameter gradient of one example's regularized loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub bias_x: f64,
    pub bias_y: f64,
}

impl FactorModel {
    /// Seeded uniform(−0.1/√d, 0.1/√d) factors, zero biases. This is what
    /// [`train_mf`] starts from.
    pub fn init(n_x: usize, n_y: usize, d: usize, direction: Direction, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("embedding dimension d must be >= 1".into()));
        }
        let mut rng = rng::substream(seed, 1, direction.code() as u64);
        let a = 0.1 / (d as f64).sqrt();
        let mut draw = |rows: usize| {
            Matrix::from_fn(rows, d, |_, _| rng.random_range(-a..a))
        };
        let u_x = draw(n_x);
        let v_y = draw(n_y);
        Ok(Self {
            d,
            u_x,
            v_y,
            bias_x: vec![0.0; n_x],
            bias_y: vec![0.0; n_y],
            direction,
        })
    }

    /// All-zero model, scoring 0.5 everywhere.
    pub fn zeros(n_x: usize, n_y: usize, d: usize, direction: Direction) -> Self {
        Self {
            d,
            u_x: Matrix::zeros(n_x, d),
            v_y: Matrix::zeros(n_y, d),
            bias_x: vec![0.0; n_x],
            bias_y: vec![0.0; n_y],
            direction,
        }
    }

    pub fn n_x(&self) -> usize {
        self.u_x.rows()
    }

    pub fn n_y(&self) -> usize {
        self.v_y.rows()
    }

    /// Factor rows of `side`.
    pub fn factors(&self, side: Side) -> &Matrix {
        match side {
            Side::X => &self.u_x,
            Side::Y => &self.v_y,
        }
    }

    pub fn biases(&self, side: Side) -> &[f64] {
        match side {
            Side::X => &self.bias_x,
            Side::Y => &self.bias_y,
        }
    }

    /// Raw affinity before the logistic link.
    #[inline]
    pub fn affinity(&self, x: usize, y: usize) -> f64 {
        dot(self.u_x.row(x), self.v_y.row(y)) + self.bias_x[x] + self.bias_y[y]
    }

    pub fn is_finite(&self) -> bool {
        self.u_x.all_finite()
            && self.v_y.all_finite()
            && self.bias_x.iter().chain(&self.bias_y).all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.u_x.cols() != self.d || self.v_y.cols() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "factor widths {} / {} disagree with d = {}",
                self.u_x.cols(),
                self.v_y.cols(),
                self.d
            )));
        }
        if self.bias_x.len() != self.n_x() || self.bias_y.len() != self.n_y() {
            return Err(Error::DimensionMismatch("bias length".into()));
        }
        if !self.is_finite() {
            return Err(Error::NotFinite("factor model"));
        }
        Ok(())
    }

    pub fn loss(&self, ex: &Example, l2: f64) -> f64 {
        example_loss(self, ex, l2)
    }
}

/// `logistic(u_x[x]·v_y[y] + bias_x[x] + bias_y[y])`.
pub fn score(model: &FactorModel, x: usize, y: usize) -> Result<f64> {
    if x >= model.n_x() || y >= model.n_y() {
        return Err(Error::OutOfRange(format!(
            "({x}, {y}) for a {}x{} model",
            model.n_x(),
            model.n_y()
        )));
    }
    Ok(logistic(model.affinity(x, y)))
}

/// Regularized logistic loss of one example:
/// `t·softplus(−z) + (1−t)·softplus(z) + l2/2·(|u_x|² + |v_y|²)`.
pub fn example_loss(model: &FactorModel, ex: &Example, l2: f64) -> f64 {
    let z = model.affinity(ex.x, ex.y);
    let u = model.u_x.row(ex.x);
    let v = model.v_y.row(ex.y);
    ex.label * softplus(-z)
        + (1.0 - ex.label) * softplus(z)
        + 0.5 * l2 * (dot(u, u) + dot(v, v))
}

pub fn example_gradient(model: &FactorModel, ex: &Example, l2: f64) -> Gradient {
    let g = logistic(model.affinity(ex.x, ex.y)) - ex.label;
    let u = model.u_x.row(ex.x);
    let v = model.v_y.row(ex.y);
    Gradient {
        u: u.iter().zip(v).map(|(ui, vi)| g * vi + l2 * ui).collect(),
        v: v.iter().zip(u).map(|(vi, ui)| g * ui + l2 * vi).collect(),
        bias_x: g,
        bias_y: g,
    }
}

/// Mean regularized loss over `examples`.
pub fn objective(model: &FactorModel, examples: &[Example], l2: f64) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().map(|ex| example_loss(model, ex, l2)).sum::<f64>() / examples.len() as f64
}

fn sgd_step(model: &mut FactorModel, ex: &Example, lr: f64, l2: f64) {
    let g = logistic(model.affinity(ex.x, ex.y)) - ex.label;
    let v = model.v_y.row_mut(ex.y);
    let u = model.u_x.row_mut(ex.x);
    for (ui, vi) in u.iter_mut().zip(v.iter_mut()) {
        let u_old = *ui;
        *ui -= lr * (g * *vi + l2 * u_old);
        *vi -= lr * (g * u_old + l2 * *vi);
    }
    model.bias_x[ex.x] -= lr * g;
    model.bias_y[ex.y] -= lr * g;
}

/// Labelled examples for `direction`: actions sent by that side's users.
/// Positives are `like`/`thank`; `nope`/`sorry` are included as zeros only
/// when `explicit_negatives` is set.
pub fn training_examples(market: &Market, direction: Direction, explicit_negatives: bool) -> Vec<Example> {
    market
        .feedback()
        .iter()
        .filter(|ev| ev.direction() == direction)
        .filter(|ev| explicit_negatives || ev.action.is_positive())
        .map(|ev| {
            let (x, y) = ev.pair();
            Example {
                x,
                y,
                label: if ev.action.is_positive() { 1.0 } else { 0.0 },
            }
        })
        .collect()
}

/// Fits one direction with plain SGD. Deterministic for a given seed.
pub fn train_mf(market: &Market, direction: Direction, config: &TrainConfig) -> Result<FactorModel> {
    config.validate()?;
    let examples = training_examples(market, direction, config.use_explicit_negatives);
    let positives: HashSet<(usize, usize)> = examples
        .iter()
        .filter(|e| e.label > 0.5)
        .map(|e| (e.x, e.y))
        .collect();
    if positives.is_empty() {
        return Err(Error::NoPositives(direction));
    }

    let (n_x, n_y) = (market.n_x(), market.n_y());
    let mut model = FactorModel::init(n_x, n_y, config.d, direction, config.seed)?;
    let mut rng = rng::substream(config.seed, 2, direction.code() as u64);
    let whole = config.negative_sampling_rate.floor() as usize;
    let frac = config.negative_sampling_rate - whole as f64;
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = examples[i];
            sgd_step(&mut model, &ex, config.learning_rate, config.l2);
            if ex.label < 0.5 {
                continue;
            }
            let draws = whole + usize::from(frac > 0.0 && rng.random::<f64>() < frac);
            for _ in 0..draws {
                // resample a few times on collision with an observed positive
                for _ in 0..8 {
                    let neg = match direction {
                        Direction::XToY => (ex.x, rng.random_range(0..n_y)),
                        Direction::YToX => (rng.random_range(0..n_x), ex.y),
                    };
                    if !positives.contains(&neg) {
                        let neg = Example {
                            x: neg.0,
                            y: neg.1,
                            label: 0.0,
                        };
                        sgd_step(&mut model, &neg, config.learning_rate, config.l2);
                        break;
                    }
                }
            }
        }
    }
    if !model.is_finite() {
        return Err(Error::NotFinite("matrix factorization training"));
    }
    Ok(model)
}

/// Dense scores for every pair, `O(|X||Y|d)`.
pub fn score_matrix(model_xy: &FactorModel, model_yx: &FactorModel) -> Result<ScoreMatrix> {
    if model_xy.direction != Direction::XToY || model_yx.direction != Direction::YToX {
        return Err(Error::DimensionMismatch(format!(
            "expected (x_to_y, y_to_x) models, got ({}, {})",
            model_xy.direction, model_yx.direction
        )));
    }
    if model_xy.n_x() != model_yx.n_x() || model_xy.n_y() != model_yx.n_y() {
        return Err(Error::DimensionMismatch(format!(
            "models cover {}x{} and {}x{} markets",
            model_xy.n_x(),
            model_xy.n_y(),
            model_yx.n_x(),
            model_yx.n_y()
        )));
    }
    model_xy.validate()?;
    model_yx.validate()?;
    let (n_x, n_y) = (model_xy.n_x(), model_xy.n_y());
    let fill = |model: &FactorModel| {
        let mut m = Matrix::zeros(n_x, n_y);
        m.as_mut_slice()
            .par_chunks_mut(n_y)
            .enumerate()
            .for_each(|(x, row)| {
                for (y, out) in row.iter_mut().enumerate() {
                    *out = logistic(model.affinity(x, y));
                }
            });
        m
    };
    let (p_xy, p_yx) = rayon::join(|| fill(model_xy), || fill(model_yx));
    ScoreMatrix::new(p_xy, p_yx)
}
