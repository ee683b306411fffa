//! Baseline reciprocal scores: aggregate the two directional scores with a
//! fixed function `φ(p_xy, p_yx)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ScoreMatrix;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "weight")]
pub enum FusionKind {
    Harmonic,
    Arithmetic,
    Geometric,
    /// `ab / (ab + (1−a)(1−b))`, the cross-ratio under a uniform prior.
    CrossRatioUniform,
    Product,
    /// `w·a + (1−w)·b` with `w ∈ [0, 1]`.
    Weighted(f64),
}

impl FusionKind {
    pub const SYMMETRIC: [FusionKind; 5] = [
        FusionKind::Harmonic,
        FusionKind::Arithmetic,
        FusionKind::Geometric,
        FusionKind::CrossRatioUniform,
        FusionKind::Product,
    ];

    pub fn weighted(w: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&w) {
            Ok(FusionKind::Weighted(w))
        } else {
            Err(Error::Config(format!("fusion weight {w} is outside [0, 1]")))
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionKind::Harmonic => f.write_str("harmonic"),
            FusionKind::Arithmetic => f.write_str("arithmetic"),
            FusionKind::Geometric => f.write_str("geometric"),
            FusionKind::CrossRatioUniform => f.write_str("crossratio"),
            FusionKind::Product => f.write_str("product"),
            FusionKind::Weighted(w) => write!(f, "weighted:{w}"),
        }
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    /// Accepts `harmonic|arithmetic|geometric|crossratio|product|weighted:<w>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(FusionKind::Harmonic),
            "arithmetic" => Ok(FusionKind::Arithmetic),
            "geometric" => Ok(FusionKind::Geometric),
            "crossratio" | "cross_ratio_uniform" => Ok(FusionKind::CrossRatioUniform),
            "product" => Ok(FusionKind::Product),
            other => match other.strip_prefix("weighted:") {
                Some(w) => {
                    let w: f64 = w
                        .parse()
                        .map_err(|_| Error::Config(format!("bad fusion weight `{w}`")))?;
                    FusionKind::weighted(w)
                }
                None => Err(Error::Config(format!("unknown fusion kind `{other}`"))),
            },
        }
    }
}

pub fn fuse(kind: FusionKind, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(Error::OutOfRange(format!("scores ({a}, {b}) must lie in [0, 1]")));
    }
    let v = match kind {
        FusionKind::Harmonic => {
            if a + b == 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            }
        }
        FusionKind::Arithmetic => (a + b) / 2.0,
        FusionKind::Geometric => (a * b).sqrt(),
        FusionKind::CrossRatioUniform => {
            let agree = a * b;
            let disagree = (1.0 - a) * (1.0 - b);
            if agree + disagree == 0.0 {
                return Err(Error::UndefinedCrossRatio { a, b });
            }
            agree / (agree + disagree)
        }
        FusionKind::Product => a * b,
        FusionKind::Weighted(w) => {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("fusion weight {w} is outside [0, 1]")));
            }
            w * a + (1.0 - w) * b
        }
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Elementwise [`fuse`]; errors carry the failing pair.
pub fn fuse_matrix(kind: FusionKind, scores: &ScoreMatrix) -> Result<Matrix> {
    let (n_x, n_y) = scores.shape();
    let mut out = Matrix::zeros(n_x, n_y);
    for x in 0..n_x {
        for y in 0..n_y {
            out[(x, y)] = fuse(kind, scores.p_xy()[(x, y)], scores.p_yx()[(x, y)])
                .map_err(|e| Error::at_pair(x, y, e))?;
        }
    }
    Ok(out)
}
