//! Market domain types shared by every other module.

mod ingest;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use ingest::{load_feedback, load_market, load_roster, FeedbackFormat};

/// One side of the market. `X` are the men, `Y` the women.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    X,
    Y,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::X => Side::Y,
            Side::Y => Side::X,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::X => "X",
            Side::Y => "Y",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "X" | "x" => Ok(Side::X),
            "Y" | "y" => Ok(Side::Y),
            other => Err(format!("unknown side `{other}` (expected X or Y)")),
        }
    }
}

/// Which side's actions a preference score describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    XToY,
    YToX,
}

impl Direction {
    pub fn sender_side(self) -> Side {
        match self {
            Direction::XToY => Side::X,
            Direction::YToX => Side::Y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Direction::XToY => 0,
            Direction::YToX => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Direction::XToY),
            1 => Some(Direction::YToX),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::XToY => "x_to_y",
            Direction::YToX => "y_to_x",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Like,
    Nope,
    Thank,
    Sorry,
}

impl Action {
    pub fn is_positive(self) -> bool {
        matches!(self, Action::Like | Action::Thank)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Like => "like",
            Action::Nope => "nope",
            Action::Thank => "thank",
            Action::Sorry => "sorry",
        }
    }
}

impl FromStr for Action {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "like" => Ok(Action::Like),
            "nope" => Ok(Action::Nope),
            "thank" => Ok(Action::Thank),
            "sorry" => Ok(Action::Sorry),
            _ => Err(()),
        }
    }
}

/// A single unilateral action. Users are dense indices into their side's
/// id list: `sender` indexes `sender_side`, `receiver` the opposite side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub sender_side: Side,
    pub sender: usize,
    pub receiver: usize,
    pub action: Action,
    pub timestamp: u64,
}

impl FeedbackEvent {
    /// The event's pair as `(x, y)` indices.
    pub fn pair(&self) -> (usize, usize) {
        match self.sender_side {
            Side::X => (self.sender, self.receiver),
            Side::Y => (self.receiver, self.sender),
        }
    }

    pub fn direction(&self) -> Direction {
        match self.sender_side {
            Side::X => Direction::XToY,
            Side::Y => Direction::YToX,
        }
    }
}

/// The two user sides and the feedback log they were built from.
///
/// Immutable once constructed; ids are opaque strings, numerics use the
/// position of an id in [`Market::men`] / [`Market::women`].
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    men: Vec<String>,
    women: Vec<String>,
    feedback: Vec<FeedbackEvent>,
    lookup: HashMap<String, (Side, usize)>,
}

impl Market {
    /// Validates the side invariants and sorts `feedback` by timestamp
    /// (stable, so same-second events keep file order).
    pub fn new(
        men: Vec<String>,
        women: Vec<String>,
        mut feedback: Vec<FeedbackEvent>,
    ) -> Result<Self> {
        if men.is_empty() || women.is_empty() {
            return Err(Error::InvalidMarket(format!(
                "both sides need at least one user (got {} and {})",
                men.len(),
                women.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(men.len() + women.len());
        for (side, ids) in [(Side::X, &men), (Side::Y, &women)] {
            for (i, id) in ids.iter().enumerate() {
                if let Some((prev, _)) = lookup.insert(id.clone(), (side, i)) {
                    return Err(Error::InvalidMarket(if prev == side {
                        format!("duplicate user id `{id}` on side {side}")
                    } else {
                        format!("user id `{id}` appears on both sides")
                    }));
                }
            }
        }
        for ev in &feedback {
            let (n_send, n_recv) = match ev.sender_side {
                Side::X => (men.len(), women.len()),
                Side::Y => (women.len(), men.len()),
            };
            if ev.sender >= n_send || ev.receiver >= n_recv {
                return Err(Error::InvalidMarket(format!(
                    "event references out-of-range user ({} -> {})",
                    ev.sender, ev.receiver
                )));
            }
        }
        feedback.sort_by_key(|ev| ev.timestamp);
        Ok(Self {
            men,
            women,
            feedback,
            lookup,
        })
    }

    pub fn men(&self) -> &[String] {
        &self.men
    }

    pub fn women(&self) -> &[String] {
        &self.women
    }

    pub fn ids(&self, side: Side) -> &[String] {
        match side {
            Side::X => &self.men,
            Side::Y => &self.women,
        }
    }

    pub fn n_x(&self) -> usize {
        self.men.len()
    }

    pub fn n_y(&self) -> usize {
        self.women.len()
    }

    pub fn feedback(&self) -> &[FeedbackEvent] {
        &self.feedback
    }

    pub fn lookup(&self, id: &str) -> Option<(Side, usize)> {
        self.lookup.get(id).copied()
    }

    pub fn user(&self, id: &str) -> Result<(Side, usize)> {
        self.lookup(id)
            .ok_or_else(|| Error::UnknownUser(id.to_string()))
    }

    pub fn id(&self, side: Side, index: usize) -> &str {
        &self.ids(side)[index]
    }

    /// Number of positive actions (`like`/`thank`) each user of `side` received.
    pub fn positive_in_degree(&self, side: Side) -> Vec<u64> {
        let mut counts = vec![0u64; self.ids(side).len()];
        for ev in &self.feedback {
            if ev.sender_side == side.other() && ev.action.is_positive() {
                counts[ev.receiver] += 1;
            }
        }
        counts
    }

    /// Likes received (first-move positives only).
    pub fn like_in_degree(&self, side: Side) -> Vec<u64> {
        let mut counts = vec![0u64; self.ids(side).len()];
        for ev in &self.feedback {
            if ev.sender_side == side.other() && ev.action == Action::Like {
                counts[ev.receiver] += 1;
            }
        }
        counts
    }
}

/// Unilateral preference scores, both indexed `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    p_xy: Matrix,
    p_yx: Matrix,
}

impl ScoreMatrix {
    /// Checks shape agreement and that every entry lies in `[0, 1]`.
    pub fn new(p_xy: Matrix, p_yx: Matrix) -> Result<Self> {
        if p_xy.shape() != p_yx.shape() {
            return Err(Error::DimensionMismatch(format!(
                "p_xy is {:?} but p_yx is {:?}",
                p_xy.shape(),
                p_yx.shape()
            )));
        }
        if p_xy.rows() == 0 || p_xy.cols() == 0 {
            return Err(Error::Empty("score matrix"));
        }
        for (name, m) in [("p_xy", &p_xy), ("p_yx", &p_yx)] {
            if let Some(pos) = m.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
                let (x, y) = (pos / m.cols(), pos % m.cols());
                return Err(Error::OutOfRange(format!(
                    "{name}[{x},{y}] = {} is outside [0, 1]",
                    m.as_slice()[pos]
                )));
            }
        }
        Ok(Self { p_xy, p_yx })
    }

    /// Same value in both directions everywhere.
    pub fn uniform(n_x: usize, n_y: usize, value: f64) -> Result<Self> {
        Self::new(
            Matrix::filled(n_x, n_y, value),
            Matrix::filled(n_x, n_y, value),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        self.p_xy.shape()
    }

    pub fn p_xy(&self) -> &Matrix {
        &self.p_xy
    }

    pub fn p_yx(&self) -> &Matrix {
        &self.p_yx
    }
}

/// Equilibrium match probabilities and singles probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMatching {
    pub mu: Matrix,
    pub mu_x0: Vec<f64>,
    pub mu_y0: Vec<f64>,
    /// Largest marginal-constraint violation at exit.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Pairwise transfers `tau[x, y]`, paid by `x` to `y` when matched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transfers {
    pub tau: Matrix,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_overlapping_sides() {
        let err = Market::new(ids(&["a", "b"]), ids(&["b"]), vec![]).unwrap_err();
        assert!(err.to_string().contains("both sides"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_empty_sides() {
        assert!(Market::new(ids(&["a", "a"]), ids(&["b"]), vec![]).is_err());
        assert!(Market::new(ids(&[]), ids(&["b"]), vec![]).is_err());
    }

    #[test]
    fn sorts_feedback_by_timestamp() {
        let ev = |t| FeedbackEvent {
            sender_side: Side::X,
            sender: 0,
            receiver: 0,
            action: Action::Like,
            timestamp: t,
        };
        let m = Market::new(ids(&["a"]), ids(&["b"]), vec![ev(5), ev(1), ev(3)]).unwrap();
        let ts: Vec<_> = m.feedback().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![1, 3, 5]);
    }

    #[test]
    fn score_matrix_range_is_checked() {
        let ok = Matrix::filled(2, 2, 0.5);
        let mut bad = ok.clone();
        bad[(1, 1)] = 1.0 + 1e-12;
        assert!(ScoreMatrix::new(ok.clone(), ok.clone()).is_ok());
        assert!(ScoreMatrix::new(ok.clone(), bad).is_err());
        assert!(ScoreMatrix::new(ok, Matrix::filled(2, 3, 0.5)).is_err());
    }
}
