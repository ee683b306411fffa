//! Signed-random-projection index for maximum inner product search.
//!
//! Keys are scaled by the largest key norm and lifted by one coordinate to
//! unit length, queries are normalized and padded with zero. The angle
//! between a lifted pair is then monotone in the raw inner product, so
//! hyperplane hashing retrieves large inner products. Queries probe every
//! bucket within a small Hamming radius of their own code.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::approx::ApproxConfig;
use crate::error::{Error, Result};
use crate::market::Side;
use crate::matrix::{dot, Matrix};
use crate::mf::FactorModel;
use crate::rng;

#[derive(Clone, Debug)]
pub struct NeighborIndex {
    side: Side,
    /// Lifted keys, one row per indexed user.
    keys: Matrix,
    /// `tables·bits` hyperplanes over the lifted space.
    planes: Matrix,
    tables: Vec<HashMap<u64, Vec<u32>>>,
    bits: usize,
    /// Every bit mask of popcount at most the probe radius, lowest first.
    masks: Vec<u64>,
}

/// Search keys for `side` and the matching queries for the other side, from
/// one direction model: keys `[v_y, bias_y]` against queries `[u_x, 1]`.
pub fn model_keys(model: &FactorModel, side: Side) -> (Matrix, Matrix) {
    let lift = |m: &Matrix, extra: &dyn Fn(usize) -> f64| {
        Matrix::from_fn(m.rows(), m.cols() + 1, |r, c| {
            if c < m.cols() {
                m[(r, c)]
            } else {
                extra(r)
            }
        })
    };
    let bias = model.biases(side);
    let keys = lift(model.factors(side), &|r| bias[r]);
    let queries = lift(model.factors(side.other()), &|_| 1.0);
    (keys, queries)
}

/// Keys for `side` and queries for the other side such that the inner
/// product equals `a_xy + a_yx` up to a per-query constant, where `a` are
/// the two models' affinities. Large products mean large reciprocal weight.
pub fn pair_keys(model_xy: &FactorModel, model_yx: &FactorModel, side: Side) -> Result<(Matrix, Matrix)> {
    if model_xy.n_x() != model_yx.n_x() || model_xy.n_y() != model_yx.n_y() {
        return Err(Error::DimensionMismatch("models cover different markets".into()));
    }
    let (f1, f2) = (model_xy.factors(side), model_yx.factors(side));
    let (g1, g2) = (model_xy.factors(side.other()), model_yx.factors(side.other()));
    let (b1, b2) = (model_xy.biases(side), model_yx.biases(side));
    let (d1, d2) = (f1.cols(), f2.cols());
    let keys = Matrix::from_fn(f1.rows(), d1 + d2 + 1, |r, c| {
        if c < d1 {
            f1[(r, c)]
        } else if c < d1 + d2 {
            f2[(r, c - d1)]
        } else {
            b1[r] + b2[r]
        }
    });
    let queries = Matrix::from_fn(g1.rows(), d1 + d2 + 1, |r, c| {
        if c < d1 {
            g1[(r, c)]
        } else if c < d1 + d2 {
            g2[(r, c - d1)]
        } else {
            1.0
        }
    });
    Ok((keys, queries))
}

/// Index over `side` of a single direction model.
pub fn build_index(model: &FactorModel, side: Side, config: &ApproxConfig) -> Result<NeighborIndex> {
    if model.d == 0 {
        return Err(Error::Config("cannot index zero-dimensional factors".into()));
    }
    model.validate()?;
    NeighborIndex::from_keys(side, &model_keys(model, side).0, config)
}

fn masks(bits: usize, radius: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    let mut frontier = vec![(0u64, 0usize)];
    for _ in 0..radius.min(bits) {
        let mut next = Vec::new();
        for &(mask, lowest) in &frontier {
            for b in lowest..bits {
                next.push((mask | 1 << b, b + 1));
            }
        }
        out.extend(next.iter().map(|&(m, _)| m));
        frontier = next;
    }
    out
}

impl NeighborIndex {
    pub fn from_keys(side: Side, keys: &Matrix, config: &ApproxConfig) -> Result<Self> {
        config.validate()?;
        let dim = keys.cols();
        if dim == 0 {
            return Err(Error::Config("cannot index zero-dimensional keys".into()));
        }
        if keys.rows() == 0 {
            return Err(Error::Empty("index keys"));
        }
        if !keys.all_finite() {
            return Err(Error::NotFinite("index keys"));
        }
        let max_norm = (0..keys.rows())
            .map(|r| dot(keys.row(r), keys.row(r)).sqrt())
            .fold(0.0, f64::max);
        let scale = if max_norm > 0.0 { 1.0 / max_norm } else { 1.0 };
        let lifted = Matrix::from_fn(keys.rows(), dim + 1, |r, c| {
            if c < dim {
                keys[(r, c)] * scale
            } else {
                let n2 = dot(keys.row(r), keys.row(r)) * scale * scale;
                (1.0 - n2).max(0.0).sqrt()
            }
        });

        let mut rng = rng::substream(config.seed, 20, side as u64);
        let planes = Matrix::from_fn(config.tables * config.bits, dim + 1, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let mut index = Self {
            side,
            keys: lifted,
            planes,
            tables: vec![HashMap::new(); config.tables],
            bits: config.bits,
            masks: masks(config.bits, config.probes),
        };
        for i in 0..index.keys.rows() {
            for t in 0..config.tables {
                let code = index.code(t, index.keys.row(i));
                index.tables[t].entry(code).or_default().push(i as u32);
            }
        }
        Ok(index)
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    /// Width of the raw (unlifted) keys.
    pub fn key_dim(&self) -> usize {
        self.keys.cols() - 1
    }

    fn code(&self, table: usize, v: &[f64]) -> u64 {
        let mut code = 0u64;
        for b in 0..self.bits {
            if dot(self.planes.row(table * self.bits + b), v) >= 0.0 {
                code |= 1 << b;
            }
        }
        code
    }

    /// Bucket of indexed user `i` in `table`.
    pub fn bucket_of(&self, table: usize, i: usize) -> u64 {
        self.code(table, self.keys.row(i))
    }

    /// Members of every bucket within the probe radius of `v`'s code. When
    /// all of those are empty, the nearest occupied buckets instead.
    fn probe(&self, v: &[f64]) -> Vec<usize> {
        let codes: Vec<u64> = (0..self.tables.len()).map(|t| self.code(t, v)).collect();
        let mut out = Vec::new();
        for (table, &code) in self.tables.iter().zip(&codes) {
            for &mask in &self.masks {
                if let Some(bucket) = table.get(&(code ^ mask)) {
                    out.extend(bucket.iter().map(|&i| i as usize));
                }
            }
        }
        if out.is_empty() {
            for (table, &code) in self.tables.iter().zip(&codes) {
                let nearest = table.keys().map(|b| (b ^ code).count_ones()).min().unwrap_or(0);
                for (b, bucket) in table {
                    if (b ^ code).count_ones() == nearest {
                        out.extend(bucket.iter().map(|&i| i as usize));
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Candidate set for a raw query, ascending and duplicate free.
    pub fn query(&self, query: &[f64]) -> Result<Vec<usize>> {
        if query.len() != self.key_dim() {
            return Err(Error::DimensionMismatch(format!(
                "query of width {} against keys of width {}",
                query.len(),
                self.key_dim()
            )));
        }
        if !query.iter().all(|v| v.is_finite()) {
            return Err(Error::NotFinite("index query"));
        }
        let norm = dot(query, query).sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        let mut lifted: Vec<f64> = query.iter().map(|v| v * inv).collect();
        lifted.push(0.0);
        Ok(self.probe(&lifted))
    }

    /// Candidates near indexed user `i`'s own key; always includes every
    /// user sharing one of its buckets.
    pub fn query_member(&self, i: usize) -> Result<Vec<usize>> {
        if i >= self.len() {
            return Err(Error::OutOfRange(format!("member {i} of {}", self.len())));
        }
        Ok(self.probe(self.keys.row(i)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Direction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(tables: usize, bits: usize) -> ApproxConfig {
        ApproxConfig {
            tables,
            bits,
            seed: 3,
            ..Default::default()
        }
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn probe_masks_cover_hamming_ball() {
        assert_eq!(masks(10, 0), vec![0]);
        assert_eq!(masks(10, 1).len(), 11);
        let m = masks(10, 2);
        assert_eq!(m.len(), 1 + 10 + 45);
        let mut sorted = m.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), m.len());
        assert!(m.iter().all(|v| v.count_ones() <= 2 && *v < 1 << 10));
    }

    #[test]
    fn single_user_is_always_returned() {
        let keys = Matrix::from_rows(&[vec![0.3, -1.2]]);
        let index = NeighborIndex::from_keys(Side::Y, &keys, &config(4, 8)).unwrap();
        for q in [[1.0, 0.0], [-5.0, 2.0], [0.0, 0.0]] {
            assert_eq!(index.query(&q).unwrap(), vec![0]);
        }
    }

    #[test]
    fn identical_keys_share_every_bucket() {
        let mut keys = gaussian(50, 6, 1);
        let copy = keys.row(7).to_vec();
        keys.row_mut(31).copy_from_slice(&copy);
        let index = NeighborIndex::from_keys(Side::X, &keys, &config(8, 12)).unwrap();
        for t in 0..index.n_tables() {
            assert_eq!(index.bucket_of(t, 7), index.bucket_of(t, 31));
        }
        let hits = index.query_member(7).unwrap();
        assert!(hits.contains(&7) && hits.contains(&31));
    }

    #[test]
    fn every_user_in_every_table_once() {
        let keys = gaussian(300, 5, 2);
        let index = NeighborIndex::from_keys(Side::Y, &keys, &config(6, 9)).unwrap();
        for table in &index.tables {
            let mut all: Vec<u32> = table.values().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..300).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let keys = gaussian(200, 4, 5);
        let a = NeighborIndex::from_keys(Side::Y, &keys, &config(4, 8)).unwrap();
        let b = NeighborIndex::from_keys(Side::Y, &keys, &config(4, 8)).unwrap();
        let q = [0.5, -0.1, 0.9, 0.0];
        assert_eq!(a.query(&q).unwrap(), b.query(&q).unwrap());
        assert_eq!(a.planes, b.planes);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let model = FactorModel::zeros(3, 3, 0, Direction::XToY);
        assert!(build_index(&model, Side::Y, &config(2, 4)).is_err());
        assert!(NeighborIndex::from_keys(Side::Y, &Matrix::zeros(3, 0), &config(2, 4)).is_err());
    }

    #[test]
    fn query_width_is_checked() {
        let index = NeighborIndex::from_keys(Side::Y, &gaussian(10, 3, 0), &config(2, 4)).unwrap();
        assert!(index.query(&[1.0, 2.0]).is_err());
        assert!(index.query(&[1.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn model_keys_reproduce_affinity_up_to_row_constant() {
        let model = FactorModel::init(4, 5, 3, Direction::XToY, 9).unwrap();
        let (keys, queries) = model_keys(&model, Side::Y);
        for x in 0..4 {
            for y in 0..5 {
                let ip = dot(queries.row(x), keys.row(y));
                assert!((ip + model.bias_x[x] - model.affinity(x, y)).abs() < 1e-12);
            }
        }
    }
}
