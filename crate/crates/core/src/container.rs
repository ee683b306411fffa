//! Versioned binary containers for models, score matrices and equilibria.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | field                                         |
//! |-------|-----------------------------------------------|
//! | 4     | magic `RMAT`                                  |
//! | 2     | version                                       |
//! | 1     | kind: 1 model, 2 scores, 3 equilibrium        |
//! | 1     | direction: 0 x_to_y, 1 y_to_x, 255 none       |
//! | 8     | `d` (0 unless a model)                        |
//! | 8     | `|X|`                                         |
//! | 8     | `|Y|`                                         |
//!
//! followed by row-major `f64` blocks. A model stores `u_x`, `v_y`,
//! `bias_x`, `bias_y`; scores store `p_xy`, `p_yx`; an equilibrium stores
//! `μ_x0`, `μ_y0`, `μ`, `τ` and a trailer `[residual, iterations, converged]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::market::{Direction, EquilibriumMatching, ScoreMatrix, Transfers};
use crate::matrix::Matrix;
use crate::mf::FactorModel;

const MAGIC: [u8; 4] = *b"RMAT";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 32;
const NO_DIRECTION: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Model = 1,
    Scores = 2,
    Equilibrium = 3,
}

impl Kind {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Kind::Model),
            2 => Some(Kind::Scores),
            3 => Some(Kind::Equilibrium),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub kind: Kind,
    pub direction: Option<Direction>,
    pub d: usize,
    pub n_x: usize,
    pub n_y: usize,
}

impl Header {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6] = self.kind as u8;
        out[7] = self.direction.map_or(NO_DIRECTION, Direction::code);
        out[8..16].copy_from_slice(&(self.d as u64).to_le_bytes());
        out[16..24].copy_from_slice(&(self.n_x as u64).to_le_bytes());
        out[24..32].copy_from_slice(&(self.n_y as u64).to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than a header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a container file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let kind = Kind::from_code(bytes[6])
            .ok_or_else(|| Error::Format(format!("unknown container kind {}", bytes[6])))?;
        let direction = match bytes[7] {
            NO_DIRECTION => None,
            c => Some(
                Direction::from_code(c).ok_or_else(|| Error::Format(format!("unknown direction code {c}")))?,
            ),
        };
        let word = |at: usize| -> Result<usize> {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[at..at + 8]);
            usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("size overflows usize".into()))
        };
        Ok(Self {
            version,
            kind,
            direction,
            d: word(8)?,
            n_x: word(16)?,
            n_y: word(24)?,
        })
    }

    /// Number of `f64` values that follow the header.
    fn payload_len(&self) -> Option<usize> {
        let (d, x, y) = (self.d, self.n_x, self.n_y);
        match self.kind {
            Kind::Model => x.checked_add(y)?.checked_mul(d.checked_add(1)?),
            Kind::Scores => x.checked_mul(y)?.checked_mul(2),
            Kind::Equilibrium => x.checked_mul(y)?.checked_mul(2)?.checked_add(x)?.checked_add(y)?.checked_add(3),
        }
    }
}

fn write_container(path: &Path, header: &Header, blocks: &[&[f64]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.encode())?;
    for block in blocks {
        for v in *block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container, checking its kind and that the payload length matches
/// the header exactly.
fn read_container(path: &Path, kind: Kind) -> Result<(Header, Vec<f64>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let header = Header::decode(&bytes)?;
    if header.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a {:?} container, expected {:?}",
            path.display(),
            header.kind,
            kind
        )));
    }
    let expected = header
        .payload_len()
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header implies {expected}",
            path.display(),
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

/// Reads only the header of a container file.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut bytes = [0u8; HEADER_LEN];
    File::open(path)?
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("{} is shorter than a header", path.display())))?;
    Header::decode(&bytes)
}

struct Cursor {
    values: Vec<f64>,
    at: usize,
}

impl Cursor {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.values[self.at..self.at + n].to_vec();
        self.at += n;
        out
    }
}

pub fn write_model(path: &Path, model: &FactorModel) -> Result<()> {
    model.validate()?;
    let header = Header {
        version: VERSION,
        kind: Kind::Model,
        direction: Some(model.direction),
        d: model.d,
        n_x: model.n_x(),
        n_y: model.n_y(),
    };
    write_container(
        path,
        &header,
        &[model.u_x.as_slice(), model.v_y.as_slice(), &model.bias_x, &model.bias_y],
    )
}

pub fn read_model(path: &Path) -> Result<FactorModel> {
    let (h, values) = read_container(path, Kind::Model)?;
    let direction = h
        .direction
        .ok_or_else(|| Error::Format("model container without a direction".into()))?;
    let mut c = Cursor { values, at: 0 };
    let model = FactorModel {
        d: h.d,
        u_x: Matrix::from_vec(h.n_x, h.d, c.take(h.n_x * h.d)),
        v_y: Matrix::from_vec(h.n_y, h.d, c.take(h.n_y * h.d)),
        bias_x: c.take(h.n_x),
        bias_y: c.take(h.n_y),
        direction,
    };
    model.validate()?;
    Ok(model)
}

/// Human-readable JSON copy of a model.
pub fn write_model_json(path: &Path, model: &FactorModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn read_model_json(path: &Path) -> Result<FactorModel> {
    let model: FactorModel = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    model.validate()?;
    Ok(model)
}

pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let (n_x, n_y) = scores.shape();
    let header = Header {
        version: VERSION,
        kind: Kind::Scores,
        direction: None,
        d: 0,
        n_x,
        n_y,
    };
    write_container(path, &header, &[scores.p_xy().as_slice(), scores.p_yx().as_slice()])
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let (h, values) = read_container(path, Kind::Scores)?;
    let mut c = Cursor { values, at: 0 };
    let p_xy = Matrix::from_vec(h.n_x, h.n_y, c.take(h.n_x * h.n_y));
    let p_yx = Matrix::from_vec(h.n_x, h.n_y, c.take(h.n_x * h.n_y));
    ScoreMatrix::new(p_xy, p_yx)
}

pub fn write_equilibrium(path: &Path, matching: &EquilibriumMatching, transfers: &Transfers) -> Result<()> {
    let (n_x, n_y) = matching.mu.shape();
    if transfers.tau.shape() != (n_x, n_y) || matching.mu_x0.len() != n_x || matching.mu_y0.len() != n_y {
        return Err(Error::DimensionMismatch("equilibrium parts disagree in shape".into()));
    }
    let header = Header {
        version: VERSION,
        kind: Kind::Equilibrium,
        direction: None,
        d: 0,
        n_x,
        n_y,
    };
    let trailer = [
        matching.residual,
        matching.iterations as f64,
        if matching.converged { 1.0 } else { 0.0 },
    ];
    write_container(
        path,
        &header,
        &[
            &matching.mu_x0,
            &matching.mu_y0,
            matching.mu.as_slice(),
            transfers.tau.as_slice(),
            &trailer,
        ],
    )
}

pub fn read_equilibrium(path: &Path) -> Result<(EquilibriumMatching, Transfers)> {
    let (h, values) = read_container(path, Kind::Equilibrium)?;
    let mut c = Cursor { values, at: 0 };
    let mu_x0 = c.take(h.n_x);
    let mu_y0 = c.take(h.n_y);
    let mu = Matrix::from_vec(h.n_x, h.n_y, c.take(h.n_x * h.n_y));
    let tau = Matrix::from_vec(h.n_x, h.n_y, c.take(h.n_x * h.n_y));
    let trailer = c.take(3);
    if !(trailer[1] >= 0.0 && trailer[1].fract() == 0.0) {
        return Err(Error::Format(format!("iteration count {} is not a count", trailer[1])));
    }
    Ok((
        EquilibriumMatching {
            mu,
            mu_x0,
            mu_y0,
            residual: trailer[0],
            iterations: trailer[1] as usize,
            converged: trailer[2] != 0.0,
        },
        Transfers { tau },
    ))
}

/// Writes `x_id,y_id,mu,tau` for every pair, rows in index order.
pub fn write_equilibrium_csv(
    path: &Path,
    x_ids: &[String],
    y_ids: &[String],
    mu: impl Fn(usize, usize) -> f64,
    tau: impl Fn(usize, usize) -> f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_id", "y_id", "mu", "tau"])?;
    for (x, xid) in x_ids.iter().enumerate() {
        for (y, yid) in y_ids.iter().enumerate() {
            w.write_record([xid.as_str(), yid.as_str(), &mu(x, y).to_string(), &tau(x, y).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
