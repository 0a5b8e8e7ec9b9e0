//! File formats: the `MKVP` binary path dump, CSV snapshots and base64 matrix blobs.

use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{PathEnsemble, SimConfig};
use crate::CMatrix;

pub const MAGIC: &[u8; 4] = b"MKVP";
pub const VERSION: u32 = 1;

pub fn write_mkvp<W: Write>(mut w: W, paths: &PathEnsemble) -> Result<()> {
    let c = paths.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(c.n_particles as u64).to_le_bytes())?;
    w.write_all(&(c.n_steps as u64).to_le_bytes())?;
    w.write_all(&c.horizon.to_le_bytes())?;
    w.write_all(&c.sigma.to_le_bytes())?;
    w.write_all(&c.zeta.to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&[paths.increments().is_some() as u8])?;
    write_f64s(&mut w, paths.positions())?;
    if let Some(inc) = paths.increments() {
        write_f64s(&mut w, inc)?;
    }
    w.flush()?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * xs.len());
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated MKVP header: {e}")))?;
    Ok(b)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated MKVP payload: {e}")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn read_mkvp<R: Read>(mut r: R) -> Result<PathEnsemble> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Format("not an MKVP file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported MKVP version {version}")));
    }
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let m = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let horizon = f64::from_le_bytes(read_array(&mut r)?);
    let sigma = f64::from_le_bytes(read_array(&mut r)?);
    let zeta = f64::from_le_bytes(read_array(&mut r)?);
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let has_inc = read_array::<1, _>(&mut r)?[0];
    if has_inc > 1 {
        return Err(Error::Format(format!("bad increments flag {has_inc}")));
    }
    let cells = n.checked_mul(m + 1).ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let config = SimConfig { n_particles: n, horizon, n_steps: m, sigma, zeta, seed, store_increments: has_inc == 1 };
    config.validate().map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    let positions = read_f64s(&mut r, cells)?;
    let increments = if has_inc == 1 { Some(read_f64s(&mut r, n * m)?) } else { None };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after MKVP payload".into()));
    }
    PathEnsemble::from_parts(config, positions, increments)
}

/// `t,particle,x` rows for the requested grid indices.
pub fn write_snapshots_csv<W: Write>(mut w: W, paths: &PathEnsemble, steps: &[usize]) -> Result<()> {
    writeln!(w, "t,particle,x")?;
    for &m in steps {
        if m > paths.n_steps() {
            return Err(Error::Config(format!("snapshot index {m} exceeds M = {}", paths.n_steps())));
        }
        let t = paths.times()[m];
        for i in 0..paths.n_particles() {
            writeln!(w, "{},{},{}", t, i, paths.position(i, m))?;
        }
    }
    Ok(())
}

/// Row-major complex matrix as base64 of interleaved little-endian `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixBlob {
    pub rows: usize,
    pub cols: usize,
    pub encoding: String,
    pub data: String,
}

impl MatrixBlob {
    pub fn encode(m: &CMatrix) -> Self {
        let mut buf = Vec::with_capacity(16 * m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                buf.extend_from_slice(&m[(i, j)].re.to_le_bytes());
                buf.extend_from_slice(&m[(i, j)].im.to_le_bytes());
            }
        }
        MatrixBlob {
            rows: m.nrows(),
            cols: m.ncols(),
            encoding: "base64-f64le-complex-rowmajor".into(),
            data: STANDARD.encode(buf),
        }
    }

    pub fn decode(&self) -> Result<CMatrix> {
        let bytes = STANDARD.decode(&self.data).map_err(|e| Error::Format(format!("bad base64: {e}")))?;
        if bytes.len() != 16 * self.rows * self.cols {
            return Err(Error::Format("matrix blob size does not match its shape".into()));
        }
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = 2 * (i * self.cols + j);
            Complex64::new(vals[k], vals[k + 1])
        }))
    }
}

/// `[re, im]` pairs for JSON.
pub fn complex_pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

pub fn from_pairs(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|p| Complex64::new(p[0], p[1])).collect()
}
