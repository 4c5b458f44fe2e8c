//! Versioned binary serialization of trained weights.
//!
//! Layout (all integers little-endian): magic `SBM1`, u32 layer count, then
//! per layer a u8 kind tag (0 point, 1 gaussian) followed by its tensors as
//! shape-prefixed arrays (u32 rank, u32 dims, f64 values row-major).
//! Point layers store `w, b`; gaussian layers store
//! `w_mean, w_log_std, b_mean, b_log_std`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, GaussianDense, LayerParams, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SBM1";

fn push_array2(buf: &mut Vec<u8>, a: &Array2<f64>) {
    buf.extend_from_slice(&2u32.to_le_bytes());
    buf.extend_from_slice(&(a.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(a.ncols() as u32).to_le_bytes());
    for &v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_array1(buf: &mut Vec<u8>, a: &Array1<f64>) {
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(a.len() as u32).to_le_bytes());
    for &v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_params(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        match layer {
            LayerParams::Point(d) => {
                buf.push(0);
                push_array2(&mut buf, &d.w);
                push_array1(&mut buf, &d.b);
            }
            LayerParams::Gaussian(g) => {
                buf.push(1);
                push_array2(&mut buf, &g.w_mean);
                push_array2(&mut buf, &g.w_log_std);
                push_array1(&mut buf, &g.b_mean);
                push_array1(&mut buf, &g.b_log_std);
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Parse {
                path: self.path.clone(),
                line: 0,
                reason: format!("truncated at byte {}", self.pos),
            })?;
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn array2(&mut self) -> Result<Array2<f64>> {
        let rank = self.u32()?;
        if rank != 2 {
            return Err(self.err(format!("expected rank-2 array, got rank {rank}")));
        }
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self.f64s(rows * cols)?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| self.err(e.to_string()))
    }

    fn array1(&mut self) -> Result<Array1<f64>> {
        let rank = self.u32()?;
        if rank != 1 {
            return Err(self.err(format!("expected rank-1 array, got rank {rank}")));
        }
        let len = self.u32()? as usize;
        Ok(Array1::from_vec(self.f64s(len)?))
    }

    fn err(&self, reason: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: 0,
            reason,
        }
    }
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(r.err(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        match r.u8()? {
            0 => layers.push(LayerParams::Point(Dense {
                w: r.array2()?,
                b: r.array1()?,
            })),
            1 => layers.push(LayerParams::Gaussian(GaussianDense {
                w_mean: r.array2()?,
                w_log_std: r.array2()?,
                b_mean: r.array1()?,
                b_log_std: r.array1()?,
            })),
            tag => return Err(r.err(format!("unknown layer tag {tag}"))),
        }
    }
    let params = ModelParams { layers };
    if !params.all_finite() {
        return Err(r.err("non-finite parameter value".to_string()));
    }
    Ok(params)
}
