//! Parameter checkpoints.
//!
//! Layout, all little-endian: `"HGAT"`, `u32` version (1), `u32` head count,
//! `u32` tensor count, then per tensor a `u32` rank followed by `u32` dims,
//! then every tensor's `f64` payload in the same order (per head `W1`, `a`;
//! then `W2`, `b2`).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AttentionHead, HyperGatParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HGAT";
const VERSION: u32 = 1;

fn shapes(params: &HyperGatParams) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for h in &params.heads {
        out.push(vec![h.projection.nrows(), h.projection.ncols()]);
        out.push(vec![h.attention.len()]);
    }
    out.push(vec![params.classifier.nrows(), params.classifier.ncols()]);
    out.push(vec![params.bias.len()]);
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} does not fit the checkpoint header")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_checkpoint(params: &HyperGatParams) -> Result<Vec<u8>> {
    params.check_shapes()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, params.heads.len())?;
    let table = shapes(params);
    put_u32(&mut out, table.len())?;
    for dims in &table {
        put_u32(&mut out, dims.len())?;
        for &d in dims {
            put_u32(&mut out, d)?;
        }
    }
    for tensor in params.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let chunk = self.bytes.get(self.pos..self.pos + len).ok_or_else(|| Error::Format {
            record: 0,
            message: format!("checkpoint truncated at byte {}", self.pos),
        })?;
        self.pos += len;
        Ok(chunk)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<HyperGatParams> {
    let format_err = |message: String| Error::Format { record: 0, message };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let heads = r.u32()?;
    let count = r.u32()?;
    if heads == 0 || count != 2 * heads + 2 {
        return Err(format_err(format!("{count} tensors for {heads} heads")));
    }
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()?;
        table.push((0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
    }
    let matrix = |dims: &[usize], data: Vec<f64>| -> Result<Array2<f64>> {
        match dims {
            [rows, cols] => Array2::from_shape_vec((*rows, *cols), data).map_err(|e| Error::Shape(e.to_string())),
            _ => Err(Error::Shape(format!("expected a matrix, found rank {}", dims.len()))),
        }
    };
    let vector = |dims: &[usize], data: Vec<f64>| -> Result<Array1<f64>> {
        match dims {
            [_] => Ok(Array1::from_vec(data)),
            _ => Err(Error::Shape(format!("expected a vector, found rank {}", dims.len()))),
        }
    };
    let mut next = |i: usize| -> Result<Vec<f64>> { r.f64s(table[i].iter().product()) };

    let mut head_params = Vec::with_capacity(heads);
    for h in 0..heads {
        let projection = matrix(&table[2 * h], next(2 * h)?)?;
        let attention = vector(&table[2 * h + 1], next(2 * h + 1)?)?;
        head_params.push(AttentionHead { projection, attention });
    }
    let classifier = matrix(&table[2 * heads], next(2 * heads)?)?;
    let bias = vector(&table[2 * heads + 1], next(2 * heads + 1)?)?;
    let params = HyperGatParams {
        heads: head_params,
        classifier,
        bias,
    };
    params.check_shapes()?;
    Ok(params)
}

pub fn save_checkpoint(params: &HyperGatParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<HyperGatParams> {
    let path = path.as_ref();
    read_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
