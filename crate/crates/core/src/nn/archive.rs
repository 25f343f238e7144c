//! Binary tensor archive used for checkpoints and imported weights.
//!
//! Layout (little endian):
//!
//! ```text
//! b"DYNAMO-CKPT-1\n"
//! u64 config length, config text (UTF-8 JSON)
//! u64 step
//! u32 tensor count
//! per tensor: u32 name length, name, u8 dtype (0 = f32, 1 = f64),
//!             u32 rank, u64 per dim, raw values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"DYNAMO-CKPT-1\n";

#[derive(Clone, Debug)]
pub struct Archive {
    pub config: String,
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(archive.config.len() as u64).to_le_bytes())?;
    w.write_all(archive.config.as_bytes())?;
    w.write_all(&archive.step.to_le_bytes())?;
    w.write_all(&(archive.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &archive.tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let flat = t.flatten_all()?;
        match t.dtype() {
            DType::F32 => w.write_all(&[0])?,
            DType::F64 => w.write_all(&[1])?,
            other => return Err(bad(format!("tensor {name}: unsupported dtype {other:?}"))),
        }
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match t.dtype() {
            DType::F32 => {
                for x in flat.to_vec1::<f32>()? {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            _ => {
                for x in flat.to_vec1::<f64>()? {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_n<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated archive: {e}")))?;
    Ok(b)
}

fn read_vec(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated archive: {e}")))?;
    Ok(b)
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_vec(&mut r, MAGIC.len())?;
    if magic != MAGIC {
        return Err(bad(format!("{} is not a checkpoint archive", path.display())));
    }
    let clen = u64::from_le_bytes(read_n(&mut r)?) as usize;
    let config = String::from_utf8(read_vec(&mut r, clen)?).map_err(|e| bad(e.to_string()))?;
    let step = u64::from_le_bytes(read_n(&mut r)?);
    let count = u32::from_le_bytes(read_n(&mut r)?);
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = u32::from_le_bytes(read_n(&mut r)?) as usize;
        let name = String::from_utf8(read_vec(&mut r, nlen)?).map_err(|e| bad(e.to_string()))?;
        let [dtype] = read_n::<1>(&mut r)?;
        let rank = u32::from_le_bytes(read_n(&mut r)?) as usize;
        let dims = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_n(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let t = match dtype {
            0 => {
                let raw = read_vec(&mut r, n * 4)?;
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
            1 => {
                let raw = read_vec(&mut r, n * 8)?;
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
            d => return Err(bad(format!("tensor {name}: unknown dtype tag {d}"))),
        };
        tensors.push((name, t));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes after the last tensor", rest.len())));
    }
    Ok(Archive { config, step, tensors })
}
