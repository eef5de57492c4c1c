//! Flat binary tensor container and parameter checkpoints.
//!
//! Tensor layout: magic bytes `FGSA`, u32 rank, u32 extents (little-endian),
//! then the f64 payload row-major. A checkpoint is a u32 record count followed
//! by records of (u32 name length, UTF-8 name, trainable byte, tensor).

use super::Tensor;
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const TENSOR_MAGIC: &[u8; 4] = b"FGSA";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub trainable: bool,
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

pub fn write_tensor<W: Write>(w: &mut W, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let (shape, data) = read_tensor_raw(r)?;
    Tensor::from_vec(data, &shape)
}

fn read_tensor_raw<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {:?}, expected {:?}",
            magic, TENSOR_MAGIC
        )));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {}", rank)));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok((shape, data))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_checkpoint<W: Write>(w: &mut W, records: &[CheckpointRecord]) -> Result<()> {
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for rec in records {
        let name = rec.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rec.trainable as u8])?;
        write_tensor(w, &rec.shape, &rec.data)?;
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Vec<CheckpointRecord>> {
    let count = read_u32(r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!(
                "implausible name length {}",
                name_len
            )));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::Format(format!("record name is not UTF-8: {}", e)))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let (shape, data) = read_tensor_raw(r)?;
        records.push(CheckpointRecord {
            name,
            trainable: flag[0] != 0,
            data,
            shape,
        });
    }
    Ok(records)
}

/// Serialized checkpoint as an in-memory byte buffer (hashing, tests).
pub(crate) fn checkpoint_bytes(records: &[CheckpointRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    save_checkpoint(&mut buf, records).expect("in-memory write cannot fail");
    buf
}
