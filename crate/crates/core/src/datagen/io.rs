//! Dataset files.
//!
//! Layout (little-endian): `"FMID"`, `u16` version = 1, `u32 n`, `u32 d`,
//! `u8 K`, `u8 has_latents`, `n·d` `f32` features row-major, `n` `u8` labels,
//! then if `has_latents`: `u32 m`, `u32 o`, `n·m` `f32`, `n·o` `f32`; then the
//! environment id as `u16` length + UTF-8 bytes; finally the CRC32 of all
//! preceding bytes.

use std::path::Path;

use super::{LabeledDataset, Latents};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const DATASET_MAGIC: &[u8; 4] = b"FMID";
pub const DATASET_VERSION: u16 = 1;

pub fn dataset_to_bytes<T: Scalar>(ds: &LabeledDataset<T>) -> Result<Vec<u8>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ds.validate()?;
    let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
    w.u32(ds.len() as u32);
    w.u32(ds.dim() as u32);
    w.u8(ds.num_classes);
    w.u8(ds.latents.is_some() as u8);
    w.f32s(ds.x.data());
    w.bytes(&ds.y);
    if let Some(l) = &ds.latents {
        w.u32(l.z_true.cols() as u32);
        w.u32(l.z_spu.cols() as u32);
        w.f32s(l.z_true.data());
        w.f32s(l.z_spu.data());
    }
    w.str(&ds.env_id);
    Ok(w.finish())
}

pub fn dataset_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<LabeledDataset<T>> {
    let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let k = r.u8()?;
    let has_latents = r.u8()? != 0;
    let x = Matrix::new(n, d, r.f32s(n * d)?)?;
    let y = r.bytes(n)?.to_vec();
    let latents = if has_latents {
        let m = r.u32()? as usize;
        let o = r.u32()? as usize;
        let z_true = Matrix::new(n, m, r.f32s(n * m)?)?;
        let z_spu = Matrix::new(n, o, r.f32s(n * o)?)?;
        Some(Latents { z_true, z_spu })
    } else {
        None
    };
    let env_id = r.str()?;
    r.finish()?;
    LabeledDataset::new(x, y, k, env_id, latents)
}

pub fn save_dataset<T: Scalar>(ds: &LabeledDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    dataset_from_bytes(&std::fs::read(path)?)
}
