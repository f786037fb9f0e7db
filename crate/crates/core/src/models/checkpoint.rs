//! Model checkpoints.
//!
//! Layout (little-endian): `"FMIM"`, `u16` version = 1, `u32 input`,
//! `u32 classes`, `u8 activation` (0 identity, 1 relu), `u32` hidden count,
//! one `u32` per hidden width, then every parameter as `f32` in
//! [`Model::params`] order, then the CRC32 of all preceding bytes.

use std::path::Path;

use super::{Activation, Architecture, Model};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"FMIM";
pub const MODEL_VERSION: u16 = 1;

pub fn model_to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let arch = model.architecture();
    let mut w = Writer::new(MODEL_MAGIC, MODEL_VERSION);
    w.u32(arch.input as u32);
    w.u32(arch.classes as u32);
    w.u8(match arch.activation {
        Activation::Identity => 0,
        Activation::Relu => 1,
    });
    w.u32(arch.hidden.len() as u32);
    for h in &arch.hidden {
        w.u32(*h as u32);
    }
    let params: Vec<T> = model.params().copied().collect();
    w.f32s(&params);
    w.finish()
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader::open(bytes, MODEL_MAGIC, MODEL_VERSION)?;
    let input = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Identity,
        1 => Activation::Relu,
        a => return Err(Error::InvalidParameter(format!("activation code {a}"))),
    };
    let hidden = (0..r.u32()?)
        .map(|_| r.u32().map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        input,
        hidden,
        classes,
        activation,
    };
    let mut model = Model::zeros(&arch)?;
    let params: Vec<T> = r.f32s(model.num_params())?;
    r.finish()?;
    for (p, v) in model.params_mut().zip(params) {
        *p = v;
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn round_trip_f32_exact() {
        for arch in [
            Architecture::linear(10, 2),
            Architecture::mlp(10, &[32], 2),
            Architecture::mlp(7, &[5, 3], 4),
        ] {
            let m: Model<f32> = Model::init(&arch, &mut Rng::new(3)).unwrap();
            let bytes = model_to_bytes(&m);
            let back: Model<f32> = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(model_to_bytes(&back), bytes);
        }
    }

    #[test]
    fn corruption_detected() {
        let m: Model<f32> = Model::init(&Architecture::mlp(4, &[3], 2), &mut Rng::new(0)).unwrap();
        let mut bytes = model_to_bytes(&m);
        bytes[1] = b'X';
        assert!(matches!(model_from_bytes::<f32>(&bytes), Err(Error::BadMagic { .. })));
        let mut bytes = model_to_bytes(&m);
        let last = bytes.len() - 6;
        bytes[last] ^= 1;
        assert!(matches!(model_from_bytes::<f32>(&bytes), Err(Error::Checksum { .. })));
    }
}
