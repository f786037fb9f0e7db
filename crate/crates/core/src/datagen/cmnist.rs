//! Colored MNIST: a synthetic analogue with known Bayes rates, and the
//! colouring of real digit images.
//!
//! Both share the label mechanism: the digit-class bit `c` (synthetic: a fair
//! coin; real: `digit ≤ 4`) is flipped with probability `label_flip` to give
//! `y`, and the colour bit is `y` flipped with the environment probability `e`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::idx::RawDigits;
use super::{LabeledDataset, Latents};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::scalar::Scalar;
use crate::scm::{
    mix, sample_latent, BaseLatents, EnvironmentSpec, GraphKind, Intervention, Mixing, ScmSpec, SignedBlock,
};

/// The three standard colour-flip environments.
pub const CMNIST_ENVIRONMENTS: [f64; 3] = [0.1, 0.2, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmnistParams {
    pub label_flip: f64,
    pub d_true: usize,
    pub d_color: usize,
    pub noise_var: f64,
}

impl Default for CmnistParams {
    fn default() -> Self {
        Self {
            label_flip: 0.25,
            d_true: 5,
            d_color: 5,
            noise_var: 0.1,
        }
    }
}

impl CmnistParams {
    fn validate(&self, e: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&e) || !(0.0..0.5).contains(&self.label_flip) {
            return Err(Error::InvalidParameter(format!(
                "colour flip {e} / label flip {}",
                self.label_flip
            )));
        }
        if self.d_true == 0 || self.d_color == 0 {
            return Err(Error::InvalidParameter("empty feature block".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d_true + self.d_color
    }

    /// The synthetic generator as a latent SCM (FIIF: colour is a child of `y`).
    pub fn environment_spec<T: Scalar>(&self, e: f64) -> Result<EnvironmentSpec<T>> {
        self.validate(e)?;
        let scm = ScmSpec::new(
            ScmSpec::<T>::uniform_direction(self.d_true),
            self.d_color,
            self.label_flip,
            GraphKind::Fiif,
            Mixing::Identity,
        )?;
        let block = |dim| SignedBlock {
            dim,
            scale: 1.0,
            noise_var: self.noise_var,
        };
        Ok(EnvironmentSpec {
            id: format!("{e}"),
            scm: Arc::new(scm),
            intervention: Intervention::none(),
            base: BaseLatents {
                true_block: block(self.d_true),
                spu_block: block(self.d_color),
                p_true_positive: 0.5,
                spu_agreement: 1.0 - e,
            },
        })
    }
}

/// Feature vector `(c as ±1 + noise [d_true], colour as ±1 + noise [d_color])`.
/// Latents record the generating bits `c` and colour as single 0/1 columns.
pub fn generate_cmnist_synthetic<T: Scalar>(
    params: &CmnistParams,
    e: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<LabeledDataset<T>> {
    let env = params.environment_spec::<T>(e)?;
    let lat = sample_latent(&env, n, rng)?;
    let x = mix(&lat.z_true, &lat.z_spu, &env.scm)?;
    let bits = |v: &[u8]| Matrix::from_fn(v.len(), 1, |i, _| T::of(v[i] as f64));
    LabeledDataset::new(
        x,
        lat.y,
        2,
        env.id,
        Some(Latents {
            z_true: bits(&lat.true_sign),
            z_spu: bits(&lat.spu_sign),
        }),
    )
}

/// Two-channel (red, green) flattening of real digits; the channel selected by
/// the colour bit carries the pixels and the other is zero.
pub fn colorize_mnist<T: Scalar>(
    raw: &RawDigits<T>,
    e: f64,
    label_flip: f64,
    rng: &mut Rng,
) -> Result<LabeledDataset<T>> {
    if !(0.0..=1.0).contains(&e) || !(0.0..=1.0).contains(&label_flip) {
        return Err(Error::InvalidParameter(format!(
            "colour flip {e} / label flip {label_flip}"
        )));
    }
    let n = raw.labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(&d) = raw.labels.iter().find(|&&d| d > 9) {
        return Err(Error::InvalidParameter(format!("digit label {d}")));
    }
    let p = raw.pixels.cols();
    let mut x = Matrix::zeros(n, 2 * p);
    let mut y = Vec::with_capacity(n);
    let mut c_bits = Vec::with_capacity(n);
    let mut color_bits = Vec::with_capacity(n);
    for i in 0..n {
        let c = raw.labels[i] <= 4;
        let label = c ^ rng.bernoulli(label_flip);
        let green = label ^ rng.bernoulli(e);
        let offset = if green { p } else { 0 };
        x.row_mut(i)[offset..offset + p].copy_from_slice(raw.pixels.row(i));
        y.push(label as u8);
        c_bits.push(c as u8);
        color_bits.push(green as u8);
    }
    let bits = |v: &[u8]| Matrix::from_fn(n, 1, |i, _| T::of(v[i] as f64));
    LabeledDataset::new(
        x,
        y,
        2,
        format!("{e}"),
        Some(Latents {
            z_true: bits(&c_bits),
            z_spu: bits(&color_bits),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn color_bit(ds: &LabeledDataset<f64>, i: usize) -> u8 {
        let s: f64 = ds.x.row(i)[5..].iter().sum();
        (s > 0.0) as u8
    }

    #[test]
    fn zero_flip_colour_equals_label() {
        let ds: LabeledDataset<f64> =
            generate_cmnist_synthetic(&CmnistParams::default(), 0.0, 2000, &mut Rng::new(1)).unwrap();
        assert!((0..ds.len()).all(|i| color_bit(&ds, i) == ds.y[i]));
    }

    #[test]
    fn colour_agreement_in_env_09() {
        let n = 100_000;
        let ds: LabeledDataset<f64> =
            generate_cmnist_synthetic(&CmnistParams::default(), 0.9, n, &mut Rng::new(2)).unwrap();
        let agree = (0..n).filter(|&i| color_bit(&ds, i) == ds.y[i]).count() as f64 / n as f64;
        assert!((agree - 0.10).abs() <= 0.006);
    }

    #[test]
    fn true_feature_bayes_accuracy() {
        let n = 100_000;
        for e in CMNIST_ENVIRONMENTS {
            let ds: LabeledDataset<f64> =
                generate_cmnist_synthetic(&CmnistParams::default(), e, n, &mut Rng::new(3)).unwrap();
            let c = &ds.latents.as_ref().unwrap().z_true;
            let acc = (0..n).filter(|&i| c[(i, 0)] as u8 == ds.y[i]).count() as f64 / n as f64;
            assert!((acc - 0.75).abs() <= 0.01, "e={e} acc={acc}");
        }
    }

    fn raw_fixture() -> RawDigits<f64> {
        let labels: Vec<u8> = (0..10).collect();
        let pixels = Matrix::from_fn(10, 4, |i, j| ((i + j) % 3) as f64 / 2.0 + 0.1);
        RawDigits {
            pixels,
            labels,
            rows: 2,
            cols: 2,
        }
    }

    #[test]
    fn colorize_zero_flip_green_iff_label() {
        let raw = raw_fixture();
        let ds = colorize_mnist(&raw, 0.0, 0.25, &mut Rng::new(4)).unwrap();
        assert_eq!(ds.dim(), 8);
        for i in 0..ds.len() {
            let green = ds.x.row(i)[4..].iter().any(|&v| v != 0.0);
            let red = ds.x.row(i)[..4].iter().any(|&v| v != 0.0);
            assert_eq!(green, ds.y[i] == 1);
            assert_ne!(green, red);
        }
    }

    #[test]
    fn colorize_without_flips_uses_digit_rule() {
        let raw = raw_fixture();
        let ds = colorize_mnist(&raw, 0.0, 0.0, &mut Rng::new(5)).unwrap();
        assert_eq!(ds.y[3], 1);
        assert_eq!(ds.y[4], 1);
        assert_eq!(ds.y[5], 0);
        assert_eq!(ds.y[9], 0);
    }

    #[test]
    fn colorize_flip_rate() {
        let n = 20_000;
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let raw = RawDigits {
            pixels: Matrix::from_fn(n, 1, |_, _| 1.0),
            labels,
            rows: 1,
            cols: 1,
        };
        for e in CMNIST_ENVIRONMENTS {
            let ds = colorize_mnist(&raw, e, 0.25, &mut Rng::new(6)).unwrap();
            let mismatch = (0..n).filter(|&i| (ds.x[(i, 1)] > 0.0) as u8 != ds.y[i]).count() as f64 / n as f64;
            assert!((mismatch - e).abs() <= 3.0 * (e * (1.0 - e) / n as f64).sqrt());
        }
    }
}
