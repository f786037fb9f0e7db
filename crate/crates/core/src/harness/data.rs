//! Turning environment ids into datasets, one seeded stream per (role, env).

use std::path::Path;
use std::sync::Arc;

use crate::datagen::{
    colorize_mnist, generate_cmnist_synthetic, generate_example2, load_idx, CmnistParams, LabeledDataset, RawDigits,
};
use crate::error::{Error, Result};
use crate::harness::config::{EnvKind, ExperimentConfig, Family};
use crate::numerics::{derive_seed, Rng};
use crate::scalar::Scalar;

/// Dataset factory for one experiment; digits are loaded once and shared.
#[derive(Debug, Clone)]
pub struct DataSource<T> {
    cfg: ExperimentConfig,
    digits: Option<Arc<RawDigits<T>>>,
}

impl<T: Scalar> DataSource<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let digits = load_digits(
            cfg.family,
            cfg.data.idx_images.as_deref(),
            cfg.data.idx_labels.as_deref(),
        )?
        .map(Arc::new);
        Ok(Self {
            cfg: cfg.clone(),
            digits,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// `n` rows of `env` for a given role (`train`, `test`, `select`, ...).
    /// The stream depends only on `(seed, role, env)`.
    pub fn sample(&self, env: &str, role: &str, n: usize, seed: u64) -> Result<LabeledDataset<T>> {
        let mut rng = Rng::new(derive_seed(seed, &format!("data/{role}/{env}")));
        let kind = self.cfg.env_kind(env)?;
        generate_env(&kind, env, n, self.digits.as_deref(), &mut rng)
    }

    /// `n` rows from each environment, concatenated.
    pub fn pooled(&self, envs: &[String], role: &str, n: usize, seed: u64) -> Result<LabeledDataset<T>> {
        let parts = envs
            .iter()
            .map(|e| self.sample(e, role, n, seed))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = parts.iter().collect();
        LabeledDataset::concat(&refs, envs.join("+"))
    }
}

/// One dataset of environment `kind`; Colored-MNIST environments use real
/// digits when `digits` is given (drawn without replacement) and the
/// synthetic generator otherwise.
pub fn generate_env<T: Scalar>(
    kind: &EnvKind,
    env_id: &str,
    n: usize,
    digits: Option<&RawDigits<T>>,
    rng: &mut Rng,
) -> Result<LabeledDataset<T>> {
    match (kind, digits) {
        (EnvKind::Example2(p), _) => generate_example2(p, env_id, n, rng),
        (EnvKind::Cmnist(e), None) => {
            let mut ds = generate_cmnist_synthetic(&CmnistParams::default(), *e, n, rng)?;
            ds.env_id = env_id.to_string();
            Ok(ds)
        }
        (EnvKind::Cmnist(e), Some(raw)) => {
            let total = raw.labels.len();
            if n > total {
                return Err(Error::InvalidParameter(format!("{n} digits requested from {total}")));
            }
            let idx = rng.sample_indices(total, n);
            let subset = RawDigits {
                pixels: raw.pixels.select_rows(&idx),
                labels: idx.iter().map(|&i| raw.labels[i]).collect(),
                rows: raw.rows,
                cols: raw.cols,
            };
            let mut ds = colorize_mnist(&subset, *e, CmnistParams::default().label_flip, rng)?;
            ds.env_id = env_id.to_string();
            Ok(ds)
        }
    }
}

/// Loads the IDX pair when `family` needs real digits.
pub fn load_digits<T: Scalar>(
    family: Family,
    images: Option<&Path>,
    labels: Option<&Path>,
) -> Result<Option<RawDigits<T>>> {
    if family != Family::CmnistIdx {
        return Ok(None);
    }
    match (images, labels) {
        (Some(i), Some(l)) => Ok(Some(load_idx(i, l)?)),
        _ => Err(Error::Config("cmnist-idx needs IDX image and label paths".into())),
    }
}
