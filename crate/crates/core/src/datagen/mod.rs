//! Dataset builders and the on-disk dataset format.

mod cmnist;
mod example2;
mod idx;
mod io;

pub use cmnist::{colorize_mnist, generate_cmnist_synthetic, CmnistParams, CMNIST_ENVIRONMENTS};
pub use example2::{generate_example2, Example2Params, SpuriousMode, EXAMPLE2_ENVIRONMENTS};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, RawDigits};
pub use io::{dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::scalar::Scalar;

/// Latent provenance kept alongside generated data for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latents<T> {
    pub z_true: Matrix<T>,
    pub z_spu: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<u8>,
    pub num_classes: u8,
    pub env_id: String,
    pub latents: Option<Latents<T>>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        x: Matrix<T>,
        y: Vec<u8>,
        num_classes: u8,
        env_id: impl Into<String>,
        latents: Option<Latents<T>>,
    ) -> Result<Self> {
        let ds = Self {
            x,
            y,
            num_classes,
            env_id: env_id.into(),
            latents,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.x.rows() != self.y.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                self.x.rows(),
                self.y.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidParameter(format!("{} classes", self.num_classes)));
        }
        if let Some(&bad) = self.y.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} with {} classes",
                self.num_classes
            )));
        }
        if !self.x.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if let Some(l) = &self.latents {
            if l.z_true.rows() != self.len() || l.z_spu.rows() != self.len() {
                return Err(Error::Dimension("latent rows do not match dataset".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
            env_id: self.env_id.clone(),
            latents: self.latents.as_ref().map(|l| Latents {
                z_true: l.z_true.select_rows(idx),
                z_spu: l.z_spu.select_rows(idx),
            }),
        }
    }

    /// Row-wise concatenation; latents are kept only if every part has them
    /// with matching widths.
    pub fn concat(parts: &[&Self], env_id: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        let mut x = Matrix::zeros(0, first.dim());
        let mut y = Vec::new();
        for p in parts {
            if p.num_classes != first.num_classes {
                return Err(Error::InvalidParameter("class counts differ".into()));
            }
            x = x.vstack(&p.x)?;
            y.extend_from_slice(&p.y);
        }
        let latents = parts
            .iter()
            .map(|p| p.latents.as_ref())
            .collect::<Option<Vec<_>>>()
            .and_then(|ls| {
                let (m, o) = (ls[0].z_true.cols(), ls[0].z_spu.cols());
                if ls.iter().any(|l| l.z_true.cols() != m || l.z_spu.cols() != o) {
                    return None;
                }
                let mut zt = Matrix::zeros(0, m);
                let mut zs = Matrix::zeros(0, o);
                for l in ls {
                    zt = zt.vstack(&l.z_true).ok()?;
                    zs = zs.vstack(&l.z_spu).ok()?;
                }
                Some(Latents { z_true: zt, z_spu: zs })
            });
        Self::new(x, y, first.num_classes, env_id, latents)
    }

    /// Random split into `(train, held_out)` with `round(frac · n)` held-out rows.
    pub fn split(&self, held_out_frac: f64, rng: &mut Rng) -> (Self, Self) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let k = ((held_out_frac * n as f64).round() as usize).min(n.saturating_sub(1));
        let (held, rest) = idx.split_at(k);
        (self.select(rest), self.select(held))
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes as usize];
        for &y in &self.y {
            c[y as usize] += 1;
        }
        c
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            x: self.x.cast(),
            y: self.y.clone(),
            num_classes: self.num_classes,
            env_id: self.env_id.clone(),
            latents: self.latents.as_ref().map(|l| Latents {
                z_true: l.z_true.cast(),
                z_spu: l.z_spu.cast(),
            }),
        }
    }
}
