//! Latent structural causal models for (Z_true, Z_spu, Y) and their
//! interventions.
//!
//! Latents are two "signed Gaussian" blocks: each row is
//! `(N(0, noise_var) + sign · 1) · scale`, where the sign bit of the true block
//! is exogenous and the sign bit of the spurious block is copied (with
//! agreement probability `spu_agreement`) from its parent: `Y` under
//! [`GraphKind::Fiif`], the noiseless label rule under [`GraphKind::Piif`].
//! Concatenation order is always `(z_true, z_spu)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    /// `Z_true → Y → Z_spu`.
    Fiif,
    /// `Z_true → Y`, `Z_true → Z_spu`.
    Piif,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Mixing<T> {
    Identity,
    Orthogonal(Matrix<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec<T> {
    pub m: usize,
    pub o: usize,
    pub w_true: Vec<f64>,
    pub q: f64,
    pub graph: GraphKind,
    pub mixing: Mixing<T>,
}

impl<T: Scalar> ScmSpec<T> {
    pub fn new(w_true: Vec<f64>, o: usize, q: f64, graph: GraphKind, mixing: Mixing<T>) -> Result<Self> {
        let spec = Self {
            m: w_true.len(),
            o,
            w_true,
            q,
            graph,
            mixing,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `w_true = 1/√m · 1`.
    pub fn uniform_direction(m: usize) -> Vec<f64> {
        vec![1.0 / (m as f64).sqrt(); m]
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("Z_true dimension is 0".into()));
        }
        if self.w_true.len() != self.m {
            return Err(Error::Dimension(format!(
                "w_true has {} entries, m = {}",
                self.w_true.len(),
                self.m
            )));
        }
        let norm = self.w_true.iter().map(|w| w * w).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("‖w_true‖ = {norm}, expected 1")));
        }
        if !(0.0..0.5).contains(&self.q) {
            return Err(Error::InvalidParameter(format!(
                "label noise q = {} not in [0, 0.5)",
                self.q
            )));
        }
        if let Mixing::Orthogonal(s) = &self.mixing {
            let d = self.m + self.o;
            if s.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "mixing is {}x{}, expected {d}x{d}",
                    s.rows(),
                    s.cols()
                )));
            }
            let dev = s
                .transpose()
                .matmul(s)?
                .max_abs_diff(&Matrix::identity(d))
                .to_f64_lossy();
            let tol = if std::mem::size_of::<T>() == 4 { 1e-5 } else { 1e-8 };
            if dev > tol {
                return Err(Error::InvalidParameter(format!(
                    "mixing is not orthogonal (max |SᵀS − I| = {dev:e})"
                )));
            }
        }
        Ok(())
    }

    /// Noiseless label rule `1[w_true · z > 0]`.
    pub fn label_rule(&self, z_true: &[T]) -> bool {
        let w: Vec<T> = self.w_true.iter().map(|&w| T::of(w)).collect();
        dot(&w, z_true) > T::zero()
    }
}

/// Per-block parameters of a signed Gaussian latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedBlock {
    pub dim: usize,
    pub scale: f64,
    pub noise_var: f64,
}

impl SignedBlock {
    pub fn sample_row<T: Scalar>(&self, positive: bool, rng: &mut Rng, out: &mut [T]) {
        let sd = self.noise_var.sqrt();
        let mean = if positive { 1.0 } else { -1.0 };
        for v in out.iter_mut().take(self.dim) {
            *v = T::of((sd * rng.normal() + mean) * self.scale);
        }
    }
}

/// Non-intervened latent distribution for one environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseLatents {
    pub true_block: SignedBlock,
    pub spu_block: SignedBlock,
    /// P(true sign = +).
    pub p_true_positive: f64,
    /// P(spurious sign = parent bit).
    pub spu_agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionTarget {
    Spurious,
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// Point mass at the given vector.
    Atomic(Vec<f64>),
    /// Sign drawn uniformly over the block's two clusters, independent of every other variable.
    Uniform,
    /// Sign positive with the given probability, independent of every other variable.
    IndependentBernoulli(f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Intervention {
    pub target: Option<InterventionTarget>,
    pub kind: Option<InterventionKind>,
}

impl Intervention {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn on(target: InterventionTarget, kind: InterventionKind) -> Self {
        Self {
            target: Some(target),
            kind: Some(kind),
        }
    }

    fn for_target(&self, t: InterventionTarget) -> Option<&InterventionKind> {
        match (self.target, &self.kind) {
            (Some(target), Some(kind)) if target == t => Some(kind),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec<T> {
    pub id: String,
    pub scm: Arc<ScmSpec<T>>,
    pub intervention: Intervention,
    pub base: BaseLatents,
}

impl<T: Scalar> EnvironmentSpec<T> {
    pub fn validate(&self) -> Result<()> {
        self.scm.validate()?;
        if self.base.true_block.dim != self.scm.m || self.base.spu_block.dim != self.scm.o {
            return Err(Error::Dimension(format!(
                "latent blocks ({}, {}) vs scm (m = {}, o = {})",
                self.base.true_block.dim, self.base.spu_block.dim, self.scm.m, self.scm.o
            )));
        }
        for p in [self.base.p_true_positive, self.base.spu_agreement] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("probability {p} out of [0, 1]")));
            }
        }
        match (self.intervention.target, &self.intervention.kind) {
            (Some(target), Some(InterventionKind::Atomic(v))) => {
                let want = match target {
                    InterventionTarget::True => self.scm.m,
                    InterventionTarget::Spurious => self.scm.o,
                };
                if v.len() != want {
                    return Err(Error::Dimension(format!(
                        "atomic value of length {} for a {want}-dimensional target",
                        v.len()
                    )));
                }
            }
            (Some(_), Some(InterventionKind::IndependentBernoulli(p))) if !(0.0..=1.0).contains(p) => {
                return Err(Error::InvalidParameter(format!("intervention probability {p}")));
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::InvalidParameter(
                    "intervention needs both target and kind".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub z_true: Matrix<T>,
    pub z_spu: Matrix<T>,
    pub y: Vec<u8>,
    /// Sign bit that generated each true row (1 = positive cluster).
    pub true_sign: Vec<u8>,
    /// Sign bit that generated each spurious row.
    pub spu_sign: Vec<u8>,
}

fn sample_block<T: Scalar>(
    kind: Option<&InterventionKind>,
    block: &SignedBlock,
    observational_sign: impl FnOnce(&mut Rng) -> bool,
    rng: &mut Rng,
    out: &mut [T],
) -> bool {
    match kind {
        Some(InterventionKind::Atomic(v)) => {
            for (o, &x) in out.iter_mut().zip(v) {
                *o = T::of(x);
            }
            v.iter().sum::<f64>() > 0.0
        }
        Some(InterventionKind::Uniform) => {
            let s = rng.bernoulli(0.5);
            block.sample_row(s, rng, out);
            s
        }
        Some(InterventionKind::IndependentBernoulli(p)) => {
            let s = rng.bernoulli(*p);
            block.sample_row(s, rng, out);
            s
        }
        None => {
            let s = observational_sign(rng);
            block.sample_row(s, rng, out);
            s
        }
    }
}

/// Draw `n` rows of `(Z_true, Z_spu, Y)` from an environment.
///
/// An intervention replaces the structural assignment of its target; variables
/// downstream of the target are then sampled from their usual mechanisms, and
/// the intervened variable no longer listens to its parents.
pub fn sample_latent<T: Scalar>(env: &EnvironmentSpec<T>, n: usize, rng: &mut Rng) -> Result<LatentSample<T>> {
    env.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let scm = &env.scm;
    let base = &env.base;
    let mut z_true = Matrix::zeros(n, scm.m);
    let mut z_spu = Matrix::zeros(n, scm.o);
    let mut y = Vec::with_capacity(n);
    let mut true_sign = Vec::with_capacity(n);
    let mut spu_sign = Vec::with_capacity(n);
    let true_iv = env.intervention.for_target(InterventionTarget::True);
    let spu_iv = env.intervention.for_target(InterventionTarget::Spurious);

    for i in 0..n {
        let ts = sample_block(
            true_iv,
            &base.true_block,
            |r| r.bernoulli(base.p_true_positive),
            rng,
            z_true.row_mut(i),
        );
        let clean = scm.label_rule(z_true.row(i));
        let label = clean ^ rng.bernoulli(scm.q);
        let parent = match scm.graph {
            GraphKind::Fiif => label,
            GraphKind::Piif => clean,
        };
        let ss = sample_block(
            spu_iv,
            &base.spu_block,
            |r| parent == r.bernoulli(base.spu_agreement),
            rng,
            z_spu.row_mut(i),
        );
        y.push(label as u8);
        true_sign.push(ts as u8);
        spu_sign.push(ss as u8);
    }
    Ok(LatentSample {
        z_true,
        z_spu,
        y,
        true_sign,
        spu_sign,
    })
}

/// Observed features `X = (z_true, z_spu) · Sᵀ`.
pub fn mix<T: Scalar>(z_true: &Matrix<T>, z_spu: &Matrix<T>, scm: &ScmSpec<T>) -> Result<Matrix<T>> {
    if z_true.rows() != z_spu.rows() {
        return Err(Error::Dimension(format!(
            "{} true rows vs {} spurious rows",
            z_true.rows(),
            z_spu.rows()
        )));
    }
    let z = z_true.hstack(z_spu)?;
    match &scm.mixing {
        Mixing::Identity => Ok(z),
        Mixing::Orthogonal(s) => z.matmul_t(s),
    }
}

/// Inverse of [`mix`]: returns the concatenated latents.
pub fn unmix<T: Scalar>(x: &Matrix<T>, scm: &ScmSpec<T>) -> Result<Matrix<T>> {
    match &scm.mixing {
        Mixing::Identity => Ok(x.clone()),
        Mixing::Orthogonal(s) => x.matmul(s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::random_orthogonal;

    fn block(dim: usize) -> SignedBlock {
        SignedBlock {
            dim,
            scale: 1.0,
            noise_var: 0.1,
        }
    }

    fn env(graph: GraphKind, q: f64, agreement: f64, iv: Intervention) -> EnvironmentSpec<f64> {
        let scm = ScmSpec::new(ScmSpec::<f64>::uniform_direction(3), 2, q, graph, Mixing::Identity).unwrap();
        EnvironmentSpec {
            id: "e".into(),
            scm: Arc::new(scm),
            intervention: iv,
            base: BaseLatents {
                true_block: block(3),
                spu_block: block(2),
                p_true_positive: 0.5,
                spu_agreement: agreement,
            },
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spec_validation() {
        assert!(ScmSpec::<f64>::new(vec![1.0, 1.0], 1, 0.0, GraphKind::Fiif, Mixing::Identity).is_err());
        assert!(ScmSpec::<f64>::new(vec![1.0], 1, 0.5, GraphKind::Fiif, Mixing::Identity).is_err());
        let bad = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(ScmSpec::<f64>::new(vec![1.0], 1, 0.0, GraphKind::Fiif, Mixing::Orthogonal(bad)).is_err());
    }

    #[test]
    fn atomic_true_forces_label() {
        let mut e = env(GraphKind::Fiif, 0.0, 0.9, Intervention::none());
        let mut scm = (*e.scm).clone();
        scm.w_true = vec![1.0, 0.0, 0.0];
        e.scm = Arc::new(scm);
        e.intervention = Intervention::on(InterventionTarget::True, InterventionKind::Atomic(vec![1.0, 0.0, 0.0]));
        let s = sample_latent(&e, 100, &mut Rng::new(1)).unwrap();
        assert!(s.y.iter().all(|&y| y == 1));
    }

    #[test]
    fn label_noise_rate() {
        let e = env(GraphKind::Fiif, 0.25, 0.9, Intervention::none());
        let n = 100_000;
        let s = sample_latent(&e, n, &mut Rng::new(2)).unwrap();
        let flips = (0..n)
            .filter(|&i| s.y[i] != e.scm.label_rule(s.z_true.row(i)) as u8)
            .count();
        assert!((flips as f64 / n as f64 - 0.25).abs() <= 0.006);
    }

    #[test]
    fn atomic_spurious_zero() {
        let e = env(
            GraphKind::Fiif,
            0.1,
            0.9,
            Intervention::on(InterventionTarget::Spurious, InterventionKind::Atomic(vec![0.0, 0.0])),
        );
        let s = sample_latent(&e, 500, &mut Rng::new(3)).unwrap();
        assert!(s.z_spu.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn atomic_dimension_mismatch() {
        let e = env(
            GraphKind::Fiif,
            0.1,
            0.9,
            Intervention::on(InterventionTarget::Spurious, InterventionKind::Atomic(vec![0.0])),
        );
        assert!(matches!(
            sample_latent(&e, 5, &mut Rng::new(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn uniform_intervention_decorrelates_spurious() {
        let n = 100_000;
        for graph in [GraphKind::Fiif, GraphKind::Piif] {
            let e = env(
                graph,
                0.1,
                0.95,
                Intervention::on(InterventionTarget::Spurious, InterventionKind::Uniform),
            );
            let s = sample_latent(&e, n, &mut Rng::new(4)).unwrap();
            let y: Vec<f64> = s.y.iter().map(|&v| v as f64).collect();
            for j in 0..2 {
                let col: Vec<f64> = (0..n).map(|i| s.z_spu[(i, j)]).collect();
                assert!(corr(&col, &y).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn noiseless_labels_ignore_spurious() {
        let e = env(GraphKind::Fiif, 0.0, 0.9, Intervention::none());
        let s = sample_latent(&e, 2000, &mut Rng::new(5)).unwrap();
        for i in 0..2000 {
            assert_eq!(s.y[i], e.scm.label_rule(s.z_true.row(i)) as u8);
        }
    }

    #[test]
    fn fiif_and_piif_parents() {
        let n = 50_000;
        let fiif = sample_latent(
            &env(GraphKind::Fiif, 0.2, 1.0, Intervention::none()),
            n,
            &mut Rng::new(6),
        )
        .unwrap();
        // Z_spu is a copy of Y under FIIF with full agreement.
        assert_eq!(fiif.spu_sign, fiif.y);
        let piif = sample_latent(
            &env(GraphKind::Piif, 0.2, 1.0, Intervention::none()),
            n,
            &mut Rng::new(6),
        )
        .unwrap();
        // ... and of the noiseless label under PIIF.
        assert_eq!(piif.spu_sign, piif.true_sign);
        let a: Vec<f64> = piif.spu_sign.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = piif.true_sign.iter().map(|&v| v as f64).collect();
        assert!(corr(&a, &b) > 0.9);
    }

    #[test]
    fn mixing_is_isometric_and_invertible() {
        let mut rng = Rng::new(8);
        let s: Matrix<f64> = random_orthogonal(5, &mut rng).unwrap();
        let mut e = env(GraphKind::Fiif, 0.0, 0.9, Intervention::none());
        let mut scm = (*e.scm).clone();
        scm.mixing = Mixing::Orthogonal(s);
        e.scm = Arc::new(scm);
        let lat = sample_latent(&e, 200, &mut rng).unwrap();
        let z = lat.z_true.hstack(&lat.z_spu).unwrap();
        let x = mix(&lat.z_true, &lat.z_spu, &e.scm).unwrap();
        for i in 0..200 {
            let nz = dot(z.row(i), z.row(i)).sqrt();
            let nx = dot(x.row(i), x.row(i)).sqrt();
            assert!((nz - nx).abs() <= 1e-8);
        }
        assert!(unmix(&x, &e.scm).unwrap().max_abs_diff(&z) <= 1e-8);
        let ident = env(GraphKind::Fiif, 0.0, 0.9, Intervention::none());
        assert_eq!(mix(&lat.z_true, &lat.z_spu, &ident.scm).unwrap(), z);
    }
}
