//! The cow/camel linear unit test (Example 2) and its rotated variant (2S).
//!
//! Each row draws a cell `j` from
//! `Categorical(p·s, (1−p)·s, p·(1−s), (1−p)·(1−s))`: cells 1–2 are cows, 3–4
//! camels, cells 1 and 4 are on grass and 2–3 on sand. The animal block is
//! `(N(0, 0.1·I) ± 1) · ν_animal` and the background block
//! `(N(0, 0.1·I) ± 1) · ν_background`; `N(0, 0.1)` is read as per-coordinate
//! variance 0.1. The means are the literal constant vectors `μ_cow = 1`,
//! `μ_camel = −1`, `μ_grass = 1`, `μ_sand = −1`. The label is
//! `1[1ᵀ z_inv > 0]` and `x = S·(z_inv, z_spu)`.
//!
//! Both blocks satisfy the "support contains a circle around zero" condition
//! only approximately: each is a two-cluster Gaussian mixture with full support.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Latents};
use crate::error::{Error, Result};
use crate::numerics::{random_orthogonal, Matrix, Rng};
use crate::scalar::Scalar;
use crate::scm::{
    mix, BaseLatents, EnvironmentSpec, GraphKind, Intervention, InterventionKind, InterventionTarget, Mixing, ScmSpec,
    SignedBlock,
};

/// `(id, p, s)` of the three standard environments.
pub const EXAMPLE2_ENVIRONMENTS: [(&str, f64, f64); 3] = [("E0", 0.95, 0.3), ("E1", 0.97, 0.5), ("E2", 0.99, 0.7)];

const NOISE_VAR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpuriousMode {
    /// Background follows its structural assignment.
    #[default]
    Observational,
    /// Background is re-drawn from its marginal, independent of everything else.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example2Params {
    pub d_inv: usize,
    pub d_spu: usize,
    /// Background/animal agreement probability.
    pub p_e: f64,
    /// Cow probability.
    pub s_e: f64,
    pub scramble: bool,
    pub nu_animal: f64,
    pub nu_background: f64,
    /// Label flip probability; the background then follows the noisy label.
    pub label_noise: f64,
    pub spurious: SpuriousMode,
    /// Seed of the rotation `S`; environments sharing it share `S`.
    pub mixing_seed: u64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            d_inv: 5,
            d_spu: 5,
            p_e: 0.95,
            s_e: 0.3,
            scramble: false,
            nu_animal: 1e-2,
            nu_background: 1.0,
            label_noise: 0.0,
            spurious: SpuriousMode::Observational,
            mixing_seed: 0,
        }
    }
}

impl Example2Params {
    /// One of `E0`, `E1`, `E2`.
    pub fn standard(env: &str) -> Result<Self> {
        let (_, p, s) = EXAMPLE2_ENVIRONMENTS
            .iter()
            .find(|(id, _, _)| *id == env)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown Example 2 environment {env:?}")))?;
        Ok(Self {
            p_e: *p,
            s_e: *s,
            ..Self::default()
        })
    }

    /// Parameters for environments beyond the third: `p ~ U(0.9, 1)`, `s ~ U(0.3, 0.7)`.
    pub fn extra_environment(rng: &mut Rng) -> Self {
        Self {
            p_e: rng.uniform_range(0.9, 1.0),
            s_e: rng.uniform_range(0.3, 0.7),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_e", self.p_e), ("s_e", self.s_e)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p}")));
            }
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::InvalidParameter(format!("label_noise = {}", self.label_noise)));
        }
        if self.d_inv == 0 || self.d_spu == 0 {
            return Err(Error::InvalidParameter("empty latent block".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d_inv + self.d_spu
    }

    pub fn mixing<T: Scalar>(&self) -> Result<Mixing<T>> {
        if self.scramble {
            Ok(Mixing::Orthogonal(random_orthogonal(
                self.dim(),
                &mut Rng::new(self.mixing_seed),
            )?))
        } else {
            Ok(Mixing::Identity)
        }
    }

    /// P(label = 1).
    fn p_label(&self) -> f64 {
        let q = self.label_noise;
        self.s_e * (1.0 - q) + (1.0 - self.s_e) * q
    }

    /// Marginal probability of grass.
    pub fn p_grass(&self) -> f64 {
        let py = self.p_label();
        py * self.p_e + (1.0 - py) * (1.0 - self.p_e)
    }

    /// The same distribution expressed as a generic latent SCM.
    pub fn environment_spec<T: Scalar>(&self, id: &str) -> Result<EnvironmentSpec<T>> {
        self.validate()?;
        let scm = ScmSpec::new(
            ScmSpec::<T>::uniform_direction(self.d_inv),
            self.d_spu,
            self.label_noise,
            GraphKind::Fiif,
            self.mixing()?,
        )?;
        let intervention = match self.spurious {
            SpuriousMode::Observational => Intervention::none(),
            SpuriousMode::Independent => Intervention::on(
                InterventionTarget::Spurious,
                InterventionKind::IndependentBernoulli(self.p_grass()),
            ),
        };
        Ok(EnvironmentSpec {
            id: id.to_string(),
            scm: Arc::new(scm),
            intervention,
            base: BaseLatents {
                true_block: SignedBlock {
                    dim: self.d_inv,
                    scale: self.nu_animal,
                    noise_var: NOISE_VAR,
                },
                spu_block: SignedBlock {
                    dim: self.d_spu,
                    scale: self.nu_background,
                    noise_var: NOISE_VAR,
                },
                p_true_positive: self.s_e,
                spu_agreement: self.p_e,
            },
        })
    }
}

pub fn generate_example2<T: Scalar>(
    params: &Example2Params,
    env_id: &str,
    n: usize,
    rng: &mut Rng,
) -> Result<LabeledDataset<T>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (p, s) = (params.p_e, params.s_e);
    let cells = [p * s, (1.0 - p) * s, p * (1.0 - s), (1.0 - p) * (1.0 - s)];
    let inv = SignedBlock {
        dim: params.d_inv,
        scale: params.nu_animal,
        noise_var: NOISE_VAR,
    };
    let spu = SignedBlock {
        dim: params.d_spu,
        scale: params.nu_background,
        noise_var: NOISE_VAR,
    };
    let p_grass = params.p_grass();
    let mut z_inv = Matrix::<T>::zeros(n, params.d_inv);
    let mut z_spu = Matrix::<T>::zeros(n, params.d_spu);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.categorical(&cells)?;
        let cow = j < 2;
        // cells 1 and 3 pair cow/grass and camel/sand
        let agrees = j % 2 == 0;
        inv.sample_row(cow, rng, z_inv.row_mut(i));
        let clean = z_inv.row(i).iter().fold(T::zero(), |a, &v| a + v) > T::zero();
        let label = clean ^ (params.label_noise > 0.0 && rng.bernoulli(params.label_noise));
        let grass = match params.spurious {
            SpuriousMode::Observational => {
                let parent = if params.label_noise > 0.0 { label } else { cow };
                parent == agrees
            }
            SpuriousMode::Independent => rng.bernoulli(p_grass),
        };
        spu.sample_row(grass, rng, z_spu.row_mut(i));
        y.push(label as u8);
    }
    let scm = ScmSpec::new(
        ScmSpec::<T>::uniform_direction(params.d_inv),
        params.d_spu,
        params.label_noise,
        GraphKind::Fiif,
        params.mixing()?,
    )?;
    let x = mix(&z_inv, &z_spu, &scm)?;
    LabeledDataset::new(x, y, 2, env_id, Some(Latents { z_true: z_inv, z_spu }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{sample_latent, unmix};

    fn binom_3sigma(p: f64, n: usize) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn standard_environments() {
        let e0 = Example2Params::standard("E0").unwrap();
        assert_eq!((e0.p_e, e0.s_e), (0.95, 0.3));
        let e1 = Example2Params::standard("E1").unwrap();
        assert_eq!((e1.p_e, e1.s_e), (0.97, 0.5));
        let e2 = Example2Params::standard("E2").unwrap();
        assert_eq!((e2.p_e, e2.s_e), (0.99, 0.7));
        assert!(Example2Params::standard("E9").is_err());
    }

    #[test]
    fn cow_fraction_within_binomial_bound() {
        for (id, _, s) in EXAMPLE2_ENVIRONMENTS {
            let params = Example2Params::standard(id).unwrap();
            for seed in 0..5 {
                let ds: LabeledDataset<f64> = generate_example2(&params, id, 1000, &mut Rng::new(seed)).unwrap();
                let lat = ds.latents.as_ref().unwrap();
                let cows = (0..ds.len()).filter(|&i| lat.z_true[(i, 0)] > 0.0).count();
                assert!((cows as f64 / 1000.0 - s).abs() <= binom_3sigma(s, 1000));
            }
        }
    }

    #[test]
    fn mean_sign_of_invariant_block_predicts_label() {
        let params = Example2Params::default();
        let ds: LabeledDataset<f64> = generate_example2(&params, "E0", 5000, &mut Rng::new(3)).unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let mean: f64 = ds.x.row(i)[..5].iter().sum::<f64>() / 5.0;
                (mean > 0.0) as u8 == ds.y[i]
            })
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.99);
    }

    #[test]
    fn spurious_block_dominates_variance() {
        let ds: LabeledDataset<f64> =
            generate_example2(&Example2Params::standard("E1").unwrap(), "E1", 5000, &mut Rng::new(4)).unwrap();
        let var = |j: usize| {
            let col: Vec<f64> = (0..ds.len()).map(|i| ds.x[(i, j)]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64
        };
        let inv: f64 = (0..5).map(var).sum::<f64>() / 5.0;
        let spu: f64 = (5..10).map(var).sum::<f64>() / 5.0;
        let ratio = spu / inv;
        assert!(ratio > 3e3 && ratio < 3e4, "ratio {ratio}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let params = Example2Params {
            scramble: true,
            ..Example2Params::default()
        };
        let a: LabeledDataset<f64> = generate_example2(&params, "E0", 300, &mut Rng::new(9)).unwrap();
        let b: LabeledDataset<f64> = generate_example2(&params, "E0", 300, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scrambled_unmixes_to_plain_latents() {
        let plain = Example2Params::default();
        let rotated = Example2Params {
            scramble: true,
            mixing_seed: 17,
            ..plain.clone()
        };
        let a: LabeledDataset<f64> = generate_example2(&plain, "E0", 400, &mut Rng::new(1)).unwrap();
        let b: LabeledDataset<f64> = generate_example2(&rotated, "E0", 400, &mut Rng::new(1)).unwrap();
        assert_eq!(a.y, b.y);
        let scm = rotated.environment_spec::<f64>("E0").unwrap().scm;
        assert!(unmix(&b.x, &scm).unwrap().max_abs_diff(&a.x) <= 1e-8);
    }

    #[test]
    fn independent_background_breaks_correlation() {
        let params = Example2Params {
            spurious: SpuriousMode::Independent,
            ..Example2Params::standard("E0").unwrap()
        };
        let n = 50_000;
        let ds: LabeledDataset<f64> = generate_example2(&params, "E0-test", n, &mut Rng::new(2)).unwrap();
        let agree = (0..n).filter(|&i| (ds.x[(i, 5)] > 0.0) as u8 == ds.y[i]).count() as f64 / n as f64;
        // P(agree) = P(cow)P(grass) + P(camel)P(sand) under independence
        let pg = params.p_grass();
        let expected = 0.3 * pg + 0.7 * (1.0 - pg);
        assert!((agree - expected).abs() <= binom_3sigma(expected, n));
        let grass = (0..n).filter(|&i| ds.x[(i, 5)] > 0.0).count() as f64 / n as f64;
        assert!((grass - 0.32).abs() <= binom_3sigma(0.32, n));
    }

    #[test]
    fn label_noise_rate_and_fiif_background() {
        let params = Example2Params {
            label_noise: 0.1,
            ..Example2Params::standard("E1").unwrap()
        };
        let n = 50_000;
        let ds: LabeledDataset<f64> = generate_example2(&params, "E1", n, &mut Rng::new(5)).unwrap();
        let lat = ds.latents.as_ref().unwrap();
        let flipped = (0..n).filter(|&i| (lat.z_true[(i, 0)] > 0.0) as u8 != ds.y[i]).count() as f64 / n as f64;
        assert!((flipped - 0.1).abs() <= binom_3sigma(0.1, n));
        let bg_agrees_label = (0..n).filter(|&i| (ds.x[(i, 5)] > 0.0) as u8 == ds.y[i]).count() as f64 / n as f64;
        assert!((bg_agrees_label - 0.97).abs() <= binom_3sigma(0.97, n));
    }

    #[test]
    fn matches_generic_scm_sampler_in_distribution() {
        let params = Example2Params::standard("E0").unwrap();
        let env = params.environment_spec::<f64>("E0").unwrap();
        let n = 40_000;
        let lat = sample_latent(&env, n, &mut Rng::new(11)).unwrap();
        let ds: LabeledDataset<f64> = generate_example2(&params, "E0", n, &mut Rng::new(12)).unwrap();
        let frac = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).count() as f64 / n as f64;
        let scm_cells = [
            frac(&|i| lat.y[i] == 1 && lat.spu_sign[i] == 1),
            frac(&|i| lat.y[i] == 1 && lat.spu_sign[i] == 0),
            frac(&|i| lat.y[i] == 0 && lat.spu_sign[i] == 0),
        ];
        let gen_cells = [
            frac(&|i| ds.y[i] == 1 && ds.x[(i, 5)] > 0.0),
            frac(&|i| ds.y[i] == 1 && ds.x[(i, 5)] < 0.0),
            frac(&|i| ds.y[i] == 0 && ds.x[(i, 5)] < 0.0),
        ];
        for (a, b) in scm_cells.iter().zip(gen_cells) {
            // two independent binomial proportions
            assert!((a - b).abs() <= 2.0 * binom_3sigma(a.max(0.01), n));
        }
    }

    #[test]
    fn extra_environment_ranges() {
        let mut rng = Rng::new(0);
        for _ in 0..100 {
            let p = Example2Params::extra_environment(&mut rng);
            assert!((0.9..1.0).contains(&p.p_e));
            assert!((0.3..0.7).contains(&p.s_e));
        }
    }
}
