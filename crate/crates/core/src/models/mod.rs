//! Featurizer + linear classifier with explicit forward/backward passes.

mod checkpoint;
mod optim;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use optim::{Optimizer, OptimizerKind};

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
        }
    }

    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    ZeroOne,
}

/// Layer sizes: `input → hidden… → classes`. No hidden layers means the
/// featurizer is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn linear(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: Vec::new(),
            classes,
            activation: Activation::Identity,
        }
    }

    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter(format!("{} classes", self.classes)));
        }
        if self.input == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    /// `out × in`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
            activation,
        }
    }

    pub fn input(&self) -> usize {
        self.weights.cols()
    }

    pub fn output(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activation `x Wᵀ + b`.
    fn affine(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut z = x.matmul_t(&self.weights)?;
        for i in 0..z.rows() {
            for (v, &b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// A model `f ∘ φ`; also used as the gradient container, since gradients have
/// exactly the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<T> {
    pub featurizer: Vec<Dense<T>>,
    pub classifier: Dense<T>,
}

impl<T: Scalar> Model<T> {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let w = arch.widths();
        let featurizer = w
            .windows(2)
            .take(w.len() - 2)
            .map(|p| Dense::zeros(p[0], p[1], arch.activation))
            .collect();
        let classifier = Dense::zeros(w[w.len() - 2], arch.classes, Activation::Identity);
        Ok(Self { featurizer, classifier })
    }

    /// Weights `N(0, 2/fan_in)`, biases zero.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        for layer in m.layers_mut() {
            let sd = (2.0 / layer.input() as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = T::of(sd * rng.normal());
            }
        }
        Ok(m)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input: self.input_dim(),
            hidden: self.featurizer.iter().map(Dense::output).collect(),
            classes: self.classes(),
            activation: self.featurizer.first().map_or(Activation::Identity, |l| l.activation),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.featurizer.first().unwrap_or(&self.classifier).input()
    }

    pub fn classes(&self) -> usize {
        self.classifier.output()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.featurizer.iter().chain(std::iter::once(&self.classifier))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.featurizer.iter_mut().chain(std::iter::once(&mut self.classifier))
    }

    /// Parameters in checkpoint order: per layer, weights row-major then bias.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers().flat_map(|l| l.weights.data().iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers_mut()
            .flat_map(|l| l.weights.data_mut().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.weights.data().len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Featurizer output `φ(x)`.
    pub fn features(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.featurizer {
            let act = layer.activation;
            a = layer.affine(&a)?.map(|v| act.apply(v));
        }
        Ok(a)
    }

    /// Logits `n × K`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let logits = self.classifier.affine(&self.features(x)?)?;
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(logits)
    }

    /// Argmax class per row; ties go to the lower index.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<u8>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    /// Mean cross-entropy and its gradient.
    pub fn loss_and_grad(&self, x: &Matrix<T>, y: &[u8]) -> Result<(T, Model<T>)> {
        self.check_input(x)?;
        check_labels(x, y, self.classes())?;
        let n = x.rows();
        let mut pre = Vec::with_capacity(self.featurizer.len());
        let mut acts = vec![x.clone()];
        for layer in &self.featurizer {
            let z = layer.affine(acts.last().unwrap())?;
            let act = layer.activation;
            acts.push(z.map(|v| act.apply(v)));
            pre.push(z);
        }
        let logits = self.classifier.affine(acts.last().unwrap())?;
        let (risk, mut delta) = cross_entropy_with_grad(&logits, y)?;
        let inv_n = T::one() / T::of(n as f64);
        for v in delta.data_mut() {
            *v *= inv_n;
        }

        let mut grads = Model::zeros(&self.architecture())?;
        let layers: Vec<&Dense<T>> = self.layers().collect();
        let mut grad_layers: Vec<&mut Dense<T>> = grads.layers_mut().collect();
        for l in (0..layers.len()).rev() {
            let input = &acts[l];
            let g = &mut grad_layers[l];
            g.weights = delta.transpose().matmul(input)?;
            for i in 0..delta.rows() {
                for (b, &d) in g.bias.iter_mut().zip(delta.row(i)) {
                    *b += d;
                }
            }
            if l == 0 {
                break;
            }
            let mut back = delta.matmul(&layers[l].weights)?;
            let below = layers[l - 1];
            for (v, &z) in back.data_mut().iter_mut().zip(pre[l - 1].data()) {
                *v *= below.activation.derivative(z);
            }
            delta = back;
        }
        if !risk.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!("loss {risk} or its gradient")));
        }
        Ok((risk, grads))
    }

    /// Empirical risk under `loss`.
    pub fn risk(&self, x: &Matrix<T>, y: &[u8], loss: LossKind) -> Result<f64> {
        check_labels(x, y, self.classes())?;
        match loss {
            LossKind::CrossEntropy => {
                let logits = self.forward(x)?;
                Ok(cross_entropy_with_grad(&logits, y)?.0.to_f64_lossy())
            }
            LossKind::ZeroOne => {
                let pred = self.predict(x)?;
                let wrong = pred.iter().zip(y).filter(|(p, t)| p != t).count();
                Ok(wrong as f64 / y.len().max(1) as f64)
            }
        }
    }

    /// Zero-one error on a dataset.
    pub fn evaluate(&self, ds: &LabeledDataset<T>) -> Result<f64> {
        self.risk(&ds.x, &ds.y, LossKind::ZeroOne)
    }
}

fn check_labels<T: Scalar>(x: &Matrix<T>, y: &[u8], k: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!("{} rows vs {} labels", x.rows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c as usize >= k) {
        return Err(Error::InvalidParameter(format!("label {bad} with {k} classes")));
    }
    Ok(())
}

pub fn argmax_rows<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

/// Row-wise softmax, computed with the max subtracted.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Mean cross-entropy (log-sum-exp) and the per-row `softmax − onehot`.
fn cross_entropy_with_grad<T: Scalar>(logits: &Matrix<T>, y: &[u8]) -> Result<(T, Matrix<T>)> {
    let n = logits.rows();
    let mut total = T::zero();
    let mut delta = softmax(logits);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let t = y[i] as usize;
        total += lse - row[t];
        delta[(i, t)] -= T::one();
    }
    let risk = total / T::of(n.max(1) as f64);
    if !risk.is_finite() {
        return Err(Error::NonFinite("cross-entropy".into()));
    }
    Ok((risk, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn data(n: usize, d: usize, k: u8, seed: u64) -> (Matrix<f64>, Vec<u8>) {
        let mut rng = Rng::new(seed);
        let x = Matrix::random_normal(n, d, &mut rng);
        let y = (0..n).map(|i| (i % k as usize) as u8).collect();
        (x, y)
    }

    #[test]
    fn zero_model_uniform_softmax_and_ln2() {
        let m = Model::<f64>::zeros(&Architecture::mlp(3, &[4], 2)).unwrap();
        let (x, y) = data(7, 3, 2, 0);
        let logits = m.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let p = softmax(&logits);
        assert!(p.data().iter().all(|&v| v == 0.5));
        let (risk, _) = m.loss_and_grad(&x, &y).unwrap();
        assert_eq!(risk, std::f64::consts::LN_2);
    }

    #[test]
    fn linear_model_is_affine() {
        let mut m = Model::<f64>::init(&Architecture::linear(3, 2), &mut Rng::new(1)).unwrap();
        m.classifier.bias = vec![0.5, -0.25];
        let (x, _) = data(4, 3, 2, 2);
        let logits = m.forward(&x).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                let expect: f64 =
                    (0..3).map(|j| x[(i, j)] * m.classifier.weights[(k, j)]).sum::<f64>() + m.classifier.bias[k];
                assert!((logits[(i, k)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn duplicated_rows_give_duplicated_logits() {
        let m = Model::<f64>::init(&Architecture::mlp(4, &[8, 3], 3), &mut Rng::new(2)).unwrap();
        let (x, _) = data(1, 4, 2, 3);
        let x2 = x.vstack(&x).unwrap();
        let l = m.forward(&x2).unwrap();
        assert_eq!(l.row(0), l.row(1));
    }

    #[test]
    fn dimension_mismatch() {
        let m = Model::<f64>::zeros(&Architecture::linear(3, 2)).unwrap();
        let (x, y) = data(4, 5, 2, 0);
        assert!(matches!(m.forward(&x), Err(Error::Dimension(_))));
        assert!(matches!(m.loss_and_grad(&x, &y), Err(Error::Dimension(_))));
        let (x, _) = data(4, 3, 2, 0);
        assert!(m.loss_and_grad(&x, &[0, 1, 2, 0]).is_err());
    }

    #[test]
    fn saturated_separable_risk_small() {
        let mut m = Model::<f64>::zeros(&Architecture::linear(1, 2)).unwrap();
        m.classifier.weights = Matrix::from_rows(&[vec![-50.0], vec![50.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![2.0], vec![-0.5]]).unwrap();
        let y = vec![1, 0, 1, 0];
        let (risk, _) = m.loss_and_grad(&x, &y).unwrap();
        assert!(risk <= 1e-3);
        assert_eq!(m.risk(&x, &y, LossKind::ZeroOne).unwrap(), 0.0);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let mut m = Model::<f64>::zeros(&Architecture::linear(1, 2)).unwrap();
        m.classifier.weights = Matrix::from_rows(&[vec![-1e4], vec![1e4]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let (risk, _) = m.loss_and_grad(&x, &[1, 0]).unwrap();
        assert!((risk - 1e4).abs() < 1e-6);
    }

    #[test]
    fn constant_predictor_on_balanced_labels() {
        let mut m = Model::<f64>::zeros(&Architecture::linear(2, 2)).unwrap();
        m.classifier.bias = vec![1.0, 0.0];
        let (x, y) = data(100, 2, 2, 4);
        assert_eq!(m.risk(&x, &y, LossKind::ZeroOne).unwrap(), 0.5);
    }

    #[test]
    fn ties_break_low() {
        let logits = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![0, 1]);
    }

    #[test]
    fn f32_model_runs() {
        let m = Model::<f32>::init(&Architecture::mlp(3, &[5], 2), &mut Rng::new(0)).unwrap();
        let x = Matrix::<f32>::random_normal(6, 3, &mut Rng::new(1));
        let (risk, g) = m.loss_and_grad(&x, &[0, 1, 0, 1, 0, 1]).unwrap();
        assert!(risk.is_finite());
        assert_eq!(g.num_params(), m.num_params());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
            let m = Matrix::new(4, 3, vals).unwrap();
            let p = softmax(&m);
            for i in 0..4 {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(p.row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }

        #[test]
        fn argmax_invariant_under_monotone_maps(vals in prop::collection::vec(-5.0f64..5.0, 20)) {
            let m = Matrix::new(10, 2, vals).unwrap();
            let base = argmax_rows(&m);
            prop_assert_eq!(&base, &argmax_rows(&m.map(|v| v.exp())));
            prop_assert_eq!(&base, &argmax_rows(&m.map(|v| 3.0 * v + 1.0)));
            prop_assert_eq!(&base, &argmax_rows(&m.map(|v| v.powi(3))));
        }
    }
}
