use std::io::Write;

use serde::{Deserialize, Serialize};

use super::buffer::{MatchBuffer, MatchedBatch, DEFAULT_CAPACITY, DEFAULT_THRESHOLD};
use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{Architecture, Model, Optimizer, OptimizerKind};
use crate::numerics::Rng;
use crate::scalar::Scalar;

/// Epoch-shuffled minibatches; a batch size at least `n` means full batch in
/// fixed row order.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: Rng,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, rng: Rng) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
            rng,
        };
        if s.batch == n {
            s.pos = 0;
        }
        s
    }

    fn next(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.batch == n {
            return self.order.clone();
        }
        if self.pos + self.batch > n {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Hooks fire every this many steps and after the last step.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 64,
            lr: 0.01,
            optimizer: OptimizerKind::Sgd,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidParameter(
                "steps, batch size and checkpoint interval must be positive".into(),
            ));
        }
        Ok(())
    }

    fn is_checkpoint(&self, step: usize, last: usize) -> bool {
        step.is_multiple_of(self.checkpoint_every) || step == last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Update the subnetwork and the main network in every step.
    Together,
    /// Train the subnetwork alone for `warm_steps`, freeze it, then train the
    /// main network for `steps`.
    WarmupFixed { warm_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmiConfig {
    pub strategy: Strategy,
    pub steps: usize,
    pub batch_size: usize,
    pub threshold: usize,
    pub buffer_capacity: usize,
    pub sub_lr: f64,
    pub main_lr: f64,
    pub optimizer: OptimizerKind,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for FmiConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Together,
            steps: 5000,
            batch_size: 64,
            threshold: DEFAULT_THRESHOLD,
            buffer_capacity: DEFAULT_CAPACITY,
            sub_lr: 0.01,
            main_lr: 0.01,
            optimizer: OptimizerKind::Sgd,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

/// One row per training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub sub_risk: Option<f64>,
    pub main_risk: Option<f64>,
    pub matched_rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn emissions(&self) -> usize {
        self.rows.iter().filter(|r| r.matched_rows > 0).count()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "step,sub_risk,main_risk,matched_rows")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                r.step,
                opt(r.sub_risk),
                opt(r.main_risk),
                r.matched_rows
            )?;
        }
        Ok(())
    }
}

/// Callbacks during [`train_fmi`].
pub trait FmiObserver<T> {
    fn checkpoint(&mut self, _step: usize, _main: &Model<T>, _sub: &Model<T>) -> Result<()> {
        Ok(())
    }

    fn matched(&mut self, _batch: &MatchedBatch) {}
}

impl<T> FmiObserver<T> for () {}

#[derive(Debug, Clone)]
pub struct FmiOutcome<T> {
    pub main: Model<T>,
    pub sub: Model<T>,
    pub trace: Trace,
}

fn check_train<T: Scalar>(train: &LabeledDataset<T>, arch: &Architecture) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if arch.input != train.dim() || arch.classes != train.num_classes as usize {
        return Err(Error::Dimension(format!(
            "architecture {}→{} for data with {} features and {} classes",
            arch.input,
            arch.classes,
            train.dim(),
            train.num_classes
        )));
    }
    Ok(())
}

/// Two-network matching loop.
///
/// Per step: draw a minibatch; (together) update the subnetwork on it; label
/// the batch with the subnetwork's argmax predictions (after its update);
/// push `(prediction, label)` into the match buffer; whenever the buffer can
/// emit a balanced batch, take one gradient step of the main network on it.
pub fn train_fmi<T: Scalar>(
    train: &LabeledDataset<T>,
    cfg: &FmiConfig,
    main_arch: &Architecture,
    sub_arch: &Architecture,
    observer: &mut dyn FmiObserver<T>,
) -> Result<FmiOutcome<T>> {
    check_train(train, main_arch)?;
    check_train(train, sub_arch)?;
    if cfg.steps == 0 || cfg.batch_size == 0 || cfg.checkpoint_every == 0 {
        return Err(Error::InvalidParameter(
            "steps, batch size and checkpoint interval must be positive".into(),
        ));
    }
    let root = Rng::new(cfg.seed);
    let mut sub = Model::init(sub_arch, &mut root.derive("fmi/sub-init"))?;
    let mut main = Model::init(main_arch, &mut root.derive("fmi/main-init"))?;
    let mut sub_opt = Optimizer::new(cfg.optimizer, cfg.sub_lr)?;
    let mut main_opt = Optimizer::new(cfg.optimizer, cfg.main_lr)?;
    let mut sampler = BatchSampler::new(train.len(), cfg.batch_size, root.derive("fmi/batches"));
    let mut match_rng = root.derive("fmi/match");
    let mut buffer = MatchBuffer::new(train.num_classes as usize, cfg.threshold, cfg.buffer_capacity)?;
    let mut trace = Trace::default();

    let warm = match cfg.strategy {
        Strategy::Together => 0,
        Strategy::WarmupFixed { warm_steps } => warm_steps,
    };
    for step in 1..=warm {
        let idx = sampler.next();
        let x = train.x.select_rows(&idx);
        let y: Vec<u8> = idx.iter().map(|&i| train.y[i]).collect();
        let (risk, g) = sub.loss_and_grad(&x, &y)?;
        sub_opt.step(&mut sub, &g)?;
        trace.rows.push(TraceRow {
            step,
            sub_risk: Some(risk.to_f64_lossy()),
            main_risk: None,
            matched_rows: 0,
        });
    }

    let last = warm + cfg.steps;
    for step in warm + 1..=last {
        let idx = sampler.next();
        let x = train.x.select_rows(&idx);
        let y: Vec<u8> = idx.iter().map(|&i| train.y[i]).collect();
        let sub_risk = if warm == 0 {
            let (risk, g) = sub.loss_and_grad(&x, &y)?;
            sub_opt.step(&mut sub, &g)?;
            Some(risk.to_f64_lossy())
        } else {
            None
        };
        let pred = sub.predict(&x)?;
        for ((&i, &p), &l) in idx.iter().zip(&pred).zip(&y) {
            buffer.push(i, p, l);
        }
        let mut row = TraceRow {
            step,
            sub_risk,
            main_risk: None,
            matched_rows: 0,
        };
        if let Some(batch) = buffer.matched_subsample(&mut match_rng) {
            let xm = train.x.select_rows(&batch.indices);
            let ym: Vec<u8> = batch.indices.iter().map(|&i| train.y[i]).collect();
            let (risk, g) = main.loss_and_grad(&xm, &ym)?;
            main_opt.step(&mut main, &g)?;
            row.main_risk = Some(risk.to_f64_lossy());
            row.matched_rows = batch.len();
            observer.matched(&batch);
        }
        trace.rows.push(row);
        let main_step = step - warm;
        if main_step % cfg.checkpoint_every == 0 || step == last {
            observer.checkpoint(main_step, &main, &sub)?;
        }
    }
    Ok(FmiOutcome { main, sub, trace })
}

/// Minibatch SGD on mean cross-entropy over the pooled data.
pub fn train_erm<T: Scalar>(
    train: &LabeledDataset<T>,
    cfg: &TrainConfig,
    arch: &Architecture,
    rng: &mut Rng,
    on_checkpoint: &mut dyn FnMut(usize, &Model<T>) -> Result<()>,
) -> Result<(Model<T>, Trace)> {
    check_train(train, arch)?;
    cfg.validate()?;
    let mut model = Model::init(arch, &mut rng.derive("erm/init"))?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr)?;
    let mut sampler = BatchSampler::new(train.len(), cfg.batch_size, rng.derive("erm/batches"));
    let mut trace = Trace::default();
    for step in 1..=cfg.steps {
        let idx = sampler.next();
        let x = train.x.select_rows(&idx);
        let y: Vec<u8> = idx.iter().map(|&i| train.y[i]).collect();
        let (risk, g) = model.loss_and_grad(&x, &y)?;
        opt.step(&mut model, &g)?;
        trace.rows.push(TraceRow {
            step,
            sub_risk: None,
            main_risk: Some(risk.to_f64_lossy()),
            matched_rows: 0,
        });
        if cfg.is_checkpoint(step, cfg.steps) {
            on_checkpoint(step, &model)?;
        }
    }
    Ok((model, trace))
}

/// ERM fitted directly on the evaluation environment; a reference row only.
pub fn train_oracle<T: Scalar>(
    test: &LabeledDataset<T>,
    cfg: &TrainConfig,
    arch: &Architecture,
    rng: &mut Rng,
    on_checkpoint: &mut dyn FnMut(usize, &Model<T>) -> Result<()>,
) -> Result<(Model<T>, Trace)> {
    train_erm(test, cfg, arch, rng, on_checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_example2, Example2Params};

    fn data() -> LabeledDataset<f64> {
        generate_example2(&Example2Params::default(), "E0", 300, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn sampler_covers_epoch() {
        let mut s = BatchSampler::new(10, 5, Rng::new(0));
        let mut seen: Vec<usize> = s.next().into_iter().chain(s.next()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let mut full = BatchSampler::new(4, 100, Rng::new(0));
        assert_eq!(full.next(), vec![0, 1, 2, 3]);
        assert_eq!(full.next(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn fmi_trace_is_deterministic() {
        let ds = data();
        let arch = Architecture::linear(10, 2);
        let cfg = FmiConfig {
            steps: 200,
            batch_size: 32,
            threshold: 4,
            sub_lr: 0.1,
            main_lr: 0.1,
            ..FmiConfig::default()
        };
        let a = train_fmi(&ds, &cfg, &arch, &arch, &mut ()).unwrap();
        let b = train_fmi(&ds, &cfg, &arch, &arch, &mut ()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.main, b.main);
        assert!(a.trace.emissions() > 0);
    }

    #[test]
    fn warmup_freezes_subnetwork() {
        struct Subs(Vec<Model<f64>>);
        impl FmiObserver<f64> for Subs {
            fn checkpoint(&mut self, _: usize, _: &Model<f64>, sub: &Model<f64>) -> Result<()> {
                self.0.push(sub.clone());
                Ok(())
            }
        }
        let ds = data();
        let arch = Architecture::linear(10, 2);
        let cfg = FmiConfig {
            strategy: Strategy::WarmupFixed { warm_steps: 50 },
            steps: 100,
            batch_size: 32,
            threshold: 2,
            checkpoint_every: 25,
            ..FmiConfig::default()
        };
        let mut subs = Subs(Vec::new());
        let out = train_fmi(&ds, &cfg, &arch, &arch, &mut subs).unwrap();
        assert_eq!(out.trace.rows.len(), 150);
        assert!(out.trace.rows[..50]
            .iter()
            .all(|r| r.sub_risk.is_some() && r.main_risk.is_none()));
        assert!(out.trace.rows[50..].iter().all(|r| r.sub_risk.is_none()));
        assert_eq!(subs.0.len(), 4);
        assert!(subs.0.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn erm_checkpoints_fire() {
        let ds = data();
        let cfg = TrainConfig {
            steps: 25,
            checkpoint_every: 10,
            ..TrainConfig::default()
        };
        let mut steps = Vec::new();
        train_erm(
            &ds,
            &cfg,
            &Architecture::linear(10, 2),
            &mut Rng::new(1),
            &mut |s, _| {
                steps.push(s);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(steps, vec![10, 20, 25]);
    }

    #[test]
    fn architecture_mismatch_is_an_error() {
        let ds = data();
        let r = train_erm(
            &ds,
            &TrainConfig::default(),
            &Architecture::linear(3, 2),
            &mut Rng::new(0),
            &mut |_, _| Ok(()),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn trace_csv_header() {
        let mut out = Vec::new();
        Trace {
            rows: vec![TraceRow {
                step: 1,
                sub_risk: Some(0.5),
                main_risk: None,
                matched_rows: 0,
            }],
        }
        .write_csv(&mut out)
        .unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.starts_with("step,sub_risk,main_risk,matched_rows\n1,5."));
    }
}
