//! Seeded repeats of every method, model selection and evaluation.

use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::fmi::{train_erm, train_fmi, train_oracle, FmiObserver};
use crate::harness::config::{ExperimentConfig, Method, Metric, Precision, Selection};
use crate::harness::data::DataSource;
use crate::harness::report::{aggregate, Aggregate, AverageRow};
use crate::models::{Architecture, Model};
use crate::numerics::{derive_index_seed, derive_seed, Rng};
use crate::scalar::Scalar;
use crate::stats::gof_report_from_predictions;

/// Fraction of the training data held out for training-domain validation.
pub const HELD_OUT_FRACTION: f64 = 0.2;

/// One evaluated (method, environment, repeat) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub env: String,
    pub repeat: usize,
    pub seed: u64,
    pub selected_step: Option<usize>,
    pub error: Option<f64>,
    pub accuracy: Option<f64>,
    pub failure: Option<String>,
}

/// One goodness-of-fit p-value of a learned feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub step: usize,
    pub feature: Method,
    pub env: String,
    pub class: usize,
    /// Empty when the class could not be tested (no rows predicted, or a tiny expected cell).
    pub p: Option<f64>,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub repeat_seeds: Vec<u64>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment_id: String,
    pub metric: Metric,
    pub methods: Vec<Method>,
    pub envs: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<Aggregate>,
    pub averages: Vec<AverageRow>,
    pub gof: Vec<PValueRow>,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }
}

pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    derive_index_seed(master, repeat as u64)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Runs `f` on a pool of `jobs` threads, or rayon's global pool.
pub(crate) fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Run every method for every repeat.
///
/// Failures of individual runs are recorded in their rows and excluded from
/// the aggregates; only configuration problems abort the whole run.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunReport> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(cfg, jobs),
        Precision::F32 => run_typed::<f32>(cfg, jobs),
    }
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunReport> {
    let started = now_ms();
    let source = DataSource::<T>::new(cfg)?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    let work: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..cfg.repeats).map(move |r| (m, r)))
        .collect();
    let outputs: Vec<(Vec<ResultRow>, Vec<PValueRow>)> =
        with_pool(jobs, || work.par_iter().map(|&(m, r)| run_job(&source, m, r)).collect())?;
    let mut rows = Vec::new();
    let mut gof = Vec::new();
    for (r, g) in outputs {
        rows.extend(r);
        gof.extend(g);
    }
    let env_pos = |e: &str| cfg.test_envs.iter().position(|t| t == e).unwrap_or(usize::MAX);
    rows.sort_by_key(|a| (a.method, env_pos(&a.env), a.repeat));
    gof.sort_by(|a, b| {
        (a.repeat, a.feature, a.step, &a.env, a.class).cmp(&(b.repeat, b.feature, b.step, &b.env, b.class))
    });
    let (aggregates, averages) = aggregate(&rows, &methods, &cfg.test_envs);
    Ok(RunReport {
        experiment_id: cfg.id.clone(),
        metric: cfg.metric,
        methods,
        envs: cfg.test_envs.clone(),
        rows,
        aggregates,
        averages,
        gof,
        provenance: Provenance {
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            repeat_seeds: (0..cfg.repeats).map(|r| repeat_seed(cfg.master_seed, r)).collect(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        config: cfg.clone(),
    })
}

fn run_job<T: Scalar>(source: &DataSource<T>, method: Method, repeat: usize) -> (Vec<ResultRow>, Vec<PValueRow>) {
    let cfg = source.config();
    let seed = repeat_seed(cfg.master_seed, repeat);
    let result = match method {
        Method::Fmi | Method::Erm => run_learner(source, method, seed, repeat),
        Method::Oracle => run_oracle(source, seed, repeat).map(|rows| (rows, Vec::new())),
    };
    result.unwrap_or_else(|e| {
        log::warn!("{method} repeat {repeat} failed: {e}");
        let rows = cfg
            .test_envs
            .iter()
            .map(|env| ResultRow {
                method,
                env: env.clone(),
                repeat,
                seed,
                selected_step: None,
                error: None,
                accuracy: None,
                failure: Some(e.to_string()),
            })
            .collect();
        (rows, Vec::new())
    })
}

/// Keeps the checkpoint with the best mean accuracy; ties keep the earlier one.
pub(crate) struct Selector<'a, T> {
    sets: Vec<&'a LabeledDataset<T>>,
    best: Option<(usize, f64, Model<T>)>,
}

impl<'a, T: Scalar> Selector<'a, T> {
    pub(crate) fn new(sets: Vec<&'a LabeledDataset<T>>) -> Self {
        Self { sets, best: None }
    }

    pub(crate) fn offer(&mut self, step: usize, model: &Model<T>) -> Result<()> {
        let mut acc = 0.0;
        for s in &self.sets {
            acc += 1.0 - model.evaluate(s)?;
        }
        acc /= self.sets.len() as f64;
        if self.best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            self.best = Some((step, acc, model.clone()));
        }
        Ok(())
    }

    pub(crate) fn into_best(self) -> Result<(usize, Model<T>)> {
        self.best
            .map(|(s, _, m)| (s, m))
            .ok_or_else(|| Error::InvalidParameter("no checkpoint was offered".into()))
    }
}

/// Train one learner on pooled data, offering every checkpoint to `on_checkpoint`.
pub(crate) fn fit<T: Scalar>(
    cfg: &ExperimentConfig,
    method: Method,
    train: &LabeledDataset<T>,
    arch: &Architecture,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(usize, &Model<T>) -> Result<()>,
) -> Result<Model<T>> {
    match method {
        Method::Fmi => {
            struct Hook<'f, T>(&'f mut dyn FnMut(usize, &Model<T>) -> Result<()>);
            impl<T: Scalar> FmiObserver<T> for Hook<'_, T> {
                fn checkpoint(&mut self, step: usize, main: &Model<T>, _sub: &Model<T>) -> Result<()> {
                    (self.0)(step, main)
                }
            }
            let fc = cfg.fmi_config(train.len(), derive_seed(seed, "method/fmi"));
            Ok(train_fmi(train, &fc, arch, arch, &mut Hook(on_checkpoint))?.main)
        }
        Method::Erm => {
            let tc = cfg.erm_train_config(train.len());
            let mut rng = Rng::new(derive_seed(seed, "method/erm"));
            Ok(train_erm(train, &tc, arch, &mut rng, on_checkpoint)?.0)
        }
        Method::Oracle => {
            let tc = cfg.erm_train_config(train.len());
            let mut rng = Rng::new(derive_seed(seed, &format!("method/oracle/{}", train.env_id)));
            Ok(train_oracle(train, &tc, arch, &mut rng, on_checkpoint)?.0)
        }
    }
}

fn row(method: Method, env: &str, repeat: usize, seed: u64, step: usize, error: f64) -> ResultRow {
    ResultRow {
        method,
        env: env.to_string(),
        repeat,
        seed,
        selected_step: Some(step),
        error: Some(error),
        accuracy: Some(1.0 - error),
        failure: None,
    }
}

fn run_learner<T: Scalar>(
    source: &DataSource<T>,
    method: Method,
    seed: u64,
    repeat: usize,
) -> Result<(Vec<ResultRow>, Vec<PValueRow>)> {
    let cfg = source.config();
    let n_test = cfg.data.n_test;
    let pooled = source.pooled(&cfg.train_envs, "train", cfg.data.n_train, seed)?;
    let arch = cfg.architecture(pooled.dim());
    let tests = cfg
        .test_envs
        .iter()
        .map(|e| source.sample(e, "test", n_test, seed))
        .collect::<Result<Vec<_>>>()?;

    let (train, select_sets) = match cfg.selection {
        Selection::TrainingDomainValidation => {
            let (train, held) = pooled.split(HELD_OUT_FRACTION, &mut Rng::new(derive_seed(seed, "split")));
            (train, vec![held])
        }
        Selection::TestDomainValidation => {
            let sets = cfg
                .test_envs
                .iter()
                .map(|e| source.sample(e, "select", n_test, seed))
                .collect::<Result<Vec<_>>>()?;
            (pooled, sets)
        }
    };
    let mut selector = Selector::new(select_sets.iter().collect());
    fit(cfg, method, &train, &arch, seed, &mut |step, m| selector.offer(step, m))?;
    let (step, model) = selector.into_best()?;

    let mut rows = Vec::with_capacity(tests.len());
    for (env, test) in cfg.test_envs.iter().zip(&tests) {
        rows.push(row(method, env, repeat, seed, step, model.evaluate(test)?));
    }

    let mut gof = Vec::new();
    if let Some(valid_env) = &cfg.validation_env {
        let sides = gof_sides(source, seed)?;
        let mut rng = Rng::new(derive_seed(seed, &format!("gof/{method}")));
        gof = feature_pvalues(&model, &train, &sides, step, method, repeat, cfg.gof.n, &mut rng)?;
        debug_assert!(sides.iter().any(|(e, _)| e == valid_env));
    }
    Ok((rows, gof))
}

/// Fresh samples of the pooled training environments and the validation
/// environment, used as the observed side of the goodness-of-fit test.
pub(crate) fn gof_sides<T: Scalar>(source: &DataSource<T>, seed: u64) -> Result<Vec<(String, LabeledDataset<T>)>> {
    let cfg = source.config();
    let mut sides = vec![(
        cfg.train_envs.join("+"),
        source.pooled(&cfg.train_envs, "gof", cfg.data.n_test, seed)?,
    )];
    if let Some(v) = &cfg.validation_env {
        sides.push((v.clone(), source.sample(v, "gof", cfg.data.n_test, seed)?));
    }
    Ok(sides)
}

/// Per-class p-values of `model`'s predicted class, against the label
/// conditional on the data it was trained on.
#[allow(clippy::too_many_arguments)]
pub(crate) fn feature_pvalues<T: Scalar>(
    model: &Model<T>,
    train: &LabeledDataset<T>,
    sides: &[(String, LabeledDataset<T>)],
    step: usize,
    feature: Method,
    repeat: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<PValueRow>> {
    let k = model.classes();
    let train_pred = model.predict(&train.x)?;
    let mut out = Vec::new();
    for (env, side) in sides {
        let pred = model.predict(&side.x)?;
        let report = gof_report_from_predictions(&train_pred, &train.y, &pred, &side.y, k, n, rng)?;
        for class in 0..k {
            out.push(PValueRow {
                step,
                feature,
                env: env.clone(),
                class,
                p: report.entries.iter().find(|e| e.class == class).map(|e| e.p_value),
                repeat,
            });
        }
    }
    Ok(out)
}

fn run_oracle<T: Scalar>(source: &DataSource<T>, seed: u64, repeat: usize) -> Result<Vec<ResultRow>> {
    let cfg = source.config();
    let mut rows = Vec::new();
    for env in &cfg.test_envs {
        let data = source.sample(env, "oracle", cfg.data.n_train, seed)?;
        let test = source.sample(env, "test", cfg.data.n_test, seed)?;
        let arch = cfg.architecture(data.dim());
        let (train, select) = match cfg.selection {
            Selection::TrainingDomainValidation => data.split(
                HELD_OUT_FRACTION,
                &mut Rng::new(derive_seed(seed, &format!("split/{env}"))),
            ),
            Selection::TestDomainValidation => (data, source.sample(env, "select", cfg.data.n_test, seed)?),
        };
        let mut selector = Selector::new(vec![&select]);
        fit(cfg, Method::Oracle, &train, &arch, seed, &mut |step, m| {
            selector.offer(step, m)
        })?;
        let (step, model) = selector.into_best()?;
        rows.push(row(Method::Oracle, env, repeat, seed, step, model.evaluate(&test)?));
    }
    Ok(rows)
}

/// P-value trajectories: at every checkpoint of ERM and FMI,
/// test the learned feature in the training environments and in the
/// validation environment.
pub fn pvalue_series(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<PValueRow>> {
    cfg.validate()?;
    if cfg.validation_env.is_none() {
        return Err(Error::Config("pvalue series needs validation_env".into()));
    }
    match cfg.precision {
        Precision::F64 => series_typed::<f64>(cfg, jobs),
        Precision::F32 => series_typed::<f32>(cfg, jobs),
    }
}

fn series_typed<T: Scalar>(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<PValueRow>> {
    let source = DataSource::<T>::new(cfg)?;
    let work: Vec<(Method, usize)> = [Method::Erm, Method::Fmi]
        .into_iter()
        .flat_map(|m| (0..cfg.repeats).map(move |r| (m, r)))
        .collect();
    let parts: Vec<Result<Vec<PValueRow>>> = with_pool(jobs, || {
        work.par_iter()
            .map(|&(feature, repeat)| {
                let seed = repeat_seed(cfg.master_seed, repeat);
                let train = source.pooled(&cfg.train_envs, "train", cfg.data.n_train, seed)?;
                let sides = gof_sides(&source, seed)?;
                let arch = cfg.architecture(train.dim());
                let mut rng = Rng::new(derive_seed(seed, &format!("gof-series/{feature}")));
                let mut rows = Vec::new();
                fit(cfg, feature, &train, &arch, seed, &mut |step, m| {
                    rows.extend(feature_pvalues(
                        m, &train, &sides, step, feature, repeat, cfg.gof.n, &mut rng,
                    )?);
                    Ok(())
                })?;
                Ok(rows)
            })
            .collect()
    })?;
    let mut rows = Vec::new();
    for p in parts {
        rows.extend(p?);
    }
    rows.sort_by(|a, b| {
        (a.repeat, a.feature, a.step, &a.env, a.class).cmp(&(b.repeat, b.feature, b.step, &b.env, b.class))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(methods: &str, repeats: usize) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
            id = "tiny"
            family = "cmnist-syn"
            train_envs = ["0.1"]
            test_envs = ["0.9"]
            validation_env = "0.9"
            methods = {methods}
            repeats = {repeats}
            master_seed = 5
            [data]
            n_train = 400
            n_test = 300
            [model]
            hidden = [8]
            [fmi]
            steps = 60
            checkpoint_every = 20
            threshold = 4
            [erm]
            steps = 60
            checkpoint_every = 20
            "#
        ))
        .unwrap()
    }

    #[test]
    fn rows_cover_methods_envs_repeats() {
        let r = run_experiment(&tiny(r#"["oracle", "erm", "fmi"]"#, 2), Some(1)).unwrap();
        assert_eq!(r.rows.len(), 3 * 2);
        assert_eq!(r.methods, vec![Method::Fmi, Method::Erm, Method::Oracle]);
        assert_eq!(r.failures(), 0);
        assert!(r.rows.iter().all(|x| x.selected_step.unwrap() % 20 == 0));
        // 2 features × 2 repeats × 2 sides × 2 classes
        assert_eq!(r.gof.len(), 16);
    }

    #[test]
    fn method_order_does_not_change_results() {
        let a = run_experiment(&tiny(r#"["fmi", "erm"]"#, 2), Some(2)).unwrap();
        let b = run_experiment(&tiny(r#"["erm", "fmi"]"#, 2), Some(1)).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = run_experiment(&tiny(r#"["erm"]"#, 2), None).unwrap();
        let erm_a: Vec<_> = a.rows.iter().filter(|r| r.method == Method::Erm).cloned().collect();
        assert_eq!(erm_a, c.rows);
    }

    #[test]
    fn single_repeat_is_flagged() {
        let r = run_experiment(&tiny(r#"["erm"]"#, 1), None).unwrap();
        assert_eq!(r.aggregates.len(), 1);
        assert_eq!(r.aggregates[0].std, 0.0);
        assert!(r.aggregates[0].single_repeat);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut cfg = tiny(r#"["fmi", "erm"]"#, 2);
        // diverges to non-finite parameters within a few steps
        cfg.fmi.sub_lr = 1e300;
        cfg.fmi.main_lr = 1e300;
        let r = run_experiment(&cfg, None).unwrap();
        assert_eq!(r.failures(), 2);
        assert!(r
            .rows
            .iter()
            .filter(|x| x.method == Method::Erm)
            .all(|x| x.failure.is_none()));
        let fmi = r.aggregates.iter().find(|a| a.method == Method::Fmi).unwrap();
        assert_eq!(fmi.excluded, 2);
        assert_eq!(fmi.repeats_used, 0);
    }

    #[test]
    fn series_has_every_checkpoint() {
        let rows = pvalue_series(&tiny(r#"["erm"]"#, 1), None).unwrap();
        let steps: std::collections::BTreeSet<_> = rows.iter().map(|r| r.step).collect();
        assert_eq!(steps.into_iter().collect::<Vec<_>>(), vec![20, 40, 60]);
        assert_eq!(rows.len(), 2 * 3 * 2 * 2);
    }
}
