use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use fmi_core::datagen::{load_dataset, save_dataset};
use fmi_core::fmi::{train_erm, train_fmi, train_oracle, Trace};
use fmi_core::harness::{
    env_kind, generate_env, load_digits, pvalue_series, read_run_dir, render, repeat_seed, run_experiment,
    write_run_dir, DataSource, ExperimentConfig, Family, Format,
};
use fmi_core::models::{load_model, save_model};
use fmi_core::numerics::{derive_index_seed, derive_seed, Rng};
use fmi_core::stats::{decide_workflow, gof_report, DEFAULT_ALPHA, DEFAULT_SAMPLE_SIZE};
use fmi_core::{Dataset64, Error, Model64};

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "fmi", version, about = "Feature matching intervention experiments")]
struct Cli {
    /// Overrides the master seed of any config.
    #[arg(long, env = "FMI_SEED", global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Example2,
    Example2s,
    CmnistSyn,
    CmnistIdx,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Example2 => Family::Example2,
            FamilyArg::Example2s => Family::Example2s,
            FamilyArg::CmnistSyn => Family::CmnistSyn,
            FamilyArg::CmnistIdx => Family::CmnistIdx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Fmi,
    Erm,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Md,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one environment's dataset file.
    Gen {
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// `E0`/`E1`/`E2` (optionally `:indep`) or a colour-flip probability.
        #[arg(long)]
        env: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        /// Seed of the Example 2S scrambling matrix.
        #[arg(long, default_value_t = 0)]
        mixing_seed: u64,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train one method on a config's training environments (repeat 0, final step).
    Train {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Chi-square goodness-of-fit test of a model's predicted classes.
    Gof {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment and write its report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-render a finished run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// P-values of the ERM and FMI features at every checkpoint.
    Pvals {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn load_config(path: &Path, seed_override: Option<u64>) -> fmi_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed_override {
        log::info!("master seed overridden to {seed}");
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn gen(
    family: Family,
    env: &str,
    n: usize,
    seed: u64,
    out: &Path,
    label_noise: f64,
    mixing_seed: u64,
    images: Option<&Path>,
    labels: Option<&Path>,
) -> anyhow::Result<()> {
    let kind = env_kind(family, env, label_noise, mixing_seed)?;
    let digits = load_digits::<f64>(family, images, labels)?;
    let ds: Dataset64 = generate_env(&kind, env, n, digits.as_ref(), &mut Rng::new(seed))?;
    save_dataset(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} rows × {} features ({}) to {}",
        ds.len(),
        ds.dim(),
        ds.env_id,
        out.display()
    );
    Ok(())
}

fn write_trace(trace: &Trace, path: Option<&Path>) -> anyhow::Result<()> {
    if let Some(p) = path {
        trace.write_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn train(
    cfg: &ExperimentConfig,
    method: MethodArg,
    out: &Path,
    trace: Option<&Path>,
    repeat: usize,
) -> anyhow::Result<()> {
    let source = DataSource::<f64>::new(cfg)?;
    let seed = repeat_seed(cfg.master_seed, repeat);
    let (model, tr): (Model64, Trace) = match method {
        MethodArg::Fmi => {
            let data = source.pooled(&cfg.train_envs, "train", cfg.data.n_train, seed)?;
            let arch = cfg.architecture(data.dim());
            let fc = cfg.fmi_config(data.len(), derive_seed(seed, "method/fmi"));
            let o = train_fmi(&data, &fc, &arch, &arch, &mut ())?;
            (o.main, o.trace)
        }
        MethodArg::Erm => {
            let data = source.pooled(&cfg.train_envs, "train", cfg.data.n_train, seed)?;
            let arch = cfg.architecture(data.dim());
            let mut rng = Rng::new(derive_seed(seed, "method/erm"));
            train_erm(
                &data,
                &cfg.erm_train_config(data.len()),
                &arch,
                &mut rng,
                &mut |_, _| Ok(()),
            )?
        }
        MethodArg::Oracle => {
            let env = &cfg.test_envs[0];
            let data = source.sample(env, "oracle", cfg.data.n_train, seed)?;
            let arch = cfg.architecture(data.dim());
            let mut rng = Rng::new(derive_seed(seed, &format!("method/oracle/{env}")));
            train_oracle(
                &data,
                &cfg.erm_train_config(data.len()),
                &arch,
                &mut rng,
                &mut |_, _| Ok(()),
            )?
        }
    };
    save_model(&model, out).with_context(|| format!("writing {}", out.display()))?;
    write_trace(&tr, trace)?;
    println!("trained {} steps, checkpoint at {}", tr.rows.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gof(
    model: &Path,
    train: &Path,
    valid: &Path,
    n: usize,
    repeats: usize,
    alpha: f64,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    let model: Model64 = load_model(model)?;
    let train: Dataset64 = load_dataset(train)?;
    let valid: Dataset64 = load_dataset(valid)?;
    let mut w = BufWriter::new(File::create(out)?);
    writeln!(w, "repeat,class,statistic,df,p_value,decision")?;
    let mut rejections = 0;
    for r in 0..repeats {
        let mut rng = Rng::new(derive_index_seed(seed, r as u64));
        let report = gof_report(&model, &train, &valid, n, &mut rng)?;
        for (class, why) in &report.skipped {
            log::warn!("repeat {r}: class {class} not tested: {why}");
        }
        let decision = decide_workflow(&report, alpha)?;
        if decision == fmi_core::stats::Decision::UseFmi {
            rejections += 1;
        }
        for e in &report.entries {
            if e.insufficient {
                log::warn!(
                    "repeat {r}: class {} used all {} validation rows (< {n})",
                    e.class,
                    e.n_used
                );
            }
            writeln!(
                w,
                "{r},{},{},{},{},{}",
                e.class,
                e.statistic,
                e.df,
                e.p_value,
                decision.as_str()
            )?;
        }
    }
    w.flush()?;
    println!("rejected in {rejections}/{repeats} repeats at alpha {alpha}");
    Ok(())
}

fn report(input: &Path, format: FormatArg, out: Option<&Path>) -> anyhow::Result<()> {
    let rep = read_run_dir(input).with_context(|| format!("reading {}", input.display()))?;
    let format = match format {
        FormatArg::Md => Format::Markdown,
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    let text = render(&rep, format)?;
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Gen {
            family,
            env,
            n,
            seed,
            out,
            label_noise,
            mixing_seed,
            images,
            labels,
        } => gen(
            family.into(),
            &env,
            n,
            cli.seed_override.unwrap_or(seed),
            &out,
            label_noise,
            mixing_seed,
            images.as_deref(),
            labels.as_deref(),
        )?,
        Command::Train {
            method,
            config,
            out,
            trace,
            repeat,
        } => {
            let cfg = load_config(&config, cli.seed_override)?;
            train(&cfg, method, &out, trace.as_deref(), repeat)?
        }
        Command::Gof {
            model,
            train,
            valid,
            n,
            repeats,
            alpha,
            seed,
            out,
        } => gof(
            &model,
            &train,
            &valid,
            n,
            repeats,
            alpha,
            cli.seed_override.unwrap_or(seed),
            &out,
        )?,
        Command::Run { config, out_dir, jobs } => {
            let cfg = load_config(&config, cli.seed_override)?;
            let rep = run_experiment(&cfg, jobs)?;
            write_run_dir(&rep, &out_dir)?;
            print!("{}", render(&rep, Format::Markdown)?);
            let failed = rep.failures();
            if failed > 0 {
                eprintln!(
                    "{failed} result row(s) failed; see {}",
                    out_dir.join("results.csv").display()
                );
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Report { input, format, out } => report(&input, format, out.as_deref())?,
        Command::Pvals { config, out, jobs } => {
            let cfg = load_config(&config, cli.seed_override)?;
            let rows = pvalue_series(&cfg, jobs)?;
            fmi_core::harness::report::pvalues_to_csv(&rows, BufWriter::new(File::create(&out)?))?;
            println!("wrote {} p-values to {}", rows.len(), out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
