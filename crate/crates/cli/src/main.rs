//! `mixconv` command-line tool: cost counting, kernel sweeps, gradient
//! checks, oracle suites and desk-scale training.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mixconv::accounting::count_model;
use mixconv::gradcheck::{self, GradcheckReport};
use mixconv::oracle::{self, OracleReport};
use mixconv::train::{train, TrainConfig};
use mixconv::zoo::{self, build_mobilenet_v1, build_mobilenet_v2, KernelOverride, ModelConfig};
use mixconv::{Error, PartitionScheme};

#[derive(Debug, Parser)]
#[command(name = "mixconv", version, about = "Mixed depthwise convolution toolkit")]
struct Cli {
    /// Also write every CSV output as a JSON array (`<out>.json`, or stdout).
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer parameter and multiply-add counts.
    #[command(group(ArgGroup::new("source").required(true).args(["model", "config"])))]
    Count {
        /// Built-in model name.
        #[arg(long)]
        model: Option<String>,
        /// Model config JSON file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 224)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost of a MobileNet as its depthwise kernels grow.
    Sweep {
        #[arg(long, value_enum)]
        model: SweepModel,
        /// Odd kernel sizes, ascending from 3; one row per prefix.
        #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11,13")]
        kernels: Vec<usize>,
        #[arg(long, value_enum, default_value_t = SweepMode::Depthwise)]
        mode: SweepMode,
        #[arg(long, default_value_t = 224)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    #[command(group(ArgGroup::new("which").required(true).args(["op", "all"])))]
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, env = "MIX_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded equivalence suites against reference implementations.
    Oracle {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, env = "MIX_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the synthetic texture task and write the run log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepModel {
    #[value(name = "mobilenet-v1")]
    MobilenetV1,
    #[value(name = "mobilenet-v2")]
    MobilenetV2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepMode {
    Depthwise,
    Mixconv,
    #[value(name = "mixconv-exp")]
    MixconvExp,
    #[value(name = "mixconv-dilated")]
    MixconvDilated,
}

impl SweepMode {
    fn name(self) -> &'static str {
        match self {
            SweepMode::Depthwise => "depthwise",
            SweepMode::Mixconv => "mixconv",
            SweepMode::MixconvExp => "mixconv-exp",
            SweepMode::MixconvDilated => "mixconv-dilated",
        }
    }

    fn kernel_override(self, prefix: &[usize]) -> KernelOverride {
        let max = *prefix.last().expect("prefixes are non-empty");
        let (partition, dilated) = match self {
            SweepMode::Depthwise => return KernelOverride::depthwise(max),
            SweepMode::Mixconv => (PartitionScheme::Equal, false),
            SweepMode::MixconvExp => (PartitionScheme::Exponential, false),
            SweepMode::MixconvDilated => (PartitionScheme::Equal, true),
        };
        KernelOverride { kernels: prefix.to_vec(), partition, dilated }
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    max_kernel: usize,
    mode: &'static str,
    params: u64,
    madds: u64,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(Error::Diverged { .. }) => 1,
            _ => 2,
        };
        Failure { code, err }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        anyhow::Error::new(err).into()
    }
}

fn json_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

/// Writes `csv` to `out` (or stdout) and, with `--json`, its JSON mirror.
fn emit(out: Option<&Path>, json: bool, csv: &str, json_text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
            if json {
                let jp = json_path(path);
                fs::write(&jp, format!("{json_text}\n")).with_context(|| format!("writing {}", jp.display()))?;
            }
        }
        None if json => println!("{json_text}"),
        None => print!("{csv}"),
    }
    Ok(())
}

fn csv_lines<I: IntoIterator<Item = String>>(header: &str, rows: I) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn load_model(model: Option<&str>, config: Option<&Path>) -> anyhow::Result<ModelConfig> {
    match (model, config) {
        (Some(name), _) => Ok(zoo::builtin(name)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            // Training configs are a model config plus a `train` section.
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            if value.get("train").is_some() {
                Ok(TrainConfig::from_json(&text)?.model)
            } else {
                Ok(ModelConfig::from_json(&text)?)
            }
        }
        (None, None) => bail!("one of --model or --config is required"),
    }
}

fn cmd_count(
    model: Option<&str>,
    config: Option<&Path>,
    resolution: usize,
    out: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let cfg = load_model(model, config)?;
    let report = count_model(&cfg, resolution)?;
    emit(out, json, &report.to_csv(), &report.to_json())?;
    let summary = format!(
        "{}: {} params, {} madds (multiply-adds) at {r}x{r}; {} batch-norm running stats not counted",
        report.model,
        report.total_params,
        report.total_madds,
        report.running_stats,
        r = resolution
    );
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn validate_kernels(kernels: &[usize]) -> anyhow::Result<()> {
    if kernels.first() != Some(&3) {
        bail!("kernel list must start at 3");
    }
    if let Some(k) = kernels.iter().find(|k| *k % 2 == 0) {
        bail!("kernel sizes must be odd, got {k}");
    }
    if kernels.windows(2).any(|w| w[0] >= w[1]) {
        bail!("kernel list must be strictly ascending");
    }
    Ok(())
}

fn cmd_sweep(
    model: SweepModel,
    kernels: &[usize],
    mode: SweepMode,
    resolution: usize,
    out: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    validate_kernels(kernels)?;
    let mut rows = Vec::with_capacity(kernels.len());
    for end in 1..=kernels.len() {
        let choice = mode.kernel_override(&kernels[..end]);
        let cfg = match model {
            SweepModel::MobilenetV1 => build_mobilenet_v1(&choice)?,
            SweepModel::MobilenetV2 => build_mobilenet_v2(&choice)?,
        };
        let r = count_model(&cfg, resolution)?;
        rows.push(SweepRow { max_kernel: kernels[end - 1], mode: mode.name(), params: r.total_params, madds: r.total_madds });
    }
    let csv = csv_lines(
        "max_kernel,mode,params,madds",
        rows.iter().map(|r| format!("{},{},{},{}", r.max_kernel, r.mode, r.params, r.madds)),
    );
    emit(out, json, &csv, &serde_json::to_string_pretty(&rows).context("json")?)?;
    Ok(())
}

fn finish_checks(ok: bool, out: Option<&Path>, json: bool, csv: String, json_text: String) -> Result<(), Failure> {
    if out.is_some() || json {
        emit(out, json, &csv, &json_text)?;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure { code: 1, err: anyhow::anyhow!("tolerance exceeded") })
    }
}

fn cmd_gradcheck(
    op: Option<&str>,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
    json: bool,
) -> Result<(), Failure> {
    let ops: Vec<&str> = match op {
        Some(op) => vec![op],
        None => gradcheck::OPS.iter().map(|(name, _)| *name).collect(),
    };
    let mut reports: Vec<GradcheckReport> = Vec::with_capacity(ops.len());
    for op in ops {
        let r = gradcheck::gradcheck(op, trials, seed)?;
        println!(
            "{} {:<18} max rel err {:.3e} (tolerance {:.0e}, {} trials)",
            if r.passed { "PASS" } else { "FAIL" },
            r.op,
            r.max_rel_err,
            r.tolerance,
            r.trials
        );
        reports.push(r);
    }
    let ok = reports.iter().all(|r| r.passed);
    let csv = csv_lines(
        "op,trials,max_rel_err,tolerance,passed",
        reports.iter().map(|r| format!("{},{},{:e},{:e},{}", r.op, r.trials, r.max_rel_err, r.tolerance, r.passed)),
    );
    let json_text = serde_json::to_string_pretty(&reports).context("json")?;
    finish_checks(ok, out, json, csv, json_text)
}

fn cmd_oracle(suite: &str, cases: usize, seed: u64, out: Option<&Path>, json: bool) -> Result<(), Failure> {
    let r: OracleReport = oracle::run_suite(suite, cases, seed).map_err(|e| match e {
        Error::Lookup(name) => Failure {
            code: 2,
            err: anyhow::anyhow!("unknown suite `{name}`; expected one of {}", oracle::SUITES.join(", ")),
        },
        other => other.into(),
    })?;
    println!(
        "{} {} max abs diff {:e} over {} cases",
        if r.passed { "PASS" } else { "FAIL" },
        r.suite,
        r.max_abs_diff,
        r.cases
    );
    let csv = csv_lines(
        "suite,cases,max_abs_diff,passed",
        [format!("{},{},{:e},{}", r.suite, r.cases, r.max_abs_diff, r.passed)],
    );
    let json_text = serde_json::to_string_pretty(&[&r]).context("json")?;
    finish_checks(r.passed, out, json, csv, json_text)
}

fn cmd_train(config: &Path, out: Option<&Path>, json: bool) -> Result<(), Failure> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = TrainConfig::from_json(&text)?;
    let log = train(&cfg)?;
    emit(out, json, &log.to_csv(), &log.to_json())?;
    let last = log.final_entry();
    let summary = format!("step {}: train loss {:.6}, train accuracy {:.4}", last.step, last.loss, last.accuracy);
    if out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let json = cli.json;
    match cli.command {
        Command::Count { model, config, resolution, out } => {
            cmd_count(model.as_deref(), config.as_deref(), resolution, out.as_deref(), json)
        }
        Command::Sweep { model, kernels, mode, resolution, out } => {
            cmd_sweep(model, &kernels, mode, resolution, out.as_deref(), json)
        }
        Command::Gradcheck { op, all: _, trials, seed, out } => {
            cmd_gradcheck(op.as_deref(), trials, seed, out.as_deref(), json)
        }
        Command::Oracle { suite, cases, seed, out } => cmd_oracle(&suite, cases, seed, out.as_deref(), json),
        Command::Train { config, out } => cmd_train(&config, out.as_deref(), json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
