//! `clc`: train, evaluate and inspect contrastive clustering models.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error. Log verbosity comes from `CLC_LOG` (default `info`).

mod source;
mod suite;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clc::autodiff::Fault;
use clc::data::{write_csv, Dataset};
use clc::metrics::{similarity_stats, MetricRecord};
use clc::model::Params;
use clc::sinkhorn::{solve, SinkhornConfig, SolveMode};
use clc::tensor::RngState;
use clc::trainer::{evaluate, load_checkpoint, save_checkpoint, RunRecord, TrainConfig, Trainer};
use clc::Error;
use log::{info, warn};
use serde_json::{json, Value};

use source::{DataSource, LabelMode};

#[derive(Debug, Parser)]
#[command(name = "clc", version, about = "Contrastive clustering with a split representation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes config, checkpoint and a JSON-lines log to --out.
    Train(TrainArgs),
    /// Cluster metrics, assignment entropy and similarity statistics as JSON.
    Eval(EvalArgs),
    /// Run the loss/gradient invariant suite; exits 0 iff every check passes.
    Gradcheck(GradcheckArgs),
    /// Equipartition assignment for a CSV of logits (rows are samples).
    Sinkhorn(SinkhornArgs),
    /// Pair-similarity statistics of a trained model as JSON.
    Stats(StatsArgs),
    /// Write a synthetic dataset as CSV plus a metadata sidecar.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV path or generator spec (`gmm:k=4,n=500,d=16,sep=10,seed=0`, `rings:k=3,n=300,noise=0.1`).
    #[arg(long)]
    data: DataSource,
    /// Whether the last CSV column holds labels.
    #[arg(long, value_enum, default_value_t = LabelMode::Auto)]
    labels: LabelMode,
    /// Fraction held out (stratified when labelled); 0 uses every row.
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    /// Seed of the holdout split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Override a config entry, e.g. `--set epochs=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint written with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Which side of the holdout split to score (default: test when holding out).
    #[arg(long, value_enum)]
    split: Option<Split>,
    /// Pair budget per similarity cell.
    #[arg(long, default_value_t = 20_000)]
    budget: usize,
    /// Seed for augmentations and pair sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long, default_value_t = 20_000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt a backward rule to confirm the checker notices.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Fixed,
    Converged,
}

#[derive(Debug, Args)]
struct SinkhornArgs {
    /// Headerless CSV of logits, one row per sample.
    #[arg(long)]
    logits: PathBuf,
    /// Output CSV of the transport plan, one row per sample.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Generator spec, e.g. `gmm:k=4,n=500,d=16,sep=10,seed=3`.
    #[arg(long)]
    spec: DataSource,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_usage() { 2 } else { 1 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

/// Writes one line to stdout; a reader that closed the pipe early is not an error.
fn emit(text: impl std::fmt::Display) -> Outcome {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLC_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Sinkhorn(a) => sinkhorn(a),
        Command::Stats(a) => stats(a),
        Command::GenData(a) => gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Loads the data; returns (train part, held-out part).
fn load_split(args: &DataArgs) -> Result<(Dataset, Option<Dataset>), Failure> {
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(usage(format!("--holdout {} outside [0, 1)", args.holdout)));
    }
    let ds = args.data.load(args.labels).map_err(|e| match e {
        Error::Io(io) => usage(format!("cannot read data: {io}")),
        other => usage(other),
    })?;
    if args.holdout == 0.0 {
        return Ok((ds, None));
    }
    let (train, test) = ds.split_holdout(args.holdout, args.split_seed).map_err(usage)?;
    Ok((train, Some(test)))
}

fn pick_split(args: &DataArgs, split: Option<Split>) -> Result<Dataset, Failure> {
    let (train, test) = load_split(args)?;
    match (split, test) {
        (Some(Split::Train), _) | (None, None) => Ok(train),
        (Some(Split::Test) | None, Some(test)) => Ok(test),
        (Some(Split::Test), None) => Err(usage("--split test needs --holdout > 0")),
    }
}

fn config_json(text: &str) -> Value {
    let map: serde_json::Map<String, Value> = text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect();
    Value::Object(map)
}

fn write_line<W: Write>(w: &mut W, v: &Value) -> Result<(), Failure> {
    writeln!(w, "{v}")?;
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg = TrainConfig::parse(&text, &a.config).map_err(usage)?;
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(format!("--set {o}: {e}")))?;
    }
    cfg.validate().map_err(usage)?;
    let (train_ds, test_ds) = load_split(&a.data)?;
    info!("resolved config:\n{}", cfg.to_text());
    info!("training on {} rows x {} features", train_ds.len(), train_ds.dim());

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.txt"), cfg.to_text())?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let t = load_checkpoint(path, Some(&cfg.spec(train_ds.dim())?))?.into_trainer()?;
            if t.cfg != cfg {
                return Err(usage("config differs from the one stored in the checkpoint"));
            }
            info!("resuming at epoch {}", t.epoch);
            t
        }
        None => Trainer::new(cfg.clone(), train_ds.dim())?,
    };
    let mut record = RunRecord::new(&cfg);
    let mut outcome = trainer.fit(&train_ds, &mut record);
    if outcome.is_ok() && cfg.self_label {
        outcome = trainer.self_label_finetune(&train_ds, &mut record).map(|_| ());
    }

    let mut log = BufWriter::new(File::create(a.out.join("metrics.jsonl"))?);
    record.write_jsonl(&mut log)?;
    if let Err(e) = outcome {
        if let Error::NonFiniteLoss { dump, .. } = &e {
            let mut f = BufWriter::new(File::create(a.out.join("abort_dump.txt"))?);
            dump.write_to(&mut f)?;
            f.flush()?;
            write_line(&mut log, &json!({"type": "abort", "epoch": dump.epoch, "step": dump.step, "reason": dump.reason}))?;
        }
        log.flush()?;
        return Err(e.into());
    }

    let norm = cfg.normalization();
    let seeded = |name: &str, value: f64| MetricRecord {
        seed: Some(cfg.seed),
        ..MetricRecord::new(name, value)
    };
    let mut finals = Vec::new();
    for (prefix, ds) in [("train", Some(&train_ds)), ("holdout", test_ds.as_ref())] {
        let Some(ds) = ds else { continue };
        let (entropy, scores) = evaluate(&trainer.params, ds, norm)?;
        finals.push(seeded(&format!("{prefix}_entropy"), entropy));
        if let Some(s) = scores {
            finals.push(seeded(&format!("{prefix}_acc"), s.acc));
            finals.push(seeded(&format!("{prefix}_nmi"), s.nmi));
            finals.push(seeded(&format!("{prefix}_ari"), s.ari));
        }
    }
    if let Some((epoch, acc, _)) = &trainer.best {
        finals.push(seeded("best_epoch", *epoch as f64));
        finals.push(seeded("best_train_acc", *acc));
    }
    for m in &finals {
        write_line(&mut log, &serde_json::to_value(m).map_err(Error::from)?)?;
        info!("{} = {:.6}", m.name, m.value);
    }
    log.flush()?;
    save_checkpoint(&a.out.join("model.ck"), &trainer)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

/// Model and resolved config from a checkpoint. Model-only checkpoints fall
/// back to the default config for normalization and temperatures.
fn load_model(path: &Path) -> Result<(Params, TrainConfig), Failure> {
    let ck = load_checkpoint(path, None).map_err(|e| match e {
        Error::Io(io) => usage(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other.into(),
    })?;
    let cfg = match ck.state {
        Some(s) => s.config,
        None => {
            warn!("checkpoint has no stored config; using defaults");
            TrainConfig::default()
        }
    };
    Ok((ck.params, cfg))
}

fn stats_json(params: &Params, cfg: &TrainConfig, ds: &Dataset, budget: usize, seed: u64) -> Result<Value, Failure> {
    let stats = similarity_stats(
        params,
        cfg.normalization(),
        ds,
        &cfg.weak_augmentation(),
        cfg.tau,
        budget,
        &mut RngState::new(seed),
    )?;
    Ok(serde_json::to_value(stats).map_err(Error::from)?)
}

fn check_width(params: &Params, ds: &Dataset) -> Outcome {
    if params.spec().input != ds.dim() {
        return Err(usage(format!(
            "model expects {} features, data has {}",
            params.spec().input,
            ds.dim()
        )));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let (params, cfg) = load_model(&a.checkpoint)?;
    let ds = pick_split(&a.data, a.split)?;
    check_width(&params, &ds)?;
    let (entropy, scores) = evaluate(&params, &ds, cfg.normalization())?;
    let report = json!({
        "version": clc::VERSION,
        "config": config_json(&cfg.to_text()),
        "data": ds.name,
        "n": ds.len(),
        "entropy": entropy,
        "metrics": scores,
        "stats": stats_json(&params, &cfg, &ds, a.budget, a.seed)?,
    });
    emit(serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    Ok(())
}

fn stats(a: StatsArgs) -> Outcome {
    let (params, cfg) = load_model(&a.checkpoint)?;
    let ds = pick_split(&a.data, a.split)?;
    check_width(&params, &ds)?;
    let report = json!({
        "version": clc::VERSION,
        "config": config_json(&cfg.to_text()),
        "data": ds.name,
        "n": ds.len(),
        "stats": stats_json(&params, &cfg, &ds, a.budget, a.seed)?,
    });
    emit(serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let fault = a.inject_fault.then_some(Fault::FlipNormalizeSign);
    let checks = suite::run(a.trials as usize, a.seed, fault)?;
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        emit(format!(
            "{verdict:4} {:<46} worst {:.3e} (tolerance {:.0e}, {} instances)",
            c.name, c.worst, c.tolerance, c.instances
        ))?;
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(Failure {
            code: 1,
            message: format!("{failed} of {} checks failed", checks.len()),
        });
    }
    Ok(())
}

fn sinkhorn(a: SinkhornArgs) -> Outcome {
    let logits = clc::data::load_csv(&a.logits, false)
        .map_err(|e| match e {
            Error::Io(io) => usage(format!("cannot read {}: {io}", a.logits.display())),
            other => usage(other),
        })?
        .features;
    let cfg = SinkhornConfig {
        epsilon: a.epsilon,
        iterations: a.iterations,
        tolerance: a.tolerance,
        ..SinkhornConfig::default()
    };
    let mode = match a.mode {
        ModeArg::Fixed => SolveMode::Fixed,
        ModeArg::Converged => SolveMode::Converged,
    };
    let q = solve(&logits, &cfg, mode)?;
    let plan = q.q().transpose();
    create_parent(&a.out)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    writeln!(
        w,
        "# clc {} sinkhorn epsilon={} iterations={} mode={:?} tolerance={}",
        clc::VERSION,
        a.epsilon,
        q.iterations(),
        a.mode,
        a.tolerance
    )?;
    for r in 0..plan.rows() {
        let row: Vec<String> = plan.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    let (row_res, col_res) = q.residuals();
    let summary = json!({
        "iterations": q.iterations(),
        "cluster_marginal_residual": row_res,
        "sample_marginal_residual": col_res,
        "warnings": q.warnings(),
    });
    emit(summary)?;
    Ok(())
}

fn create_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
        _ => Ok(()),
    }
}

fn gen_data(a: GenDataArgs) -> Outcome {
    if matches!(a.spec, DataSource::Csv(_)) {
        return Err(usage("--spec must be a generator (gmm:... or rings:...)"));
    }
    let ds = a.spec.load(LabelMode::Auto).map_err(usage)?;
    create_parent(&a.out)?;
    write_csv(&a.out, &ds)?;
    info!("wrote {} rows x {} features to {}", ds.len(), ds.dim(), a.out.display());
    Ok(())
}
