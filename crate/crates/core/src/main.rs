//! `glfc` command-line entry point.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 configuration or usage
//! error, 3 data error (dataset, file format, checkpoint, shape), 4 a
//! verification check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glfc::dataset::{write_phantom_dataset, PairedDataset};
use glfc::io::{load_checkpoint, read_arch, read_gvol, save_checkpoint, write_atomic, write_gvol};
use glfc::metrics::{evaluate_pair, render_table, MetricConfig};
use glfc::phantom::PhantomConfig;
use glfc::train::{compare, default_log_path, infer_volume, train, RunConfig};
use glfc::verify::suites::{gradcheck_all, suite_for_op, OP_NAMES};
use glfc::verify::{render_reports, selftest, CheckReport};
use glfc::GlfcError;

/// Environment variable read for the worker thread count (`--threads` wins).
const THREADS_ENV: &str = "GLFC_THREADS";

#[derive(Parser)]
#[command(name = "glfc", version, about = "CBCT to synthetic CT translation with MEUNet and the multiple contrast loss")]
struct Cli {
    /// Worker threads (default: GLFC_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded phantom CBCT/CT/label triples and a manifest.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and log.
    Train(TrainArgs),
    /// Translate a CBCT volume into a synthetic CT.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction against a reference CT inside the body mask.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// key=value report file.
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        op: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Oracles, window constants, format round trips and core gradient checks.
    Selftest,
    /// Train unet_d2+glob, meunet+glob and meunet+mcl under one budget and
    /// tabulate them next to the raw CBCT.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pairs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    size: usize,
    /// Multiplicative low-frequency shading amplitude.
    #[arg(long)]
    shading: Option<f64>,
    /// Streak artifact amplitude in HU.
    #[arg(long)]
    streaks: Option<f64>,
    /// Gaussian noise sigma in HU.
    #[arg(long)]
    noise: Option<f64>,
    /// Relative HU calibration drift.
    #[arg(long)]
    drift: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// paper, desk or miniature.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training log (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    /// Also write the table and key=value rows here.
    #[arg(long)]
    report: Option<PathBuf>,
}

enum Failure {
    Error(GlfcError),
    Verification,
}

impl From<GlfcError> for Failure {
    fn from(e: GlfcError) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &GlfcError) -> u8 {
    match e {
        GlfcError::Config(_) => 2,
        GlfcError::Dataset(_)
        | GlfcError::Format { .. }
        | GlfcError::Checkpoint { .. }
        | GlfcError::Shape(_)
        | GlfcError::Evaluation(_) => 3,
        GlfcError::Io { .. } | GlfcError::Contract(_) => 1,
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, GlfcError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| GlfcError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn init_threads(n: Option<usize>) -> Result<(), GlfcError> {
    if let Some(n) = n {
        if n == 0 {
            return Err(GlfcError::Config("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| GlfcError::Contract(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn check_parent(path: &Path) -> Result<(), GlfcError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(GlfcError::Config(format!(
            "output directory {} does not exist",
            parent.display()
        )))
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    let d = PhantomConfig::default();
    let cfg = PhantomConfig {
        size: a.size,
        seed: a.seed,
        shading: a.shading.unwrap_or(d.shading),
        streaks: a.streaks.unwrap_or(d.streaks),
        noise_sigma: a.noise.unwrap_or(d.noise_sigma),
        drift: a.drift.unwrap_or(d.drift),
    };
    cfg.validate()?;
    write_phantom_dataset(&a.out, a.pairs, &cfg)?;
    println!("wrote {} pairs to {}", a.pairs, a.out.display());
    Ok(())
}

fn run_config(a: &TrainArgs, threads: Option<usize>) -> Result<RunConfig, GlfcError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| GlfcError::Io {
                path: p.clone(),
                source,
            })?;
            RunConfig::from_kv_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &a.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &a.arch {
        cfg.arch = v.parse()?;
    }
    if let Some(v) = &a.loss {
        cfg.loss = v.parse()?;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.preset {
        cfg.preset = v.parse()?;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if a.steps.is_some() {
        cfg.max_steps = a.steps;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = run_config(&a, threads)?;
    init_threads(cfg.threads)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&cfg.out));
    check_parent(&cfg.out)?;
    check_parent(&log_path)?;
    let ds = PairedDataset::load(&cfg.data, cfg.model_config().input_size)?;
    let outcome = train(&cfg, &ds, |r| println!("{}", r.log_line(cfg.loss)))?;
    save_checkpoint(&cfg.out, &outcome.model)?;
    write_atomic(&log_path, outcome.log_text(cfg.loss).as_bytes())?;
    println!(
        "wrote {} ({} parameters) and {}",
        cfg.out.display(),
        outcome.model.param_count(),
        log_path.display()
    );
    Ok(())
}

fn infer_cmd(ckpt: &Path, input: &Path, out: &Path) -> Result<(), Failure> {
    let arch = read_arch(ckpt)?;
    let model = load_checkpoint::<f32>(ckpt, Some(&arch))?;
    let cbct = read_gvol(input)?;
    check_parent(out)?;
    let sct = infer_volume(&model, &cbct)?;
    write_gvol(out, &sct)?;
    println!("wrote {} ({:?})", out.display(), sct.dims);
    Ok(())
}

fn eval_cmd(pred: &Path, reference: &Path, report: &Path) -> Result<(), Failure> {
    let p = read_gvol(pred)?;
    let r = read_gvol(reference)?;
    check_parent(report)?;
    let m = evaluate_pair(&p, &r, &MetricConfig::default())?;
    let table = render_table(&[(pred.display().to_string(), m.clone())]);
    print!("{table}");
    let mut text: String = table.lines().map(|l| format!("# {l}\n")).collect();
    text.push_str(&m.to_key_values(""));
    write_atomic(report, text.as_bytes())?;
    Ok(())
}

fn report_checks(reports: &[CheckReport]) -> Result<(), Failure> {
    print!("{}", render_reports(reports));
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        for r in reports.iter().filter(|r| !r.passed) {
            eprintln!("failed: {}", r.name);
        }
        Err(Failure::Verification)
    }
}

fn gradcheck_cmd(op: Option<String>, all: bool) -> Result<(), Failure> {
    let reports = match op {
        Some(name) if !all => {
            if !OP_NAMES.contains(&name.as_str()) {
                return Err(GlfcError::Config(format!(
                    "unknown op `{name}`; known ops: {}",
                    OP_NAMES.join(", ")
                ))
                .into());
            }
            suite_for_op(&name)?
        }
        _ => gradcheck_all(),
    };
    report_checks(&reports)
}

fn compare_cmd(a: CompareArgs, threads: Option<usize>) -> Result<(), Failure> {
    let mut base = RunConfig {
        preset: a.preset.parse()?,
        max_steps: Some(a.steps),
        seed: a.seed,
        data: a.data.clone(),
        threads,
        ..RunConfig::default()
    };
    if let Some(lr) = a.lr {
        base.lr = lr;
    }
    base.validate()?;
    init_threads(base.threads)?;
    if let Some(r) = &a.report {
        check_parent(r)?;
    }
    let ds = PairedDataset::load(&a.data, base.model_config().input_size)?;
    let rows = compare(&base, &ds, &MetricConfig::default())?;
    let table = render_table(&rows);
    print!("{table}");
    if let Some(r) = &a.report {
        let mut text: String = table.lines().map(|l| format!("# {l}\n")).collect();
        for (name, m) in &rows {
            text.push_str(&m.to_key_values(name));
        }
        write_atomic(r, text.as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = thread_count(cli.threads)?;
    match cli.cmd {
        Cmd::GenData(a) => {
            init_threads(threads)?;
            gen_data(a)
        }
        Cmd::Train(a) => train_cmd(a, threads),
        Cmd::Infer { ckpt, input, out } => {
            init_threads(threads)?;
            infer_cmd(&ckpt, &input, &out)
        }
        Cmd::Eval {
            pred,
            reference,
            report,
        } => {
            init_threads(threads)?;
            eval_cmd(&pred, &reference, &report)
        }
        Cmd::Gradcheck { op, all } => gradcheck_cmd(op, all),
        Cmd::Selftest => report_checks(&selftest()),
        Cmd::Compare(a) => compare_cmd(a, threads),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(4),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
