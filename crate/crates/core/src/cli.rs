//! Command-line front end: `train`, `ablate`, `analyze` and `gen-synth`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::alignment::{AlignKind, Bandwidths, MmdConfig, DEFAULT_DISC_HIDDEN};
use crate::error::{Error, Result};
use crate::graph::{generate_shifted_pair, load_bundle, save_bundle, GraphDataset, ShiftConfig};
use crate::model::{Arch, ModelSpec};
use crate::spectral::{bound_report, BoundConfig};
use crate::trainer::{run_ablation, train, ConfigDelta, GridPoint, Preset, TrainConfig, TrainReport, DEFAULT_TRAIN_FRACTION};
use crate::transition::{TransitionKind, TransitionScheme, DEFAULT_DIFFUSION_TRUNCATION};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "A2GNN_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "a2gnn", version, about = "Asymmetric propagation GNN for graph domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a labeled source and unlabeled target bundle, once per seed.
    Train(TrainArgs),
    /// Run an ablation grid against a base configuration.
    Ablate(AblateArgs),
    /// Evaluate the bound quantities for a source/target pair.
    Analyze(AnalyzeArgs),
    /// Write a synthetic shifted source/target pair as two bundles.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Args)]
struct PairArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
}

#[derive(Debug, Args)]
struct SchemeArgs {
    /// sym, no-loop, rw or diff.
    #[arg(long, default_value = "sym")]
    scheme: TransitionKind,
    /// Series truncation for the diffusion scheme.
    #[arg(long, default_value_t = DEFAULT_DIFFUSION_TRUNCATION)]
    diff_p: usize,
}

impl SchemeArgs {
    fn scheme(&self) -> TransitionScheme {
        TransitionScheme {
            kind: self.scheme,
            diffusion_truncation: self.diff_p,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// a2gnn, pt, p-t or t-p.
    #[arg(long, default_value = "a2gnn")]
    arch: Arch,
    /// Target propagation steps.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Source propagation steps [default: 0 for a2gnn, k otherwise].
    #[arg(long)]
    source_prop: Option<usize>,
    /// Transformation layers [default: 1].
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// mmd, adv or none.
    #[arg(long, default_value = "mmd")]
    align: AlignKind,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.005, allow_negative_numbers = true)]
    lr: f64,
    #[arg(long, default_value_t = 0.001, allow_negative_numbers = true)]
    wd: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// `auto` for the median heuristic or a comma-separated list of bandwidths.
    #[arg(long, default_value = "auto")]
    mmd_bandwidth: String,
    /// Rows per domain entering the MMD kernel sums.
    #[arg(long)]
    mmd_subsample: Option<usize>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    grl_scale: f64,
    #[arg(long, default_value_t = DEFAULT_DISC_HIDDEN)]
    disc_hidden: usize,
    /// Stop after this many epochs without a validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
}

impl ModelArgs {
    fn bandwidths(&self) -> Result<Bandwidths> {
        if self.mmd_bandwidth == "auto" {
            return Ok(Bandwidths::Median);
        }
        self.mmd_bandwidth
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("`{s}` is not a bandwidth")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Bandwidths::Fixed)
    }

    /// Builds and validates the configuration for data with the given shape.
    fn config(&self, feat_dim: usize, num_classes: usize) -> Result<TrainConfig> {
        let layers = self.layers.unwrap_or(1);
        let mut spec = match self.arch {
            Arch::A2gnn => ModelSpec {
                num_layers: layers,
                ..ModelSpec::a2gnn(feat_dim, self.hidden, num_classes, self.k)
            },
            arch => ModelSpec::symmetric(arch, feat_dim, self.hidden, num_classes, layers, self.k),
        };
        if let Some(s) = self.source_prop {
            spec.source_prop_layers = s;
        }
        let cfg = TrainConfig {
            align: self.align,
            alpha: self.alpha,
            lr: self.lr,
            weight_decay: self.wd,
            epochs: self.epochs,
            seeds: self.seeds.clone(),
            scheme: self.scheme.scheme(),
            patience: self.patience,
            train_fraction: self.train_fraction,
            mmd: MmdConfig {
                bandwidths: self.bandwidths()?,
                subsample_limit: self.mmd_subsample,
                ..MmdConfig::default()
            },
            grl_scale: self.grl_scale,
            disc_hidden: self.disc_hidden,
            ..TrainConfig::new(spec)
        };
        cfg.validate()?;
        if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction {} must lie in (0, 1)",
                cfg.train_fraction
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch JSON-lines log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// propagation-location, modules, k, alpha, schemes or architectures.
    #[arg(long, conflicts_with = "vary", required_unless_present = "vary")]
    preset: Option<Preset>,
    /// One field with its values, e.g. `k=0,1,3`.
    #[arg(long)]
    vary: Option<String>,
    /// JSON table path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    source_prop: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    d_vc: usize,
    #[arg(long, default_value_t = 1.0)]
    k_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 1.5)]
    shift: f64,
    #[arg(long, default_value_t = 1.2)]
    class_separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_tgt: PathBuf,
}

/// Runtime failures keep the crate error; usage failures only need a message.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    let outcome = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Analyze(a) => run_analyze(a),
        Command::GenSynth(a) => run_gen_synth(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) else {
        return;
    };
    if n > 0 {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_pair(pair: &PairArgs) -> std::result::Result<(GraphDataset, GraphDataset), Failure> {
    let load = |p: &Path| load_bundle(p).map_err(Failure::Runtime);
    Ok((load(&pair.source)?, load(&pair.target)?))
}

/// Checks the flags that do not depend on the data before anything is read.
fn precheck(model: &ModelArgs) -> std::result::Result<(), Failure> {
    model.config(1, 1).map(|_| ()).map_err(Failure::from)
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Wraps a result with the tool version and a wall-clock field that is the
/// only part allowed to differ between identical invocations.
fn envelope<T: Serialize>(kind: &str, body: &T) -> serde_json::Result<String> {
    serde_json::to_string_pretty(&json!({
        "tool": "a2gnn",
        "version": VERSION,
        "kind": kind,
        "timestamp": timestamp(),
        "result": body,
    }))
}

fn emit(path: Option<&Path>, text: &str) -> std::result::Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| io_failure(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(kind: &str, body: &T) -> std::result::Result<String, Failure> {
    envelope(kind, body).map_err(|e| Failure::Runtime(Error::Json(e)))
}

fn write_log(path: &Path, report: &TrainReport) -> std::result::Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut line = |v: serde_json::Value| writeln!(w, "{v}").map_err(|e| io_failure(path, e));
    line(json!({ "type": "config", "version": VERSION, "config": report.config }))?;
    for seed in &report.seeds {
        for r in &seed.epochs {
            line(json!({
                "type": "epoch",
                "seed": seed.seed,
                "epoch": r.epoch,
                "l_cls": r.loss.l_cls,
                "l_align": r.loss.l_align,
                "total": r.loss.total,
                "val_macro_f1": r.val.macro_f1,
                "val_micro_f1": r.val.micro_f1,
            }))?;
        }
    }
    w.flush().map_err(|e| io_failure(path, e))
}

fn run_train(a: TrainArgs) -> std::result::Result<(), Failure> {
    precheck(&a.model)?;
    let (source, target) = load_pair(&a.pair)?;
    let cfg = a.model.config(source.feat_dim(), source.num_classes)?;
    let report = train(&cfg, &source, &target).map_err(Failure::Runtime)?;
    if let Some(log) = &a.log {
        write_log(log, &report)?;
    }
    emit(a.out.as_deref(), &to_json("train", &report)?)
}

fn vary_grid(spec: &str) -> Result<Vec<GridPoint>> {
    let (field, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("`--vary {spec}` must look like field=v1,v2")))?;
    values
        .split(',')
        .map(|v| {
            let v = v.trim();
            Ok(GridPoint::new(format!("{field}={v}"), vec![ConfigDelta::parse(field, v)?]))
        })
        .collect()
}

fn run_ablate(a: AblateArgs) -> std::result::Result<(), Failure> {
    precheck(&a.model)?;
    let grid = match (&a.preset, &a.vary) {
        (Some(p), _) => p.grid(a.model.k),
        (None, Some(v)) => vary_grid(v)?,
        (None, None) => return Err(Failure::Usage("either --preset or --vary is required".into())),
    };
    let (source, target) = load_pair(&a.pair)?;
    let base = a.model.config(source.feat_dim(), source.num_classes)?;
    for point in &grid {
        point.resolve(&base).validate()?;
    }
    let table = run_ablation(&base, &grid, &source, &target).map_err(Failure::Runtime)?;
    if let Some(csv) = &a.csv {
        fs::write(csv, table.to_csv()).map_err(|e| io_failure(csv, e))?;
    }
    let body = json!({ "base": base, "grid": grid, "table": table });
    emit(a.out.as_deref(), &to_json("ablate", &body)?)
}

fn run_analyze(a: AnalyzeArgs) -> std::result::Result<(), Failure> {
    let cfg = BoundConfig {
        scheme: a.scheme.scheme(),
        k: a.k,
        source_prop: a.source_prop,
        layers: a.layers,
        delta: a.delta,
        d_vc: a.d_vc,
        k_lambda: a.k_lambda,
        tau: a.tau,
        epsilon: a.epsilon,
        seed: a.seed,
        ..BoundConfig::new(a.k, a.d_vc)
    };
    cfg.scheme.validate()?;
    if !(cfg.delta > 0.0 && cfg.delta <= 1.0) || cfg.d_vc == 0 {
        return Err(Failure::Usage("--delta must lie in (0, 1] and --d-vc must be positive".into()));
    }
    let (source, target) = load_pair(&a.pair)?;
    let report = bound_report(&source, &target, &cfg)?;
    emit(a.out.as_deref(), &to_json("analyze", &report)?)
}

fn run_gen_synth(a: GenSynthArgs) -> std::result::Result<(), Failure> {
    let cfg = ShiftConfig {
        nodes_per_domain: a.nodes,
        num_classes: a.classes,
        feat_dim: a.feat_dim,
        intra_edge_prob: a.p_in,
        inter_edge_prob: a.p_out,
        feature_shift_magnitude: a.shift,
        class_separation: a.class_separation,
        noise_std: a.noise,
        seed: a.seed,
    };
    cfg.validate()?;
    let (source, target) = generate_shifted_pair(&cfg)?;
    let meta = to_json("gen-synth", &cfg)?;
    for (ds, dir) in [(&source, &a.out_src), (&target, &a.out_tgt)] {
        save_bundle(ds, dir).map_err(Failure::Runtime)?;
        let path = dir.join("synth.json");
        fs::write(&path, format!("{meta}\n")).map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}
