//! Command-line front end: synth → split → train → predict → eval pipelines.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
//! (objective decreased beyond tolerance during a fit).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{RelationData, SideInfo};
use crate::eval::{self, EvalReport};
use crate::io::{self, FORMAT_VERSION};
use crate::optim::{self, AblationMode, SweepSchedule, Trainer};
use crate::state::{FitTrace, HyperParams, LatentState};
use crate::synth::{self, BlockSpec, DEFAULT_NOISE};

/// Per-sweep tolerance on objective decrease before a fit counts as a numeric failure.
pub const MONOTONE_TOL: f64 = 1e-8;

/// Environment variable capping worker threads for repeated runs.
pub const THREADS_ENV: &str = "LFBM_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage_err(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lfbm", version, about = "Latent factor blockmodel for binary relational data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// 200 objects, three planted clusters; fits use k=3, d=2, eta0=0.2, lambda=1.
    #[value(name = "paper-3cluster")]
    ThreeCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    /// 10% held out, 5 repeats.
    #[value(name = "synthetic-90-10")]
    Synthetic9010,
    /// 20% held out, 10 repeats.
    #[value(name = "real-80-20")]
    Real8020,
}

impl Protocol {
    fn holdout(self) -> f64 {
        match self {
            Protocol::Synthetic9010 => 0.1,
            Protocol::Real8020 => 0.2,
        }
    }

    fn repeats(self) -> usize {
        match self {
            Protocol::Synthetic9010 => 5,
            Protocol::Real8020 => 10,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate planted-block data: edge list plus planted labels.
    Synth(SynthArgs),
    /// Split an edge list into train and held-out test edge lists.
    Split(SplitArgs),
    /// Fit the model on a training edge list and write a checkpoint.
    Train(TrainArgs),
    /// Score pairs with a fitted checkpoint.
    Predict(PredictArgs),
    /// AUC and ROC of scores against labelled test pairs.
    #[command(name = "eval-auc")]
    EvalAuc(EvalAucArgs),
    /// NMI between two label files.
    #[command(name = "eval-nmi")]
    EvalNmi(EvalNmiArgs),
    /// Dense matrix of predicted link probabilities.
    Reconstruct(ReconstructArgs),
    /// Compare full, factor-only and block-only fits on repeated splits.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Comma-separated cluster sizes (when no preset is given).
    #[arg(long)]
    sizes: Option<String>,
    /// Rows separated by `;`, entries by `,`, e.g. "1,0;0,1".
    #[arg(long)]
    link_prob: Option<String>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "edges.tsv")]
    out: PathBuf,
    #[arg(long, default_value = "labels.txt")]
    labels_out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train.tsv")]
    train_out: PathBuf,
    #[arg(long, default_value = "test.tsv")]
    test_out: PathBuf,
}

/// Hyperparameter flags shared by `train` and `ablate`; unset flags fall back
/// to the config file, then the preset, then library defaults.
#[derive(Debug, Clone, Args)]
struct HyperFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long)]
    lambda_v: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    lambda_beta: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    mode: Option<AblationMode>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    side: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperFlags,
    #[arg(long, default_value = "checkpoint.json")]
    checkpoint: PathBuf,
    /// Optional JSON with the config echo and the full fit trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Also write the dense probability matrix as `reconstruction.csv`.
    #[arg(long)]
    emit_reconstruction: bool,
    /// Directory for relative output paths.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `i<TAB>j` lines; edge lists are accepted and their values ignored.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    side: Option<PathBuf>,
    #[arg(long, default_value = "scores.tsv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalAucArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Metrics JSON path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalNmiArgs {
    first: PathBuf,
    second: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    side: Option<PathBuf>,
    #[arg(long, default_value = "reconstruction.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Edge list; with `--preset paper-3cluster` and no input, data is generated.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Planted labels for NMI.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    side: Option<PathBuf>,
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    #[arg(long)]
    noise: Option<f64>,
    #[command(flatten)]
    hyper: HyperFlags,
    #[arg(long)]
    emit_roc: bool,
    #[arg(long, default_value = "ablation.json")]
    out: PathBuf,
    /// Directory for relative output paths.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Settings for a fitting run, loadable from a JSON `--config` file.
/// Hyperparameter fields sit at the top level next to the run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub hyper: HyperParams<f64>,
    pub train: Option<PathBuf>,
    pub side: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub holdout_frac: f64,
    pub repeats: usize,
    pub mode: AblationMode,
    pub output_dir: Option<PathBuf>,
    pub emit_roc: bool,
    pub emit_reconstruction: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            train: None,
            side: None,
            labels: None,
            holdout_frac: 0.1,
            repeats: 1,
            mode: AblationMode::Full,
            output_dir: None,
            emit_roc: false,
            emit_reconstruction: false,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), String> {
        self.hyper.check().map_err(|e| e.to_string())?;
        if self.repeats == 0 {
            return Err("repeats must be at least 1".into());
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err("holdout fraction must lie in (0, 1)".into());
        }
        if self.train.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            return Err("train path is empty".into());
        }
        Ok(())
    }
}

/// Hyperparameters used by the three-cluster synthetic experiment.
pub fn three_cluster_hyperparams() -> HyperParams<f64> {
    HyperParams {
        d: 2,
        k: 3,
        lambda_u: 1.0,
        lambda_v: 1.0,
        lambda_c: 1.0,
        lambda_beta: 1.0,
        eta0: 0.2,
        ..HyperParams::default()
    }
}

fn resolve_config(flags: &HyperFlags) -> Result<RunConfig, CliError> {
    let mut base = RunConfig::default();
    if flags.preset == Some(Preset::ThreeCluster) {
        base.hyper = three_cluster_hyperparams();
    }
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| usage_err(format!("config {}: {e}", path.display())))?;
            let Value::Object(fields) = file else {
                return Err(usage_err(format!("config {}: expected a JSON object", path.display())));
            };
            let mut merged = serde_json::to_value(&base).map_err(data_err)?;
            merged.as_object_mut().expect("config serializes to an object").extend(fields);
            serde_json::from_value(merged).map_err(|e| usage_err(format!("config {}: {e}", path.display())))?
        }
        None => base,
    };
    let hp = &mut cfg.hyper;
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = flags.$field { hp.$field = v; } )* };
    }
    apply!(seed, d, k, eta0, lambda_u, lambda_v, lambda_c, lambda_beta, max_sweeps, rel_tol);
    if let Some(mode) = flags.mode {
        cfg.mode = mode;
    }
    Ok(cfg)
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => std::fs::create_dir_all(parent).map_err(|e| data_err(format!("{}: {e}", parent.display()))),
        None => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Resolves a relative output path against the configured output directory.
fn output_path(cfg: &RunConfig, path: &Path) -> PathBuf {
    match &cfg.output_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn read_edges(path: &Path) -> Result<RelationData, CliError> {
    io::parse_edge_list(open(path)?).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn read_side(path: Option<&PathBuf>) -> Result<Option<SideInfo<f64>>, CliError> {
    path.map(|p| io::read_side_info(open(p)?).map_err(|e| data_err(format!("{}: {e}", p.display()))))
        .transpose()
}

fn write_json(value: &Value, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    match path {
        Some(p) => {
            let mut out = create(p)?;
            writeln!(out, "{text}").and_then(|_| out.flush()).map_err(data_err)
        }
        None => {
            let mut out = std::io::stdout().lock();
            // A closed pipe downstream is not a failure of the command.
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(data_err(e)),
                _ => Ok(()),
            }
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Metrics document skeleton: format version, command, config echo and seed.
fn metrics_doc(command: &str, config: Value, seed: Option<u64>) -> serde_json::Map<String, Value> {
    let mut doc = serde_json::Map::new();
    doc.insert("format_version".into(), json!(FORMAT_VERSION));
    doc.insert("command".into(), json!(command));
    doc.insert("config".into(), config);
    doc.insert("seed".into(), json!(seed));
    doc
}

fn hyper_echo(cfg: &RunConfig) -> Value {
    json!({
        "hyperparams": cfg.hyper,
        "mode": cfg.mode,
        "schedule": SweepSchedule::default(),
    })
}

fn check_side_dims(side: Option<&SideInfo<f64>>, state: &LatentState<f64>) -> Result<(), CliError> {
    match side {
        Some(s) if s.dim() != state.m() => Err(CliError::Data(format!(
            "side information has dimension {}, checkpoint expects {}",
            s.dim(),
            state.m()
        ))),
        _ => Ok(()),
    }
}

fn ensure_monotone(trace: &FitTrace<f64>, what: &str) -> Result<(), CliError> {
    match trace.first_violation(MONOTONE_TOL) {
        Some(t) => Err(CliError::Numeric(format!(
            "{what}: objective decreased from {} to {} at sweep {}",
            trace.objective_per_sweep[t],
            trace.objective_per_sweep[t + 1],
            t + 1
        ))),
        None => Ok(()),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, sep: char) -> Result<Vec<T>, CliError> {
    text.split(sep)
        .map(|f| f.trim().parse::<T>().map_err(|_| usage_err(format!("cannot parse `{f}`"))))
        .collect()
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let noise = args.noise.unwrap_or(DEFAULT_NOISE);
    let spec = match (args.preset, &args.sizes, &args.link_prob) {
        (Some(Preset::ThreeCluster), None, None) => BlockSpec::three_cluster_preset(noise, args.seed),
        (None, Some(sizes), Some(probs)) => BlockSpec {
            sizes: parse_list(sizes, ',')?,
            link_prob: probs.split(';').map(|row| parse_list(row, ',')).collect::<Result<_, _>>()?,
            noise,
            seed: args.seed,
        },
        _ => return Err(usage_err("give either --preset or both --sizes and --link-prob")),
    };
    spec.check().map_err(usage_err)?;
    let (data, labels) = synth::generate(&spec).map_err(usage_err)?;
    let mut out = create(&args.out)?;
    io::write_edge_list(&data, &mut out).map_err(data_err)?;
    out.flush().map_err(data_err)?;
    let mut out = create(&args.labels_out)?;
    io::write_labels(&labels, &mut out).map_err(data_err)?;
    out.flush().map_err(data_err)
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let holdout = args.holdout.or(args.protocol.map(Protocol::holdout)).unwrap_or(0.1);
    let data = read_edges(&args.input)?;
    let sp = synth::split(&data, holdout, args.seed).map_err(data_err)?;
    let mut out = create(&args.train_out)?;
    io::write_edge_list(&sp.train, &mut out).map_err(data_err)?;
    out.flush().map_err(data_err)?;
    let mut out = create(&args.test_out)?;
    io::write_entries(data.n(), &sp.test, &mut out).map_err(data_err)?;
    out.flush().map_err(data_err)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.hyper)?;
    if args.train.is_some() {
        cfg.train = args.train.clone();
    }
    if args.side.is_some() {
        cfg.side = args.side.clone();
    }
    if args.output_dir.is_some() {
        cfg.output_dir = args.output_dir.clone();
    }
    cfg.emit_reconstruction |= args.emit_reconstruction;
    cfg.check().map_err(usage_err)?;
    let train_path = cfg.train.clone().ok_or_else(|| usage_err("train requires --train or a config `train` path"))?;
    let data = read_edges(&train_path)?;
    let side = read_side(cfg.side.as_ref())?;
    let trainer = Trainer::new(&data, &cfg.hyper, side.as_ref(), SweepSchedule::default(), cfg.mode)
        .map_err(data_err)?;
    eprintln!("sweep 0: objective {}", trainer.trace().objective_per_sweep[0]);
    let (state, trace) = trainer
        .run_with(|t, objective| eprintln!("sweep {t}: objective {objective}"))
        .map_err(data_err)?;
    let checkpoint = output_path(&cfg, &args.checkpoint);
    ensure_parent(&checkpoint)?;
    io::save_checkpoint(&state, &trace, &checkpoint).map_err(data_err)?;
    if cfg.emit_reconstruction {
        let matrix = eval::reconstruct(&state, side.as_ref()).map_err(data_err)?;
        let mut out = create(&output_path(&cfg, Path::new("reconstruction.csv")))?;
        io::write_matrix_csv(&matrix, &mut out).map_err(data_err)?;
        out.flush().map_err(data_err)?;
    }
    if let Some(path) = &args.trace_out {
        let path = &output_path(&cfg, path);
        let mut config = hyper_echo(&cfg);
        config["train"] = json!(path_str(&train_path));
        config["side"] = json!(cfg.side.as_deref().map(path_str));
        let mut doc = metrics_doc("train", config, Some(cfg.hyper.seed));
        doc.insert("monotone".into(), json!(trace.is_monotone(MONOTONE_TOL)));
        doc.insert("trace".into(), serde_json::to_value(&trace).map_err(data_err)?);
        write_json(&Value::Object(doc), Some(path))?;
    }
    ensure_monotone(&trace, "train")
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let (state, _) = io::load_checkpoint::<f64>(&args.checkpoint).map_err(data_err)?;
    let side = read_side(args.side.as_ref())?;
    check_side_dims(side.as_ref(), &state)?;
    let pairs = io::read_pairs(open(&args.pairs)?).map_err(data_err)?;
    let scores = optim::predict(&state, &pairs, side.as_ref()).map_err(data_err)?;
    let mut out = create(&args.out)?;
    io::write_scores(&pairs, &scores, &mut out).map_err(data_err)?;
    out.flush().map_err(data_err)
}

fn cmd_eval_auc(args: EvalAucArgs) -> Result<(), CliError> {
    let scored: HashMap<(usize, usize), f64> = io::read_scores(open(&args.scores)?)
        .map_err(data_err)?
        .into_iter()
        .map(|(i, j, s)| ((i, j), s))
        .collect();
    let test = read_edges(&args.test)?;
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for e in test.entries() {
        let s = scored
            .get(&(e.i, e.j))
            .ok_or_else(|| CliError::Data(format!("no score for test pair ({}, {})", e.i, e.j)))?;
        scores.push(*s);
        labels.push(e.s);
    }
    let auc = eval::auc(&scores, &labels).map_err(data_err)?;
    let roc = eval::roc(&scores, &labels).map_err(data_err)?;
    let config = json!({ "scores": path_str(&args.scores), "test": path_str(&args.test) });
    let mut doc = metrics_doc("eval-auc", config, None);
    doc.insert("auc".into(), json!(auc));
    doc.insert("n_test".into(), json!(labels.len()));
    doc.insert("n_positive".into(), json!(labels.iter().filter(|&&l| l).count()));
    doc.insert("roc".into(), json!(roc));
    write_json(&Value::Object(doc), args.out.as_deref())
}

fn cmd_eval_nmi(args: EvalNmiArgs) -> Result<(), CliError> {
    let a = io::read_labels(open(&args.first)?).map_err(data_err)?;
    let b = io::read_labels(open(&args.second)?).map_err(data_err)?;
    let nmi = eval::nmi(&a, &b).map_err(data_err)?;
    let config = json!({ "first": path_str(&args.first), "second": path_str(&args.second) });
    let mut doc = metrics_doc("eval-nmi", config, None);
    doc.insert("nmi".into(), json!(nmi));
    write_json(&Value::Object(doc), args.out.as_deref())
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<(), CliError> {
    let (state, _) = io::load_checkpoint::<f64>(&args.checkpoint).map_err(data_err)?;
    let side = read_side(args.side.as_ref())?;
    check_side_dims(side.as_ref(), &state)?;
    let matrix = eval::reconstruct(&state, side.as_ref()).map_err(data_err)?;
    let mut out = create(&args.out)?;
    io::write_matrix_csv(&matrix, &mut out).map_err(data_err)?;
    out.flush().map_err(data_err)
}

/// One mode's result on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub auc: f64,
    pub nmi: Option<f64>,
    pub holdout_log_likelihood: f64,
    pub final_objective: f64,
    pub sweeps: usize,
    pub monotone: bool,
    pub objective_per_sweep: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc: Option<Vec<(f64, f64)>>,
}

fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |cap| cap.min(available.max(1)))
}

/// Splits `data` with `seed`, then fits and evaluates every ablation mode
/// from an initial state drawn with the same seed.
pub fn run_repeat(
    data: &RelationData,
    side: Option<&SideInfo<f64>>,
    planted: Option<&[usize]>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Vec<(AblationMode, ModeResult)>, CliError> {
    let emit_roc = cfg.emit_roc;
    let sp = synth::split(data, cfg.holdout_frac, seed).map_err(data_err)?;
    let hp = HyperParams { seed, ..cfg.hyper.clone() };
    AblationMode::ALL
        .iter()
        .map(|&mode| {
            let (state, trace) =
                optim::fit(&sp.train, &hp, side, &SweepSchedule::default(), mode).map_err(data_err)?;
            // Labels carry no information when the block term is disabled.
            let nmi_labels = if mode == AblationMode::FactorOnly { None } else { planted };
            let report: EvalReport = eval::evaluate(&state, &sp.test, side, nmi_labels).map_err(data_err)?;
            Ok((
                mode,
                ModeResult {
                    auc: report.auc,
                    nmi: report.nmi,
                    holdout_log_likelihood: report.holdout_log_likelihood,
                    final_objective: trace.final_objective().unwrap_or(f64::NAN),
                    sweeps: trace.sweeps(),
                    monotone: trace.is_monotone(MONOTONE_TOL),
                    objective_per_sweep: trace.objective_per_sweep,
                    roc: emit_roc.then_some(report.roc),
                },
            ))
        })
        .collect()
}

/// One repeat on freshly generated three-cluster data: `seed` drives the
/// generator, the split and the initial state.
pub fn preset_repeat(noise: f64, cfg: &RunConfig, seed: u64) -> Result<Vec<(AblationMode, ModeResult)>, CliError> {
    let (data, labels) = synth::generate(&BlockSpec::three_cluster_preset(noise, seed)).map_err(usage_err)?;
    run_repeat(&data, None, Some(&labels), cfg, seed)
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&args.hyper)?;
    if let Some(p) = args.protocol {
        cfg.holdout_frac = p.holdout();
        cfg.repeats = p.repeats();
    }
    if let Some(h) = args.holdout {
        cfg.holdout_frac = h;
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    if args.input.is_some() {
        cfg.train = args.input.clone();
    }
    if args.labels.is_some() {
        cfg.labels = args.labels.clone();
    }
    if args.side.is_some() {
        cfg.side = args.side.clone();
    }
    cfg.emit_roc |= args.emit_roc;
    if args.output_dir.is_some() {
        cfg.output_dir = args.output_dir.clone();
    }
    cfg.check().map_err(usage_err)?;

    let noise = args.noise.unwrap_or(DEFAULT_NOISE);
    let source = match (&cfg.train, args.hyper.preset) {
        (Some(path), _) => {
            let planted = match &cfg.labels {
                Some(p) => Some(io::read_labels(open(p)?).map_err(data_err)?),
                None => None,
            };
            let data = read_edges(path)?;
            if let Some(labels) = &planted {
                if labels.len() != data.n() {
                    return Err(CliError::Data(format!("{} labels for {} objects", labels.len(), data.n())));
                }
            }
            Some((data, planted))
        }
        (None, Some(Preset::ThreeCluster)) => None,
        (None, None) => return Err(usage_err("ablate requires --input or --preset")),
    };
    let side = read_side(cfg.side.as_ref())?;

    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|r| cfg.hyper.seed.wrapping_add(r)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let results: Vec<Vec<(AblationMode, ModeResult)>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| match &source {
                Some((data, planted)) => run_repeat(data, side.as_ref(), planted.as_deref(), &cfg, seed),
                None => preset_repeat(noise, &cfg, seed),
            })
            .collect::<Result<_, _>>()
    })?;

    let mut repeats = Vec::new();
    for (seed, modes) in seeds.iter().zip(&results) {
        let mut entry = serde_json::Map::new();
        entry.insert("seed".into(), json!(seed));
        for (mode, result) in modes {
            entry.insert(mode.to_string(), serde_json::to_value(result).map_err(data_err)?);
        }
        repeats.push(Value::Object(entry));
    }
    let mut summary = serde_json::Map::new();
    for (idx, mode) in AblationMode::ALL.iter().enumerate() {
        let per: Vec<&ModeResult> = results.iter().map(|r| &r[idx].1).collect();
        let mean = |f: &dyn Fn(&ModeResult) -> Option<f64>| {
            let vals: Vec<f64> = per.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        summary.insert(
            mode.to_string(),
            json!({
                "mean_auc": mean(&|r| Some(r.auc)),
                "mean_nmi": mean(&|r| r.nmi),
                "mean_holdout_log_likelihood": mean(&|r| Some(r.holdout_log_likelihood)),
                "all_monotone": per.iter().all(|r| r.monotone),
            }),
        );
    }

    let mut config = hyper_echo(&cfg);
    config["input"] = json!(cfg.train.as_deref().map(path_str));
    config["labels"] = json!(cfg.labels.as_deref().map(path_str));
    config["side"] = json!(cfg.side.as_deref().map(path_str));
    config["holdout_frac"] = json!(cfg.holdout_frac);
    config["repeats"] = json!(cfg.repeats);
    if cfg.train.is_none() {
        config["preset"] = json!("paper-3cluster");
        config["noise"] = json!(noise);
    }
    let mut doc = metrics_doc("ablate", config, Some(cfg.hyper.seed));
    doc.insert("summary".into(), Value::Object(summary));
    doc.insert("repeats".into(), Value::Array(repeats));
    write_json(&Value::Object(doc), Some(&output_path(&cfg, &args.out)))?;

    if results.iter().flatten().any(|(_, r)| !r.monotone) {
        return Err(CliError::Numeric("a fit violated monotone ascent".into()));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::EvalAuc(a) => cmd_eval_auc(a),
        Command::EvalNmi(a) => cmd_eval_nmi(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("lfbm: {err}");
            err.exit_code()
        }
    }
}
