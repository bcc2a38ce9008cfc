//! Command-line entry points.
//!
//! Training options come from built-in defaults, then an optional TOML config
//! file, then `--key=value` flags, later sources winning. A config file holds
//! training keys at top level plus optional `[data]` (file paths) and
//! `[synthetic]` (generator parameters) tables.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    common_dim, conform, generate_synthetic, parse_examples, write_examples, DataError, Dataset, Split, SyntheticSpec,
};
use crate::error::ModelError;
use crate::hierarchy::{LabelHierarchy, LabelSet};
use crate::metrics::inconsistency_rate;
use crate::train::{evaluate, log_csv, predict_examples, report, train, Mode, Model, TrainConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(_) | DataError::Fraction(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Checkpoint(_) | ModelError::Num(_) => CliError::Checkpoint(e.to_string()),
            ModelError::Dimension { .. } => CliError::Checkpoint(e.to_string()),
            ModelError::InconsistentGold(_) | ModelError::Hierarchy(_) => CliError::Data(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "taxopolicy", version, about = "Hierarchical multi-label classification with a label-assignment policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one mode and write checkpoint, log, report and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled examples file.
    Eval(EvalArgs),
    /// Write greedy predictions for a features file.
    Predict(PredictArgs),
    /// Train all six modes on the same data and compare them.
    Ablate(TrainArgs),
    /// Write a synthetic dataset (hierarchy, train and test files).
    Generate(GenerateArgs),
    /// Check that predicted label sets are consistent with a hierarchy.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Hierarchy file, one `parent<TAB>child` edge per line.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Training examples file.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test examples file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Use the synthetic generator (with `[synthetic]` settings, if any).
    #[arg(long)]
    pub synthetic: bool,
}

/// Per-key overrides of [`TrainConfig`].
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rl_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub label_dim: Option<usize>,
    #[arg(long)]
    pub state_hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Labelled examples to evaluate.
    #[arg(long)]
    pub data: PathBuf,
    /// Training file used to rank label popularity; defaults to `--data`.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Also write the report as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Examples file; the label column may be empty.
    #[arg(long)]
    pub features: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML file with a `[synthetic]` table or top-level generator keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for hierarchy.tsv, train.tsv and test.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    /// Predictions file, `id<TAB>label,label,...` per line.
    #[arg(long)]
    pub predictions: PathBuf,
}

/// Data source section of a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub hierarchy: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Everything a training command needs, after merging all sources.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataPaths,
    pub synthetic: Option<SyntheticSpec>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_config(path: &Path) -> Result<toml::Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn from_table<T: for<'de> Deserialize<'de>>(table: toml::Table, what: &str) -> Result<T, CliError> {
    table.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("{what}: {e}")))
}

/// Relative data paths in a config file are taken relative to the file.
fn rebase(path: Option<PathBuf>, base: Option<&Path>) -> Option<PathBuf> {
    match (path, base) {
        (Some(p), Some(b)) if p.is_relative() => Some(b.join(p)),
        (p, _) => p,
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<(), CliError> {
        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<Mode>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(
            lambda, alpha, gamma, lr, weight_decay, batch_size, epochs, rl_epochs, seed, threshold,
            validation_fraction, workers, hidden_dim, embedding_dim, label_dim, state_hidden
        );
        if let Some(v) = self.max_steps {
            cfg.max_steps = Some(v);
        }
        Ok(())
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(config: Option<&Path>, data: &DataArgs, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut table = match config {
        Some(p) => read_config(p)?,
        None => toml::Table::new(),
    };
    let base = config.and_then(Path::parent);
    let paths: DataPaths = match table.remove("data") {
        Some(toml::Value::Table(t)) => from_table(t, "[data]")?,
        Some(_) => return Err(CliError::Config("`data` must be a table".into())),
        None => DataPaths::default(),
    };
    let synthetic: Option<SyntheticSpec> = match table.remove("synthetic") {
        Some(toml::Value::Table(t)) => Some(from_table(t, "[synthetic]")?),
        Some(_) => return Err(CliError::Config("`synthetic` must be a table".into())),
        None => None,
    };
    let mut train: TrainConfig = from_table(table, "config")?;
    overrides.apply(&mut train)?;
    train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let paths = DataPaths {
        hierarchy: data.hierarchy.clone().or(rebase(paths.hierarchy, base)),
        train: data.train.clone().or(rebase(paths.train, base)),
        test: data.test.clone().or(rebase(paths.test, base)),
    };
    let synthetic = match (synthetic, data.synthetic) {
        (Some(s), _) => Some(s),
        (None, true) => Some(SyntheticSpec::default()),
        (None, false) => None,
    };
    Ok(RunConfig { train, data: paths, synthetic })
}

/// Hex SHA-256 of some bytes.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loaded data plus content fingerprints of its sources.
pub struct LoadedData {
    pub dataset: Dataset,
    pub fingerprints: Vec<(String, String)>,
}

/// Loads files (or generates data), splits off validation and imputes missing values.
pub fn load_data(run: &RunConfig) -> Result<LoadedData, CliError> {
    let d = &run.data;
    let (mut dataset, fingerprints) = match (&d.hierarchy, &d.train, &d.test, &run.synthetic) {
        (Some(h), Some(tr), Some(te), _) => {
            let (h_text, tr_text, te_text) = (read(h)?, read(tr)?, read(te)?);
            let ds = Dataset::load(&h_text, &tr_text, &te_text)?;
            let fps = vec![
                ("hierarchy".to_string(), fingerprint(h_text.as_bytes())),
                ("train".to_string(), fingerprint(tr_text.as_bytes())),
                ("test".to_string(), fingerprint(te_text.as_bytes())),
            ];
            (ds, fps)
        }
        (None, None, None, Some(spec)) => {
            let ds = generate_synthetic(spec)?;
            let text = write_examples(&ds.examples, &ds.hierarchy, ds.feature_dim)?;
            let fps = vec![
                ("hierarchy".to_string(), fingerprint(ds.hierarchy.to_edge_list().as_bytes())),
                ("synthetic".to_string(), fingerprint(text.as_bytes())),
            ];
            (ds, fps)
        }
        (None, None, None, None) => {
            return Err(CliError::Config("no data: give --hierarchy/--train/--test, a [data] table or --synthetic".into()))
        }
        _ => return Err(CliError::Config("hierarchy, train and test files must be given together".into())),
    };
    if run.train.validation_fraction > 0.0 {
        dataset.split_validation(run.train.validation_fraction, run.train.seed)?;
    }
    dataset.impute_missing();
    Ok(LoadedData { dataset, fingerprints })
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let io_err = |e: io::Error| CliError::Failed(format!("{}: {e}", path.display()));
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Run description written before training starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub metric_log: PathBuf,
    pub fingerprints: std::collections::BTreeMap<String, String>,
    pub config: TrainConfig,
    pub data: DataPaths,
    pub synthetic: Option<SyntheticSpec>,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))
}

fn write_manifest(out: &Path, command: &str, run: &RunConfig, loaded: &LoadedData) -> Result<(), CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        seed: run.train.seed,
        checkpoint: out.join("model.ckpt"),
        metric_log: out.join("train_log.csv"),
        fingerprints: loaded.fingerprints.iter().cloned().collect(),
        config: run.train.clone(),
        data: run.data.clone(),
        synthetic: run.synthetic.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Failed(e.to_string()))?;
    write_atomic(&out.join("manifest.toml"), text.as_bytes())
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let run = resolve_config(args.config.as_deref(), &args.data, &args.overrides)?;
    let loaded = load_data(&run)?;
    ensure_dir(&args.out)?;
    write_manifest(&args.out, "train", &run, &loaded)?;
    let data = &loaded.dataset;
    let outcome = train(&run.train, data, &mut |row| {
        let _ = writeln!(io::stderr(), "epoch {:>3}  ebf {:.4}  macro {:.4}", row.epoch, row.ebf, row.macro_f1);
    })?;
    let mut ckpt = Vec::new();
    outcome.model.save(&mut ckpt)?;
    write_atomic(&args.out.join("model.ckpt"), &ckpt)?;
    write_atomic(&args.out.join("train_log.csv"), log_csv(&outcome.log).as_bytes())?;
    let rep = evaluate(&outcome.model, data, Split::Test, run.train.workers)?;
    write_atomic(&args.out.join("test_report.csv"), rep.to_csv().as_bytes())?;
    writeln!(out, "mode {} (kept epoch {})", run.train.mode, outcome.best_epoch).map_err(io_failed)?;
    write!(out, "{rep}").map_err(io_failed)?;
    Ok(())
}

fn io_failed(e: io::Error) -> CliError {
    CliError::Failed(e.to_string())
}

fn load_model(checkpoint: &Path, hierarchy: LabelHierarchy) -> Result<Model, CliError> {
    let bytes = fs::read(checkpoint).map_err(|e| CliError::Checkpoint(format!("{}: {e}", checkpoint.display())))?;
    Model::load(&mut bytes.as_slice(), hierarchy).map_err(|e| CliError::Checkpoint(e.to_string()))
}

/// Parses an examples file and fits it to the checkpoint's feature count.
fn examples_for_model(text: &str, model: &Model, split: Split) -> Result<Vec<crate::data::Example>, CliError> {
    let file = parse_examples(text, &model.hierarchy, split)?;
    let dim = model.config.feature_dim;
    if file.dim > dim || (file.declared && file.dim != dim) {
        return Err(CliError::Checkpoint(format!("checkpoint expects {dim} features, file has {}", file.dim)));
    }
    Ok(conform(file, dim)?)
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let hierarchy = LabelHierarchy::parse(&read(&args.hierarchy)?).map_err(|e| CliError::Data(e.to_string()))?;
    let model = load_model(&args.checkpoint, hierarchy.clone())?;
    let mut examples = examples_for_model(&read(&args.data)?, &model, Split::Test)?;
    if let Some(train_path) = &args.train {
        let file = parse_examples(&read(train_path)?, &hierarchy, Split::Train)?;
        let dim = common_dim(&[&file])?.max(model.config.feature_dim);
        examples.extend(conform(file, dim)?);
    }
    let mut dataset = Dataset { hierarchy, examples, feature_dim: model.config.feature_dim };
    if args.train.is_none() {
        // popularity falls back to the evaluated file's own counts
        for ex in &mut dataset.examples {
            ex.split = Split::Train;
        }
    }
    let split = if args.train.is_some() { Split::Test } else { Split::Train };
    let refs = dataset.split_examples(split);
    let records = predict_examples(&model, &refs, args.workers)?;
    if records.is_empty() {
        return Err(CliError::Data("no examples to evaluate".into()));
    }
    let rep = report(&records, &dataset)?;
    if let Some(path) = &args.out {
        write_atomic(path, rep.to_csv().as_bytes())?;
    }
    write!(out, "{rep}").map_err(io_failed)
}

fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let hierarchy = LabelHierarchy::parse(&read(&args.hierarchy)?).map_err(|e| CliError::Data(e.to_string()))?;
    let model = load_model(&args.checkpoint, hierarchy)?;
    let examples = examples_for_model(&read(&args.features)?, &model, Split::Test)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let lines: Vec<String> = pool.install(|| {
        use rayon::prelude::*;
        examples
            .par_iter()
            .map(|ex| {
                let labels = model.predict(&ex.features)?;
                let names = labels
                    .iter()
                    .map(|&l| model.hierarchy.name(l).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(ModelError::from)?;
                Ok(format!("{}\t{}\n", ex.features.id, names.join(",")))
            })
            .collect::<Result<_, ModelError>>()
    })?;
    let text = lines.concat();
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => out.write_all(text.as_bytes()).map_err(io_failed),
    }
}

fn cmd_ablate(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let run = resolve_config(args.config.as_deref(), &args.data, &args.overrides)?;
    let loaded = load_data(&run)?;
    ensure_dir(&args.out)?;
    write_manifest(&args.out, "ablate", &run, &loaded)?;
    let mut table = String::from("mode,micro_f1,macro_f1,ebf,inconsistency_rate\n");
    writeln!(out, "{:<10} {:>8} {:>8} {:>8}", "mode", "Micro", "Macro", "EBF").map_err(io_failed)?;
    for mode in Mode::ALL {
        let cfg = TrainConfig { mode, ..run.train.clone() };
        let outcome = train(&cfg, &loaded.dataset, &mut |_| {})?;
        let rep = evaluate(&outcome.model, &loaded.dataset, Split::Test, cfg.workers)?;
        table.push_str(&format!("{mode},{},{},{},{}\n", rep.micro_f1, rep.macro_f1, rep.ebf, rep.inconsistency_rate));
        writeln!(
            out,
            "{:<10} {:>8.2} {:>8.2} {:>8.2}",
            mode.as_str(),
            100.0 * rep.micro_f1,
            100.0 * rep.macro_f1,
            100.0 * rep.ebf
        )
        .map_err(io_failed)?;
    }
    write_atomic(&args.out.join("ablation.csv"), table.as_bytes())
}

fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(p) => {
            let mut t = read_config(p)?;
            match t.remove("synthetic") {
                Some(toml::Value::Table(s)) => from_table(s, "[synthetic]")?,
                Some(_) => return Err(CliError::Config("`synthetic` must be a table".into())),
                None => from_table(t, "config")?,
            }
        }
        None => SyntheticSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = args.$flag { spec.$field = v; })*};
    }
    set!(depth => depth, branching => branching, feature_dim => feature_dim, noise => noise,
         train_size => train, test_size => test, seed => seed);
    let ds = generate_synthetic(&spec)?;
    ensure_dir(&args.out)?;
    let train: Vec<_> = ds.split_examples(Split::Train).into_iter().cloned().collect();
    let test: Vec<_> = ds.split_examples(Split::Test).into_iter().cloned().collect();
    write_atomic(&args.out.join("hierarchy.tsv"), ds.hierarchy.to_edge_list().as_bytes())?;
    write_atomic(&args.out.join("train.tsv"), write_examples(&train, &ds.hierarchy, ds.feature_dim)?.as_bytes())?;
    write_atomic(&args.out.join("test.tsv"), write_examples(&test, &ds.hierarchy, ds.feature_dim)?.as_bytes())?;
    writeln!(
        out,
        "{} labels, {} train / {} test examples, {} features",
        ds.hierarchy.len(),
        train.len(),
        test.len(),
        ds.feature_dim
    )
    .map_err(io_failed)
}

fn cmd_audit(args: &AuditArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let hierarchy = LabelHierarchy::parse(&read(&args.hierarchy)?).map_err(|e| CliError::Data(e.to_string()))?;
    let text = read(&args.predictions)?;
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, labels) = line.split_once('\t').unwrap_or((line, ""));
        let mut set = LabelSet::new();
        for name in labels.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let l = hierarchy
                .id(name)
                .map_err(|_| CliError::Data(format!("line {}: unknown label {name:?}", i + 1)))?;
            set.insert(l);
        }
        if !hierarchy.is_consistent(&set) {
            bad.push(id.to_string());
        }
        records.push(crate::metrics::PredictionRecord { id: id.to_string(), predicted: set, gold: LabelSet::new() });
    }
    let rate = inconsistency_rate(&records, &hierarchy);
    writeln!(out, "{} predictions, {} inconsistent ({:.2}%)", records.len(), bad.len(), 100.0 * rate)
        .map_err(io_failed)?;
    for id in &bad {
        writeln!(out, "inconsistent\t{id}").map_err(io_failed)?;
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} inconsistent predictions", bad.len())))
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Generate(a) => cmd_generate(a, out),
        Command::Audit(a) => cmd_audit(a, out),
    }
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
