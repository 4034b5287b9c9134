//! Command-line pipeline: each subcommand is a thin shell over the library.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use fusionrec::ctr::HeadKind;
use fusionrec::datagen::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetFiles, GenConfig,
};
use fusionrec::eval::{evaluate, latency_benchmark, scenario_test, BinMode};
use fusionrec::graph::{default_stopwords, graph_from_records, save_graph};
use fusionrec::train::{
    load_checkpoint, metrics_csv, prepare, save_checkpoint, train, ModelConfig, Variant,
};
use fusionrec::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Shared run configuration: a `[generator]` and a `[model]` table, both
/// optional. TOML, or JSON when the file ends in `.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GenConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.generator.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fusionrec",
    version,
    about = "Keyword and user query fusion recommender pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenerateData(GenerateArgs),
    /// Build the heterogeneous graph of a dataset's graph window.
    BuildGraph(BuildGraphArgs),
    /// Train one model and write its best checkpoint and metrics CSV.
    Train(TrainArgs),
    /// Test AUC and LogLoss of a checkpoint.
    Evaluate(EvalArgs),
    /// Per-scenario metrics of a checkpoint, binned by fusion weight.
    ScenarioTest(ScenarioArgs),
    /// Scoring latency of a checkpoint.
    Bench(BenchArgs),
    /// Train base, f, g and g&f and compare them.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Run config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output graph file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Run config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Model seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ablation variant: base, f, g or g&f.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Prediction head: mlp, attn or gru.
    #[arg(long)]
    pub head: Option<HeadKind>,
}

impl ModelArgs {
    fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?.model;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(h) = self.head {
            cfg.head = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output checkpoint; the metrics CSV goes next to it as `<stem>.metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV [default: `<ckpt stem>.eval.csv`].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV [default: `<ckpt stem>.scenario.csv`].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bin consecutive test batches by their mean weight instead of each example.
    #[arg(long)]
    pub batch_mode: bool,
    /// Test batch size for --batch-mode [default: the checkpoint's batch size].
    #[arg(long, requires = "batch_mode")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON summary [default: `<ckpt stem>.bench.json`].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of timed requests (at least 100).
    #[arg(long, default_value_t = 200)]
    pub requests: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    /// Candidate papers per request.
    #[arg(long, default_value_t = 100)]
    pub candidates: usize,
    /// Seed for candidate sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Run config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, metrics and the comparison table.
    #[arg(long)]
    pub out: PathBuf,
    /// Model seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prediction head: mlp, attn or gru.
    #[arg(long)]
    pub head: Option<HeadKind>,
}

/// Record of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub software_version: String,
    /// SHA-256 of the effective config as JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn hash_config<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(cfg)?)))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `dir/stem.suffix` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

struct Recorder {
    manifest: RunManifest,
}

impl Recorder {
    fn start<T: Serialize>(command: &str, cfg: &T, seed: Option<u64>) -> Result<Self> {
        Ok(Recorder {
            manifest: RunManifest {
                command: command.into(),
                software_version: env!("CARGO_PKG_VERSION").into(),
                config_hash: hash_config(cfg)?,
                seed,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0,
            },
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn dataset(&mut self, dir: &Path) -> Result<()> {
        for f in DatasetFiles::in_dir(dir).all() {
            self.input(f)?;
        }
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.manifest.finished_unix = now();
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    read_dataset(dir)
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.generator;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut rec = Recorder::start("generate-data", &cfg, Some(cfg.seed))?;
    let dataset = generate_dataset(&cfg)?;
    let files = write_dataset(&dataset, &a.out)?;
    for f in files.all() {
        rec.output(f);
    }
    println!(
        "wrote {} interaction records to {}",
        dataset.log.len(),
        a.out.display()
    );
    rec.finish(&a.out.join("manifest.json"))
}

fn build(a: &BuildGraphArgs) -> Result<()> {
    let dataset = load_data(&a.data)?;
    let mut rec = Recorder::start("build-graph", &dataset.config, None)?;
    rec.dataset(&a.data)?;
    let graph = graph_from_records(
        dataset.config.users,
        &dataset.graph_records(),
        &dataset.titles,
        Some(dataset.config.graph_window_end),
        default_stopwords(),
    )?;
    save_graph(&graph, &a.out)?;
    rec.output(&a.out);
    println!(
        "{} users, {} keywords, {} papers",
        graph.n_users(),
        graph.n_keywords(),
        graph.n_papers()
    );
    rec.finish(&sibling(&a.out, "manifest.json"))
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = a.model.model_config()?;
    let mut rec = Recorder::start("train", &cfg, Some(cfg.seed))?;
    if let Some(c) = &a.model.config {
        rec.input(c)?;
    }
    rec.dataset(&a.model.data)?;
    let prepared = prepare(&load_data(&a.model.data)?, &cfg)?;
    let out = train(&cfg, &prepared)?;
    save_checkpoint(&out.best, &a.out)?;
    let metrics = sibling(&a.out, "metrics.csv");
    write_atomic(&metrics, metrics_csv(&out.metrics).as_bytes())?;
    rec.output(&a.out);
    rec.output(&metrics);
    print!("{}", metrics_csv(&out.metrics));
    println!("best epoch {}", out.best_epoch);
    rec.finish(&sibling(&a.out, "manifest.json"))
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let mut rec = Recorder::start("evaluate", &model.config, Some(model.config.seed))?;
    rec.input(&a.ckpt)?;
    rec.dataset(&a.data)?;
    let prepared = prepare(&load_data(&a.data)?, &model.config)?;
    let r = evaluate(&model, &prepared)?;
    let csv = format!(
        "metric,value\nauc,{}\nlogloss,{}\nn_examples,{}\n",
        r.auc, r.logloss, r.n_examples
    );
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| sibling(&a.ckpt, "eval.csv"));
    write_atomic(&out, csv.as_bytes())?;
    rec.output(&out);
    println!(
        "AUC {:.4}  LogLoss {:.4}  n {}",
        r.auc, r.logloss, r.n_examples
    );
    rec.finish(&sibling(&out, "manifest.json"))
}

fn scenario_cmd(a: &ScenarioArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let mut rec = Recorder::start("scenario-test", &model.config, Some(model.config.seed))?;
    rec.input(&a.ckpt)?;
    rec.dataset(&a.data)?;
    let prepared = prepare(&load_data(&a.data)?, &model.config)?;
    let mode = if a.batch_mode {
        BinMode::Batch(a.batch_size.unwrap_or(model.config.batch_size))
    } else {
        BinMode::PerExample
    };
    let report = scenario_test(&model, &prepared, mode)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| sibling(&a.ckpt, "scenario.csv"));
    write_atomic(&out, report.to_csv().as_bytes())?;
    rec.output(&out);
    print!("{}", report.to_table());
    rec.finish(&sibling(&out, "manifest.json"))
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let mut rec = Recorder::start("bench", &model.config, Some(a.seed))?;
    rec.input(&a.ckpt)?;
    rec.dataset(&a.data)?;
    let prepared = prepare(&load_data(&a.data)?, &model.config)?;
    let s = latency_benchmark(
        &model,
        &prepared,
        a.requests,
        a.concurrency,
        a.candidates,
        a.seed,
    )?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| sibling(&a.ckpt, "bench.json"));
    let mut bytes = serde_json::to_vec_pretty(&s)?;
    bytes.push(b'\n');
    write_atomic(&out, &bytes)?;
    rec.output(&out);
    println!(
        "head {}  requests {}  candidates {}  concurrency {}  p50 {:.3} ms  p95 {:.3} ms  mean {:.3} ms",
        model.config.head, s.samples, s.candidates, s.concurrency, s.p50_ms, s.p95_ms, s.mean_ms
    );
    rec.finish(&sibling(&out, "manifest.json"))
}

/// File-name-safe variant label.
fn variant_file(v: Variant) -> &'static str {
    match v {
        Variant::Base => "base",
        Variant::Fusion => "f",
        Variant::Gnn => "g",
        Variant::GnnFusion => "gf",
    }
}

fn ablation_cmd(a: &AblationArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.model;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(h) = a.head {
        cfg.head = h;
    }
    cfg.validate()?;
    let mut rec = Recorder::start("ablation", &cfg, Some(cfg.seed))?;
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    rec.dataset(&a.data)?;
    let dataset = load_data(&a.data)?;
    fs::create_dir_all(&a.out)?;
    let mut csv = String::from("variant,auc,logloss,best_epoch\n");
    let mut table = String::from("Model  AUC     LogLoss\n");
    for v in Variant::ALL {
        let vc = ModelConfig {
            variant: v,
            ..cfg.clone()
        };
        let prepared = prepare(&dataset, &vc)?;
        let out = train(&vc, &prepared)?;
        let (auc, ll) = match out.best_epoch {
            0 => (f64::NAN, f64::NAN),
            e => (out.metrics[e - 1].test_auc, out.metrics[e - 1].test_logloss),
        };
        let ckpt = a.out.join(format!("{}.ckpt.json", variant_file(v)));
        save_checkpoint(&out.best, &ckpt)?;
        let metrics = a.out.join(format!("{}.metrics.csv", variant_file(v)));
        write_atomic(&metrics, metrics_csv(&out.metrics).as_bytes())?;
        rec.output(&ckpt);
        rec.output(&metrics);
        writeln!(csv, "{v},{auc},{ll},{}", out.best_epoch).unwrap();
        writeln!(table, "{:<6} {auc:.4}  {ll:.4}", v.as_str()).unwrap();
    }
    let path = a.out.join("ablation.csv");
    write_atomic(&path, csv.as_bytes())?;
    rec.output(&path);
    print!("{table}");
    rec.finish(&a.out.join("manifest.json"))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateData(a) => generate(a),
        Command::BuildGraph(a) => build(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => eval_cmd(a),
        Command::ScenarioTest(a) => scenario_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Ablation(a) => ablation_cmd(a),
    }
}

/// One-line, machine-parsable diagnostic.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error kind={} msg={msg:?}", e.kind())
}

/// Parses `argv` and runs the command; returns the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
