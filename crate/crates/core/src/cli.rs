//! Command-line front end. Every subcommand reads dataset files and writes
//! new files; inputs are never modified.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::{lp_predict, LpConfig};
use crate::error::{Error, Result};
use crate::eval::{run_experiment, ExperimentOptions, MethodConfig};
use crate::hetgraph::{load_graph_files, load_labels_file, HetGraph, LabelSet, ObjectTypeId};
use crate::nn::Activation;
use crate::sampler::{two_step_batch, Variant};
use crate::synth::{self, generate_planted, PlantedSpec};
use crate::trainer::{predict_labels, train_nep, Model, TrainConfig};

pub const SEED_ENV: &str = "NEP_SEED";

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "loss.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const LAST_GOOD_FILE: &str = "last_good.ckpt";

#[derive(Debug, Parser)]
#[command(name = "nep", version, about = "Semi-supervised node classification on heterogeneous networks")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single thread, no prefetching; runs are bitwise reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, loss log and effective config.
    Train(TrainCmd),
    /// Repeated split/train/evaluate rounds for one method.
    Eval(EvalCmd),
    /// Label propagation on the type-suppressed graph.
    Baseline(BaselineCmd),
    /// Dump sampled path batches as text.
    #[command(visible_alias = "sample-paths")]
    Sample(SampleCmd),
    /// Generate a planted-partition dataset.
    Synth(SynthCmd),
    /// Predict classes of all targeted objects with a trained model.
    Predict(PredictCmd),
    /// Write the embedding table of a trained model.
    ExportEmbeddings(ExportCmd),
}

/// Dataset files. `--data DIR` supplies the standard file names; explicit
/// paths override them.
#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// Directory holding nodes.tsv, edges.tsv, schema.toml and labels.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `id<TAB>object_type` lines.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// `src_id<TAB>link_type<TAB>dst_id` lines.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// TOML declaration of object and link types.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// `id<TAB>class` lines.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

struct DatasetPaths {
    nodes: PathBuf,
    edges: PathBuf,
    schema: PathBuf,
    labels: PathBuf,
}

impl DatasetArgs {
    fn resolve(&self, need_labels: bool) -> Result<DatasetPaths> {
        let pick = |explicit: &Option<PathBuf>, default: &str, flag: &str| -> Result<PathBuf> {
            match (explicit, &self.data) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(dir)) => Ok(dir.join(default)),
                (None, None) => Err(Error::Config(format!("missing --{flag} (or --data)"))),
            }
        };
        let paths = DatasetPaths {
            nodes: pick(&self.nodes, synth::NODES_FILE, "nodes")?,
            edges: pick(&self.edges, synth::EDGES_FILE, "edges")?,
            schema: pick(&self.schema, synth::SCHEMA_FILE, "schema")?,
            labels: if need_labels {
                pick(&self.labels, synth::LABELS_FILE, "labels")?
            } else {
                PathBuf::new()
            },
        };
        let mut required = vec![&paths.schema, &paths.nodes, &paths.edges];
        if need_labels {
            required.push(&paths.labels);
        }
        for p in required {
            ensure_exists(p)?;
        }
        Ok(paths)
    }
}

fn ensure_exists(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, io::Error::from(io::ErrorKind::NotFound)))
    }
}

/// Training flags. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// basic, target or label.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Drop every nonlinearity.
    #[arg(long)]
    pub linear: bool,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Weight of the propagation loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Outer iterations.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Guided paths per iteration.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Longest sampled path.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Labeled objects per step (default: batch size, capped at the label count).
    #[arg(long)]
    pub supervised_batch: Option<usize>,
    /// Falls back to the config file, then to the NEP_SEED variable.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub targeted_type: Option<String>,
    /// Early-stop patience in evaluations on a held-out tenth of the labels.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Layers per link module.
    #[arg(long)]
    pub module_depth: Option<usize>,
    /// Link-module activation: identity, sigmoid or relu.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Hidden layers of the classifier head.
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    /// Sample on a helper thread.
    #[arg(long)]
    pub prefetch: bool,
}

impl TrainArgs {
    /// Config file, then flags, then the seed fallback chain.
    pub fn resolve(&self, deterministic: bool) -> Result<TrainConfig> {
        let (mut c, file_has_seed) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let has_seed = text
                    .parse::<toml::Table>()
                    .map(|t| t.contains_key("seed"))
                    .unwrap_or(false);
                (TrainConfig::from_toml(&text)?, has_seed)
            }
            None => (TrainConfig::default(), false),
        };
        macro_rules! set {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    c.$field = v;
                }
            };
        }
        set!(variant, self.variant);
        set!(dim, self.dim);
        set!(lambda, self.lambda);
        set!(iterations, self.gamma);
        set!(batch_size, self.batch);
        set!(max_len, self.max_len);
        set!(learning_rate, self.lr);
        set!(module_depth, self.module_depth);
        set!(module_activation, self.activation);
        set!(hidden_layers, self.hidden_layers);
        if self.linear {
            c.linear = true;
        }
        if self.prefetch {
            c.prefetch = true;
        }
        if deterministic {
            c.prefetch = false;
        }
        if self.supervised_batch.is_some() {
            c.supervised_batch = self.supervised_batch;
        }
        if self.targeted_type.is_some() {
            c.targeted_type = self.targeted_type.clone();
        }
        if self.patience.is_some() {
            c.early_stop_patience = self.patience;
        }
        match (self.seed, file_has_seed) {
            (Some(s), _) => c.seed = s,
            (None, true) => {}
            (None, false) => {
                if let Ok(text) = std::env::var(SEED_ENV) {
                    c.seed = text
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{SEED_ENV}=`{text}` is not a seed")))?;
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the embedding table.
    #[arg(long)]
    pub export_embeddings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Nep,
    Lp,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum, default_value = "nep")]
    pub method: Method,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub lp: LpArgs,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Seed of the first split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Labels of every targeted object, for accuracy beyond the test split.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report file; the table goes to stdout either way.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LpArgs {
    #[arg(long, default_value_t = LpConfig::default().alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = LpConfig::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = LpConfig::default().tol)]
    pub tol: f64,
}

impl LpArgs {
    fn config(&self) -> LpConfig {
        LpConfig {
            alpha: self.alpha,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Args)]
pub struct BaselineCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub lp: LpArgs,
    #[arg(long)]
    pub targeted_type: Option<String>,
    /// Predictions file (`id<TAB>class`); stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value = "label")]
    pub variant: Variant,
    /// Number of batches.
    #[arg(short = 'n', long, default_value_t = 10)]
    pub num_batches: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub max_len: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub targeted_type: Option<String>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// TOML planted-graph description; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub homophily: Option<f64>,
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportCmd {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// 2 for usage, configuration and IO problems, 1 for everything else. A
/// closed stdout (e.g. piped into `head`) is not a failure.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Stream(e) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Error::Io { .. }
        | Error::Stream(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::Config(_)
        | Error::Checkpoint(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // a pool that already exists (e.g. a second call in-process) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let det = cli.deterministic;
    match cli.command {
        Command::Train(c) => cmd_train(&c, det),
        Command::Eval(c) => cmd_eval(&c, det),
        Command::Baseline(c) => cmd_baseline(&c),
        Command::Sample(c) => cmd_sample(&c),
        Command::Synth(c) => cmd_synth(&c),
        Command::Predict(c) => cmd_predict(&c),
        Command::ExportEmbeddings(c) => cmd_export(&c),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// File when given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// The named type, or the type of the first labeled object.
fn targeted_type(graph: &HetGraph, labels: &Path, named: Option<&str>) -> Result<ObjectTypeId> {
    let schema = graph.schema();
    if let Some(name) = named {
        return schema
            .object_type(name)
            .ok_or_else(|| Error::UnknownObjectType(name.into()));
    }
    let f = BufReader::new(File::open(labels).map_err(|e| Error::io(labels, e))?);
    for line in f.lines() {
        let line = line.map_err(|e| Error::io(labels, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id = line.split('\t').next().unwrap_or_default();
        let v = graph
            .index_of(id)
            .ok_or_else(|| Error::UnknownObject(id.into()))?;
        return Ok(graph.object_type(v));
    }
    Err(Error::EmptyLabels)
}

fn load_dataset(data: &DatasetArgs, named_type: Option<&str>) -> Result<(HetGraph, LabelSet)> {
    let paths = data.resolve(true)?;
    let graph = load_graph_files(&paths.nodes, &paths.edges, &paths.schema)?;
    let t = targeted_type(&graph, &paths.labels, named_type)?;
    let labels = load_labels_file(&paths.labels, &graph, t)?;
    Ok((graph, labels))
}

fn load_graph_only(data: &DatasetArgs) -> Result<HetGraph> {
    let paths = data.resolve(false)?;
    load_graph_files(&paths.nodes, &paths.edges, &paths.schema)
}

fn cmd_train(c: &TrainCmd, deterministic: bool) -> Result<()> {
    let config = c.train.resolve(deterministic)?;
    let (graph, labels) = load_dataset(&c.data, config.targeted_type.as_deref())?;
    std::fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    let model = match train_nep(&graph, &labels, &config) {
        Ok(m) => m,
        Err(Error::Diverged { step, last_good }) => {
            if let Some(m) = &last_good {
                m.save(c.out.join(LAST_GOOD_FILE))?;
                eprintln!("last good model written to {}", c.out.join(LAST_GOOD_FILE).display());
            }
            return Err(Error::Diverged { step, last_good });
        }
        Err(e) => return Err(e),
    };
    model.save(c.out.join(CHECKPOINT_FILE))?;
    let mut log = create(&c.out.join(LOG_FILE))?;
    model.log.write(&mut log)?;
    log.flush()?;
    let mut cfg = create(&c.out.join(CONFIG_FILE))?;
    cfg.write_all(config.to_toml().as_bytes())?;
    cfg.flush()?;
    if c.export_embeddings {
        let mut out = create(&c.out.join(EMBEDDINGS_FILE))?;
        model.export_embeddings(&graph, &mut out)?;
        out.flush()?;
    }
    println!("{model}");
    Ok(())
}

fn cmd_eval(c: &EvalCmd, deterministic: bool) -> Result<()> {
    let (method, named) = match c.method {
        Method::Nep => {
            let config = c.train.resolve(deterministic)?;
            let named = config.targeted_type.clone();
            (MethodConfig::Nep(config), named)
        }
        Method::Lp => (MethodConfig::Lp(c.lp.config()), c.train.targeted_type.clone()),
    };
    let (graph, labels) = load_dataset(&c.data, named.as_deref())?;
    let truth = match &c.truth {
        Some(p) => {
            ensure_exists(p)?;
            Some(load_labels_file(p, &graph, labels.targeted_type())?)
        }
        None => None,
    };
    let options = ExperimentOptions {
        runs: c.runs,
        train_fraction: c.train_fraction,
        seed: c.split_seed,
    };
    let report = run_experiment(&graph, &labels, &method, &options, truth.as_ref())?;
    if let Some(path) = &c.out {
        let mut out = create(path)?;
        report.write_records(&mut out)?;
        out.flush()?;
    }
    println!("{report}");
    Ok(())
}

fn cmd_baseline(c: &BaselineCmd) -> Result<()> {
    let (graph, labels) = load_dataset(&c.data, c.targeted_type.as_deref())?;
    let objects: Vec<usize> = graph
        .objects_of_type(labels.targeted_type())
        .into_iter()
        .filter(|&v| !labels.contains(v))
        .collect();
    let (pred, dist) = lp_predict(&graph, &labels, &objects, &c.lp.config())?;
    let mut out = sink(c.out.as_deref())?;
    pred.write(&graph, labels.class_names(), &mut out)?;
    out.flush()?;
    eprintln!(
        "label propagation: {} iterations, converged {}, {} of {} objects reached",
        dist.iterations,
        dist.converged,
        objects.len() - pred.unreached.len(),
        objects.len()
    );
    Ok(())
}

fn cmd_sample(c: &SampleCmd) -> Result<()> {
    let (graph, labels) = load_dataset(&c.data, c.targeted_type.as_deref())?;
    let seed = match c.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(t) => t
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{t}` is not a seed")))?,
            Err(_) => 0,
        },
    };
    let sampler = two_step_batch(
        &graph,
        &labels,
        c.variant,
        c.num_batches,
        c.batch,
        c.max_len,
        ChaCha8Rng::seed_from_u64(seed),
    )?;
    let mut out = sink(c.out.as_deref())?;
    let schema = graph.schema();
    for (i, batch) in sampler.enumerate() {
        let batch = batch?;
        let mp = batch.metapath.display(schema).to_string();
        writeln!(out, "# batch {i}\t{mp}\t{} pairs", batch.len())?;
        for (s, d) in &batch.pairs {
            writeln!(out, "{mp}\t{}\t{}", graph.id(*s), graph.id(*d))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_synth(c: &SynthCmd) -> Result<()> {
    let mut spec = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => PlantedSpec::default(),
    };
    if let Some(v) = c.classes {
        spec.classes = v;
    }
    if let Some(v) = c.homophily {
        spec.homophily = v;
    }
    if let Some(v) = c.labeled_fraction {
        spec.labeled_fraction = v;
    }
    if let Some(v) = c.seed {
        spec.seed = v;
    }
    let planted = generate_planted(&spec)?;
    synth::write_dataset(&planted, &c.out)?;
    println!(
        "{} objects, {} links, {} labeled, written to {}",
        planted.graph.num_objects(),
        planted.graph.num_links(),
        planted.labels.len(),
        c.out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    ensure_exists(path)?;
    Model::load(path)
}

fn cmd_predict(c: &PredictCmd) -> Result<()> {
    let model = load_model(&c.checkpoint)?;
    let graph = load_graph_only(&c.data)?;
    let t = graph
        .schema()
        .object_type(&model.targeted_type)
        .ok_or_else(|| Error::UnknownObjectType(model.targeted_type.clone()))?;
    let objects = graph.objects_of_type(t);
    let pred = predict_labels(&model, &graph, &objects)?;
    let mut out = sink(c.out.as_deref())?;
    pred.write(&graph, &model.class_names, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_export(c: &ExportCmd) -> Result<()> {
    let model = load_model(&c.checkpoint)?;
    let graph = load_graph_only(&c.data)?;
    let mut out = sink(c.out.as_deref())?;
    model.export_embeddings(&graph, &mut out)?;
    out.flush()?;
    Ok(())
}
