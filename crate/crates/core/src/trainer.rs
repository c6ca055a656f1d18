//! Joint training of embeddings, link modules and the predictor.
//!
//! Each step draws one [`PathBatch`] from two-step sampling and a uniform
//! mini-batch of labeled objects, then takes one Adam step on
//! `J' = J_l + lambda * J_u'`.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::mpsc::sync_channel;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, LabelSet, LinkTypeId};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    argmax, record_objective, Activation, Adam, AdamConfig, CompositionOrder, DenseLayer,
    EmbeddingTable, Gradients, LinkModule, LinkModuleSet, Matrix, ParamId, Parameters, Predictor,
    SupervisedBatch, Tape,
};
use crate::sampler::{two_step_batch, BatchSampler, PathBatch, Variant};

/// Stream id for the sampler RNG; the supervised stream uses `seed` itself.
const SAMPLER_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const HOLDOUT_STREAM: u64 = 3;
const PREFETCH_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Identity activations in every link module.
    pub linear: bool,
    pub dim: usize,
    pub lambda: f64,
    /// Outer iterations (number of batches).
    pub iterations: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    /// Labeled objects per step; `None` means `min(batch_size, |labels|)`.
    pub supervised_batch: Option<usize>,
    pub seed: u64,
    /// If set, must name the type the labels target.
    pub targeted_type: Option<String>,
    /// Early stopping patience in evaluations; `None` disables it.
    pub early_stop_patience: Option<usize>,
    pub module_depth: usize,
    pub module_activation: Activation,
    pub hidden_layers: usize,
    pub hidden_activation: Activation,
    pub composition: CompositionOrder,
    pub clip_norm: Option<f64>,
    /// Sample batches on a helper thread. Results are unchanged.
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Label,
            linear: false,
            dim: 64,
            lambda: 1.0,
            iterations: 1000,
            batch_size: 1000,
            max_len: 5,
            learning_rate: 0.001,
            supervised_batch: None,
            seed: 0,
            targeted_type: None,
            early_stop_patience: None,
            module_depth: 1,
            module_activation: Activation::Sigmoid,
            hidden_layers: 1,
            hidden_activation: Activation::Relu,
            composition: CompositionOrder::Traversal,
            clip_norm: Some(5.0),
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 || self.batch_size == 0 || self.max_len == 0 {
            return bad("iterations, batch_size and max_len must be at least 1");
        }
        if self.dim == 0 || self.module_depth == 0 {
            return bad("dim and module_depth must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.supervised_batch == Some(0) {
            return bad("supervised_batch must be at least 1");
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be at least 1");
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Activation used by link modules after the linear flag is applied.
    pub fn effective_module_activation(&self) -> Activation {
        if self.linear {
            Activation::Identity
        } else {
            self.module_activation
        }
    }
}

/// Objects that get an embedding row under `variant`.
pub fn embedded_objects(graph: &HetGraph, labels: &LabelSet, variant: Variant) -> Vec<usize> {
    match variant {
        Variant::Basic => (0..graph.num_objects()).collect(),
        Variant::Target | Variant::Label => graph.objects_of_type(labels.targeted_type()),
    }
}

/// Builds the sampler for `config`. The sampler RNG is derived from the seed.
pub fn select_variant<'g>(
    graph: &'g HetGraph,
    labels: &LabelSet,
    config: &TrainConfig,
) -> Result<BatchSampler<'g, ChaCha8Rng>> {
    if config.variant == Variant::Label && labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    two_step_batch(
        graph,
        labels,
        config.variant,
        config.iterations,
        config.batch_size,
        config.max_len,
        stream(config.seed, SAMPLER_STREAM),
    )
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub supervised: f64,
    pub propagation: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub records: Vec<LossRecord>,
}

impl LossReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean of `J'` over `records[range]`.
    pub fn mean_total(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.total).sum::<f64>() / slice.len().max(1) as f64
    }

    /// One `step\tJ_l\tJ_u'\tJ'` line per record, at round-trip precision.
    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "step\tJ_l\tJ_u'\tJ'")?;
        for r in &self.records {
            writeln!(
                out,
                "{}\t{:?}\t{:?}\t{:?}",
                r.step, r.supervised, r.propagation, r.total
            )?;
        }
        Ok(())
    }

    pub fn read(source: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let parse_err = |m: &str| Error::Parse {
                line: n + 1,
                message: m.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err("expected 4 fields"));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| parse_err(&e.to_string()));
            records.push(LossRecord {
                step: fields[0].parse().map_err(|_| parse_err("bad step"))?,
                supervised: f(fields[1])?,
                propagation: f(fields[2])?,
                total: f(fields[3])?,
            });
        }
        Ok(LossReport { records })
    }
}

/// Trained parameters plus what is needed to predict and to reload them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: Parameters,
    pub config: TrainConfig,
    pub log: LossReport,
    pub class_names: Vec<String>,
    pub targeted_type: String,
    /// Majority class of the training labels; fallback for unreached objects.
    pub majority: usize,
    /// Step at which parameters were taken (differs from the log length
    /// after early stopping).
    pub best_step: usize,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model: variant {}, dim {}, {} embedded objects, {} classes, {} steps",
            self.config.variant,
            self.config.dim,
            self.params.embeddings.num_rows(),
            self.class_names.len(),
            self.log.len()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub objects: Vec<usize>,
    pub classes: Vec<usize>,
    /// Objects whose embedding was never updated; they get the majority class.
    pub unreached: Vec<usize>,
}

impl Prediction {
    pub fn coverage(&self) -> f64 {
        if self.objects.is_empty() {
            return 1.0;
        }
        1.0 - self.unreached.len() as f64 / self.objects.len() as f64
    }

    pub fn write(&self, graph: &HetGraph, class_names: &[String], mut out: impl Write) -> Result<()> {
        for (&v, &c) in self.objects.iter().zip(&self.classes) {
            writeln!(out, "{}\t{}", graph.id(v), class_names[c])?;
        }
        Ok(())
    }
}

/// Predicts classes of targeted objects from raw parameters.
pub fn predict_with(
    params: &Parameters,
    majority: usize,
    graph: &HetGraph,
    targeted_type: &str,
    objects: &[usize],
) -> Result<Prediction> {
    for &v in objects {
        if v >= graph.num_objects() {
            return Err(Error::ObjectOutOfRange {
                index: v,
                len: graph.num_objects(),
            });
        }
        let actual = graph.schema().object_type_name(graph.object_type(v));
        if actual != targeted_type {
            return Err(Error::WrongObjectType {
                id: graph.id(v).to_string(),
                actual: actual.to_string(),
                expected: targeted_type.to_string(),
            });
        }
    }
    let table = &params.embeddings;
    let (reached, unreached): (Vec<usize>, Vec<usize>) =
        objects.iter().partition(|&&v| table.is_touched(v));
    let logits = params.predictor.logits(&table.gather(&reached)?)?;
    let mut by_object = std::collections::HashMap::with_capacity(reached.len());
    for (i, &v) in reached.iter().enumerate() {
        by_object.insert(v, argmax(logits.row(i)));
    }
    let classes = objects
        .iter()
        .map(|v| by_object.get(v).copied().unwrap_or(majority))
        .collect();
    Ok(Prediction {
        objects: objects.to_vec(),
        classes,
        unreached,
    })
}

pub fn predict_labels(model: &Model, graph: &HetGraph, objects: &[usize]) -> Result<Prediction> {
    predict_with(
        &model.params,
        model.majority,
        graph,
        &model.targeted_type,
        objects,
    )
}

/// Step-wise optimizer state. Batches are supplied by the caller so that
/// sampling can be driven or replaced independently.
#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    params: Parameters,
    adam: Adam,
    supervised_rng: ChaCha8Rng,
    objects: Vec<usize>,
    classes: Vec<usize>,
    majority: usize,
    class_names: Vec<String>,
    targeted_type: String,
    step: usize,
    log: LossReport,
}

impl Trainer {
    /// Initializes parameters. `labels` must contain training labels only.
    pub fn new(graph: &HetGraph, labels: &LabelSet, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::EmptyLabels);
        }
        let schema = graph.schema();
        let targeted_type = schema.object_type_name(labels.targeted_type()).to_string();
        if let Some(t) = &config.targeted_type {
            if *t != targeted_type {
                return Err(Error::Config(format!(
                    "targeted type `{t}` does not match labels on `{targeted_type}`"
                )));
            }
        }
        let mut rng = stream(config.seed, INIT_STREAM);
        let rows = embedded_objects(graph, labels, config.variant);
        let embeddings = EmbeddingTable::new(graph.num_objects(), &rows, config.dim, &mut rng)?;
        let links = LinkModuleSet::new(
            schema,
            config.dim,
            config.module_depth,
            config.effective_module_activation(),
            &mut rng,
        );
        let predictor = Predictor::new(
            config.dim,
            labels.num_classes(),
            config.hidden_layers,
            config.hidden_activation,
            &mut rng,
        );
        let (objects, classes) = labels.iter().unzip();
        Ok(Trainer {
            config: config.clone(),
            params: Parameters {
                embeddings,
                links,
                predictor,
            },
            adam: Adam::new(AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            }),
            supervised_rng: stream(config.seed, 0),
            objects,
            classes,
            majority: labels.majority_class(),
            class_names: labels.class_names().to_vec(),
            targeted_type,
            step: 0,
            log: LossReport::default(),
        })
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn log(&self) -> &LossReport {
        &self.log
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn predict(&self, graph: &HetGraph, objects: &[usize]) -> Result<Prediction> {
        predict_with(
            &self.params,
            self.majority,
            graph,
            &self.targeted_type,
            objects,
        )
    }

    fn supervised_batch(&mut self) -> SupervisedBatch {
        let m = self.objects.len();
        let n = self
            .config
            .supervised_batch
            .unwrap_or(self.config.batch_size)
            .min(m);
        let mut picked = index::sample(&mut self.supervised_rng, m, n).into_vec();
        picked.sort_unstable();
        SupervisedBatch {
            objects: picked.iter().map(|&i| self.objects[i]).collect(),
            labels: picked.iter().map(|&i| self.classes[i]).collect(),
        }
    }

    /// Records the objective for `batch` and a fresh supervised mini-batch
    /// and returns it with its gradients, without updating anything.
    pub fn objective(&mut self, batch: &PathBatch) -> Result<(LossRecord, Gradients)> {
        let supervised = self.supervised_batch();
        let mut tape = Tape::new();
        let vars = record_objective(
            &mut tape,
            &self.params,
            Some(batch),
            &supervised,
            self.config.lambda,
            self.config.composition,
        )?;
        let record = LossRecord {
            step: self.step + 1,
            supervised: vars.supervised.map_or(0.0, |v| tape.scalar(v)),
            propagation: vars.propagation.map_or(0.0, |v| tape.scalar(v)),
            total: tape.scalar(vars.total),
        };
        let grads = tape.backward(vars.total)?;
        for &v in batch
            .pairs
            .iter()
            .flat_map(|(s, d)| [s, d])
            .chain(&supervised.objects)
        {
            self.params.embeddings.mark_touched(v);
        }
        Ok((record, grads))
    }

    /// One optimizer step. On a non-finite loss or gradient the parameters
    /// are left as they were before the step and training is aborted.
    pub fn step(&mut self, batch: &PathBatch) -> Result<LossRecord> {
        let (record, mut grads) = self.objective(batch)?;
        let diverged = !record.total.is_finite() || grads.first_non_finite().is_some();
        if diverged {
            return Err(Error::Diverged {
                step: record.step,
                last_good: Some(Box::new(self.snapshot())),
            });
        }
        if let Some(c) = self.config.clip_norm {
            grads.clip_global_norm(c);
        }
        self.adam.step(&mut self.params, &grads)?;
        self.step += 1;
        self.log.records.push(record);
        Ok(record)
    }

    /// Current state as a model (parameters are cloned).
    pub fn snapshot(&self) -> Model {
        Model {
            params: self.params.clone(),
            config: self.config.clone(),
            log: self.log.clone(),
            class_names: self.class_names.clone(),
            targeted_type: self.targeted_type.clone(),
            majority: self.majority,
            best_step: self.step,
        }
    }

    pub fn into_model(self) -> Model {
        Model {
            best_step: self.step,
            params: self.params,
            config: self.config,
            log: self.log,
            class_names: self.class_names,
            targeted_type: self.targeted_type,
            majority: self.majority,
        }
    }
}

/// Runs `config.iterations` steps of two-step batch training.
pub fn train_nep(graph: &HetGraph, labels: &LabelSet, config: &TrainConfig) -> Result<Model> {
    train_nep_observed(graph, labels, config, |_| Ok(()))
}

/// Like [`train_nep`], calling `observe` after every step.
pub fn train_nep_observed<F>(
    graph: &HetGraph,
    labels: &LabelSet,
    config: &TrainConfig,
    mut observe: F,
) -> Result<Model>
where
    F: FnMut(&Trainer) -> Result<()>,
{
    config.validate()?;
    let (fit, holdout) = match config.early_stop_patience {
        Some(_) => holdout_split(labels, config.seed)?,
        None => (labels.clone(), None),
    };
    let mut trainer = Trainer::new(graph, &fit, config)?;
    let mut stopper = holdout.map(|h| EarlyStop::new(h, config));
    let sampler = select_variant(graph, &fit, config)?;

    let mut on_batch = |batch: Result<PathBatch>, trainer: &mut Trainer| -> Result<bool> {
        trainer.step(&batch?)?;
        observe(trainer)?;
        match stopper.as_mut() {
            Some(s) => s.check(graph, trainer),
            None => Ok(true),
        }
    };

    if config.prefetch {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel(PREFETCH_DEPTH);
            scope.spawn(move || {
                for batch in sampler {
                    if tx.send(batch).is_err() {
                        break;
                    }
                }
            });
            for batch in rx {
                if !on_batch(batch, &mut trainer)? {
                    break;
                }
            }
            Ok(())
        })?;
    } else {
        for batch in sampler {
            if !on_batch(batch, &mut trainer)? {
                break;
            }
        }
    }

    let best = stopper.and_then(|s| s.best);
    let mut model = trainer.into_model();
    if let Some((step, params)) = best {
        model.params = params;
        model.best_step = step;
    }
    Ok(model)
}

/// Splits off roughly 10% of `labels` (at least one object) for early
/// stopping. Returns no holdout when fewer than 10 labels exist.
fn holdout_split(labels: &LabelSet, seed: u64) -> Result<(LabelSet, Option<LabelSet>)> {
    let mut objects = labels.objects();
    if objects.len() < 10 {
        return Ok((labels.clone(), None));
    }
    objects.shuffle(&mut stream(seed, HOLDOUT_STREAM));
    let n = objects.len() / 10;
    let (held, fit) = objects.split_at(n);
    let fit = labels.subset(fit);
    match fit {
        Ok(fit) => Ok((fit, Some(labels.subset(held).map_err(|_| Error::EmptyLabels)?))),
        // holdout swallowed a whole class; train on everything instead
        Err(Error::MissingClass { .. }) => Ok((labels.clone(), None)),
        Err(e) => Err(e),
    }
}

struct EarlyStop {
    holdout: LabelSet,
    every: usize,
    patience: usize,
    misses: usize,
    best_accuracy: f64,
    best: Option<(usize, Parameters)>,
}

impl EarlyStop {
    fn new(holdout: LabelSet, config: &TrainConfig) -> Self {
        EarlyStop {
            holdout,
            every: (config.iterations / 100).max(1),
            patience: config.early_stop_patience.unwrap_or(usize::MAX),
            misses: 0,
            best_accuracy: f64::NEG_INFINITY,
            best: None,
        }
    }

    /// Returns whether training should continue.
    fn check(&mut self, graph: &HetGraph, trainer: &Trainer) -> Result<bool> {
        if !trainer.steps().is_multiple_of(self.every) {
            return Ok(true);
        }
        let objects = self.holdout.objects();
        let pred = trainer.predict(graph, &objects)?;
        let correct = objects
            .iter()
            .zip(&pred.classes)
            .filter(|(v, c)| self.holdout.class_of(**v) == Some(**c))
            .count();
        let acc = correct as f64 / objects.len() as f64;
        if acc > self.best_accuracy {
            self.best_accuracy = acc;
            self.best = Some((trainer.steps(), trainer.params().clone()));
            self.misses = 0;
        } else {
            self.misses += 1;
        }
        Ok(self.misses < self.patience)
    }
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let num_links = self.params.links.len();
        let metadata = vec![
            ("config".to_string(), self.config.to_toml()),
            ("class_names".to_string(), self.class_names.join("\n")),
            ("targeted_type".to_string(), self.targeted_type.clone()),
            ("majority".to_string(), self.majority.to_string()),
            ("best_step".to_string(), self.best_step.to_string()),
            ("num_links".to_string(), num_links.to_string()),
            (
                "num_objects".to_string(),
                self.params.embeddings.num_objects().to_string(),
            ),
        ];
        let table = &self.params.embeddings;
        let touched = table
            .objects()
            .iter()
            .zip(table.touched_flags())
            .filter(|(_, &t)| t)
            .map(|(&v, _)| v as u64)
            .collect();
        let indices = vec![
            (
                "rows".to_string(),
                table.objects().iter().map(|&v| v as u64).collect(),
            ),
            ("touched".to_string(), touched),
        ];
        let mut tensors = vec![("embeddings".to_string(), table.values().clone())];
        for (id, m) in self.params.dense_tensors() {
            tensors.push((id.to_string(), m.clone()));
        }
        let mut log = Matrix::zeros(self.log.len(), 4);
        for (i, r) in self.log.records.iter().enumerate() {
            log.row_mut(i)
                .copy_from_slice(&[r.step as f64, r.supervised, r.propagation, r.total]);
        }
        tensors.push(("log".to_string(), log));
        Checkpoint {
            metadata,
            indices,
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{k}`")))
        };
        let number = |k: &str| -> Result<usize> {
            meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad metadata `{k}`")))
        };
        let config = TrainConfig::from_toml(meta("config")?)?;
        let class_names: Vec<String> = meta("class_names")?.lines().map(String::from).collect();
        let rows: Vec<usize> = ck
            .index("rows")
            .ok_or_else(|| Error::Checkpoint("missing row index".into()))?
            .iter()
            .map(|&v| v as usize)
            .collect();
        let mut embeddings =
            EmbeddingTable::from_parts(number("num_objects")?, &rows, ck.tensor("embeddings")?.clone())?;
        let touched_objects = ck.index("touched").unwrap_or(&[]);
        let mut touched = vec![false; rows.len()];
        for &v in touched_objects {
            let r = embeddings
                .row_of(v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("touched object {v} has no row")))?;
            touched[r] = true;
        }
        embeddings.set_touched(touched);

        let activation = config.effective_module_activation();
        let layer = |w: ParamId, b: ParamId, act: Activation| -> Result<DenseLayer> {
            Ok(DenseLayer {
                weight: ck.tensor(&w.to_string())?.clone(),
                bias: ck.tensor(&b.to_string())?.clone(),
                activation: act,
            })
        };
        let mut modules = Vec::new();
        for i in 0..number("num_links")? {
            let link = LinkTypeId(i as u16);
            let layers = (0..config.module_depth)
                .map(|q| {
                    layer(
                        ParamId::LinkWeight { link, layer: q },
                        ParamId::LinkBias { link, layer: q },
                        activation,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            modules.push(LinkModule { layers });
        }
        let hidden = (0..config.hidden_layers)
            .map(|q| {
                layer(
                    ParamId::HiddenWeight(q),
                    ParamId::HiddenBias(q),
                    config.hidden_activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let predictor = Predictor {
            hidden,
            classifier: ck.tensor(&ParamId::Classifier.to_string())?.clone(),
        };
        if predictor.num_classes() != class_names.len() || predictor.dim() != config.dim {
            return Err(Error::Checkpoint("predictor shape disagrees with metadata".into()));
        }
        let log_m = ck.tensor("log")?;
        let log = LossReport {
            records: (0..log_m.rows())
                .map(|i| {
                    let r = log_m.row(i);
                    LossRecord {
                        step: r[0] as usize,
                        supervised: r[1],
                        propagation: r[2],
                        total: r[3],
                    }
                })
                .collect(),
        };
        Ok(Model {
            params: Parameters {
                embeddings,
                links: LinkModuleSet::from_modules(modules),
                predictor,
            },
            config,
            log,
            class_names,
            targeted_type: meta("targeted_type")?.to_string(),
            majority: number("majority")?,
            best_step: number("best_step")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.to_checkpoint().write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(source: impl Read) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(source)?)
    }

    /// Writes `id<TAB>v_1,...,v_K` for every embedded object.
    pub fn export_embeddings(&self, graph: &HetGraph, mut out: impl Write) -> Result<()> {
        let table = &self.params.embeddings;
        for (r, &v) in table.objects().iter().enumerate() {
            let values: Vec<String> = table.values().row(r).iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}\t{}", graph.id(v), values.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{load_graph, load_labels, Schema};

    fn toy() -> (HetGraph, LabelSet) {
        let schema = Schema::new(
            &["paper", "author"],
            &[("writes", "author", "paper", "written_by")],
        )
        .unwrap();
        let nodes = "p1\tpaper\np2\tpaper\np3\tpaper\np4\tpaper\na1\tauthor\na2\tauthor\n";
        let edges = "a1\twrites\tp1\na1\twrites\tp2\na2\twrites\tp3\na2\twrites\tp4\na1\twrites\tp3\n";
        let graph = load_graph(nodes.as_bytes(), edges.as_bytes(), schema).unwrap();
        let t = graph.schema().object_type("paper").unwrap();
        let labels = load_labels("p1\tA\np4\tB\n".as_bytes(), &graph, t).unwrap();
        (graph, labels)
    }

    fn small_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            dim: 8,
            iterations: 30,
            batch_size: 4,
            max_len: 3,
            learning_rate: 0.01,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_toml_round_trip_and_validation() {
        let c = small_config(Variant::Target);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = TrainConfig::from_toml("variant = \"basic\"\ndim = 16\n").unwrap();
        assert_eq!(partial.variant, Variant::Basic);
        assert_eq!(partial.batch_size, TrainConfig::default().batch_size);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        for bad in [
            TrainConfig { iterations: 0, ..c.clone() },
            TrainConfig { lambda: -1.0, ..c.clone() },
            TrainConfig { dim: 0, ..c.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn log_satisfies_objective_identity() {
        let (g, l) = toy();
        let config = TrainConfig { lambda: 0.7, ..small_config(Variant::Label) };
        let model = train_nep(&g, &l, &config).unwrap();
        assert_eq!(model.log.len(), 30);
        for r in &model.log.records {
            assert!(r.supervised >= 0.0 && r.propagation >= 0.0);
            assert_eq!(r.total, r.supervised + 0.7 * r.propagation);
        }
    }

    #[test]
    fn target_variant_embeds_only_targeted() {
        let (g, l) = toy();
        let t = train_nep(&g, &l, &small_config(Variant::Target)).unwrap();
        assert_eq!(t.params.embeddings.num_rows(), 4);
        let b = train_nep(&g, &l, &small_config(Variant::Basic)).unwrap();
        assert_eq!(b.params.embeddings.num_rows(), 6);
    }

    #[test]
    fn prediction_rejects_wrong_type_and_covers_all() {
        let (g, l) = toy();
        let model = train_nep(&g, &l, &small_config(Variant::Target)).unwrap();
        let author = g.index_of("a1").unwrap();
        assert!(matches!(
            predict_labels(&model, &g, &[author]),
            Err(Error::WrongObjectType { .. })
        ));
        let papers = g.objects_of_type(l.targeted_type());
        let p = predict_labels(&model, &g, &papers).unwrap();
        assert_eq!(p.classes.len(), 4);
        assert!(p.classes.iter().all(|&c| c < 2));
    }

    #[test]
    fn unreached_objects_fall_back_to_majority() {
        let (g, l) = toy();
        let config = small_config(Variant::Target);
        let trainer = Trainer::new(&g, &l, &config).unwrap();
        let papers = g.objects_of_type(l.targeted_type());
        let p = trainer.predict(&g, &papers).unwrap();
        assert_eq!(p.unreached, papers);
        assert_eq!(p.coverage(), 0.0);
        assert!(p.classes.iter().all(|&c| c == l.majority_class()));
    }

    #[test]
    fn prefetch_does_not_change_results() {
        let (g, l) = toy();
        let a = train_nep(&g, &l, &small_config(Variant::Label)).unwrap();
        let config = TrainConfig { prefetch: true, ..small_config(Variant::Label) };
        let b = train_nep(&g, &l, &config).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (g, l) = toy();
        let model = train_nep(&g, &l, &small_config(Variant::Label)).unwrap();
        let mut buf = Vec::new();
        model.to_checkpoint().write(&mut buf).unwrap();
        let back = Model::read(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn loss_log_text_round_trip() {
        let (g, l) = toy();
        let model = train_nep(&g, &l, &small_config(Variant::Target)).unwrap();
        let mut buf = Vec::new();
        model.log.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step\tJ_l\tJ_u'\tJ'\n"));
        assert_eq!(LossReport::read(buf.as_slice()).unwrap(), model.log);
    }
}
