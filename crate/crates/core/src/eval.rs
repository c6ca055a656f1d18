//! Repeated-split experiments: stratified splits, accuracy, aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::baseline::{lp_predict, LpConfig};
use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, LabelSet};
use crate::trainer::{predict_labels, train_nep, Prediction, TrainConfig};

/// Splits `labels` class by class. Each class keeps at least one object on
/// both sides, so every class needs two members.
pub fn split(labels: &LabelSet, train_fraction: f64, seed: u64) -> Result<(LabelSet, LabelSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_class = vec![Vec::new(); labels.num_classes()];
    for (v, y) in labels.iter() {
        by_class[y].push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Unstratifiable {
                class,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        let k = ((train_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    Ok((labels.subset(&train)?, labels.subset(&test)?))
}

/// Exact-match fraction. Both sides must cover the same objects.
pub fn accuracy(predicted: &[(usize, usize)], truth: &[(usize, usize)]) -> Result<f64> {
    let p: BTreeMap<usize, usize> = predicted.iter().copied().collect();
    let t: BTreeMap<usize, usize> = truth.iter().copied().collect();
    if p.len() != predicted.len() || t.len() != truth.len() || !p.keys().eq(t.keys()) {
        return Err(Error::MismatchedObjects);
    }
    if t.is_empty() {
        return Err(Error::MismatchedObjects);
    }
    let correct = p.values().zip(t.values()).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / t.len() as f64)
}

impl Prediction {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.objects.iter().copied().zip(self.classes.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Nep(TrainConfig),
    Lp(LpConfig),
}

impl MethodConfig {
    pub fn name(&self) -> String {
        match self {
            MethodConfig::Nep(c) => {
                let linear = if c.linear { "-linear" } else { "" };
                format!("nep-{}{}", c.variant, linear)
            }
            MethodConfig::Lp(_) => "lp".into(),
        }
    }

    fn canonical(&self) -> String {
        match self {
            MethodConfig::Nep(c) => format!("nep\n{}", c.to_toml()),
            MethodConfig::Lp(c) => format!(
                "lp\nalpha={:?}\nmax_iters={}\ntol={:?}\n",
                c.alpha, c.max_iters, c.tol
            ),
        }
    }

    /// Trains on `train` and predicts `objects`.
    pub fn fit_predict(
        &self,
        graph: &HetGraph,
        train: &LabelSet,
        objects: &[usize],
        run: usize,
    ) -> Result<Prediction> {
        match self {
            MethodConfig::Nep(c) => {
                let config = TrainConfig {
                    seed: c.seed.wrapping_add(run as u64),
                    ..c.clone()
                };
                let model = train_nep(graph, train, &config)?;
                predict_labels(&model, graph, objects)
            }
            MethodConfig::Lp(c) => Ok(lp_predict(graph, train, objects, c)?.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub runs: usize,
    pub train_fraction: f64,
    /// Split seed of run 0; run `r` uses `seed + r`.
    pub seed: u64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            runs: 10,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub accuracy: f64,
    /// Accuracy on every targeted object outside the training split, when
    /// full ground truth is known.
    pub holdout_accuracy: Option<f64>,
    pub coverage: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and sample standard deviation (`n - 1`; zero for one value).
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub method: String,
    pub fingerprint: String,
    pub runs: Vec<RunResult>,
    pub accuracy: Summary,
    pub holdout_accuracy: Option<Summary>,
    pub wall_seconds: f64,
}

impl ExperimentReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }

    /// Tab-separated records: one `run` line per run and a `summary` line.
    pub fn write_records(&self, mut out: impl Write) -> Result<()> {
        let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        for r in &self.runs {
            writeln!(
                out,
                "run\t{}\t{}\t{:?}\t{}\t{:?}\t{:?}",
                self.method,
                r.run,
                r.accuracy,
                opt(r.holdout_accuracy),
                r.coverage,
                r.seconds
            )?;
        }
        writeln!(
            out,
            "summary\t{}\t{}\t{:?}\t{:?}\t{}\t{}\t{:?}",
            self.method,
            self.runs.len(),
            self.accuracy.mean,
            self.accuracy.std,
            opt(self.holdout_accuracy.as_ref().map(|s| s.mean)),
            opt(self.holdout_accuracy.as_ref().map(|s| s.std)),
            self.wall_seconds
        )?;
        writeln!(out, "fingerprint\t{}\t{}", self.method, self.fingerprint)?;
        Ok(())
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method {}  (config {})", self.method, self.fingerprint)?;
        writeln!(
            f,
            "{:>4}  {:>8}  {:>8}  {:>8}  {:>8}",
            "run", "accuracy", "holdout", "coverage", "seconds"
        )?;
        for r in &self.runs {
            let h = r
                .holdout_accuracy
                .map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
            writeln!(
                f,
                "{:>4}  {:>8.4}  {:>8}  {:>8.4}  {:>8.2}",
                r.run, r.accuracy, h, r.coverage, r.seconds
            )?;
        }
        write!(
            f,
            "mean  {:.4} +- {:.4}",
            self.accuracy.mean, self.accuracy.std
        )?;
        if let Some(h) = &self.holdout_accuracy {
            write!(f, "  holdout {:.4} +- {:.4}", h.mean, h.std)?;
        }
        write!(f, "  wall {:.2}s", self.wall_seconds)
    }
}

fn fingerprint(method: &MethodConfig, options: &ExperimentOptions) -> String {
    let text = format!(
        "{}runs={}\ntrain_fraction={:?}\nseed={}\n",
        method.canonical(),
        options.runs,
        options.train_fraction,
        options.seed
    );
    Sha256::digest(text.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs `options.runs` independent split/train/evaluate rounds. The test
/// part of each split never reaches the method. With `truth`, accuracy is
/// also reported on all truth objects outside the training split.
pub fn run_experiment(
    graph: &HetGraph,
    labels: &LabelSet,
    method: &MethodConfig,
    options: &ExperimentOptions,
    truth: Option<&LabelSet>,
) -> Result<ExperimentReport> {
    if options.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let start = Instant::now();
    let mut runs = Vec::with_capacity(options.runs);
    for run in 0..options.runs {
        let t0 = Instant::now();
        let (train, test) = split(labels, options.train_fraction, options.seed + run as u64)?;
        let test_pairs: Vec<(usize, usize)> = test.iter().collect();
        let holdout_pairs: Vec<(usize, usize)> = truth
            .map(|t| t.iter().filter(|(v, _)| !train.contains(*v)).collect())
            .unwrap_or_default();
        let objects: Vec<usize> = if truth.is_some() {
            holdout_pairs.iter().map(|p| p.0).collect()
        } else {
            test.objects()
        };
        let pred = method.fit_predict(graph, &train, &objects, run)?;
        let by_object: BTreeMap<usize, usize> = pred.pairs().into_iter().collect();
        let test_pred: Vec<(usize, usize)> = test_pairs
            .iter()
            .map(|&(v, _)| (v, by_object.get(&v).copied().unwrap_or(usize::MAX)))
            .collect();
        runs.push(RunResult {
            run,
            accuracy: accuracy(&test_pred, &test_pairs)?,
            holdout_accuracy: match truth {
                Some(_) => Some(accuracy(&pred.pairs(), &holdout_pairs)?),
                None => None,
            },
            coverage: pred.coverage(),
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let accuracy = Summary::of(&runs.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let holdout_accuracy = truth.map(|_| {
        Summary::of(
            &runs
                .iter()
                .map(|r| r.holdout_accuracy.expect("truth given"))
                .collect::<Vec<_>>(),
        )
    });
    Ok(ExperimentReport {
        method: method.name(),
        fingerprint: fingerprint(method, options),
        runs,
        accuracy,
        holdout_accuracy,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::ObjectTypeId;

    fn labels(n: usize, classes: usize) -> LabelSet {
        let map = (0..n).map(|v| (v, v % classes)).collect();
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        LabelSet::new(ObjectTypeId(0), names, map).unwrap()
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_stratified() {
        let l = labels(100, 4);
        let (train, test) = split(&l, 0.8, 3).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.objects();
        all.extend(test.objects());
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train.class_counts(), vec![20; 4]);
        assert_eq!(split(&l, 0.8, 3).unwrap().0, train);
        assert_ne!(split(&l, 0.8, 4).unwrap().0, train);
    }

    #[test]
    fn split_needs_two_per_class() {
        let map = [(0, 0), (1, 0), (2, 1)].into_iter().collect();
        let l = LabelSet::new(ObjectTypeId(0), vec!["a".into(), "b".into()], map).unwrap();
        assert!(matches!(
            split(&l, 0.8, 0),
            Err(Error::Unstratifiable { class: 1, count: 1 })
        ));
        assert!(split(&labels(10, 2), 1.0, 0).is_err());
    }

    #[test]
    fn accuracy_reference_cases() {
        let truth: Vec<(usize, usize)> = (0..8).map(|v| (v, v % 4)).collect();
        assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
        let majority: Vec<(usize, usize)> = (0..8).map(|v| (v, 0)).collect();
        assert_eq!(accuracy(&majority, &truth).unwrap(), 0.25);
        assert!(matches!(
            accuracy(&majority[..7], &truth),
            Err(Error::MismatchedObjects)
        ));
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Summary::of(&[0.7]).std, 0.0);
    }
}
