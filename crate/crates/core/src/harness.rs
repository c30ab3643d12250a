//! Class-incremental training and evaluation.
//!
//! Classes arrive task by task. Within a task every item of one class is
//! presented before any item of the next class, in a single pass. After each
//! task the model is scored on all classes seen so far with the argmax taken
//! over every output unit, so no task identity leaks into prediction.
//!
//! Seeding: a trial seed `s` draws its projection from `derive_seed(s, 0)`
//! and any shuffling from `derive_seed(s, 1)`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::LabeledFeatureSet;
use crate::encoder::SparseCode;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Model, ModelConfig};

/// SplitMix64 mix of `(seed, stream)`; deterministic seed splitting for
/// trials and per-trial random streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` trial seeds fanned out from one master seed.
pub fn trial_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|t| derive_seed(master, t)).collect()
}

/// Ordered, disjoint tasks of class ids. Each task's classes are kept in
/// ascending id order, which is also the order they are trained in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskSchedule {
    tasks: Vec<Vec<usize>>,
}

/// Splits `class_order` into consecutive tasks of `classes_per_task`.
pub fn make_schedule(
    class_count: usize,
    classes_per_task: usize,
    class_order: &[usize],
) -> Result<TaskSchedule> {
    if classes_per_task == 0 || class_count == 0 || !class_count.is_multiple_of(classes_per_task) {
        return Err(Error::InvalidSchedule(format!(
            "{class_count} classes cannot be split into tasks of {classes_per_task}"
        )));
    }
    let mut seen = vec![false; class_count];
    if class_order.len() != class_count {
        return Err(Error::InvalidSchedule(format!(
            "class order has {} entries, expected {class_count}",
            class_order.len()
        )));
    }
    for &c in class_order {
        if c >= class_count || std::mem::replace(&mut seen[c], true) {
            return Err(Error::InvalidSchedule(format!(
                "class order is not a permutation of 0..{class_count}"
            )));
        }
    }
    let tasks = class_order
        .chunks(classes_per_task)
        .map(|chunk| {
            let mut t = chunk.to_vec();
            t.sort_unstable();
            t
        })
        .collect();
    Ok(TaskSchedule { tasks })
}

/// Identity class order.
pub fn identity_schedule(class_count: usize, classes_per_task: usize) -> Result<TaskSchedule> {
    make_schedule(
        class_count,
        classes_per_task,
        &(0..class_count).collect::<Vec<_>>(),
    )
}

impl TaskSchedule {
    pub fn tasks(&self) -> &[Vec<usize>] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Classes of tasks `0..=i`.
    pub fn classes_through(&self, i: usize) -> Vec<usize> {
        self.tasks[..=i].iter().flatten().copied().collect()
    }

    pub fn all_classes(&self) -> Vec<usize> {
        self.tasks.iter().flatten().copied().collect()
    }
}

/// Test items already passed through a trial's encoder.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    pub codes: Vec<SparseCode>,
    pub labels: Vec<usize>,
}

impl EncodedSet {
    pub fn encode(model: &Model, set: &LabeledFeatureSet, exec: Execution) -> Result<Self> {
        let codes = model
            .encoder
            .encode_batch(set.items().iter().map(|it| it.features.as_slice()), exec)?;
        Ok(EncodedSet {
            codes,
            labels: set.items().iter().map(|it| it.label).collect(),
        })
    }

    /// Indices of items of `classes`, class by class in the given order,
    /// dataset order within a class.
    pub fn class_sequential(&self, classes: &[usize]) -> Vec<usize> {
        classes
            .iter()
            .flat_map(|&c| (0..self.labels.len()).filter(move |&i| self.labels[i] == c))
            .collect()
    }
}

/// Fraction of test items with label in `allowed` whose prediction (argmax
/// over all classes) equals the label.
pub fn evaluate_encoded(
    model: &Model,
    test: &EncodedSet,
    allowed: &[usize],
    exec: Execution,
) -> Result<f64> {
    if allowed.is_empty() {
        return Err(Error::InvalidDataset("no classes to evaluate".into()));
    }
    let idx: Vec<usize> = (0..test.labels.len())
        .filter(|&i| allowed.contains(&test.labels[i]))
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "test set has no items of classes {allowed:?}"
        )));
    }
    let hits = exec.try_map(&idx, |&i| {
        Ok::<_, Error>(model.head.predict(&test.codes[i])?.class_index == test.labels[i])
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / idx.len() as f64)
}

/// [`evaluate_encoded`] on raw feature vectors.
pub fn evaluate(
    model: &Model,
    test: &LabeledFeatureSet,
    allowed: &[usize],
    exec: Execution,
) -> Result<f64> {
    evaluate_encoded(model, &EncodedSet::encode(model, test, exec)?, allowed, exec)
}

/// Per-task metrics of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub seed: u64,
    /// Accuracy on all classes trained so far, after each task.
    pub acc_so_far: Vec<f64>,
    /// Accuracy on task `i`'s classes right after training task `i`.
    pub acc_immediate: Vec<f64>,
    /// Accuracy on task `i`'s classes after the last task.
    pub acc_final: Vec<f64>,
    /// `acc_immediate[i] - acc_final[i]`.
    pub memory_loss: Vec<f64>,
}

pub const METRIC_NAMES: [&str; 4] = ["acc_so_far", "acc_immediate", "acc_final", "memory_loss"];

impl TrialMetrics {
    pub fn metric(&self, name: &str) -> Option<&[f64]> {
        match name {
            "acc_so_far" => Some(&self.acc_so_far),
            "acc_immediate" => Some(&self.acc_immediate),
            "acc_final" => Some(&self.acc_final),
            "memory_loss" => Some(&self.memory_loss),
            _ => None,
        }
    }
}

/// Per-task mean and (population) standard deviation across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub trials: Vec<TrialMetrics>,
    pub acc_so_far: MetricSummary,
    pub acc_immediate: MetricSummary,
    pub acc_final: MetricSummary,
    pub memory_loss: MetricSummary,
}

impl MetricsReport {
    pub fn from_trials(trials: Vec<TrialMetrics>) -> Self {
        let summarize = |name: &str| {
            let tasks = trials.first().map_or(0, |t| t.acc_so_far.len());
            let (mean, std) = (0..tasks)
                .map(|i| {
                    let vals: Vec<f64> = trials.iter().map(|t| t.metric(name).unwrap()[i]).collect();
                    mean_std(&vals)
                })
                .unzip();
            MetricSummary { mean, std }
        };
        MetricsReport {
            acc_so_far: summarize("acc_so_far"),
            acc_immediate: summarize("acc_immediate"),
            acc_final: summarize("acc_final"),
            memory_loss: summarize("memory_loss"),
            trials,
        }
    }

    /// Mean memory loss over tasks and trials.
    pub fn mean_memory_loss(&self) -> f64 {
        mean_std(&self.memory_loss.mean).0
    }

    /// Mean accuracy-so-far after the last task.
    pub fn final_accuracy(&self) -> f64 {
        *self.acc_so_far.mean.last().unwrap_or(&f64::NAN)
    }

    /// Long-format CSV with columns `seed,task_index,metric,value`; one row per
    /// trial x task x metric.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed,task_index,metric,value")?;
        for t in &self.trials {
            for name in METRIC_NAMES {
                for (i, v) in t.metric(name).unwrap().iter().enumerate() {
                    writeln!(out, "{},{},{},{}", t.seed, i, name, v)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn check_sets(train: &LabeledFeatureSet, test: &LabeledFeatureSet, schedule: &TaskSchedule) -> Result<()> {
    if train.dim() != test.dim() {
        return Err(Error::InvalidDataset(format!(
            "train dimension {} differs from test dimension {}",
            train.dim(),
            test.dim()
        )));
    }
    if train.label_map() != test.label_map() {
        return Err(Error::InvalidDataset(
            "train and test sets have different class labels".into(),
        ));
    }
    let k = train.class_count();
    if let Some(&c) = schedule.all_classes().iter().find(|&&c| c >= k) {
        return Err(Error::InvalidDataset(format!(
            "schedule uses class {c} but the data has {k} classes"
        )));
    }
    Ok(())
}

/// One trial of the class-incremental protocol.
pub fn run_trial(
    config: &ModelConfig,
    train: &LabeledFeatureSet,
    test: &LabeledFeatureSet,
    schedule: &TaskSchedule,
    seed: u64,
    exec: Execution,
) -> Result<(TrialMetrics, Model)> {
    check_sets(train, test, schedule)?;
    let mut model = Model::new(config, train.dim(), train.class_count(), derive_seed(seed, 0))?;
    let train_codes = EncodedSet::encode(&model, train, exec)?;
    let test_codes = EncodedSet::encode(&model, test, exec)?;

    let n = schedule.len();
    let mut acc_so_far = Vec::with_capacity(n);
    let mut acc_immediate = Vec::with_capacity(n);
    for (i, task) in schedule.tasks().iter().enumerate() {
        let order = train_codes.class_sequential(task);
        if order.is_empty() {
            return Err(Error::InvalidDataset(format!("task {i} has no training items")));
        }
        model.fit(&train_codes.codes, &train_codes.labels, &order)?;
        acc_so_far.push(evaluate_encoded(&model, &test_codes, &schedule.classes_through(i), exec)?);
        acc_immediate.push(evaluate_encoded(&model, &test_codes, task, exec)?);
    }
    let acc_final = schedule
        .tasks()
        .iter()
        .map(|task| evaluate_encoded(&model, &test_codes, task, exec))
        .collect::<Result<Vec<_>>>()?;
    let memory_loss = acc_immediate.iter().zip(&acc_final).map(|(a, b)| a - b).collect();
    Ok((
        TrialMetrics {
            seed,
            acc_so_far,
            acc_immediate,
            acc_final,
            memory_loss,
        },
        model,
    ))
}

/// Runs one trial per seed (in parallel when `exec` allows) and aggregates.
pub fn run_class_incremental(
    config: &ModelConfig,
    train: &LabeledFeatureSet,
    test: &LabeledFeatureSet,
    schedule: &TaskSchedule,
    seeds: &[u64],
    exec: Execution,
) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    // trials are the outer parallel loop; each trial runs its inner batches
    // sequentially so the pool is not oversubscribed
    let inner = if seeds.len() > 1 { Execution::Sequential } else { exec };
    let trials = exec.try_map(seeds, |&s| {
        run_trial(config, train, test, schedule, s, inner).map(|(m, _)| m)
    })?;
    Ok(MetricsReport::from_trials(trials))
}

/// Accuracies of the shuffled single-pass baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineReport {
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Trains from scratch on every training item of `classes` in a seeded
/// uniformly shuffled order, then scores on the same classes.
pub fn run_offline_trial(
    config: &ModelConfig,
    train: &LabeledFeatureSet,
    test: &LabeledFeatureSet,
    classes: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<(f64, Model)> {
    let schedule = TaskSchedule {
        tasks: vec![classes.to_vec()],
    };
    check_sets(train, test, &schedule)?;
    let mut model = Model::new(config, train.dim(), train.class_count(), derive_seed(seed, 0))?;
    let train_codes = EncodedSet::encode(&model, train, exec)?;
    let mut order = train_codes.class_sequential(classes);
    if order.is_empty() {
        return Err(Error::InvalidDataset(format!("no training items for classes {classes:?}")));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)));
    model.fit(&train_codes.codes, &train_codes.labels, &order)?;
    let acc = evaluate(&model, test, classes, exec)?;
    Ok((acc, model))
}

pub fn run_offline(
    config: &ModelConfig,
    train: &LabeledFeatureSet,
    test: &LabeledFeatureSet,
    classes: &[usize],
    seeds: &[u64],
    exec: Execution,
) -> Result<OfflineReport> {
    let inner = if seeds.len() > 1 { Execution::Sequential } else { exec };
    let accuracy = exec.try_map(seeds, |&s| {
        run_offline_trial(config, train, test, classes, s, inner).map(|(a, _)| a)
    })?;
    let (mean, std) = mean_std(&accuracy);
    Ok(OfflineReport {
        seeds: seeds.to_vec(),
        accuracy,
        mean,
        std,
    })
}

/// Offline upper bound at every evaluation point: for task `i`, retrain from
/// scratch on the shuffled classes of tasks `0..=i`.
pub fn run_offline_curve(
    config: &ModelConfig,
    train: &LabeledFeatureSet,
    test: &LabeledFeatureSet,
    schedule: &TaskSchedule,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<OfflineReport>> {
    (0..schedule.len())
        .map(|i| run_offline(config, train, test, &schedule.classes_through(i), seeds, exec))
        .collect()
}
