//! The subcommands. Each writes its outputs atomically and returns the
//! serialized summary it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use flycl::data::{self, FeatureShift, LabeledFeatureSet};
use flycl::encoder::ProjectionMatrix;
use flycl::harness::{
    derive_seed, identity_schedule, make_schedule, run_offline_curve, run_trial, trial_seeds,
    MetricsReport, OfflineReport,
};
use flycl::model::{Coding, Encoder, LearnerKind, Model};
use flycl::theory::{self, AnchorPolicy, CodingConfig, CodingMap, HijackScenario, TheoremStatus};
use flycl::Execution;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DataSource, ExperimentConfig, SyntheticSpec, WeightFormat};
use crate::{write_atomic, Invalid};

/// Streams of the master seed reserved for synthetic data. Trial seeds use
/// streams `0..seeds`, so the two never meet.
const DATA_STREAM: u64 = 1 << 32;

fn to_json(value: &impl Serialize) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, Serialize)]
struct DatasetInfo {
    dim: usize,
    classes: usize,
    labels: Vec<i64>,
    train_items: usize,
    test_items: usize,
}

fn synthetic_sets(
    spec: &SyntheticSpec,
    seed: u64,
) -> flycl::Result<(LabeledFeatureSet, LabeledFeatureSet)> {
    let protos = data::generate_prototypes(
        spec.prototypes,
        spec.dim,
        spec.classes,
        spec.xi,
        derive_seed(seed, DATA_STREAM),
    )?;
    let train = data::sample_noisy(
        &protos,
        spec.noise,
        spec.train_per_prototype,
        derive_seed(seed, DATA_STREAM + 1),
    )?;
    let test = data::sample_noisy(
        &protos,
        spec.noise,
        spec.test_per_prototype,
        derive_seed(seed, DATA_STREAM + 2),
    )?;
    Ok((train, test))
}

fn load(path: &Path) -> anyhow::Result<LabeledFeatureSet> {
    data::load_features(path).with_context(|| format!("loading {}", path.display()))
}

/// `flycl run`: the class-incremental protocol over `protocol.seeds` trials.
///
/// Writes `metrics.csv` (`seed,task_index,metric,value`), `summary.json` and
/// `config.toml` (the config text, verbatim) into `out`, plus per-trial
/// weight dumps when requested.
pub fn cmd_run(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    exec: Execution,
) -> anyhow::Result<Value> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config = ExperimentConfig::parse(&text)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let source = config.data_source(base)?;
    let master = seed_override.unwrap_or(config.seed);

    let (train, test) = match &source {
        DataSource::Files { train, test } => (load(train)?, load(test)?),
        DataSource::Synthetic(spec) => synthetic_sets(spec, master)?,
    };
    let (train, test) = if config.data.shift_nonnegative {
        let shift = FeatureShift::fit(&train);
        (shift.apply(&train)?, shift.apply(&test)?)
    } else {
        (train, test)
    };
    let k = train.class_count();
    let schedule = match &config.protocol.class_order {
        Some(order) => make_schedule(k, config.protocol.classes_per_task, order)?,
        None => identity_schedule(k, config.protocol.classes_per_task)?,
    };
    let model_config = config.model_config(train.dim(), k)?;
    if config.output.weights != WeightFormat::None && model_config.learner == LearnerKind::Logreg {
        return Err(Invalid("output.weights needs a fly or perceptron learner".into()).into());
    }
    let seeds = trial_seeds(master, config.protocol.seeds);

    let inner = if seeds.len() > 1 { Execution::Sequential } else { exec };
    let trials = exec.try_map(&seeds, |&s| {
        run_trial(&model_config, &train, &test, &schedule, s, inner)
    })?;
    let (metrics, models): (Vec<_>, Vec<_>) = trials.into_iter().unzip();
    let report = MetricsReport::from_trials(metrics);
    let offline = if config.protocol.offline {
        Some(run_offline_curve(&model_config, &train, &test, &schedule, &seeds, exec)?)
    } else {
        None
    };

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    if let Some(curve) = &offline {
        append_offline_rows(&mut csv, curve);
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("metrics.csv"), &csv)?;
    write_atomic(&out.join("config.toml"), text.as_bytes())?;
    let weight_files = dump_weights(out, config.output.weights, &seeds, &models)?;

    let summary = json!({
        "command": "run",
        "config_text": text,
        "config": config,
        "master_seed": master,
        "seeds": seeds,
        "model": model_config,
        "dataset": DatasetInfo {
            dim: train.dim(),
            classes: k,
            labels: train.label_map().to_vec(),
            train_items: train.len(),
            test_items: test.len(),
        },
        "tasks": schedule.tasks(),
        "final_accuracy": report.final_accuracy(),
        "mean_memory_loss": report.mean_memory_loss(),
        "metrics": report,
        "offline": offline,
        "weight_files": weight_files,
    });
    write_atomic(&out.join("summary.json"), &to_json(&summary)?)?;
    Ok(summary)
}

/// Offline accuracies share the metrics schema under the name `offline_acc`.
fn append_offline_rows(csv: &mut Vec<u8>, curve: &[OfflineReport]) {
    let mut rows = String::new();
    let seeds = curve.first().map_or(&[][..], |r| r.seeds.as_slice());
    for (s, seed) in seeds.iter().enumerate() {
        for (i, r) in curve.iter().enumerate() {
            writeln!(rows, "{},{},offline_acc,{}", seed, i, r.accuracy[s]).unwrap();
        }
    }
    csv.extend_from_slice(rows.as_bytes());
}

fn dump_weights(
    out: &Path,
    format: WeightFormat,
    seeds: &[u64],
    models: &[Model],
) -> anyhow::Result<Vec<String>> {
    let mut names = Vec::new();
    if format == WeightFormat::None {
        return Ok(names);
    }
    for (seed, model) in seeds.iter().zip(models) {
        let w = model.head.weights().expect("bounded head checked before training");
        let mut bytes = Vec::new();
        let name = match format {
            WeightFormat::Csv => {
                w.write_csv(&mut bytes)?;
                format!("weights_{seed}.csv")
            }
            WeightFormat::Binary => {
                w.write_binary(&mut bytes)?;
                format!("weights_{seed}.bin")
            }
            WeightFormat::None => unreachable!(),
        };
        write_atomic(&out.join(&name), &bytes)?;
        names.push(name);
    }
    Ok(names)
}

/// Parameters of `flycl synth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthParams {
    pub prototypes: usize,
    pub dim: usize,
    pub classes: usize,
    pub xi: f64,
    pub noise: f64,
    pub per_prototype: usize,
    pub seed: u64,
}

/// A second file drawn from the same prototypes with fresh noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSplit {
    pub out: PathBuf,
    pub per_prototype: usize,
}

/// `flycl synth`: writes `per_prototype` noisy copies of each of
/// `prototypes` generated vectors as a feature CSV. With `split`, a held-out
/// file shares the prototypes; its noise stream is `derive_seed(seed, 2)`.
pub fn cmd_synth(params: &SynthParams, out: &Path, split: Option<&SynthSplit>) -> anyhow::Result<Value> {
    let protos = data::generate_prototypes(
        params.prototypes,
        params.dim,
        params.classes,
        params.xi,
        derive_seed(params.seed, 0),
    )?;
    let set = data::sample_noisy(&protos, params.noise, params.per_prototype, derive_seed(params.seed, 1))?;
    let mut bytes = Vec::new();
    set.write_to(&mut bytes)?;
    write_atomic(out, &bytes)?;
    let mut report = json!({
        "command": "synth",
        "params": params,
        "rows": set.len(),
        "measured_max_cosine": protos.max_cosine(),
        "out": out,
    });
    if let Some(split) = split {
        let held = data::sample_noisy(&protos, params.noise, split.per_prototype, derive_seed(params.seed, 2))?;
        let mut bytes = Vec::new();
        held.write_to(&mut bytes)?;
        write_atomic(&split.out, &bytes)?;
        report["test_out"] = json!(split.out);
        report["test_rows"] = json!(held.len());
    }
    Ok(report)
}

/// `flycl inspect`: shape and class balance of a feature CSV.
pub fn cmd_inspect(path: &Path) -> anyhow::Result<Value> {
    let set = load(path)?;
    Ok(json!({
        "command": "inspect",
        "dim": set.dim(),
        "classes": set.class_count(),
        "labels": set.label_map(),
        "class_counts": set.class_counts(),
        "items": set.len(),
    }))
}

/// The `flycl theory` subcommands.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum TheoryCommand {
    /// Separation margin of a feature file.
    Gamma { features: std::path::PathBuf, include_anchor: bool },
    /// Overlap of winner-take-all supports as a function of input cosine.
    Shrinkage { coding: CodingConfig, pairs: usize },
    /// Monte-Carlo check of the separation bound on generated prototypes.
    Theorem1 {
        prototypes: usize,
        classes: usize,
        xi: f64,
        coding: CodingConfig,
        pairs: usize,
        tolerance: f64,
        repeats: usize,
    },
    /// Fly weights versus the scaled sum of each class's codes.
    Convergence {
        classes: usize,
        per_class: usize,
        noise: f64,
        coding: CodingConfig,
        beta: f64,
    },
    /// Two overlapping codes trained in sequence under v1 and v4. With
    /// `repeats = 0` the built-in scenario runs once.
    Hijack { repeats: usize },
}

impl TheoryCommand {
    pub fn name(&self) -> &'static str {
        match self {
            TheoryCommand::Gamma { .. } => "gamma",
            TheoryCommand::Shrinkage { .. } => "shrinkage",
            TheoryCommand::Theorem1 { .. } => "theorem1",
            TheoryCommand::Convergence { .. } => "convergence",
            TheoryCommand::Hijack { .. } => "hijack",
        }
    }
}

/// `flycl theory <name>`: writes `<out>/<name>.json` holding the parameters,
/// seed and report.
pub fn cmd_theory(
    command: &TheoryCommand,
    seed: u64,
    out: &Path,
    exec: Execution,
) -> anyhow::Result<Value> {
    let report = match command {
        TheoryCommand::Gamma { features, include_anchor } => {
            let set = load(features)?;
            let policy = if *include_anchor { AnchorPolicy::Include } else { AnchorPolicy::Exclude };
            let points: Vec<&[f64]> = set.items().iter().map(|it| it.features.as_slice()).collect();
            let labels: Vec<usize> = set.items().iter().map(|it| it.label).collect();
            serde_json::to_value(theory::separation(&points, &labels, set.class_count(), policy, exec)?)?
        }
        TheoryCommand::Shrinkage { coding, pairs } => {
            let profile = theory::shrinkage_profile(coding, *pairs, seed, exec)?;
            json!({ "monotone_fraction": profile.monotone_fraction(), "profile": profile })
        }
        TheoryCommand::Theorem1 {
            prototypes,
            classes,
            xi,
            coding,
            pairs,
            tolerance,
            repeats,
        } => {
            if *repeats == 0 {
                return Err(Invalid("--repeats must be >= 1".into()).into());
            }
            let runs: Vec<u64> = (0..*repeats as u64).collect();
            let inner = if runs.len() > 1 { Execution::Sequential } else { exec };
            let reports = exec.try_map(&runs, |&r| {
                let set_seed = derive_seed(seed, 2 * r);
                let protos = data::generate_prototypes(*prototypes, coding.input_dim, *classes, *xi, set_seed)?;
                theory::check_theorem1(&protos, coding, *pairs, *tolerance, derive_seed(seed, 2 * r + 1), inner)
            })?;
            let count = |s: TheoremStatus| reports.iter().filter(|r| r.status == s).count();
            let (pass, fail, none) = (
                count(TheoremStatus::Pass),
                count(TheoremStatus::Fail),
                count(TheoremStatus::NoGuarantee),
            );
            // per-repeat profiles are large; keep the first one only
            let first_profile = reports.first().map(|r| r.profile.clone());
            let runs: Vec<Value> = reports
                .iter()
                .map(|r| {
                    json!({
                        "status": r.status,
                        "gamma_hat": r.gamma_hat,
                        "bound": r.bound,
                        "f_hat_xi": r.f_hat_xi,
                        "largest_class": r.largest_class,
                        "measured_max_cosine": r.measured_max_cosine,
                        "worst_pair": r.separation.worst_pair,
                    })
                })
                .collect();
            json!({
                "pass": pass,
                "fail": fail,
                "no_guarantee": none,
                "runs": runs,
                "first_profile": first_profile,
            })
        }
        TheoryCommand::Convergence {
            classes,
            per_class,
            noise,
            coding,
            beta,
        } => {
            let CodingMap::SparseBinary { ones_per_row } = coding.map else {
                return Err(Invalid("convergence uses the sparse binary map".into()).into());
            };
            let protos = data::generate_prototypes(*classes, coding.input_dim, *classes, 0.5, derive_seed(seed, 0))?;
            let set = data::sample_noisy(&protos, *noise, *per_class, derive_seed(seed, 1))?;
            let theta = ProjectionMatrix::new(
                coding.input_dim,
                coding.expansion_dim,
                ones_per_row,
                derive_seed(seed, 2),
            )?;
            let encoder = Encoder::from_parts(theta, coding.active_units, Coding::Sparse);
            let codes = encoder.encode_batch(set.items().iter().map(|it| it.features.as_slice()), exec)?;
            let labels: Vec<usize> = set.items().iter().map(|it| it.label).collect();
            serde_json::to_value(theory::mean_convergence_check(*classes, *beta, &codes, &labels)?)?
        }
        TheoryCommand::Hijack { repeats } => {
            if *repeats == 0 {
                serde_json::to_value(theory::hijack_scenario(&HijackScenario::default())?)?
            } else {
                let runs: Vec<u64> = (0..*repeats as u64).collect();
                let reports = exec.try_map(&runs, |&r| {
                    theory::hijack_scenario(&HijackScenario::random(derive_seed(seed, r)))
                })?;
                let both = reports.iter().filter(|r| r.v1_hijacked && r.v4_stable).count();
                json!({
                    "repeats": repeats,
                    "v1_hijacked": reports.iter().filter(|r| r.v1_hijacked).count(),
                    "v4_stable": reports.iter().filter(|r| r.v4_stable).count(),
                    "both": both,
                    "reports": reports,
                })
            }
        }
    };
    let summary = json!({
        "command": format!("theory {}", command.name()),
        "params": command,
        "seed": seed,
        "report": report,
    });
    write_atomic(&out.join(format!("{}.json", command.name())), &to_json(&summary)?)?;
    Ok(summary)
}
