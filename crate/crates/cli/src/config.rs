//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use flycl::model::{Coding, LearnerKind, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// One `flycl run` experiment. Relative data paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Lift coordinates whose train minimum is negative so that the train
    /// set is nonnegative; the same offsets apply to the test set.
    #[serde(default)]
    pub shift_nonnegative: bool,
}

/// Noisy copies of prototypes generated from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub prototypes: usize,
    pub dim: usize,
    pub classes: usize,
    pub xi: f64,
    pub noise: f64,
    pub train_per_prototype: usize,
    pub test_per_prototype: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub learner: LearnerKind,
    #[serde(default = "default_coding")]
    pub coding: Coding,
    /// Expansion dimension; defaults to `40 d`.
    pub m: Option<usize>,
    /// Active units; defaults to `m / k`.
    pub l: Option<usize>,
    /// Ones per projection row.
    pub p: Option<usize>,
    pub alpha: Option<f64>,
    /// Learning rate of the selected head.
    pub beta: Option<f64>,
}

fn default_coding() -> Coding {
    Coding::Sparse
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub classes_per_task: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Class arrival order; identity when absent.
    pub class_order: Option<Vec<usize>>,
    /// Also run the shuffled single-pass baseline at every task boundary.
    #[serde(default)]
    pub offline: bool,
}

fn default_seeds() -> usize {
    5
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightFormat {
    #[default]
    None,
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Dump the final weights of every trial (bounded heads only).
    #[serde(default)]
    pub weights: WeightFormat,
}

/// Where the feature sets come from after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Files { train: PathBuf, test: PathBuf },
    Synthetic(SyntheticSpec),
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Invalid> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Invalid(format!("config: {}", e.message())))?;
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), Invalid> {
        if self.protocol.classes_per_task == 0 {
            return Err(Invalid("protocol.classes_per_task must be >= 1".into()));
        }
        if self.protocol.seeds == 0 {
            return Err(Invalid("protocol.seeds must be >= 1".into()));
        }
        if let (Some(m), Some(l)) = (self.model.m, self.model.l) {
            if l == 0 || l > m {
                return Err(Invalid(format!("model.l ({l}) must lie in 1..=model.m ({m})")));
            }
        }
        if self.model.m == Some(0) {
            return Err(Invalid("model.m must be >= 1".into()));
        }
        if let Some(s) = &self.data.synthetic {
            if s.noise < 0.0 || !s.noise.is_finite() {
                return Err(Invalid(format!("data.synthetic.noise must be >= 0, got {}", s.noise)));
            }
            if s.train_per_prototype == 0 || s.test_per_prototype == 0 {
                return Err(Invalid(
                    "data.synthetic.train_per_prototype and test_per_prototype must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Resolves the data source; file paths are taken relative to `base`.
    pub fn data_source(&self, base: &Path) -> Result<DataSource, Invalid> {
        let d = &self.data;
        match (&d.train, &d.test, &d.synthetic) {
            (Some(train), Some(test), None) => Ok(DataSource::Files {
                train: base.join(train),
                test: base.join(test),
            }),
            (None, None, Some(s)) => Ok(DataSource::Synthetic(*s)),
            _ => Err(Invalid(
                "data: give either both data.train and data.test, or data.synthetic".into(),
            )),
        }
    }

    /// Model hyperparameters for input dimension `d` and `k` classes.
    pub fn model_config(&self, d: usize, k: usize) -> Result<ModelConfig, Invalid> {
        let s = &self.model;
        let mut c = ModelConfig::with_defaults(s.learner, s.coding, d, k);
        if let Some(m) = s.m {
            c.expansion_dim = m;
            c.active_units = (m / k.max(1)).max(1);
        }
        if let Some(l) = s.l {
            c.active_units = l;
        }
        if let Some(p) = s.p {
            c.ones_per_row = p;
        }
        if let Some(a) = s.alpha {
            c.alpha = a;
        }
        if let Some(b) = s.beta {
            c.beta = b;
        }
        c.validate(d).map_err(|e| Invalid(format!("model: {e}")))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        seed = 3
        [data.synthetic]
        prototypes = 4
        dim = 6
        classes = 2
        xi = 0.5
        noise = 0.0
        train_per_prototype = 2
        test_per_prototype = 1
        [model]
        learner = "perceptron-v4"
        [protocol]
        classes_per_task = 1
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.protocol.seeds, 5);
        assert_eq!(c.model.coding, Coding::Sparse);
        assert_eq!(c.output.weights, WeightFormat::None);
        let m = c.model_config(6, 2).unwrap();
        assert_eq!((m.expansion_dim, m.active_units), (240, 120));
    }

    #[test]
    fn m_override_rescales_l() {
        let text = BASE.replace("learner = \"perceptron-v4\"", "learner = \"fly\"\nm = 100");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.model_config(6, 2).unwrap().active_units, 50);
    }

    #[test]
    fn l_above_m_names_field() {
        let text = BASE.replace("learner = \"perceptron-v4\"", "learner = \"fly\"\nm = 10\nl = 11");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.0.contains("model.l"), "{}", err.0);
    }

    #[test]
    fn unknown_learner_rejected() {
        let text = BASE.replace("perceptron-v4", "svm");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let text = BASE.replace("seed = 3", "seed = 3\nsed = 4");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn data_source_is_exclusive() {
        let mut c = ExperimentConfig::parse(BASE).unwrap();
        c.data.train = Some("a.csv".into());
        c.data.test = Some("b.csv".into());
        assert!(c.data_source(Path::new(".")).is_err());
        c.data.synthetic = None;
        assert_eq!(
            c.data_source(Path::new("/x")).unwrap(),
            DataSource::Files {
                train: "/x/a.csv".into(),
                test: "/x/b.csv".into()
            }
        );
    }
}
