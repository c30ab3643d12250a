//! Model configuration and the assembled encoder + output head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{self, default_per_row, Projection, ProjectionMatrix, SparseCode};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::learner::{PerceptronVariant, Prediction, SoftmaxHead, WeightMatrix};

/// Output-layer learning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LearnerKind {
    /// Partial freezing with optional decay.
    Fly,
    Perceptron(PerceptronVariant),
    /// Softmax head trained by gradient descent.
    Logreg,
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerKind::Fly => f.write_str("fly"),
            LearnerKind::Perceptron(v) => write!(f, "perceptron-{v}"),
            LearnerKind::Logreg => f.write_str("logreg"),
        }
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fly" => Ok(LearnerKind::Fly),
            "logreg" => Ok(LearnerKind::Logreg),
            _ => match s.strip_prefix("perceptron-") {
                Some(v) => Ok(LearnerKind::Perceptron(v.parse()?)),
                None => Err(Error::Config(format!(
                    "unknown learner {s:?} (expected fly, perceptron-v1..v4 or logreg)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for LearnerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LearnerKind> for String {
    fn from(k: LearnerKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    /// Winner-take-all then divide-by-max.
    Sparse,
    /// Min-max normalized projection, no winner-take-all.
    Dense,
}

impl FromStr for Coding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Coding::Sparse),
            "dense" => Ok(Coding::Dense),
            _ => Err(Error::Config(format!("unknown coding {s:?} (expected sparse or dense)"))),
        }
    }
}

/// Hyperparameters for one model. `beta` is the learning rate of whichever
/// head is selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub learner: LearnerKind,
    pub coding: Coding,
    /// Expansion dimension `m`.
    pub expansion_dim: usize,
    /// Winner-take-all level `l`.
    pub active_units: usize,
    /// Ones per projection row `p`.
    pub ones_per_row: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl ModelConfig {
    /// `m = 40 d`, `l = m / k`, `p` from [`default_per_row`], `alpha = 0`,
    /// `beta = 0.01`.
    pub fn with_defaults(learner: LearnerKind, coding: Coding, d: usize, k: usize) -> Self {
        let m = 40 * d;
        ModelConfig {
            learner,
            coding,
            expansion_dim: m,
            active_units: (m / k.max(1)).max(1),
            ones_per_row: default_per_row(d),
            alpha: 0.0,
            beta: 0.01,
        }
    }

    /// Checks the configuration against an input dimension.
    pub fn validate(&self, d: usize) -> Result<()> {
        let m = self.expansion_dim;
        if m == 0 {
            return Err(Error::Config("expansion_dim must be >= 1".into()));
        }
        if self.active_units == 0 || self.active_units > m {
            return Err(Error::Config(format!(
                "active_units (l={}) must lie in 1..=expansion_dim (m={m})",
                self.active_units
            )));
        }
        if self.ones_per_row == 0 || self.ones_per_row > d {
            return Err(Error::Config(format!(
                "ones_per_row (p={}) must lie in 1..=input dim (d={d})",
                self.ones_per_row
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Fixed first layer: projection plus coding mode.
#[derive(Debug, Clone)]
pub struct Encoder {
    theta: ProjectionMatrix,
    active_units: usize,
    coding: Coding,
}

impl Encoder {
    pub fn new(config: &ModelConfig, d: usize, seed: u64) -> Result<Self> {
        config.validate(d)?;
        Ok(Encoder {
            theta: ProjectionMatrix::new(d, config.expansion_dim, config.ones_per_row, seed)?,
            active_units: config.active_units,
            coding: config.coding,
        })
    }

    pub fn from_parts(theta: ProjectionMatrix, active_units: usize, coding: Coding) -> Self {
        Encoder {
            theta,
            active_units,
            coding,
        }
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.theta
    }

    pub fn code_dim(&self) -> usize {
        self.theta.output_dim()
    }

    /// Encodes one input. Dense codes are returned in sparse storage (only
    /// their nonzero entries are kept), which leaves every dot product intact.
    pub fn encode(&self, x: &[f64]) -> Result<SparseCode> {
        match self.coding {
            Coding::Sparse => encoder::encode(&self.theta, x, self.active_units),
            Coding::Dense => Ok(SparseCode::from_dense(
                encoder::encode_dense(&self.theta, x)?.values(),
            )),
        }
    }

    pub fn encode_batch<'a, I>(&self, inputs: I, exec: Execution) -> Result<Vec<SparseCode>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let inputs: Vec<&[f64]> = inputs.into_iter().collect();
        exec.try_map(&inputs, |x| self.encode(x))
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Fly(WeightMatrix),
    Perceptron(WeightMatrix, PerceptronVariant),
    Softmax(SoftmaxHead),
}

impl Head {
    pub fn new(config: &ModelConfig, k: usize) -> Result<Self> {
        let m = config.expansion_dim;
        Ok(match config.learner {
            LearnerKind::Fly => Head::Fly(WeightMatrix::new(m, k, config.alpha, config.beta)?),
            LearnerKind::Perceptron(v) => {
                Head::Perceptron(WeightMatrix::new(m, k, config.alpha, config.beta)?, v)
            }
            LearnerKind::Logreg => Head::Softmax(SoftmaxHead::new(m, k, config.beta)?),
        })
    }

    pub fn predict(&self, code: &SparseCode) -> Result<Prediction> {
        match self {
            Head::Fly(w) | Head::Perceptron(w, _) => w.predict(code),
            Head::Softmax(h) => h.predict(code),
        }
    }

    /// One online training step on `(code, target)`.
    pub fn train(&mut self, code: &SparseCode, target: usize) -> Result<()> {
        match self {
            Head::Fly(w) => w.update_fly(code, target),
            Head::Perceptron(w, v) => {
                let predicted = w.predict(code)?.class_index;
                w.update_perceptron(code, target, predicted, *v)
            }
            Head::Softmax(h) => h.update(code, target),
        }
    }

    /// Bounded associative weights, if this head has them.
    pub fn weights(&self) -> Option<&WeightMatrix> {
        match self {
            Head::Fly(w) | Head::Perceptron(w, _) => Some(w),
            Head::Softmax(_) => None,
        }
    }
}

/// Encoder and output head for one trial.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    pub fn new(config: &ModelConfig, d: usize, k: usize, seed: u64) -> Result<Self> {
        Ok(Model {
            encoder: Encoder::new(config, d, seed)?,
            head: Head::new(config, k)?,
        })
    }

    pub fn predict_input(&self, x: &[f64]) -> Result<Prediction> {
        self.head.predict(&self.encoder.encode(x)?)
    }

    /// Trains on `codes[i]` with label `labels[i]` for each `i` in `order`.
    pub fn fit(&mut self, codes: &[SparseCode], labels: &[usize], order: &[usize]) -> Result<()> {
        for &i in order {
            self.head.train(&codes[i], labels[i])?;
        }
        Ok(())
    }
}
