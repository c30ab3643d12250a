//! Continual learning with sparse random-projection coding and a
//! partial-freezing associative layer.
//!
//! The pipeline is two layers. [`encoder`] expands a `d`-dimensional feature
//! vector through a fixed sparse binary matrix and keeps the top `l` units;
//! [`learner`] associates the resulting code with a class by strengthening
//! only the synapses from active units to the target class. [`harness`] runs
//! the class-incremental protocol and its metrics, [`data`] reads feature
//! files and generates the synthetic prototype model, and [`theory`] checks
//! the separation and convergence properties empirically.

pub mod data;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod harness;
pub mod learner;
pub mod model;
pub mod theory;

pub use encoder::{Code, DenseCode, ProjectionMatrix, SparseCode};
pub use error::{Error, Result};
pub use exec::Execution;
pub use learner::{PerceptronVariant, Prediction, SoftmaxHead, WeightMatrix};
