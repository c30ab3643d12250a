//! Library side of the `flycl` binary: config parsing, the `run`, `synth`,
//! `theory` and `inspect` commands, and atomic output writing.
//!
//! Every command is a pure function of its arguments and master seed, so two
//! invocations with the same inputs write byte-identical files.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use flycl::Execution;

pub mod commands;
pub mod config;

pub use commands::{cmd_inspect, cmd_run, cmd_synth, cmd_theory, SynthParams, SynthSplit, TheoryCommand};
pub use config::ExperimentConfig;

/// A user-facing validation failure (exit code 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Exit code for an error: 1 when any cause is a validation failure,
/// otherwise 2.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<flycl::Error>() {
            return if e.is_validation() { EXIT_INVALID } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Runs `f` with at most `jobs` worker threads. `Some(1)` forces sequential
/// execution; `None` uses the default pool.
pub fn with_jobs<T>(
    jobs: Option<usize>,
    f: impl FnOnce(Execution) -> anyhow::Result<T> + Send,
) -> anyhow::Result<T>
where
    T: Send,
{
    match jobs {
        Some(0) => Err(Invalid("--jobs must be >= 1".into()).into()),
        Some(1) => f(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the worker pool")?
            .install(|| f(Execution::Parallel)),
        #[cfg(not(feature = "parallel"))]
        Some(_) => f(Execution::Sequential),
        None => f(Execution::default()),
    }
}
