use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flycl::encoder::default_per_row;
use flycl::theory::{CodingConfig, CodingMap};
use flycl_cli::{exit_code, with_jobs, SynthParams, SynthSplit, TheoryCommand, EXIT_INVALID};

/// Class-incremental experiments with sparse expansion codes and
/// partial-freezing output layers.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Output directory (or file, for `synth`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed; overrides the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the class-incremental protocol described by a TOML config
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write noisy copies of generated prototypes as a feature CSV
    Synth {
        #[arg(long, default_value_t = 20)]
        prototypes: usize,
        #[arg(long, default_value_t = 50)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Largest cosine between prototypes
        #[arg(long, default_value_t = 0.3)]
        xi: f64,
        /// Standard deviation of the per-coordinate Gaussian noise
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Copies per prototype
        #[arg(long, default_value_t = 200)]
        per_prototype: usize,
        /// Also write a held-out file from the same prototypes
        #[arg(long)]
        test_out: Option<PathBuf>,
        /// Copies per prototype in the held-out file
        #[arg(long, default_value_t = 50, requires = "test_out")]
        test_per_prototype: usize,
    },
    /// Print the shape and class balance of a feature CSV
    Inspect { path: PathBuf },
    /// Write a theory report as JSON
    Theory {
        #[command(subcommand)]
        which: TheoryArgs,
    },
}

#[derive(Args, Clone, Copy)]
struct CodingArgs {
    #[arg(long, default_value_t = 50)]
    dim: usize,
    /// Expansion dimension
    #[arg(long, default_value_t = 2000)]
    m: usize,
    /// Active units
    #[arg(long, default_value_t = 100)]
    l: usize,
    /// Ones per projection row; defaults to about d / 10
    #[arg(long)]
    p: Option<usize>,
    /// Use an i.i.d. Gaussian projection instead of the sparse binary one
    #[arg(long)]
    gaussian: bool,
}

impl CodingArgs {
    fn config(self) -> CodingConfig {
        CodingConfig {
            input_dim: self.dim,
            expansion_dim: self.m,
            active_units: self.l,
            map: if self.gaussian {
                CodingMap::DenseGaussian
            } else {
                CodingMap::SparseBinary {
                    ones_per_row: self.p.unwrap_or_else(|| default_per_row(self.dim)),
                }
            },
        }
    }
}

#[derive(Subcommand)]
enum TheoryArgs {
    /// Separation margin of a feature CSV
    Gamma {
        #[arg(long)]
        features: PathBuf,
        /// Count each anchor in its own class mean
        #[arg(long)]
        include_anchor: bool,
    },
    /// Code overlap as a function of input cosine
    Shrinkage {
        #[command(flatten)]
        coding: CodingArgs,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
    },
    /// Separation bound on generated prototype sets
    Theorem1 {
        #[arg(long, default_value_t = 20)]
        prototypes: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0.3)]
        xi: f64,
        #[command(flatten)]
        coding: CodingArgs,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Fly weights against the scaled class sums of codes
    Convergence {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[command(flatten)]
        coding: CodingArgs,
        #[arg(long, default_value_t = 0.001)]
        beta: f64,
    },
    /// v1 versus v4 on two overlapping codes trained in sequence
    Hijack {
        /// Random scenarios to run; 0 runs the built-in one
        #[arg(long, default_value_t = 0)]
        repeats: usize,
    },
}

impl From<TheoryArgs> for TheoryCommand {
    fn from(args: TheoryArgs) -> Self {
        match args {
            TheoryArgs::Gamma { features, include_anchor } => TheoryCommand::Gamma { features, include_anchor },
            TheoryArgs::Shrinkage { coding, pairs } => TheoryCommand::Shrinkage {
                coding: coding.config(),
                pairs,
            },
            TheoryArgs::Theorem1 {
                prototypes,
                classes,
                xi,
                coding,
                pairs,
                tolerance,
                repeats,
            } => TheoryCommand::Theorem1 {
                prototypes,
                classes,
                xi,
                coding: coding.config(),
                pairs,
                tolerance,
                repeats,
            },
            TheoryArgs::Convergence {
                classes,
                per_class,
                noise,
                coding,
                beta,
            } => TheoryCommand::Convergence {
                classes,
                per_class,
                noise,
                coding: coding.config(),
                beta,
            },
            TheoryArgs::Hijack { repeats } => TheoryCommand::Hijack { repeats },
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let seed = cli.seed;
    let out_dir = || cli.out.clone().unwrap_or_else(|| PathBuf::from("flycl-out"));
    match cli.command {
        Command::Run { config } => with_jobs(cli.jobs, |exec| flycl_cli::cmd_run(&config, &out_dir(), seed, exec)),
        Command::Synth {
            prototypes,
            dim,
            classes,
            xi,
            noise,
            per_prototype,
            test_out,
            test_per_prototype,
        } => {
            let params = SynthParams {
                prototypes,
                dim,
                classes,
                xi,
                noise,
                per_prototype,
                seed: seed.unwrap_or(0),
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("features.csv"));
            let split = test_out.map(|out| SynthSplit {
                out,
                per_prototype: test_per_prototype,
            });
            flycl_cli::cmd_synth(&params, &out, split.as_ref())
        }
        Command::Inspect { path } => flycl_cli::cmd_inspect(&path),
        Command::Theory { which } => {
            let command = TheoryCommand::from(which);
            with_jobs(cli.jobs, |exec| {
                flycl_cli::cmd_theory(&command, seed.unwrap_or(0), &out_dir(), exec)
            })
        }
    }
}

fn print_headline(value: &serde_json::Value) {
    let Some(obj) = value.as_object() else { return };
    for (key, v) in obj {
        if v.is_number() || v.is_boolean() || (key == "status" && v.is_string()) {
            let _ = writeln!(std::io::stdout().lock(), "{key}: {v}");
        }
    }
    if let Some(report) = obj.get("report") {
        print_headline(report);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            // usage errors are validation errors
            return if err.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    let inspect = matches!(cli.command, Command::Inspect { .. });
    match run(cli) {
        Ok(summary) if inspect => {
            // a closed pipe is not an error worth reporting
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary).unwrap());
            ExitCode::SUCCESS
        }
        Ok(summary) => {
            print_headline(&summary);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
