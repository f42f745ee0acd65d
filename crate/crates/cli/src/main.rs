// SPDX-License-Identifier: Apache-2.0

//! `ttfm`: dataset generation, teacher training, distillation, sampling,
//! KL evaluation, ablation sweeps and plotting.

mod artifacts;
mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Axis, PlotKind};

#[derive(Parser)]
#[command(name = "ttfm", version, about = "Two-timed flow model distillation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every verb.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory (default `out`).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as CSV.
    Dataset,
    /// Train a flow matching teacher.
    TrainTeacher,
    /// Distill a student from a teacher checkpoint.
    Distill {
        /// Teacher checkpoint.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Draw samples from a student or teacher checkpoint.
    Sample {
        /// Student or teacher checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Student: uniform TTFM steps. Teacher: Heun steps.
        #[arg(long, default_value_t = 1)]
        nfe: usize,
        /// Number of samples.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
    /// Estimate KL(student || teacher), one report per NFE.
    EvalKl {
        /// Student checkpoint.
        #[arg(long)]
        student: PathBuf,
        /// Teacher checkpoint.
        #[arg(long)]
        teacher: PathBuf,
        /// Comma-separated NFE list; overrides `eval.nfe`.
        #[arg(long, value_delimiter = ',')]
        nfe: Option<Vec<usize>>,
        /// Overrides `eval.n_samples`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Sweep one loss setting; one distill + eval leg per value.
    Ablate {
        /// Teacher checkpoint.
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Render a point CSV or a telemetry file as SVG.
    Plot {
        /// Point CSV (scatter) or JSON-lines telemetry (loss curve).
        #[arg(long)]
        input: PathBuf,
        /// Overrides the kind inferred from the file extension.
        #[arg(long, value_enum)]
        kind: Option<PlotKind>,
    },
}

fn run(cli: Cli, common: Common) -> anyhow::Result<()> {
    let (mut cfg, out) = config::load(&common)?;
    commands::clear_manifest(&out);
    match cli.command {
        Command::Dataset => commands::dataset(&cfg, &out),
        Command::TrainTeacher => commands::train_teacher_cmd(&cfg, &out),
        Command::Distill { teacher } => commands::distill_cmd(&cfg, &out, &teacher),
        Command::Sample { checkpoint, nfe, n } => commands::sample(&cfg, &out, &checkpoint, nfe, n),
        Command::EvalKl { student, teacher, nfe, n } => {
            if let Some(nfe) = nfe {
                cfg.eval.nfe = nfe;
            }
            if let Some(n) = n {
                cfg.eval.n_samples = n;
            }
            cfg.eval.validate().map_err(|e| anyhow::anyhow!("eval: {e}"))?;
            commands::eval_kl(&cfg, &out, &student, &teacher)
        }
        Command::Ablate { teacher, axis, values } => commands::ablate(&cfg, &out, &teacher, axis, &values),
        Command::Plot { input, kind } => commands::plot(&cfg, &out, &input, kind),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = cli.common.clone();
    match run(cli, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
