use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nnoodkit::cli;
use nnoodkit::tasks::TaskKind;

#[derive(Parser)]
#[command(
    name = "nnoodkit",
    version,
    about = "Synthetic anomaly generation and evaluation"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand)]
enum Command {
    /// Compute the experiment plan for a dataset.
    Plan {
        #[arg(long)]
        dataset: PathBuf,
        /// Output file (default: <dataset>/plan.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate a task's parameters on the training images.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (default: task_params.json).
        #[arg(long, default_value = cli::PARAMS_FILE)]
        out: PathBuf,
    },
    /// Write augmented samples, label maps and JSON sidecars.
    Generate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "NNOODKIT_JOBS")]
        jobs: Option<usize>,
    },
    /// Pixel-wise AUROC and AP of predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Output file (default: <pred>/metrics.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render original | augmented | label panels as PNG.
    Inspect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, short = 'n', default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "NNOODKIT_JOBS")]
        jobs: Option<usize>,
    },
}

fn run(args: Args) -> Result<bool> {
    match args.command {
        Command::Plan { dataset, out } => {
            let out = out.unwrap_or_else(|| dataset.join(cli::PLAN_FILE));
            let plan = cli::cmd_plan(&dataset, &out).context("plan failed")?;
            println!("patch size {:?} -> {}", plan.patch_size, out.display());
        }
        Command::Calibrate {
            dataset,
            task,
            plan,
            seed,
            out,
        } => {
            cli::cmd_calibrate(&dataset, task, &plan, seed, &out).context("calibration failed")?;
            println!("{task} parameters -> {}", out.display());
        }
        Command::Generate {
            dataset,
            params,
            count,
            seed,
            out,
            jobs,
        } => {
            let jobs = jobs.unwrap_or_else(default_jobs);
            let report = cli::cmd_generate(&dataset, &params, count, seed, &out, jobs)
                .context("generate failed")?;
            for (k, msg) in &report.failures {
                eprintln!("sample {k}: {msg}");
            }
            println!(
                "{} of {count} samples -> {}",
                report.written.len(),
                out.display()
            );
            return Ok(report.failures.is_empty());
        }
        Command::Evaluate { pred, gt, out } => {
            let out = out.unwrap_or_else(|| pred.join(cli::METRICS_FILE));
            let r = cli::cmd_evaluate(&pred, &gt, &out).context("evaluation failed")?;
            println!(
                "auroc {:.4}  ap {:.4}  random-baseline ap {:.4} -> {}",
                r.auroc,
                r.ap,
                r.prevalence,
                out.display()
            );
        }
        Command::Inspect {
            dataset,
            params,
            count,
            seed,
            out,
            jobs,
        } => {
            let jobs = jobs.unwrap_or_else(default_jobs);
            let panels = cli::cmd_inspect(&dataset, &params, count, seed, &out, jobs)
                .context("inspect failed")?;
            println!("{} panels -> {}", panels.len(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
