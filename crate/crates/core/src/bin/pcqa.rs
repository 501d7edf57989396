use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcqa_adapt::commands::{run_ablate, run_eval, run_project, run_train, write_metric_report, TrainJob};
use pcqa_adapt::eval::Suite;

#[derive(Parser)]
#[command(name = "pcqa", version, about = "Image-to-point-cloud quality model adaptation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from a run file and write logs, plot and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the run file's out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a folder of .ply/.ppm files with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Per-file predictions CSV; metrics go to stdout.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run an ablation suite on the synthetic benchmark; prints a CSV of medians.
    Ablate {
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a point cloud to the stitched six-view image (PPM).
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        face_res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write a random training crop of this side instead of the full image.
        #[arg(long)]
        crop: Option<usize>,
    },
}

fn run(cli: Cli) -> pcqa_adapt::Result<()> {
    let stdout = std::io::stdout();
    match cli.cmd {
        Cmd::Train { config, out_dir } => {
            let mut job = TrainJob::load(&config)?;
            if let Some(d) = out_dir {
                job.out_dir = d;
            }
            let out = run_train(&job)?;
            eprintln!("wrote {}", job.out_dir.display());
            if let Some(m) = out.final_metrics {
                write_metric_report(&m, stdout.lock())?;
            }
        }
        Cmd::Eval {
            checkpoint,
            target,
            predictions,
        } => {
            let out = run_eval(&checkpoint, &target)?;
            match predictions {
                Some(p) => out.write_predictions(
                    std::fs::File::create(&p).map_err(|e| pcqa_adapt::Error::io(&p, e))?,
                )?,
                None if out.metrics.is_none() => out.write_predictions(stdout.lock())?,
                None => {}
            }
            if let Some(m) = out.metrics {
                write_metric_report(&m, stdout.lock())?;
            }
        }
        Cmd::Ablate { suite, seeds, out } => {
            let table = run_ablate(suite, seeds, |line| eprintln!("{line}"))?;
            match out {
                Some(p) => table.write_csv(
                    std::fs::File::create(&p).map_err(|e| pcqa_adapt::Error::io(&p, e))?,
                )?,
                None => table.write_csv(stdout.lock())?,
            }
        }
        Cmd::Project {
            input,
            out,
            face_res,
            seed,
            crop,
        } => {
            let img = run_project(&input, &out, face_res, seed, crop)?;
            eprintln!("wrote {} ({}x{})", out.display(), img.width, img.height);
        }
    }
    std::io::stdout().flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
