use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ganlab_client::Client;
use ganlab_server::api::{EvalRequest, JobState, ReportRequest, SubmitExperimentRequest};

#[derive(Parser, Debug)]
#[command(name = "ganlab", about = "Client for the GAN training lab service")]
struct Args {
    /// Service base URL.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    server: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a single training entry and wait for its results.
    Train(RunArgs),
    /// Run a multi-entry sweep and wait for the combined table.
    Sweep(RunArgs),
    /// Evaluate a saved checkpoint against a config's dataset.
    Eval {
        /// Checkpoint file to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "f64")]
        precision: String,
    },
    /// Merge run records into one CSV table.
    Report {
        /// run_record.json files to merge.
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Parser, Debug)]
struct RunArgs {
    /// Experiment config file (flat `section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints, histories and the table.
    #[arg(long)]
    out: PathBuf,
    /// Numeric mode: f32 or f64.
    #[arg(long, default_value = "f64")]
    precision: String,
    /// Replaces train.seed_train from the config.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Poll interval in seconds while waiting.
    #[arg(long, default_value_t = 2.0)]
    poll_secs: f64,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let client = Client::new(&args.server)?;
    match args.command {
        Command::Train(run) | Command::Sweep(run) => run_experiment(&client, run),
        Command::Eval {
            checkpoint,
            config,
            precision,
        } => {
            let config_text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let resp = client.eval(&EvalRequest {
                checkpoint_path: checkpoint.display().to_string(),
                config_text,
                precision,
            })?;
            println!("{}", serde_json::to_string_pretty(&resp.reports)?);
            Ok(())
        }
        Command::Report { records, out } => {
            let resp = client.report(&ReportRequest {
                record_paths: records.iter().map(|p| p.display().to_string()).collect(),
                out_path: out.display().to_string(),
            })?;
            eprintln!("wrote {} rows to {}", resp.rows, out.display());
            print!("{}", resp.csv);
            Ok(())
        }
    }
}

fn run_experiment(client: &Client, run: RunArgs) -> Result<()> {
    let config_text = std::fs::read_to_string(&run.config)
        .with_context(|| format!("reading {}", run.config.display()))?;
    let id = client.submit(&SubmitExperimentRequest {
        config_text,
        out_dir: run.out.display().to_string(),
        precision: run.precision,
        seed_override: run.seed_override,
    })?;
    eprintln!("submitted job {id}");
    let status = client.wait(id, Duration::from_secs_f64(run.poll_secs.max(0.1)))?;
    match status.state {
        JobState::Complete => {
            print!("{}", client.table(id)?);
            Ok(())
        }
        JobState::Failed => {
            bail!(
                "job {id} failed: {}",
                status.error.unwrap_or_else(|| "unknown error".into())
            )
        }
        JobState::Running => unreachable!("wait returned a running job"),
    }
}
