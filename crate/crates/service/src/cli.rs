//! Command-line entry point.

use std::path::PathBuf;

use anyhow::Result;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use inciplan::predictor::{render_table, Metric};

use crate::config::{Config, CONFIG_ENV};
use crate::pipeline;
use crate::server::Server;

#[derive(Debug, Parser)]
#[command(name = "inciplan", version, about = "Incident signal-plan recommender: scenario, training, replay and service")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for scenario generation and training; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Build feature frames from the feed directory.
    Ingest,
    /// Train the speed forecaster.
    TrainPredictor,
    /// Train the plan ranker on every engagement window.
    TrainAssociator,
    /// Replay feeds through both models and write events and a report.
    Replay(ReplayArgs),
    /// Forecast accuracy tables and the leave-one-out plan evaluation.
    Evaluate,
    /// Run the streaming HTTP service.
    Serve,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Write a synthetic feed directory with network, plans and engagements.
    Generate,
    /// Same as the top-level `replay`.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Day to replay (YYYY-MM-DD); repeatable. Defaults to every day with an
    /// operator engagement.
    #[arg(long = "date", value_name = "DATE")]
    pub dates: Vec<NaiveDate>,
}

pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn replay(cfg: &Config, args: &ReplayArgs) -> Result<()> {
    let out = pipeline::replay(cfg, &args.dates)?;
    println!(
        "{} steps, {} plan changes; wrote {} and {}",
        out.summary.steps,
        out.summary.changes.len(),
        out.events.display(),
        out.report.display()
    );
    if let Some(e) = &out.summary.evaluation {
        println!("precision {:.3}, recall {:.3}", e.macro_precision, e.macro_recall);
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Scenario(ScenarioCommand::Generate) => {
            let dir = pipeline::generate(&cfg, cli.seed)?;
            println!("wrote scenario to {}", dir.display());
        }
        Command::Scenario(ScenarioCommand::Replay(args)) | Command::Replay(args) => replay(&cfg, args)?,
        Command::Ingest => {
            let n = pipeline::ingest(&cfg)?;
            println!("wrote {n} frames to {}", cfg.paths.frames.display());
        }
        Command::TrainPredictor => {
            let r = pipeline::train_predictor(&cfg, cfg.seed)?;
            print!("{}", render_table("RMSE (mph) on test windows", &r.test, Metric::Rmse));
            println!(
                "{} parameters, {} epochs, best epoch {}; wrote {}",
                r.parameters,
                r.history.epochs.len(),
                r.history.best_epoch,
                cfg.paths.predictor_checkpoint().display()
            );
        }
        Command::TrainAssociator => {
            let m = pipeline::train_associator(&cfg)?;
            println!(
                "{} of {} weights nonzero; wrote {}",
                m.nonzero(),
                m.weights.len(),
                cfg.paths.rank_model().display()
            );
        }
        Command::Evaluate => {
            let (_, text) = pipeline::evaluate(&cfg)?;
            print!("{text}");
        }
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = Server::start(cfg).await?;
                println!("listening on http://{}", server.addr);
                tokio::signal::ctrl_c().await?;
                server.shutdown().await;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

/// Error chain on one line.
pub fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").split_whitespace().collect::<Vec<_>>().join(" ")
}
