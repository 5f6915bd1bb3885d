use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use geospike::harness::{
    emit_results, run, Checkpoint, DataSource, EnergyConstants, RunConfig, Task,
};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "geospike",
    version,
    about = "Spiking graph networks on curved manifolds"
)]
struct Cli {
    /// Repeat for more log output (warn, info, debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the results document.
    Train(TrainArgs),
    /// Re-evaluate a saved checkpoint.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false)]
struct Source {
    /// Directory holding edges.txt, features.csv and labels.txt.
    #[arg(long, group = "source")]
    dataset: Option<PathBuf>,
    /// Generator spec: tree:DEPTH,BRANCHING | cycle:N | sbm:BLOCKS,SIZE,P_IN,P_OUT
    #[arg(long, group = "source")]
    synthetic: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    task: Task,
    /// Product of components such as h32, e32 or s4xs8xh16.
    #[arg(long, default_value = "h32")]
    geometry: String,
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 5)]
    time_steps: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    geo_step: f64,
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long, default_value_t = 1)]
    negatives_per_edge: usize,
    /// Scale feature rows to unit L2 norm.
    #[arg(long)]
    normalize_features: bool,
    /// Learn a linear map in each origin tangent space before aggregation.
    #[arg(long)]
    tangent_transform: bool,
    /// Use spike probabilities as rates instead of sampling spikes.
    #[arg(long)]
    dense: bool,
    /// Per-operation energies in picojoules as MAC,AC.
    #[arg(long, default_value = "4.6,0.9")]
    energy_constants: EnergyConstants,
    /// Results document path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the selected parameters and configuration here.
    #[arg(long)]
    save_params: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train --save-params`.
    #[arg(long)]
    params: PathBuf,
    /// Override the energy constants stored in the checkpoint (MAC,AC).
    #[arg(long)]
    energy_constants: Option<EnergyConstants>,
    /// Output path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> RunConfig {
        let data = match (&self.source.dataset, &self.source.synthetic) {
            (Some(dir), _) => DataSource::Dataset { dir: dir.clone() },
            (None, Some(spec)) => DataSource::Synthetic { spec: spec.clone() },
            (None, None) => unreachable!("clap requires one data source"),
        };
        let mut config = RunConfig::new(self.task, &self.geometry, data);
        config.time_steps = self.time_steps;
        config.lr = self.lr;
        config.geo_step = self.geo_step;
        config.margin = self.margin;
        config.epochs = self.epochs;
        config.seed = self.seed;
        config.dropout = self.dropout;
        config.layers = self.layers;
        config.embedding_dim = self.embedding_dim;
        config.negatives_per_edge = self.negatives_per_edge;
        config.normalize_features = self.normalize_features;
        config.tangent_transform = self.tangent_transform;
        config.dense = self.dense;
        config.energy = self.energy_constants;
        config
    }
}

fn write_or_print(path: Option<&PathBuf>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, format!("{body}\n"))
            .with_context(|| format!("writing {}", p.display())),
        None => writeln!(std::io::stdout().lock(), "{body}").context("writing to stdout"),
    }
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = args.config();
    let (outcome, doc) = run(&config).context("training failed")?;
    if let Some(reason) = &outcome.aborted {
        log::warn!("run aborted early: {reason}");
    }
    match &args.out {
        Some(path) => emit_results(&doc, path)?,
        None => write_or_print(None, &doc.to_json()?)?,
    }
    if let Some(path) = &args.save_params {
        Checkpoint::from_outcome(&config, &outcome).save(path)?;
    }
    eprintln!(
        "{} test {:.4} val {:.4}, energy {:.6} mJ",
        doc.metrics.name, doc.metrics.test, doc.metrics.val, doc.energy.total_mj
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let mut ckpt = Checkpoint::load(&args.params)?;
    if let Some(e) = args.energy_constants {
        ckpt.config.energy = e;
    }
    let (metrics, energy) = ckpt.evaluate().context("evaluation failed")?;
    let body = serde_json::to_string_pretty(&json!({
        "config": ckpt.config,
        "metrics": metrics,
        "energy": energy,
    }))?;
    write_or_print(args.out.as_ref(), &body)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Error,
        1 => log::LevelFilter::Warn,
        2 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let result = match &cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
