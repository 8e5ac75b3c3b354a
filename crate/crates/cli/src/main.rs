use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snn_mia::harness::{
    convert_trained, gap_trend, read_report, run_experiment_to_dir, run_grid, train_target, DatasetSpec,
    ExperimentConfig, ExperimentReport, GridConfig,
};
use snn_mia::netmodel::{load_model, save_model};
use snn_mia::numerics::Rng;
use snn_mia::training::write_epoch_csv;
use snn_mia::Error;

/// Membership inference laboratory for spiking and conventional networks.
#[derive(Parser)]
#[command(name = "snn-mia", version)]
struct Cli {
    /// Experiment (or grid) configuration as JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the configured synthetic dataset as an EVT1 or FT32 file.
    GenData,
    /// Trains the target model and saves it with its training curve.
    Train,
    /// Converts a trained ANN into an SNN.
    Convert {
        /// Trained ANN; trains one from the config when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Runs the full attack experiment and writes its report.
    Attack,
    /// Summarizes report.json files; with 3 or more, prints the gap trend.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Runs a grid of experiments.
    Grid,
    /// Runs the test suites of this workspace through cargo.
    Verify {
        /// Only the acceptance criteria.
        #[arg(long)]
        acceptance: bool,
    },
}

enum Failure {
    Lab(Error),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lab(e)
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Other(format!("cannot read {}: {e}", path.display())))
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => serde_json::from_str::<ExperimentConfig>(&read_text(p)?).map_err(Error::from)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path, Failure> {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| Failure::Other(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    Ok(&cli.out_dir)
}

fn summary(r: &ExperimentReport) {
    println!(
        "{}: {:?} train {:.4} test {:.4} gap {:.4} | best {} {:.4}",
        r.name,
        r.family,
        r.target_train_acc,
        r.target_test_acc,
        r.gap,
        r.highest_attack.name(),
        r.highest_accuracy
    );
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::GenData => {
            let cfg = experiment(cli)?;
            let data = cfg.dataset.load(&Rng::new(cfg.seed).split(1))?;
            let name = if cfg.dataset.is_events() { "data.evt" } else { "data.ft32" };
            let spec: DatasetSpec = data.save(out_dir(cli)?.join(name))?;
            println!("{}", serde_json::to_string(&spec).map_err(Error::from)?);
        }
        Command::Train => {
            let cfg = experiment(cli)?;
            let (model, history) = train_target(&cfg)?;
            let dir = out_dir(cli)?;
            save_model(&model, dir.join("model.mdl"))?;
            write_epoch_csv(dir.join("train.csv"), &history)?;
            if let Some(last) = history.last() {
                println!("epoch {} train loss {:.5}", last.epoch, last.train_loss);
            }
        }
        Command::Convert { model } => {
            let cfg = experiment(cli)?;
            let ann = match model {
                Some(p) => load_model(p)?,
                None => {
                    let mut c = cfg.clone();
                    c.strategy = Default::default();
                    train_target(&c)?.0
                }
            };
            let snn = convert_trained(&cfg, &ann)?;
            save_model(&snn, out_dir(cli)?.join("converted.mdl"))?;
        }
        Command::Attack => {
            let cfg = experiment(cli)?;
            let (report, paths) = run_experiment_to_dir(&cfg, out_dir(cli)?)?;
            summary(&report);
            println!("{}", paths.json.display());
        }
        Command::Report { reports } => {
            let reports: Vec<ExperimentReport> = reports
                .iter()
                .map(|p| {
                    let p = if p.is_dir() { p.join("report.json") } else { p.clone() };
                    read_report(p)
                })
                .collect::<Result<_, _>>()?;
            for r in &reports {
                summary(r);
            }
            if reports.len() >= 3 {
                println!("gap trend (Spearman): {:.4}", gap_trend(&reports)?);
            }
        }
        Command::Grid => {
            let path = cli.config.as_ref().ok_or_else(|| Error::Config("grid needs --config".into()))?;
            let mut grid: GridConfig = serde_json::from_str(&read_text(path)?).map_err(Error::from)?;
            if let Some(s) = cli.seed {
                grid.base.seed = s;
            }
            let outcome = run_grid(&grid, Some(out_dir(cli)?))?;
            for r in &outcome.reports {
                summary(r);
            }
            match outcome.gap_trend {
                Some(t) => println!("gap trend (Spearman): {t:.4}"),
                None => println!("gap trend undefined"),
            }
        }
        Command::Verify { acceptance } => {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
            let mut cmd = std::process::Command::new(std::env::var("CARGO").unwrap_or_else(|_| "cargo".into()));
            cmd.current_dir(root).arg("test");
            if *acceptance {
                cmd.args(["-p", "snn-mia", "--test", "acceptance", "--", "--nocapture"]);
            } else {
                cmd.arg("--workspace");
            }
            let status = cmd.status().map_err(|e| Failure::Other(format!("cannot run cargo: {e}")))?;
            if !status.success() {
                return Err(Failure::Other("test suites failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lab(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
