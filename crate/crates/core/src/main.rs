use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uwtrust::governance::{verify_export, ExportVerdict};
use uwtrust::harness::experiment::{report, run_experiment, ModelInfo, EXPERIMENT_BASE_SEED};
use uwtrust::harness::traces::{gen_traces, load_traces, LoadOptions, TRACE_BASE_SEED};
use uwtrust::harness::{Mode, ScenarioConfig};
use uwtrust::trust::model_file;
use uwtrust::trust::train::{train, TrainConfig};
use uwtrust::trust::{Scorer, TraceSet};
use uwtrust::{Error, Result};

#[derive(Parser)]
#[command(name = "uwtrust", version, about = "Underwater multi-agent trust simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One seeded mission in one mode.
    Run {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = EXPERIMENT_BASE_SEED)]
        seed: u64,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded runs of several modes plus the aggregate.
    Experiment {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// `all` or a comma-separated list.
        #[arg(long, default_value = "all")]
        modes: String,
        #[arg(long, default_value_t = EXPERIMENT_BASE_SEED)]
        base_seed: u64,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Observation-only runs exported as labeled feature traces.
    GenTraces {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = TRACE_BASE_SEED)]
        base_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a scorer on one or more trace directories.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sequences sampled per trace run.
        #[arg(long)]
        per_run: Option<usize>,
    },
    /// Ledger export tools.
    Ledger {
        #[command(subcommand)]
        cmd: LedgerCmd,
    },
    /// Per-interval mean and std tables from an experiment directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Exit 0 when the export verifies, 1 when tampered.
    Verify {
        #[arg(long)]
        file: PathBuf,
    },
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Mode::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse()).collect()
}

fn load_model(
    cfg: &ScenarioConfig,
    flag: Option<PathBuf>,
    modes: &[Mode],
) -> Result<Option<(Scorer<f32>, ModelInfo)>> {
    if !modes.contains(&Mode::Interrogator) {
        return Ok(None);
    }
    let path = flag
        .or_else(|| cfg.model_path.clone())
        .ok_or_else(|| Error::Config("interrogator mode needs --model or model_path".into()))?;
    let model = model_file::load::<f32>(&path)?;
    Ok(Some((model, ModelInfo::of_file(&path)?)))
}

fn experiment(
    scenario: Option<PathBuf>,
    modes: &[Mode],
    runs: usize,
    base_seed: u64,
    model: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let cfg = load_scenario(scenario.as_deref())?;
    let model = load_model(&cfg, model, modes)?;
    let r = run_experiment(
        &cfg,
        modes,
        runs,
        base_seed,
        model.as_ref().map(|(m, info)| (m, info.clone())),
        out,
    )?;
    for (mode, agg) in &r.aggregate.modes {
        let show = |name: &str| {
            agg.metrics
                .get(name)
                .and_then(|m| m.mean)
                .map_or("-".to_string(), |v| format!("{v:.4}"))
        };
        println!(
            "{mode:<12} runs={} accuracy={} pdr={} residual_J={} latency_s={}",
            agg.runs,
            show("accuracy"),
            show("pdr"),
            show("mean_residual_energy_J"),
            show("median_detection_latency_s"),
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { scenario, seed, mode, model, out } => {
            let mode = match mode {
                Some(m) => m,
                None => load_scenario(scenario.as_deref())?.mode,
            };
            experiment(scenario, &[mode], 1, seed, model, &out)?;
        }
        Cmd::Experiment { scenario, runs, modes, base_seed, model, out } => {
            experiment(scenario, &parse_modes(&modes)?, runs, base_seed, model, &out)?;
        }
        Cmd::GenTraces { scenario, runs, base_seed, out } => {
            let cfg = load_scenario(scenario.as_deref())?;
            let m = gen_traces(&cfg, runs, base_seed, &out)?;
            println!("{} rows ({} positive) in {} files", m.rows, m.positives, m.files.len());
        }
        Cmd::Train { traces, out, epochs, lr, seed, per_run } => {
            let mut load = LoadOptions::default();
            if let Some(n) = per_run {
                load.per_run = n;
            }
            let mut set = TraceSet::default();
            for dir in &traces {
                set.extend(load_traces(dir, &load)?);
            }
            let mut tc = TrainConfig::default();
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(r) = lr {
                tc.lr = r;
            }
            if let Some(s) = seed {
                tc.seed = s;
            }
            let (model, rep) = train(&set, &tc)?;
            model_file::save(&model, &out)?;
            let report_path = out.with_extension("report.json");
            let text = serde_json::to_string_pretty(&serde_json::json!({
                "train_config": tc,
                "load_options": load,
                "report": rep,
            }))? + "\n";
            std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
            if let Some(last) = rep.last() {
                println!(
                    "val accuracy={:?} precision={:?} recall={:?}",
                    last.val_accuracy, last.val_precision, last.val_recall
                );
            }
            println!("wrote {} and {}", out.display(), report_path.display());
        }
        Cmd::Ledger { cmd: LedgerCmd::Verify { file } } => {
            let bytes = std::fs::read(&file).map_err(|e| Error::io(&file, e))?;
            return Ok(match verify_export(&bytes) {
                ExportVerdict::Valid { blocks } => {
                    println!("valid: {blocks} blocks");
                    ExitCode::SUCCESS
                }
                ExportVerdict::Tampered { height } => {
                    println!("tampered at height {height}");
                    ExitCode::from(1)
                }
            });
        }
        Cmd::Report { input, out } => {
            let n = report(&input, &out)?;
            println!("{n} rows written to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
