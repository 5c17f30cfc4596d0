//! Multi-run experiments and their on-disk outputs.
//!
//! ```text
//! out/
//!   manifest.json            resolved scenario, seeds, normalization, model digest, attack schedules
//!   runs/{mode}_seed{S}.csv  per-interval MetricsRow
//!   ledgers/{mode}_seed{S}.jsonl
//!   run_summaries.csv        one RunStats line per run
//!   aggregate.json           mean and sample std per mode
//! ```
//!
//! Aggregation folds runs in seed order, so output bytes depend only on the
//! inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibration::calibrate;
use super::config::{Mode, ScenarioConfig};
use super::engine::{simulate, RunOptions, RunOutput};
use super::metrics::{fmt_f64, mean_std, MetricsRow, RunStats};
use crate::adversary::AttackProfile;
use crate::error::{Error, Result};
use crate::features::FeatureNorms;
use crate::governance::export_jsonl;
use crate::trust::Scorer;
use crate::world::AgentId;

pub const EXPERIMENT_BASE_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub path: PathBuf,
    pub sha256: String,
}

impl ModelInfo {
    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(ModelInfo {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSchedule {
    pub seed: u64,
    pub hosts: Vec<AgentId>,
    pub compromised: BTreeMap<AgentId, AttackProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: ScenarioConfig,
    pub modes: Vec<Mode>,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub normalization: FeatureNorms,
    pub model: Option<ModelInfo>,
    pub schedules: Vec<RunSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std, n: values.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub modes: BTreeMap<Mode, ModeAggregate>,
    /// 1 − residual(mode)/residual(Static), per seed then averaged. Present
    /// when Static ran.
    pub energy_overhead: BTreeMap<Mode, MeanStd>,
}

/// Scalar summaries of a run that are aggregated across seeds.
pub fn run_scalars(s: &RunStats) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("accuracy", s.accuracy),
        ("precision", Some(s.precision)),
        ("recall", Some(s.recall)),
        ("pdr", s.pdr),
        ("mean_residual_energy_J", Some(s.mean_residual_energy_j)),
        ("median_detection_latency_s", s.median_detection_latency_s),
        ("detected_fraction", (s.compromised > 0).then(|| s.detected as f64 / s.compromised as f64)),
        ("tier2_escalations", Some(s.tier2_escalations as f64)),
        ("tier2_false_positives", Some(s.tier2_false_positives as f64)),
        ("max_enforcement_latency_s", s.max_enforcement_latency_s),
        ("isolations", Some(s.isolations as f64)),
        ("ledger_blocks", Some(s.ledger_blocks as f64)),
        ("view_changes", Some(s.view_changes as f64)),
        ("inferences", Some(s.inferences as f64)),
    ]
}

pub fn aggregate(stats: &[RunStats]) -> Aggregate {
    let mut by_mode: BTreeMap<Mode, Vec<&RunStats>> = BTreeMap::new();
    for s in stats {
        by_mode.entry(s.mode).or_default().push(s);
    }
    let mut modes = BTreeMap::new();
    for (mode, runs) in &by_mode {
        let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in runs {
            for (name, v) in run_scalars(r) {
                let col = cols.entry(name.to_string()).or_default();
                if let Some(v) = v {
                    col.push(v);
                }
            }
        }
        let metrics = cols.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect();
        modes.insert(*mode, ModeAggregate { runs: runs.len(), metrics });
    }
    let mut energy_overhead = BTreeMap::new();
    if let Some(base) = by_mode.get(&Mode::Static) {
        let base: BTreeMap<u64, f64> = base.iter().map(|s| (s.seed, s.mean_residual_energy_j)).collect();
        for (mode, runs) in &by_mode {
            let v: Vec<f64> = runs
                .iter()
                .filter_map(|s| base.get(&s.seed).map(|b| 1.0 - s.mean_residual_energy_j / b))
                .collect();
            energy_overhead.insert(*mode, MeanStd::of(&v));
        }
    }
    Aggregate { modes, energy_overhead }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(MetricsRow::HEADER)?;
    for r in rows {
        w.write_record(r.cells())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<&str> = r.headers()?.iter().collect();
    if header != MetricsRow::HEADER {
        return Err(Error::InvalidArgument(format!("{}: unexpected metrics header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

fn write_summaries(stats: &[RunStats], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let names: Vec<&str> = run_scalars(&stats[0]).iter().map(|(n, _)| *n).collect();
    let mut header = vec!["run_id", "seed", "mode"];
    header.extend(&names);
    w.write_record(&header)?;
    for s in stats {
        let mut rec = vec![s.run_id.clone(), s.seed.to_string(), s.mode.to_string()];
        rec.extend(run_scalars(s).into_iter().map(|(_, v)| v.map(fmt_f64).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run_file_stem(mode: Mode, seed: u64) -> String {
    format!("{}_seed{seed}", mode.as_str().to_ascii_lowercase())
}

/// Writes the per-run CSV and ledger export of one run.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    let runs = dir.join("runs");
    let ledgers = dir.join("ledgers");
    for d in [&runs, &ledgers] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let stem = run_file_stem(out.mode, out.seed);
    write_metrics_csv(&out.rows, &runs.join(format!("{stem}.csv")))?;
    let path = ledgers.join(format!("{stem}.jsonl"));
    fs::write(&path, export_jsonl(&out.ledger)?).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub stats: Vec<RunStats>,
    pub aggregate: Aggregate,
}

/// Runs every mode on seeds `base_seed..base_seed + runs` and writes the
/// outputs to `out_dir`. The first failing run aborts with its seed.
pub fn run_experiment(
    cfg: &ScenarioConfig,
    modes: &[Mode],
    runs: usize,
    base_seed: u64,
    model: Option<(&Scorer<f32>, ModelInfo)>,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    if runs == 0 || modes.is_empty() {
        return Err(Error::InvalidArgument("need at least one run and one mode".into()));
    }
    if modes.contains(&Mode::Interrogator) && model.is_none() {
        return Err(Error::Config("interrogator mode needs a scorer model".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let norms = calibrate(cfg)?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed + i).collect();
    let mut stats = Vec::new();
    let mut schedules = Vec::new();
    for &mode in modes {
        let mut mcfg = cfg.clone();
        mcfg.mode = mode;
        for &seed in &seeds {
            let out = simulate(&mcfg, seed, norms, model.as_ref().map(|m| m.0), &RunOptions::default())
                .map_err(|e| Error::RunFailed { seed, source: Box::new(e) })?;
            write_run(&out, out_dir)?;
            if schedules.len() < seeds.len() {
                schedules.push(RunSchedule {
                    seed,
                    hosts: out.hosts.clone(),
                    compromised: out.assignment.profiles.clone(),
                });
            }
            stats.push(out.stats);
        }
    }
    let mut resolved = cfg.clone();
    resolved.normalization.norm_volume = Some(norms.norm_volume);
    resolved.normalization.norm_churn = Some(norms.norm_churn);
    let manifest = Manifest {
        scenario: resolved,
        modes: modes.to_vec(),
        base_seed,
        seeds,
        normalization: norms,
        model: model.map(|m| m.1),
        schedules,
    };
    write_json(&manifest, &out_dir.join("manifest.json"))?;
    write_summaries(&stats, &out_dir.join("run_summaries.csv"))?;
    let agg = aggregate(&stats);
    write_json(&agg, &out_dir.join("aggregate.json"))?;
    Ok(ExperimentResult { manifest, stats, aggregate: agg })
}

/// Per-interval mean and sample std of every metric, keyed by mode, read from
/// the `runs/` CSVs of an experiment directory.
pub fn report(in_dir: &Path, out_csv: &Path) -> Result<usize> {
    let runs_dir = in_dir.join("runs");
    let mut files: Vec<PathBuf> = fs::read_dir(&runs_dir)
        .map_err(|e| Error::io(&runs_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no run CSVs in {}", runs_dir.display())));
    }
    let mut groups: BTreeMap<(Mode, u64), Vec<MetricsRow>> = BTreeMap::new();
    for f in &files {
        for row in read_metrics_csv(f)? {
            groups.entry((row.mode, row.interval_index)).or_default().push(row);
        }
    }
    let mut w = csv_writer(out_csv)?;
    let mut header = vec!["mode".to_string(), "interval_index".to_string(), "runs".to_string()];
    for m in MetricsRow::METRICS {
        header.push(m.to_string());
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for ((mode, k), rows) in &groups {
        let mut rec = vec![mode.to_string(), k.to_string(), rows.len().to_string()];
        for m in MetricsRow::METRICS {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.metric(m)).collect();
            let (mean, std) = mean_std(&vals);
            rec.push(mean.map(fmt_f64).unwrap_or_default());
            rec.push(std.map(fmt_f64).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(out_csv, e))?;
    Ok(groups.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.n_agents = 16;
        c.n_auvs = 3;
        c.mission_duration_s = 900.0;
        c.warmup_intervals = 2;
        c
    }

    #[test]
    fn single_run_has_no_std_and_matches_run() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small(), &[Mode::Static, Mode::Bayesian], 1, 3, None, dir.path()).unwrap();
        let agg = &r.aggregate.modes[&Mode::Bayesian];
        assert_eq!(agg.runs, 1);
        let acc = &agg.metrics["accuracy"];
        assert_eq!(acc.std, None);
        assert_eq!(acc.mean, r.stats[1].accuracy);
        let text = fs::read_to_string(dir.path().join("aggregate.json")).unwrap();
        assert!(!text.contains("\"std\""));
        let rows = read_metrics_csv(&dir.path().join("runs/static_seed3.csv")).unwrap();
        assert_eq!(rows.len(), 30);
    }

    #[test]
    fn report_groups_by_mode_and_interval() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&small(), &[Mode::Static], 2, 1, None, dir.path()).unwrap();
        let out = dir.path().join("report.csv");
        assert_eq!(report(dir.path(), &out).unwrap(), 30);
        let text = fs::read_to_string(out).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("mode,interval_index,runs,accuracy,accuracy_std"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn interrogator_without_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_experiment(&small(), &Mode::ALL, 1, 1, None, dir.path()).is_err());
    }
}
