//! Labeled trace export for scorer training, and the matching loader.
//!
//! One CSV per run, one row per (agent, interval):
//! `run_id,seed,agent,interval_index,<7 features>,label`, label 1 when the
//! agent's attack was active at the end of the interval. Floats are written
//! in shortest round-trip form so a reload is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::calibration::calibrate;
use super::config::{Mode, ScenarioConfig};
use super::engine::{simulate, RunOptions, RunOutput};
use crate::error::{Error, Result};
use crate::features::{FeatureNorms, FeatureSequence, FeatureVector, FEATURE_DIM};
use crate::sim::RngStreams;
use crate::trust::train::TraceSet;
use crate::world::AgentId;

pub const TRACE_BASE_SEED: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub scenario: ScenarioConfig,
    pub norms: FeatureNorms,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
    pub rows: u64,
    pub positives: u64,
}

pub fn trace_header() -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "seed", "agent", "interval_index"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(FeatureVector::NAMES.iter().map(|s| s.to_string()));
    h.push("label".into());
    h
}

/// Observation-only copy of a scenario: Static mode, no enforcement.
pub fn observation_scenario(cfg: &ScenarioConfig) -> ScenarioConfig {
    let mut obs = cfg.clone();
    obs.mode = Mode::Static;
    obs.monitor.enforcement = false;
    obs
}

/// Writes the trace rows of one run.
pub fn write_run_traces(out: &RunOutput, path: &Path) -> Result<u64> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(trace_header())?;
    let mut positives = 0;
    for (k, (row, labels)) in out.vectors.iter().zip(&out.labels).enumerate() {
        for (agent, (v, &label)) in row.iter().zip(labels).enumerate() {
            let mut rec = vec![
                out.seed.to_string(),
                out.seed.to_string(),
                agent.to_string(),
                k.to_string(),
            ];
            rec.extend(v.0.iter().map(|x| x.to_string()));
            rec.push(u8::from(label).to_string());
            positives += u64::from(label);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(positives)
}

/// Runs `runs` observation-only missions and exports their labeled features.
pub fn gen_traces(cfg: &ScenarioConfig, runs: usize, base_seed: u64, out_dir: &Path) -> Result<TraceManifest> {
    if cfg.adversary.fraction <= 0.0 {
        return Err(Error::SingleClass);
    }
    let obs = observation_scenario(cfg);
    obs.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let norms = calibrate(cfg)?;
    let mut manifest = TraceManifest {
        scenario: obs.clone(),
        norms,
        seeds: Vec::new(),
        files: Vec::new(),
        rows: 0,
        positives: 0,
    };
    for i in 0..runs {
        let seed = base_seed + i as u64;
        let out = simulate(&obs, seed, norms, None, &RunOptions::default())
            .map_err(|e| Error::RunFailed { seed, source: Box::new(e) })?;
        let name = format!("traces_seed{seed}.csv");
        manifest.positives += write_run_traces(&out, &out_dir.join(&name))?;
        manifest.rows += (out.vectors.len() * cfg.n_agents) as u64;
        manifest.seeds.push(seed);
        manifest.files.push(name);
    }
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One run's rows, grouped per agent in interval order.
#[derive(Debug, Clone, Default)]
pub struct RunTraces {
    pub seed: u64,
    pub agents: BTreeMap<u32, Vec<(u64, FeatureVector, bool)>>,
}

pub fn read_run_traces(path: &Path) -> Result<RunTraces> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != trace_header() {
        return Err(Error::InvalidArgument(format!("{}: unexpected trace header", path.display())));
    }
    let bad = |what: &str| Error::InvalidArgument(format!("{}: bad {what}", path.display()));
    let mut out = RunTraces::default();
    for rec in r.records() {
        let rec = rec?;
        out.seed = rec[1].parse().map_err(|_| bad("seed"))?;
        let agent: u32 = rec[2].parse().map_err(|_| bad("agent"))?;
        let k: u64 = rec[3].parse().map_err(|_| bad("interval_index"))?;
        let mut v = [0.0; FEATURE_DIM];
        for (j, x) in v.iter_mut().enumerate() {
            *x = rec[4 + j].parse().map_err(|_| bad("feature"))?;
        }
        let label = match &rec[4 + FEATURE_DIM] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("label")),
        };
        out.agents.entry(agent).or_default().push((k, FeatureVector(v), label));
    }
    for rows in out.agents.values_mut() {
        rows.sort_by_key(|r| r.0);
    }
    Ok(out)
}

/// Trace files of a directory, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("traces_"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadOptions {
    /// Sequences sampled uniformly from each run; 0 keeps everything.
    pub per_run: usize,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            per_run: 1500,
            seed: 0,
        }
    }
}

fn pick(rng: &mut crate::sim::StreamRng, mut idx: Vec<usize>, keep: usize) -> Vec<usize> {
    if keep > 0 && idx.len() > keep {
        let chosen = sample(rng, idx.len(), keep);
        let mut out: Vec<usize> = chosen.iter().map(|i| idx[i]).collect();
        out.sort_unstable();
        idx = out;
    }
    idx
}

/// Loads a trace directory into sequences, sampling each run uniformly so
/// the natural class mix is kept.
pub fn load_traces(dir: &Path, opts: &LoadOptions) -> Result<TraceSet> {
    let mut set = TraceSet::default();
    for file in trace_files(dir)? {
        let run = read_run_traces(&file)?;
        // Flat index over (agent, position) pairs.
        let flat: Vec<(u32, usize)> = run
            .agents
            .iter()
            .flat_map(|(&a, rows)| (0..rows.len()).map(move |i| (a, i)))
            .collect();
        let mut rng = RngStreams::new(opts.seed).stream(&format!("trace-load/{}", run.seed));
        for j in pick(&mut rng, (0..flat.len()).collect(), opts.per_run) {
            let (a, i) = flat[j];
            let rows = &run.agents[&a];
            let hist: Vec<FeatureVector> = rows[..=i].iter().map(|r| r.1).collect();
            set.push(FeatureSequence::from_history(AgentId(a), &hist), rows[i].2, run.seed);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.n_agents = 20;
        c.n_auvs = 4;
        c.mission_duration_s = 1800.0;
        c.warmup_intervals = 2;
        c.adversary.fraction = 0.2;
        c
    }

    #[test]
    fn benign_scenario_is_single_class() {
        let mut c = small();
        c.adversary.fraction = 0.0;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(gen_traces(&c, 1, 1, dir.path()), Err(Error::SingleClass)));
    }

    #[test]
    fn export_reloads_exactly() {
        let c = small();
        let dir = tempfile::tempdir().unwrap();
        let m = gen_traces(&c, 2, 7, dir.path()).unwrap();
        assert_eq!(m.rows, 2 * 60 * 20);
        let norms = calibrate(&c).unwrap();
        let out = simulate(&observation_scenario(&c), 7, norms, None, &RunOptions::default()).unwrap();
        let back = read_run_traces(&dir.path().join("traces_seed7.csv")).unwrap();
        for (a, rows) in &back.agents {
            for (k, v, label) in rows {
                assert_eq!(out.vectors[*k as usize][*a as usize], *v);
                assert_eq!(out.labels[*k as usize][*a as usize], *label);
            }
        }
        let set = load_traces(dir.path(), &LoadOptions { per_run: 200, ..Default::default() }).unwrap();
        assert!(set.compromised.iter().any(|&c| c));
        assert_eq!(set.runs().len(), 2);
    }
}
