//! Normalization constants from a benign calibration run.

use super::config::{Mode, ScenarioConfig};
use super::engine::{simulate, RunOptions};
use crate::error::Result;
use crate::features::FeatureNorms;

/// Nearest-rank percentile of an unsorted sample.
pub fn nearest_rank(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Resolves the normalization constants of a scenario. Values set in the
/// scenario win; the volume constant is otherwise the configured percentile
/// of per-interval packet counts in a benign Static run.
pub fn calibrate(cfg: &ScenarioConfig) -> Result<FeatureNorms> {
    let n = &cfg.normalization;
    let norm_churn = n.norm_churn.unwrap_or(cfg.n_agents as f64 / 10.0);
    let norm_volume = match n.norm_volume {
        Some(v) => v,
        None => {
            let mut benign = cfg.clone();
            benign.mode = Mode::Static;
            benign.monitor.enforcement = false;
            benign.adversary.fraction = 0.0;
            let raw = FeatureNorms {
                norm_volume: 1.0,
                norm_churn,
                interval_s: cfg.monitoring_interval_s,
            };
            let out = simulate(&benign, n.calibration_seed, raw, None, &RunOptions::default())?;
            let counts: Vec<f64> = out
                .vectors
                .iter()
                .flat_map(|row| row.iter().map(|v| v.pkt_count()))
                .collect();
            nearest_rank(&counts, n.volume_percentile).unwrap_or(1.0).max(1.0)
        }
    };
    Ok(FeatureNorms {
        norm_volume,
        norm_churn,
        interval_s: cfg.monitoring_interval_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 99.0), Some(99.0));
        assert_eq!(nearest_rank(&v, 100.0), Some(100.0));
        assert_eq!(nearest_rank(&[5.0, 1.0], 50.0), Some(1.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }
}
