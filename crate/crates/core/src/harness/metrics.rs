//! Per-interval rows and per-run statistics.

use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::metrics::Confusion;
use crate::sim::SimTime;
use crate::world::AgentId;

/// One row of the per-interval metrics CSV. Absent values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub interval_index: u64,
    pub mode: Mode,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    #[serde(rename = "mean_residual_energy_J")]
    pub mean_residual_energy_j: f64,
    pub pdr_cumulative: Option<f64>,
    pub flagged_count: u64,
    pub excluded_count: u64,
    pub isolated_count: u64,
    pub false_positive_count: u64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 13] = [
        "run_id",
        "seed",
        "interval_index",
        "mode",
        "accuracy",
        "precision",
        "recall",
        "mean_residual_energy_J",
        "pdr_cumulative",
        "flagged_count",
        "excluded_count",
        "isolated_count",
        "false_positive_count",
    ];

    /// Names of the numeric columns aggregated across runs.
    pub const METRICS: [&'static str; 8] = [
        "accuracy",
        "precision",
        "recall",
        "mean_residual_energy_J",
        "pdr_cumulative",
        "flagged_count",
        "excluded_count",
        "isolated_count",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "precision" => self.precision,
            "recall" => self.recall,
            "mean_residual_energy_J" => Some(self.mean_residual_energy_j),
            "pdr_cumulative" => self.pdr_cumulative,
            "flagged_count" => Some(self.flagged_count as f64),
            "excluded_count" => Some(self.excluded_count as f64),
            "isolated_count" => Some(self.isolated_count as f64),
            "false_positive_count" => Some(self.false_positive_count as f64),
            _ => None,
        }
    }

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.seed.to_string(),
            self.interval_index.to_string(),
            self.mode.to_string(),
            opt(self.accuracy),
            opt(self.precision),
            opt(self.recall),
            fmt_f64(self.mean_residual_energy_j),
            opt(self.pdr_cumulative),
            self.flagged_count.to_string(),
            self.excluded_count.to_string(),
            self.isolated_count.to_string(),
            self.false_positive_count.to_string(),
        ]
    }
}

/// Nine significant digits, shortest form.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.8e}");
    let parsed: f64 = s.parse().expect("formatted float parses");
    format!("{parsed}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Outcome for one compromised agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub agent: AgentId,
    pub compromised: bool,
    pub first_flag_time: Option<SimTime>,
    pub attack_activation: Option<SimTime>,
    pub detection_latency: Option<f64>,
}

/// Pooled statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub run_id: String,
    pub seed: u64,
    pub mode: Mode,
    pub accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
    pub pdr: Option<f64>,
    pub originated: u64,
    pub delivered: u64,
    #[serde(rename = "mean_residual_energy_J")]
    pub mean_residual_energy_j: f64,
    pub compromised: u64,
    pub detected: u64,
    pub median_detection_latency_s: Option<f64>,
    pub tier2_escalations: u64,
    pub tier2_false_positives: u64,
    pub deferred_escalations: u64,
    pub max_enforcement_latency_s: Option<f64>,
    pub exclusion_violations: u64,
    pub isolations: u64,
    pub ledger_blocks: u64,
    pub consensus_rounds: u64,
    pub view_changes: u64,
    pub inferences: u64,
    pub packets: u64,
    pub intervals: u64,
}

/// Confusion counts of one interval. Positive means "flagged" / "attacking".
pub fn classify_interval(predicted: &[bool], actual: &[bool]) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        c.record(p, a);
    }
    c
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Mean and sample standard deviation; the deviation is absent for one value.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[2.0]), (Some(2.0), None));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_f64(0.1 + 0.2), "0.3");
        assert_eq!(fmt_f64(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_f64(123456.789012), "123456.789");
        assert_eq!(fmt_f64(0.0), "0");
    }

    #[test]
    fn interval_confusion() {
        let c = classify_interval(&[true, false, true, false], &[true, true, false, false]);
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 1, 1));
    }
}
