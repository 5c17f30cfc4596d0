//! Scenario configuration, loaded from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryConfig;
use crate::error::{Error, Result};
use crate::governance::{Fault, PbftParams};
use crate::trust::TrustParams;
use crate::world::{ChannelParams, DeploymentParams, EnergyParams, MobilityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Interrogator,
    Bayesian,
    Static,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Interrogator, Mode::Bayesian, Mode::Static];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Interrogator => "Interrogator",
            Mode::Bayesian => "Bayesian",
            Mode::Static => "Static",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interrogator" => Ok(Mode::Interrogator),
            "bayesian" => Ok(Mode::Bayesian),
            "static" => Ok(Mode::Static),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected interrogator, bayesian or static)"
            ))),
        }
    }
}

/// Mission traffic and buffering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficParams {
    /// Benign generation period per agent.
    pub period_s: f64,
    pub data_bits: u32,
    pub summary_bits: u32,
    pub ttl_hops: u32,
    pub buffer_expiry_s: f64,
    pub max_retries: u32,
    pub retry_backoff_s: f64,
    /// Sub-slots per period used to place burst packets.
    pub burst_slots: usize,
    /// Recently observed packets a replaying agent remembers.
    pub replay_memory: usize,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            period_s: 30.0,
            data_bits: 2000,
            summary_bits: 512,
            ttl_hops: 16,
            buffer_expiry_s: 120.0,
            max_retries: 2,
            retry_backoff_s: 2.0,
            burst_slots: 30,
            replay_memory: 32,
        }
    }
}

/// Scoring duty cycle and enforcement switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorParams {
    /// Observation-only runs (trace generation) set this to false.
    pub enforcement: bool,
    pub cross_validation: bool,
    /// Normal-tier agents off mission-critical routes are scored every
    /// `background_every` intervals.
    pub background_every: u64,
    /// A second interrogator must lie within this distance of the agent.
    pub observation_range_m: f64,
    /// Agents whose trust moved at least this much get a delta commit.
    pub commit_epsilon: f64,
    /// Sequences per scorer forward pass.
    pub score_chunk: usize,
}

impl Default for MonitorParams {
    fn default() -> Self {
        MonitorParams {
            enforcement: true,
            cross_validation: true,
            background_every: 4,
            observation_range_m: 800.0,
            commit_epsilon: 0.01,
            score_chunk: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusParams {
    pub tick_s: f64,
    pub pbft: PbftParams,
    /// Per-validator behavior; empty means all honest.
    pub faults: Vec<Fault>,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams {
            tick_s: 60.0,
            pbft: PbftParams::default(),
            faults: Vec::new(),
        }
    }
}

/// Feature normalization. Unset values are calibrated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationParams {
    pub norm_volume: Option<f64>,
    pub norm_churn: Option<f64>,
    pub calibration_seed: u64,
    pub volume_percentile: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        NormalizationParams {
            norm_volume: None,
            norm_churn: None,
            calibration_seed: 0x5eed_ca1b,
            volume_percentile: 99.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub n_gateways: usize,
    pub n_auvs: usize,
    pub n_interrogator_hosts: usize,
    pub mode: Mode,
    pub monitoring_interval_s: f64,
    pub mission_duration_s: f64,
    /// Classification ignores the first intervals.
    pub warmup_intervals: u64,
    /// Scorer file; relative paths resolve against the scenario file.
    pub model_path: Option<PathBuf>,
    pub deployment: DeploymentParams,
    pub channel: ChannelParams,
    pub energy: EnergyParams,
    pub mobility: MobilityParams,
    pub trust: TrustParams,
    pub adversary: AdversaryConfig,
    pub traffic: TrafficParams,
    pub monitor: MonitorParams,
    pub consensus: ConsensusParams,
    pub normalization: NormalizationParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_agents: 50,
            n_gateways: 2,
            n_auvs: 10,
            n_interrogator_hosts: 4,
            mode: Mode::Interrogator,
            monitoring_interval_s: 30.0,
            mission_duration_s: 7200.0,
            warmup_intervals: 10,
            model_path: None,
            deployment: DeploymentParams::default(),
            channel: ChannelParams::default(),
            energy: EnergyParams::default(),
            mobility: MobilityParams::default(),
            trust: TrustParams::default(),
            adversary: AdversaryConfig::default(),
            traffic: TrafficParams::default(),
            monitor: MonitorParams::default(),
            consensus: ConsensusParams::default(),
            normalization: NormalizationParams::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML. Unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a scenario file and resolves `model_path` against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(m) = &cfg.model_path {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.model_path = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn intervals(&self) -> u64 {
        (self.mission_duration_s / self.monitoring_interval_s).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.deployment.validate()?;
        self.channel.validate()?;
        self.energy.validate()?;
        self.mobility.validate()?;
        self.trust.validate()?;
        self.adversary.validate()?;
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be > 0".into()));
        }
        if self.n_gateways == 0 || self.n_gateways + self.n_auvs > self.n_agents {
            return Err(Error::Config(
                "need n_gateways >= 1 and n_gateways + n_auvs <= n_agents".into(),
            ));
        }
        if self.n_interrogator_hosts == 0 || self.n_interrogator_hosts > self.n_gateways + self.n_auvs
        {
            return Err(Error::Config(
                "n_interrogator_hosts must be in 1..=n_gateways + n_auvs".into(),
            ));
        }
        let ratio = self.mission_duration_s / self.monitoring_interval_s;
        if !(self.monitoring_interval_s > 0.0 && ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9)
        {
            return Err(Error::Config(
                "mission_duration_s must be a positive multiple of monitoring_interval_s".into(),
            ));
        }
        let t = &self.traffic;
        if !(t.period_s > 0.0 && t.buffer_expiry_s > 0.0 && t.retry_backoff_s > 0.0) {
            return Err(Error::Config("traffic periods and delays must be > 0".into()));
        }
        if t.data_bits == 0 || t.summary_bits == 0 || t.ttl_hops == 0 || t.burst_slots == 0 {
            return Err(Error::Config("traffic sizes, ttl and burst_slots must be > 0".into()));
        }
        let m = &self.monitor;
        if m.background_every == 0 || m.score_chunk == 0 || !(m.observation_range_m >= 0.0) {
            return Err(Error::Config(
                "monitor.background_every and score_chunk must be > 0".into(),
            ));
        }
        if !(self.consensus.tick_s > 0.0) {
            return Err(Error::Config("consensus.tick_s must be > 0".into()));
        }
        if !self.consensus.faults.is_empty()
            && self.consensus.faults.len() != self.consensus.pbft.validators
        {
            return Err(Error::Config(
                "consensus.faults needs one entry per validator".into(),
            ));
        }
        let n = &self.normalization;
        for v in [n.norm_volume, n.norm_churn].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("normalization constants must be > 0".into()));
            }
        }
        if !(0.0 < n.volume_percentile && n.volume_percentile <= 100.0) {
            return Err(Error::Config("normalization.volume_percentile must be in (0, 100]".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.intervals(), 240);
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_overrides() {
        let cfg = ScenarioConfig::from_toml(
            "n_agents = 25\nmode = \"Bayesian\"\n[channel]\nrate_bps = 20000\n",
        )
        .unwrap();
        assert_eq!(cfg.n_agents, 25);
        assert_eq!(cfg.mode, Mode::Bayesian);
        assert_eq!(cfg.channel.rate_bps, 20000);
        assert_eq!(cfg.channel.comm_range_m, 400.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ScenarioConfig::from_toml("n_agent = 25\n").is_err());
        assert!(ScenarioConfig::from_toml("[channel]\nrate = 1\n").is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("static".parse::<Mode>().unwrap(), Mode::Static);
        assert!("fast".parse::<Mode>().is_err());
    }
}
