//! Trust inference: the transformer scorer, exponential smoothing,
//! forwarding authorization and the two comparison baselines.

pub mod gradcheck;
pub mod model_file;
pub mod scorer;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::AgentId;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use scorer::{Real, Scorer, ScorerConfig, COLD_START_SCORE};
pub use train::{train, TraceSet, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    pub alpha: f64,
    pub tau_min: f64,
    pub tau_hard: f64,
    pub persistence_p: u32,
    pub recovery_r: u32,
    pub initial_tau: f64,
    /// When false, isolation is permanent.
    pub auto_recovery: bool,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams {
            alpha: 0.8,
            tau_min: 0.65,
            tau_hard: 0.4,
            persistence_p: 3,
            recovery_r: 5,
            initial_tau: 0.8,
            auto_recovery: true,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_hard && self.tau_hard < self.tau_min && self.tau_min <= 1.0) {
            return Err(Error::Config("trust thresholds need 0 <= tau_hard < tau_min <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("trust.alpha must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_tau) {
            return Err(Error::Config("trust.initial_tau must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Normal,
    Interrogation,
    LocallyConstrained,
    Isolated,
    Recovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRecord {
    pub agent: AgentId,
    pub tau: f64,
    pub raw_score: f64,
    pub persistence_below: u32,
    pub persistence_above: u32,
    pub tier: Tier,
}

impl TrustRecord {
    pub fn new(agent: AgentId, params: &TrustParams) -> Self {
        TrustRecord {
            agent,
            tau: params.initial_tau,
            raw_score: params.initial_tau,
            persistence_below: 0,
            persistence_above: 0,
            tier: Tier::Normal,
        }
    }
}

/// `tau <- alpha * tau + (1 - alpha) * raw`, then persistence bookkeeping.
pub fn smooth_update(record: &TrustRecord, raw: f64, params: &TrustParams) -> Result<TrustRecord> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(Error::InvalidArgument(format!("raw score {raw} outside [0, 1]")));
    }
    let a = params.alpha;
    let tau = (a * record.tau + (1.0 - a) * raw).clamp(0.0, 1.0);
    let below = tau < params.tau_min;
    Ok(TrustRecord {
        tau,
        raw_score: raw,
        persistence_below: if below { record.persistence_below + 1 } else { 0 },
        persistence_above: if below { 0 } else { record.persistence_above + 1 },
        ..record.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Authorization {
    Authorized,
    Interrogate,
}

pub fn authorize_forwarding(record: &TrustRecord, params: &TrustParams) -> Authorization {
    if record.tau >= params.tau_min {
        Authorization::Authorized
    } else {
        Authorization::Interrogate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Positive,
    Negative,
}

/// Beta reputation with a uniform prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BetaReputation {
    pub s: u64,
    pub f: u64,
}

impl BetaReputation {
    pub fn update(self, outcome: Outcome) -> Self {
        match outcome {
            Outcome::Positive => BetaReputation { s: self.s + 1, ..self },
            Outcome::Negative => BetaReputation { f: self.f + 1, ..self },
        }
    }

    pub fn trust(&self) -> f64 {
        (self.s as f64 + 1.0) / ((self.s + self.f) as f64 + 2.0)
    }
}

/// Authenticated agents are trusted unconditionally.
pub fn static_trust(_agent: AgentId) -> f64 {
    1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tau: f64) -> TrustRecord {
        TrustRecord {
            tau,
            ..TrustRecord::new(AgentId(1), &TrustParams::default())
        }
    }

    #[test]
    fn smoothing_limits() {
        let p1 = TrustParams {
            alpha: 1.0,
            ..Default::default()
        };
        assert_eq!(smooth_update(&rec(0.7), 0.1, &p1).unwrap().tau, 0.7);
        let p0 = TrustParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(smooth_update(&rec(0.7), 0.1, &p0).unwrap().tau, 0.1);
    }

    #[test]
    fn smoothing_example() {
        let r = smooth_update(&rec(0.9), 0.4, &TrustParams::default()).unwrap();
        assert!((r.tau - 0.80).abs() < 1e-12);
        assert_eq!(r.raw_score, 0.4);
    }

    #[test]
    fn persistence_counters() {
        let p = TrustParams::default();
        let mut r = rec(0.66);
        for n in 1..=3 {
            r = smooth_update(&r, 0.0, &p).unwrap();
            assert_eq!((r.persistence_below, r.persistence_above), (n, 0));
        }
        r = smooth_update(&rec(0.9), 1.0, &p).unwrap();
        assert_eq!((r.persistence_below, r.persistence_above), (0, 1));
        assert!(smooth_update(&r, 1.5, &p).is_err());
    }

    #[test]
    fn authorization_boundary() {
        let p = TrustParams::default();
        assert_eq!(authorize_forwarding(&rec(0.65), &p), Authorization::Authorized);
        assert_eq!(authorize_forwarding(&rec(0.649), &p), Authorization::Interrogate);
        assert_eq!(authorize_forwarding(&rec(1.0), &p), Authorization::Authorized);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(BetaReputation::default().trust(), 0.5);
        let r = BetaReputation { s: 9, f: 1 };
        assert!((r.trust() - 10.0 / 12.0).abs() < 1e-15);
        let big = BetaReputation { s: 1_000_000, f: 1 };
        assert!(big.trust() > 0.999_99);
        let up = BetaReputation::default()
            .update(Outcome::Positive)
            .update(Outcome::Negative);
        assert_eq!(up, BetaReputation { s: 1, f: 1 });
    }

    #[test]
    fn validation() {
        assert!(TrustParams::default().validate().is_ok());
        let bad = TrustParams {
            tau_hard: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_is_one() {
        assert_eq!(static_trust(AgentId(3)), 1.0);
    }
}
