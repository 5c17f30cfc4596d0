use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acoustic link model. Loss is distance-linear Bernoulli; contention is not
/// modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub rate_bps: u32,
    pub prop_delay_s_per_km: f64,
    pub base_loss_prob: f64,
    pub loss_per_km: f64,
    pub comm_range_m: f64,
}

/// Upper clamp applied to the distance-driven part of the loss probability.
pub const MAX_LOSS_PROB: f64 = 0.95;

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            rate_bps: 10_000,
            prop_delay_s_per_km: 0.67,
            base_loss_prob: 0.05,
            loss_per_km: 0.05,
            comm_range_m: 400.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(10_000..=20_000).contains(&self.rate_bps) {
            return Err(Error::Config(format!(
                "channel.rate_bps must be in [10000, 20000], got {}",
                self.rate_bps
            )));
        }
        let probs = [
            ("base_loss_prob", self.base_loss_prob),
            ("loss_per_km", self.loss_per_km),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("channel.{name} must be in [0, 1]")));
            }
        }
        if !(self.prop_delay_s_per_km >= 0.0 && self.prop_delay_s_per_km.is_finite()) {
            return Err(Error::Config("channel.prop_delay_s_per_km must be >= 0".into()));
        }
        if !(self.comm_range_m > 0.0 && self.comm_range_m.is_finite()) {
            return Err(Error::Config("channel.comm_range_m must be > 0".into()));
        }
        Ok(())
    }

    /// Loss probability for one transmission over `distance_m`.
    ///
    /// Distance can raise the loss to at most [`MAX_LOSS_PROB`]; a base loss
    /// configured above that ceiling (a saturated test channel) is kept.
    pub fn loss_probability(&self, distance_m: f64) -> f64 {
        let ceiling = MAX_LOSS_PROB.max(self.base_loss_prob);
        (self.base_loss_prob + self.loss_per_km * distance_m / 1000.0).clamp(0.0, ceiling)
    }

    /// One Bernoulli loss draw; `true` means the transmission is lost.
    pub fn draw_loss<R: Rng + ?Sized>(&self, distance_m: f64, rng: &mut R) -> bool {
        rng.random::<f64>() < self.loss_probability(distance_m)
    }
}

pub fn propagation_delay(distance_m: f64, params: &ChannelParams) -> Result<f64> {
    if !(distance_m >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be non-negative, got {distance_m}"
        )));
    }
    Ok(distance_m / 1000.0 * params.prop_delay_s_per_km)
}

pub fn transmission_delay(size_bits: u32, params: &ChannelParams) -> f64 {
    f64::from(size_bits) / f64::from(params.rate_bps)
}

/// Time from start of transmission to complete reception one hop away.
pub fn one_hop_delay(size_bits: u32, distance_m: f64, params: &ChannelParams) -> Result<f64> {
    Ok(transmission_delay(size_bits, params) + propagation_delay(distance_m, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn propagation_examples() {
        let p = ChannelParams::default();
        assert!(close(propagation_delay(1000.0, &p).unwrap(), 0.67));
        assert_eq!(propagation_delay(0.0, &p).unwrap(), 0.0);
        assert!(close(propagation_delay(1500.0, &p).unwrap(), 1.005));
        assert!(propagation_delay(-1.0, &p).is_err());
    }

    #[test]
    fn transmission_examples() {
        let mut p = ChannelParams::default();
        assert!(close(transmission_delay(10_000, &p), 1.0));
        assert!(close(transmission_delay(1, &p), 1e-4));
        p.rate_bps = 20_000;
        assert!(close(transmission_delay(10_000, &p), 0.5));
    }

    #[test]
    fn delay_composition() {
        let p = ChannelParams::default();
        assert!(close(one_hop_delay(2000, 1000.0, &p).unwrap(), 0.87));
    }

    #[test]
    fn loss_clamped_and_monotone() {
        let p = ChannelParams {
            base_loss_prob: 0.5,
            loss_per_km: 0.5,
            ..Default::default()
        };
        assert!(close(p.loss_probability(0.0), 0.5));
        assert!(close(p.loss_probability(500.0), 0.75));
        assert_eq!(p.loss_probability(5000.0), MAX_LOSS_PROB);
        let saturated = ChannelParams {
            base_loss_prob: 1.0,
            ..Default::default()
        };
        assert_eq!(saturated.loss_probability(300.0), 1.0);
        let mut last = 0.0;
        for d in 0..100 {
            let l = p.loss_probability(d as f64 * 20.0);
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn rate_band_enforced() {
        let p = ChannelParams {
            rate_bps: 9_999,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(ChannelParams::default().validate().is_ok());
    }
}
