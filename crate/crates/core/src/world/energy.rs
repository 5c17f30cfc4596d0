use serde::{Deserialize, Serialize};

use super::AgentState;
use crate::error::{Error, Result};

/// First-order radio energy model plus per-event sensing/compute costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyParams {
    /// J/bit spent by transmitter electronics.
    pub e_elec: f64,
    /// J/bit/m^k spent by the amplifier.
    pub eps_amp: f64,
    /// Path-loss exponent.
    pub path_loss_k: f64,
    /// J per sensing event.
    pub e_sense: f64,
    /// J per routing/decision event on an ordinary node.
    pub e_compute: f64,
    /// J per scorer inference on an interrogator host.
    pub e_compute_interrogator: f64,
    pub initial_sensor: f64,
    pub initial_auv: f64,
    pub initial_gateway: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e_elec: 5e-8,
            eps_amp: 1e-10,
            path_loss_k: 1.5,
            e_sense: 1e-4,
            e_compute: 2e-4,
            e_compute_interrogator: 0.45,
            initial_sensor: 500.0,
            initial_auv: 5000.0,
            initial_gateway: 5000.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("e_elec", self.e_elec),
            ("eps_amp", self.eps_amp),
            ("e_sense", self.e_sense),
            ("e_compute", self.e_compute),
            ("e_compute_interrogator", self.e_compute_interrogator),
            ("initial_sensor", self.initial_sensor),
            ("initial_auv", self.initial_auv),
            ("initial_gateway", self.initial_gateway),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("energy.{name} must be > 0")));
            }
        }
        if !(self.path_loss_k >= 1.0) {
            return Err(Error::Config("energy.path_loss_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// `l * E_elec + l * eps_amp * d^k`.
pub fn tx_energy(size_bits: u32, distance_m: f64, params: &EnergyParams) -> f64 {
    let l = f64::from(size_bits);
    l * params.e_elec + l * params.eps_amp * distance_m.powf(params.path_loss_k)
}

/// The components of one consumption step. Sensing is scaled by the agent's
/// duty cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyDraw {
    pub sense: f64,
    pub compute: f64,
    pub tx: f64,
}

impl EnergyDraw {
    pub fn sense(j: f64) -> Self {
        EnergyDraw {
            sense: j,
            ..Default::default()
        }
    }
    pub fn compute(j: f64) -> Self {
        EnergyDraw {
            compute: j,
            ..Default::default()
        }
    }
    pub fn tx(j: f64) -> Self {
        EnergyDraw {
            tx: j,
            ..Default::default()
        }
    }
}

/// Deducts one step of consumption from `agent` and returns the energy that
/// was actually removed. Residual energy clamps at zero; an agent reaching
/// zero is marked dead.
pub fn step_energy(agent: &mut AgentState, draw: EnergyDraw) -> f64 {
    debug_assert!(draw.sense >= 0.0 && draw.compute >= 0.0 && draw.tx >= 0.0);
    let demand = draw.sense * agent.duty_cycle + draw.compute + draw.tx;
    let consumed = demand.min(agent.residual_energy);
    agent.residual_energy -= consumed;
    agent.consumed_energy += consumed;
    if agent.residual_energy <= 0.0 {
        agent.residual_energy = 0.0;
        agent.alive = false;
    }
    consumed
}

/// Battery-driven duty cycle: full activity above half charge, then
/// proportional down to a floor of 0.25.
pub fn adaptive_duty_cycle(agent: &AgentState) -> f64 {
    let frac = agent.residual_energy / agent.initial_energy;
    if frac >= 0.5 {
        1.0
    } else {
        (2.0 * frac).clamp(0.25, 1.0)
    }
}
