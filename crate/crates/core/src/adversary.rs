//! Compromised-agent assignment and attack behaviors.
//!
//! Assignment draws from the `"adversary"` stream; runtime behavior draws
//! from `"adversary/behavior"`. Neither stream is touched for an agent whose
//! attack is not active, so before activation a compromised agent follows the
//! exact benign code path.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SimTime, StreamRng};
use crate::world::routing::RouteChoice;
use crate::world::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    SelectiveDrop,
    RouteManipulation,
    TransmissionBurst,
    Replay,
    CoordinatedInsider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackProfile {
    pub kind: AttackKind,
    pub activation: SimTime,
    /// Drop probability, detour probability, burst multiplier or replay rate
    /// (per monitoring interval) depending on `kind`. For coordinated
    /// insiders this is the drop probability applied when colluding.
    pub intensity: f64,
    /// Coordination group for `CoordinatedInsider`.
    pub group: Option<u32>,
}

impl AttackProfile {
    pub fn is_active(&self, now: SimTime) -> bool {
        now >= self.activation
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            AttackKind::SelectiveDrop
            | AttackKind::RouteManipulation
            | AttackKind::CoordinatedInsider => (0.0..=1.0).contains(&self.intensity),
            AttackKind::TransmissionBurst => self.intensity >= 1.0 && self.intensity.is_finite(),
            AttackKind::Replay => self.intensity >= 0.0 && self.intensity.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "intensity {} out of range for {:?}",
                self.intensity, self.kind
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    pub fraction: f64,
    /// Attack kinds handed out in turn to the compromised agents.
    pub mix: Vec<AttackKind>,
    /// Activation drawn uniformly in this fraction of the mission.
    pub activation_window: [f64; 2],
    pub drop_probability: f64,
    pub detour_probability: f64,
    pub burst_multiplier: f64,
    pub replay_rate: f64,
    /// Allow gateways and interrogator hosts to be compromised.
    pub allow_privileged: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            fraction: 0.15,
            mix: vec![
                AttackKind::SelectiveDrop,
                AttackKind::RouteManipulation,
                AttackKind::TransmissionBurst,
                AttackKind::Replay,
                AttackKind::CoordinatedInsider,
                AttackKind::CoordinatedInsider,
            ],
            activation_window: [0.2, 0.4],
            drop_probability: 0.6,
            detour_probability: 0.5,
            burst_multiplier: 4.0,
            replay_rate: 0.5,
            allow_privileged: false,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(Error::Config("adversary.fraction must be in [0, 1)".into()));
        }
        if self.fraction > 0.0 && self.mix.is_empty() {
            return Err(Error::Config("adversary.mix must not be empty".into()));
        }
        let [lo, hi] = self.activation_window;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(
                "adversary.activation_window must satisfy 0 <= lo <= hi <= 1".into(),
            ));
        }
        Ok(())
    }

    fn intensity_for(&self, kind: AttackKind) -> f64 {
        match kind {
            AttackKind::SelectiveDrop | AttackKind::CoordinatedInsider => self.drop_probability,
            AttackKind::RouteManipulation => self.detour_probability,
            AttackKind::TransmissionBurst => self.burst_multiplier,
            AttackKind::Replay => self.replay_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompromiseAssignment {
    pub fraction: f64,
    pub assigned: BTreeSet<AgentId>,
    pub profiles: BTreeMap<AgentId, AttackProfile>,
}

impl CompromiseAssignment {
    pub fn profile(&self, agent: AgentId) -> Option<&AttackProfile> {
        self.profiles.get(&agent)
    }

    pub fn is_compromised(&self, agent: AgentId) -> bool {
        self.assigned.contains(&agent)
    }

    /// Ground-truth label: compromised and attack active at `now`.
    pub fn attack_active(&self, agent: AgentId, now: SimTime) -> bool {
        self.profiles.get(&agent).is_some_and(|p| p.is_active(now))
    }
}

/// `round(fraction * n)` with halves rounded up.
pub fn compromised_count(fraction: f64, n_agents: usize) -> usize {
    (fraction * n_agents as f64 + 0.5).floor() as usize
}

/// Picks `round(fraction * n_agents)` agents from `eligible` and gives each an
/// attack profile. Eligible agents are sorted before shuffling, so the result
/// depends only on the eligible set and the stream.
pub fn assign_compromised(
    n_agents: usize,
    eligible: &[AgentId],
    config: &AdversaryConfig,
    mission_duration: SimTime,
    rng: &mut StreamRng,
) -> Result<CompromiseAssignment> {
    config.validate()?;
    let count = compromised_count(config.fraction, n_agents);
    if count == 0 {
        return Ok(CompromiseAssignment {
            fraction: config.fraction,
            ..Default::default()
        });
    }
    if count >= eligible.len() {
        return Err(Error::Config(format!(
            "adversary fraction {} would compromise {count} of {} eligible agents",
            config.fraction,
            eligible.len()
        )));
    }
    let mut pool: Vec<AgentId> = eligible.to_vec();
    pool.sort();
    pool.dedup();
    pool.shuffle(rng);
    let chosen = &pool[..count];

    let [lo, hi] = config.activation_window;
    let horizon = mission_duration.as_secs();
    let mut profiles = BTreeMap::new();
    for (i, &agent) in chosen.iter().enumerate() {
        let kind = config.mix[i % config.mix.len()];
        let frac = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let profile = AttackProfile {
            kind,
            activation: SimTime::from_secs(frac * horizon),
            intensity: config.intensity_for(kind),
            group: (kind == AttackKind::CoordinatedInsider).then_some(0),
        };
        profile.validate()?;
        profiles.insert(agent, profile);
    }
    Ok(CompromiseAssignment {
        fraction: config.fraction,
        assigned: chosen.iter().copied().collect(),
        profiles,
    })
}

/// Slot indices (out of `slots`) at which a packet is emitted when the
/// expected number per period is `rate`: one Bernoulli(rate / slots) draw
/// per slot, so the per-period count is Binomial(slots, rate / slots).
pub fn bernoulli_slots<R: Rng + ?Sized>(rate: f64, slots: usize, rng: &mut R) -> Vec<usize> {
    let p = (rate / slots as f64).clamp(0.0, 1.0);
    (0..slots).filter(|_| rng.random::<f64>() < p).collect()
}

/// Runtime attack hooks consulted by the simulation.
pub struct Adversary {
    assignment: CompromiseAssignment,
    rng: StreamRng,
}

impl Adversary {
    pub fn new(assignment: CompromiseAssignment, rng: StreamRng) -> Self {
        Adversary { assignment, rng }
    }

    pub fn assignment(&self) -> &CompromiseAssignment {
        &self.assignment
    }

    fn active(&self, agent: AgentId, now: SimTime) -> Option<&AttackProfile> {
        self.assignment
            .profiles
            .get(&agent)
            .filter(|p| p.is_active(now))
    }

    /// Whether `agent` silently discards a packet it should relay.
    /// `path` lists the other agents on the packet's route, behind and
    /// ahead, and `next_hop` is the benign choice, if any.
    pub fn drops_relay(
        &mut self,
        agent: AgentId,
        now: SimTime,
        path: &[AgentId],
        next_hop: Option<AgentId>,
    ) -> bool {
        let Some(profile) = self.active(agent, now) else {
            return false;
        };
        let p = profile.intensity;
        match profile.kind {
            AttackKind::SelectiveDrop => self.rng.random::<f64>() < p,
            AttackKind::CoordinatedInsider => {
                let group = profile.group;
                let colluder = |id: &AgentId| {
                    *id != agent
                        && self
                            .assignment
                            .profiles
                            .get(id)
                            .is_some_and(|q| q.kind == AttackKind::CoordinatedInsider && q.group == group)
                };
                let shared = path.iter().any(colluder) || next_hop.as_ref().is_some_and(colluder);
                shared && self.rng.random::<f64>() < p
            }
            _ => false,
        }
    }

    pub fn route_choice(&mut self, agent: AgentId, now: SimTime) -> RouteChoice {
        match self.active(agent, now) {
            Some(p) if p.kind == AttackKind::RouteManipulation => {
                let p = p.intensity;
                if self.rng.random::<f64>() < p {
                    RouteChoice::Farthest
                } else {
                    RouteChoice::Greedy
                }
            }
            _ => RouteChoice::Greedy,
        }
    }

    /// Expected originated packets per traffic period while bursting.
    pub fn burst_multiplier(&self, agent: AgentId, now: SimTime) -> Option<f64> {
        self.active(agent, now)
            .filter(|p| p.kind == AttackKind::TransmissionBurst)
            .map(|p| p.intensity)
    }

    pub fn replay_rate(&self, agent: AgentId, now: SimTime) -> Option<f64> {
        self.active(agent, now)
            .filter(|p| p.kind == AttackKind::Replay)
            .map(|p| p.intensity)
    }

    pub fn slots(&mut self, rate: f64, slots: usize) -> Vec<usize> {
        bernoulli_slots(rate, slots, &mut self.rng)
    }

    pub fn pick_index(&mut self, len: usize) -> usize {
        self.rng.random_range(0..len)
    }
}
