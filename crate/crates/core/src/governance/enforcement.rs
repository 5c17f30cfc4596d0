//! Tiered enforcement.
//!
//! ```text
//! Normal ──tau < tau_min──▶ Interrogation
//! Interrogation ──tau < tau_hard, or P intervals below with agreeing
//!                 interrogators──▶ LocallyConstrained   (Flagged queued)
//! LocallyConstrained ──P further intervals below, then a committed
//!                      Isolated event──▶ Isolated
//! Interrogation | LocallyConstrained ──R intervals above──▶ Recovered
//! Isolated ──R intervals above, then a committed Reinstated──▶ Recovered
//! Recovered ──clean interval──▶ Normal, otherwise ▶ Interrogation
//! ```
//!
//! Local constraints (routing exclusion, throttling) take effect in the
//! interval that triggers them; only isolation and reinstatement from
//! isolation wait for consensus.

use serde::{Deserialize, Serialize};

use super::ledger::SecurityEvent;
use crate::sim::SimTime;
use crate::trust::{Tier, TrustParams, TrustRecord};
use crate::world::AgentId;

pub const THROTTLE_CONSTRAINED: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnforcementState {
    pub agent: AgentId,
    pub tier: Tier,
    pub since: SimTime,
    pub throttle_factor: f64,
    /// `persistence_below` when the agent was constrained.
    pub below_at_constraint: u32,
    pub isolation_requested: bool,
    pub reinstatement_requested: bool,
    /// Escalation already waited one interval for a second interrogator.
    pub deferred: bool,
}

impl EnforcementState {
    pub fn new(agent: AgentId) -> Self {
        EnforcementState {
            agent,
            tier: Tier::Normal,
            since: SimTime::ZERO,
            throttle_factor: 1.0,
            below_at_constraint: 0,
            isolation_requested: false,
            reinstatement_requested: false,
            deferred: false,
        }
    }

    /// Excluded from next-hop selection.
    pub fn excluded_from_routing(&self) -> bool {
        matches!(self.tier, Tier::LocallyConstrained | Tier::Isolated)
    }

    pub fn isolated(&self) -> bool {
        self.tier == Tier::Isolated
    }

    fn enter(&mut self, tier: Tier, now: SimTime) {
        self.tier = tier;
        self.since = now;
        self.throttle_factor = match tier {
            Tier::LocallyConstrained => THROTTLE_CONSTRAINED,
            Tier::Isolated => 0.0,
            _ => 1.0,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionInput {
    pub now: SimTime,
    /// Latest raw score from a second interrogator, if one covers the agent.
    pub secondary_raw: Option<f64>,
    /// Require interrogator agreement for persistence-based escalation.
    pub cross_validation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnforcementAction {
    /// Queue a trust commit carrying this event for the next consensus round.
    Queue(SecurityEvent),
    /// Escalation waited for a second interrogator.
    Deferred,
}

/// Agreement iff both scores fall on the same side of `tau_min`.
pub fn cross_validate(primary: f64, secondary: f64, params: &TrustParams) -> bool {
    (primary < params.tau_min) == (secondary < params.tau_min)
}

/// Advances the enforcement state after the agent's trust record was
/// updated for the current interval.
pub fn enforce_transition(
    state: &EnforcementState,
    record: &TrustRecord,
    params: &TrustParams,
    input: &TransitionInput,
) -> (EnforcementState, Vec<EnforcementAction>) {
    let mut s = state.clone();
    let mut actions = Vec::new();
    let now = input.now;
    let below = record.tau < params.tau_min;

    if s.tier == Tier::Recovered {
        if below {
            s.enter(Tier::Interrogation, now);
        } else {
            s.enter(Tier::Normal, now);
        }
        return (s, actions);
    }
    if s.tier == Tier::Normal && below {
        s.enter(Tier::Interrogation, now);
    }
    match s.tier {
        Tier::Interrogation => {
            if record.persistence_above >= params.recovery_r {
                s.enter(Tier::Recovered, now);
            } else if below {
                let hard = record.tau < params.tau_hard;
                let persistent = record.persistence_below >= params.persistence_p
                    && record.raw_score < params.tau_min;
                let agreed = if !input.cross_validation {
                    Some(true)
                } else {
                    input
                        .secondary_raw
                        .map(|sec| sec < params.tau_min && cross_validate(record.raw_score, sec, params))
                };
                // Without a second interrogator, escalation waits one interval
                // and then proceeds on the primary's evidence.
                let escalate = hard
                    || (persistent && agreed == Some(true))
                    || (persistent && agreed.is_none() && s.deferred);
                if persistent && agreed.is_none() && !escalate {
                    s.deferred = true;
                    actions.push(EnforcementAction::Deferred);
                }
                if escalate {
                    s.enter(Tier::LocallyConstrained, now);
                    s.below_at_constraint = record.persistence_below;
                    s.isolation_requested = false;
                    s.deferred = false;
                    actions.push(EnforcementAction::Queue(SecurityEvent::Flagged));
                }
            }
        }
        Tier::LocallyConstrained => {
            if record.persistence_above >= params.recovery_r {
                s.enter(Tier::Recovered, now);
                actions.push(EnforcementAction::Queue(SecurityEvent::Reinstated));
            } else if below
                && !s.isolation_requested
                && record.persistence_below >= s.below_at_constraint + params.persistence_p
            {
                s.isolation_requested = true;
                actions.push(EnforcementAction::Queue(SecurityEvent::Isolated));
            }
        }
        Tier::Isolated => {
            if params.auto_recovery
                && record.persistence_above >= params.recovery_r
                && !s.reinstatement_requested
            {
                s.reinstatement_requested = true;
                actions.push(EnforcementAction::Queue(SecurityEvent::Reinstated));
            }
        }
        Tier::Normal | Tier::Recovered => {}
    }
    (s, actions)
}

/// Applies a consensus-committed security event.
pub fn apply_committed(
    state: &EnforcementState,
    event: SecurityEvent,
    now: SimTime,
) -> EnforcementState {
    let mut s = state.clone();
    match event {
        SecurityEvent::Isolated if s.tier == Tier::LocallyConstrained => {
            s.enter(Tier::Isolated, now);
            s.reinstatement_requested = false;
        }
        SecurityEvent::Reinstated if s.tier == Tier::Isolated => {
            s.enter(Tier::Recovered, now);
            s.isolation_requested = false;
        }
        _ => {}
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trust::smooth_update;

    fn run(
        raws: &[f64],
        secondary: Option<f64>,
        cv: bool,
    ) -> (Vec<Tier>, Vec<Vec<EnforcementAction>>) {
        let p = TrustParams::default();
        let mut rec = TrustRecord::new(AgentId(3), &p);
        let mut st = EnforcementState::new(AgentId(3));
        let mut tiers = Vec::new();
        let mut acts = Vec::new();
        for (k, &raw) in raws.iter().enumerate() {
            rec = smooth_update(&rec, raw, &p).unwrap();
            let input = TransitionInput {
                now: SimTime::from_secs(60.0 * (k + 1) as f64),
                secondary_raw: secondary,
                cross_validation: cv,
            };
            let (next, a) = enforce_transition(&st, &rec, &p, &input);
            st = next;
            tiers.push(st.tier);
            acts.push(a);
        }
        (tiers, acts)
    }

    #[test]
    fn persistent_agreement_constrains_on_third_interval() {
        // tau: 0.8 -> 0.76 -> 0.728 ... stays above tau_hard, so only the
        // persistence rule can fire. Start already below tau_min.
        let p = TrustParams::default();
        let mut rec = TrustRecord::new(AgentId(1), &p);
        rec.tau = 0.6;
        let mut st = EnforcementState::new(AgentId(1));
        let mut tiers = Vec::new();
        for k in 0..3 {
            rec = smooth_update(&rec, 0.5, &p).unwrap();
            assert!(rec.tau > p.tau_hard);
            let input = TransitionInput {
                now: SimTime::from_secs(k as f64),
                secondary_raw: Some(0.5),
                cross_validation: true,
            };
            let (next, acts) = enforce_transition(&st, &rec, &p, &input);
            if next.tier == Tier::LocallyConstrained && st.tier != next.tier {
                assert_eq!(acts, vec![EnforcementAction::Queue(SecurityEvent::Flagged)]);
            }
            st = next;
            tiers.push(st.tier);
        }
        assert_eq!(
            tiers,
            vec![Tier::Interrogation, Tier::Interrogation, Tier::LocallyConstrained]
        );
        assert!(st.excluded_from_routing());
        assert_eq!(st.throttle_factor, THROTTLE_CONSTRAINED);
    }

    #[test]
    fn hard_threshold_skips_persistence() {
        // raw 0 drives tau to 0.64, 0.512, 0.41, 0.328: below tau_hard on the fourth
        let (tiers, _) = run(&[0.0; 4], None, true);
        assert_eq!(tiers[0], Tier::Interrogation);
        assert_eq!(tiers[3], Tier::LocallyConstrained);
    }

    #[test]
    fn disagreement_blocks_persistence_escalation() {
        let p = TrustParams::default();
        let mut rec = TrustRecord::new(AgentId(1), &p);
        rec.tau = 0.6;
        let mut st = EnforcementState::new(AgentId(1));
        for k in 0..6 {
            rec = smooth_update(&rec, 0.55, &p).unwrap();
            let input = TransitionInput {
                now: SimTime::from_secs(k as f64),
                secondary_raw: Some(0.9),
                cross_validation: true,
            };
            st = enforce_transition(&st, &rec, &p, &input).0;
        }
        assert_eq!(st.tier, Tier::Interrogation);
    }

    #[test]
    fn missing_second_interrogator_defers_one_interval() {
        let p = TrustParams::default();
        let mut rec = TrustRecord::new(AgentId(1), &p);
        rec.tau = 0.6;
        let mut st = EnforcementState::new(AgentId(1));
        let mut log = Vec::new();
        for k in 0..4 {
            rec = smooth_update(&rec, 0.55, &p).unwrap();
            let input = TransitionInput {
                now: SimTime::from_secs(k as f64),
                secondary_raw: None,
                cross_validation: true,
            };
            let (next, acts) = enforce_transition(&st, &rec, &p, &input);
            st = next;
            log.push((st.tier, acts.contains(&EnforcementAction::Deferred)));
        }
        assert_eq!(log[2], (Tier::Interrogation, true));
        assert_eq!(log[3].0, Tier::LocallyConstrained);
    }

    #[test]
    fn isolation_needs_commit_and_recovery_path() {
        let p = TrustParams::default();
        let mut raws = vec![0.0; 10];
        raws.extend(vec![1.0; 12]);
        let mut rec = TrustRecord::new(AgentId(2), &p);
        let mut st = EnforcementState::new(AgentId(2));
        let mut queued = Vec::new();
        for (k, &raw) in raws.iter().enumerate() {
            rec = smooth_update(&rec, raw, &p).unwrap();
            let now = SimTime::from_secs(k as f64);
            let input = TransitionInput {
                now,
                secondary_raw: Some(raw),
                cross_validation: true,
            };
            let (next, acts) = enforce_transition(&st, &rec, &p, &input);
            st = next;
            for a in acts {
                if let EnforcementAction::Queue(ev) = a {
                    queued.push(ev);
                    // consensus commits immediately in this test
                    st = apply_committed(&st, ev, now);
                }
            }
            if k == 9 {
                assert_eq!(st.tier, Tier::Isolated);
            }
        }
        assert_eq!(
            queued,
            vec![SecurityEvent::Flagged, SecurityEvent::Isolated, SecurityEvent::Reinstated]
        );
        assert_eq!(st.tier, Tier::Normal);
    }

    #[test]
    fn isolated_stays_without_commit() {
        let p = TrustParams::default();
        let mut st = EnforcementState::new(AgentId(2));
        st.tier = Tier::Isolated;
        let mut rec = TrustRecord::new(AgentId(2), &p);
        rec.persistence_above = 9;
        let input = TransitionInput {
            now: SimTime::ZERO,
            secondary_raw: None,
            cross_validation: true,
        };
        let (next, acts) = enforce_transition(&st, &rec, &p, &input);
        assert_eq!(next.tier, Tier::Isolated);
        assert_eq!(acts, vec![EnforcementAction::Queue(SecurityEvent::Reinstated)]);
        let (again, acts) = enforce_transition(&next, &rec, &p, &input);
        assert_eq!(again.tier, Tier::Isolated);
        assert!(acts.is_empty());
        let no_auto = TrustParams {
            auto_recovery: false,
            ..p
        };
        assert!(enforce_transition(&st, &rec, &no_auto, &input).1.is_empty());
    }

    #[test]
    fn cross_validation_is_side_agreement() {
        let p = TrustParams::default();
        assert!(cross_validate(0.1, 0.6, &p));
        assert!(cross_validate(0.9, 0.7, &p));
        assert!(!cross_validate(0.6, 0.7, &p));
    }
}
