//! Random waypoint mobility confined to the deployment footprint.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentId, AgentKind, AgentState, Vec3};
use crate::error::{Error, Result};
use crate::sim::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityParams {
    pub auv_speed_mps: [f64; 2],
    pub auv_depth_m: [f64; 2],
    pub tick_s: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            auv_speed_mps: [0.5, 2.0],
            auv_depth_m: [10.0, 200.0],
            tick_s: 10.0,
        }
    }
}

impl MobilityParams {
    pub fn validate(&self) -> Result<()> {
        let [vlo, vhi] = self.auv_speed_mps;
        let [dlo, dhi] = self.auv_depth_m;
        if !(0.0 < vlo && vlo <= vhi) {
            return Err(Error::Config("mobility.auv_speed_mps must be 0 < lo <= hi".into()));
        }
        if !(0.0 <= dlo && dlo <= dhi) {
            return Err(Error::Config("mobility.auv_depth_m must be ordered".into()));
        }
        if !(self.tick_s > 0.0) {
            return Err(Error::Config("mobility.tick_s must be > 0".into()));
        }
        Ok(())
    }

    pub fn random_auv_point<R: Rng + ?Sized>(&self, area: f64, rng: &mut R) -> Vec3 {
        let [dlo, dhi] = self.auv_depth_m;
        Vec3::new(
            rng.random_range(0.0..=area),
            rng.random_range(0.0..=area),
            rng.random_range(dlo..=dhi),
        )
    }

    /// Draws a fresh waypoint and cruise speed for `agent`.
    pub fn assign_leg<R: Rng + ?Sized>(&self, agent: &mut AgentState, area: f64, rng: &mut R) {
        let [vlo, vhi] = self.auv_speed_mps;
        agent.waypoint = Some(self.random_auv_point(area, rng));
        agent.speed = rng.random_range(vlo..=vhi);
        update_velocity(agent);
    }
}

fn update_velocity(agent: &mut AgentState) {
    agent.velocity = match agent.waypoint {
        Some(w) => {
            let d = agent.position.distance(&w);
            if d > 0.0 {
                let s = agent.speed / d;
                Vec3::new(
                    (w.x - agent.position.x) * s,
                    (w.y - agent.position.y) * s,
                    (w.z - agent.position.z) * s,
                )
            } else {
                Vec3::ZERO
            }
        }
        None => Vec3::ZERO,
    };
}

/// Advances one AUV by `dt`. Returns true when it reached its waypoint (and
/// drew a new leg).
fn advance<R: Rng + ?Sized>(
    agent: &mut AgentState,
    dt: f64,
    params: &MobilityParams,
    area: f64,
    rng: &mut R,
) -> bool {
    let Some(w) = agent.waypoint else {
        params.assign_leg(agent, area, rng);
        return false;
    };
    let remaining = agent.position.distance(&w);
    let step = agent.speed * dt;
    if step >= remaining {
        agent.position = w;
        params.assign_leg(agent, area, rng);
        true
    } else {
        let f = step / remaining;
        agent.position = Vec3::new(
            agent.position.x + (w.x - agent.position.x) * f,
            agent.position.y + (w.y - agent.position.y) * f,
            agent.position.z + (w.z - agent.position.z) * f,
        );
        update_velocity(agent);
        false
    }
}

/// Moves every live AUV by `dt` seconds. Static nodes never move. Agents are
/// visited in id order so draw order is stable.
pub fn move_agents<R: Rng + ?Sized>(
    agents: &mut [AgentState],
    dt: f64,
    params: &MobilityParams,
    area: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let mut arrivals = 0;
    for agent in agents.iter_mut() {
        if agent.kind == AgentKind::MobileAuv && agent.alive {
            if advance(agent, dt, params, area, rng) {
                arrivals += 1;
            }
        }
    }
    Ok(arrivals)
}

/// Rebuilds every neighbor table from current positions. Dead and hidden
/// agents neither have nor appear in neighbor tables. Existing entries keep
/// their last-heard time; new ones are stamped `now`.
pub fn refresh_neighbors(
    agents: &mut [AgentState],
    comm_range_m: f64,
    hidden: &BTreeSet<AgentId>,
    now: SimTime,
) {
    let snapshot: Vec<(AgentId, Vec3, bool)> = agents
        .iter()
        .map(|a| (a.id, a.position, a.alive && !hidden.contains(&a.id)))
        .collect();
    for agent in agents.iter_mut() {
        let visible = agent.alive && !hidden.contains(&agent.id);
        let mut table = std::mem::take(&mut agent.neighbor_table);
        table.retain(|id, _| {
            let (_, pos, ok) = snapshot[id.index()];
            visible && ok && pos.distance(&agent.position) <= comm_range_m
        });
        if visible {
            for &(id, pos, ok) in &snapshot {
                if ok && id != agent.id && pos.distance(&agent.position) <= comm_range_m {
                    table.entry(id).or_insert(now);
                }
            }
        }
        agent.neighbor_table = table;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStreams;

    fn auv_at(pos: Vec3, waypoint: Vec3, speed: f64) -> AgentState {
        let mut a = AgentState::new(AgentId(0), AgentKind::MobileAuv, pos, 100.0);
        a.waypoint = Some(waypoint);
        a.speed = speed;
        a
    }

    #[test]
    fn sensors_do_not_move() {
        let mut agents = vec![AgentState::new(
            AgentId(0),
            AgentKind::StaticSensor,
            Vec3::new(1.0, 2.0, 3.0),
            1.0,
        )];
        let mut rng = RngStreams::new(1).stream("mobility");
        move_agents(&mut agents, 10.0, &MobilityParams::default(), 1000.0, &mut rng).unwrap();
        assert_eq!(agents[0].position, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn auv_kinematics() {
        let mut agents = vec![auv_at(Vec3::ZERO, Vec3::new(100.0, 0.0, 0.0), 2.0)];
        let mut rng = RngStreams::new(1).stream("mobility");
        move_agents(&mut agents, 10.0, &MobilityParams::default(), 1000.0, &mut rng).unwrap();
        let p = agents[0].position;
        assert!((p.x - 20.0).abs() < 1e-12 && p.y.abs() < 1e-12 && p.z.abs() < 1e-12);
        assert_eq!(agents[0].waypoint, Some(Vec3::new(100.0, 0.0, 0.0)));
    }

    #[test]
    fn arrival_draws_new_leg_from_stream() {
        let params = MobilityParams::default();
        let start = Vec3::new(99.0, 0.0, 20.0);
        let target = Vec3::new(100.0, 0.0, 20.0);
        let mut agents = vec![auv_at(start, target, 2.0)];
        let mut rng = RngStreams::new(3).stream("mobility");
        let arrivals = move_agents(&mut agents, 10.0, &params, 1000.0, &mut rng).unwrap();
        assert_eq!(arrivals, 1);
        assert_eq!(agents[0].position, target);

        // Replaying the same stream yields the same new leg.
        let mut probe = auv_at(target, target, 1.0);
        let mut rng2 = RngStreams::new(3).stream("mobility");
        params.assign_leg(&mut probe, 1000.0, &mut rng2);
        assert_eq!(agents[0].waypoint, probe.waypoint);
        assert_eq!(agents[0].speed, probe.speed);
        let [lo, hi] = params.auv_speed_mps;
        assert!((lo..=hi).contains(&agents[0].speed));
    }

    #[test]
    fn rejects_non_positive_dt() {
        let mut agents: Vec<AgentState> = vec![];
        let mut rng = RngStreams::new(1).stream("mobility");
        assert!(move_agents(&mut agents, 0.0, &MobilityParams::default(), 1.0, &mut rng).is_err());
    }

    #[test]
    fn neighbor_tables_follow_range() {
        let mut agents: Vec<_> = [0.0, 300.0, 900.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                AgentState::new(
                    AgentId(i as u32),
                    AgentKind::StaticSensor,
                    Vec3::new(x, 0.0, 0.0),
                    1.0,
                )
            })
            .collect();
        refresh_neighbors(&mut agents, 400.0, &BTreeSet::new(), SimTime::ZERO);
        assert_eq!(agents[0].neighbor_table.keys().copied().collect::<Vec<_>>(), vec![AgentId(1)]);
        assert!(agents[2].neighbor_table.is_empty());

        let hidden: BTreeSet<_> = [AgentId(1)].into_iter().collect();
        refresh_neighbors(&mut agents, 400.0, &hidden, SimTime::from_secs(5.0));
        assert!(agents[0].neighbor_table.is_empty());
        assert!(agents[1].neighbor_table.is_empty());
    }
}
