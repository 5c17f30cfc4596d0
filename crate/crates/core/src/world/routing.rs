use std::collections::BTreeSet;

use super::{AgentId, AgentState};

/// Which neighbor a forwarding decision prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteChoice {
    /// Benign greedy geographic forwarding: closest to the destination,
    /// and only if that makes progress.
    Greedy,
    /// Detour: farthest neighbor from the destination (route manipulation).
    Farthest,
}

/// Greedy geographic next hop for a packet at `from` headed to `final_dst`.
///
/// Candidates are live neighbors from the agent's neighbor table that are
/// not in `exclusions`. The final destination is always preferred when it is
/// a neighbor. Ties go to the lowest id. Returns `None` when no neighbor is
/// strictly closer to the destination than `from` itself.
pub fn route_next_hop(
    agents: &[AgentState],
    from: AgentId,
    final_dst: AgentId,
    exclusions: &BTreeSet<AgentId>,
) -> Option<AgentId> {
    choose_next_hop(agents, from, final_dst, exclusions, RouteChoice::Greedy)
}

pub fn choose_next_hop(
    agents: &[AgentState],
    from: AgentId,
    final_dst: AgentId,
    exclusions: &BTreeSet<AgentId>,
    choice: RouteChoice,
) -> Option<AgentId> {
    let me = &agents[from.index()];
    if !me.alive {
        return None;
    }
    let target = agents[final_dst.index()].position;
    let my_dist = me.position.distance(&target);
    let candidates = me.neighbor_table.keys().filter(|id| {
        let n = &agents[id.index()];
        n.alive && !exclusions.contains(id) && **id != from
    });

    match choice {
        RouteChoice::Greedy => {
            if me.neighbor_table.contains_key(&final_dst)
                && agents[final_dst.index()].alive
                && !exclusions.contains(&final_dst)
            {
                return Some(final_dst);
            }
            let mut best: Option<(f64, AgentId)> = None;
            for &id in candidates {
                let d = agents[id.index()].position.distance(&target);
                // Neighbor keys iterate in ascending id order, so strict `<`
                // keeps the lowest id on ties.
                if d < my_dist && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, id));
                }
            }
            best.map(|(_, id)| id)
        }
        RouteChoice::Farthest => {
            let mut worst: Option<(f64, AgentId)> = None;
            for &id in candidates {
                let d = agents[id.index()].position.distance(&target);
                if worst.is_none_or(|(wd, _)| d > wd) {
                    worst = Some((d, id));
                }
            }
            worst.map(|(_, id)| id)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimTime;
    use crate::world::mobility::refresh_neighbors;
    use crate::world::{AgentKind, Vec3};

    fn line(xs: &[(f64, f64)]) -> Vec<AgentState> {
        let mut agents: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let kind = if i == 0 {
                    AgentKind::SurfaceGateway
                } else {
                    AgentKind::StaticSensor
                };
                AgentState::new(AgentId(i as u32), kind, Vec3::new(x, y, 0.0), 1.0)
            })
            .collect();
        refresh_neighbors(&mut agents, 400.0, &BTreeSet::new(), SimTime::ZERO);
        agents
    }

    #[test]
    fn direct_delivery_when_destination_is_neighbor() {
        let agents = line(&[(0.0, 0.0), (300.0, 0.0), (100.0, 0.0)]);
        let hop = route_next_hop(&agents, AgentId(1), AgentId(0), &BTreeSet::new());
        assert_eq!(hop, Some(AgentId(0)));
    }

    #[test]
    fn equidistant_tie_goes_to_lower_id() {
        // Agents 1 and 2 mirror each other around the x axis.
        let agents = line(&[(0.0, 0.0), (300.0, 100.0), (300.0, -100.0), (600.0, 0.0)]);
        let hop = route_next_hop(&agents, AgentId(3), AgentId(0), &BTreeSet::new());
        assert_eq!(hop, Some(AgentId(1)));
    }

    #[test]
    fn exclusions_are_honored() {
        let agents = line(&[(0.0, 0.0), (300.0, 100.0), (300.0, -100.0), (600.0, 0.0)]);
        let ex: BTreeSet<_> = [AgentId(1), AgentId(2)].into_iter().collect();
        assert_eq!(route_next_hop(&agents, AgentId(3), AgentId(0), &ex), None);
        let ex1: BTreeSet<_> = [AgentId(1)].into_iter().collect();
        assert_eq!(route_next_hop(&agents, AgentId(3), AgentId(0), &ex1), Some(AgentId(2)));
    }

    #[test]
    fn no_progress_means_no_hop() {
        // Only neighbor is farther from the gateway.
        let agents = line(&[(0.0, 0.0), (600.0, 0.0), (900.0, 0.0)]);
        assert_eq!(route_next_hop(&agents, AgentId(1), AgentId(0), &BTreeSet::new()), None);
        assert_eq!(
            choose_next_hop(&agents, AgentId(1), AgentId(0), &BTreeSet::new(), RouteChoice::Farthest),
            Some(AgentId(2))
        );
    }
}
