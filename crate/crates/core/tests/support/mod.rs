//! Test oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use uwtrust::features::{FeatureNorms, FeatureVector};
use uwtrust::harness::ScenarioConfig;
use uwtrust::world::{AgentId, AgentKind, AgentState, PacketRecord};

/// Recomputes every agent's interval vectors from the raw packet log alone,
/// by rescanning the whole log for each (agent, interval). Receptions at
/// `sinks` are arrivals, never relays.
pub fn brute_force_features(
    log: &[PacketRecord],
    sinks: &[AgentId],
    n_agents: usize,
    norms: &FeatureNorms,
    intervals: u64,
) -> Vec<Vec<FeatureVector>> {
    let on_air: Vec<&PacketRecord> = log.iter().filter(|r| r.on_air()).collect();
    let interval = |t: f64| (t / norms.interval_s).floor() as u64;
    let mut out = vec![Vec::with_capacity(n_agents); intervals as usize];
    for a in 0..n_agents {
        let me = AgentId(a as u32);
        let mut prev_peers: Vec<AgentId> = Vec::new();
        for k in 0..intervals {
            let t_end = (k + 1) as f64 * norms.interval_s;
            let mut sends = Vec::new();
            let (mut retx, mut decisions, mut changes, mut deviant) = (0u32, 0u32, 0u32, 0u32);
            let mut peers: Vec<AgentId> = Vec::new();
            for (pos, r) in on_air.iter().enumerate() {
                if r.src != me || interval(r.sent_at.as_secs()) != k {
                    continue;
                }
                let earlier = &on_air[..pos];
                sends.push((r.sent_at.as_secs(), r.msg_id));
                match r.retransmission_of {
                    Some(orig) => {
                        retx += 1;
                        if !earlier.iter().any(|e| e.src == me && e.packet_id == orig) {
                            deviant += 1;
                            continue;
                        }
                    }
                    None => {
                        decisions += 1;
                        let last = earlier
                            .iter()
                            .rev()
                            .find(|e| e.src == me && e.retransmission_of.is_none() && e.final_dst == r.final_dst);
                        if last.is_some_and(|e| e.dst != r.dst) {
                            changes += 1;
                        }
                    }
                }
                if earlier.iter().any(|e| e.packet_id == r.packet_id) {
                    deviant += 1;
                }
            }
            for r in &on_air {
                if r.src == me && interval(r.sent_at.as_secs()) == k && !peers.contains(&r.dst) {
                    peers.push(r.dst);
                }
            }
            let mut unforwarded = 0;
            for r in &on_air {
                let Some(at) = r.delivered_at else { continue };
                if r.dst != me || interval(at.as_secs()) != k {
                    continue;
                }
                if !peers.contains(&r.src) {
                    peers.push(r.src);
                }
                if r.final_dst != me && !sinks.contains(&me) {
                    let forwarded = sends
                        .iter()
                        .any(|(t, m)| *m == r.msg_id && *t >= at.as_secs() && *t < t_end);
                    if !forwarded {
                        unforwarded += 1;
                    }
                }
            }
            let churn = if sends.is_empty() && peers.is_empty() {
                0
            } else {
                let c = peers.iter().filter(|p| !prev_peers.contains(p)).count()
                    + prev_peers.iter().filter(|p| !peers.contains(p)).count();
                prev_peers = peers.clone();
                c
            };
            let n = sends.len();
            let (gap_mean, gap_var) = if n >= 2 {
                let gaps: Vec<f64> = sends.windows(2).map(|w| w[1].0 - w[0].0).collect();
                let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
                let v = gaps.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / gaps.len() as f64;
                (m, v)
            } else {
                (0.0, 0.0)
            };
            let denom = n.max(1) as f64;
            out[k as usize].push(FeatureVector([
                n as f64 / norms.norm_volume,
                gap_mean,
                gap_var,
                retx as f64 / denom,
                1.0 - changes as f64 / decisions.max(1) as f64,
                churn as f64 / norms.norm_churn,
                ((deviant as usize + unforwarded) as f64 / denom).min(1.0),
            ]));
        }
    }
    out
}

/// A short, small scenario for tests that need whole missions.
pub fn small_scenario() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.n_agents = 20;
    c.n_auvs = 4;
    c.mission_duration_s = 1800.0;
    c.warmup_intervals = 2;
    c.adversary.fraction = 0.2;
    c.mode = uwtrust::harness::Mode::Static;
    c
}

pub fn gateways(agents: &[AgentState]) -> Vec<AgentId> {
    agents.iter().filter(|a| a.kind == AgentKind::SurfaceGateway).map(|a| a.id).collect()
}
