//! One simulated mission: traffic, attacks, observation, trust, enforcement
//! and consensus on a single event loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::config::{Mode, ScenarioConfig};
use super::metrics::{classify_interval, median, DetectionOutcome, MetricsRow, RunStats};
use crate::adversary::{assign_compromised, Adversary, AttackKind, CompromiseAssignment};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureNorms, FeatureVector, ObservedTx, SequenceBuffer};
use crate::governance::{
    apply_committed, enforce_transition, Consortium, EnforcementAction, EnforcementState, Fault,
    LedgerBlock, SecurityEvent, TransitionInput, TrustCommit,
};
use crate::metrics::Confusion;
use crate::sim::{Labeled, RngStreams, Scheduler, SimTime, StreamRng, TraceEntry};
use crate::trust::{
    smooth_update, static_trust, BetaReputation, Outcome, Scorer, Tier, TrustRecord,
};
use crate::world::channel::{one_hop_delay, propagation_delay, transmission_delay};
use crate::world::deploy::deploy;
use crate::world::energy::{adaptive_duty_cycle, step_energy, tx_energy};
use crate::world::mobility::{move_agents, refresh_neighbors};
use crate::world::routing::{choose_next_hop, route_next_hop, RouteChoice};
use crate::world::{
    AgentId, AgentKind, AgentState, DropReason, EnergyDraw, MsgId, PacketId, PacketKind,
    PacketRecord,
};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the (fire time, seq, label) trace of every processed event.
    pub trace_events: bool,
}

/// A message as carried between hops.
#[derive(Debug, Clone)]
struct Carry {
    msg: MsgId,
    origin: AgentId,
    final_dst: AgentId,
    kind: PacketKind,
    size_bits: u32,
    hops: u32,
    /// Agents that held the message before the current one.
    path: Vec<AgentId>,
    replayed: bool,
}

#[derive(Debug)]
enum Ev {
    Generate { agent: AgentId },
    Originate { agent: AgentId },
    Replay { agent: AgentId },
    Arrive { rec: usize, carry: Carry },
    Retry { rec: usize, attempt: u32, carry: Carry },
    MobilityTick,
    IntervalClose { k: u64 },
    ConsensusTick,
    ApplyBlock { height: u64 },
    OutcomeDeadline { relay: AgentId, msg: MsgId },
}

impl Labeled for Ev {
    fn label(&self) -> &'static str {
        match self {
            Ev::Generate { .. } => "traffic-period",
            Ev::Originate { .. } => "originate",
            Ev::Replay { .. } => "replay",
            Ev::Arrive { .. } => "packet-arrival",
            Ev::Retry { .. } => "retry",
            Ev::MobilityTick => "mobility-tick",
            Ev::IntervalClose { .. } => "window-close",
            Ev::ConsensusTick => "consensus-tick",
            Ev::ApplyBlock { .. } => "block-apply",
            Ev::OutcomeDeadline { .. } => "outcome-deadline",
        }
    }
}

struct Buffered {
    carry: Carry,
    since: SimTime,
}

/// A tier transition, for the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub at: SimTime,
    pub agent: AgentId,
    pub from: Tier,
    pub to: Tier,
    /// Set for transitions applied from a committed ledger block.
    pub ledger_height: Option<u64>,
}

/// Tier-2 escalation and the moment routing stopped using the agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub agent: AgentId,
    pub triggered_at: SimTime,
    pub excluded_at: SimTime,
    pub attack_active: bool,
}

pub fn gateway_ids(agents: &[AgentState]) -> Vec<AgentId> {
    agents
        .iter()
        .filter(|a| a.kind == AgentKind::SurfaceGateway)
        .map(|a| a.id)
        .collect()
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub mode: Mode,
    pub norms: FeatureNorms,
    pub hosts: Vec<AgentId>,
    pub assignment: CompromiseAssignment,
    pub rows: Vec<MetricsRow>,
    pub stats: RunStats,
    pub outcomes: Vec<DetectionOutcome>,
    pub ledger: Vec<LedgerBlock>,
    pub packets: Vec<PacketRecord>,
    /// `vectors[k][agent]`: streamed feature vector of interval `k`.
    pub vectors: Vec<Vec<FeatureVector>>,
    /// `labels[k][agent]`: attack active at the end of interval `k`.
    pub labels: Vec<Vec<bool>>,
    pub transitions: Vec<Transition>,
    pub escalations: Vec<Escalation>,
    pub agents: Vec<AgentState>,
    pub event_counts: BTreeMap<&'static str, u64>,
    pub trace: Vec<TraceEntry>,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    mode: Mode,
    seed: u64,
    model: Option<&'a Scorer<f32>>,
    sched: Scheduler<Ev>,
    agents: Vec<AgentState>,
    hosts: Vec<AgentId>,
    gateways: Vec<AgentId>,
    adversary: Adversary,
    rng_channel: StreamRng,
    rng_mobility: StreamRng,
    rng_throttle: StreamRng,
    packets: Vec<PacketRecord>,
    next_packet: u64,
    msg_data: Vec<bool>,
    msg_delivered: Vec<bool>,
    originated: u64,
    delivered: u64,
    buffers: Vec<Vec<Buffered>>,
    replay_memory: Vec<VecDeque<(PacketId, Carry)>>,
    extractor: FeatureExtractor,
    seqbufs: Vec<SequenceBuffer>,
    records: Vec<TrustRecord>,
    enf: Vec<EnforcementState>,
    reporter: Vec<AgentId>,
    beta: Vec<BetaReputation>,
    beta_fresh: Vec<bool>,
    pending_outcomes: BTreeMap<(AgentId, MsgId), SimTime>,
    outcome_window_s: f64,
    relayed_data: Vec<u32>,
    excluded: BTreeSet<AgentId>,
    hidden: BTreeSet<AgentId>,
    consortium: Option<Consortium>,
    queued_events: Vec<(AgentId, SecurityEvent, u64)>,
    committed_tau: Vec<f64>,
    current_interval: u64,
    rows: Vec<MetricsRow>,
    confusion: Confusion,
    first_flag: Vec<Option<SimTime>>,
    vectors: Vec<Vec<FeatureVector>>,
    labels: Vec<Vec<bool>>,
    transitions: Vec<Transition>,
    escalations: Vec<Escalation>,
    deferred: u64,
    inferences: u64,
    consensus_rounds: u64,
    view_changes: u64,
    exclusion_violations: u64,
    event_counts: BTreeMap<&'static str, u64>,
}

/// Interrogator hosts: the first ids, which are gateways and then AUVs.
pub fn interrogator_hosts(cfg: &ScenarioConfig) -> Vec<AgentId> {
    (0..cfg.n_interrogator_hosts as u32).map(AgentId).collect()
}

/// Agents that may be compromised.
pub fn eligible_agents(cfg: &ScenarioConfig) -> Vec<AgentId> {
    let first = if cfg.adversary.allow_privileged {
        0
    } else {
        cfg.n_interrogator_hosts.max(cfg.n_gateways)
    };
    (first as u32..cfg.n_agents as u32).map(AgentId).collect()
}

/// Moves every coordinated insider after the first next to it, so the group
/// is a cluster of colluding neighbors rather than scattered nodes.
fn cluster_insiders(asg: &mut CompromiseAssignment, agents: &[AgentState], eligible: &[AgentId]) {
    let insiders: Vec<AgentId> = asg
        .profiles
        .iter()
        .filter(|(_, p)| p.kind == AttackKind::CoordinatedInsider)
        .map(|(id, _)| *id)
        .collect();
    let Some((&anchor, rest)) = insiders.split_first() else {
        return;
    };
    let anchor_pos = agents[anchor.index()].position;
    for &m in rest {
        let best = eligible
            .iter()
            .filter(|id| !asg.assigned.contains(id))
            .min_by(|a, b| {
                let da = agents[a.index()].position.distance(&anchor_pos);
                let db = agents[b.index()].position.distance(&anchor_pos);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .copied();
        let current = agents[m.index()].position.distance(&anchor_pos);
        if let Some(c) = best {
            if agents[c.index()].position.distance(&anchor_pos) < current {
                let profile = asg.profiles.remove(&m).expect("insider profile");
                asg.assigned.remove(&m);
                asg.profiles.insert(c, profile);
                asg.assigned.insert(c);
            }
        }
    }
}

/// Runs one mission.
pub fn simulate(
    cfg: &ScenarioConfig,
    seed: u64,
    norms: FeatureNorms,
    model: Option<&Scorer<f32>>,
    opts: &RunOptions,
) -> Result<RunOutput> {
    cfg.validate()?;
    norms.validate()?;
    if (norms.interval_s - cfg.monitoring_interval_s).abs() > 1e-12 {
        return Err(Error::Config("normalization interval differs from monitoring interval".into()));
    }
    if cfg.mode == Mode::Interrogator && model.is_none() {
        return Err(Error::Config("interrogator mode needs a scorer model".into()));
    }
    let mut sim = Sim::new(cfg, seed, norms, model)?;
    if opts.trace_events {
        sim.sched.enable_trace();
    }
    sim.run()?;
    Ok(sim.finish(norms))
}

impl<'a> Sim<'a> {
    fn new(
        cfg: &'a ScenarioConfig,
        seed: u64,
        norms: FeatureNorms,
        model: Option<&'a Scorer<f32>>,
    ) -> Result<Self> {
        let streams = RngStreams::new(seed);
        let mut rng_deploy = streams.stream("deployment");
        let mut rng_mobility = streams.stream("mobility");
        let mut agents = deploy(
            cfg.n_agents,
            cfg.n_gateways,
            cfg.n_auvs,
            &cfg.deployment,
            &cfg.mobility,
            &cfg.energy,
            &mut rng_deploy,
        )?;
        let hosts = interrogator_hosts(cfg);
        let eligible = eligible_agents(cfg);
        let mut rng_adv = streams.stream("adversary");
        let mission = SimTime::from_secs(cfg.mission_duration_s);
        let mut assignment = assign_compromised(cfg.n_agents, &eligible, &cfg.adversary, mission, &mut rng_adv)?;
        cluster_insiders(&mut assignment, &agents, &eligible);
        for id in &assignment.assigned {
            agents[id.index()].compromised = true;
        }
        let _ = &mut rng_mobility;
        refresh_neighbors(&mut agents, cfg.channel.comm_range_m, &BTreeSet::new(), SimTime::ZERO);

        let n = cfg.n_agents;
        let static_mode = cfg.mode == Mode::Static;
        let records: Vec<TrustRecord> = (0..n)
            .map(|i| {
                let id = AgentId(i as u32);
                let mut r = TrustRecord::new(id, &cfg.trust);
                if static_mode {
                    r.tau = static_trust(id);
                    r.raw_score = static_trust(id);
                }
                r
            })
            .collect();
        let consortium = if cfg.monitor.enforcement && !static_mode {
            let faults = if cfg.consensus.faults.is_empty() {
                vec![Fault::Honest; cfg.consensus.pbft.validators]
            } else {
                cfg.consensus.faults.clone()
            };
            Some(Consortium::new(cfg.consensus.pbft.clone(), &faults)?)
        } else {
            None
        };
        let outcome_window_s = 3.0
            * (transmission_delay(cfg.traffic.data_bits, &cfg.channel)
                + propagation_delay(cfg.channel.comm_range_m, &cfg.channel)?);
        let gateways = (0..cfg.n_gateways as u32).map(AgentId).collect();
        Ok(Sim {
            cfg,
            mode: cfg.mode,
            seed,
            model,
            sched: Scheduler::new(),
            hosts,
            gateways,
            adversary: Adversary::new(assignment, streams.stream("adversary-runtime")),
            rng_channel: streams.stream("channel"),
            rng_mobility,
            rng_throttle: streams.stream("throttle"),
            packets: Vec::new(),
            next_packet: 0,
            msg_data: Vec::new(),
            msg_delivered: Vec::new(),
            originated: 0,
            delivered: 0,
            buffers: (0..n).map(|_| Vec::new()).collect(),
            replay_memory: (0..n).map(|_| VecDeque::new()).collect(),
            extractor: FeatureExtractor::new(n, norms)?.with_sinks(gateway_ids(&agents)),
            seqbufs: (0..n).map(|i| SequenceBuffer::new(AgentId(i as u32))).collect(),
            committed_tau: records.iter().map(|r| r.tau).collect(),
            records,
            enf: (0..n).map(|i| EnforcementState::new(AgentId(i as u32))).collect(),
            reporter: vec![AgentId(0); n],
            beta: vec![BetaReputation::default(); n],
            beta_fresh: vec![false; n],
            pending_outcomes: BTreeMap::new(),
            outcome_window_s,
            relayed_data: vec![0; n],
            excluded: BTreeSet::new(),
            hidden: BTreeSet::new(),
            consortium,
            queued_events: Vec::new(),
            current_interval: 0,
            rows: Vec::new(),
            confusion: Confusion::default(),
            first_flag: vec![None; n],
            vectors: Vec::new(),
            labels: Vec::new(),
            transitions: Vec::new(),
            escalations: Vec::new(),
            deferred: 0,
            inferences: 0,
            consensus_rounds: 0,
            view_changes: 0,
            exclusion_violations: 0,
            event_counts: BTreeMap::new(),
            agents,
        })
    }

    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn run(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let period = cfg.traffic.period_s;
        let mut rng_phase = RngStreams::new(self.seed).stream("traffic");
        for i in 0..cfg.n_agents {
            if self.agents[i].kind == AgentKind::SurfaceGateway {
                continue;
            }
            let phase = rand::Rng::random_range(&mut rng_phase, 0.0..period);
            self.sched
                .schedule(SimTime::from_secs(phase), Ev::Generate { agent: AgentId(i as u32) })?;
        }
        self.sched.schedule(SimTime::from_secs(cfg.mobility.tick_s), Ev::MobilityTick)?;
        self.sched
            .schedule(SimTime::from_secs(cfg.monitoring_interval_s), Ev::IntervalClose { k: 0 })?;
        if self.consortium.is_some() {
            self.sched.schedule(SimTime::from_secs(cfg.consensus.tick_s), Ev::ConsensusTick)?;
        }
        let end = SimTime::from_secs(cfg.mission_duration_s);
        while let Some((_, ev)) = self.sched.pop_until(end) {
            *self.event_counts.entry(ev.label()).or_default() += 1;
            self.handle(ev)?;
        }
        self.sched.advance_to(end);
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        match ev {
            Ev::Generate { agent } => self.on_generate(agent),
            Ev::Originate { agent } => {
                self.originate(agent);
                Ok(())
            }
            Ev::Replay { agent } => {
                self.replay(agent);
                Ok(())
            }
            Ev::Arrive { rec, carry } => self.on_arrive(rec, carry),
            Ev::Retry { rec, attempt, carry } => {
                self.on_retry(rec, attempt, carry);
                Ok(())
            }
            Ev::MobilityTick => self.on_mobility_tick(),
            Ev::IntervalClose { k } => self.on_interval_close(k),
            Ev::ConsensusTick => self.on_consensus_tick(),
            Ev::ApplyBlock { height } => {
                self.on_apply_block(height);
                Ok(())
            }
            Ev::OutcomeDeadline { relay, msg } => {
                if self.pending_outcomes.remove(&(relay, msg)).is_some() {
                    self.record_outcome(relay, Outcome::Negative);
                }
                Ok(())
            }
        }
    }

    // ---- traffic -------------------------------------------------------

    fn on_generate(&mut self, agent: AgentId) -> Result<()> {
        let now = self.now();
        let period = self.cfg.traffic.period_s;
        let slots = self.cfg.traffic.burst_slots;
        let slot_s = period / slots as f64;
        if !self.agents[agent.index()].alive {
            return Ok(());
        }
        match self.adversary.burst_multiplier(agent, now) {
            Some(mult) => {
                for s in self.adversary.slots(mult, slots) {
                    self.sched.schedule_in(s as f64 * slot_s, Ev::Originate { agent })?;
                }
            }
            None => self.originate(agent),
        }
        if let Some(rate) = self.adversary.replay_rate(agent, now) {
            for s in self.adversary.slots(rate, slots) {
                self.sched.schedule_in(s as f64 * slot_s, Ev::Replay { agent })?;
            }
        }
        self.sched.schedule_in(period, Ev::Generate { agent })?;
        Ok(())
    }

    fn new_msg(&mut self, data: bool) -> MsgId {
        let id = MsgId(self.msg_data.len() as u64);
        self.msg_data.push(data);
        self.msg_delivered.push(false);
        id
    }

    fn nearest_gateway(&self, from: AgentId) -> Option<AgentId> {
        let pos = self.agents[from.index()].position;
        self.gateways
            .iter()
            .filter(|g| self.agents[g.index()].alive && !self.excluded.contains(g) && **g != from)
            .min_by(|a, b| {
                let da = self.agents[a.index()].position.distance(&pos);
                let db = self.agents[b.index()].position.distance(&pos);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .copied()
    }

    fn originate(&mut self, agent: AgentId) {
        let i = agent.index();
        if !self.agents[i].alive {
            return;
        }
        let throttle = self.enf[i].throttle_factor;
        if throttle < 1.0 {
            let admit = rand::Rng::random::<f64>(&mut self.rng_throttle) < throttle;
            if !admit {
                return;
            }
        }
        let Some(gw) = self.nearest_gateway(agent) else {
            return;
        };
        let e_sense = self.cfg.energy.e_sense;
        step_energy(&mut self.agents[i], EnergyDraw::sense(e_sense));
        let msg = self.new_msg(true);
        self.originated += 1;
        let carry = Carry {
            msg,
            origin: agent,
            final_dst: gw,
            kind: PacketKind::SensorData,
            size_bits: self.cfg.traffic.data_bits,
            hops: 0,
            path: Vec::new(),
            replayed: false,
        };
        self.forward(agent, carry, false);
    }

    fn replay(&mut self, agent: AgentId) {
        let i = agent.index();
        if !self.agents[i].alive || self.replay_memory[i].is_empty() {
            return;
        }
        let idx = self.adversary.pick_index(self.replay_memory[i].len());
        let (stale, mut carry) = self.replay_memory[i][idx].clone();
        if carry.final_dst == agent {
            return;
        }
        carry.replayed = true;
        let Some(next) = route_next_hop(&self.agents, agent, carry.final_dst, &self.excluded) else {
            return;
        };
        step_energy(&mut self.agents[i], EnergyDraw::compute(self.cfg.energy.e_compute));
        // Replays go out once, reusing the remembered identifier.
        self.transmit(agent, next, carry, Some(stale), None, self.cfg.traffic.max_retries);
    }

    fn remember(&mut self, agent: AgentId, pid: PacketId, carry: &Carry) {
        let i = agent.index();
        let is_replayer = self
            .adversary
            .assignment()
            .profile(agent)
            .is_some_and(|p| p.kind == AttackKind::Replay);
        if !is_replayer || carry.replayed {
            return;
        }
        let mem = &mut self.replay_memory[i];
        if mem.len() == self.cfg.traffic.replay_memory {
            mem.pop_front();
        }
        if self.cfg.traffic.replay_memory > 0 {
            mem.push_back((pid, carry.clone()));
        }
    }

    fn node_drop(&mut self, at: AgentId, next: Option<AgentId>, carry: &Carry, reason: DropReason) {
        let pid = PacketId(self.next_packet);
        self.next_packet += 1;
        self.packets.push(PacketRecord {
            packet_id: pid,
            msg_id: carry.msg,
            src: at,
            dst: next.unwrap_or(at),
            origin: carry.origin,
            final_dst: carry.final_dst,
            size_bits: carry.size_bits,
            kind: carry.kind,
            sent_at: self.now(),
            delivered_at: None,
            retransmission_of: None,
            dropped_reason: Some(reason),
        });
    }

    /// A forwarding decision at `at`. Relayed messages pass the adversary
    /// hook first.
    fn forward(&mut self, at: AgentId, carry: Carry, relay: bool) {
        let i = at.index();
        if !self.agents[i].alive {
            self.node_drop(at, None, &carry, DropReason::DeadNode);
            return;
        }
        if carry.hops >= self.cfg.traffic.ttl_hops {
            self.node_drop(at, None, &carry, DropReason::TtlExceeded);
            return;
        }
        step_energy(&mut self.agents[i], EnergyDraw::compute(self.cfg.energy.e_compute));
        let now = self.now();
        let greedy = route_next_hop(&self.agents, at, carry.final_dst, &self.excluded);
        if relay && self.adversary.drops_relay(at, now, &self.route_of(at, &carry, greedy), greedy) {
            self.node_drop(at, greedy, &carry, DropReason::MaliciousDrop);
            return;
        }
        let next = match self.adversary.route_choice(at, now) {
            RouteChoice::Greedy => greedy,
            RouteChoice::Farthest => {
                choose_next_hop(&self.agents, at, carry.final_dst, &self.excluded, RouteChoice::Farthest)
                    .or(greedy)
            }
        };
        match next {
            Some(n) => self.transmit(at, n, carry, None, None, 0),
            None => self.buffers[i].push(Buffered { carry, since: now }),
        }
    }

    /// The agents a message visits: those that already held it, then the
    /// greedy hops still ahead. Only colluding insiders need it.
    fn route_of(&self, at: AgentId, carry: &Carry, next: Option<AgentId>) -> Vec<AgentId> {
        let insider = self
            .adversary
            .assignment()
            .profile(at)
            .is_some_and(|p| p.kind == AttackKind::CoordinatedInsider);
        let mut route = carry.path.clone();
        if !insider {
            return route;
        }
        let mut cur = next;
        let mut budget = self.cfg.traffic.ttl_hops.saturating_sub(carry.hops);
        while let Some(hop) = cur {
            if hop == carry.final_dst || budget == 0 || route.contains(&hop) {
                break;
            }
            route.push(hop);
            budget -= 1;
            cur = route_next_hop(&self.agents, hop, carry.final_dst, &self.excluded);
        }
        route
    }

    fn transmit(
        &mut self,
        src: AgentId,
        dst: AgentId,
        carry: Carry,
        reuse_id: Option<PacketId>,
        retransmission_of: Option<PacketId>,
        attempt: u32,
    ) {
        let now = self.now();
        let d = self.agents[src.index()].distance_to(&self.agents[dst.index()]);
        let pid = reuse_id.unwrap_or_else(|| {
            let p = PacketId(self.next_packet);
            self.next_packet += 1;
            p
        });
        let mut rec = PacketRecord {
            packet_id: pid,
            msg_id: carry.msg,
            src,
            dst,
            origin: carry.origin,
            final_dst: carry.final_dst,
            size_bits: carry.size_bits,
            kind: carry.kind,
            sent_at: now,
            delivered_at: None,
            retransmission_of,
            dropped_reason: None,
        };
        if d > self.cfg.channel.comm_range_m {
            rec.dropped_reason = Some(DropReason::OutOfRange);
            self.packets.push(rec);
            return;
        }
        if self.excluded.contains(&dst) && dst != carry.final_dst && retransmission_of.is_none() {
            self.exclusion_violations += 1;
        }
        let e = tx_energy(carry.size_bits, d, &self.cfg.energy);
        step_energy(&mut self.agents[src.index()], EnergyDraw::tx(e));
        if let Some(obs) = ObservedTx::from_record(&rec) {
            self.extractor.on_send(&obs);
        }
        self.remember(src, pid, &carry);
        let lost = self.cfg.channel.draw_loss(d, &mut self.rng_channel);
        let idx = self.packets.len();
        if lost {
            rec.dropped_reason = Some(DropReason::ChannelLoss);
            self.packets.push(rec);
            if attempt < self.cfg.traffic.max_retries {
                self.sched
                    .schedule_in(
                        self.cfg.traffic.retry_backoff_s,
                        Ev::Retry {
                            rec: idx,
                            attempt: attempt + 1,
                            carry,
                        },
                    )
                    .expect("positive backoff");
            }
            return;
        }
        self.packets.push(rec);
        let delay = one_hop_delay(carry.size_bits, d, &self.cfg.channel).expect("distance >= 0");
        self.sched
            .schedule_in(delay, Ev::Arrive { rec: idx, carry })
            .expect("non-negative delay");
    }

    fn on_retry(&mut self, rec: usize, attempt: u32, carry: Carry) {
        let (src, dst, prev) = {
            let r = &self.packets[rec];
            (r.src, r.dst, r.packet_id)
        };
        if !self.agents[src.index()].alive {
            self.node_drop(src, Some(dst), &carry, DropReason::DeadNode);
            return;
        }
        let usable = self.agents[src.index()].neighbor_table.contains_key(&dst)
            && self.agents[dst.index()].alive
            && !self.excluded.contains(&dst);
        if usable {
            self.transmit(src, dst, carry, None, Some(prev), attempt);
        } else {
            // The link went away during backoff: route afresh.
            self.route_or_buffer(src, carry, self.now());
        }
    }

    /// Routing without the adversary hook, used for buffered messages.
    /// Returns the message when no next hop exists.
    fn route_or_buffer(&mut self, at: AgentId, carry: Carry, since: SimTime) {
        match route_next_hop(&self.agents, at, carry.final_dst, &self.excluded) {
            Some(n) => self.transmit(at, n, carry, None, None, 0),
            None => self.buffers[at.index()].push(Buffered { carry, since }),
        }
    }

    fn on_arrive(&mut self, rec: usize, mut carry: Carry) -> Result<()> {
        let now = self.now();
        self.packets[rec].delivered_at = Some(now);
        let r = &self.packets[rec];
        let (src, dst, pid) = (r.src, r.dst, r.packet_id);
        if let Some(obs) = ObservedTx::from_record(r) {
            self.extractor.on_delivery(&obs, now);
        }
        if self.pending_outcomes.remove(&(src, carry.msg)).is_some() {
            self.record_outcome(src, Outcome::Positive);
        }
        let d = dst.index();
        if !self.agents[d].alive || self.hidden.contains(&dst) {
            return Ok(());
        }
        carry.hops += 1;
        carry.path.push(src);
        self.remember(dst, pid, &carry);
        // Gateways share the surface backhaul, so reaching any of them is delivery.
        if dst == carry.final_dst || self.agents[d].kind == AgentKind::SurfaceGateway {
            let m = carry.msg.0 as usize;
            if self.msg_data[m] && !carry.replayed && !self.msg_delivered[m] {
                self.msg_delivered[m] = true;
                self.delivered += 1;
            }
            return Ok(());
        }
        if carry.kind == PacketKind::SensorData {
            self.relayed_data[d] += 1;
        }
        if self.mode == Mode::Bayesian {
            let deadline = now.after(self.outcome_window_s);
            self.pending_outcomes.insert((dst, carry.msg), deadline);
            self.sched.schedule(
                deadline,
                Ev::OutcomeDeadline {
                    relay: dst,
                    msg: carry.msg,
                },
            )?;
        }
        self.forward(dst, carry, true);
        Ok(())
    }

    fn record_outcome(&mut self, relay: AgentId, outcome: Outcome) {
        let i = relay.index();
        self.beta[i] = self.beta[i].update(outcome);
        self.beta_fresh[i] = true;
    }

    fn on_mobility_tick(&mut self) -> Result<()> {
        let now = self.now();
        let cfg = self.cfg;
        move_agents(
            &mut self.agents,
            cfg.mobility.tick_s,
            &cfg.mobility,
            cfg.deployment.area_m,
            &mut self.rng_mobility,
        )?;
        refresh_neighbors(&mut self.agents, cfg.channel.comm_range_m, &self.hidden, now);
        for a in self.agents.iter_mut() {
            a.duty_cycle = adaptive_duty_cycle(a);
        }
        for i in 0..self.agents.len() {
            if self.buffers[i].is_empty() {
                continue;
            }
            let at = AgentId(i as u32);
            let items = std::mem::take(&mut self.buffers[i]);
            for b in items {
                if now.since(b.since) >= cfg.traffic.buffer_expiry_s {
                    self.node_drop(at, None, &b.carry, DropReason::Expired);
                } else if !self.agents[i].alive {
                    self.node_drop(at, None, &b.carry, DropReason::DeadNode);
                } else {
                    self.route_or_buffer(at, b.carry, b.since);
                }
            }
        }
        self.sched.schedule_in(cfg.mobility.tick_s, Ev::MobilityTick)?;
        Ok(())
    }

    // ---- monitoring ----------------------------------------------------

    /// Nearest live host other than `agent`, and a second one within the
    /// observation range.
    fn interrogators(&self, agent: AgentId) -> (Option<AgentId>, Option<AgentId>) {
        let pos = self.agents[agent.index()].position;
        let mut hosts: Vec<(f64, AgentId)> = self
            .hosts
            .iter()
            .filter(|h| **h != agent && self.agents[h.index()].alive)
            .map(|h| (self.agents[h.index()].position.distance(&pos), *h))
            .collect();
        hosts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let primary = hosts.first().map(|h| h.1);
        let secondary = hosts
            .get(1)
            .filter(|h| h.0 <= self.cfg.monitor.observation_range_m)
            .map(|h| h.1);
        (primary, secondary)
    }

    fn charge_host(&mut self, host: AgentId, joules: f64) {
        step_energy(&mut self.agents[host.index()], EnergyDraw::compute(joules));
    }

    fn on_interval_close(&mut self, k: u64) -> Result<()> {
        let now = self.now();
        let cfg = self.cfg;
        let vectors = self.extractor.close_interval(k)?;
        for (i, v) in vectors.iter().enumerate() {
            self.seqbufs[i].push(k, *v)?;
        }
        self.vectors.push(vectors);
        self.current_interval = k;
        let n = self.agents.len();
        let labels: Vec<bool> = (0..n)
            .map(|i| self.adversary.assignment().attack_active(AgentId(i as u32), now))
            .collect();

        match self.mode {
            Mode::Static => {}
            Mode::Bayesian => {
                let mut updates = Vec::new();
                for i in 0..n {
                    let id = AgentId(i as u32);
                    let rep = self.beta[i];
                    if !self.agents[i].alive || rep.s + rep.f == 0 || !self.beta_fresh[i] {
                        continue;
                    }
                    self.beta_fresh[i] = false;
                    updates.push((id, rep.trust(), None));
                }
                let e = cfg.energy.e_compute;
                self.apply_scores(updates, e, &labels)?;
            }
            Mode::Interrogator => {
                let due: Vec<AgentId> = (0..n)
                    .filter(|&i| {
                        self.agents[i].alive
                            && (self.enf[i].tier != Tier::Normal
                                || self.relayed_data[i] > 0
                                || (k + i as u64) % cfg.monitor.background_every == 0)
                    })
                    .map(|i| AgentId(i as u32))
                    .collect();
                let seqs: Vec<_> = due.iter().map(|id| self.seqbufs[id.index()].snapshot()).collect();
                let model = self.model.expect("checked at start");
                let mut raws = Vec::with_capacity(seqs.len());
                for chunk in seqs.chunks(cfg.monitor.score_chunk) {
                    let refs: Vec<_> = chunk.iter().collect();
                    raws.extend(model.score_many(&refs)?);
                }
                let updates = due
                    .iter()
                    .zip(raws)
                    .map(|(&id, raw)| {
                        // An agent under interrogation is also scored by a second
                        // host, which sees the same metadata.
                        let second = (self.enf[id.index()].tier == Tier::Interrogation).then_some(raw);
                        (id, raw, second)
                    })
                    .collect();
                let e = cfg.energy.e_compute_interrogator;
                self.apply_scores(updates, e, &labels)?;
            }
        }

        // Detection bookkeeping and per-interval metrics.
        let p = cfg.trust.persistence_p;
        for i in 0..n {
            let r = &self.records[i];
            if labels[i] && self.first_flag[i].is_none() && r.tau < cfg.trust.tau_min && r.persistence_below >= p {
                self.first_flag[i] = Some(now);
            }
        }
        let predicted: Vec<bool> = self.records.iter().map(|r| r.tau < cfg.trust.tau_min).collect();
        let conf = classify_interval(&predicted, &labels);
        let scored = k >= cfg.warmup_intervals;
        if scored {
            self.confusion.merge(&conf);
        }
        let residual = self.agents.iter().map(|a| a.residual_energy).sum::<f64>() / n as f64;
        self.rows.push(MetricsRow {
            run_id: format!("{}-{}", self.mode, self.seed),
            seed: self.seed,
            interval_index: k,
            mode: self.mode,
            accuracy: if scored { conf.accuracy() } else { None },
            precision: scored.then(|| conf.precision()),
            recall: scored.then(|| conf.recall()),
            mean_residual_energy_j: residual,
            pdr_cumulative: (self.originated > 0).then(|| self.delivered as f64 / self.originated as f64),
            flagged_count: predicted.iter().filter(|&&b| b).count() as u64,
            excluded_count: self.enf.iter().filter(|s| s.excluded_from_routing()).count() as u64,
            isolated_count: self.enf.iter().filter(|s| s.isolated()).count() as u64,
            false_positive_count: conf.fp,
        });
        self.labels.push(labels);
        self.relayed_data.iter_mut().for_each(|c| *c = 0);
        if k + 1 < cfg.intervals() {
            self.sched.schedule(
                SimTime::from_secs(cfg.monitoring_interval_s * (k + 2) as f64),
                Ev::IntervalClose { k: k + 1 },
            )?;
        }
        Ok(())
    }

    /// Feeds raw scores into the trust records and, when enforcement is on,
    /// the tier state machine.
    fn apply_scores(
        &mut self,
        updates: Vec<(AgentId, f64, Option<f64>)>,
        cost_j: f64,
        labels: &[bool],
    ) -> Result<()> {
        let now = self.now();
        let cfg = self.cfg;
        for (id, raw, second) in updates {
            let i = id.index();
            let (primary, secondary) = self.interrogators(id);
            let Some(primary) = primary else { continue };
            self.charge_host(primary, cost_j);
            self.inferences += 1;
            self.reporter[i] = primary;
            let secondary_raw = match (second, secondary) {
                (Some(s), Some(host)) => {
                    self.charge_host(host, cost_j);
                    self.inferences += 1;
                    Some(s)
                }
                _ => None,
            };
            let mut rec = smooth_update(&self.records[i], raw, &cfg.trust)?;
            if cfg.monitor.enforcement {
                let input = TransitionInput {
                    now,
                    secondary_raw,
                    cross_validation: cfg.monitor.cross_validation,
                };
                let before = self.enf[i].clone();
                let (after, actions) = enforce_transition(&before, &rec, &cfg.trust, &input);
                for a in actions {
                    match a {
                        EnforcementAction::Deferred => self.deferred += 1,
                        EnforcementAction::Queue(ev) => {
                            self.queued_events.push((id, ev, self.current_interval))
                        }
                    }
                }
                if after.tier != before.tier {
                    self.transitions.push(Transition {
                        at: now,
                        agent: id,
                        from: before.tier,
                        to: after.tier,
                        ledger_height: None,
                    });
                }
                if after.excluded_from_routing() {
                    self.excluded.insert(id);
                } else {
                    self.excluded.remove(&id);
                }
                if after.tier == Tier::LocallyConstrained && before.tier != Tier::LocallyConstrained {
                    self.escalations.push(Escalation {
                        agent: id,
                        triggered_at: now,
                        excluded_at: now,
                        attack_active: labels[i],
                    });
                }
                rec.tier = after.tier;
                self.enf[i] = after;
            }
            self.records[i] = rec;
        }
        Ok(())
    }

    // ---- consensus -----------------------------------------------------

    fn on_consensus_tick(&mut self) -> Result<()> {
        let now = self.now();
        let cfg = self.cfg;
        self.sched.schedule_in(cfg.consensus.tick_s, Ev::ConsensusTick)?;
        let k = self.current_interval;
        let mut commits = Vec::new();
        let mut covered = BTreeSet::new();
        for &(agent, ev, interval) in &self.queued_events {
            let i = agent.index();
            commits.push(TrustCommit {
                agent,
                interval_index: interval,
                tau_delta: self.records[i].tau - self.committed_tau[i],
                event: Some(ev),
                reporter: self.reporter[i],
            });
            covered.insert(agent);
        }
        for i in 0..self.agents.len() {
            let id = AgentId(i as u32);
            let delta = self.records[i].tau - self.committed_tau[i];
            if !covered.contains(&id) && delta.abs() >= cfg.monitor.commit_epsilon {
                commits.push(TrustCommit {
                    agent: id,
                    interval_index: k,
                    tau_delta: delta,
                    event: None,
                    reporter: self.reporter[i],
                });
            }
        }
        if commits.is_empty() {
            return Ok(());
        }
        self.uplink_summaries(&commits);
        let consortium = self.consortium.as_mut().expect("consensus only runs with a consortium");
        let outcome = consortium.pbft_round(now, &commits)?;
        self.consensus_rounds += 1;
        if outcome.view > 0 {
            self.view_changes += 1;
        }
        if let Some(block) = outcome.block {
            for c in &block.commits {
                self.committed_tau[c.agent.index()] += c.tau_delta;
            }
            self.queued_events.clear();
            self.sched.schedule(
                now.after(outcome.elapsed_s),
                Ev::ApplyBlock {
                    height: block.height,
                },
            )?;
        }
        Ok(())
    }

    /// Interrogators off the surface send one trust summary each toward a
    /// gateway. Control traffic: observed, but never counted as mission data.
    fn uplink_summaries(&mut self, commits: &[TrustCommit]) {
        let reporters: BTreeSet<AgentId> = commits.iter().map(|c| c.reporter).collect();
        for host in reporters {
            if self.agents[host.index()].kind == AgentKind::SurfaceGateway
                || !self.agents[host.index()].alive
            {
                continue;
            }
            let Some(gw) = self.nearest_gateway(host) else { continue };
            let msg = self.new_msg(false);
            let carry = Carry {
                msg,
                origin: host,
                final_dst: gw,
                kind: PacketKind::TrustSummary,
                size_bits: self.cfg.traffic.summary_bits,
                hops: 0,
                path: Vec::new(),
                replayed: false,
            };
            self.forward(host, carry, false);
        }
    }

    fn on_apply_block(&mut self, height: u64) {
        let now = self.now();
        let Some(block) = self
            .consortium
            .as_ref()
            .and_then(|c| c.chain().get(height as usize).cloned())
        else {
            return;
        };
        let mut topology_changed = false;
        for c in &block.commits {
            let Some(ev) = c.event else { continue };
            let i = c.agent.index();
            let before = self.enf[i].clone();
            let after = apply_committed(&before, ev, now);
            if after.tier != before.tier {
                self.transitions.push(Transition {
                    at: now,
                    agent: c.agent,
                    from: before.tier,
                    to: after.tier,
                    ledger_height: Some(height),
                });
                if after.isolated() {
                    self.hidden.insert(c.agent);
                } else {
                    self.hidden.remove(&c.agent);
                }
                if after.excluded_from_routing() {
                    self.excluded.insert(c.agent);
                } else {
                    self.excluded.remove(&c.agent);
                }
                topology_changed = true;
            }
            self.records[i].tier = after.tier;
            self.enf[i] = after;
        }
        if topology_changed {
            refresh_neighbors(&mut self.agents, self.cfg.channel.comm_range_m, &self.hidden, now);
        }
    }

    // ---- results -------------------------------------------------------

    fn finish(mut self, norms: FeatureNorms) -> RunOutput {
        let cfg = self.cfg;
        let assignment = self.adversary.assignment().clone();
        let outcomes: Vec<DetectionOutcome> = assignment
            .profiles
            .iter()
            .map(|(&agent, p)| {
                let first = self.first_flag[agent.index()];
                DetectionOutcome {
                    agent,
                    compromised: true,
                    first_flag_time: first,
                    attack_activation: Some(p.activation),
                    detection_latency: first.map(|f| f.since(p.activation)),
                }
            })
            .collect();
        let latencies: Vec<f64> = outcomes.iter().filter_map(|o| o.detection_latency).collect();
        let ledger = self
            .consortium
            .as_ref()
            .map(|c| c.chain().to_vec())
            .unwrap_or_default();
        let n = self.agents.len() as f64;
        let tier2_benign = self.escalations.iter().filter(|e| !e.attack_active).count() as u64;
        let stats = RunStats {
            run_id: format!("{}-{}", self.mode, self.seed),
            seed: self.seed,
            mode: self.mode,
            accuracy: self.confusion.accuracy(),
            precision: self.confusion.precision(),
            recall: self.confusion.recall(),
            confusion: self.confusion,
            pdr: (self.originated > 0).then(|| self.delivered as f64 / self.originated as f64),
            originated: self.originated,
            delivered: self.delivered,
            mean_residual_energy_j: self.agents.iter().map(|a| a.residual_energy).sum::<f64>() / n,
            compromised: assignment.assigned.len() as u64,
            detected: latencies.len() as u64,
            median_detection_latency_s: median(&latencies),
            tier2_escalations: self.escalations.len() as u64,
            tier2_false_positives: tier2_benign,
            deferred_escalations: self.deferred,
            max_enforcement_latency_s: self
                .escalations
                .iter()
                .map(|e| e.excluded_at.since(e.triggered_at))
                .reduce(f64::max),
            exclusion_violations: self.exclusion_violations,
            isolations: self.transitions.iter().filter(|t| t.to == Tier::Isolated).count() as u64,
            ledger_blocks: ledger.len() as u64,
            consensus_rounds: self.consensus_rounds,
            view_changes: self.view_changes,
            inferences: self.inferences,
            packets: self.packets.len() as u64,
            intervals: cfg.intervals(),
        };
        let trace = self.sched.trace().to_vec();
        self.sched = Scheduler::new();
        RunOutput {
            seed: self.seed,
            mode: self.mode,
            norms,
            hosts: self.hosts,
            assignment,
            rows: self.rows,
            stats,
            outcomes,
            ledger,
            packets: self.packets,
            vectors: self.vectors,
            labels: self.labels,
            transitions: self.transitions,
            escalations: self.escalations,
            agents: self.agents,
            event_counts: self.event_counts,
            trace,
        }
    }
}
