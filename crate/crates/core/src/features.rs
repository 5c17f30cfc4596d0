//! Passive metadata features.
//!
//! Every agent's on-air transmissions and successful receptions are bucketed
//! into monitoring intervals `[k*T, (k+1)*T)` by timestamp. When interval `k`
//! closes, one [`FeatureVector`] per agent is produced:
//!
//! | idx | name                      | definition                                              |
//! |-----|---------------------------|---------------------------------------------------------|
//! | 0   | `pkt_count`               | transmissions / `norm_volume`                           |
//! | 1   | `gap_mean`                | mean gap between consecutive send times (s)             |
//! | 2   | `gap_var`                 | population variance of those gaps (s²)                  |
//! | 3   | `retx_rate`               | retransmissions / max(1, transmissions)                 |
//! | 4   | `routing_stability`       | 1 − next-hop changes / max(1, forwarding decisions)     |
//! | 5   | `neighbor_churn`          | \|peers(k) Δ peers(prev)\| / `norm_churn`               |
//! | 6   | `protocol_deviation_rate` | min(1, deviant events / max(1, transmissions))          |
//!
//! A forwarding decision is any transmission that is not a retransmission; it
//! counts as a change when the previous decision by the same agent toward the
//! same final destination picked another next hop (history spans intervals).
//!
//! Peers are the next hops the agent sent to plus the senders it received
//! from. An interval with no traffic at all is not evidence of churn: churn
//! is 0 and the previous peer set carries over.
//!
//! Deviant events are transmissions reusing a packet id already seen on the
//! air, retransmissions that refer to an id the agent never sent, and relay
//! receptions (agent is next hop but not final destination) that the agent
//! did not forward before the interval closed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimTime;
use crate::world::{AgentId, MsgId, PacketId, PacketKind, PacketRecord};

pub const FEATURE_DIM: usize = 7;
pub const SEQ_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    /// What a silent agent looks like.
    pub const QUIET: FeatureVector = FeatureVector([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    pub const NAMES: [&'static str; FEATURE_DIM] = [
        "pkt_count",
        "gap_mean",
        "gap_var",
        "retx_rate",
        "routing_stability",
        "neighbor_churn",
        "protocol_deviation_rate",
    ];

    pub fn pkt_count(&self) -> f64 {
        self.0[0]
    }
    pub fn gap_mean(&self) -> f64 {
        self.0[1]
    }
    pub fn gap_var(&self) -> f64 {
        self.0[2]
    }
    pub fn retx_rate(&self) -> f64 {
        self.0[3]
    }
    pub fn routing_stability(&self) -> f64 {
        self.0[4]
    }
    pub fn neighbor_churn(&self) -> f64 {
        self.0[5]
    }
    pub fn protocol_deviation_rate(&self) -> f64 {
        self.0[6]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Per-scenario normalization constants, echoed into the run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorms {
    pub norm_volume: f64,
    pub norm_churn: f64,
    pub interval_s: f64,
}

impl FeatureNorms {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("norm_volume", self.norm_volume),
            ("norm_churn", self.norm_churn),
            ("interval_s", self.interval_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn interval_of(&self, t: SimTime) -> u64 {
        (t.as_secs() / self.interval_s).floor() as u64
    }

    pub fn interval_end(&self, k: u64) -> f64 {
        (k + 1) as f64 * self.interval_s
    }
}

/// What an interrogator can see of one transmission: header metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTx {
    pub packet_id: PacketId,
    pub msg_id: MsgId,
    pub src: AgentId,
    pub dst: AgentId,
    pub final_dst: AgentId,
    pub kind: PacketKind,
    pub sent_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub retransmission_of: Option<PacketId>,
}

impl ObservedTx {
    /// `None` for node-level bookkeeping records that never hit the air.
    pub fn from_record(r: &PacketRecord) -> Option<ObservedTx> {
        r.on_air().then(|| ObservedTx {
            packet_id: r.packet_id,
            msg_id: r.msg_id,
            src: r.src,
            dst: r.dst,
            final_dst: r.final_dst,
            kind: r.kind,
            sent_at: r.sent_at,
            delivered_at: r.delivered_at,
            retransmission_of: r.retransmission_of,
        })
    }
}

#[derive(Debug, Default)]
struct Bucket {
    sends: Vec<(f64, MsgId)>,
    retx: u32,
    decisions: u32,
    changes: u32,
    deviant: u32,
    peers: BTreeSet<AgentId>,
    relay_receipts: Vec<(f64, MsgId)>,
}

#[derive(Debug, Default)]
struct AgentObs {
    buckets: BTreeMap<u64, Bucket>,
    prev_peers: BTreeSet<AgentId>,
    last_hop: HashMap<AgentId, AgentId>,
    sent_ids: HashSet<PacketId>,
}

/// Streaming window extractor fed by the simulation as packets go on the
/// air and arrive.
#[derive(Debug)]
pub struct FeatureExtractor {
    norms: FeatureNorms,
    agents: Vec<AgentObs>,
    seen_ids: HashSet<PacketId>,
    next_close: u64,
    /// Surface gateways: packets they receive have arrived, not been relayed.
    sink: Vec<bool>,
}

impl FeatureExtractor {
    pub fn new(n_agents: usize, norms: FeatureNorms) -> Result<Self> {
        norms.validate()?;
        Ok(FeatureExtractor {
            norms,
            agents: (0..n_agents).map(|_| AgentObs::default()).collect(),
            seen_ids: HashSet::new(),
            next_close: 0,
            sink: vec![false; n_agents],
        })
    }

    /// Marks agents whose receptions never count as relay custody.
    pub fn with_sinks(mut self, sinks: impl IntoIterator<Item = AgentId>) -> Self {
        for a in sinks {
            self.sink[a.index()] = true;
        }
        self
    }

    pub fn norms(&self) -> &FeatureNorms {
        &self.norms
    }

    /// Call when a transmission goes on the air.
    pub fn on_send(&mut self, tx: &ObservedTx) {
        let k = self.norms.interval_of(tx.sent_at);
        let stale = !self.seen_ids.insert(tx.packet_id);
        let obs = &mut self.agents[tx.src.index()];
        let malformed = tx
            .retransmission_of
            .is_some_and(|p| !obs.sent_ids.contains(&p));
        obs.sent_ids.insert(tx.packet_id);
        let mut change = false;
        if tx.retransmission_of.is_none() {
            if let Some(prev) = obs.last_hop.insert(tx.final_dst, tx.dst) {
                change = prev != tx.dst;
            }
        }
        let b = obs.buckets.entry(k).or_default();
        b.sends.push((tx.sent_at.as_secs(), tx.msg_id));
        if tx.retransmission_of.is_some() {
            b.retx += 1;
        } else {
            b.decisions += 1;
        }
        b.changes += change as u32;
        b.deviant += (stale || malformed) as u32;
        b.peers.insert(tx.dst);
    }

    /// Call when a transmission is received by its next hop.
    pub fn on_delivery(&mut self, tx: &ObservedTx, at: SimTime) {
        let k = self.norms.interval_of(at);
        let b = self.agents[tx.dst.index()].buckets.entry(k).or_default();
        b.peers.insert(tx.src);
        if tx.final_dst != tx.dst && !self.sink[tx.dst.index()] {
            b.relay_receipts.push((at.as_secs(), tx.msg_id));
        }
    }

    /// Index of the next interval to close.
    pub fn next_interval(&self) -> u64 {
        self.next_close
    }

    /// Closes interval `k`, which must be the next unclosed one. Returns one
    /// vector per agent in id order.
    pub fn close_interval(&mut self, k: u64) -> Result<Vec<FeatureVector>> {
        if k != self.next_close {
            return Err(Error::InvalidArgument(format!(
                "interval {k} closed out of order (expected {})",
                self.next_close
            )));
        }
        self.next_close += 1;
        let norms = self.norms;
        Ok(self
            .agents
            .iter_mut()
            .map(|obs| {
                let bucket = obs.buckets.remove(&k).unwrap_or_default();
                let churn = if bucket.sends.is_empty() && bucket.peers.is_empty() {
                    0
                } else {
                    let c = bucket.peers.symmetric_difference(&obs.prev_peers).count();
                    obs.prev_peers = bucket.peers.clone();
                    c
                };
                window_vector(&bucket, churn, norms.interval_end(k), &norms)
            })
            .collect())
    }
}

fn window_vector(b: &Bucket, churn: usize, t_end: f64, norms: &FeatureNorms) -> FeatureVector {
    let n = b.sends.len();
    let (gap_mean, gap_var) = if n >= 2 {
        let gaps: Vec<f64> = b.sends.windows(2).map(|w| w[1].0 - w[0].0).collect();
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / gaps.len() as f64;
        (m, v)
    } else {
        (0.0, 0.0)
    };
    let unforwarded = b
        .relay_receipts
        .iter()
        .filter(|(at, msg)| {
            !b.sends
                .iter()
                .any(|(t, m)| m == msg && *t >= *at && *t < t_end)
        })
        .count();
    let denom = n.max(1) as f64;
    FeatureVector([
        n as f64 / norms.norm_volume,
        gap_mean,
        gap_var,
        b.retx as f64 / denom,
        1.0 - b.changes as f64 / b.decisions.max(1) as f64,
        churn as f64 / norms.norm_churn,
        ((b.deviant as usize + unforwarded) as f64 / denom).min(1.0),
    ])
}

/// Fixed-length input to the scorer, oldest first. The first
/// `SEQ_LEN - valid_len` entries are zero padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub agent: AgentId,
    pub vectors: Vec<FeatureVector>,
    pub valid_len: usize,
}

impl FeatureSequence {
    pub fn new(agent: AgentId, vectors: Vec<FeatureVector>, valid_len: usize) -> Result<Self> {
        if vectors.len() != SEQ_LEN || valid_len > SEQ_LEN {
            return Err(Error::InvalidArgument(format!(
                "sequence must have {SEQ_LEN} entries and valid_len <= {SEQ_LEN}"
            )));
        }
        Ok(FeatureSequence {
            agent,
            vectors,
            valid_len,
        })
    }

    /// Builds a left-padded sequence from up to `SEQ_LEN` trailing vectors.
    pub fn from_history(agent: AgentId, history: &[FeatureVector]) -> Self {
        let tail = &history[history.len().saturating_sub(SEQ_LEN)..];
        let mut vectors = vec![FeatureVector([0.0; FEATURE_DIM]); SEQ_LEN - tail.len()];
        vectors.extend_from_slice(tail);
        FeatureSequence {
            agent,
            vectors,
            valid_len: tail.len(),
        }
    }

    pub fn valid(&self) -> &[FeatureVector] {
        &self.vectors[SEQ_LEN - self.valid_len..]
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..SEQ_LEN).map(|i| i >= SEQ_LEN - self.valid_len).collect()
    }
}

/// Per-agent ring of the last `SEQ_LEN` interval vectors.
#[derive(Debug, Clone)]
pub struct SequenceBuffer {
    agent: AgentId,
    ring: VecDeque<FeatureVector>,
    last_interval: Option<u64>,
}

impl SequenceBuffer {
    pub fn new(agent: AgentId) -> Self {
        SequenceBuffer {
            agent,
            ring: VecDeque::with_capacity(SEQ_LEN),
            last_interval: None,
        }
    }

    pub fn push(&mut self, interval: u64, v: FeatureVector) -> Result<()> {
        if self.last_interval.is_some_and(|last| interval <= last) {
            return Err(Error::DuplicateInterval {
                agent: self.agent.0,
                interval,
            });
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("feature vector"));
        }
        if self.ring.len() == SEQ_LEN {
            self.ring.pop_front();
        }
        self.ring.push_back(v);
        self.last_interval = Some(interval);
        Ok(())
    }

    pub fn valid_len(&self) -> usize {
        self.ring.len()
    }

    pub fn snapshot(&self) -> FeatureSequence {
        let mut vectors = vec![FeatureVector([0.0; FEATURE_DIM]); SEQ_LEN - self.ring.len()];
        vectors.extend(self.ring.iter().copied());
        FeatureSequence {
            agent: self.agent,
            vectors,
            valid_len: self.ring.len(),
        }
    }

    pub fn push_and_snapshot(&mut self, interval: u64, v: FeatureVector) -> Result<FeatureSequence> {
        self.push(interval, v)?;
        Ok(self.snapshot())
    }
}
