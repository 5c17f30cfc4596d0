use serde::{Deserialize, Serialize};

use super::AgentId;
use crate::sim::SimTime;

/// Identifier carried by one transmission. Unique per transmission attempt,
/// except that a replay attack re-sends a stale identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PacketId(pub u64);

/// End-to-end message identifier, shared by all hops of one data message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MsgId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    SensorData,
    RoutingControl,
    TrustSummary,
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    /// Lost on the acoustic link.
    ChannelLoss,
    /// Next hop was out of range at transmission time.
    OutOfRange,
    /// Silently discarded by a compromised relay.
    MaliciousDrop,
    /// Sat in a buffer without a usable next hop past the expiry.
    Expired,
    /// Sender or receiver was logically isolated.
    Isolated,
    /// Hop limit exceeded.
    TtlExceeded,
    /// Sender or receiver ran out of energy.
    DeadNode,
}

impl DropReason {
    /// True when the record describes something that went on the air. Node
    /// level drops are bookkeeping entries a passive observer cannot see.
    pub fn was_transmitted(self) -> bool {
        matches!(self, DropReason::ChannelLoss)
    }
}

/// Metadata of one transmission event (or one node-level drop). There is no
/// payload field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet_id: PacketId,
    pub msg_id: MsgId,
    pub src: AgentId,
    /// Next hop.
    pub dst: AgentId,
    pub origin: AgentId,
    pub final_dst: AgentId,
    pub size_bits: u32,
    pub kind: PacketKind,
    pub sent_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub retransmission_of: Option<PacketId>,
    pub dropped_reason: Option<DropReason>,
}

impl PacketRecord {
    pub fn is_resolved(&self) -> bool {
        self.delivered_at.is_some() != self.dropped_reason.is_some()
    }

    /// Whether this record corresponds to an actual transmission.
    pub fn on_air(&self) -> bool {
        match self.dropped_reason {
            None => true,
            Some(r) => r.was_transmitted(),
        }
    }
}
