//! Physical and operational model of the underwater network: agents,
//! acoustic channel, energy accounting, mobility and greedy routing.

pub mod channel;
pub mod deploy;
pub mod energy;
pub mod mobility;
pub mod packet;
pub mod routing;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

pub use channel::ChannelParams;
pub use deploy::DeploymentParams;
pub use energy::{EnergyDraw, EnergyParams};
pub use mobility::MobilityParams;
pub use packet::{DropReason, MsgId, PacketId, PacketKind, PacketRecord};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    StaticSensor,
    MobileAuv,
    SurfaceGateway,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.distance(&Vec3::ZERO)
    }
}

/// One underwater node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub kind: AgentKind,
    pub position: Vec3,
    pub velocity: Vec3,
    /// AUV target; `None` for static nodes.
    pub waypoint: Option<Vec3>,
    pub speed: f64,
    pub initial_energy: f64,
    pub residual_energy: f64,
    pub duty_cycle: f64,
    pub neighbor_table: BTreeMap<AgentId, SimTime>,
    /// Ground truth; never read by trust inference.
    pub compromised: bool,
    pub alive: bool,
    /// Sum of all energy actually deducted since deployment.
    pub consumed_energy: f64,
}

impl AgentState {
    pub fn new(id: AgentId, kind: AgentKind, position: Vec3, initial_energy: f64) -> Self {
        AgentState {
            id,
            kind,
            position,
            velocity: Vec3::ZERO,
            waypoint: None,
            speed: 0.0,
            initial_energy,
            residual_energy: initial_energy,
            duty_cycle: 1.0,
            neighbor_table: BTreeMap::new(),
            compromised: false,
            alive: true,
            consumed_energy: 0.0,
        }
    }

    pub fn is_gateway(&self) -> bool {
        self.kind == AgentKind::SurfaceGateway
    }

    pub fn distance_to(&self, other: &AgentState) -> f64 {
        self.position.distance(&other.position)
    }
}
