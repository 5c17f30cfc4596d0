use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentId, AgentKind, AgentState, EnergyParams, MobilityParams, Vec3};
use crate::error::{Error, Result};

/// Node counts and placement rules.
///
/// Ids are assigned gateways first, then AUVs, then static sensors.
/// Gateways float at the surface spaced along the `y = 0` edge (the shore
/// side); sensors sit at random fixed depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentParams {
    pub area_m: f64,
    pub sensor_depth_m: [f64; 2],
}

impl Default for DeploymentParams {
    fn default() -> Self {
        DeploymentParams {
            area_m: 1000.0,
            sensor_depth_m: [50.0, 200.0],
        }
    }
}

impl DeploymentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_m > 0.0) {
            return Err(Error::Config("deployment.area_m must be > 0".into()));
        }
        let [lo, hi] = self.sensor_depth_m;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config("deployment.sensor_depth_m must be ordered".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3, max_depth: f64) -> bool {
        let eps = 1e-9;
        (-eps..=self.area_m + eps).contains(&p.x)
            && (-eps..=self.area_m + eps).contains(&p.y)
            && (-eps..=max_depth + eps).contains(&p.z)
    }
}

pub fn gateway_position(index: usize, n_gateways: usize, area: f64) -> Vec3 {
    let x = (index as f64 + 0.5) * area / n_gateways as f64;
    Vec3::new(x, 0.0, 0.0)
}

/// Places all agents. Draws come from the supplied placement stream; AUV
/// waypoints and speeds are drawn by the mobility model.
pub fn deploy<R: Rng + ?Sized>(
    n_agents: usize,
    n_gateways: usize,
    n_auvs: usize,
    params: &DeploymentParams,
    mobility: &MobilityParams,
    energy: &EnergyParams,
    rng: &mut R,
) -> Result<Vec<AgentState>> {
    if n_gateways == 0 || n_gateways + n_auvs > n_agents {
        return Err(Error::Config(format!(
            "need 1..=n_agents gateways and gateways+auvs <= n_agents \
             (n_agents={n_agents}, gateways={n_gateways}, auvs={n_auvs})"
        )));
    }
    let area = params.area_m;
    let mut agents = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let id = AgentId(i as u32);
        let agent = if i < n_gateways {
            AgentState::new(
                id,
                AgentKind::SurfaceGateway,
                gateway_position(i, n_gateways, area),
                energy.initial_gateway,
            )
        } else if i < n_gateways + n_auvs {
            let pos = mobility.random_auv_point(area, rng);
            let mut a = AgentState::new(id, AgentKind::MobileAuv, pos, energy.initial_auv);
            mobility.assign_leg(&mut a, area, rng);
            a
        } else {
            let [lo, hi] = params.sensor_depth_m;
            let pos = Vec3::new(
                rng.random_range(0.0..=area),
                rng.random_range(0.0..=area),
                rng.random_range(lo..=hi),
            );
            AgentState::new(id, AgentKind::StaticSensor, pos, energy.initial_sensor)
        };
        agents.push(agent);
    }
    Ok(agents)
}
