//! Scenario domain model: lanes, agent tracks, traffic lights, route and goal.
//!
//! A [`Scenario`] is immutable once validated. Tracks are indexed by integer
//! frame on a shared clock of `frame_interval` seconds; the scene layer never
//! interpolates between frames.

mod io;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;

pub use io::{load_scenario, save_scenario, scenario_from_json, scenario_to_json};
pub use synthetic::{gen_synthetic, ScenarioKind};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("invalid field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SceneError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SceneError::Validation { field: field.into(), reason: reason.into() }
    }
}

/// Position and heading in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrafficLightState {
    Red,
    Yellow,
    Green,
    #[default]
    None,
}

impl TrafficLightState {
    pub const ALL: [TrafficLightState; 4] =
        [TrafficLightState::Red, TrafficLightState::Yellow, TrafficLightState::Green, TrafficLightState::None];

    /// One-hot position in `[red, yellow, green, none]`.
    pub fn index(self) -> usize {
        match self {
            TrafficLightState::Red => 0,
            TrafficLightState::Yellow => 1,
            TrafficLightState::Green => 2,
            TrafficLightState::None => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl AgentState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D { x: self.x, y: self.y, theta: self.theta }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: String,
    pub length: f64,
    pub width: f64,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn first_frame(&self) -> i64 {
        self.states[0].frame
    }

    pub fn last_frame(&self) -> i64 {
        self.states[self.states.len() - 1].frame
    }
}

/// Exact state at `frame`, or `None` if the agent was not observed then.
pub fn state_at(track: &AgentTrack, frame: i64) -> Option<&AgentState> {
    track
        .states
        .binary_search_by_key(&frame, |s| s.frame)
        .ok()
        .map(|i| &track.states[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneSpec {
    pub id: String,
    pub centerline: Vec<Point2>,
    pub width: f64,
    pub successor_ids: Vec<String>,
    pub predecessor_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub lanes: Vec<LaneSpec>,
    pub agents: Vec<AgentTrack>,
    pub ego_id: String,
    pub route_lane_ids: BTreeSet<String>,
    pub goal: Pose2D,
    /// lane id → frame → light; lanes or frames absent here read as `none`.
    pub traffic_lights: BTreeMap<String, BTreeMap<i64, TrafficLightState>>,
    pub frame_interval: f64,
}

impl Scenario {
    /// Checks every structural invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.frame_interval > 0.0 && self.frame_interval.is_finite()) {
            return Err(SceneError::invalid("frame_interval", format!("must be > 0, got {}", self.frame_interval)));
        }
        let mut lane_ids = HashSet::new();
        for (i, lane) in self.lanes.iter().enumerate() {
            let f = |name: &str| format!("lanes[{i}].{name}");
            if !lane_ids.insert(lane.id.as_str()) {
                return Err(SceneError::invalid(f("id"), format!("duplicate lane id {:?}", lane.id)));
            }
            if lane.centerline.len() < 2 {
                return Err(SceneError::invalid(f("centerline"), "needs at least 2 points"));
            }
            if lane.centerline.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(SceneError::invalid(f("centerline"), "non-finite coordinate"));
            }
            if let Some(k) = lane.centerline.windows(2).position(|w| w[0] == w[1]) {
                return Err(SceneError::invalid(f("centerline"), format!("points {k} and {} coincide", k + 1)));
            }
            if !(lane.width > 0.0 && lane.width.is_finite()) {
                return Err(SceneError::invalid(f("width"), format!("must be > 0, got {}", lane.width)));
            }
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            for (name, ids) in [("successors", &lane.successor_ids), ("predecessors", &lane.predecessor_ids)] {
                if let Some(bad) = ids.iter().find(|id| !lane_ids.contains(id.as_str())) {
                    return Err(SceneError::invalid(format!("lanes[{i}].{name}"), format!("unknown lane {bad:?}")));
                }
            }
        }
        if let Some(bad) = self.route_lane_ids.iter().find(|id| !lane_ids.contains(id.as_str())) {
            return Err(SceneError::invalid("route_lane_ids", format!("unknown lane {bad:?}")));
        }
        if let Some(bad) = self.traffic_lights.keys().find(|id| !lane_ids.contains(id.as_str())) {
            return Err(SceneError::invalid("traffic_lights", format!("unknown lane {bad:?}")));
        }

        let mut agent_ids = HashSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let f = |name: &str| format!("agents[{i}].{name}");
            if !agent_ids.insert(agent.id.as_str()) {
                return Err(SceneError::invalid(f("id"), format!("duplicate agent id {:?}", agent.id)));
            }
            if !(agent.length > 0.0 && agent.length.is_finite()) {
                return Err(SceneError::invalid(f("length"), format!("must be > 0, got {}", agent.length)));
            }
            if !(agent.width > 0.0 && agent.width.is_finite()) {
                return Err(SceneError::invalid(f("width"), format!("must be > 0, got {}", agent.width)));
            }
            if agent.states.is_empty() {
                return Err(SceneError::invalid(f("states"), "must be non-empty"));
            }
            for (k, s) in agent.states.iter().enumerate() {
                let vals = [s.x, s.y, s.theta, s.vx, s.vy, s.yaw_rate];
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(SceneError::invalid(format!("agents[{i}].states[{k}]"), "non-finite value"));
                }
                if !(s.theta > -PI && s.theta <= PI) {
                    return Err(SceneError::invalid(
                        format!("agents[{i}].states[{k}].theta"),
                        format!("{} not in (-pi, pi]", s.theta),
                    ));
                }
            }
            if let Some(k) = agent.states.windows(2).position(|w| w[1].frame <= w[0].frame) {
                return Err(SceneError::invalid(
                    format!("agents[{i}].states[{}]", k + 1),
                    "frames must be strictly increasing",
                ));
            }
        }
        if !agent_ids.contains(self.ego_id.as_str()) {
            return Err(SceneError::invalid("ego_id", format!("{:?} is not among agents", self.ego_id)));
        }
        let g = [self.goal.x, self.goal.y, self.goal.theta];
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::invalid("goal", "non-finite value"));
        }
        Ok(())
    }

    pub fn agent(&self, id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn ego(&self) -> &AgentTrack {
        self.agent(&self.ego_id).expect("validated scenario has its ego agent")
    }

    pub fn ego_index(&self) -> usize {
        self.agents.iter().position(|a| a.id == self.ego_id).expect("validated scenario has its ego agent")
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.lanes.iter().position(|l| l.id == id)
    }

    pub fn light_at(&self, lane_id: &str, frame: i64) -> TrafficLightState {
        self.traffic_lights
            .get(lane_id)
            .and_then(|m| m.get(&frame))
            .copied()
            .unwrap_or_default()
    }

    /// Smallest and largest frame observed across all agents.
    pub fn frame_span(&self) -> (i64, i64) {
        let lo = self.agents.iter().map(AgentTrack::first_frame).min().unwrap_or(0);
        let hi = self.agents.iter().map(AgentTrack::last_frame).max().unwrap_or(0);
        (lo, hi)
    }

    /// Copy with every point translated by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Scenario {
        let mut s = self.clone();
        for lane in &mut s.lanes {
            for p in &mut lane.centerline {
                p.x += dx;
                p.y += dy;
            }
        }
        for a in &mut s.agents {
            for st in &mut a.states {
                st.x += dx;
                st.y += dy;
            }
        }
        s.goal.x += dx;
        s.goal.y += dy;
        s
    }
}
