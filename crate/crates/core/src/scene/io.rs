//! JSON scenario file format.
//!
//! ```json
//! {
//!   "id": "straight-0",
//!   "frame_interval": 0.5,
//!   "lanes": [{"id": "A", "centerline": [[0, 0], [100, 0]], "width": 3.5,
//!              "successors": ["B"], "predecessors": []}],
//!   "agents": [{"id": "ego", "length": 4.6, "width": 1.9,
//!               "states": [[0, 0.0, 0.0, 0.0, 8.0, 0.0, 0.0]]}],
//!   "ego_id": "ego",
//!   "route_lane_ids": ["A"],
//!   "goal": {"x": 100.0, "y": 0.0, "theta": 0.0},
//!   "traffic_lights": {"A": [[0, "green"], [1, "yellow"]]}
//! }
//! ```
//!
//! Agent states are `[frame, x, y, theta, vx, vy, yaw_rate]`; frame must be
//! integral. Lights are `[frame, state]` pairs with state one of
//! `red|yellow|green|none`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentState, AgentTrack, LaneSpec, Pose2D, Scenario, SceneError, TrafficLightState};
use crate::geometry::Point2;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    id: String,
    frame_interval: f64,
    lanes: Vec<LaneFile>,
    agents: Vec<AgentFile>,
    ego_id: String,
    route_lane_ids: Vec<String>,
    goal: Pose2D,
    #[serde(default)]
    traffic_lights: BTreeMap<String, Vec<(i64, TrafficLightState)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneFile {
    id: String,
    centerline: Vec<[f64; 2]>,
    width: f64,
    #[serde(default)]
    successors: Vec<String>,
    #[serde(default)]
    predecessors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: String,
    length: f64,
    width: f64,
    states: Vec<[f64; 7]>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            id: s.id.clone(),
            frame_interval: s.frame_interval,
            lanes: s
                .lanes
                .iter()
                .map(|l| LaneFile {
                    id: l.id.clone(),
                    centerline: l.centerline.iter().map(|p| [p.x, p.y]).collect(),
                    width: l.width,
                    successors: l.successor_ids.clone(),
                    predecessors: l.predecessor_ids.clone(),
                })
                .collect(),
            agents: s
                .agents
                .iter()
                .map(|a| AgentFile {
                    id: a.id.clone(),
                    length: a.length,
                    width: a.width,
                    states: a
                        .states
                        .iter()
                        .map(|st| [st.frame as f64, st.x, st.y, st.theta, st.vx, st.vy, st.yaw_rate])
                        .collect(),
                })
                .collect(),
            ego_id: s.ego_id.clone(),
            route_lane_ids: s.route_lane_ids.iter().cloned().collect(),
            goal: s.goal,
            traffic_lights: s
                .traffic_lights
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|(f, st)| (*f, *st)).collect()))
                .collect(),
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = SceneError;

    fn try_from(f: ScenarioFile) -> Result<Self, SceneError> {
        let mut agents = Vec::with_capacity(f.agents.len());
        for (i, a) in f.agents.into_iter().enumerate() {
            let mut states = Vec::with_capacity(a.states.len());
            for (k, row) in a.states.iter().enumerate() {
                let frame = row[0];
                if frame.fract() != 0.0 || frame.abs() > 9.0e15 {
                    return Err(SceneError::invalid(format!("agents[{i}].states[{k}][0]"), "frame must be an integer"));
                }
                states.push(AgentState {
                    frame: frame as i64,
                    x: row[1],
                    y: row[2],
                    theta: row[3],
                    vx: row[4],
                    vy: row[5],
                    yaw_rate: row[6],
                });
            }
            agents.push(AgentTrack { id: a.id, length: a.length, width: a.width, states });
        }
        let mut traffic_lights = BTreeMap::new();
        for (lane, entries) in f.traffic_lights {
            let mut per_frame = BTreeMap::new();
            for (frame, st) in entries {
                if per_frame.insert(frame, st).is_some() {
                    return Err(SceneError::invalid(
                        format!("traffic_lights.{lane}"),
                        format!("frame {frame} listed twice"),
                    ));
                }
            }
            traffic_lights.insert(lane, per_frame);
        }
        let route_len = f.route_lane_ids.len();
        let route_lane_ids: std::collections::BTreeSet<String> = f.route_lane_ids.into_iter().collect();
        if route_lane_ids.len() != route_len {
            return Err(SceneError::invalid("route_lane_ids", "duplicate lane id"));
        }
        let scenario = Scenario {
            id: f.id,
            lanes: f
                .lanes
                .into_iter()
                .map(|l| LaneSpec {
                    id: l.id,
                    centerline: l.centerline.into_iter().map(|[x, y]| Point2::new(x, y)).collect(),
                    width: l.width,
                    successor_ids: l.successors,
                    predecessor_ids: l.predecessors,
                })
                .collect(),
            agents,
            ego_id: f.ego_id,
            route_lane_ids,
            goal: f.goal,
            traffic_lights,
            frame_interval: f.frame_interval,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(s)).expect("scenario serializes")
}

/// Parses and validates a scenario document; `origin` labels errors.
pub fn scenario_from_json(text: &str, origin: &str) -> Result<Scenario, SceneError> {
    let file: ScenarioFile = serde_json::from_str(text)
        .map_err(|e| SceneError::Parse { path: origin.to_string(), message: e.to_string() })?;
    Scenario::try_from(file)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    scenario_from_json(&text, &path.display().to_string())
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    std::fs::write(path, scenario_to_json(s) + "\n")
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}
