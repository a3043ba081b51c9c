//! Occupancy flow graphs.
//!
//! An [`Ofg`] is one frame: lane-segment nodes carrying occupancy, backward
//! flow and road semantics, plus geometric, multi-scale and vehicle
//! interaction edges. A [`Tofg`] stacks consecutive frames over the same node
//! set and joins them with temporal edges between nodes occupied by the same
//! vehicle.
//!
//! The JSON export is the serde form of [`Tofg`]:
//!
//! ```text
//! { "ego_id": "ego",
//!   "frames": [ { "frame": 3,
//!                 "nodes": [ { "lane_node": 0, "lane_id": "L0_0", "index_in_lane": 0,
//!                              "midpoint": {"x":..,"y":..}, "seg_vector": {"x":..,"y":..},
//!                              "occupancy": 1, "flow": [-vx,-vy,theta,yaw_rate],
//!                              "occupant_id": "ego", "agent_index": 0,
//!                              "light": "green", "on_route": true }, ... ],
//!                 "edges": { "geometric": [[a,b],..], "multiscale": [[a,b],..],
//!                            "interaction": [[a,b],..] },
//!                 "vehicles": [ {"agent_index":0, "id":"ego", "state":{..}}, ..] }, ... ],
//!   "temporal_edges": [ {"frame": 1, "node": 12, "prev_node": 11}, ... ] }
//! ```
//!
//! Edge pairs index into the `nodes` array of their own frame; temporal edges
//! join `node` in `frames[frame]` to `prev_node` in `frames[frame - 1]`.

mod edges;
mod lane_graph;
mod occupancy;

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame2D, GeometryError, Point2};
use crate::scene::{state_at, AgentState, Scenario, TrafficLightState};

pub use edges::{build_interaction_edges, build_multiscale_edges, match_temporal};
pub use lane_graph::{build_lane_graph, LaneGraph, LaneNode};
pub use occupancy::{assign_occupancy, vehicle_boxes, NodeOccupancy};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("lane {lane_id}: {source}")]
    Lane {
        lane_id: String,
        #[source]
        source: GeometryError,
    },
    #[error("empty frame range")]
    EmptyFrameRange,
    #[error("invalid graph config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Mean lane-segment length in meters.
    pub target_len: f64,
    pub n_scale: usize,
    /// Vehicles closer than this (center to center, meters) interact.
    pub interaction_threshold: f64,
    /// Keep only lane nodes within this radius of the ego's position at the
    /// last frame; `None` keeps the whole map.
    pub roi_radius: Option<f64>,
    /// Shifts the crop center this many meters along the ego's heading.
    pub roi_ahead: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { target_len: 0.3, n_scale: 4, interaction_threshold: 100.0, roi_radius: None, roi_ahead: 0.0 }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.target_len > 0.0) {
            return Err(GraphError::Config(format!("target_len must be > 0, got {}", self.target_len)));
        }
        if self.n_scale < 1 {
            return Err(GraphError::Config("n_scale must be >= 1".into()));
        }
        if !(self.interaction_threshold >= 0.0) {
            return Err(GraphError::Config("interaction_threshold must be >= 0".into()));
        }
        if !self.roi_ahead.is_finite() {
            return Err(GraphError::Config("roi_ahead must be finite".into()));
        }
        if let Some(r) = self.roi_radius {
            if !(r > 0.0) {
                return Err(GraphError::Config(format!("roi_radius must be > 0, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfgNode {
    /// Index of the source node in the lane graph the frame was built on.
    pub lane_node: usize,
    pub lane_id: String,
    pub index_in_lane: usize,
    pub midpoint: Point2,
    pub seg_vector: Point2,
    pub occupancy: u8,
    pub flow: [f64; 4],
    pub occupant_id: Option<String>,
    pub agent_index: Option<usize>,
    pub light: TrafficLightState,
    pub on_route: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Geometric,
    /// Multi-scale edges with hop count >= 2.
    MultiScale,
    Interaction,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeSets {
    pub geometric: Vec<[usize; 2]>,
    /// All scales `1..=n_scale`; contains every geometric edge.
    pub multiscale: Vec<[usize; 2]>,
    pub interaction: Vec<[usize; 2]>,
}

impl EdgeSets {
    /// Every edge once, tagged so that the tag classes are disjoint.
    pub fn tagged(&self) -> Vec<(EdgeKind, [usize; 2])> {
        let geo: BTreeSet<[usize; 2]> = self.geometric.iter().copied().collect();
        let mut out: Vec<(EdgeKind, [usize; 2])> = self.geometric.iter().map(|&e| (EdgeKind::Geometric, e)).collect();
        out.extend(self.multiscale.iter().filter(|e| !geo.contains(*e)).map(|&e| (EdgeKind::MultiScale, e)));
        out.extend(self.interaction.iter().map(|&e| (EdgeKind::Interaction, e)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedAgent {
    pub agent_index: usize,
    pub id: String,
    pub state: AgentState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ofg {
    pub frame: i64,
    pub nodes: Vec<OfgNode>,
    pub edges: EdgeSets,
    pub vehicles: Vec<ObservedAgent>,
}

impl Ofg {
    pub fn vehicle(&self, id: &str) -> Option<&ObservedAgent> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// Indices of nodes occupied by `agent_index`, ascending.
    pub fn occupied_by(&self, agent_index: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].agent_index == Some(agent_index)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporalEdge {
    /// Index into `Tofg::frames` of the later frame; always >= 1.
    pub frame: usize,
    pub node: usize,
    pub prev_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EdgeCounts {
    pub geometric: usize,
    pub multiscale: usize,
    pub interaction: usize,
    pub temporal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tofg {
    pub ego_id: String,
    pub frames: Vec<Ofg>,
    pub temporal_edges: Vec<TemporalEdge>,
}

impl Tofg {
    pub fn node_count(&self) -> usize {
        self.frames.iter().map(|f| f.nodes.len()).sum()
    }

    pub fn last(&self) -> &Ofg {
        self.frames.last().expect("a Tofg has at least one frame")
    }

    pub fn edge_counts(&self) -> EdgeCounts {
        let mut c = EdgeCounts { temporal: self.temporal_edges.len(), ..Default::default() };
        for f in &self.frames {
            c.geometric += f.edges.geometric.len();
            c.multiscale += f.edges.multiscale.len();
            c.interaction += f.edges.interaction.len();
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }
}

/// Builds one frame on `lane_graph` using precomputed scale edges.
fn build_ofg(
    lane_graph: &LaneGraph,
    scale_edges: &(Vec<[usize; 2]>, Vec<[usize; 2]>),
    scenario: &Scenario,
    frame: i64,
    config: &GraphConfig,
) -> Ofg {
    let occupancy = assign_occupancy(lane_graph, scenario, frame);
    let nodes: Vec<OfgNode> = lane_graph
        .nodes
        .iter()
        .zip(occupancy)
        .enumerate()
        .map(|(i, (ln, occ))| OfgNode {
            lane_node: i,
            lane_id: ln.lane_id.clone(),
            index_in_lane: ln.index_in_lane,
            midpoint: ln.midpoint(),
            seg_vector: ln.segment.vector(),
            occupancy: u8::from(occ.occupied()),
            flow: occ.flow,
            occupant_id: occ.agent_index.map(|a| scenario.agents[a].id.clone()),
            agent_index: occ.agent_index,
            light: scenario.light_at(&ln.lane_id, frame),
            on_route: scenario.route_lane_ids.contains(&ln.lane_id),
        })
        .collect();
    let vehicles: Vec<ObservedAgent> = scenario
        .agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| state_at(a, frame).map(|st| ObservedAgent { agent_index: i, id: a.id.clone(), state: *st }))
        .collect();
    let pairs: Vec<(usize, AgentState)> = vehicles.iter().map(|v| (v.agent_index, v.state)).collect();
    let interaction = build_interaction_edges(&nodes, &pairs, config.interaction_threshold);
    Ofg {
        frame,
        nodes,
        edges: EdgeSets { geometric: scale_edges.0.clone(), multiscale: scale_edges.1.clone(), interaction },
        vehicles,
    }
}

/// Temporal edges between frames `t - 1` and `t` of `frames`.
fn temporal_between(frames: &[Ofg], t: usize) -> Vec<TemporalEdge> {
    let (prev, cur) = (&frames[t - 1], &frames[t]);
    let mut out = Vec::new();
    for v in &cur.vehicles {
        let Some(pv) = prev.vehicles.iter().find(|p| p.agent_index == v.agent_index) else { continue };
        let now: Vec<(usize, Point2)> =
            cur.occupied_by(v.agent_index).into_iter().map(|i| (i, cur.nodes[i].midpoint)).collect();
        let before: Vec<(usize, Point2)> =
            prev.occupied_by(v.agent_index).into_iter().map(|i| (i, prev.nodes[i].midpoint)).collect();
        let pose_now = Frame2D::new(v.state.position(), v.state.theta);
        let pose_before = Frame2D::new(pv.state.position(), pv.state.theta);
        out.extend(
            match_temporal(&now, pose_now, &before, pose_before)
                .into_iter()
                .map(|(node, prev_node)| TemporalEdge { frame: t, node, prev_node }),
        );
    }
    out
}

/// Region of the lane graph used for a window ending at `last_frame`.
pub fn crop_lane_graph(lane_graph: &LaneGraph, scenario: &Scenario, last_frame: i64, config: &GraphConfig) -> LaneGraph {
    let center = config.roi_radius.and_then(|r| {
        state_at(scenario.ego(), last_frame).map(|st| {
            let ahead = Point2::new(st.theta.cos(), st.theta.sin()) * config.roi_ahead;
            (st.position() + ahead, r)
        })
    });
    match center {
        Some((c, r)) => lane_graph.subgraph(|n| n.midpoint().distance(c) <= r),
        None => lane_graph.clone(),
    }
}

/// Builds the temporal graph for `frames` on an already built full-map lane graph.
pub fn build_tofg_on(
    lane_graph: &LaneGraph,
    scenario: &Scenario,
    frames: RangeInclusive<i64>,
    config: &GraphConfig,
) -> Result<Tofg, GraphError> {
    config.validate()?;
    if frames.is_empty() {
        return Err(GraphError::EmptyFrameRange);
    }
    let lg = crop_lane_graph(lane_graph, scenario, *frames.end(), config);
    let scale_edges = (lg.geometric_edges(), build_multiscale_edges(&lg, config.n_scale));
    let frame_list: Vec<i64> = frames.collect();
    let ofgs: Vec<Ofg> =
        frame_list.par_iter().map(|&f| build_ofg(&lg, &scale_edges, scenario, f, config)).collect();
    let temporal_edges = (1..ofgs.len()).flat_map(|t| temporal_between(&ofgs, t)).collect();
    Ok(Tofg { ego_id: scenario.ego_id.clone(), frames: ofgs, temporal_edges })
}

pub fn build_tofg(scenario: &Scenario, frames: RangeInclusive<i64>, config: &GraphConfig) -> Result<Tofg, GraphError> {
    config.validate()?;
    let lg = build_lane_graph(scenario, config.target_len)?;
    build_tofg_on(&lg, scenario, frames, config)
}
