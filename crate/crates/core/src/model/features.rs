use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::geometry::Point2;
use crate::graph::{OfgNode, Tofg};
use crate::nn::{EdgeIndex, Matrix};
use crate::scene::{AgentState, TrafficLightState};

pub const NODE_FEATURES: usize = 14;
pub const EGO_FEATURES: usize = 6;

/// Fixed input scaling applied before the embedding MLP: positions and speeds
/// to tens of meters, segment vectors to about unit length, heading to ±1.
const NODE_SCALE: [f64; NODE_FEATURES] =
    [0.1, 0.1, 1.0 / 0.3, 1.0 / 0.3, 1.0, 0.1, 0.1, 1.0 / std::f64::consts::PI, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];

/// `[mid_x, mid_y, seg_x, seg_y, O, -vx, -vy, theta, yaw_rate,
///   red, yellow, green, none, on_route]`, midpoint relative to the ego's
/// last observed position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFeature(pub [f64; NODE_FEATURES]);

impl NodeFeature {
    pub fn new(node: &OfgNode, origin: Point2) -> Self {
        let mut f = [0.0; NODE_FEATURES];
        let rel = node.midpoint - origin;
        f[0] = rel.x;
        f[1] = rel.y;
        f[2] = node.seg_vector.x;
        f[3] = node.seg_vector.y;
        f[4] = f64::from(node.occupancy);
        f[5..9].copy_from_slice(&node.flow);
        f[9 + node.light.index()] = 1.0;
        f[13] = if node.on_route { 1.0 } else { 0.0 };
        NodeFeature(f)
    }

    pub fn light(&self) -> TrafficLightState {
        let k = (0..4).find(|&k| self.0[9 + k] == 1.0).expect("one-hot light");
        TrafficLightState::ALL[k]
    }

    fn scaled(&self) -> [f64; NODE_FEATURES] {
        let mut out = self.0;
        for (v, s) in out.iter_mut().zip(NODE_SCALE) {
            *v *= s;
        }
        out
    }
}

/// `[vx/10, vy/10, cos theta, sin theta, speed/10, yaw_rate]`. The position is
/// the coordinate origin and is not encoded.
pub fn ego_feature(st: &AgentState) -> [f64; EGO_FEATURES] {
    [st.vx / 10.0, st.vy / 10.0, st.theta.cos(), st.theta.sin(), st.speed() / 10.0, st.yaw_rate]
}

/// Node of the last frame that the cross-attention reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttendedNode {
    /// Index into the last frame's `nodes`.
    pub node: usize,
    pub lane_id: String,
    pub midpoint: Point2,
}

/// Everything the network needs from one TOFG, independent of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// Scaled node features, frames stacked in order: `[N × 14]`.
    pub features: Matrix,
    pub ego: Matrix,
    /// Fused message edges, both directions.
    pub edges: EdgeIndex,
    /// Rows of `features` belonging to the last frame.
    pub last_rows: std::ops::Range<usize>,
    pub attended: Vec<AttendedNode>,
    pub last_frame: i64,
    /// Ego position at the last frame; model coordinates are relative to it.
    pub origin: Point2,
    pub ego_state: AgentState,
}

impl GraphInput {
    pub fn from_tofg(tofg: &Tofg, history: usize) -> Result<Self, ModelError> {
        if tofg.frames.len() != history {
            return Err(ModelError::FrameCount { expected: history, got: tofg.frames.len() });
        }
        let last = tofg.last();
        let ego_state = last.vehicle(&tofg.ego_id).ok_or(ModelError::MissingEgo { frame: last.frame })?.state;
        if last.nodes.is_empty() {
            return Err(ModelError::EmptyGraph { frame: last.frame });
        }
        let origin = ego_state.position();

        let mut offsets = Vec::with_capacity(tofg.frames.len());
        let mut rows: Vec<[f64; NODE_FEATURES]> = Vec::new();
        for f in &tofg.frames {
            offsets.push(rows.len());
            rows.extend(f.nodes.iter().map(|n| NodeFeature::new(n, origin).scaled()));
        }
        let n = rows.len();

        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut link = |a: usize, b: usize| {
            if a != b {
                pairs.insert((a, b));
                pairs.insert((b, a));
            }
        };
        for (f, &off) in tofg.frames.iter().zip(&offsets) {
            for [a, b] in f.edges.multiscale.iter().chain(&f.edges.interaction) {
                link(off + a, off + b);
            }
        }
        for e in &tofg.temporal_edges {
            link(offsets[e.frame] + e.node, offsets[e.frame - 1] + e.prev_node);
        }
        let mut edges = EdgeIndex { n_nodes: n, ..Default::default() };
        for (t, s) in pairs {
            edges.targets.push(t);
            edges.sources.push(s);
        }

        let last_off = *offsets.last().expect("at least one frame");
        let attended = last
            .nodes
            .iter()
            .enumerate()
            .map(|(i, nd)| AttendedNode { node: i, lane_id: nd.lane_id.clone(), midpoint: nd.midpoint })
            .collect();
        Ok(GraphInput {
            features: Matrix::from_rows(&rows),
            ego: Matrix::row_vector(&ego_feature(&ego_state)),
            edges,
            last_rows: last_off..n,
            attended,
            last_frame: last.frame,
            origin,
            ego_state,
        })
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }
}
