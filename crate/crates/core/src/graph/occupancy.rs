use serde::{Deserialize, Serialize};

use super::LaneGraph;
use crate::geometry::{rects_intersect, OrientedRect};
use crate::scene::{state_at, Scenario};

/// Occupancy of one lane node at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOccupancy {
    /// Index into `Scenario::agents` of the occupant.
    pub agent_index: Option<usize>,
    /// Backward flow `(-vx, -vy, theta, yaw_rate)`; zeros when free.
    pub flow: [f64; 4],
}

impl NodeOccupancy {
    pub const FREE: NodeOccupancy = NodeOccupancy { agent_index: None, flow: [0.0; 4] };

    pub fn occupied(&self) -> bool {
        self.agent_index.is_some()
    }
}

/// Bounding boxes of every agent observed at `frame`, as `(agent_index, box)`.
pub fn vehicle_boxes(scenario: &Scenario, frame: i64) -> Vec<(usize, OrientedRect)> {
    scenario
        .agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let st = state_at(a, frame)?;
            let rect = OrientedRect::new(st.position(), st.theta, a.length / 2.0, a.width / 2.0).ok()?;
            Some((i, rect))
        })
        .collect()
}

/// A node is occupied iff its lane rectangle meets at least one vehicle box.
/// With several candidates the occupant is a vehicle whose box contains the
/// segment midpoint, else the one whose box center is closest to it; ties go
/// to the lower agent index.
pub fn assign_occupancy(lane_graph: &LaneGraph, scenario: &Scenario, frame: i64) -> Vec<NodeOccupancy> {
    let boxes = vehicle_boxes(scenario, frame);
    let mut touched = vec![false; boxes.len()];
    let out: Vec<NodeOccupancy> = lane_graph
        .nodes
        .iter()
        .map(|node| {
            let mid = node.midpoint();
            let node_r = node.rect.circumradius();
            let mut best: Option<(bool, f64, usize)> = None;
            for (k, (agent, rect)) in boxes.iter().enumerate() {
                if rect.center.distance(node.rect.center) > node_r + rect.circumradius() {
                    continue;
                }
                if !rects_intersect(&node.rect, rect) {
                    continue;
                }
                touched[k] = true;
                let key = (!rect.contains(mid), mid.distance(rect.center), *agent);
                if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                    best = Some(key);
                }
            }
            match best {
                None => NodeOccupancy::FREE,
                Some((_, _, agent)) => {
                    let st = state_at(&scenario.agents[agent], frame).expect("box built from an observed state");
                    NodeOccupancy { agent_index: Some(agent), flow: [-st.vx, -st.vy, st.theta, st.yaw_rate] }
                }
            }
        })
        .collect();
    for ((agent, _), touched) in boxes.iter().zip(&touched) {
        let owned = out.iter().any(|o| o.agent_index == Some(*agent));
        if !touched {
            log::warn!("scenario {}: agent {} is off-road at frame {frame}", scenario.id, scenario.agents[*agent].id);
        } else if !owned {
            log::warn!(
                "scenario {}: agent {} overlaps lanes at frame {frame} but every overlapped node went to another vehicle",
                scenario.id,
                scenario.agents[*agent].id
            );
        }
    }
    out
}
