use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::geometry::{expand_segment, resample_polyline, OrientedRect, Point2, Segment};
use crate::scene::Scenario;

/// A fine-grained lane segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneNode {
    pub lane_id: String,
    /// Position of the lane in `Scenario::lanes`.
    pub lane_index: usize,
    pub index_in_lane: usize,
    pub segment: Segment,
    pub width: f64,
    /// The segment expanded to the lane width.
    pub rect: OrientedRect,
}

impl LaneNode {
    pub fn midpoint(&self) -> Point2 {
        self.segment.midpoint()
    }
}

/// Lane segments with directed successor adjacency along the driving direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneGraph {
    pub nodes: Vec<LaneNode>,
    /// `successors[i]` lists nodes reachable from `i` in one hop, ascending.
    pub successors: Vec<Vec<usize>>,
}

impl LaneGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scale-1 edges as undirected `[lo, hi]` pairs, sorted.
    pub fn geometric_edges(&self) -> Vec<[usize; 2]> {
        let set: BTreeSet<[usize; 2]> = self
            .successors
            .iter()
            .enumerate()
            .flat_map(|(i, succ)| succ.iter().filter(move |&&j| j != i).map(move |&j| [i.min(j), i.max(j)]))
            .collect();
        set.into_iter().collect()
    }

    /// Induced subgraph over the nodes accepted by `keep`, reindexed in order.
    pub fn subgraph(&self, keep: impl Fn(&LaneNode) -> bool) -> LaneGraph {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if keep(n) {
                remap[i] = nodes.len();
                nodes.push(n.clone());
            }
        }
        let successors = self
            .successors
            .iter()
            .enumerate()
            .filter(|(i, _)| remap[*i] != usize::MAX)
            .map(|(_, succ)| succ.iter().map(|&j| remap[j]).filter(|&j| j != usize::MAX).collect())
            .collect();
        LaneGraph { nodes, successors }
    }

    /// Number of weakly connected components.
    pub fn connected_components(&self) -> usize {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, succ) in self.successors.iter().enumerate() {
            for &j in succ {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

/// Cuts every lane centerline into segments of about `target_len` meters and
/// links them: consecutive segments within a lane, and the last segment of a
/// lane to the first segment of each of its successors (predecessor lists are
/// honored in the reverse direction too).
pub fn build_lane_graph(scenario: &Scenario, target_len: f64) -> Result<LaneGraph, GraphError> {
    let mut nodes = Vec::new();
    let mut ranges = Vec::with_capacity(scenario.lanes.len());
    for (li, lane) in scenario.lanes.iter().enumerate() {
        let segs = resample_polyline(&lane.centerline, target_len)
            .map_err(|source| GraphError::Lane { lane_id: lane.id.clone(), source })?;
        let start = nodes.len();
        for (k, segment) in segs.into_iter().enumerate() {
            let rect = expand_segment(&segment, lane.width)
                .map_err(|source| GraphError::Lane { lane_id: lane.id.clone(), source })?;
            nodes.push(LaneNode {
                lane_id: lane.id.clone(),
                lane_index: li,
                index_in_lane: k,
                segment,
                width: lane.width,
                rect,
            });
        }
        ranges.push(start..nodes.len());
    }

    let mut successors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
    for r in &ranges {
        for i in r.start..r.end - 1 {
            successors[i].insert(i + 1);
        }
    }
    let mut link = |from: usize, to: usize| {
        let (last, first) = (ranges[from].end - 1, ranges[to].start);
        successors[last].insert(first);
    };
    for (li, lane) in scenario.lanes.iter().enumerate() {
        for s in &lane.successor_ids {
            if let Some(sj) = scenario.lane_index(s) {
                link(li, sj);
            }
        }
        for p in &lane.predecessor_ids {
            if let Some(pj) = scenario.lane_index(p) {
                link(pj, li);
            }
        }
    }
    Ok(LaneGraph { nodes, successors: successors.into_iter().map(|s| s.into_iter().collect()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentState, AgentTrack, LaneSpec, Pose2D};
    use std::collections::BTreeMap;

    pub(crate) fn lane(id: &str, pts: &[(f64, f64)], succ: &[&str]) -> LaneSpec {
        LaneSpec {
            id: id.into(),
            centerline: pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
            width: 3.0,
            successor_ids: succ.iter().map(|s| s.to_string()).collect(),
            predecessor_ids: vec![],
        }
    }

    fn scenario(lanes: Vec<LaneSpec>) -> Scenario {
        let st = AgentState { frame: 0, x: 0.0, y: 0.0, theta: 0.0, vx: 0.0, vy: 0.0, yaw_rate: 0.0 };
        Scenario {
            id: "t".into(),
            lanes,
            agents: vec![AgentTrack { id: "ego".into(), length: 4.0, width: 2.0, states: vec![st] }],
            ego_id: "ego".into(),
            route_lane_ids: Default::default(),
            goal: Pose2D { x: 0.0, y: 0.0, theta: 0.0 },
            traffic_lights: BTreeMap::new(),
            frame_interval: 0.1,
        }
    }

    #[test]
    fn single_lane_counts() {
        let lg = build_lane_graph(&scenario(vec![lane("A", &[(0.0, 0.0), (3.0, 0.0)], &[])]), 0.3).unwrap();
        assert_eq!(lg.len(), 10);
        assert_eq!(lg.geometric_edges().len(), 9);
        assert_eq!(lg.connected_components(), 1);
    }

    #[test]
    fn successor_link() {
        let s = scenario(vec![
            lane("A", &[(0.0, 0.0), (3.0, 0.0)], &["B"]),
            lane("B", &[(3.0, 0.0), (3.0, 3.0)], &[]),
        ]);
        let lg = build_lane_graph(&s, 0.3).unwrap();
        assert_eq!(lg.len(), 20);
        assert!(lg.successors[9].contains(&10));
        assert_eq!(lg.connected_components(), 1);
    }

    #[test]
    fn predecessor_only_link() {
        let mut b = lane("B", &[(3.0, 0.0), (6.0, 0.0)], &[]);
        b.predecessor_ids = vec!["A".into()];
        let s = scenario(vec![lane("A", &[(0.0, 0.0), (3.0, 0.0)], &[]), b]);
        let lg = build_lane_graph(&s, 0.3).unwrap();
        assert!(lg.successors[9].contains(&10));
    }

    #[test]
    fn disconnected_lanes() {
        let s = scenario(vec![
            lane("A", &[(0.0, 0.0), (3.0, 0.0)], &[]),
            lane("B", &[(0.0, 5.0), (3.0, 5.0)], &[]),
        ]);
        assert_eq!(build_lane_graph(&s, 0.3).unwrap().connected_components(), 2);
    }

    #[test]
    fn subgraph_reindexes() {
        let lg = build_lane_graph(&scenario(vec![lane("A", &[(0.0, 0.0), (3.0, 0.0)], &[])]), 0.3).unwrap();
        let sub = lg.subgraph(|n| n.index_in_lane >= 5);
        assert_eq!(sub.len(), 5);
        assert_eq!(sub.successors[0], vec![1]);
        assert!(sub.successors[4].is_empty());
    }
}
