use std::collections::{BTreeSet, VecDeque};

use super::{LaneGraph, OfgNode};
use crate::geometry::{to_frame, Frame2D, Point2};
use crate::scene::AgentState;

/// Union over `s = 1..=n_scale` of node pairs joined by a directed successor
/// path of `s` hops, stored undirected as sorted `[lo, hi]` pairs.
pub fn build_multiscale_edges(lane_graph: &LaneGraph, n_scale: usize) -> Vec<[usize; 2]> {
    let n = lane_graph.len();
    let mut out = BTreeSet::new();
    let mut depth = vec![usize::MAX; n];
    let mut visited = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        depth[start] = 0;
        visited.push(start);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            if depth[u] == n_scale {
                continue;
            }
            for &v in &lane_graph.successors[u] {
                if depth[v] == usize::MAX {
                    depth[v] = depth[u] + 1;
                    visited.push(v);
                    queue.push_back(v);
                    out.insert([start.min(v), start.max(v)]);
                }
            }
        }
        for v in visited.drain(..) {
            depth[v] = usize::MAX;
        }
    }
    out.into_iter().collect()
}

/// Vehicle-to-vehicle edges for one frame.
///
/// `vehicles` lists `(agent_index, state)` for every agent present. For each
/// unordered pair closer than `threshold` (center to center) that both occupy
/// nodes, the smaller occupied set (ties: lower agent index) is injected into
/// the larger one: both sets are sorted by the longitudinal coordinate of the
/// node midpoints along their own vehicle's heading and paired rank by rank.
/// Edges are `[node_in_smaller_set, node_in_larger_set]`.
pub fn build_interaction_edges(nodes: &[OfgNode], vehicles: &[(usize, AgentState)], threshold: f64) -> Vec<[usize; 2]> {
    let occupied_by = |agent: usize, st: &AgentState| -> Vec<usize> {
        let heading = Point2::new(st.theta.cos(), st.theta.sin());
        let mut idx: Vec<(f64, usize)> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.agent_index == Some(agent))
            .map(|(i, n)| (n.midpoint.dot(heading), i))
            .collect();
        idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        idx.into_iter().map(|(_, i)| i).collect()
    };
    let sets: Vec<Vec<usize>> = vehicles.iter().map(|(a, st)| occupied_by(*a, st)).collect();
    let mut edges = Vec::new();
    for i in 0..vehicles.len() {
        for j in i + 1..vehicles.len() {
            let (si, sj) = (&sets[i], &sets[j]);
            if si.is_empty() || sj.is_empty() {
                continue;
            }
            if vehicles[i].1.position().distance(vehicles[j].1.position()) >= threshold {
                continue;
            }
            let (small, large) = if sj.len() < si.len() { (sj, si) } else { (si, sj) };
            edges.extend(small.iter().zip(large).map(|(&a, &b)| [a, b]));
        }
    }
    edges
}

/// Links each node `u` occupied by a vehicle at `t` to the nearest node among
/// those it occupied at `t - 1`. Node midpoints of each frame are expressed in
/// the vehicle's own frame at that time; ties go to the lower node index.
/// Returns `(node_at_t, node_at_t_minus_1)` pairs.
pub fn match_temporal(
    now: &[(usize, Point2)],
    pose_now: Frame2D,
    before: &[(usize, Point2)],
    pose_before: Frame2D,
) -> Vec<(usize, usize)> {
    if before.is_empty() {
        return Vec::new();
    }
    let prev: Vec<(usize, Point2)> = before.iter().map(|&(i, p)| (i, to_frame(p, &pose_before))).collect();
    now.iter()
        .map(|&(u, p)| {
            let q = to_frame(p, &pose_now);
            let mut best = (f64::INFINITY, usize::MAX);
            for &(v, r) in &prev {
                let d = q.distance(r);
                if d < best.0 || (d == best.0 && v < best.1) {
                    best = (d, v);
                }
            }
            (u, best.1)
        })
        .collect()
}
