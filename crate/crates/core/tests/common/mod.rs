//! Randomized scenes and brute-force oracles shared by integration tests.
//!
//! Nothing here calls into the separating-axis test, the BFS edge builder or
//! the frame transforms of the library; each oracle recomputes its answer by
//! a different route.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tofg::geometry::{OrientedRect, Point2};
use tofg::graph::LaneGraph;
use tofg::scene::{AgentState, AgentTrack, LaneSpec, Pose2D, Scenario};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_polyline(rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let n = rng.gen_range(2..5);
    let mut p = Point2::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0));
    let mut heading: f64 = rng.gen_range(-PI..PI);
    let mut pts = vec![p];
    for _ in 1..n {
        heading += rng.gen_range(-0.6..0.6);
        let len = rng.gen_range(2.0..12.0);
        p = p + Point2::new(heading.cos(), heading.sin()) * len;
        pts.push(p);
    }
    pts
}

/// A random single-frame scene: up to `max_lanes` lanes with random
/// successor links and up to `max_vehicles` non-overlapping vehicles dropped
/// near lane centerlines. Frame 0 only.
pub fn random_scene(seed: u64, max_lanes: usize, max_vehicles: usize) -> Scenario {
    let mut rng = rng(seed);
    let n_lanes = rng.gen_range(1..=max_lanes);
    let mut lanes: Vec<LaneSpec> = (0..n_lanes)
        .map(|i| LaneSpec {
            id: format!("lane{i}"),
            centerline: random_polyline(&mut rng),
            width: rng.gen_range(2.5..4.0),
            successor_ids: vec![],
            predecessor_ids: vec![],
        })
        .collect();
    for i in 0..n_lanes {
        for j in 0..n_lanes {
            if i != j && rng.gen_bool(0.3) {
                lanes[i].successor_ids.push(format!("lane{j}"));
            }
        }
    }
    let n_veh = rng.gen_range(1..=max_vehicles);
    let mut agents: Vec<AgentTrack> = Vec::new();
    let mut rects: Vec<OrientedRect> = Vec::new();
    let mut attempts = 0;
    while agents.len() < n_veh && attempts < 200 {
        attempts += 1;
        let lane = &lanes[rng.gen_range(0..n_lanes)];
        let k = rng.gen_range(0..lane.centerline.len() - 1);
        let t = rng.gen_range(0.0..1.0);
        let base = lane.centerline[k].lerp(lane.centerline[k + 1], t);
        let c = base + Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let theta = rng.gen_range(-PI..PI);
        let (length, width) = (rng.gen_range(2.0..6.0), rng.gen_range(1.0..2.5));
        let rect = OrientedRect::new(c, theta, length / 2.0, width / 2.0).unwrap();
        if rects.iter().any(|r| polygons_overlap(r, &rect)) {
            continue;
        }
        rects.push(rect);
        let v = rng.gen_range(0.0..15.0);
        agents.push(AgentTrack {
            id: format!("v{}", agents.len()),
            length,
            width,
            states: vec![AgentState {
                frame: 0,
                x: c.x,
                y: c.y,
                theta: rect.heading,
                vx: v * theta.cos(),
                vy: v * theta.sin(),
                yaw_rate: rng.gen_range(-0.3..0.3),
            }],
        });
    }
    let route: BTreeSet<String> = lanes.iter().filter(|_| rng.gen_bool(0.5)).map(|l| l.id.clone()).collect();
    let s = Scenario {
        id: format!("random-{seed}"),
        lanes,
        ego_id: agents[0].id.clone(),
        agents,
        route_lane_ids: route,
        goal: Pose2D { x: 0.0, y: 0.0, theta: 0.0 },
        traffic_lights: BTreeMap::new(),
        frame_interval: 0.1,
    };
    s.validate().unwrap();
    s
}

/// Corners of a rectangle computed from scratch with explicit trig.
pub fn corners(r: &OrientedRect) -> [Point2; 4] {
    let (c, s) = (r.heading.cos(), r.heading.sin());
    let pt = |a: f64, b: f64| Point2::new(r.center.x + a * c - b * s, r.center.y + a * s + b * c);
    let (l, w) = (r.half_length, r.half_width);
    [pt(l, w), pt(-l, w), pt(-l, -w), pt(l, -w)]
}

/// Point in convex polygon (counter-clockwise corners), boundary inclusive.
pub fn in_polygon(poly: &[Point2; 4], p: Point2) -> bool {
    (0..4).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % 4];
        (b - a).cross(p - a) >= 0.0
    })
}

fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o = |p: Point2, q: Point2, r: Point2| (q - p).cross(r - p);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    (d1 * d2 <= 0.0) && (d3 * d4 <= 0.0)
}

/// Polygon overlap by corner containment and edge crossing.
pub fn polygons_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let (pa, pb) = (corners(a), corners(b));
    if pa.iter().any(|&p| in_polygon(&pb, p)) || pb.iter().any(|&p| in_polygon(&pa, p)) {
        return true;
    }
    (0..4).any(|i| (0..4).any(|j| segments_cross(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4])))
}

fn grown(r: &OrientedRect, by: f64) -> OrientedRect {
    OrientedRect { half_length: r.half_length + by, half_width: r.half_width + by, ..*r }
}

/// Oracle occupancy for one node: `Some(Some(agent))`, `Some(None)` when free,
/// `None` when the configuration is within `margin` of a decision boundary.
pub fn oracle_occupant(node_rect: &OrientedRect, mid: Point2, boxes: &[(usize, OrientedRect)], margin: f64) -> Option<Option<usize>> {
    let mut cands = Vec::new();
    for (agent, b) in boxes {
        let hit_outer = polygons_overlap(node_rect, &grown(b, margin));
        let hit_inner = polygons_overlap(node_rect, &grown(b, -margin));
        if hit_outer != hit_inner {
            return None;
        }
        if hit_inner {
            let contains_outer = in_polygon(&corners(&grown(b, margin)), mid);
            let contains_inner = in_polygon(&corners(&grown(b, -margin)), mid);
            if contains_outer != contains_inner {
                return None;
            }
            cands.push((!contains_inner, mid.distance(b.center), *agent));
        }
    }
    cands.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    if cands.len() >= 2 && cands[0].0 == cands[1].0 && (cands[1].1 - cands[0].1).abs() < margin {
        return None;
    }
    Some(cands.first().map(|c| c.2))
}

/// Pairs reachable by a directed walk of exactly `s` steps for some
/// `s <= n_scale`, by repeated frontier expansion over walks (not BFS).
pub fn walk_oracle_edges(lg: &LaneGraph, n_scale: usize) -> BTreeSet<[usize; 2]> {
    let mut out = BTreeSet::new();
    for start in 0..lg.len() {
        let mut frontier: BTreeSet<usize> = [start].into_iter().collect();
        for _ in 0..n_scale {
            let next: BTreeSet<usize> = frontier.iter().flat_map(|&u| lg.successors[u].iter().copied()).collect();
            for &v in &next {
                if v != start {
                    out.insert([start.min(v), start.max(v)]);
                }
            }
            frontier = next;
        }
    }
    out
}

/// Nearest previous node for every current node, in each frame's own vehicle
/// frame, with explicit rotation matrices; ties to the lower index.
pub fn nearest_in_relative_frame(
    now: &[(usize, Point2)],
    pose_now: (Point2, f64),
    before: &[(usize, Point2)],
    pose_before: (Point2, f64),
) -> Vec<(usize, usize)> {
    let rel = |p: Point2, (o, h): (Point2, f64)| {
        let d = p - o;
        Point2::new(h.cos() * d.x + h.sin() * d.y, -h.sin() * d.x + h.cos() * d.y)
    };
    now.iter()
        .map(|&(u, p)| {
            let q = rel(p, pose_now);
            let mut all: Vec<(f64, usize)> = before.iter().map(|&(v, r)| (q.distance(rel(r, pose_before)), v)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            (u, all[0].1)
        })
        .collect()
}

/// Central-difference check of every parameter entry of `store` against the
/// tape gradient of `loss`. Tolerance: `max(rel * max(|a|, |n|), abs)`.
pub fn check_gradients<F>(store: &tofg::nn::ParamStore, step: f64, rel: f64, abs: f64, loss: F) -> Result<usize, String>
where
    F: Fn(&mut tofg::nn::Tape) -> tofg::nn::Var,
{
    use tofg::nn::Tape;
    let mut tape = Tape::new(store);
    let l = loss(&mut tape);
    let grads = tape.backward(l).map_err(|e| e.to_string())?;
    let eval = |s: &tofg::nn::ParamStore| {
        let mut t = Tape::new(s);
        let v = loss(&mut t);
        t.value(v).get(0, 0)
    };
    let mut probe = store.clone();
    let mut checked = 0;
    for id in store.ids() {
        for k in 0..store.value(id).data().len() {
            let orig = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + step;
            let up = eval(&probe);
            probe.value_mut(id).data_mut()[k] = orig - step;
            let down = eval(&probe);
            probe.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(id).data()[k];
            let tol = (rel * analytic.abs().max(numeric.abs())).max(abs);
            if (analytic - numeric).abs() > tol {
                return Err(format!("{}[{k}]: analytic {analytic}, numeric {numeric}", store.name(id)));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// One 3 m lane (10 nodes at 0.3 m) with a small ego creeping along it and a
/// parked car near the end, frames 0..=9.
pub fn tiny_scenario() -> Scenario {
    let lane = LaneSpec {
        id: "A".into(),
        centerline: vec![Point2::new(0.0, 0.0), Point2::new(3.0, 0.0)],
        width: 3.0,
        successor_ids: vec![],
        predecessor_ids: vec![],
    };
    let st = |frame: i64, x: f64, vx: f64| AgentState { frame, x, y: 0.05 * x, theta: 0.05, vx, vy: 0.05 * vx, yaw_rate: 0.0 };
    let ego = AgentTrack {
        id: "ego".into(),
        length: 0.8,
        width: 0.6,
        states: (0..10).map(|k| st(k, 0.4 + 0.15 * k as f64, 0.3)).collect(),
    };
    let parked = AgentTrack { id: "parked".into(), length: 0.8, width: 0.6, states: (0..10).map(|k| st(k, 2.5, 0.0)).collect() };
    Scenario {
        id: "tiny".into(),
        lanes: vec![lane],
        agents: vec![ego, parked],
        ego_id: "ego".into(),
        route_lane_ids: BTreeSet::from(["A".to_string()]),
        goal: Pose2D { x: 1.75, y: 0.0, theta: 0.0 },
        traffic_lights: BTreeMap::new(),
        frame_interval: 0.5,
    }
}

/// Central-difference check of `TofgGat::loss_and_grads` over every parameter.
pub fn check_model_gradients(
    model: &tofg::model::TofgGat,
    input: &tofg::model::GraphInput,
    truth_rel: &[Point2],
    step: f64,
    rel: f64,
    abs: f64,
) -> Result<usize, String> {
    let (_, grads) = model.loss_and_grads(input, truth_rel).map_err(|e| e.to_string())?;
    let mut probe = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut checked = 0;
    for id in ids {
        for k in 0..model.params().value(id).data().len() {
            let orig = model.params().value(id).data()[k];
            let mut eval = |v: f64| {
                probe.params_mut().value_mut(id).data_mut()[k] = v;
                probe.loss_and_grads(input, truth_rel).map(|(l, _)| l).map_err(|e| e.to_string())
            };
            let up = eval(orig + step)?;
            let down = eval(orig - step)?;
            eval(orig)?;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(id).data()[k];
            let tol = (rel * analytic.abs().max(numeric.abs())).max(abs);
            if (analytic - numeric).abs() > tol {
                return Err(format!("{}[{k}]: analytic {analytic}, numeric {numeric}", model.params().name(id)));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
