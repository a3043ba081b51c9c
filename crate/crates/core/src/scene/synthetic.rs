//! Seeded synthetic scenario generators.
//!
//! Every generator is a pure function of `(kind, seed)`. Tracks are built from
//! sampled positions: the velocity stored at frame `k` is the forward
//! difference `(p[k+1] - p[k]) / dt`, heading is its direction and yaw rate the
//! forward difference of heading, so replaying velocities reproduces the
//! positions exactly. All scenes run along +x from the origin with
//! `FRAME_INTERVAL` spacing and `N_FRAMES` frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentState, AgentTrack, LaneSpec, Pose2D, Scenario, TrafficLightState};
use crate::geometry::{wrap_angle, Point2};

pub const FRAME_INTERVAL: f64 = 0.5;
/// 2 s of history, 20 s of closed loop and a 6 s horizon, plus the start frame.
pub const N_FRAMES: usize = 57;
pub const EGO_LENGTH: f64 = 4.6;
pub const EGO_WIDTH: f64 = 1.9;
const ROAD_START_X: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    Curve,
    LaneChange,
    Overtake,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::Straight, ScenarioKind::Curve, ScenarioKind::LaneChange, ScenarioKind::Overtake];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Curve => "curve",
            ScenarioKind::LaneChange => "lane_change",
            ScenarioKind::Overtake => "overtake",
        }
    }

    fn salt(self) -> u64 {
        match self {
            ScenarioKind::Straight => 0x5157_0001,
            ScenarioKind::Curve => 0x5157_0002,
            ScenarioKind::LaneChange => 0x5157_0003,
            ScenarioKind::Overtake => 0x5157_0004,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario kind {s:?} (expected straight, curve, lane_change or overtake)"))
    }
}

/// Parameters of the lateral maneuver used by `lane_change` and `overtake`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangePlan {
    pub start_time: f64,
    pub duration: f64,
    /// Signed lateral offset of the target lane.
    pub offset: f64,
}

impl LaneChangePlan {
    /// Lateral offset at time `t`, quintic smoothstep between the lanes.
    pub fn lateral(&self, t: f64) -> f64 {
        let tau = ((t - self.start_time) / self.duration).clamp(0.0, 1.0);
        self.offset * tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau)
    }
}

/// Overtake layout, exposed so tests can hand-compute encounter times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvertakeLayout {
    pub ego_speed: f64,
    pub neighbor_start_x: f64,
    pub neighbor_speed: f64,
    pub stopped_x: f64,
    pub lane_width: f64,
    pub maneuver: LaneChangePlan,
}

pub fn gen_synthetic(kind: ScenarioKind, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt().rotate_left(32));
    let scenario = match kind {
        ScenarioKind::Straight => straight(&mut rng),
        ScenarioKind::Curve => curve(&mut rng),
        ScenarioKind::LaneChange => lane_change(&mut rng),
        ScenarioKind::Overtake => overtake(overtake_layout(seed)),
    };
    let scenario = Scenario { id: format!("{}-{seed}", kind.name()), ..scenario };
    debug_assert!(scenario.validate().is_ok());
    scenario
}

fn times() -> impl Iterator<Item = f64> {
    (0..N_FRAMES).map(|k| k as f64 * FRAME_INTERVAL)
}

/// Builds a track whose stored velocities integrate exactly to `positions`.
fn track_from_positions(id: &str, length: f64, width: f64, positions: &[Point2], rest_heading: f64) -> AgentTrack {
    let dt = FRAME_INTERVAL;
    let n = positions.len();
    let mut vel = Vec::with_capacity(n);
    for k in 0..n {
        let d = if k + 1 < n {
            positions[k + 1] - positions[k]
        } else if n > 1 {
            positions[k] - positions[k - 1]
        } else {
            Point2::ORIGIN
        };
        vel.push(d * (1.0 / dt));
    }
    let mut headings = Vec::with_capacity(n);
    let mut last = rest_heading;
    for v in &vel {
        if v.norm() > 1e-9 {
            last = v.heading();
        }
        headings.push(wrap_angle(last));
    }
    let states = (0..n)
        .map(|k| {
            let yaw_rate = if k + 1 < n { wrap_angle(headings[k + 1] - headings[k]) / dt } else { 0.0 };
            AgentState {
                frame: k as i64,
                x: positions[k].x,
                y: positions[k].y,
                theta: headings[k],
                vx: vel[k].x,
                vy: vel[k].y,
                yaw_rate,
            }
        })
        .collect();
    AgentTrack { id: id.to_string(), length, width, states }
}

/// Parallel straight lanes along +x at lateral offsets `ys`, each split at
/// `splits` into successor-connected pieces named `L{lane}_{piece}`.
fn straight_lanes(ys: &[f64], x_end: f64, splits: &[f64], width: f64) -> Vec<LaneSpec> {
    let mut cuts = vec![ROAD_START_X];
    cuts.extend(splits.iter().copied().filter(|&x| x > ROAD_START_X && x < x_end));
    cuts.push(x_end);
    let mut lanes = Vec::new();
    for (li, &y) in ys.iter().enumerate() {
        let pieces = cuts.len() - 1;
        for p in 0..pieces {
            let id = |q: usize| format!("L{li}_{q}");
            lanes.push(LaneSpec {
                id: id(p),
                centerline: vec![Point2::new(cuts[p], y), Point2::new(cuts[p + 1], y)],
                width,
                successor_ids: if p + 1 < pieces { vec![id(p + 1)] } else { vec![] },
                predecessor_ids: if p > 0 { vec![id(p - 1)] } else { vec![] },
            });
        }
    }
    lanes
}

fn goal_of(track: &AgentTrack) -> Pose2D {
    track.states.last().unwrap().pose()
}

fn assemble(
    lanes: Vec<LaneSpec>,
    agents: Vec<AgentTrack>,
    route: impl IntoIterator<Item = String>,
    traffic_lights: BTreeMap<String, BTreeMap<i64, TrafficLightState>>,
) -> Scenario {
    let goal = goal_of(&agents[0]);
    Scenario {
        id: String::new(),
        lanes,
        ego_id: agents[0].id.clone(),
        agents,
        route_lane_ids: route.into_iter().collect::<BTreeSet<_>>(),
        goal,
        traffic_lights,
        frame_interval: FRAME_INTERVAL,
    }
}

/// Green on every lane whose id starts with `lane_prefix` for the first half
/// of the log, then yellow. Lights never affect the logged motion.
fn lights_for(lanes: &[LaneSpec], lane_prefix: &str) -> BTreeMap<String, BTreeMap<i64, TrafficLightState>> {
    lanes
        .iter()
        .filter(|l| l.id.starts_with(lane_prefix))
        .map(|l| {
            let per_frame = (0..N_FRAMES as i64)
                .map(|f| (f, if f < N_FRAMES as i64 / 2 { TrafficLightState::Green } else { TrafficLightState::Yellow }))
                .collect();
            (l.id.clone(), per_frame)
        })
        .collect()
}

fn straight(rng: &mut ChaCha8Rng) -> Scenario {
    let width = rng.gen_range(3.2..3.8);
    let speed: f64 = rng.gen_range(6.0..10.0);
    let other_speed = rng.gen_range(5.0..11.0);
    let other_x0: f64 = rng.gen_range(-20.0..30.0);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let duration = (N_FRAMES - 1) as f64 * FRAME_INTERVAL;
    let x_end = 30.0 + duration * speed.max(other_speed) + other_x0.max(0.0);
    let split = rng.gen_range(40.0..80.0);
    let lanes = straight_lanes(&[0.0, side * width], x_end, &[split], width);

    let ego: Vec<Point2> = times().map(|t| Point2::new(speed * t, 0.0)).collect();
    let other: Vec<Point2> = times().map(|t| Point2::new(other_x0 + other_speed * t, side * width)).collect();
    let agents = vec![
        track_from_positions("ego", EGO_LENGTH, EGO_WIDTH, &ego, 0.0),
        track_from_positions("car1", 4.4, 1.8, &other, 0.0),
    ];
    let route: Vec<String> = lanes.iter().filter(|l| l.id.starts_with("L0_")).map(|l| l.id.clone()).collect();
    let lights = if rng.gen_bool(0.5) { lights_for(&lanes, "L0_") } else { BTreeMap::new() };
    assemble(lanes, agents, route, lights)
}

fn curve(rng: &mut ChaCha8Rng) -> Scenario {
    let width = rng.gen_range(3.2..3.8);
    let radius = rng.gen_range(70.0..120.0);
    let speed: f64 = rng.gen_range(6.0..9.0);
    let other_speed = rng.gen_range(5.0..9.0);
    let other_s0: f64 = rng.gen_range(-15.0..25.0);
    let turn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    // Left turns curve around (0, R); right turns around (0, -R). The ego lane
    // has radius R, the second lane lies on the outside.
    let center = Point2::new(0.0, turn * radius);
    let arc_point = |r: f64, s: f64| -> Point2 {
        let phi = s / radius;
        center + Point2::new(r * phi.sin(), -turn * r * phi.cos())
    };
    let duration = (N_FRAMES - 1) as f64 * FRAME_INTERVAL;
    let s_end = 30.0 + duration * speed.max(other_speed) + other_s0.max(0.0);
    let s_split = s_end / 2.0;
    let mut lanes = Vec::new();
    for (li, r) in [radius, radius + width].into_iter().enumerate() {
        for (p, (a, b)) in [(-30.0, s_split), (s_split, s_end)].into_iter().enumerate() {
            let n = ((b - a) / 1.0f64).ceil() as usize;
            let centerline = (0..=n).map(|k| arc_point(r, a + (b - a) * k as f64 / n as f64)).collect();
            let id = |q: usize| format!("L{li}_{q}");
            lanes.push(LaneSpec {
                id: id(p),
                centerline,
                width,
                successor_ids: if p == 0 { vec![id(1)] } else { vec![] },
                predecessor_ids: if p == 1 { vec![id(0)] } else { vec![] },
            });
        }
    }
    let ego: Vec<Point2> = times().map(|t| arc_point(radius, speed * t)).collect();
    let other: Vec<Point2> = times()
        .map(|t| arc_point(radius + width, (other_s0 + other_speed * t) * radius / (radius + width)))
        .collect();
    let agents = vec![
        track_from_positions("ego", EGO_LENGTH, EGO_WIDTH, &ego, 0.0),
        track_from_positions("car1", 4.4, 1.8, &other, 0.0),
    ];
    let route = ["L0_0".to_string(), "L0_1".to_string()];
    assemble(lanes, agents, route, BTreeMap::new())
}

fn lane_change(rng: &mut ChaCha8Rng) -> Scenario {
    let width = rng.gen_range(3.2..3.8);
    let speed: f64 = rng.gen_range(6.0..10.0);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let plan = LaneChangePlan {
        start_time: (4 + rng.gen_range(0..2)) as f64 * FRAME_INTERVAL,
        duration: rng.gen_range(3.5..5.0),
        offset: side * width,
    };
    let other_gap = rng.gen_range(30.0..50.0);
    let other_speed = speed + rng.gen_range(0.0..2.0);
    let duration = (N_FRAMES - 1) as f64 * FRAME_INTERVAL;
    let x_end = 30.0 + duration * other_speed + other_gap;
    let split = speed * (plan.start_time + plan.duration / 2.0);
    let lanes = straight_lanes(&[0.0, plan.offset], x_end, &[split], width);

    let ego: Vec<Point2> = times().map(|t| Point2::new(speed * t, plan.lateral(t))).collect();
    let other: Vec<Point2> = times().map(|t| Point2::new(other_gap + other_speed * t, plan.offset)).collect();
    let agents = vec![
        track_from_positions("ego", EGO_LENGTH, EGO_WIDTH, &ego, 0.0),
        track_from_positions("car1", 4.4, 1.8, &other, 0.0),
    ];
    let route = ["L0_0".to_string(), "L1_1".to_string()];
    assemble(lanes, agents, route, BTreeMap::new())
}

/// Layout of `overtake` for a given seed.
pub fn overtake_layout(seed: u64) -> OvertakeLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ScenarioKind::Overtake.salt().rotate_left(32));
    let lane_width = rng.gen_range(3.3..3.8);
    let ego_speed = rng.gen_range(9.0..11.0);
    let neighbor_speed = rng.gen_range(4.0..6.0);
    let neighbor_start_x = rng.gen_range(8.0..15.0);
    // Merge once the ego leads the neighbor by 10 m (center to center).
    let lead_gap = 10.0;
    let start_time = (neighbor_start_x + lead_gap) / (ego_speed - neighbor_speed);
    let maneuver = LaneChangePlan { start_time, duration: 4.0, offset: lane_width };
    let merge_end_x = ego_speed * (start_time + maneuver.duration);
    let stopped_x = merge_end_x + rng.gen_range(15.0..25.0);
    OvertakeLayout { ego_speed, neighbor_start_x, neighbor_speed, stopped_x, lane_width, maneuver }
}

/// The ego (lane 0) overtakes a slower neighbor in the adjacent lane and merges
/// in front of it, because a stopped vehicle blocks lane 0 further ahead.
fn overtake(lay: OvertakeLayout) -> Scenario {
    let w = lay.lane_width;
    let duration = (N_FRAMES - 1) as f64 * FRAME_INTERVAL;
    let x_end = 40.0 + duration * lay.ego_speed;
    let split = lay.ego_speed * (lay.maneuver.start_time + lay.maneuver.duration / 2.0);
    let lanes = straight_lanes(&[0.0, w], x_end, &[split], w);

    let ego: Vec<Point2> = times().map(|t| Point2::new(lay.ego_speed * t, lay.maneuver.lateral(t))).collect();
    let neighbor: Vec<Point2> =
        times().map(|t| Point2::new(lay.neighbor_start_x + lay.neighbor_speed * t, w)).collect();
    let stopped: Vec<Point2> = times().map(|_| Point2::new(lay.stopped_x, 0.0)).collect();
    let agents = vec![
        track_from_positions("ego", EGO_LENGTH, EGO_WIDTH, &ego, 0.0),
        track_from_positions("neighbor", 4.6, 1.9, &neighbor, 0.0),
        track_from_positions("stopped", 4.6, 1.9, &stopped, 0.0),
    ];
    let route = ["L0_0".to_string(), "L1_1".to_string()];
    let lights = lights_for(&lanes, "L1_");
    assemble(lanes, agents, route, lights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rects_intersect, OrientedRect};
    use crate::scene::scenario_to_json;

    fn boxes_at(s: &Scenario, k: usize) -> Vec<OrientedRect> {
        s.agents
            .iter()
            .map(|a| {
                let st = &a.states[k];
                OrientedRect::new(st.position(), st.theta, a.length / 2.0, a.width / 2.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn straight_seed0_constant_speed() {
        let s = gen_synthetic(ScenarioKind::Straight, 0);
        let ego = s.ego();
        let v0 = ego.states[0].speed();
        assert!(v0 > 0.0);
        for st in &ego.states {
            assert_eq!(st.theta, ego.states[0].theta);
            assert!((st.speed() - v0).abs() < 1e-9);
            assert_eq!(st.y, 0.0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in ScenarioKind::ALL {
            assert_eq!(scenario_to_json(&gen_synthetic(kind, 7)), scenario_to_json(&gen_synthetic(kind, 7)));
            assert_ne!(scenario_to_json(&gen_synthetic(kind, 7)), scenario_to_json(&gen_synthetic(kind, 8)));
        }
    }

    #[test]
    fn tracks_kinematically_consistent() {
        for kind in ScenarioKind::ALL {
            for seed in 0..5 {
                let s = gen_synthetic(kind, seed);
                s.validate().unwrap();
                for a in &s.agents {
                    assert_eq!(a.states.len(), N_FRAMES);
                    for w in a.states.windows(2) {
                        assert!((w[1].x - w[0].x - w[0].vx * s.frame_interval).abs() < 1e-6);
                        assert!((w[1].y - w[0].y - w[0].vy * s.frame_interval).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn lane_change_moves_one_lane() {
        let s = gen_synthetic(ScenarioKind::LaneChange, 3);
        let ego = s.ego();
        let width = s.lanes[0].width;
        let dy = (ego.states.last().unwrap().y - ego.states[0].y).abs();
        assert!(dy >= width - 1e-9, "lateral {dy} < width {width}");
    }

    #[test]
    fn overtake_layout_properties() {
        for seed in 0..20 {
            let s = gen_synthetic(ScenarioKind::Overtake, seed);
            assert!(s.agents.len() >= 2);
            let ego = s.ego();
            let nb = s.agent("neighbor").unwrap();
            // adjacent lanes at the start, ego behind and faster
            assert!((nb.states[0].y - ego.states[0].y).abs() > 3.0);
            assert!(nb.states[0].x > ego.states[0].x);
            assert!(ego.states[0].speed() > nb.states[0].speed());
        }
    }

    #[test]
    fn logs_are_collision_free() {
        for kind in ScenarioKind::ALL {
            for seed in 0..10 {
                let s = gen_synthetic(kind, seed);
                for k in 0..N_FRAMES {
                    let b = boxes_at(&s, k);
                    for i in 0..b.len() {
                        for j in i + 1..b.len() {
                            assert!(!rects_intersect(&b[i], &b[j]), "{} frame {k}: {i} vs {j}", s.id);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("lane_change".parse::<ScenarioKind>().unwrap(), ScenarioKind::LaneChange);
        assert!("zigzag".parse::<ScenarioKind>().is_err());
    }
}
