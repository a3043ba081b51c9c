//! Closed-loop replay: the ego follows its own plans with perfect tracking,
//! every other agent replays its log, and an auto-correction brakes the ego
//! to a stop before a collision or a road departure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rects_intersect, wrap_angle, OrientedRect, Point2};
use crate::graph::{build_lane_graph, build_tofg_on, vehicle_boxes, GraphConfig, GraphError, LaneGraph};
use crate::metrics::{plan_metrics, MetricsConfig, MetricsError, PlanReport, RouteIndex};
use crate::model::{ModelError, TofgGat};
use crate::scene::{state_at, AgentState, AgentTrack, Pose2D, Scenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("scenario {scenario}: ego log covers frames {first}..={last}, simulation needs {need_first}..={need_last}")]
    TooShort { scenario: String, first: i64, last: i64, need_first: i64, need_last: i64 },
    #[error("planner returned {got} waypoints, expected {expected}")]
    PlanLength { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulated seconds after the first replan.
    pub duration: f64,
    /// Seconds between replans; a multiple of the scenario frame interval.
    pub replan_interval: f64,
    /// Observed frames before the first replan.
    pub history: usize,
    pub collision_check: bool,
    pub off_road_check: bool,
    /// Deceleration in m/s² while the auto-correction is active.
    pub brake_decel: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 20.0,
            replan_interval: 0.5,
            history: 5,
            collision_check: true,
            off_road_check: true,
            brake_decel: 4.0,
        }
    }
}

fn frames_in(seconds: f64, dt: f64, what: &str) -> Result<usize, SimError> {
    let n = (seconds / dt).round();
    if !(seconds > 0.0) || n < 1.0 || (n * dt - seconds).abs() > 1e-9 {
        return Err(SimError::Config(format!("{what} {seconds} s is not a positive multiple of the frame interval {dt} s")));
    }
    Ok(n as usize)
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0) || !(self.replan_interval > 0.0) {
            return Err(SimError::Config("duration and replan_interval must be > 0".into()));
        }
        if self.history == 0 {
            return Err(SimError::Config("history must be >= 1".into()));
        }
        if !(self.brake_decel > 0.0) {
            return Err(SimError::Config(format!("brake_decel must be > 0, got {}", self.brake_decel)));
        }
        Ok(())
    }
}

/// What a planner sees at a replan.
pub struct PlanContext<'a> {
    /// The scenario with the ego track replaced by the driven states up to `frame`.
    pub world: &'a Scenario,
    /// The original log, future included. Only reference planners read it.
    pub log: &'a Scenario,
    pub lane_graph: &'a LaneGraph,
    pub frame: i64,
    pub ego: &'a AgentState,
}

/// Produces `horizon()` world-frame waypoints, one per frame interval after
/// `ctx.frame`.
pub trait Planner: Sync {
    fn horizon(&self) -> usize;
    /// Observed frames the planner needs, if it has a fixed requirement.
    fn history(&self) -> Option<usize> {
        None
    }
    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<Point2>, SimError>;
}

/// Replans with a trained model.
pub struct ModelPlanner<'m> {
    pub model: &'m TofgGat,
    pub graph: GraphConfig,
}

impl Planner for ModelPlanner<'_> {
    fn horizon(&self) -> usize {
        self.model.config().horizon
    }

    fn history(&self) -> Option<usize> {
        Some(self.model.config().history)
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<Point2>, SimError> {
        let t = self.model.config().history as i64;
        let tofg = build_tofg_on(ctx.lane_graph, ctx.world, ctx.frame - t + 1..=ctx.frame, &self.graph)?;
        Ok(self.model.predict(&tofg)?.waypoints)
    }
}

/// Returns the logged ego future; the last logged position repeats past the end of the log.
pub struct ExpertPlanner {
    pub horizon: usize,
}

impl Planner for ExpertPlanner {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<Point2>, SimError> {
        let track = ctx.log.ego();
        let last = track.states.last().map(|s| s.position()).unwrap_or(ctx.ego.position());
        Ok((1..=self.horizon as i64)
            .map(|k| state_at(track, ctx.frame + k).map(|s| s.position()).unwrap_or(last))
            .collect())
    }
}

/// Never moves.
pub struct StationaryPlanner {
    pub horizon: usize,
}

impl Planner for StationaryPlanner {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<Point2>, SimError> {
        Ok(vec![ctx.ego.position(); self.horizon])
    }
}

/// Drives straight along the current heading at the current speed.
pub struct ConstantSpeedPlanner {
    pub horizon: usize,
}

impl Planner for ConstantSpeedPlanner {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn plan(&self, ctx: &PlanContext<'_>) -> Result<Vec<Point2>, SimError> {
        let dir = Point2::new(ctx.ego.theta.cos(), ctx.ego.theta.sin());
        let step = ctx.ego.speed() * ctx.world.frame_interval;
        Ok((1..=self.horizon).map(|k| ctx.ego.position() + dir * (step * k as f64)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionCause {
    Collision,
    OffRoad,
}

/// Onset of the auto-correction: the placement at `frame` was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoCorrection {
    pub frame: i64,
    pub cause: CorrectionCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub frame: i64,
    pub waypoints: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scenario_id: String,
    pub start_frame: i64,
    pub frame_interval: f64,
    /// Ego states at `start_frame ..= start_frame + duration / frame_interval`.
    pub driven: Vec<AgentState>,
    pub plans: Vec<PlanRecord>,
    pub events: Vec<AutoCorrection>,
    /// Every other agent's log over the simulated frames.
    pub replayed: Vec<AgentTrack>,
}

impl SimTrace {
    pub fn end_frame(&self) -> i64 {
        self.start_frame + self.driven.len() as i64 - 1
    }

    pub fn driven_poses(&self) -> Vec<Pose2D> {
        self.driven.iter().map(AgentState::pose).collect()
    }

    /// Logged ego poses over the simulated frames.
    pub fn expert_poses(&self, scenario: &Scenario) -> Vec<Pose2D> {
        (self.start_frame..=self.end_frame())
            .filter_map(|f| state_at(scenario.ego(), f).map(AgentState::pose))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Position `tau` seconds after `origin` on a plan whose waypoints are `dt` apart.
fn plan_position(origin: Point2, waypoints: &[Point2], dt: f64, tau: f64) -> Point2 {
    let s = (tau / dt).max(0.0);
    let k = s.floor() as usize;
    let at = |j: usize| if j == 0 { origin } else { waypoints[(j - 1).min(waypoints.len() - 1)] };
    let frac = s - k as f64;
    if frac < 1e-12 {
        at(k)
    } else {
        at(k).lerp(at(k + 1), frac)
    }
}

fn off_road(lane_graph: &LaneGraph, p: Point2) -> bool {
    !lane_graph.nodes.iter().any(|n| n.segment.distance_to(p) <= n.width / 2.0 + 1e-9)
}

fn with_ego_track(scenario: &Scenario, ego: &AgentTrack) -> Scenario {
    let mut world = scenario.clone();
    let i = world.ego_index();
    world.agents[i] = ego.clone();
    world
}

/// Simulates `config.duration` seconds starting at the first frame with a full
/// history.
pub fn run(scenario: &Scenario, planner: &dyn Planner, config: &SimConfig) -> Result<SimTrace, SimError> {
    config.validate()?;
    let dt = scenario.frame_interval;
    let n_frames = frames_in(config.duration, dt, "duration")?;
    let every = frames_in(config.replan_interval, dt, "replan_interval")?;
    if planner.horizon() < every {
        return Err(SimError::Config(format!(
            "planner horizon {} frames is shorter than the replan interval of {every} frames",
            planner.horizon()
        )));
    }
    if let Some(h) = planner.history() {
        if h != config.history {
            return Err(SimError::Config(format!("planner needs history {h}, simulation uses {}", config.history)));
        }
    }
    let log_ego = scenario.ego();
    let start = log_ego.first_frame() + config.history as i64 - 1;
    let end = start + n_frames as i64;
    if end > log_ego.last_frame() {
        return Err(SimError::TooShort {
            scenario: scenario.id.clone(),
            first: log_ego.first_frame(),
            last: log_ego.last_frame(),
            need_first: log_ego.first_frame(),
            need_last: end,
        });
    }
    let lane_graph = build_lane_graph(scenario, GraphConfig::default().target_len)?;
    let ego_idx = scenario.ego_index();
    let (half_l, half_w) = (log_ego.length / 2.0, log_ego.width / 2.0);

    let mut ego_track = AgentTrack {
        states: log_ego.states.iter().filter(|s| s.frame <= start).copied().collect(),
        ..log_ego.clone()
    };
    let mut plans: Vec<PlanRecord> = Vec::new();
    let mut events = Vec::new();
    let mut braking: Option<f64> = None;
    let mut plan_origin = (start, Point2::ORIGIN);
    let mut waypoints: Vec<Point2> = Vec::new();

    for f in start..end {
        let cur = *ego_track.states.last().expect("history is non-empty");
        if braking.is_none() && (f - start) as usize % every == 0 {
            let world = with_ego_track(scenario, &ego_track);
            let ctx = PlanContext { world: &world, log: scenario, lane_graph: &lane_graph, frame: f, ego: &cur };
            waypoints = planner.plan(&ctx)?;
            if waypoints.len() != planner.horizon() {
                return Err(SimError::PlanLength { expected: planner.horizon(), got: waypoints.len() });
            }
            plan_origin = (f, cur.position());
            plans.push(PlanRecord { frame: f, waypoints: waypoints.clone() });
        }
        let at = |g: i64| plan_position(plan_origin.1, &waypoints, dt, (g - plan_origin.0) as f64 * dt);

        let mut next = if let Some(speed) = braking {
            let v = (speed - config.brake_decel * dt).max(0.0);
            let dist = 0.5 * (speed + v) * dt;
            braking = Some(v);
            cur.position() + Point2::new(cur.theta.cos(), cur.theta.sin()) * dist
        } else {
            at(f + 1)
        };

        if braking.is_none() {
            let d = next - cur.position();
            let heading = if d.norm() > 1e-9 { d.heading() } else { cur.theta };
            let collides = config.collision_check && {
                let ego_box = OrientedRect::new(next, heading, half_l, half_w).expect("valid ego size");
                vehicle_boxes(scenario, f + 1).iter().any(|(i, b)| *i != ego_idx && rects_intersect(&ego_box, b))
            };
            let cause = if collides {
                Some(CorrectionCause::Collision)
            } else if config.off_road_check && off_road(&lane_graph, next) {
                Some(CorrectionCause::OffRoad)
            } else {
                None
            };
            if let Some(cause) = cause {
                log::info!("{}: auto-correction at frame {} ({cause:?})", scenario.id, f + 1);
                events.push(AutoCorrection { frame: f + 1, cause });
                let speed = cur.speed();
                let v = (speed - config.brake_decel * dt).max(0.0);
                braking = Some(v);
                next = cur.position() + Point2::new(cur.theta.cos(), cur.theta.sin()) * (0.5 * (speed + v) * dt);
            }
        }

        // Forward-difference velocity toward the following placement when the
        // active plan already covers it.
        let vel = match braking {
            Some(v) => Point2::new(cur.theta.cos(), cur.theta.sin()) * v,
            None if f + 2 <= plan_origin.0 + waypoints.len() as i64 => (at(f + 2) - next) * (1.0 / dt),
            None => (next - cur.position()) * (1.0 / dt),
        };
        let theta = if vel.norm() > 1e-9 { wrap_angle(vel.heading()) } else { cur.theta };
        ego_track.states.push(AgentState {
            frame: f + 1,
            x: next.x,
            y: next.y,
            theta,
            vx: vel.x,
            vy: vel.y,
            yaw_rate: wrap_angle(theta - cur.theta) / dt,
        });
    }

    let driven = ego_track.states.iter().filter(|s| s.frame >= start).copied().collect();
    let replayed = scenario
        .agents
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ego_idx)
        .map(|(_, a)| AgentTrack {
            states: a.states.iter().filter(|s| (start..=end).contains(&s.frame)).copied().collect(),
            ..a.clone()
        })
        .collect();
    Ok(SimTrace { scenario_id: scenario.id.clone(), start_frame: start, frame_interval: dt, driven, plans, events, replayed })
}

/// Planning metrics of a finished run against the scenario's log.
pub fn evaluate(scenario: &Scenario, trace: &SimTrace, metrics: &MetricsConfig) -> Result<PlanReport, SimError> {
    metrics.validate()?;
    let route = RouteIndex::new(scenario, GraphConfig::default().target_len)?;
    Ok(plan_metrics(&trace.driven_poses(), &trace.expert_poses(scenario), &scenario.goal, &route, metrics.w_theta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario_id: String,
    pub report: PlanReport,
    pub auto_corrections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub scenario_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// One row per successful scenario, in input order.
    pub rows: Vec<ScenarioRow>,
    /// Field-wise mean of `rows`; `None` when every scenario failed.
    pub mean: Option<PlanReport>,
    pub failures: Vec<BatchFailure>,
}

impl BatchReport {
    pub fn total_auto_corrections(&self) -> usize {
        self.rows.iter().map(|r| r.auto_corrections).sum()
    }

    /// One row per scenario plus a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("scenario_id,auto_corrections,{}\n", PlanReport::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.scenario_id, r.auto_corrections, r.report.csv_fields()));
        }
        if let Some(m) = &self.mean {
            let n = self.rows.len().max(1) as f64;
            out.push_str(&format!("mean,{},{}\n", self.total_auto_corrections() as f64 / n, m.csv_fields()));
        }
        out
    }
}

/// Runs and scores every scenario in parallel. Failures are collected with
/// their scenario id and do not stop the batch.
pub fn batch_eval(
    scenarios: &[Scenario],
    planner: &dyn Planner,
    config: &SimConfig,
    metrics: &MetricsConfig,
) -> Result<BatchReport, SimError> {
    if scenarios.is_empty() {
        return Err(SimError::Config("batch needs at least one scenario".into()));
    }
    config.validate()?;
    metrics.validate()?;
    let results: Vec<Result<ScenarioRow, SimError>> = scenarios
        .par_iter()
        .map(|s| {
            let trace = run(s, planner, config)?;
            let report = evaluate(s, &trace, metrics)?;
            Ok(ScenarioRow { scenario_id: s.id.clone(), report, auto_corrections: trace.events.len() })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in scenarios.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("scenario {}: {e}", s.id);
                failures.push(BatchFailure { scenario_id: s.id.clone(), error: e.to_string() });
            }
        }
    }
    let mean = PlanReport::mean(&rows.iter().map(|r| r.report).collect::<Vec<_>>());
    Ok(BatchReport { rows, mean, failures })
}
