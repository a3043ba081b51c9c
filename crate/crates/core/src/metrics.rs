//! Open-loop prediction errors and closed-loop planning metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Point2, Segment};
use crate::graph::{build_lane_graph, GraphError};
use crate::scene::{Pose2D, Scenario};

/// Default weight of the heading term in the L2-to-expert metric.
pub const W_THETA: f64 = 2.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right} states")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {min} states, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("invalid metrics config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Weight of the heading term in the L2-to-expert metric.
    pub w_theta: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { w_theta: W_THETA }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.w_theta >= 0.0 && self.w_theta.is_finite()) {
            return Err(MetricsError::Config(format!("w_theta must be finite and >= 0, got {}", self.w_theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredReport {
    pub ade: f64,
    pub fde: f64,
    pub ahe: f64,
    pub fhe: f64,
}

/// Displacement and wrapped heading errors between equal-length pose sequences.
pub fn pred_metrics(pred: &[Pose2D], truth: &[Pose2D]) -> Result<PredReport, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::TooShort { min: 1, got: 0 });
    }
    let d: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p.position().distance(t.position())).collect();
    let a: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| wrap_angle(p.theta - t.theta).abs()).collect();
    let n = pred.len() as f64;
    Ok(PredReport {
        ade: d.iter().sum::<f64>() / n,
        fde: *d.last().expect("non-empty"),
        ahe: a.iter().sum::<f64>() / n,
        fhe: *a.last().expect("non-empty"),
    })
}

/// Headings for position-only waypoints: heading `k` is the direction from
/// waypoint `k` to `k + 1`, the last repeats the previous one, and a single
/// waypoint takes the direction from `start`. Zero-length steps keep the
/// previous heading (`start_heading` before the first).
pub fn headings_from_waypoints(start: Point2, start_heading: f64, waypoints: &[Point2]) -> Vec<f64> {
    let n = waypoints.len();
    let dir = |a: Point2, b: Point2, prev: f64| {
        let d = b - a;
        if d.norm() < 1e-9 {
            prev
        } else {
            d.heading()
        }
    };
    if n == 1 {
        return vec![dir(start, waypoints[0], start_heading)];
    }
    let mut out = Vec::with_capacity(n);
    let mut prev = start_heading;
    for k in 0..n.saturating_sub(1) {
        prev = dir(waypoints[k], waypoints[k + 1], prev);
        out.push(prev);
    }
    if n > 1 {
        out.push(prev);
    }
    out
}

pub fn poses_from_waypoints(start: Pose2D, waypoints: &[Point2]) -> Vec<Pose2D> {
    headings_from_waypoints(start.position(), start.theta, waypoints)
        .into_iter()
        .zip(waypoints)
        .map(|(theta, p)| Pose2D { x: p.x, y: p.y, theta })
        .collect()
}

/// Sum, maximum and mean of a per-step error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub sum: f64,
    pub max: f64,
    pub mean: f64,
}

impl ErrorStats {
    fn of(values: &[f64]) -> Self {
        let sum: f64 = values.iter().sum();
        let max = values.iter().copied().fold(0.0, f64::max);
        Self { sum, max, mean: sum / values.len() as f64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    /// Per-step `‖Δp‖ + w_theta·|Δθ|` against the expert.
    pub l2: ErrorStats,
    /// Per-step `‖Δp‖` only.
    pub l2_position: ErrorStats,
    pub dist2goal_min: f64,
    pub dist2goal_max: f64,
    pub dist2goal_mean: f64,
    /// Start-to-goal distance minus end-to-goal distance.
    pub prog2goal: f64,
    /// `prog2goal` over the expert's; `None` when the expert makes no progress.
    pub prog2goal_ratio: Option<f64>,
    /// Path length driven while on the expert route.
    pub prog2exp: f64,
    /// `prog2exp` over the expert's total path length.
    pub prog2exp_ratio: Option<f64>,
}

impl PlanReport {
    pub const CSV_HEADER: &'static str = "l2_sum,l2_max,l2_mean,l2_pos_sum,l2_pos_max,l2_pos_mean,\
dist2goal_min,dist2goal_max,dist2goal_mean,prog2goal,prog2goal_ratio,prog2exp,prog2exp_ratio";

    pub fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.l2.sum,
            self.l2.max,
            self.l2.mean,
            self.l2_position.sum,
            self.l2_position.max,
            self.l2_position.mean,
            self.dist2goal_min,
            self.dist2goal_max,
            self.dist2goal_mean,
            self.prog2goal,
            opt(self.prog2goal_ratio),
            self.prog2exp,
            opt(self.prog2exp_ratio)
        )
    }

    /// Field-wise mean; ratios average over the reports that have them.
    pub fn mean(reports: &[PlanReport]) -> Option<PlanReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&PlanReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&PlanReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let stats = |f: &dyn Fn(&PlanReport) -> ErrorStats| ErrorStats {
            sum: avg(&|r| f(r).sum),
            max: avg(&|r| f(r).max),
            mean: avg(&|r| f(r).mean),
        };
        Some(PlanReport {
            l2: stats(&|r| r.l2),
            l2_position: stats(&|r| r.l2_position),
            dist2goal_min: avg(&|r| r.dist2goal_min),
            dist2goal_max: avg(&|r| r.dist2goal_max),
            dist2goal_mean: avg(&|r| r.dist2goal_mean),
            prog2goal: avg(&|r| r.prog2goal),
            prog2goal_ratio: avg_opt(&|r| r.prog2goal_ratio),
            prog2exp: avg(&|r| r.prog2exp),
            prog2exp_ratio: avg_opt(&|r| r.prog2exp_ratio),
        })
    }
}

/// Lane segments tagged with whether their lane counts as the expert route:
/// a route lane or a direct successor/predecessor of one.
#[derive(Debug, Clone)]
pub struct RouteIndex {
    segments: Vec<(Segment, bool)>,
}

impl RouteIndex {
    pub fn new(scenario: &Scenario, target_len: f64) -> Result<Self, MetricsError> {
        let route = &scenario.route_lane_ids;
        let mut accepted: BTreeSet<&str> = route.iter().map(String::as_str).collect();
        for lane in &scenario.lanes {
            let on = route.contains(&lane.id);
            let links_route = lane.successor_ids.iter().chain(&lane.predecessor_ids).any(|l| route.contains(l));
            if on {
                accepted.extend(lane.successor_ids.iter().chain(&lane.predecessor_ids).map(String::as_str));
            } else if links_route {
                accepted.insert(&lane.id);
            }
        }
        let lg = build_lane_graph(scenario, target_len)?;
        let segments = lg.nodes.iter().map(|n| (n.segment, accepted.contains(n.lane_id.as_str()))).collect();
        Ok(Self { segments })
    }

    /// Whether the lane segment nearest to `p` is on the route (ties: first segment).
    pub fn on_route(&self, p: Point2) -> bool {
        let mut best = (f64::INFINITY, false);
        for (seg, on) in &self.segments {
            let d = seg.distance_to(p);
            if d < best.0 {
                best = (d, *on);
            }
        }
        best.1
    }
}

fn prog2goal(states: &[Pose2D], goal: Point2) -> f64 {
    let first = states.first().expect("non-empty").position();
    let last = states.last().expect("non-empty").position();
    first.distance(goal) - last.distance(goal)
}

fn path_length(states: &[Pose2D], keep: impl Fn(Point2) -> bool) -> f64 {
    states
        .windows(2)
        .filter(|w| keep(w[1].position()))
        .map(|w| w[0].position().distance(w[1].position()))
        .sum()
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Planning metrics of a driven run against the expert log, both sampled at
/// the same `T_s + 1` instants.
pub fn plan_metrics(
    driven: &[Pose2D],
    expert: &[Pose2D],
    goal: &Pose2D,
    route: &RouteIndex,
    w_theta: f64,
) -> Result<PlanReport, MetricsError> {
    if driven.len() != expert.len() {
        return Err(MetricsError::LengthMismatch { left: driven.len(), right: expert.len() });
    }
    if driven.len() < 2 {
        return Err(MetricsError::TooShort { min: 2, got: driven.len() });
    }
    let pos: Vec<f64> = driven.iter().zip(expert).map(|(d, e)| d.position().distance(e.position())).collect();
    let with_yaw: Vec<f64> = driven
        .iter()
        .zip(expert)
        .zip(&pos)
        .map(|((d, e), p)| p + w_theta * wrap_angle(d.theta - e.theta).abs())
        .collect();
    let g = goal.position();
    let to_goal: Vec<f64> = driven.iter().map(|d| d.position().distance(g)).collect();
    let prog = prog2goal(driven, g);
    let on_route = path_length(driven, |p| route.on_route(p));
    Ok(PlanReport {
        l2: ErrorStats::of(&with_yaw),
        l2_position: ErrorStats::of(&pos),
        dist2goal_min: to_goal.iter().copied().fold(f64::INFINITY, f64::min),
        dist2goal_max: to_goal.iter().copied().fold(0.0, f64::max),
        dist2goal_mean: to_goal.iter().sum::<f64>() / to_goal.len() as f64,
        prog2goal: prog,
        prog2goal_ratio: ratio(prog, prog2goal(expert, g)),
        prog2exp: on_route,
        prog2exp_ratio: ratio(on_route, path_length(expert, |_| true)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_derivation() {
        let w = [Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)];
        let h = headings_from_waypoints(Point2::ORIGIN, 0.3, &w);
        let q = std::f64::consts::FRAC_PI_2;
        assert_eq!(h, vec![q, q, q]);
        assert_eq!(headings_from_waypoints(Point2::ORIGIN, 0.3, &[Point2::new(0.0, -2.0)]), vec![-q]);
        assert_eq!(headings_from_waypoints(Point2::ORIGIN, 0.3, &[Point2::ORIGIN]), vec![0.3]);
    }

    #[test]
    fn mean_of_one_is_itself() {
        let s = ErrorStats { sum: 1.0, max: 2.0, mean: 0.5 };
        let r = PlanReport {
            l2: s,
            l2_position: s,
            dist2goal_min: 1.0,
            dist2goal_max: 3.0,
            dist2goal_mean: 2.0,
            prog2goal: 4.0,
            prog2goal_ratio: None,
            prog2exp: 5.0,
            prog2exp_ratio: Some(0.5),
        };
        assert_eq!(PlanReport::mean(&[r]), Some(r));
        assert_eq!(r.csv_fields().split(',').count(), PlanReport::CSV_HEADER.split(',').count());
    }
}
