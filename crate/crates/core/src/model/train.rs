use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GraphInput, ModelConfig, ModelError, TofgGat};
use crate::geometry::Point2;
use crate::graph::{build_lane_graph, build_tofg_on, GraphConfig, LaneGraph};
use crate::nn::{AdamConfig, Gradients};
use crate::scene::{state_at, AgentState, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Frames between consecutive training windows cut from one scenario.
    pub sample_stride: usize,
    /// When set, the learning rate follows a cosine from `lr` at the first
    /// epoch down to `lr_end` at the last; otherwise it stays at `lr`.
    pub lr_end: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 60, batch: 3, lr: 1e-5, seed: 0, sample_stride: 4, lr_end: None }
    }
}

impl TrainConfig {
    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_end {
            Some(end) if self.epochs > 1 => {
                let frac = epoch as f64 / (self.epochs - 1) as f64;
                end + 0.5 * (self.lr - end) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            _ => self.lr,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch == 0 || self.sample_stride == 0 {
            return Err(ModelError::Config("batch and sample_stride must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(ModelError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if let Some(end) = self.lr_end {
            if !(end >= 0.0 && end <= self.lr) {
                return Err(ModelError::Config(format!("lr_end must be in [0, lr], got {end}")));
            }
        }
        Ok(())
    }
}

/// One training or evaluation example: the graph input over frames
/// `frame - T + 1 ..= frame` and the ego's logged positions at
/// `frame + 1 ..= frame + H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scenario_id: String,
    pub frame: i64,
    pub input: GraphInput,
    pub truth: Vec<Point2>,
    /// `truth` minus the input origin.
    pub truth_rel: Vec<Point2>,
}

/// Window end frames `t` with a full history and horizon of ego states,
/// from the earliest one in steps of `stride`.
pub fn sample_frames(scenario: &Scenario, history: usize, horizon: usize, stride: usize) -> Result<Vec<i64>, ModelError> {
    let ego = scenario.ego();
    let (first, last) = (ego.first_frame(), ego.last_frame());
    let start = first + history as i64 - 1;
    let end = last - horizon as i64;
    if history == 0 || horizon == 0 || start > end {
        return Err(ModelError::TooShort { scenario: scenario.id.clone(), first, last, history, horizon });
    }
    Ok((start..=end).step_by(stride.max(1)).collect())
}

pub fn make_sample(
    scenario: &Scenario,
    lane_graph: &LaneGraph,
    frame: i64,
    graph: &GraphConfig,
    model: &ModelConfig,
) -> Result<Sample, ModelError> {
    let (t, h) = (model.history as i64, model.horizon as i64);
    let ego = scenario.ego();
    let too_short = || ModelError::TooShort {
        scenario: scenario.id.clone(),
        first: ego.first_frame(),
        last: ego.last_frame(),
        history: model.history,
        horizon: model.horizon,
    };
    let truth: Vec<Point2> = (frame + 1..=frame + h)
        .map(|f| state_at(ego, f).map(|s| s.position()))
        .collect::<Option<_>>()
        .ok_or_else(too_short)?;
    let tofg = build_tofg_on(lane_graph, scenario, frame - t + 1..=frame, graph)?;
    let input = GraphInput::from_tofg(&tofg, model.history)?;
    let truth_rel = truth.iter().map(|&p| p - input.origin).collect();
    Ok(Sample { scenario_id: scenario.id.clone(), frame, input, truth, truth_rel })
}

/// Samples at every window end `sample_frames(.., stride)` yields.
pub fn make_samples(
    scenario: &Scenario,
    graph: &GraphConfig,
    model: &ModelConfig,
    stride: usize,
) -> Result<Vec<Sample>, ModelError> {
    let lg = build_lane_graph(scenario, graph.target_len)?;
    sample_frames(scenario, model.history, model.horizon, stride)?
        .into_iter()
        .map(|f| make_sample(scenario, &lg, f, graph, model))
        .collect()
}

/// Sum over steps of the Euclidean distance between matching waypoints.
pub fn imitation_loss(pred: &[Point2], truth: &[Point2]) -> Result<f64, ModelError> {
    if pred.len() != truth.len() {
        return Err(ModelError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| a.distance(*b)).sum())
}

/// Positions `k * dt` seconds ahead at the state's velocity, `k = 1..=horizon`.
pub fn constant_velocity_baseline(state: &AgentState, dt: f64, horizon: usize) -> Vec<Point2> {
    let v = Point2::new(state.vx, state.vy);
    (1..=horizon).map(|k| state.position() + v * (k as f64 * dt)).collect()
}

/// Minibatch Adam on the mean imitation loss. Per-sample gradients are
/// computed in parallel and summed in batch order, so results depend only on
/// `cfg.seed`. Returns the mean training loss of each epoch.
pub fn train(model: &mut TofgGat, corpus: &[Sample], cfg: &TrainConfig) -> Result<Vec<f64>, ModelError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let adam = AdamConfig { lr: cfg.lr_at(epoch), ..Default::default() };
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let m = &*model;
            let results: Vec<Result<(f64, Gradients), ModelError>> =
                chunk.par_iter().map(|&i| m.loss_and_grads(&corpus[i].input, &corpus[i].truth_rel)).collect();
            let mut acc = Gradients::zeros_like(model.params());
            for r in results {
                let (loss, g) = r?;
                total += loss;
                acc.add_assign(&g);
            }
            acc.scale(1.0 / chunk.len() as f64);
            model.params_mut().set_grads(acc)?;
            model.params_mut().adam_step(&adam)?;
        }
        let mean = total / corpus.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}
