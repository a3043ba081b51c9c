//! TOFG-GAT: node embedding MLP, residual graph attention over the fused
//! edge set, ego-query cross-attention and an MLP decoder emitting `H`
//! waypoints relative to the ego's last observed position.

mod features;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::graph::{GraphError, Tofg};
use crate::nn::{gat, CrossAttention, Gradients, Matrix, Mlp, NnError, ParamEntry, ParamId, ParamStore, Tape, Var};

pub use features::{ego_feature, AttendedNode, GraphInput, NodeFeature, EGO_FEATURES, NODE_FEATURES};
pub use train::{
    constant_velocity_baseline, imitation_loss, make_sample, make_samples, sample_frames, train, Sample,
    TrainConfig,
};

/// Decoder outputs are in units of this many meters.
pub const OUTPUT_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("graph has {got} frames, model history is {expected}")]
    FrameCount { expected: usize, got: usize },
    #[error("ego not observed at frame {frame}")]
    MissingEgo { frame: i64 },
    #[error("graph has no nodes at frame {frame}")]
    EmptyGraph { frame: i64 },
    #[error("trajectory length mismatch: {pred} predicted vs {truth} ground truth")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("scenario {scenario}: frames {first}..={last} cannot hold history {history} and horizon {horizon}")]
    TooShort { scenario: String, first: i64, last: i64, history: usize, horizon: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_gat_layers: usize,
    pub n_head: usize,
    /// Predicted waypoints `H`.
    pub horizon: usize,
    /// Observed frames `T`.
    pub history: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 64, n_gat_layers: 3, n_head: 4, horizon: 12, history: 5, mlp_hidden: 64, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.mlp_hidden == 0 {
            return bad("embed_dim and mlp_hidden must be positive".into());
        }
        if self.n_head == 0 || self.embed_dim % self.n_head != 0 {
            return bad(format!("embed_dim {} is not divisible by n_head {}", self.embed_dim, self.n_head));
        }
        if self.horizon == 0 || self.history == 0 {
            return bad("horizon and history must be >= 1".into());
        }
        Ok(())
    }
}

/// Cross-attention weights over the last frame's nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub frame: i64,
    pub nodes: Vec<AttendedNode>,
    /// `heads[h][k]`: weight of head `h` on `nodes[k]`.
    pub heads: Vec<Vec<f64>>,
    /// Head average per node.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// World-frame waypoints, one per future step.
    pub waypoints: Vec<Point2>,
    /// The same waypoints relative to the ego's last observed position.
    pub relative: Vec<Point2>,
    pub attention: AttentionMap,
}

/// Node and ego embeddings after the graph layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub nodes: Matrix,
    pub ego: Matrix,
}

struct Forward {
    nodes: Var,
    ego: Var,
    /// `[H × 2]` relative waypoints in meters.
    out: Var,
    weights: Vec<Var>,
}

/// Serialized model: config plus named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: BTreeMap<String, ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct TofgGat {
    config: ModelConfig,
    store: ParamStore,
    embed: Mlp,
    ego: Mlp,
    gat: Vec<(ParamId, ParamId)>,
    attn: CrossAttention,
    decoder: Mlp,
}

impl TofgGat {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d, h) = (config.embed_dim, config.mlp_hidden);
        let embed = Mlp::init(&mut store, "embed", &[NODE_FEATURES, h, d], &mut rng)?;
        let ego = Mlp::init(&mut store, "ego", &[EGO_FEATURES, h, d], &mut rng)?;
        let mut gat = Vec::with_capacity(config.n_gat_layers);
        for k in 0..config.n_gat_layers {
            let w1 = store.add(&format!("gat.{k}.w1"), Matrix::uniform(2 * d, d, 2 * d, &mut rng))?;
            let w2 = store.add(&format!("gat.{k}.w2"), Matrix::uniform(d, d, d, &mut rng))?;
            gat.push((w1, w2));
        }
        let attn = CrossAttention::init(&mut store, "attn", d, config.n_head, &mut rng)?;
        let decoder = Mlp::init(&mut store, "dec", &[d, h, 2 * config.horizon], &mut rng)?;
        Ok(Self { config, store, embed, ego, gat, attn, decoder })
    }

    /// Model with the given parameter values; names and shapes must match.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self, ModelError> {
        let mut m = Self::new(config)?;
        if params.len() != m.store.len() {
            return Err(ModelError::Nn(NnError::Checkpoint(format!(
                "{} parameters, model expects {}",
                params.len(),
                m.store.len()
            ))));
        }
        m.store.load_values_from(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { model: self.config.clone(), params: self.store.to_entries() }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let store = ParamStore::from_entries(&ck.params)?;
        Self::from_params(ck.model.clone(), &store)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(&self.checkpoint()).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ModelError::Nn(NnError::Checkpoint(format!("{}: {e}", path.display()))))?;
        Self::from_checkpoint(&ck)
    }

    fn forward(&self, tape: &mut Tape, input: &GraphInput) -> Result<Forward, ModelError> {
        let x = tape.constant(input.features.clone());
        let mut h = self.embed.forward(tape, x)?;
        for &(w1, w2) in &self.gat {
            let (w1, w2) = (tape.param(w1), tape.param(w2));
            h = gat(tape, h, &input.edges, w1, w2)?;
        }
        let e = tape.constant(input.ego.clone());
        let ego = self.ego.forward(tape, e)?;
        let last = tape.slice_rows(h, input.last_rows.start, input.last_rows.end)?;
        let (y_att, weights) = self.attn.forward(tape, ego, last)?;
        let y = tape.add(y_att, ego)?;
        let raw = self.decoder.forward(tape, y)?;
        let scaled = tape.scale(raw, OUTPUT_SCALE);
        let out = tape.reshape(scaled, self.config.horizon, 2)?;
        Ok(Forward { nodes: h, ego, out, weights })
    }

    pub fn encode_input(&self, input: &GraphInput) -> Result<Encoding, ModelError> {
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, input)?;
        Ok(Encoding { nodes: tape.value(f.nodes).clone(), ego: tape.value(f.ego).clone() })
    }

    pub fn encode(&self, tofg: &Tofg) -> Result<Encoding, ModelError> {
        self.encode_input(&GraphInput::from_tofg(tofg, self.config.history)?)
    }

    pub fn predict_input(&self, input: &GraphInput) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, input)?;
        let out = tape.value(f.out);
        if !out.is_finite() {
            return Err(ModelError::Nn(NnError::NonFinite("predicted waypoints".into())));
        }
        let relative: Vec<Point2> = (0..out.rows()).map(|r| Point2::new(out.get(r, 0), out.get(r, 1))).collect();
        let waypoints = relative.iter().map(|&p| p + input.origin).collect();
        let heads: Vec<Vec<f64>> = f.weights.iter().map(|&w| tape.value(w).data().to_vec()).collect();
        let n = input.attended.len();
        let mean = (0..n).map(|k| heads.iter().map(|h| h[k]).sum::<f64>() / heads.len() as f64).collect();
        Ok(Prediction {
            waypoints,
            relative,
            attention: AttentionMap { frame: input.last_frame, nodes: input.attended.clone(), heads, mean },
        })
    }

    pub fn predict(&self, tofg: &Tofg) -> Result<Prediction, ModelError> {
        self.predict_input(&GraphInput::from_tofg(tofg, self.config.history)?)
    }

    /// Imitation loss against `truth_rel` (waypoints relative to the input's
    /// origin) and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, input: &GraphInput, truth_rel: &[Point2]) -> Result<(f64, Gradients), ModelError> {
        if truth_rel.len() != self.config.horizon {
            return Err(ModelError::LengthMismatch { pred: self.config.horizon, truth: truth_rel.len() });
        }
        let mut tape = Tape::new(&self.store);
        let f = self.forward(&mut tape, input)?;
        let truth = tape.constant(Matrix::from_rows(&truth_rel.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>()));
        let diff = tape.sub(f.out, truth)?;
        let dist = tape.row_norms(diff);
        let loss = tape.sum(dist);
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(ModelError::Nn(NnError::NonFinite("imitation loss".into())));
        }
        Ok((value, tape.backward(loss)?))
    }
}
