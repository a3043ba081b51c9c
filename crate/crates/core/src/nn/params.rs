use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Matrix, NnError};

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One gradient matrix per parameter of a store, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub(crate) Vec<Matrix>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients(store.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.0 {
            g.scale_in_place(k);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named trainable matrices with gradient and Adam moment slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    pub(crate) values: Vec<Matrix>,
    grads: Vec<Matrix>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
    grads_ready: bool,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Checkpoint entry: shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            grads_ready: false,
        }
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let (r, c) = value.shape();
        let id = self.values.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.values.push(value);
        self.grads.push(Matrix::zeros(r, c));
        self.m.push(Matrix::zeros(r, c));
        self.v.push(Matrix::zeros(r, c));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index.get(name).map(|&i| ParamId(i)).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Result<&Matrix, NnError> {
        Ok(self.value(self.id(name)?))
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// Replaces the gradient slots; marks them ready for [`Self::adam_step`].
    pub fn set_grads(&mut self, grads: Gradients) -> Result<(), NnError> {
        if grads.0.len() != self.values.len() {
            return Err(NnError::Shape {
                op: "set_grads".into(),
                detail: format!("{} gradients for {} parameters", grads.0.len(), self.values.len()),
            });
        }
        for (i, g) in grads.0.iter().enumerate() {
            if g.shape() != self.values[i].shape() {
                return Err(NnError::Shape {
                    op: "set_grads".into(),
                    detail: format!("gradient of {} is {:?}, parameter is {:?}", self.names[i], g.shape(), self.values[i].shape()),
                });
            }
        }
        self.grads = grads.0;
        self.grads_ready = true;
        Ok(())
    }

    /// One bias-corrected Adam update. Clears the gradients afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        if !self.grads_ready {
            return Err(NnError::MissingGradients);
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for i in 0..self.values.len() {
            let g = self.grads[i].data();
            let m = self.m[i].data_mut();
            for (m, &g) in m.iter_mut().zip(g) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            }
            let v = self.v[i].data_mut();
            for (v, &g) in v.iter_mut().zip(g) {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for ((p, &m), &v) in self.values[i].data_mut().iter_mut().zip(m).zip(v) {
                *p -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            }
            if !self.values[i].is_finite() {
                return Err(NnError::NonFinite(format!("parameter {} after step {}", self.names[i], self.step)));
            }
        }
        for g in &mut self.grads {
            g.scale_in_place(0.0);
        }
        self.grads_ready = false;
        Ok(())
    }

    pub fn to_entries(&self) -> BTreeMap<String, ParamEntry> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, m)| (n.clone(), ParamEntry { shape: [m.rows(), m.cols()], values: m.data().to_vec() }))
            .collect()
    }

    /// Store from checkpoint entries, in name order; moments start at zero.
    pub fn from_entries(entries: &BTreeMap<String, ParamEntry>) -> Result<Self, NnError> {
        let mut store = Self::new();
        for (name, e) in entries {
            let m = Matrix::new(e.shape[0], e.shape[1], e.values.clone())
                .map_err(|err| NnError::Checkpoint(format!("parameter {name}: {err}")))?;
            store.add(name, m)?;
        }
        Ok(store)
    }

    /// JSON checkpoint: `{"name": {"shape": [rows, cols], "values": [...]}, ...}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_entries()).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let entries: BTreeMap<String, ParamEntry> =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Self::from_entries(&entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()).map_err(|source| NnError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| NnError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Copies values for every name present in both stores with equal shape.
    /// Errors if `other` lacks a name or has a different shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        for i in 0..self.values.len() {
            let src = other.get(&self.names[i])?;
            if src.shape() != self.values[i].shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    src.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}
