use rand::Rng;

use super::{Matrix, NnError, ParamId, ParamStore, Tape, Var};

/// `y = x·W (+ b)`, `W` of shape `[in × out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Registers `{name}.w` (and `{name}.b`), uniform in `±1/sqrt(input)`.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w = store.add(&format!("{name}.w"), Matrix::uniform(input, output, input, rng))?;
        let b = if bias { Some(store.add(&format!("{name}.b"), Matrix::uniform(1, output, input, rng))?) } else { None };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; layers are named `{name}.l0`, `{name}.l1`, ...
    pub fn init(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Result<Self, NnError> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::init(store, &format!("{name}.l{i}"), d[0], d[1], true, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = l.forward(tape, h)?;
        }
        Ok(h)
    }
}

/// The nonlinearity applied to each message: layer normalization, then ReLU.
pub fn phi(tape: &mut Tape, z: Var) -> Var {
    let n = tape.layer_norm(z);
    tape.relu(n)
}

/// Directed message pairs: node `targets[k]` receives from `sources[k]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeIndex {
    pub n_nodes: usize,
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
}

impl EdgeIndex {
    /// From an adjacency list: `neighbors[i]` are the nodes sending to `i`.
    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Self {
        let mut e = EdgeIndex { n_nodes: neighbors.len(), ..Default::default() };
        for (i, ns) in neighbors.iter().enumerate() {
            for &j in ns {
                e.targets.push(i);
                e.sources.push(j);
            }
        }
        e
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `h'_i = h_i + Σ_{j∈N(i)} phi((h_i ‖ h_j)·W1)·W2`.
///
/// `(h_i ‖ h_j)·W1` is evaluated as `h_i·W1[..d] + h_j·W1[d..]`, and `W2` is
/// applied once per node after summing the messages.
pub fn gat(tape: &mut Tape, h: Var, edges: &EdgeIndex, w1: Var, w2: Var) -> Result<Var, NnError> {
    let (n, d) = tape.value(h).shape();
    let (w1s, w2s) = (tape.value(w1).shape(), tape.value(w2).shape());
    if w1s != (2 * d, d) || w2s != (d, d) {
        return Err(NnError::Shape {
            op: "gat_layer".into(),
            detail: format!("h is {n}x{d}; W1 is {w1s:?} (want {:?}); W2 is {w2s:?} (want {:?})", (2 * d, d), (d, d)),
        });
    }
    if edges.n_nodes != n {
        return Err(NnError::Shape {
            op: "gat_layer".into(),
            detail: format!("adjacency has {} nodes, h has {n} rows", edges.n_nodes),
        });
    }
    let top = tape.slice_rows(w1, 0, d)?;
    let bottom = tape.slice_rows(w1, d, 2 * d)?;
    let p = tape.matmul(h, top)?;
    let q = tape.matmul(h, bottom)?;
    let zi = tape.gather_rows(p, &edges.targets)?;
    let zj = tape.gather_rows(q, &edges.sources)?;
    let z = tape.add(zi, zj)?;
    let a = phi(tape, z);
    let agg = tape.scatter_add_rows(a, &edges.targets, n)?;
    let msg = tape.matmul(agg, w2)?;
    tape.add(h, msg)
}

/// Query/key/value maps and output projection, all `[d × d]`.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub w_att: ParamId,
    pub n_head: usize,
}

impl CrossAttention {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, n_head: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        if n_head == 0 || d % n_head != 0 {
            return Err(NnError::Shape { op: "cross_attention".into(), detail: format!("d = {d} not divisible by n_head = {n_head}") });
        }
        let mut w = |s: &str| store.add(&format!("{name}.{s}"), Matrix::uniform(d, d, d, rng));
        Ok(Self { wq: w("wq")?, wk: w("wk")?, wv: w("wv")?, w_att: w("w_att")?, n_head })
    }

    pub fn forward(&self, tape: &mut Tape, h_ego: Var, h_nodes: Var) -> Result<(Var, Vec<Var>), NnError> {
        let p = [self.wq, self.wk, self.wv, self.w_att].map(|id| tape.param(id));
        attend(tape, h_ego, h_nodes, p, self.n_head)
    }
}

/// Multi-head `softmax(Q·Kᵀ/sqrt(d_k))·V`, heads concatenated then times `W_att`.
/// Returns the `1×d` output and one `1×n` weight row per head.
pub fn attend(tape: &mut Tape, h_ego: Var, h_nodes: Var, w: [Var; 4], n_head: usize) -> Result<(Var, Vec<Var>), NnError> {
    let (er, d) = tape.value(h_ego).shape();
    let (n, nd) = tape.value(h_nodes).shape();
    let err = |detail: String| NnError::Shape { op: "cross_attention".into(), detail };
    if er != 1 || nd != d {
        return Err(err(format!("h_ego is {er}x{d}, h_tofg is {n}x{nd}")));
    }
    if n == 0 {
        return Err(err("h_tofg has no rows".into()));
    }
    if n_head == 0 || d % n_head != 0 {
        return Err(err(format!("d = {d} not divisible by n_head = {n_head}")));
    }
    for (name, v) in ["W_q", "W_k", "W_v", "W_att"].iter().zip(w) {
        if tape.value(v).shape() != (d, d) {
            return Err(err(format!("{name} is {:?}, want {d}x{d}", tape.value(v).shape())));
        }
    }
    let q = tape.matmul(h_ego, w[0])?;
    let k = tape.matmul(h_nodes, w[1])?;
    let v = tape.matmul(h_nodes, w[2])?;
    let dk = d / n_head;
    let mut heads = Vec::with_capacity(n_head);
    let mut weights = Vec::with_capacity(n_head);
    for hd in 0..n_head {
        let (a, b) = (hd * dk, (hd + 1) * dk);
        let qh = tape.slice_cols(q, a, b)?;
        let kh = tape.slice_cols(k, a, b)?;
        let vh = tape.slice_cols(v, a, b)?;
        let scores = tape.matmul_t(qh, kh)?;
        let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let wts = tape.softmax_rows(scaled);
        heads.push(tape.matmul(wts, vh)?);
        weights.push(wts);
    }
    let cat = tape.concat_cols(&heads)?;
    Ok((tape.matmul(cat, w[3])?, weights))
}

/// Eager form of [`gat`] on plain matrices.
pub fn gat_layer(h: &Matrix, neighbors: &[Vec<usize>], w1: &Matrix, w2: &Matrix) -> Result<Matrix, NnError> {
    if let Some(bad) = neighbors.iter().flatten().find(|&&j| j >= h.rows()) {
        return Err(NnError::Shape { op: "gat_layer".into(), detail: format!("neighbor index {bad} with {} nodes", h.rows()) });
    }
    let mut t = Tape::detached();
    let (hv, a, b) = (t.constant(h.clone()), t.constant(w1.clone()), t.constant(w2.clone()));
    let out = gat(&mut t, hv, &EdgeIndex::from_neighbors(neighbors), a, b)?;
    Ok(t.value(out).clone())
}

/// Eager cross-attention weights `[W_q, W_k, W_v, W_att]`.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub w_att: Matrix,
}

/// Eager form of [`attend`]: output row and per-head weight rows.
pub fn cross_attention(
    h_ego: &Matrix,
    h_tofg: &Matrix,
    params: &AttentionWeights,
    n_head: usize,
) -> Result<(Matrix, Vec<Vec<f64>>), NnError> {
    let mut t = Tape::detached();
    let e = t.constant(h_ego.clone());
    let h = t.constant(h_tofg.clone());
    let w = [&params.wq, &params.wk, &params.wv, &params.w_att].map(|m| t.constant(m.clone()));
    let (out, weights) = attend(&mut t, e, h, w, n_head)?;
    let rows = weights.iter().map(|&v| t.value(v).data().to_vec()).collect();
    Ok((t.value(out).clone(), rows))
}
