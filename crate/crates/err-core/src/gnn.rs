//! From-scratch GCN / DirGCN training engine.
//!
//! Implements the two message-passing updates
//!
//! ```text
//! GCN:    H^(l+1) = σ( D̃^{-1/2} Ã D̃^{-1/2} · H^(l) · W^(l) )
//! DirGCN: H^(l+1) = σ( D_in⁻¹A_in·H·W_in + D_out⁻¹A_out·H·W_out + H·W_self )
//! ```
//!
//! with optional PairNorm on hidden layers, inverted dropout, softmax
//! cross-entropy on the training mask, explicit backpropagation, Adam, and
//! best-validation checkpointing with per-layer embedding capture.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphMode, NeighborKind};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{model} requires a graph in {expected:?} mode")]
    WrongMode { model: ModelKind, expected: GraphMode },
    #[error("pairnorm scale {scale:e} is below the collapse tolerance: embeddings are constant across nodes")]
    PairNormCollapse { scale: f64 },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("node {node} appears in more than one split mask")]
    OverlappingMasks { node: usize },
    #[error("mask references node {node} but the graph has {n_nodes} nodes")]
    MaskOutOfRange { node: usize, n_nodes: usize },
    #[error("training mask is empty")]
    EmptyTrainMask,
}

/// Which message-passing architecture to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    DirGcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::DirGcn => "dirgcn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "dirgcn" => Ok(ModelKind::DirGcn),
            other => Err(format!("unknown model kind `{other}` (expected gcn|dirgcn)")),
        }
    }
}

/// Dense propagation operators derived from the graph once, before training.
///
/// Undirected graphs yield the symmetric normalization with self-loops;
/// directed graphs yield the row-normalized in/out pair (zero-degree nodes
/// get zero rows, so they contribute a zero aggregation term).
#[derive(Debug, Clone)]
pub enum PropagationOperators<T> {
    Gcn { norm: DenseMatrix<T> },
    Dir { dir_in: DenseMatrix<T>, dir_out: DenseMatrix<T> },
}

impl<T: Scalar> PropagationOperators<T> {
    pub fn n_nodes(&self) -> usize {
        match self {
            PropagationOperators::Gcn { norm } => norm.rows(),
            PropagationOperators::Dir { dir_in, .. } => dir_in.rows(),
        }
    }

    /// Transposed operators, used by the backward pass.
    pub fn transposed(&self) -> Self {
        match self {
            PropagationOperators::Gcn { norm } => {
                PropagationOperators::Gcn { norm: norm.transpose() }
            }
            PropagationOperators::Dir { dir_in, dir_out } => PropagationOperators::Dir {
                dir_in: dir_in.transpose(),
                dir_out: dir_out.transpose(),
            },
        }
    }
}

/// Builds the propagation operators for `g` according to its mode.
///
/// Self-loops are added only inside the GCN normalization (Ã = A + I), which
/// also guarantees D̃ is nonsingular. The directed operators use the graph as
/// given; rows for nodes with zero in-/out-degree are zero.
pub fn build_operators<T: Scalar>(g: &Graph) -> PropagationOperators<T> {
    let n = g.n_nodes();
    match g.mode() {
        GraphMode::Undirected => {
            let mut inv_sqrt_deg = vec![T::zero(); n];
            for v in 0..n {
                let d = g.neighbors(v, NeighborKind::Union).expect("node in range").len() + 1;
                inv_sqrt_deg[v] = T::one() / T::from_usize(d).sqrt();
            }
            let mut norm = DenseMatrix::zeros(n, n);
            for v in 0..n {
                norm.row_mut(v)[v] = inv_sqrt_deg[v] * inv_sqrt_deg[v];
            }
            for (u, v) in g.edges() {
                let w = inv_sqrt_deg[u] * inv_sqrt_deg[v];
                norm.row_mut(u)[v] = w;
                norm.row_mut(v)[u] = w;
            }
            PropagationOperators::Gcn { norm }
        }
        GraphMode::Directed => {
            let mut dir_in = DenseMatrix::zeros(n, n);
            let mut dir_out = DenseMatrix::zeros(n, n);
            // (A_in)_{ij} = 1 iff j→i, (A_out)_{ij} = 1 iff i→j.
            for (u, v) in g.edges() {
                dir_in.row_mut(v)[u] = T::one();
                dir_out.row_mut(u)[v] = T::one();
            }
            for i in 0..n {
                let din = g.in_degree(i);
                if din > 0 {
                    let inv = T::one() / T::from_usize(din);
                    for x in dir_in.row_mut(i) {
                        *x *= inv;
                    }
                }
                let dout = g.out_degree(i);
                if dout > 0 {
                    let inv = T::one() / T::from_usize(dout);
                    for x in dir_out.row_mut(i) {
                        *x *= inv;
                    }
                }
            }
            PropagationOperators::Dir { dir_in, dir_out }
        }
    }
}

/// Per-layer trainable weights: a single matrix for GCN, a triple for DirGCN.
///
/// The same shape container is reused for gradients and Adam moments.
#[derive(Debug, Clone)]
pub enum LayerWeights<T> {
    Gcn { w: DenseMatrix<T> },
    Dir { w_in: DenseMatrix<T>, w_out: DenseMatrix<T>, w_self: DenseMatrix<T> },
}

impl<T: Scalar> LayerWeights<T> {
    fn mats(&self) -> Vec<&DenseMatrix<T>> {
        match self {
            LayerWeights::Gcn { w } => vec![w],
            LayerWeights::Dir { w_in, w_out, w_self } => vec![w_in, w_out, w_self],
        }
    }

    fn mats_mut(&mut self) -> Vec<&mut DenseMatrix<T>> {
        match self {
            LayerWeights::Gcn { w } => vec![w],
            LayerWeights::Dir { w_in, w_out, w_self } => vec![w_in, w_out, w_self],
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            LayerWeights::Gcn { w } => {
                LayerWeights::Gcn { w: DenseMatrix::zeros(w.rows(), w.cols()) }
            }
            LayerWeights::Dir { w_in, w_out, w_self } => LayerWeights::Dir {
                w_in: DenseMatrix::zeros(w_in.rows(), w_in.cols()),
                w_out: DenseMatrix::zeros(w_out.rows(), w_out.cols()),
                w_self: DenseMatrix::zeros(w_self.rows(), w_self.cols()),
            },
        }
    }
}

/// Full parameter set of a model: one [`LayerWeights`] per layer.
///
/// Layer `l` maps dimension `dims[l]` to `dims[l + 1]`; `dims[0]` is the
/// feature dimension and the last entry the class count. No bias terms.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub kind: ModelKind,
    pub pairnorm: bool,
    pub layers: Vec<LayerWeights<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform initialization with a caller-provided seeded generator.
    ///
    /// Matrices are drawn in layer order (DirGCN: W_in, W_out, W_self), each
    /// filled row-major, so initialization is reproducible for a fixed seed.
    pub fn init(kind: ModelKind, pairnorm: bool, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut draw = || glorot_matrix::<T>(fan_in, fan_out, rng);
            layers.push(match kind {
                ModelKind::Gcn => LayerWeights::Gcn { w: draw() },
                ModelKind::DirGcn => {
                    LayerWeights::Dir { w_in: draw(), w_out: draw(), w_self: draw() }
                }
            });
        }
        ModelParams { kind, pairnorm, layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

fn glorot_matrix<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut m = DenseMatrix::zeros(fan_in, fan_out);
    for x in m.data_mut() {
        *x = T::from_f64(rng.gen_range(-a..a));
    }
    m
}

/// Training configuration for a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnConfig<T> {
    pub model: ModelKind,
    pub depth: usize,
    pub hidden_dim: usize,
    pub dropout: T,
    pub learning_rate: T,
    pub weight_decay: T,
    pub pairnorm: bool,
    pub epochs: usize,
    pub seed: u64,
}

impl<T: Scalar> GnnConfig<T> {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.depth == 0 {
            return Err(GnnError::InvalidConfig("depth must be at least 1".into()));
        }
        if self.hidden_dim == 0 && self.depth > 1 {
            return Err(GnnError::InvalidConfig("hidden_dim must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(GnnError::InvalidConfig("epochs must be at least 1".into()));
        }
        let p = self.dropout.to_f64();
        if !(0.0..1.0).contains(&p) {
            return Err(GnnError::InvalidConfig(format!("dropout {p} outside [0, 1)")));
        }
        Ok(())
    }

    /// Layer dimensions `[features, hidden, .., hidden, classes]`.
    pub fn dims(&self, n_features: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        dims.push(n_features);
        for _ in 1..self.depth {
            dims.push(self.hidden_dim);
        }
        dims.push(n_classes);
        dims
    }
}

/// Train/validation/test node index sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    pub fn validate(&self, n_nodes: usize) -> Result<(), GnnError> {
        if self.train.is_empty() {
            return Err(GnnError::EmptyTrainMask);
        }
        let mut seen = vec![false; n_nodes];
        for &node in self.train.iter().chain(&self.val).chain(&self.test) {
            if node >= n_nodes {
                return Err(GnnError::MaskOutOfRange { node, n_nodes });
            }
            if seen[node] {
                return Err(GnnError::OverlappingMasks { node });
            }
            seen[node] = true;
        }
        Ok(())
    }
}

/// Outcome of a training run.
///
/// `captured_embeddings` holds H^(1) .. H^(depth) (the last entry being the
/// logits) evaluated with dropout disabled at the best-validation checkpoint.
#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy_at_best: f64,
    pub captured_embeddings: Vec<DenseMatrix<T>>,
}

// ---------------------------------------------------------------------------
// PairNorm
// ---------------------------------------------------------------------------

/// PairNorm: center rows by the mean embedding and divide by the scalar
/// sqrt((1/n²) Σ_{i,j} ‖hᵢ − hⱼ‖²), computed through the identity
/// Σ_{i,j} ‖hᵢ − hⱼ‖² = 2n Σᵢ ‖hᵢ − H̄‖².
///
/// The output has zero column means and mean squared pairwise distance 1.
pub fn pairnorm<T: Scalar>(h: &DenseMatrix<T>) -> Result<DenseMatrix<T>, GnnError> {
    let (centered, scale) = pairnorm_tape(h)?;
    Ok(centered.scale(T::one() / scale))
}

/// Centered matrix and the normalization scalar; shared by forward/backward.
fn pairnorm_tape<T: Scalar>(h: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, T), GnnError> {
    let (n, d) = (h.rows(), h.cols());
    if n < 2 {
        return Err(GnnError::DimensionMismatch(format!(
            "pairnorm needs at least 2 rows, got {n}"
        )));
    }
    let inv_n = T::one() / T::from_usize(n);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(h.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m *= inv_n;
    }
    let mut centered = h.clone();
    let mut sum_sq = T::zero();
    for i in 0..n {
        for (x, &m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *x -= m;
            sum_sq += *x * *x;
        }
    }
    let scale = ((T::one() + T::one()) * inv_n * sum_sq).sqrt();
    if scale < T::COLLAPSE_TOL {
        return Err(GnnError::PairNormCollapse { scale: scale.to_f64() });
    }
    Ok((centered, scale))
}

/// Gradient of PairNorm: given upstream dY, the centered input C and the
/// scale s, returns dH.
///
/// With Y = C/s and s² = (2/n)‖C‖_F²:
/// dC = dY/s − ⟨dY, C⟩·(2/n)·C/s³, then dH = dC − column_means(dC).
fn pairnorm_backward<T: Scalar>(dy: &DenseMatrix<T>, c: &DenseMatrix<T>, s: T) -> DenseMatrix<T> {
    let (n, d) = (c.rows(), c.cols());
    let inv_n = T::one() / T::from_usize(n);
    let mut inner = T::zero();
    for (&g, &x) in dy.data().iter().zip(c.data()) {
        inner += g * x;
    }
    let coeff = inner * (T::one() + T::one()) * inv_n / (s * s * s);
    let inv_s = T::one() / s;
    let mut dc = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            dc.row_mut(i)[j] = dy.row(i)[j] * inv_s - coeff * c.row(i)[j];
        }
    }
    let mut col_mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &x) in col_mean.iter_mut().zip(dc.row(i)) {
            *m += x;
        }
    }
    for m in &mut col_mean {
        *m *= inv_n;
    }
    for i in 0..n {
        for (x, &m) in dc.row_mut(i).iter_mut().zip(&col_mean) {
            *x -= m;
        }
    }
    dc
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum PropTape<T> {
    Gcn { s: DenseMatrix<T> },
    Dir { s_in: DenseMatrix<T>, s_out: DenseMatrix<T>, hd: DenseMatrix<T> },
}

struct LayerTape<T> {
    prop: PropTape<T>,
    /// `(centered, scale)` when PairNorm ran on this layer.
    pairnorm: Option<(DenseMatrix<T>, T)>,
    /// Post-ReLU output for hidden layers, bare logits for the final layer.
    output: DenseMatrix<T>,
    /// Inverted-dropout scale factors (0 or 1/(1−p)); `None` in eval mode.
    dropout_mask: Option<DenseMatrix<T>>,
}

fn check_forward_dims<T: Scalar>(
    ops: &PropagationOperators<T>,
    params: &ModelParams<T>,
    x: &DenseMatrix<T>,
) -> Result<(), GnnError> {
    let n = ops.n_nodes();
    if x.rows() != n {
        return Err(GnnError::DimensionMismatch(format!(
            "features have {} rows but the graph has {n} nodes",
            x.rows()
        )));
    }
    let matches = match (ops, params.kind) {
        (PropagationOperators::Gcn { .. }, ModelKind::Gcn) => true,
        (PropagationOperators::Dir { .. }, ModelKind::DirGcn) => true,
        _ => false,
    };
    if !matches {
        let expected = match params.kind {
            ModelKind::Gcn => GraphMode::Undirected,
            ModelKind::DirGcn => GraphMode::Directed,
        };
        return Err(GnnError::WrongMode { model: params.kind, expected });
    }
    let mut dim = x.cols();
    for (l, layer) in params.layers.iter().enumerate() {
        let first = layer.mats()[0];
        if first.rows() != dim {
            return Err(GnnError::DimensionMismatch(format!(
                "layer {l} expects input dim {}, got {dim}",
                first.rows()
            )));
        }
        for m in layer.mats() {
            if m.rows() != first.rows() || m.cols() != first.cols() {
                return Err(GnnError::DimensionMismatch(format!(
                    "layer {l} weight matrices disagree in shape"
                )));
            }
        }
        dim = first.cols();
    }
    Ok(())
}

fn forward_tape<T: Scalar>(
    ops: &PropagationOperators<T>,
    params: &ModelParams<T>,
    x: &DenseMatrix<T>,
    dropout: T,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LayerTape<T>>, GnnError> {
    check_forward_dims(ops, params, x)?;
    let depth = params.depth();
    let mut tapes: Vec<LayerTape<T>> = Vec::with_capacity(depth);
    let mut h = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let (mask, hd) = if training && dropout > T::zero() {
            let keep_scale = T::one() / (T::one() - dropout);
            let p = dropout.to_f64();
            let mut mask = DenseMatrix::zeros(h.rows(), h.cols());
            for m in mask.data_mut() {
                *m = if rng.gen::<f64>() < p { T::zero() } else { keep_scale };
            }
            let hd = h.hadamard(&mask);
            (Some(mask), hd)
        } else {
            (None, h.clone())
        };
        let (prop, z) = match (ops, layer) {
            (PropagationOperators::Gcn { norm }, LayerWeights::Gcn { w }) => {
                let s = norm.matmul(&hd);
                let z = s.matmul(w);
                (PropTape::Gcn { s }, z)
            }
            (
                PropagationOperators::Dir { dir_in, dir_out },
                LayerWeights::Dir { w_in, w_out, w_self },
            ) => {
                let s_in = dir_in.matmul(&hd);
                let s_out = dir_out.matmul(&hd);
                let z = s_in.matmul(w_in).add(&s_out.matmul(w_out)).add(&hd.matmul(w_self));
                (PropTape::Dir { s_in, s_out, hd }, z)
            }
            _ => unreachable!("kind checked in check_forward_dims"),
        };
        let last = l == depth - 1;
        let (pn, output) = if last {
            (None, z)
        } else if params.pairnorm {
            let (centered, scale) = pairnorm_tape(&z)?;
            let y = centered.scale(T::one() / scale);
            (Some((centered, scale)), y.map(|v| v.max(T::zero())))
        } else {
            (None, z.map(|v| v.max(T::zero())))
        };
        h = output.clone();
        tapes.push(LayerTape { prop, pairnorm: pn, output, dropout_mask: mask });
    }
    Ok(tapes)
}

fn embeddings_from_tapes<T: Scalar>(tapes: &[LayerTape<T>]) -> Vec<DenseMatrix<T>> {
    tapes.iter().map(|t| t.output.clone()).collect()
}

/// GCN forward pass. Returns `(logits, per-layer embeddings)` where the
/// embedding list holds H^(1) .. H^(depth) and the last entry is the logits.
pub fn gcn_forward<T: Scalar>(
    ops: &PropagationOperators<T>,
    params: &ModelParams<T>,
    x: &DenseMatrix<T>,
    dropout: T,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(DenseMatrix<T>, Vec<DenseMatrix<T>>), GnnError> {
    if params.kind != ModelKind::Gcn {
        return Err(GnnError::WrongMode { model: params.kind, expected: GraphMode::Undirected });
    }
    let tapes = forward_tape(ops, params, x, dropout, training, rng)?;
    let embeddings = embeddings_from_tapes(&tapes);
    Ok((embeddings.last().expect("depth >= 1").clone(), embeddings))
}

/// DirGCN forward pass; same contract as [`gcn_forward`].
pub fn dirgcn_forward<T: Scalar>(
    ops: &PropagationOperators<T>,
    params: &ModelParams<T>,
    x: &DenseMatrix<T>,
    dropout: T,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(DenseMatrix<T>, Vec<DenseMatrix<T>>), GnnError> {
    if params.kind != ModelKind::DirGcn {
        return Err(GnnError::WrongMode { model: params.kind, expected: GraphMode::Directed });
    }
    let tapes = forward_tape(ops, params, x, dropout, training, rng)?;
    let embeddings = embeddings_from_tapes(&tapes);
    Ok((embeddings.last().expect("depth >= 1").clone(), embeddings))
}

/// Softmax cross-entropy averaged over `train` rows, plus d(loss)/d(logits)
/// (zero on rows outside the mask).
fn softmax_cross_entropy<T: Scalar>(
    logits: &DenseMatrix<T>,
    labels: &[usize],
    train: &[usize],
) -> (T, DenseMatrix<T>) {
    let (n, c) = (logits.rows(), logits.cols());
    let mut dlogits = DenseMatrix::zeros(n, c);
    let inv = T::one() / T::from_usize(train.len());
    let mut loss = T::zero();
    for &i in train {
        let row = logits.row(i);
        let mut max = row[0];
        for &x in row {
            max = max.max(x);
        }
        let mut z = T::zero();
        let dst = dlogits.row_mut(i);
        for (j, &x) in row.iter().enumerate() {
            let e = (x - max).exp();
            dst[j] = e;
            z += e;
        }
        let inv_z = T::one() / z;
        for (j, d) in dst.iter_mut().enumerate() {
            let p = *d * inv_z;
            *d = (p - if j == labels[i] { T::one() } else { T::zero() }) * inv;
            if j == labels[i] {
                loss -= p.ln() * inv;
            }
        }
    }
    (loss, dlogits)
}

/// Fraction of `mask` rows whose argmax logit (ties to the smallest index)
/// equals the label. Empty masks yield 0.
fn masked_accuracy<T: Scalar>(logits: &DenseMatrix<T>, labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for &i in mask {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / mask.len() as f64
}

/// Backpropagation through the taped forward pass. Returns per-layer
/// gradients in the same shape container as the weights.
fn backward<T: Scalar>(
    ops_t: &PropagationOperators<T>,
    params: &ModelParams<T>,
    tapes: &[LayerTape<T>],
    dlogits: DenseMatrix<T>,
) -> Vec<LayerWeights<T>> {
    let depth = params.depth();
    let mut grads: Vec<LayerWeights<T>> =
        params.layers.iter().map(|l| l.zeros_like()).collect();
    let mut upstream = dlogits;
    for l in (0..depth).rev() {
        let tape = &tapes[l];
        let dz = if l == depth - 1 {
            upstream
        } else {
            // ReLU: output > 0 exactly where its pre-activation was positive.
            let dy = DenseMatrix::from_fn(upstream.rows(), upstream.cols(), |i, j| {
                if tape.output.row(i)[j] > T::zero() { upstream.row(i)[j] } else { T::zero() }
            });
            match &tape.pairnorm {
                Some((centered, scale)) => pairnorm_backward(&dy, centered, *scale),
                None => dy,
            }
        };
        let dhd = match (&tape.prop, &params.layers[l], ops_t) {
            (PropTape::Gcn { s }, LayerWeights::Gcn { w }, PropagationOperators::Gcn { norm }) => {
                match &mut grads[l] {
                    LayerWeights::Gcn { w: gw } => *gw = s.transpose().matmul(&dz),
                    _ => unreachable!(),
                }
                if l == 0 {
                    None
                } else {
                    Some(norm.matmul(&dz.matmul(&w.transpose())))
                }
            }
            (
                PropTape::Dir { s_in, s_out, hd },
                LayerWeights::Dir { w_in, w_out, w_self },
                PropagationOperators::Dir { dir_in, dir_out },
            ) => {
                match &mut grads[l] {
                    LayerWeights::Dir { w_in: gi, w_out: go, w_self: gs } => {
                        *gi = s_in.transpose().matmul(&dz);
                        *go = s_out.transpose().matmul(&dz);
                        *gs = hd.transpose().matmul(&dz);
                    }
                    _ => unreachable!(),
                }
                if l == 0 {
                    None
                } else {
                    let mut d = dir_in.matmul(&dz.matmul(&w_in.transpose()));
                    d = d.add(&dir_out.matmul(&dz.matmul(&w_out.transpose())));
                    Some(d.add(&dz.matmul(&w_self.transpose())))
                }
            }
            _ => unreachable!("kind consistency checked at forward time"),
        };
        if l == 0 {
            break;
        }
        let mut d = dhd.expect("computed for non-input layers");
        if let Some(mask) = &tape.dropout_mask {
            d = d.hadamard(mask);
        }
        upstream = d;
    }
    grads
}

/// Adam first/second moments, one slot per weight matrix.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    step: usize,
    m: Vec<LayerWeights<T>>,
    v: Vec<LayerWeights<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            step: 0,
            m: params.layers.iter().map(|l| l.zeros_like()).collect(),
            v: params.layers.iter().map(|l| l.zeros_like()).collect(),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam step with weight decay applied as an L2 gradient term.
fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[LayerWeights<T>],
    state: &mut AdamState<T>,
    learning_rate: T,
    weight_decay: T,
) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(ADAM_BETA1);
    let b2 = T::from_f64(ADAM_BETA2);
    let eps = T::from_f64(ADAM_EPS);
    let bc1 = T::one() - T::from_f64(ADAM_BETA1.powi(t));
    let bc2 = T::one() - T::from_f64(ADAM_BETA2.powi(t));
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let mut ws = layer.mats_mut();
        let gs = grads[l].mats();
        let mut ms = state.m[l].mats_mut();
        let mut vs = state.v[l].mats_mut();
        for k in 0..ws.len() {
            let w = ws[k].data_mut();
            let g = gs[k].data();
            let m = ms[k].data_mut();
            let v = vs[k].data_mut();
            for i in 0..w.len() {
                let grad = g[i] + weight_decay * w[i];
                m[i] = b1 * m[i] + (T::one() - b1) * grad;
                v[i] = b2 * v[i] + (T::one() - b2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Trains a model on `g` with softmax cross-entropy over the train mask.
///
/// Per epoch: one training-mode forward (dropout active), explicit backward,
/// one Adam step, then an evaluation-mode forward for validation accuracy.
/// The checkpoint is the first epoch attaining the maximum validation
/// accuracy; test accuracy and per-layer embeddings are captured there with
/// dropout disabled. The class count is `max(labels) + 1`.
pub fn train<T: Scalar>(
    g: &Graph,
    features: &DenseMatrix<T>,
    labels: &[usize],
    masks: &SplitMasks,
    cfg: &GnnConfig<T>,
) -> Result<TrainReport<T>, GnnError> {
    cfg.validate()?;
    let n = g.n_nodes();
    if features.rows() != n || labels.len() != n {
        return Err(GnnError::DimensionMismatch(format!(
            "graph has {n} nodes, features {} rows, labels {}",
            features.rows(),
            labels.len()
        )));
    }
    masks.validate(n)?;
    let expected_mode = match cfg.model {
        ModelKind::Gcn => GraphMode::Undirected,
        ModelKind::DirGcn => GraphMode::Directed,
    };
    if g.mode() != expected_mode {
        return Err(GnnError::WrongMode { model: cfg.model, expected: expected_mode });
    }
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let ops = build_operators::<T>(g);
    let ops_t = ops.transposed();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(
        cfg.model,
        cfg.pairnorm,
        &cfg.dims(features.cols(), n_classes),
        &mut rng,
    );
    let mut adam = AdamState::new(&params);

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_accuracy: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        test_accuracy_at_best: 0.0,
        captured_embeddings: Vec::new(),
    };
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for epoch in 0..cfg.epochs {
        let tapes = forward_tape(&ops, &params, features, cfg.dropout, true, &mut rng)?;
        let logits = &tapes.last().expect("depth >= 1").output;
        let (loss, dlogits) = softmax_cross_entropy(logits, labels, &masks.train);
        if !loss.is_finite() {
            return Err(GnnError::NonFiniteLoss { epoch });
        }
        let grads = backward(&ops_t, &params, &tapes, dlogits);
        adam_step(&mut params, &grads, &mut adam, cfg.learning_rate, cfg.weight_decay);

        let eval_tapes =
            forward_tape(&ops, &params, features, cfg.dropout, false, &mut eval_rng)?;
        let eval_logits = &eval_tapes.last().expect("depth >= 1").output;
        let val_acc = masked_accuracy(eval_logits, labels, &masks.val);
        report.train_loss.push(loss.to_f64());
        report.val_accuracy.push(val_acc);
        if val_acc > report.best_val_accuracy {
            report.best_val_accuracy = val_acc;
            report.best_epoch = epoch;
            report.test_accuracy_at_best = masked_accuracy(eval_logits, labels, &masks.test);
            report.captured_embeddings = embeddings_from_tapes(&eval_tapes);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

/// Compares analytic cross-entropy gradients against central finite
/// differences (step 1e-5) on a small instance with dropout disabled.
///
/// Returns the maximum relative error over all parameters, with the
/// denominator floored at 1 so near-zero gradients are compared absolutely.
pub fn gradient_check<T: Scalar>(
    g: &Graph,
    features: &DenseMatrix<T>,
    labels: &[usize],
    train_mask: &[usize],
    cfg: &GnnConfig<T>,
) -> Result<T, GnnError> {
    cfg.validate()?;
    let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let ops = build_operators::<T>(g);
    let ops_t = ops.transposed();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(
        cfg.model,
        cfg.pairnorm,
        &cfg.dims(features.cols(), n_classes),
        &mut rng,
    );

    let loss_of = |params: &ModelParams<T>, rng: &mut ChaCha8Rng| -> Result<T, GnnError> {
        let tapes = forward_tape(&ops, params, features, T::zero(), false, rng)?;
        let logits = &tapes.last().expect("depth >= 1").output;
        Ok(softmax_cross_entropy(logits, labels, train_mask).0)
    };

    let tapes = forward_tape(&ops, &params, features, T::zero(), false, &mut rng)?;
    let logits = &tapes.last().expect("depth >= 1").output;
    let (_, dlogits) = softmax_cross_entropy(logits, labels, train_mask);
    let grads = backward(&ops_t, &params, &tapes, dlogits);

    let h = T::from_f64(1e-5);
    let mut max_rel = T::zero();
    for l in 0..params.layers.len() {
        let n_mats = grads[l].mats().len();
        for k in 0..n_mats {
            let len = grads[l].mats()[k].data().len();
            for i in 0..len {
                let analytic = grads[l].mats()[k].data()[i];
                let orig = params.layers[l].mats()[k].data()[i];
                params.layers[l].mats_mut()[k].data_mut()[i] = orig + h;
                let plus = loss_of(&params, &mut rng)?;
                params.layers[l].mats_mut()[k].data_mut()[i] = orig - h;
                let minus = loss_of(&params, &mut rng)?;
                params.layers[l].mats_mut()[k].data_mut()[i] = orig;
                let fd = (plus - minus) / (h + h);
                let denom = analytic.abs().max(fd.abs()).max(T::one());
                max_rel = max_rel.max((analytic - fd).abs() / denom);
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn ugraph(pairs: &[(usize, usize)], n: usize) -> Graph {
        Graph::from_edge_list(pairs, n, GraphMode::Undirected).unwrap()
    }

    fn dgraph(pairs: &[(usize, usize)], n: usize) -> Graph {
        Graph::from_edge_list(pairs, n, GraphMode::Directed).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
        let mut r = rng(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    fn gcn_op(g: &Graph) -> DenseMatrix<f64> {
        match build_operators::<f64>(g) {
            PropagationOperators::Gcn { norm } => norm,
            _ => panic!("expected gcn operator"),
        }
    }

    fn dir_ops(g: &Graph) -> (DenseMatrix<f64>, DenseMatrix<f64>) {
        match build_operators::<f64>(g) {
            PropagationOperators::Dir { dir_in, dir_out } => (dir_in, dir_out),
            _ => panic!("expected dir operators"),
        }
    }

    #[test]
    fn gcn_norm_single_edge() {
        let norm = gcn_op(&ugraph(&[(0, 1)], 2));
        for i in 0..2 {
            for j in 0..2 {
                assert!((norm.row(i)[j] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dir_operators_single_directed_edge() {
        let (dir_in, dir_out) = dir_ops(&dgraph(&[(0, 1)], 2));
        assert_eq!(dir_in.row(1), &[1.0, 0.0]);
        assert_eq!(dir_in.row(0), &[0.0, 0.0]);
        assert_eq!(dir_out.row(0), &[0.0, 1.0]);
        assert_eq!(dir_out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn gcn_norm_isolated_node_gets_unit_self_loop() {
        let norm = gcn_op(&ugraph(&[(0, 1)], 3));
        assert_eq!(norm.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gcn_norm_symmetric_with_unit_spectral_radius() {
        let g = ugraph(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (4, 1)], 6);
        let norm = gcn_op(&g);
        assert_eq!(norm.max_abs_diff(&norm.transpose()), 0.0);
        // Power iteration: the top eigenvalue of the normalized adjacency
        // with self-loops is exactly 1 (eigenvector D̃^{1/2}·1).
        let mut v = DenseMatrix::from_fn(6, 1, |i, _| 1.0 + i as f64 * 0.1);
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = norm.matmul(&v);
            lambda = w.frobenius_norm() / v.frobenius_norm();
            v = w.scale(1.0 / w.frobenius_norm());
        }
        assert!((lambda - 1.0).abs() < 1e-9, "spectral radius {lambda}");
    }

    #[test]
    fn dir_rows_sum_to_one_or_zero() {
        let g = dgraph(&[(0, 1), (0, 2), (2, 1), (3, 0), (1, 3)], 5);
        let (dir_in, dir_out) = dir_ops(&g);
        for i in 0..5 {
            let rin: f64 = dir_in.row(i).iter().sum();
            let rout: f64 = dir_out.row(i).iter().sum();
            let expect_in = if g.in_degree(i) > 0 { 1.0 } else { 0.0 };
            let expect_out = if g.out_degree(i) > 0 { 1.0 } else { 0.0 };
            assert!((rin - expect_in).abs() < 1e-12);
            assert!((rout - expect_out).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_depth1_identity_weight_is_pure_propagation() {
        let g = ugraph(&[(0, 1), (1, 2)], 3);
        let ops = build_operators::<f64>(&g);
        let x = random_matrix(3, 3, 7);
        let params = ModelParams {
            kind: ModelKind::Gcn,
            pairnorm: false,
            layers: vec![LayerWeights::Gcn { w: DenseMatrix::identity(3) }],
        };
        let (logits, embeddings) =
            gcn_forward(&ops, &params, &x, 0.0, false, &mut rng(0)).unwrap();
        let expected = gcn_op(&g).matmul(&x);
        assert!(logits.max_abs_diff(&expected) < 1e-15);
        assert_eq!(embeddings.len(), 1);
    }

    #[test]
    fn zero_features_give_zero_logits() {
        let g = ugraph(&[(0, 1), (1, 2)], 3);
        let ops = build_operators::<f64>(&g);
        let mut r = rng(3);
        let params =
            ModelParams::init(ModelKind::Gcn, false, &[4, 5, 2], &mut r);
        let x = DenseMatrix::zeros(3, 4);
        let (logits, _) = gcn_forward(&ops, &params, &x, 0.0, false, &mut rng(0)).unwrap();
        assert_eq!(logits.max_abs(), 0.0);
    }

    /// Straight-line re-implementation of the GCN update, PairNorm included,
    /// with the PairNorm denominator computed from the literal double sum
    /// (1/n²)Σᵢⱼ‖hᵢ−hⱼ‖² rather than the centered-norm identity.
    fn direct_gcn_eval(
        norm: &DenseMatrix<f64>,
        weights: &[DenseMatrix<f64>],
        x: &DenseMatrix<f64>,
        use_pairnorm: bool,
    ) -> DenseMatrix<f64> {
        let mut h = x.clone();
        for (l, w) in weights.iter().enumerate() {
            let mut z = norm.matmul(&h).matmul(w);
            if l + 1 == weights.len() {
                return z;
            }
            if use_pairnorm {
                z = direct_pairnorm(&z);
            }
            h = z.map(|v| if v > 0.0 { v } else { 0.0 });
        }
        h
    }

    fn direct_pairnorm(h: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        let (n, d) = (h.rows(), h.cols());
        let mut sum_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..d {
                    let diff = h.row(i)[k] - h.row(j)[k];
                    sum_sq += diff * diff;
                }
            }
        }
        let denom = (sum_sq / (n * n) as f64).sqrt();
        let mean: Vec<f64> =
            (0..d).map(|k| (0..n).map(|i| h.row(i)[k]).sum::<f64>() / n as f64).collect();
        DenseMatrix::from_fn(n, d, |i, k| (h.row(i)[k] - mean[k]) / denom)
    }

    #[test]
    fn gcn_forward_matches_direct_eq1_evaluation() {
        let g = ugraph(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 4)], 6);
        let ops = build_operators::<f64>(&g);
        let x = random_matrix(6, 4, 11);
        for &use_pairnorm in &[false, true] {
            let mut r = rng(21);
            let params =
                ModelParams::init(ModelKind::Gcn, use_pairnorm, &[4, 3, 3, 2], &mut r);
            let (logits, _) =
                gcn_forward(&ops, &params, &x, 0.0, false, &mut rng(0)).unwrap();
            let weights: Vec<DenseMatrix<f64>> = params
                .layers
                .iter()
                .map(|l| match l {
                    LayerWeights::Gcn { w } => w.clone(),
                    _ => unreachable!(),
                })
                .collect();
            let expected = direct_gcn_eval(&gcn_op(&g), &weights, &x, use_pairnorm);
            assert!(
                logits.max_abs_diff(&expected) < 1e-12,
                "pairnorm={use_pairnorm}: {}",
                logits.max_abs_diff(&expected)
            );
        }
    }

    #[test]
    fn dirgcn_self_only_weights_reproduce_features() {
        let g = dgraph(&[(0, 1), (1, 2)], 3);
        let ops = build_operators::<f64>(&g);
        let x = random_matrix(3, 3, 13);
        let params = ModelParams {
            kind: ModelKind::DirGcn,
            pairnorm: false,
            layers: vec![LayerWeights::Dir {
                w_in: DenseMatrix::zeros(3, 3),
                w_out: DenseMatrix::zeros(3, 3),
                w_self: DenseMatrix::identity(3),
            }],
        };
        let (logits, _) = dirgcn_forward(&ops, &params, &x, 0.0, false, &mut rng(0)).unwrap();
        assert!(logits.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn dirgcn_symmetric_digraph_in_out_terms_coincide() {
        // Symmetric digraph: A_in = A_out, so with W_in = W_out the two
        // aggregation terms are equal.
        let g = dgraph(&[(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)], 3);
        let ops = build_operators::<f64>(&g);
        let x = random_matrix(3, 2, 17);
        let w = random_matrix(2, 2, 19);
        let w_self = random_matrix(2, 2, 23);
        let params = ModelParams {
            kind: ModelKind::DirGcn,
            pairnorm: false,
            layers: vec![LayerWeights::Dir {
                w_in: w.clone(),
                w_out: w.clone(),
                w_self: w_self.clone(),
            }],
        };
        let (logits, _) = dirgcn_forward(&ops, &params, &x, 0.0, false, &mut rng(0)).unwrap();
        let (dir_in, _) = dir_ops(&g);
        let expected = dir_in.matmul(&x).matmul(&w).scale(2.0).add(&x.matmul(&w_self));
        assert!(logits.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn dirgcn_forward_matches_direct_eq2_evaluation() {
        let g = dgraph(&[(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 0), (2, 4)], 5);
        let ops = build_operators::<f64>(&g);
        let (dir_in, dir_out) = dir_ops(&g);
        let x = random_matrix(5, 3, 29);
        let mut r = rng(31);
        let params = ModelParams::init(ModelKind::DirGcn, false, &[3, 4, 2], &mut r);
        let (logits, _) = dirgcn_forward(&ops, &params, &x, 0.0, false, &mut rng(0)).unwrap();

        let mut h = x.clone();
        for (l, layer) in params.layers.iter().enumerate() {
            let (w_in, w_out, w_self) = match layer {
                LayerWeights::Dir { w_in, w_out, w_self } => (w_in, w_out, w_self),
                _ => unreachable!(),
            };
            let z = dir_in
                .matmul(&h)
                .matmul(w_in)
                .add(&dir_out.matmul(&h).matmul(w_out))
                .add(&h.matmul(w_self));
            h = if l + 1 == params.layers.len() {
                z
            } else {
                z.map(|v| if v > 0.0 { v } else { 0.0 })
            };
        }
        assert!(logits.max_abs_diff(&h) < 1e-13);
    }

    #[test]
    fn pairnorm_two_row_example() {
        let h = DenseMatrix::from_rows(vec![vec![1.0], vec![-1.0]]);
        let out = pairnorm(&h).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert!((out.row(0)[0] - s).abs() < 1e-15);
        assert!((out.row(1)[0] + s).abs() < 1e-15);
    }

    #[test]
    fn pairnorm_rejects_constant_rows() {
        let h = DenseMatrix::from_rows(vec![vec![2.0, -1.0], vec![2.0, -1.0], vec![2.0, -1.0]]);
        match pairnorm(&h) {
            Err(GnnError::PairNormCollapse { .. }) => {}
            other => panic!("expected collapse error, got {other:?}"),
        }
    }

    #[test]
    fn pairnorm_contract_on_random_input() {
        let h = random_matrix(10, 5, 37);
        let out = pairnorm(&h).unwrap();
        for k in 0..5 {
            let mean: f64 = (0..10).map(|i| out.row(i)[k]).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-10, "column {k} mean {mean}");
        }
        let mut msd = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..5 {
                    let d = out.row(i)[k] - out.row(j)[k];
                    msd += d * d;
                }
            }
        }
        msd /= 100.0;
        assert!((msd - 1.0).abs() < 1e-10, "mean squared pairwise distance {msd}");
        let twice = pairnorm(&out).unwrap();
        assert!(twice.max_abs_diff(&out) < 1e-9, "pairnorm should be idempotent");
    }

    /// Two components of two same-class nodes each; one train, one val and
    /// one test node per class; identity features make the classes linearly
    /// separable after one propagation step.
    fn toy_instance() -> (Graph, DenseMatrix<f64>, Vec<usize>, SplitMasks) {
        let g = ugraph(&[(0, 1), (0, 2), (3, 4), (3, 5)], 6);
        let x = DenseMatrix::identity(6);
        let labels = vec![0, 0, 0, 1, 1, 1];
        let masks =
            SplitMasks { train: vec![0, 3], val: vec![1, 4], test: vec![2, 5] };
        (g, x, labels, masks)
    }

    fn toy_config() -> GnnConfig<f64> {
        GnnConfig {
            model: ModelKind::Gcn,
            depth: 2,
            hidden_dim: 8,
            dropout: 0.0,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            pairnorm: false,
            epochs: 200,
            seed: 42,
        }
    }

    #[test]
    fn train_separable_toy_reaches_perfect_test_accuracy() {
        let (g, x, labels, masks) = toy_instance();
        let report = train(&g, &x, &labels, &masks, &toy_config()).unwrap();
        assert_eq!(report.test_accuracy_at_best, 1.0);
        assert_eq!(report.best_val_accuracy, 1.0);
        assert_eq!(report.captured_embeddings.len(), 2);
        assert_eq!(report.captured_embeddings[0].cols(), 8);
        assert_eq!(report.captured_embeddings[1].cols(), 2);
        assert_eq!(report.train_loss.len(), 200);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let (g, x, labels, masks) = toy_instance();
        let mut cfg = toy_config();
        cfg.learning_rate = 0.0;
        cfg.epochs = 20;
        let report = train(&g, &x, &labels, &masks, &cfg).unwrap();
        for &loss in &report.train_loss {
            assert_eq!(loss, report.train_loss[0]);
        }
        // All epochs tie on validation accuracy, so the first one wins.
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let (g, x, labels, masks) = toy_instance();
        let mut cfg = toy_config();
        cfg.dropout = 0.5;
        cfg.epochs = 30;
        let a = train(&g, &x, &labels, &masks, &cfg).unwrap();
        let b = train(&g, &x, &labels, &masks, &cfg).unwrap();
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.val_accuracy, b.val_accuracy);
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.test_accuracy_at_best, b.test_accuracy_at_best);
        for (ea, eb) in a.captured_embeddings.iter().zip(&b.captured_embeddings) {
            assert_eq!(ea.max_abs_diff(eb), 0.0);
        }
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let (g, _, labels, masks) = toy_instance();
        // Feature magnitudes that overflow the very first matmul.
        let x = DenseMatrix::from_fn(6, 2, |_, _| 1e308);
        let mut cfg = toy_config();
        cfg.epochs = 5;
        match train(&g, &x, &labels, &masks, &cfg) {
            Err(GnnError::NonFiniteLoss { epoch: 0 }) => {}
            other => panic!("expected non-finite loss at epoch 0, got {other:?}"),
        }
    }

    #[test]
    fn model_and_graph_mode_must_agree() {
        let (_, x, labels, masks) = toy_instance();
        let directed = dgraph(&[(0, 1), (2, 3), (4, 5)], 6);
        match train(&directed, &x, &labels, &masks, &toy_config()) {
            Err(GnnError::WrongMode { model: ModelKind::Gcn, .. }) => {}
            other => panic!("expected mode error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let (g, x, labels, mut masks) = toy_instance();
        masks.val.push(0);
        match train(&g, &x, &labels, &masks, &toy_config()) {
            Err(GnnError::OverlappingMasks { node: 0 }) => {}
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    fn grad_check_instance(directed: bool) -> (Graph, DenseMatrix<f64>, Vec<usize>, Vec<usize>) {
        let g = if directed {
            dgraph(&[(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 1), (2, 4)], 5)
        } else {
            ugraph(&[(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (2, 4)], 5)
        };
        let x = random_matrix(5, 4, 41);
        let labels = vec![0, 1, 2, 0, 1];
        let train_mask = vec![0, 1, 2, 3, 4];
        (g, x, labels, train_mask)
    }

    fn grad_check_config(model: ModelKind, depth: usize, pairnorm: bool) -> GnnConfig<f64> {
        GnnConfig {
            model,
            depth,
            hidden_dim: 4,
            dropout: 0.0,
            learning_rate: 0.01,
            weight_decay: 0.0,
            pairnorm,
            epochs: 1,
            seed: 99,
        }
    }

    #[test]
    fn gradient_check_gcn_depth2() {
        let (g, x, labels, mask) = grad_check_instance(false);
        let err =
            gradient_check(&g, &x, &labels, &mask, &grad_check_config(ModelKind::Gcn, 2, false))
                .unwrap();
        assert!(err <= 1e-6, "max relative error {err:e}");
    }

    #[test]
    fn gradient_check_gcn_depth3_with_pairnorm() {
        let (g, x, labels, mask) = grad_check_instance(false);
        let err =
            gradient_check(&g, &x, &labels, &mask, &grad_check_config(ModelKind::Gcn, 3, true))
                .unwrap();
        assert!(err <= 1e-5, "max relative error {err:e}");
    }

    #[test]
    fn gradient_check_dirgcn_depth2() {
        let (g, x, labels, mask) = grad_check_instance(true);
        let err =
            gradient_check(&g, &x, &labels, &mask, &grad_check_config(ModelKind::DirGcn, 2, false))
                .unwrap();
        assert!(err <= 1e-6, "max relative error {err:e}");
    }

    #[test]
    fn gradient_check_dirgcn_depth3_with_pairnorm() {
        let (g, x, labels, mask) = grad_check_instance(true);
        let err =
            gradient_check(&g, &x, &labels, &mask, &grad_check_config(ModelKind::DirGcn, 3, true))
                .unwrap();
        assert!(err <= 1e-5, "max relative error {err:e}");
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (4, 5), (5, 2)];
        let perm = [3, 5, 0, 1, 4, 2]; // perm[old] = new
        let x = random_matrix(6, 3, 43);
        for &directed in &[false, true] {
            let (kind, make): (ModelKind, fn(&[(usize, usize)], usize) -> Graph) = if directed {
                (ModelKind::DirGcn, |e, n| dgraph(e, n))
            } else {
                (ModelKind::Gcn, |e, n| ugraph(e, n))
            };
            let g = make(&edges, 6);
            let permuted_edges: Vec<(usize, usize)> =
                edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            let gp = make(&permuted_edges, 6);
            let xp = DenseMatrix::from_fn(6, 3, |i, j| {
                let old = perm.iter().position(|&p| p == i).unwrap();
                x.row(old)[j]
            });
            let mut r = rng(47);
            let params = ModelParams::init(kind, false, &[3, 4, 2], &mut r);
            let fwd = |graph: &Graph, feats: &DenseMatrix<f64>| {
                let ops = build_operators::<f64>(graph);
                forward_tape(&ops, &params, feats, 0.0, false, &mut rng(0))
                    .unwrap()
                    .last()
                    .unwrap()
                    .output
                    .clone()
            };
            let base = fwd(&g, &x);
            let permuted = fwd(&gp, &xp);
            for old in 0..6 {
                for j in 0..2 {
                    let diff = (base.row(old)[j] - permuted.row(perm[old])[j]).abs();
                    assert!(diff < 1e-12, "directed={directed} node {old} col {j}");
                }
            }
        }
    }

    #[test]
    fn model_kind_round_trips_through_strings() {
        for kind in [ModelKind::Gcn, ModelKind::DirGcn] {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("sage".parse::<ModelKind>().is_err());
    }
}
