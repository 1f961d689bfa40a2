//! Representation diagnostics over captured embeddings: absolute cosine
//! similarity, class-conditional cosine means, linear CKA, linear probes on
//! frozen embeddings, and added-edge-set overlap (UpSet) tables.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::SplitMasks;
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("no valid {0} pairs to average over")]
    NoValidPairs(&'static str),
    #[error("input has no nonconstant column; similarity is undefined")]
    ZeroVariance,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training mask holds a single class; the probe is degenerate")]
    SingleClassTrainMask,
    #[error("mask references node {node} but there are {n_rows} embedding rows")]
    MaskOutOfRange { node: usize, n_rows: usize },
}

/// |cos(u, v)| = |uᵀv| / (‖u‖‖v‖), always in [0, 1].
pub fn abs_cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T, DiagnosticsError> {
    if u.len() != v.len() {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = T::zero();
    let mut nu = T::zero();
    let mut nv = T::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == T::zero() || nv == T::zero() {
        return Err(DiagnosticsError::ZeroVector);
    }
    Ok((dot.abs() / (nu.sqrt() * nv.sqrt())).min(T::one()))
}

/// Exact class-pair averaging is used while the total pair count stays at or
/// below this bound; larger instances fall back to a seeded uniform sample of
/// the same size.
pub const MAX_EXACT_PAIRS: usize = 1_000_000;

/// Mean |cos| over same-class and different-class node pairs of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPairCosine {
    pub same_class_mean: f64,
    pub diff_class_mean: f64,
    pub same_pairs: usize,
    pub diff_pairs: usize,
    /// Nodes dropped because their embedding row was exactly zero.
    pub excluded_zero_rows: usize,
    pub sampled: bool,
}

/// Class-conditional mean absolute cosine similarity over node pairs.
///
/// Pairs are exact when the total count is at most [`MAX_EXACT_PAIRS`],
/// otherwise a seeded uniform sample of that many pairs is averaged.
/// Zero-embedding rows are excluded (their count is reported).
pub fn class_pair_cosine<T: Scalar>(
    embeddings: &DenseMatrix<T>,
    labels: &[usize],
    seed: u64,
) -> Result<ClassPairCosine, DiagnosticsError> {
    class_pair_cosine_with_threshold(embeddings, labels, seed, MAX_EXACT_PAIRS)
}

fn class_pair_cosine_with_threshold<T: Scalar>(
    embeddings: &DenseMatrix<T>,
    labels: &[usize],
    seed: u64,
    max_exact_pairs: usize,
) -> Result<ClassPairCosine, DiagnosticsError> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "{n} embedding rows but {} labels",
            labels.len()
        )));
    }
    // Unit-normalize the nonzero rows once; cosines become plain dots.
    let mut unit: Vec<Vec<T>> = Vec::new();
    let mut kept_labels: Vec<usize> = Vec::new();
    let mut excluded = 0usize;
    for i in 0..n {
        let row = embeddings.row(i);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm == T::zero() {
            excluded += 1;
            continue;
        }
        unit.push(row.iter().map(|&x| x / norm).collect());
        kept_labels.push(labels[i]);
    }
    let m = unit.len();
    let total_pairs = m.saturating_mul(m.saturating_sub(1)) / 2;
    if total_pairs == 0 {
        return Err(DiagnosticsError::NoValidPairs("node"));
    }

    let mut same_sum = 0.0f64;
    let mut diff_sum = 0.0f64;
    let mut same_count = 0usize;
    let mut diff_count = 0usize;
    let mut accumulate = |i: usize, j: usize| {
        let dot: T = unit[i].iter().zip(&unit[j]).map(|(&a, &b)| a * b).sum();
        let c = dot.abs().min(T::one()).to_f64();
        if kept_labels[i] == kept_labels[j] {
            same_sum += c;
            same_count += 1;
        } else {
            diff_sum += c;
            diff_count += 1;
        }
    };
    let sampled = total_pairs > max_exact_pairs;
    if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut drawn = 0usize;
        while drawn < max_exact_pairs {
            let i = rng.gen_range(0..m);
            let j = rng.gen_range(0..m);
            if i == j {
                continue;
            }
            accumulate(i, j);
            drawn += 1;
        }
    } else {
        for i in 0..m {
            for j in i + 1..m {
                accumulate(i, j);
            }
        }
    }
    if same_count == 0 {
        return Err(DiagnosticsError::NoValidPairs("same-class"));
    }
    if diff_count == 0 {
        return Err(DiagnosticsError::NoValidPairs("different-class"));
    }
    Ok(ClassPairCosine {
        same_class_mean: same_sum / same_count as f64,
        diff_class_mean: diff_sum / diff_count as f64,
        same_pairs: same_count,
        diff_pairs: diff_count,
        excluded_zero_rows: excluded,
        sampled,
    })
}

/// Linear Centered Kernel Alignment between two representations of the same
/// node set: ‖Y_cᵀX_c‖_F² / (‖X_cᵀX_c‖_F · ‖Y_cᵀY_c‖_F) with column-centered
/// inputs. Invariant to orthogonal transforms and isotropic scaling.
pub fn linear_cka<T: Scalar>(
    x: &DenseMatrix<T>,
    y: &DenseMatrix<T>,
) -> Result<T, DiagnosticsError> {
    if x.rows() != y.rows() {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "{} vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    let xx = xc.transpose().matmul(&xc).frobenius_norm();
    let yy = yc.transpose().matmul(&yc).frobenius_norm();
    if xx == T::zero() || yy == T::zero() {
        return Err(DiagnosticsError::ZeroVariance);
    }
    let xy = yc.transpose().matmul(&xc).frobenius_norm();
    Ok(xy * xy / (xx * yy))
}

fn center_columns<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    let (n, d) = (m.rows(), m.cols());
    let inv_n = T::one() / T::from_usize(n);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (s, &x) in mean.iter_mut().zip(m.row(i)) {
            *s += x;
        }
    }
    for s in &mut mean {
        *s *= inv_n;
    }
    DenseMatrix::from_fn(n, d, |i, j| m.row(i)[j] - mean[j])
}

/// Hyperparameters of the linear probe; `Default` gives the standard setup
/// (lr 0.1, 1000 iterations, L2 1e-4 on weights only, gradient max-norm
/// tolerance 1e-7).
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub l2: f64,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { learning_rate: 0.1, max_iters: 1000, l2: 1e-4, grad_tol: 1e-7 }
    }
}

/// Multinomial logistic probe on frozen embeddings: full-batch gradient
/// descent on the train mask from zero-initialized weights and bias, reported
/// as test-mask accuracy.
pub fn linear_probe<T: Scalar>(
    embeddings: &DenseMatrix<T>,
    labels: &[usize],
    masks: &SplitMasks,
    cfg: &ProbeConfig,
) -> Result<f64, DiagnosticsError> {
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if labels.len() != n {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "{n} embedding rows but {} labels",
            labels.len()
        )));
    }
    for &node in masks.train.iter().chain(&masks.test) {
        if node >= n {
            return Err(DiagnosticsError::MaskOutOfRange { node, n_rows: n });
        }
    }
    if masks.train.is_empty() {
        return Err(DiagnosticsError::NoValidPairs("training"));
    }
    let classes: BTreeSet<usize> = masks.train.iter().map(|&i| labels[i]).collect();
    if classes.len() < 2 {
        return Err(DiagnosticsError::SingleClassTrainMask);
    }
    let c = labels.iter().copied().max().unwrap_or(0) + 1;
    let m = masks.train.len();
    let inv_m = 1.0 / m as f64;

    let mut w = vec![vec![0.0f64; c]; d];
    let mut b = vec![0.0f64; c];
    let mut probs = vec![0.0f64; c];
    for _ in 0..cfg.max_iters {
        let mut gw = vec![vec![0.0f64; c]; d];
        let mut gb = vec![0.0f64; c];
        for &i in &masks.train {
            let row = embeddings.row(i);
            softmax_into(row, &w, &b, &mut probs);
            for (k, p) in probs.iter().enumerate() {
                let delta = (p - if k == labels[i] { 1.0 } else { 0.0 }) * inv_m;
                gb[k] += delta;
                for (j, &x) in row.iter().enumerate() {
                    gw[j][k] += delta * x.to_f64();
                }
            }
        }
        let mut max_grad = 0.0f64;
        for j in 0..d {
            for k in 0..c {
                gw[j][k] += cfg.l2 * w[j][k];
                max_grad = max_grad.max(gw[j][k].abs());
            }
        }
        for &g in &gb {
            max_grad = max_grad.max(g.abs());
        }
        for j in 0..d {
            for k in 0..c {
                w[j][k] -= cfg.learning_rate * gw[j][k];
            }
        }
        for (bk, &g) in b.iter_mut().zip(&gb) {
            *bk -= cfg.learning_rate * g;
        }
        if max_grad <= cfg.grad_tol {
            break;
        }
    }

    if masks.test.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for &i in &masks.test {
        let row = embeddings.row(i);
        softmax_into(row, &w, &b, &mut probs);
        let mut best = 0usize;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / masks.test.len() as f64)
}

fn softmax_into<T: Scalar>(row: &[T], w: &[Vec<f64>], b: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let mut z = b[k];
        for (j, &x) in row.iter().enumerate() {
            z += x.to_f64() * w[j][k];
        }
        *o = z;
    }
    let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// One row of an UpSet overlap table: the named subset of strategies, the
/// number of edges belonging to exactly those sets, and the Jaccard index of
/// the subset's common intersection over its union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub subset: Vec<String>,
    pub exclusive_size: usize,
    pub jaccard: f64,
}

/// UpSet-style overlap of added-edge sets across strategies.
///
/// Rows cover every nonempty subset of the given strategies, ordered by
/// subset bitmask over the sorted strategy names; exclusive sizes partition
/// the union of all sets.
pub fn edge_set_overlap(
    sets: &BTreeMap<String, BTreeSet<(usize, usize)>>,
) -> Vec<OverlapRow> {
    let names: Vec<&String> = sets.keys().collect();
    let k = names.len();
    let mut rows = Vec::with_capacity((1usize << k).saturating_sub(1));
    for mask in 1..(1usize << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let mut common: Option<BTreeSet<(usize, usize)>> = None;
        let mut union: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &i in &members {
            let s = &sets[names[i]];
            union.extend(s.iter().copied());
            common = Some(match common {
                None => s.clone(),
                Some(acc) => acc.intersection(s).copied().collect(),
            });
        }
        let common = common.unwrap_or_default();
        // Exclusive: in every member set and in none of the others.
        let exclusive_size = common
            .iter()
            .filter(|e| {
                (0..k)
                    .filter(|i| mask >> i & 1 == 0)
                    .all(|i| !sets[names[i]].contains(e))
            })
            .count();
        let jaccard =
            if union.is_empty() { 0.0 } else { common.len() as f64 / union.len() as f64 };
        rows.push(OverlapRow {
            subset: members.iter().map(|&i| names[i].clone()).collect(),
            exclusive_size,
            jaccard,
        });
    }
    rows
}

/// Aggregated diagnostics for one model/strategy cell, assembled by the CLI.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Per-layer class-conditional cosine means.
    pub cosine: Vec<ClassPairCosine>,
    /// CKA values keyed by the compared pair's description.
    pub cka: Vec<(String, f64)>,
    /// (depth, readout_layer, accuracy) cells.
    pub probe_accuracy: Vec<(usize, usize, f64)>,
    pub edge_overlap: Vec<OverlapRow>,
}
