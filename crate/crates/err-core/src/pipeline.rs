//! Experiment sweep orchestration: rewire once per (strategy, budget), train
//! across depths with deterministic per-run seeds, persist content-addressed
//! outputs atomically, and summarize best-depth accuracies.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DatasetPaths};
use crate::gnn::{self, GnnConfig, ModelKind, TrainReport};
use crate::graph::{Graph, GraphMode};
use crate::linalg::DenseMatrix;
use crate::rewiring::{err_rewire, RewiringConfig, RewiringState, Strategy};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Serialize(#[from] serde_json::Error),
}

/// Training hyperparameters. The per-dataset presets follow the literature
/// values: Cora/CiteSeer use hidden 16 with weight decay 5e-3, Cornell/Texas
/// hidden 64 with weight decay 5e-4; dropout 0.5 and lr 0.01 throughout.
/// 200 epochs with best-validation checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_dim: 16,
            dropout: 0.5,
            learning_rate: 0.01,
            weight_decay: 5e-3,
            epochs: 200,
        }
    }
}

impl Hyperparams {
    /// Preset for a known dataset name (case-insensitive), if any.
    pub fn for_dataset(name: &str) -> Option<Self> {
        let base = Hyperparams::default();
        match name.to_ascii_lowercase().as_str() {
            "cora" | "citeseer" => Some(base),
            "cornell" | "texas" => {
                Some(Hyperparams { hidden_dim: 64, weight_decay: 5e-4, ..base })
            }
            _ => None,
        }
    }
}

/// Full description of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    pub dataset: DatasetPaths,
    pub model: ModelKind,
    pub pairnorm: bool,
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<f64>,
    pub depths: Vec<usize>,
    pub root_seed: u64,
    pub output_dir: PathBuf,
    pub hyper: Hyperparams,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.strategies.is_empty() || self.budgets.is_empty() || self.depths.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "strategies, budgets and depths must all be nonempty".into(),
            ));
        }
        for &b in &self.budgets {
            if !(0.0..=1.0).contains(&b) {
                return Err(PipelineError::InvalidConfig(format!("budget {b} outside [0, 1]")));
            }
        }
        if let Some(&d) = self.depths.iter().find(|&&d| d == 0) {
            return Err(PipelineError::InvalidConfig(format!("depth {d} must be at least 1")));
        }
        Ok(())
    }

    /// Content hash of the canonicalized config; everything except the
    /// output directory participates, so identical experiments map to
    /// identical output paths regardless of where results are stored.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            dataset_name: &'a str,
            dataset: &'a DatasetPaths,
            model: ModelKind,
            pairnorm: bool,
            strategies: &'a [Strategy],
            budgets: &'a [f64],
            depths: &'a [usize],
            root_seed: u64,
            hyper: &'a Hyperparams,
        }
        let canonical = serde_json::to_string(&Canonical {
            dataset_name: &self.dataset_name,
            dataset: &self.dataset,
            model: self.model,
            pairnorm: self.pairnorm,
            strategies: &self.strategies,
            budgets: &self.budgets,
            depths: &self.depths,
            root_seed: self.root_seed,
            hyper: &self.hyper,
        })
        .expect("config serializes");
        format!("{:032x}", fnv1a_128(canonical.as_bytes()))
    }

    /// Directory all of this sweep's outputs live in.
    pub fn sweep_dir(&self) -> PathBuf {
        self.output_dir.join(&self.fingerprint()[..16])
    }
}

fn fnv1a_128(bytes: &[u8]) -> u128 {
    const BASIS: u128 = 0x6c62272e07bb014262b821756295c58d;
    const PRIME: u128 = 0x0000000001000000000000000000013b;
    let mut h = BASIS;
    for &b in bytes {
        h ^= b as u128;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic per-run seed: FNV-1a over (root seed, strategy name, budget
/// bits, depth) with a splitmix64 finalizer. Independent of scheduling order.
pub fn derive_seed(root_seed: u64, strategy: Strategy, budget: f64, depth: usize) -> u64 {
    const BASIS: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = BASIS;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&root_seed.to_le_bytes());
    eat(strategy.name().as_bytes());
    eat(&budget.to_bits().to_le_bytes());
    eat(&(depth as u64).to_le_bytes());
    // splitmix64 finalizer for avalanche
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Depth slot reserved for the rewiring stage's seed.
const REWIRE_SEED_SLOT: usize = usize::MAX;

/// One trained depth within a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthOutcome {
    pub depth: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Result of one (strategy, budget) cell: rewiring accounting plus the
/// per-depth training outcomes. Wall time is informational and excluded from
/// serialization so identical configs reproduce byte-identical records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub dataset: String,
    pub model: ModelKind,
    pub pairnorm: bool,
    pub strategy: Strategy,
    pub budget: f64,
    pub added: usize,
    pub removed: usize,
    /// Rewiring-stage failure, if any; training is skipped in that case.
    pub error: Option<String>,
    pub per_depth: Vec<DepthOutcome>,
    pub best_depth: Option<usize>,
    pub max_test_accuracy: Option<f64>,
    #[serde(skip)]
    pub wall_time_secs: Option<f64>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.per_depth.iter().all(|d| d.error.is_none())
    }
}

/// Caps the global rayon pool at `ERR_THREADS` when the variable is set.
/// Safe to call repeatedly; only the first global-pool initialization wins.
pub fn configure_thread_pool() {
    if let Ok(v) = std::env::var("ERR_THREADS") {
        if let Ok(k) = v.parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<(), PipelineError> {
    let io_err = |source| PipelineError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, content).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

fn to_f64_matrix<T: Scalar>(m: &DenseMatrix<T>) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m.row(i)[j].to_f64())
}

/// Runs the full sweep: for each (strategy, budget) the graph is rewired
/// once; each depth then trains on that shared rewired graph (symmetrized
/// first when a GCN meets a directed graph). Per-run seeds derive from the
/// root seed, so results do not depend on scheduling. Records, edit logs and
/// captured embeddings are persisted under [`ExperimentConfig::sweep_dir`];
/// module errors mark the affected run failed without stopping the sweep.
pub fn run_pipeline<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, PipelineError> {
    cfg.validate()?;
    configure_thread_pool();
    let data = Dataset::<T>::load(&cfg.dataset)?;
    if cfg.model == ModelKind::DirGcn && !data.graph.is_directed() {
        return Err(PipelineError::InvalidConfig(
            "dirgcn requires a directed dataset graph".into(),
        ));
    }
    let fingerprint = cfg.fingerprint();
    let sweep_dir = cfg.sweep_dir();
    fs::create_dir_all(&sweep_dir)
        .map_err(|source| PipelineError::Io { path: sweep_dir.display().to_string(), source })?;

    let jobs: Vec<(Strategy, f64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| cfg.budgets.iter().map(move |&b| (s, b)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(strategy, budget)| {
            run_cell::<T>(cfg, &data, &fingerprint, &sweep_dir, strategy, budget)
        })
        .collect::<Result<_, _>>()?;

    write_atomic(&sweep_dir.join("sweep.csv"), &sweep_csv(&records))?;
    Ok(records)
}

fn run_cell<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset<T>,
    fingerprint: &str,
    sweep_dir: &Path,
    strategy: Strategy,
    budget: f64,
) -> Result<RunRecord, PipelineError> {
    let started = Instant::now();
    let stem = format!("{strategy}_b{budget}");
    let mut record = RunRecord {
        fingerprint: fingerprint.to_string(),
        dataset: cfg.dataset_name.clone(),
        model: cfg.model,
        pairnorm: cfg.pairnorm,
        strategy,
        budget,
        added: 0,
        removed: 0,
        error: None,
        per_depth: Vec::new(),
        best_depth: None,
        max_test_accuracy: None,
        wall_time_secs: None,
    };

    let rewire_cfg = RewiringConfig {
        strategy,
        budget_fraction: budget,
        seed: derive_seed(cfg.root_seed, strategy, budget, REWIRE_SEED_SLOT),
    };
    match err_rewire::<T>(&data.graph, &rewire_cfg) {
        Ok(state) => {
            record.added = state.added_count;
            record.removed = state.removed_count;
            write_atomic(
                &sweep_dir.join(format!("{stem}_edits.json")),
                &serde_json::to_string_pretty(&state.edits)?,
            )?;
            self::train_depths(cfg, data, &state, strategy, budget, sweep_dir, &stem, &mut record)?;
        }
        Err(e) => {
            record.error = Some(e.to_string());
        }
    }

    for outcome in &record.per_depth {
        if let Some(acc) = outcome.test_accuracy {
            let better = match record.max_test_accuracy {
                None => true,
                Some(best) => acc > best,
            };
            if better {
                record.max_test_accuracy = Some(acc);
                record.best_depth = Some(outcome.depth);
            }
        }
    }
    record.wall_time_secs = Some(started.elapsed().as_secs_f64());
    write_atomic(
        &sweep_dir.join(format!("{stem}.json")),
        &serde_json::to_string_pretty(&record)?,
    )?;
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn train_depths<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset<T>,
    rewired: &RewiringState,
    strategy: Strategy,
    budget: f64,
    sweep_dir: &Path,
    stem: &str,
    record: &mut RunRecord,
) -> Result<(), PipelineError> {
    // Algorithmic order: rewire on the original form, then undirect for GCN.
    let train_graph: Graph =
        if cfg.model == ModelKind::Gcn && rewired.graph.mode() == GraphMode::Directed {
            rewired.graph.symmetrize()
        } else {
            rewired.graph.clone()
        };
    for &depth in &cfg.depths {
        let seed = derive_seed(cfg.root_seed, strategy, budget, depth);
        let gnn_cfg = GnnConfig {
            model: cfg.model,
            depth,
            hidden_dim: cfg.hyper.hidden_dim,
            dropout: T::from_f64(cfg.hyper.dropout),
            learning_rate: T::from_f64(cfg.hyper.learning_rate),
            weight_decay: T::from_f64(cfg.hyper.weight_decay),
            pairnorm: cfg.pairnorm,
            epochs: cfg.hyper.epochs,
            seed,
        };
        let mut outcome = DepthOutcome {
            depth,
            seed,
            best_epoch: None,
            val_accuracy: None,
            test_accuracy: None,
            error: None,
        };
        match gnn::train(&train_graph, &data.features, &data.labels, &data.masks, &gnn_cfg) {
            Ok(report) => {
                outcome.best_epoch = Some(report.best_epoch);
                outcome.val_accuracy = Some(report.best_val_accuracy);
                outcome.test_accuracy = Some(report.test_accuracy_at_best);
                archive_embeddings(sweep_dir, stem, depth, &report)?;
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
        record.per_depth.push(outcome);
    }
    Ok(())
}

fn archive_embeddings<T: Scalar>(
    sweep_dir: &Path,
    stem: &str,
    depth: usize,
    report: &TrainReport<T>,
) -> Result<(), PipelineError> {
    let layers: Vec<DenseMatrix<f64>> =
        report.captured_embeddings.iter().map(to_f64_matrix).collect();
    write_atomic(
        &sweep_dir.join(format!("{stem}_d{depth}_emb.json")),
        &serde_json::to_string(&layers)?,
    )
}

/// The per-depth CSV written alongside the run records, one row per
/// (strategy, budget, depth).
pub fn sweep_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "dataset,model,pairnorm,strategy,budget,depth,seed,added,removed,best_epoch,val_accuracy,test_accuracy,error\n",
    );
    for r in records {
        if r.per_depth.is_empty() {
            out.push_str(&format!(
                "{},{},{},{},{},,,{},{},,,,{}\n",
                r.dataset,
                r.model,
                r.pairnorm,
                r.strategy,
                r.budget,
                r.added,
                r.removed,
                csv_escape(r.error.as_deref().unwrap_or(""))
            ));
            continue;
        }
        for d in &r.per_depth {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.dataset,
                r.model,
                r.pairnorm,
                r.strategy,
                r.budget,
                d.depth,
                d.seed,
                r.added,
                r.removed,
                d.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
                d.val_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                d.test_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                csv_escape(d.error.as_deref().unwrap_or("")),
            ));
        }
    }
    out
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One summary cell: the depth maximizing test accuracy (smallest depth on
/// ties) in the "L / acc" table format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: ModelKind,
    pub pairnorm: bool,
    pub strategy: Strategy,
    pub budget: f64,
    pub best_depth: usize,
    pub max_test_accuracy: f64,
    pub formatted: String,
}

/// Collapses records into best-depth summary rows; failed or empty cells are
/// omitted. The argmax over depth takes the smallest depth on ties.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = records
        .iter()
        .filter_map(|r| {
            let mut best: Option<(usize, f64)> = None;
            for d in &r.per_depth {
                if let Some(acc) = d.test_accuracy {
                    let better = match best {
                        None => true,
                        Some((_, b)) => acc > b,
                    };
                    if better {
                        best = Some((d.depth, acc));
                    }
                }
            }
            best.map(|(depth, acc)| SummaryRow {
                dataset: r.dataset.clone(),
                model: r.model,
                pairnorm: r.pairnorm,
                strategy: r.strategy,
                budget: r.budget,
                best_depth: depth,
                max_test_accuracy: acc,
                formatted: format_summary_cell(depth, acc),
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.dataset.as_str(), a.model.name(), a.pairnorm, a.strategy.name())
            .cmp(&(b.dataset.as_str(), b.model.name(), b.pairnorm, b.strategy.name()))
            .then(a.budget.partial_cmp(&b.budget).expect("budgets are finite"))
    });
    rows
}

/// "best layer / max accuracy" cell, accuracy as a percentage with one
/// decimal, e.g. depth 3 at 0.807 → `3 / 80.7`.
pub fn format_summary_cell(depth: usize, accuracy: f64) -> String {
    format!("{} / {:.1}", depth, accuracy * 100.0)
}

/// CSV rendering of [`summarize`].
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out =
        String::from("dataset,model,pairnorm,strategy,budget,best_depth,max_test_accuracy,cell\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.model,
            r.pairnorm,
            r.strategy,
            r.budget,
            r.best_depth,
            r.max_test_accuracy,
            csv_escape(&r.formatted),
        ));
    }
    out
}
