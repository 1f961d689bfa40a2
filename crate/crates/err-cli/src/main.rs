//! `err` — command-line front end for resistance-guided graph rewiring:
//! resistance and curvature reports, budgeted rewiring, single training
//! runs, full experiment sweeps, result summaries, and representation
//! diagnostics over captured embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use err_core::dataset::{self, DatasetPaths};
use err_core::diagnostics::{
    class_pair_cosine, edge_set_overlap, linear_cka, linear_probe, ProbeConfig,
};
use err_core::gnn::{self, ModelKind, SplitMasks};
use err_core::graph::{parse_edge_list, write_edge_list};
use err_core::pipeline::{
    configure_thread_pool, run_pipeline, summarize, summary_csv, ExperimentConfig, RunRecord,
};
use err_core::resistance::{effective_resistance, resistance_per_hop};
use err_core::rewiring::{err_rewire, EditAction, EditRecord, RewiringConfig, Strategy};
use err_core::{curvature, Dataset, GnnConfig, Graph, Mat};

type CliResult = Result<ExitCode, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "err", version, about = "Effective-resistance graph rewiring toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewire a graph under an edge budget and write the result + edit log.
    Rewire(RewireArgs),
    /// All-pairs effective resistance report as CSV.
    Resistance(IoArgs),
    /// Per-edge Ollivier-Ricci curvature report as CSV.
    Curvature(IoArgs),
    /// Train a single GCN/DirGCN configuration on a dataset.
    Train(TrainArgs),
    /// Run a full experiment sweep from a JSON config.
    Sweep(SweepArgs),
    /// Summarize a sweep directory into the best-depth/accuracy table.
    Summarize(SummarizeArgs),
    /// Representation diagnostics over a sweep's captured embeddings.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct RewireArgs {
    /// Input graph in edge-list format.
    #[arg(long)]
    input: PathBuf,
    /// Strategy name: none, resistance_add_remove, resistance_hop_add_remove,
    /// resistance_add_only, resistance_hop_add_only, curvature_add_remove.
    #[arg(long)]
    strategy: String,
    /// Budget fraction r in [0, 1]; at most floor(r * |E0|) additions.
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the rewired graph (edge-list format).
    #[arg(long)]
    output: PathBuf,
    /// Optional output path for the edit log (JSON array).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct IoArgs {
    /// Input graph in edge-list format.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding edges.txt, features.txt, labels.txt,
    /// masks.txt. Alternative to the four explicit path flags.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Model kind: gcn or dirgcn.
    #[arg(long, default_value = "gcn")]
    model: String,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long)]
    pairnorm: bool,
    #[arg(long, default_value_t = 16)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5e-3)]
    weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON training-report output (loss/accuracy curves).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Optional JSON archive of per-layer embeddings at the best epoch.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Sweep directory containing per-run JSON records.
    #[arg(long)]
    sweep_dir: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Sweep directory containing run records, edit logs, and embedding
    /// archives.
    #[arg(long)]
    sweep_dir: PathBuf,
    /// Labels file of the dataset the sweep ran on.
    #[arg(long)]
    labels: PathBuf,
    /// Masks file of the dataset (train rows fit the probe, test rows score
    /// it).
    #[arg(long)]
    masks: PathBuf,
    /// Output directory for the CSVs; defaults to <sweep-dir>/diagnostics.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Readout depth for the cosine curves and CKA matrix. When no archive
    /// has this exact depth the cosine curves fall back to every depth.
    #[arg(long, default_value_t = 7)]
    outer_layer: usize,
    /// Restrict the cosine curves to one inner layer; default sweeps all.
    #[arg(long)]
    inner_layer: Option<usize>,
    /// Seed for the sampled cosine estimator on large pair sets.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    configure_thread_pool();
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Command::Rewire(a) => run_rewire(&a),
        Command::Resistance(a) => run_resistance(&a),
        Command::Curvature(a) => run_curvature(&a),
        Command::Train(a) => run_train(&a),
        Command::Sweep(a) => run_sweep(&a),
        Command::Summarize(a) => run_summarize(&a),
        Command::Diagnose(a) => run_diagnose(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("err: {e}");
            ExitCode::FAILURE
        }
    }
}

fn read_file(path: &Path) -> Result<String, Box<dyn Error>> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_file(path: &Path, content: &str) -> Result<(), Box<dyn Error>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| format!("{}: {e}", parent.display()))?;
        }
    }
    fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()).into())
}

/// Write to the given path, or stdout when no path was given.
fn emit(output: Option<&Path>, content: &str) -> Result<(), Box<dyn Error>> {
    match output {
        Some(p) => write_file(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_graph(path: &Path) -> Result<Graph, Box<dyn Error>> {
    let parsed = parse_edge_list(&read_file(path)?)?;
    if parsed.self_loops_dropped > 0 {
        eprintln!(
            "warning: dropped {} self-loop(s) from {}",
            parsed.self_loops_dropped,
            path.display()
        );
    }
    Ok(parsed.graph)
}

fn run_rewire(args: &RewireArgs) -> CliResult {
    let strategy = Strategy::from_str(&args.strategy)?;
    let g0 = load_graph(&args.input)?;
    let initial_edges = g0.edge_count();
    let cfg = RewiringConfig { strategy, budget_fraction: args.budget, seed: args.seed };
    let state = err_rewire::<f64>(&g0, &cfg)?;
    write_file(&args.output, &write_edge_list(&state.graph))?;
    if let Some(log) = &args.log {
        write_file(log, &serde_json::to_string_pretty(&state.edits)?)?;
    }
    println!(
        "{strategy} at r={}: added {} / removed {} (cap {}, {} -> {} edges)",
        args.budget,
        state.added_count,
        state.removed_count,
        cfg.budget(initial_edges),
        initial_edges,
        state.graph.edge_count()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_resistance(args: &IoArgs) -> CliResult {
    let g = load_graph(&args.input)?;
    let report = effective_resistance::<f64>(&g)?;
    let hop = resistance_per_hop(&report, &g)?;
    let mut dist: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    let mut csv = String::from("i,j,R,R_hop,d\n");
    for (&(i, j), &r) in &report.pair_values {
        let d = match dist.entry(i).or_insert(g.bfs_distances(i)?)[j] {
            Some(d) => d,
            None => continue,
        };
        let per_hop = hop.get(i, j).expect("reachable pair present in per-hop report");
        csv.push_str(&format!("{i},{j},{r},{per_hop},{d}\n"));
    }
    emit(args.output.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn run_curvature(args: &IoArgs) -> CliResult {
    let g = load_graph(&args.input)?;
    let report = curvature::curvature_all_edges::<f64>(&g)?;
    let mut csv = String::from("u,v,kappa\n");
    for (&(u, v), &kappa) in &report.edge_values {
        csv.push_str(&format!("{u},{v},{kappa}\n"));
    }
    emit(args.output.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn dataset_paths(args: &TrainArgs) -> Result<DatasetPaths, Box<dyn Error>> {
    if let Some(dir) = &args.data_dir {
        return Ok(DatasetPaths::in_dir(dir));
    }
    match (&args.edges, &args.features, &args.labels, &args.masks) {
        (Some(e), Some(f), Some(l), Some(m)) => Ok(DatasetPaths {
            edges: e.clone(),
            features: f.clone(),
            labels: l.clone(),
            masks: m.clone(),
        }),
        _ => Err("pass --data-dir or all of --edges/--features/--labels/--masks".into()),
    }
}

fn run_train(args: &TrainArgs) -> CliResult {
    let ds = Dataset::load(&dataset_paths(args)?)?;
    let cfg = GnnConfig {
        model: ModelKind::from_str(&args.model)?,
        depth: args.depth,
        hidden_dim: args.hidden_dim,
        dropout: args.dropout,
        learning_rate: args.learning_rate,
        weight_decay: args.weight_decay,
        pairnorm: args.pairnorm,
        epochs: args.epochs,
        seed: args.seed,
    };
    let report = gnn::train::<f64>(&ds.graph, &ds.features, &ds.labels, &ds.masks, &cfg)?;
    println!(
        "best epoch {}: val accuracy {:.4}, test accuracy {:.4}",
        report.best_epoch, report.best_val_accuracy, report.test_accuracy_at_best
    );
    if let Some(path) = &args.report {
        let json = serde_json::json!({
            "model": cfg.model,
            "depth": cfg.depth,
            "pairnorm": cfg.pairnorm,
            "seed": cfg.seed,
            "best_epoch": report.best_epoch,
            "best_val_accuracy": report.best_val_accuracy,
            "test_accuracy_at_best": report.test_accuracy_at_best,
            "train_loss": report.train_loss,
            "val_accuracy": report.val_accuracy,
        });
        write_file(path, &serde_json::to_string_pretty(&json)?)?;
    }
    if let Some(path) = &args.embeddings {
        write_file(path, &serde_json::to_string(&report.captured_embeddings)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(args: &SweepArgs) -> CliResult {
    let cfg: ExperimentConfig = serde_json::from_str(&read_file(&args.config)?)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let records = run_pipeline::<f64>(&cfg)?;
    let mut failures = 0usize;
    for rec in &records {
        let status = if rec.succeeded() {
            "ok".to_string()
        } else {
            failures += 1;
            let detail = rec
                .error
                .clone()
                .or_else(|| rec.per_depth.iter().find_map(|d| d.error.clone()))
                .unwrap_or_default();
            format!("FAILED ({detail})")
        };
        println!("{} b={}: {status}", rec.strategy, rec.budget);
    }
    println!(
        "{} run(s), {failures} failure(s); outputs in {}",
        records.len(),
        cfg.sweep_dir().display()
    );
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// Run records live at the top of a sweep directory as `<stem>.json`, next
/// to `<stem>_edits.json` and `<stem>_d<depth>_emb.json` companions.
fn load_records(sweep_dir: &Path) -> Result<Vec<RunRecord>, Box<dyn Error>> {
    let mut names: Vec<String> = fs::read_dir(sweep_dir)
        .map_err(|e| format!("{}: {e}", sweep_dir.display()))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| {
            name.ends_with(".json")
                && !name.ends_with("_edits.json")
                && !name.ends_with("_emb.json")
        })
        .collect();
    names.sort();
    let mut records = Vec::new();
    for name in names {
        let path = sweep_dir.join(&name);
        match serde_json::from_str::<RunRecord>(&read_file(&path)?) {
            Ok(rec) => records.push(rec),
            Err(e) => eprintln!("warning: skipping {name}: {e}"),
        }
    }
    Ok(records)
}

fn run_summarize(args: &SummarizeArgs) -> CliResult {
    let records = load_records(&args.sweep_dir)?;
    if records.is_empty() {
        return Err(format!("no run records found in {}", args.sweep_dir.display()).into());
    }
    let csv = summary_csv(&summarize(&records));
    emit(args.output.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

/// One captured-embeddings archive: the per-layer matrices of the best
/// checkpoint of one (strategy, budget, depth) training run.
struct Archive {
    strategy: String,
    budget: f64,
    depth: usize,
    layers: Vec<Mat>,
}

fn load_archives(sweep_dir: &Path, records: &[RunRecord]) -> Vec<Archive> {
    let mut archives = Vec::new();
    for rec in records {
        if rec.error.is_some() {
            continue;
        }
        for outcome in &rec.per_depth {
            if outcome.error.is_some() {
                continue;
            }
            let name = format!("{}_b{}_d{}_emb.json", rec.strategy, rec.budget, outcome.depth);
            let path = sweep_dir.join(&name);
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("warning: skipping {name}: {e}");
                    continue;
                }
            };
            match serde_json::from_str::<Vec<Mat>>(&text) {
                Ok(layers) => archives.push(Archive {
                    strategy: rec.strategy.to_string(),
                    budget: rec.budget,
                    depth: outcome.depth,
                    layers,
                }),
                Err(e) => eprintln!("warning: skipping {name}: {e}"),
            }
        }
    }
    archives
}

fn run_diagnose(args: &DiagnoseArgs) -> CliResult {
    let records = load_records(&args.sweep_dir)?;
    if records.is_empty() {
        return Err(format!("no run records found in {}", args.sweep_dir.display()).into());
    }
    let lname = args.labels.display().to_string();
    let labels = dataset::parse_labels(&read_file(&args.labels)?, &lname)?;
    let mname = args.masks.display().to_string();
    let (masks, _) = dataset::parse_masks(&read_file(&args.masks)?, &mname)?;
    let archives = load_archives(&args.sweep_dir, &records);
    if archives.is_empty() {
        return Err("no embedding archives found; run `err sweep` first".into());
    }
    let out_dir = args
        .output_dir
        .clone()
        .unwrap_or_else(|| args.sweep_dir.join("diagnostics"));

    let cosine = cosine_csv(&archives, &labels, args)?;
    let probe = probe_csv(&archives, &labels, &masks);
    let cka = cka_csv(&archives, args.outer_layer);
    let upset = upset_csv(&args.sweep_dir, &records);
    for (name, content) in [
        ("cosine_curves.csv", &cosine),
        ("probe_grid.csv", &probe),
        ("cka_matrix.csv", &cka),
        ("upset.csv", &upset),
    ] {
        write_file(&out_dir.join(name), content)?;
    }
    println!(
        "wrote cosine_curves.csv, probe_grid.csv, cka_matrix.csv, upset.csv to {}",
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Per-layer mean absolute cosine among same-class and different-class node
/// pairs. The outer-layer flag picks which readout depth's archives are
/// swept; if no archive matches, every depth is included.
fn cosine_csv(
    archives: &[Archive],
    labels: &[usize],
    args: &DiagnoseArgs,
) -> Result<String, Box<dyn Error>> {
    let outer_present = archives.iter().any(|a| a.depth == args.outer_layer);
    if !outer_present {
        eprintln!(
            "warning: no archive has depth {}; cosine curves cover all depths",
            args.outer_layer
        );
    }
    let mut csv = String::from("strategy,budget,depth,layer,same_mean,diff_mean\n");
    for arch in archives {
        if outer_present && arch.depth != args.outer_layer {
            continue;
        }
        for (idx, layer) in arch.layers.iter().enumerate() {
            let layer_no = idx + 1;
            if args.inner_layer.is_some_and(|l| l != layer_no) {
                continue;
            }
            let stats = class_pair_cosine(layer, labels, args.seed)?;
            if stats.excluded_zero_rows > 0 {
                eprintln!(
                    "note: {} b={} d={} layer {}: {} zero-embedding node(s) excluded",
                    arch.strategy, arch.budget, arch.depth, layer_no, stats.excluded_zero_rows
                );
            }
            csv.push_str(&format!(
                "{},{},{},{layer_no},{},{}\n",
                arch.strategy, arch.budget, arch.depth, stats.same_class_mean,
                stats.diff_class_mean
            ));
        }
    }
    Ok(csv)
}

/// Linear-probe accuracy for every readout layer of every archive.
fn probe_csv(archives: &[Archive], labels: &[usize], masks: &SplitMasks) -> String {
    let mut csv = String::from("strategy,budget,depth,readout_layer,accuracy\n");
    for arch in archives {
        for (idx, layer) in arch.layers.iter().enumerate() {
            match linear_probe(layer, labels, masks, &ProbeConfig::default()) {
                Ok(acc) => csv.push_str(&format!(
                    "{},{},{},{},{acc}\n",
                    arch.strategy, arch.budget, arch.depth, idx + 1
                )),
                Err(e) => eprintln!(
                    "warning: probe failed for {} b={} d={} layer {}: {e}",
                    arch.strategy, arch.budget, arch.depth, idx + 1
                ),
            }
        }
    }
    csv
}

/// Pairwise CKA between strategies' representations at matching
/// (budget, depth) cells, read out at layer min(outer, depth).
fn cka_csv(archives: &[Archive], outer_layer: usize) -> String {
    let mut cells: BTreeMap<(u64, usize), Vec<&Archive>> = BTreeMap::new();
    for arch in archives {
        cells.entry((arch.budget.to_bits(), arch.depth)).or_default().push(arch);
    }
    let mut csv = String::from("strategy_a,strategy_b,budget,depth,cka\n");
    for group in cells.values_mut() {
        group.sort_by(|a, b| a.strategy.cmp(&b.strategy));
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                let layer = outer_layer.min(a.depth) - 1;
                match linear_cka(&a.layers[layer], &b.layers[layer]) {
                    Ok(v) => csv.push_str(&format!(
                        "{},{},{},{},{v}\n",
                        a.strategy, b.strategy, a.budget, a.depth
                    )),
                    Err(e) => eprintln!(
                        "warning: CKA failed for {} vs {} b={} d={}: {e}",
                        a.strategy, b.strategy, a.budget, a.depth
                    ),
                }
            }
        }
    }
    csv
}

/// UpSet table over the added-edge sets of each strategy, one block per
/// budget. Strategies with empty added sets are left out.
fn upset_csv(sweep_dir: &Path, records: &[RunRecord]) -> String {
    let mut budgets: BTreeMap<u64, BTreeMap<String, BTreeSet<(usize, usize)>>> = BTreeMap::new();
    for rec in records {
        if rec.error.is_some() {
            continue;
        }
        let name = format!("{}_b{}_edits.json", rec.strategy, rec.budget);
        let text = match fs::read_to_string(sweep_dir.join(&name)) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let edits: Vec<EditRecord> = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("warning: skipping {name}: {e}");
                continue;
            }
        };
        let added: BTreeSet<(usize, usize)> = edits
            .iter()
            .filter(|e| matches!(e.action, EditAction::Add | EditAction::AddPair))
            .flat_map(|e| e.edges.iter().copied())
            .collect();
        if !added.is_empty() {
            budgets
                .entry(rec.budget.to_bits())
                .or_default()
                .insert(rec.strategy.to_string(), added);
        }
    }
    let mut csv = String::from("budget,subset_mask,exclusive_size,jaccard\n");
    for (bits, sets) in &budgets {
        if sets.len() < 2 {
            continue;
        }
        let budget = f64::from_bits(*bits);
        for row in edge_set_overlap(sets) {
            csv.push_str(&format!(
                "{budget},{},{},{}\n",
                row.subset.join("|"),
                row.exclusive_size,
                row.jaccard
            ));
        }
    }
    csv
}
