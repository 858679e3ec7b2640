//! Command-line pipeline: grid inspection, dataset generation, training,
//! evaluation and single-trajectory prediction.
//!
//! Exit codes: 0 success, 2 input/parse problems, 3 numerical/equilibrium
//! failures, 4 fingerprint/contract mismatches. `SYNCHRONY_SEED` supplies a
//! default seed when `--seed` is absent.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

use crate::adjacency::{build_adjacency, operator_for, AdjacencyError, AdjacencyVariant};
use crate::dynamics::{solve_equilibrium, DynamicsError, LabelConfig, SystemState};
use crate::grid::{load_grid, validate, GridError};
use crate::model::{DataFlow, ModelError, ModelConfig, StabilityModel};
use crate::sampling::{
    generate_dataset, hex32, load_dataset, save_dataset, sidecar_path, split_dataset,
    PerturbationSpec, SamplingError,
};
use crate::training::{
    evaluate, train, write_metrics_json, Optimizer, TrainConfig, TrainingError,
};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Adjacency(#[from] AdjacencyError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("{0}")]
    Input(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Grid(_) | CliError::Input(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Dynamics(_) => EXIT_NUMERICAL,
            CliError::Adjacency(AdjacencyError::Equilibrium { .. }) => EXIT_NUMERICAL,
            CliError::Adjacency(_) => EXIT_CONTRACT,
            CliError::Sampling(e) => match e {
                SamplingError::Dynamics(_) => EXIT_NUMERICAL,
                SamplingError::Fingerprint { .. } => EXIT_CONTRACT,
                _ => EXIT_INPUT,
            },
            CliError::Model(e) => match e {
                ModelError::Fingerprint { .. } | ModelError::Contract(_) => EXIT_CONTRACT,
                ModelError::NonFinite { .. } => EXIT_NUMERICAL,
                ModelError::Adjacency(AdjacencyError::Equilibrium { .. }) => EXIT_NUMERICAL,
                ModelError::Tensor(_) | ModelError::Adjacency(_) => EXIT_CONTRACT,
                ModelError::Io(_) | ModelError::Format(_) => EXIT_INPUT,
            },
            CliError::Training(e) => match e {
                TrainingError::Fingerprint { .. } => EXIT_CONTRACT,
                TrainingError::Diverged { .. } => EXIT_NUMERICAL,
                TrainingError::Model(m) => CliError::from_model_code(m),
                _ => EXIT_INPUT,
            },
        }
    }

    fn from_model_code(e: &ModelError) -> i32 {
        match e {
            ModelError::Fingerprint { .. } | ModelError::Contract(_) => EXIT_CONTRACT,
            ModelError::NonFinite { .. } => EXIT_NUMERICAL,
            ModelError::Tensor(_) | ModelError::Adjacency(_) => EXIT_CONTRACT,
            ModelError::Io(_) | ModelError::Format(_) => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    #[value(name = "1", alias = "topology")]
    Topology,
    #[value(name = "2", alias = "coupling-flow")]
    CouplingFlow,
    #[value(name = "3", alias = "coupling-injection")]
    CouplingInjection,
}

impl From<VariantArg> for AdjacencyVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Topology => AdjacencyVariant::Topology,
            VariantArg::CouplingFlow => AdjacencyVariant::CouplingFlow,
            VariantArg::CouplingInjection => AdjacencyVariant::CouplingInjection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Literal,
    TemporalPreserving,
}

impl From<ModeArg> for DataFlow {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Literal => DataFlow::Literal,
            ModeArg::TemporalPreserving => DataFlow::TemporalPreserving,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "synchrony",
    version,
    about = "Transient-stability laboratory: swing-equation simulation, dataset generation and grid-informed classification"
)]
pub struct Cli {
    /// Cap the rayon thread pool used for data-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect and validate a grid file.
    Gridinfo(GridinfoArgs),
    /// Generate a labeled perturbation dataset.
    Generate(GenerateArgs),
    /// Train the classifier on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Classify a single exported trajectory.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GridinfoArgs {
    pub grid: PathBuf,
    /// Dump the raw and renormalized adjacency of this variant as CSV.
    #[arg(long)]
    pub adjacency: Option<VariantArg>,
    /// Target file for the adjacency dump (defaults to stdout).
    #[arg(long)]
    pub adjacency_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// single: per-node kicks only; multi: combination kicks only; both.
    #[arg(long, default_value = "both")]
    pub mode: String,
    #[arg(long, default_value_t = 100)]
    pub per_node: usize,
    /// Nodes kicked together in each combination.
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 60)]
    pub combos: usize,
    #[arg(long, default_value_t = 100)]
    pub per_combo: usize,
    /// Recorded snapshots per sample.
    #[arg(long, default_value_t = 101)]
    pub window: usize,
    /// Frequency kick half-width (rad/s).
    #[arg(long, default_value_t = 20.0)]
    pub kick: f64,
    /// Simulated labeling horizon (s).
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    /// Also kick phases at the perturbed nodes.
    #[arg(long)]
    pub perturb_phase: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub beta: f64,
    /// Disable per-batch class weighting (sets both class weights to 1).
    #[arg(long)]
    pub no_class_weighting: bool,
    #[arg(long)]
    pub sgd: bool,
    #[arg(long, value_enum, default_value_t = VariantArg::CouplingInjection)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Literal)]
    pub flow: ModeArg,
    #[arg(long, default_value_t = 2)]
    pub gc_layers: usize,
    #[arg(long, default_value_t = 16)]
    pub gc_features: usize,
    #[arg(long, default_value_t = 64)]
    pub fc_width: usize,
    #[arg(long, default_value_t = 5)]
    pub tc_blocks: usize,
    #[arg(long, default_value_t = 2)]
    pub kernel: usize,
    #[arg(long, default_value_t = 32)]
    pub filters: usize,
    #[arg(long, default_value_t = 32)]
    pub mlp_hidden: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for the train/val/test split shuffle (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trajectory CSV exported by the simulator.
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub grid_fingerprint: Option<String>,
    pub config: serde_json::Value,
    pub wall_clock_ms: u128,
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("SYNCHRONY_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn emit_manifest(manifest: &RunManifest, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).unwrap() + "\n";
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn matrix_csv(m: &ndarray::Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        // Ignore failure when a pool already exists (e.g. repeated calls in
        // tests); determinism does not depend on the thread count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Gridinfo(args) => cmd_gridinfo(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
    }
}

fn cmd_gridinfo(args: GridinfoArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let grid = load_grid(&args.grid)?;
    let violations = validate(&grid);
    let connected = violations.iter().all(|v| !v.contains("unreachable"));
    println!(
        "N={} E={} {}",
        grid.n(),
        grid.edges().len(),
        if connected { "connected" } else { "disconnected" }
    );
    println!("fingerprint={}", hex32(&grid.fingerprint()));
    println!("power imbalance={:.3e}", grid.power_imbalance());
    for i in 0..grid.n() {
        let class = if grid.power()[i] >= 0.0 { "generator" } else { "load" };
        println!(
            "node {} ({}) {} alpha={} power={}",
            i,
            grid.labels()[i],
            class,
            grid.alpha()[i],
            grid.power()[i]
        );
    }
    for v in &violations {
        println!("violation: {v}");
    }
    if let Some(variant) = args.adjacency {
        let variant: AdjacencyVariant = variant.into();
        let eq = if variant.needs_equilibrium() {
            Some(solve_equilibrium(&grid, &SystemState::zeros(grid.n()))?)
        } else {
            None
        };
        let raw = build_adjacency(&grid, variant, eq.as_ref())?;
        let op = operator_for(&grid, variant)?;
        let dump = format!(
            "# raw B ({})\n{}# renormalized B'\n{}",
            variant.name(),
            matrix_csv(&raw),
            matrix_csv(&op.matrix)
        );
        match &args.adjacency_out {
            Some(p) => std::fs::write(p, dump)?,
            None => print!("{dump}"),
        }
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: "gridinfo".into(),
        seed: None,
        inputs: vec![args.grid.display().to_string()],
        outputs: args
            .adjacency_out
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        grid_fingerprint: Some(hex32(&grid.fingerprint())),
        config: serde_json::json!({ "adjacency": args.adjacency.map(|v| AdjacencyVariant::from(v).name()) }),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    emit_manifest(&manifest, args.manifest.as_deref())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let seed = resolve_seed(args.seed);
    let grid = load_grid(&args.grid)?;
    let (per_node, combos) = match args.mode.as_str() {
        "single" => (args.per_node, 0),
        "multi" => (0, args.combos),
        "both" => (args.per_node, args.combos),
        other => {
            return Err(CliError::Input(format!(
                "unknown --mode {other}; expected single, multi or both"
            )))
        }
    };
    let spec = PerturbationSpec {
        kick_magnitude: args.kick,
        samples_per_node: per_node,
        multi_node_count: args.m,
        multi_combos: combos,
        samples_per_combo: args.per_combo,
        record_len: args.window,
        perturb_phase: args.perturb_phase,
        label: LabelConfig {
            horizon: args.horizon,
            ..LabelConfig::default()
        },
    };
    if per_node == 0 && combos == 0 {
        return Err(CliError::Input("nothing to generate".into()));
    }
    let dataset = generate_dataset(&grid, &spec, seed)?;
    save_dataset(&args.out, &dataset, Some(seed))?;
    let stable = dataset.stable_count();
    println!(
        "samples={} stable={} unstable={}",
        dataset.len(),
        stable,
        dataset.len() - stable
    );
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: "generate".into(),
        seed: Some(seed),
        inputs: vec![args.grid.display().to_string()],
        outputs: vec![
            args.out.display().to_string(),
            sidecar_path(&args.out).display().to_string(),
        ],
        grid_fingerprint: Some(hex32(&grid.fingerprint())),
        config: serde_json::json!({
            "mode": args.mode,
            "per_node": per_node,
            "m": args.m,
            "combos": combos,
            "per_combo": args.per_combo,
            "window": args.window,
            "kick": args.kick,
            "horizon": args.horizon,
            "perturb_phase": args.perturb_phase,
        }),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    emit_manifest(
        &manifest,
        Some(
            args.manifest
                .clone()
                .unwrap_or_else(|| manifest_sibling(&args.out))
                .as_path(),
        ),
    )
}

fn manifest_sibling(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let seed = resolve_seed(args.seed);
    let split_seed = args.split_seed.unwrap_or(seed);
    let grid = load_grid(&args.grid)?;
    let dataset = load_dataset(&args.dataset, Some(&grid.fingerprint()))?;
    let (train_set, val_set, test_set) = split_dataset(&dataset, split_seed);
    let model_config = ModelConfig {
        nodes: grid.n(),
        window: dataset.record_len,
        gc_layers: args.gc_layers,
        gc_features: args.gc_features,
        fc_width: args.fc_width,
        tc_blocks: args.tc_blocks,
        kernel: args.kernel,
        filters: args.filters,
        mlp_hidden: args.mlp_hidden,
        variant: args.variant.into(),
        mode: args.flow.into(),
    };
    let mut model = StabilityModel::for_grid(&grid, model_config, seed)?;
    let train_config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        beta: args.beta,
        alpha0: 1.0,
        class_weighting: !args.no_class_weighting,
        epochs: args.epochs,
        patience: args.patience,
        optimizer: if args.sgd { Optimizer::Sgd } else { Optimizer::Adam },
        seed,
    };
    let history = if args.epochs > 0 {
        train(&mut model, &train_set, &val_set, &train_config)?
    } else {
        Default::default()
    };
    model.save_checkpoint(&args.out)?;
    if let Some(hpath) = &args.history {
        history.write_csv(hpath)?;
    }
    if !test_set.is_empty() {
        let metrics = evaluate(&model, &test_set, 0.5)?;
        println!(
            "test acc={:.4} fpr={:.4} fnr={:.4} auc={}",
            metrics.acc,
            metrics.fpr,
            metrics.fnr,
            metrics
                .auc
                .map_or("undefined".to_string(), |a| format!("{a:.4}"))
        );
    }
    println!(
        "best epoch {} (val acc {:.4}); checkpoint written to {}",
        history.best_epoch,
        history.best_val_acc.max(0.0),
        args.out.display()
    );
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: "train".into(),
        seed: Some(seed),
        inputs: vec![
            args.grid.display().to_string(),
            args.dataset.display().to_string(),
        ],
        outputs: {
            let mut o = vec![args.out.display().to_string()];
            if let Some(h) = &args.history {
                o.push(h.display().to_string());
            }
            o
        },
        grid_fingerprint: Some(hex32(&grid.fingerprint())),
        config: serde_json::json!({
            "model": model_config,
            "training": train_config,
            "split_seed": split_seed,
        }),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    emit_manifest(
        &manifest,
        Some(
            args.manifest
                .clone()
                .unwrap_or_else(|| manifest_sibling(&args.out))
                .as_path(),
        ),
    )
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = StabilityModel::load_checkpoint(&args.checkpoint, None)?;
    let dataset = load_dataset(&args.dataset, Some(&model.fingerprint))?;
    let metrics = evaluate(&model, &dataset, 0.5)?;
    println!(
        "tp={} tn={} fp={} fn={}",
        metrics.tp, metrics.tn, metrics.fp, metrics.fn_
    );
    println!(
        "acc={:.6} fpr={:.6} fnr={:.6} auc={}",
        metrics.acc,
        metrics.fpr,
        metrics.fnr,
        metrics
            .auc
            .map_or("undefined".to_string(), |a| format!("{a:.6}"))
    );
    if let Some(out) = &args.out {
        write_metrics_json(&metrics, out)?;
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: "eval".into(),
        seed: None,
        inputs: vec![
            args.checkpoint.display().to_string(),
            args.dataset.display().to_string(),
        ],
        outputs: args.out.iter().map(|p| p.display().to_string()).collect(),
        grid_fingerprint: Some(hex32(&model.fingerprint)),
        config: serde_json::json!({ "threshold": 0.5 }),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    emit_manifest(&manifest, args.manifest.as_deref())
}

/// Parse a simulator trajectory CSV into the first `window` frequency
/// snapshots per node.
fn trajectory_features(
    path: &Path,
    nodes: usize,
    window: usize,
) -> Result<ndarray::Array3<f64>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Input("empty trajectory file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let expected = 1 + 2 * nodes;
    if cols.len() != expected || cols[0] != "t" {
        return Err(CliError::Input(format!(
            "trajectory header has {} columns, expected {expected} for {nodes} nodes",
            cols.len()
        )));
    }
    let mut x = ndarray::Array3::<f64>::zeros((1, nodes, window));
    let mut rows = 0usize;
    for line in lines.take(window) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(CliError::Input(format!(
                "trajectory row {rows} has {} fields, expected {expected}",
                fields.len()
            )));
        }
        for i in 0..nodes {
            let v: f64 = fields[1 + nodes + i]
                .parse()
                .map_err(|_| CliError::Input(format!("bad float in trajectory row {rows}")))?;
            x[(0, i, rows)] = v;
        }
        rows += 1;
    }
    if rows < window {
        return Err(CliError::Input(format!(
            "trajectory has only {rows} rows, model needs {window}"
        )));
    }
    Ok(x)
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = StabilityModel::load_checkpoint(&args.checkpoint, None)?;
    let x = trajectory_features(&args.trajectory, model.config.nodes, model.config.window)?;
    let p = model.predict(&x)?[0];
    let verdict = if p > 0.5 { "stable" } else { "unstable" };
    println!("p={p:.6} verdict={verdict}");
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: "predict".into(),
        seed: None,
        inputs: vec![
            args.checkpoint.display().to_string(),
            args.trajectory.display().to_string(),
        ],
        outputs: vec![],
        grid_fingerprint: Some(hex32(&model.fingerprint)),
        config: serde_json::json!({}),
        wall_clock_ms: started.elapsed().as_millis(),
    };
    emit_manifest(&manifest, args.manifest.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_resolution_prefers_flag() {
        assert_eq!(resolve_seed(Some(9)), 9);
    }

    #[test]
    fn variant_arg_maps_to_all_variants() {
        assert_eq!(
            AdjacencyVariant::from(VariantArg::Topology),
            AdjacencyVariant::Topology
        );
        assert_eq!(
            AdjacencyVariant::from(VariantArg::CouplingFlow),
            AdjacencyVariant::CouplingFlow
        );
        assert_eq!(
            AdjacencyVariant::from(VariantArg::CouplingInjection),
            AdjacencyVariant::CouplingInjection
        );
    }
}
