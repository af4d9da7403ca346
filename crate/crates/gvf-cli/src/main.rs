//! Command-line entry point for question-network experiments on the empty
//! room grid world.
//!
//! Exit codes: 0 on success, 2 for configuration and parse errors, 3 for
//! numeric failures, 1 for I/O problems.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use gvf_core::agent::{actor_critic_train, evaluate_policy_train, Checkpoint, MetricsRow};
use gvf_core::config::{ConfigError, ExperimentConfig, ExperimentKind};
use gvf_core::envs::{ExactModel, INTERIOR, N_STATES};
use gvf_core::features::{FeatureExtractor, FeatureSpec, ObsShape};
use gvf_core::oracle::{
    exact_gvf_values, model_features, solution_csv, true_values, values_csv, OracleError,
};
use gvf_core::qnet::{GeneratorConfig, QuestionNetwork};

#[derive(Parser)]
#[command(name = "gvf", version, about = "Question-network experiments on the empty room grid world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random question network and write its canonical file.
    Generate(GenerateArgs),
    /// Run an experiment described by a JSON config file.
    Train(TrainArgs),
    /// Export the 7x7 value grid of a checkpoint next to the oracle's grid.
    Heatmap(HeatmapArgs),
    /// Exact GVF values and true state values for a question network.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of feature nodes.
    #[arg(long)]
    features: usize,
    /// Self-loop discount of the layer-0 prediction nodes.
    #[arg(long)]
    gamma: f64,
    /// Action count (producing actions "0", "1", ...) or comma-separated
    /// action names, e.g. "up,down,left,right".
    #[arg(long)]
    actions: String,
    /// Number of action-conditioned layers.
    #[arg(long)]
    depth: usize,
    /// Nodes per action per layer.
    #[arg(long)]
    repeat: usize,
    #[arg(long)]
    seed: u64,
    /// Output path for the network file.
    #[arg(long)]
    out: PathBuf,
    /// Optional DOT export path.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the progress summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV (7 rows of 7 values). The oracle grid goes to
    /// "<stem>_oracle.csv" unless --oracle-only is set.
    #[arg(long)]
    out: PathBuf,
    /// Write only the oracle's true-value grid.
    #[arg(long)]
    oracle_only: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Question network file.
    #[arg(long, conflicts_with_all = ["dsum", "tree"])]
    net: Option<PathBuf>,
    /// Discounted-sum network: "N_FEATURES,GAMMA".
    #[arg(long, conflicts_with = "tree")]
    dsum: Option<String>,
    /// Full action-conditional tree of this depth over the grid actions.
    #[arg(long)]
    tree: Option<usize>,
    /// Feature spec: "touch", "linear:COUNT:SEED" or
    /// "patch:ROWS:COLS:FNS:SEED".
    #[arg(long, default_value = "touch")]
    feature: String,
    /// Environment discount for the true-value table.
    #[arg(long, default_value_t = 0.98)]
    gamma_env: f64,
    /// Output CSV for the exact GVF values.
    #[arg(long)]
    out: PathBuf,
    /// Output CSV for the true state values (default "<out stem>_values.csv").
    #[arg(long)]
    values_out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Singular | OracleError::Residual(_) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Heatmap(args) => cmd_heatmap(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn parse_actions(spec: &str) -> Result<Vec<String>, CliError> {
    if let Ok(n) = spec.parse::<usize>() {
        if n == 0 {
            return Err(CliError::Config("action count must be positive".into()));
        }
        return Ok(gvf_core::qnet::numbered_actions(n));
    }
    let names: Vec<String> = spec
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(CliError::Config(format!("no actions in \"{spec}\"")));
    }
    Ok(names)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let cfg = GeneratorConfig {
        n_features: args.features,
        gamma: args.gamma,
        actions: parse_actions(&args.actions)?,
        depth: args.depth,
        repeat: args.repeat,
        seed: args.seed,
    };
    let net = QuestionNetwork::generate(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let report = net.validate();
    if !report.is_ok() {
        return Err(CliError::Numeric(format!(
            "generated network failed validation:\n{report}"
        )));
    }
    write_file(&args.out, &net.to_json())?;
    if let Some(dot) = &args.dot {
        write_file(dot, &net.to_dot())?;
    }
    let sizes = net.layer_sizes();
    let mut summary = String::new();
    for (layer, count) in sizes.iter().enumerate() {
        let _ = write!(summary, "{}layer {layer}: {count}", if layer == 0 { "" } else { ", " });
    }
    println!(
        "wrote {} ({} feature nodes, {} predictions; {summary})",
        args.out.display(),
        net.n_features,
        net.prediction_count()
    );
    Ok(())
}

fn float(v: f64) -> String {
    format!("{v}")
}

fn metrics_csv(rows: &[MetricsRow], kind: ExperimentKind) -> String {
    let mut out = String::new();
    match kind {
        ExperimentKind::Eval => {
            out.push_str("frames,value_mse,answer_loss\n");
            for r in rows {
                let _ = writeln!(out, "{},{},{}", r.frames, float(r.value_mse), float(r.answer_loss));
            }
        }
        ExperimentKind::Control => {
            out.push_str("frames,value_mse,answer_loss,policy_entropy,return\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.frames,
                    float(r.value_mse),
                    float(r.answer_loss),
                    float(r.policy_entropy.unwrap_or(0.0)),
                    float(r.avg_reward.unwrap_or(0.0)),
                );
            }
        }
    }
    out
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let text = read_file(&args.config)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.display().to_string());
    }
    let out_dir = PathBuf::from(config.output_dir.clone().ok_or_else(|| {
        CliError::Config("no output directory (set output_dir in the config or pass --out)".into())
    })?);

    let resolved = config.resolve()?;
    let mut agent = resolved.agent;
    let run_cfg = resolved.config;

    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("resolved_config.json"), &run_cfg.to_json())?;

    let rows = match run_cfg.kind {
        ExperimentKind::Eval => evaluate_policy_train(
            &mut agent,
            resolved.qnet.as_ref(),
            resolved.extractor.as_ref(),
            &run_cfg.env,
            &run_cfg.train,
        ),
        ExperimentKind::Control => actor_critic_train(
            &mut agent,
            resolved.qnet.as_ref(),
            resolved.extractor.as_ref(),
            &run_cfg.env,
            &run_cfg.train,
        ),
    }
    .map_err(|e| match e {
        gvf_core::agent::TrainError::Config(msg) => CliError::Config(msg),
        other => CliError::Numeric(other.to_string()),
    })?;

    write_file(&out_dir.join("metrics.csv"), &metrics_csv(&rows, run_cfg.kind))?;
    let checkpoint = Checkpoint::from_agent(&agent, &run_cfg.env, run_cfg.train.gamma_env);
    write_file(&out_dir.join("checkpoint.json"), &checkpoint.to_json())?;

    if !args.quiet {
        let last = rows.last().expect("at least one metrics row");
        println!(
            "trained {} frames; final value MSE {:.6}; wrote {}",
            last.frames,
            last.value_mse,
            out_dir.display()
        );
    }
    Ok(())
}

fn grid_csv(values: &[f64]) -> String {
    let mut out = String::new();
    for row in 0..INTERIOR {
        let cells: Vec<String> = (0..INTERIOR)
            .map(|col| float(values[row * INTERIOR + col]))
            .collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn cmd_heatmap(args: HeatmapArgs) -> Result<(), CliError> {
    let text = read_file(&args.checkpoint)?;
    let checkpoint =
        Checkpoint::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let env = checkpoint.env.clone();
    let gamma = checkpoint.gamma_env;
    let model = ExactModel::build(&env);
    let truth = true_values(&model, gamma)?;
    let truth_grid: Vec<f64> = truth.iter().copied().collect();

    if args.oracle_only {
        write_file(&args.out, &grid_csv(&truth_grid))?;
        println!("wrote {}", args.out.display());
        return Ok(());
    }

    let agent = checkpoint
        .into_agent()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut values = vec![0.0; N_STATES];
    for (s, v) in values.iter_mut().enumerate() {
        let obs = gvf_core::envs::observation_for(gvf_core::envs::state_cell(s));
        *v = agent
            .predict(&obs)
            .map_err(|e| CliError::Numeric(e.to_string()))?
            .value;
        if !v.is_finite() {
            return Err(CliError::Numeric(format!("non-finite value at state {s}")));
        }
    }
    write_file(&args.out, &grid_csv(&values))?;
    let oracle_path = sibling(&args.out, "_oracle");
    write_file(&oracle_path, &grid_csv(&truth_grid))?;
    println!("wrote {} and {}", args.out.display(), oracle_path.display());
    Ok(())
}

/// "values.csv" -> "values_oracle.csv"
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path.extension().map(|e| e.to_string_lossy().to_string());
    let name = match ext {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn parse_feature(spec: &str) -> Result<FeatureSpec, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["touch"] => Ok(FeatureSpec::Touch),
        ["linear", count, seed] => Ok(FeatureSpec::RandomLinear {
            count: count
                .parse()
                .map_err(|_| CliError::Config(format!("bad feature count in \"{spec}\"")))?,
            seed: seed
                .parse()
                .map_err(|_| CliError::Config(format!("bad feature seed in \"{spec}\"")))?,
            low: -1.0,
            high: 1.0,
        }),
        ["patch", rows, cols, fns, seed] => Ok(FeatureSpec::RandomPatchLinear {
            patch_rows: rows
                .parse()
                .map_err(|_| CliError::Config(format!("bad patch rows in \"{spec}\"")))?,
            patch_cols: cols
                .parse()
                .map_err(|_| CliError::Config(format!("bad patch cols in \"{spec}\"")))?,
            functions_per_patch: fns
                .parse()
                .map_err(|_| CliError::Config(format!("bad patch functions in \"{spec}\"")))?,
            seed: seed
                .parse()
                .map_err(|_| CliError::Config(format!("bad feature seed in \"{spec}\"")))?,
            low: -1.0,
            high: 1.0,
        }),
        _ => Err(CliError::Config(format!(
            "unknown feature spec \"{spec}\" (expected touch, linear:COUNT:SEED or patch:R:C:F:SEED)"
        ))),
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let net = match (&args.net, &args.dsum, args.tree) {
        (Some(path), None, None) => {
            let text = read_file(path)?;
            QuestionNetwork::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, Some(spec), None) => {
            let (n, gamma) = spec
                .split_once(',')
                .ok_or_else(|| CliError::Config(format!("expected N,GAMMA in \"{spec}\"")))?;
            let n = n
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad feature count in \"{spec}\"")))?;
            let gamma = gamma
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad gamma in \"{spec}\"")))?;
            QuestionNetwork::discounted_sum(n, gamma)
                .map_err(|e| CliError::Config(e.to_string()))?
        }
        (None, None, Some(depth)) => {
            QuestionNetwork::full_tree(&gvf_core::envs::action_names(), depth)
                .map_err(|e| CliError::Config(e.to_string()))?
        }
        _ => {
            return Err(CliError::Config(
                "pass exactly one of --net, --dsum or --tree".into(),
            ))
        }
    };
    let report = net.validate();
    if !report.is_ok() {
        return Err(CliError::Config(format!("invalid network:\n{report}")));
    }

    let spec = parse_feature(&args.feature)?;
    let extractor = FeatureExtractor::build(
        &spec,
        ObsShape {
            height: 9,
            width: 9,
            channels: 2,
        },
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let env = gvf_core::envs::EmptyRoomConfig::default();
    let model = ExactModel::build(&env);
    let features = model_features(&model, &extractor)?;
    let gvf = exact_gvf_values(&net, &model, &features)?;
    write_file(&args.out, &solution_csv(&model, &gvf))?;

    let truth = true_values(&model, args.gamma_env)?;
    let values_path = args
        .values_out
        .clone()
        .unwrap_or_else(|| sibling(&args.out, "_values"));
    write_file(&values_path, &values_csv(&model, &truth))?;
    println!(
        "wrote {} ({} nodes x {} states) and {}",
        args.out.display(),
        gvf.ncols(),
        gvf.nrows(),
        values_path.display()
    );
    Ok(())
}
