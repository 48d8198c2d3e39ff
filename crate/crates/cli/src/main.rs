//! Command-line surface for the pose feature-learning pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pointpose_core::config::{DataSource, RunConfig};
use pointpose_core::data::read_detections;
use pointpose_core::mining::{build_negative_candidates_with_radii, mine_positives};
use pointpose_core::pipeline::{
    ablate, emit_synthetic_dataset, evaluate, rescore, rows_to_csv, rows_to_text, run_with_jobs,
    train, AblationAxis, AblationMode, Checkpoint, Dataset, EvalOptions, PipelineError,
    PredictedPose,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pointpose",
    about = "Train, register, and evaluate 6D object-pose features on BOP-format or synthetic scenes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
    Text,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (never changes results, only wall time).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// BOP dataset root (required when the config selects the bop source).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the embedding models and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint: match, register, and score every instance.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional detection priors (JSON list of image_id/obj_id/bbox/score).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Report format printed to stdout.
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Run the ablation table: one training + evaluation per toggle.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated axes; pass an unknown name to list the valid set.
        #[arg(long, value_delimiter = ',')]
        axes: Vec<String>,
        /// Apply toggles cumulatively instead of one-at-a-time.
        #[arg(long)]
        cumulative: bool,
    },
    /// Emit the synthetic dataset in BOP layout (PLY models + rendered scenes).
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Re-score existing pose predictions against dataset ground truth.
    Metrics {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON list of predicted poses (image_id, obj_id, cam_R_m2c, cam_t_m2c).
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Dump mined correspondences and negative candidate stats for one pair.
    Inspect {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset pair index.
        #[arg(long, default_value = "0")]
        pair: usize,
    },
}

fn load_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig, common: &CommonArgs) -> Result<Dataset, PipelineError> {
    match cfg.data_source {
        DataSource::Synthetic => Dataset::synthetic(cfg),
        DataSource::Bop => {
            let root = common.data.as_deref().ok_or_else(|| {
                PipelineError::Config(pointpose_core::config::ConfigError::Invalid(
                    "config selects the bop data source; pass --data <DIR>".into(),
                ))
            })?;
            Dataset::from_bop(root, cfg)
        }
    }
}

fn print_report(report: &pointpose_core::metrics::MetricReport, format: OutputFormat) {
    match format {
        OutputFormat::Json => println!("{}", report.to_json()),
        OutputFormat::Csv => print!("{}", report.to_csv()),
        OutputFormat::Text => print!("{}", report.to_text()),
    }
}

fn cmd_train(common: &CommonArgs) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let dataset = load_dataset(&cfg, common)?;
    let out = common.out.as_deref();
    let outcome = run_with_jobs(common.jobs, || train(&cfg, &dataset, out))?;
    for row in &outcome.epochs {
        eprintln!(
            "[{}] epoch {:>3} lr {:.6} l_p {:.4} l_no {:.4} l_ns {:.4} total {:.4} used {} skipped {} holdout-fmr {}",
            row.scope,
            row.epoch,
            row.lr,
            row.mean_l_p,
            row.mean_l_no,
            row.mean_l_ns,
            row.mean_total,
            row.pairs_used,
            row.pairs_skipped,
            row.holdout_fmr
                .map(|f| format!("{f:.3}"))
                .unwrap_or_else(|| "n/a".into()),
        );
    }
    if let Some(f) = outcome.final_holdout_fmr {
        println!("final holdout FMR: {f:.3}");
    }
    println!("final mean loss: {:.4}", outcome.final_mean_loss);
    if let Some(dir) = out {
        println!("checkpoint: {}", dir.join("checkpoint.json").display());
    }
    Ok(())
}

fn cmd_eval(
    common: &CommonArgs,
    checkpoint: &Path,
    detections: Option<&Path>,
    format: OutputFormat,
) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let dataset = load_dataset(&cfg, common)?;
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if ckpt.config_hash != cfg.hash() {
        eprintln!(
            "note: checkpoint was trained under config {} but evaluating with {}",
            &ckpt.config_hash[..12],
            &cfg.hash()[..12]
        );
    }
    let dets = match detections {
        Some(path) => Some(read_detections(path)?),
        None => None,
    };
    let options = EvalOptions {
        detections: dets,
        indices: None,
    };
    let out = common.out.as_deref();
    let outcome = run_with_jobs(common.jobs, || {
        evaluate(&cfg, &ckpt, &dataset, &options, out)
    })?;
    print_report(&outcome.report, format);
    Ok(())
}

fn cmd_ablate(common: &CommonArgs, axes: &[String], cumulative: bool) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let mut parsed = Vec::new();
    for name in axes {
        let axis = AblationAxis::parse(name).map_err(UsageError)?;
        parsed.push(axis);
    }
    let mode = if cumulative {
        AblationMode::Cumulative
    } else {
        AblationMode::OneAtATime
    };
    let out = common.out.as_deref();
    let rows = run_with_jobs(common.jobs, || ablate(&cfg, &parsed, mode, out))?;
    print!("{}", rows_to_text(&rows));
    if out.is_none() {
        eprint!("{}", rows_to_csv(&rows));
    }
    Ok(())
}

fn cmd_synth(common: &CommonArgs) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let out = common
        .out
        .as_deref()
        .ok_or(UsageError("synth requires --out <DIR>".to_string()))?;
    let n = run_with_jobs(common.jobs, || emit_synthetic_dataset(&cfg, out))?;
    println!("wrote {n} scenes under {}", out.display());
    Ok(())
}

fn cmd_metrics(common: &CommonArgs, predictions: &Path, format: OutputFormat) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let dataset = load_dataset(&cfg, common)?;
    let text = std::fs::read_to_string(predictions)
        .with_context(|| format!("reading predictions {}", predictions.display()))?;
    let preds: Vec<PredictedPose> = serde_json::from_str(&text)
        .map_err(|e| DataFormatError(format!("predictions parse error: {e}")))?;
    let report = run_with_jobs(common.jobs, || rescore(&cfg, &dataset, &preds))?;
    if let Some(dir) = common.out.as_deref() {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), report.to_json())?;
        std::fs::write(dir.join("report.txt"), report.to_text())?;
        std::fs::write(dir.join("report.csv"), report.to_csv())?;
    }
    print_report(&report, format);
    Ok(())
}

fn cmd_inspect(common: &CommonArgs, pair_index: usize) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let dataset = load_dataset(&cfg, common)?;
    if pair_index >= dataset.pairs.len() {
        return Err(UsageError(format!(
            "pair index {pair_index} out of range ({} pairs)",
            dataset.pairs.len()
        ))
        .into());
    }
    let pair = &dataset.pairs[pair_index];
    let dump = run_with_jobs(common.jobs, || -> Result<_, PipelineError> {
        let positives = mine_positives(
            &pair.object,
            &pair.scene,
            &pair.gt,
            cfg.tau_p_mm,
            Some(cfg.max_pairs),
            cfg.seed,
        )?;
        let negatives = build_negative_candidates_with_radii(
            &pair.object,
            &pair.scene,
            &positives,
            cfg.t_scale,
            cfg.t_scale_scene(),
            pair.diameter,
            cfg.scene_sample_cap,
            cfg.seed,
        )?;
        let mean_dist = positives.distances.iter().sum::<f64>() / positives.len() as f64;
        let obj_sizes: Vec<usize> = negatives.object_candidates.iter().map(Vec::len).collect();
        let scn_sizes: Vec<usize> = negatives.scene_candidates.iter().map(Vec::len).collect();
        Ok(serde_json::json!({
            "pair": pair_index,
            "object_id": pair.object_id,
            "object_points": pair.object.len(),
            "scene_points": pair.scene.len(),
            "diameter_mm": pair.diameter,
            "positives": positives.len(),
            "mean_positive_distance_mm": mean_dist,
            "max_positive_distance_mm": positives.distances.iter().cloned().fold(0.0, f64::max),
            "safety_radius_mm": negatives.safety_radius,
            "scene_safety_radius_mm": negatives.scene_safety_radius,
            "object_candidates_min": obj_sizes.iter().min(),
            "object_candidates_max": obj_sizes.iter().max(),
            "scene_candidates_min": scn_sizes.iter().min(),
            "scene_candidates_max": scn_sizes.iter().max(),
            "pairs_preview": positives.pairs.iter().take(16).collect::<Vec<_>>(),
        }))
    })?;
    let rendered = serde_json::to_string_pretty(&dump).expect("dump serializes");
    if let Some(dir) = common.out.as_deref() {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("pair_{pair_index}.json")), &rendered)?;
    }
    println!("{rendered}");
    Ok(())
}

/// Usage problems detected after clap parsing (exit code 1).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

/// Malformed input files (exit code 2).
#[derive(Debug)]
struct DataFormatError(String);

impl std::fmt::Display for DataFormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for DataFormatError {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<DataFormatError>().is_some() {
        return 2;
    }
    if let Some(pipeline) = err.downcast_ref::<PipelineError>() {
        return match pipeline {
            PipelineError::Diverged { .. }
            | PipelineError::Optim(_)
            | PipelineError::Loss(_)
            | PipelineError::Register(_) => 3,
            _ => 2,
        };
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train { common } => cmd_train(common),
        Command::Eval {
            common,
            checkpoint,
            detections,
            format,
        } => cmd_eval(common, checkpoint, detections.as_deref(), *format),
        Command::Ablate {
            common,
            axes,
            cumulative,
        } => cmd_ablate(common, axes, *cumulative),
        Command::Synth { common } => cmd_synth(common),
        Command::Metrics {
            common,
            predictions,
            format,
        } => cmd_metrics(common, predictions, *format),
        Command::Inspect { common, pair } => cmd_inspect(common, *pair),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
