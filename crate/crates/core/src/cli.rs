//! Command-line front end.
//!
//! Exit codes: 0 success with nothing flagged, 2 usage or input error,
//! 3 training failure, 4 at least one trace flagged.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{Profile, ToolkitConfig};
use crate::error::{Error, Result};
use crate::metrics::records::{write_records, TRAIN_LOG_CSV};
use crate::model::{enroll, load_model, save_model};
use crate::report::{dataset_names, evaluate, render_report};
use crate::scoring::{write_decisions, Outcome};
use crate::sim::generate_dataset;
use crate::trace::{read_traceset, write_csv, write_traceset, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_FLAGGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sidescreen", version, about = "Power side-channel screening with a one-class WGAN-GP critic")]
pub struct Cli {
    /// TOML file overriding profile values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for both simulation and training.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Base settings: `paper` (full scale) or `desk` (single core).
    #[arg(long, global = true, default_value = "paper", value_name = "paper|desk")]
    pub profile: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled trace file from the synthetic device.
    Simulate(SimulateArgs),
    /// Train on benign traces and calibrate screening thresholds.
    Enroll(EnrollArgs),
    /// Score traces and write Approve/Flag decisions.
    Screen(ScreenArgs),
    /// Compute detection metrics and figure data for scenario files.
    Evaluate(EvaluateArgs),
    /// Render SVG figures from an evaluation directory.
    Report(ReportArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// benign, trojan, bitflip, delay, backdoor or composite.
    #[arg(long)]
    pub scenario: String,
    /// Trace count; defaults to the profile's dataset size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write the traces as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    /// Benign trace file.
    #[arg(long, value_name = "PATH")]
    pub benign: PathBuf,
    /// Model file; defaults to `paths.model`.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Per-epoch loss CSV; defaults to `train_log.csv` next to the model.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub traces: PathBuf,
    /// Target false-positive rate; must be one the model was calibrated for.
    #[arg(long, default_value_t = 0.05)]
    pub fpr: f64,
    /// Decisions CSV.
    #[arg(long, value_name = "PATH", default_value = "decisions.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Held-out benign traces used for calibration and as ROC negatives.
    #[arg(long, value_name = "PATH")]
    pub benign_val: PathBuf,
    /// Scenario trace files, one or more.
    #[arg(long = "scenario", value_name = "PATH", required = true)]
    pub scenarios: Vec<PathBuf>,
    /// Output directory; defaults to `paths.eval_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation directory; defaults to `paths.eval_dir`.
    #[arg(long = "eval", value_name = "DIR")]
    pub eval_dir: Option<PathBuf>,
    /// Output directory; defaults to `paths.report_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => EXIT_TRAINING,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stdout, errors to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn effective_config(cli: &Cli) -> Result<ToolkitConfig> {
    let profile: Profile = cli.profile.parse()?;
    let cfg = match &cli.config {
        Some(path) => ToolkitConfig::load(path, profile)?,
        None => ToolkitConfig::profile(profile),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Enroll(a) => cmd_enroll(&cfg, a),
        Command::Screen(a) => screen(a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Report(a) => report(&cfg, a),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(EXIT_OK)
        }
    }
}

fn simulate(cfg: &ToolkitConfig, a: &SimulateArgs) -> Result<i32> {
    let scenario: Scenario = a.scenario.parse().map_err(|_| {
        let valid: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
        Error::Config(format!(
            "unknown scenario `{}`; valid scenarios: {}",
            a.scenario,
            valid.join(", ")
        ))
    })?;
    let n = a.n.unwrap_or(if scenario.is_benign() {
        cfg.data.benign
    } else {
        cfg.data.per_scenario
    });
    let set = generate_dataset(&cfg.sim, n, &cfg.payload.payload(scenario))?;
    write_traceset(&set, &a.out)?;
    if let Some(csv) = &a.csv {
        write_csv(&set, csv)?;
    }
    println!(
        "wrote {} {scenario} traces of {} samples to {}",
        set.len(),
        set.trace_len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_enroll(cfg: &ToolkitConfig, a: &EnrollArgs) -> Result<i32> {
    let benign = read_traceset(&a.benign)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.model));
    let start = Instant::now();
    let quiet = a.quiet;
    let epochs = cfg.train.epochs;
    let enrolled = enroll(&benign, &cfg.preprocess, &cfg.train, &cfg.calibrate.target_fprs, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}/{epochs}  critic {:+.4}  generator {:+.4}  gp {:.4}  w {:+.4}  {:.1}s",
                e.epoch + 1,
                e.critic_loss,
                e.generator_loss,
                e.gradient_penalty,
                e.wasserstein,
                e.seconds
            );
        }
    })?;
    save_model(&enrolled.model, &out)?;
    let log = a.log.clone().unwrap_or_else(|| sibling(&out, TRAIN_LOG_CSV));
    write_records(&enrolled.log, &log)?;
    println!(
        "enrolled on {} training and {} validation traces in {:.1}s",
        enrolled.train_size,
        enrolled.val_scores.len(),
        start.elapsed().as_secs_f64()
    );
    for t in &enrolled.model.thresholds {
        println!("tau@{}% = {}", t.target_fpr * 100.0, t.tau);
    }
    println!("model written to {}", out.display());
    Ok(EXIT_OK)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    match path.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

fn screen(a: &ScreenArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let threshold = model.threshold(a.fpr).copied().ok_or_else(|| {
        let available: Vec<String> = model.thresholds.iter().map(|t| t.target_fpr.to_string()).collect();
        Error::Config(format!(
            "no threshold for FPR {} in {}; available FPRs: {}",
            a.fpr,
            a.model.display(),
            available.join(", ")
        ))
    })?;
    let traces = read_traceset(&a.traces)?;
    let decisions = model.batch_screen(&traces, threshold.tau)?;
    write_decisions(&decisions, &a.out)?;
    let flagged = decisions.iter().filter(|d| d.outcome == Outcome::Flag).count();
    println!(
        "{flagged} of {} traces flagged at tau@{}% = {}; decisions in {}",
        decisions.len(),
        threshold.target_fpr * 100.0,
        threshold.tau,
        a.out.display()
    );
    Ok(if flagged > 0 { EXIT_FLAGGED } else { EXIT_OK })
}

fn cmd_evaluate(cfg: &ToolkitConfig, a: &EvaluateArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let benign = read_traceset(&a.benign_val)?;
    let sets = a
        .scenarios
        .iter()
        .map(read_traceset)
        .collect::<Result<Vec<_>>>()?;
    let fallback: Vec<(&_, String)> = sets
        .iter()
        .zip(&a.scenarios)
        .map(|(s, p)| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned());
            (s, stem.unwrap_or_else(|| "scenario".into()))
        })
        .collect();
    let names = dataset_names(&fallback);
    let scenarios: Vec<(String, _)> = names.into_iter().zip(sets).collect();
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.eval_dir));
    let eval = evaluate(&model, &benign, &scenarios, &out)?;
    println!("{:<12} {:>6} {:>7} {:>8} {:>8}", "scenario", "n", "auc", "tpr@1%", "tpr@5%");
    for r in &eval.rows {
        println!(
            "{:<12} {:>6} {:>7.4} {:>8.4} {:>8.4}",
            r.scenario, r.n, r.auc, r.tpr_at_1, r.tpr_at_5
        );
    }
    println!("evaluation written to {}", out.display());
    Ok(EXIT_OK)
}

fn report(cfg: &ToolkitConfig, a: &ReportArgs) -> Result<i32> {
    let eval_dir = a.eval_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.eval_dir));
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.paths.report_dir));
    let written = render_report(&eval_dir, &out)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(EXIT_OK)
}
