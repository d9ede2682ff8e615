//! `uavfuse` command-line tool: scene synthesis, preprocessing, training,
//! prediction, evaluation and plotting.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use uavfuse::config::RunConfig;
use uavfuse::data_model::{load_session, TRUTH_FILE};
use uavfuse::kalman::kf_track;
use uavfuse::model::FusionModel;
use uavfuse::pipeline::{
    discover, fit_classifier, prepare_session, raw_lidar, session_samples, PreparedSession, CLASSIFIER_FILE,
    MERGED_LIDAR_FILE,
};
use uavfuse::postprocess::{evaluate, read_trajectory_csv, write_trajectory_csv, EvalReport, Strategy, Trajectory};
use uavfuse::preprocess::LstmClassifier;
use uavfuse::synth::{generate, write_scenes};
use uavfuse::training::{predict_samples, train, write_metrics_csv};
use uavfuse::AlignedSample;

const CONFIG_USED: &str = "config_used.txt";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const METRICS_FILE: &str = "metrics.csv";
const REPORT_FILE: &str = "report.json";
const PRED_FILE: &str = "pred.csv";

#[derive(Parser)]
#[command(name = "uavfuse", version, about = "LiDAR + mmWave radar fusion for UAV trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (`key=value`); applied after --config, later flags win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic flights (sensor CSVs, truth, labels, manifest).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Scene preset applied before the config file: default, clean, asymmetric, clutter_asymmetric.
        #[arg(long)]
        preset: Option<String>,
        /// Overrides synth.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Isolate the drone in LiDAR-360, merge with Avia, write prepared sessions.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// A raw session directory or a directory of them.
        #[arg(long)]
        session: PathBuf,
        /// Reuse a fitted classifier instead of fitting one on the sessions' truth.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion model on prepared sessions.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// A prepared session directory or a directory of them.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict trajectories with a checkpoint or the Kalman baseline.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required_unless_present = "kalman", conflicts_with = "kalman")]
        checkpoint: Option<PathBuf>,
        /// Track the LiDAR centroid with the constant-velocity Kalman filter.
        #[arg(long)]
        kalman: bool,
        /// A prepared or raw session directory, or a directory of them.
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Position and velocity RMSE per post-processing strategy.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// none, smooth, badpoint or badpoint+smooth; repeatable, default all.
        #[arg(long)]
        strategy: Vec<Strategy>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// SVG of predicted vs truth trajectory (XY and XZ projections) plus its CSV.
    Plot {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Output SVG path; the CSV is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Synth { cfg, preset, seed, out } => cmd_synth(&cfg, preset.as_deref(), seed, &out),
        Command::Preprocess { cfg, session, classifier, out } => {
            cmd_preprocess(&cfg, &session, classifier.as_deref(), &out)
        }
        Command::Train { cfg, data, out } => cmd_train(&cfg, &data, &out),
        Command::Predict { cfg, checkpoint, kalman: _, session, out } => {
            cmd_predict(&cfg, checkpoint.as_deref(), &session, &out)
        }
        Command::Eval { cfg, pred, truth, strategy, json } => cmd_eval(&cfg, &pred, &truth, &strategy, json),
        Command::Plot { pred, truth, out } => cmd_plot(&pred, &truth, &out),
    }
}

/// Defaults, then the config file, then `--set` flags.
fn load_config(args: &ConfigArgs, base: RunConfig) -> Result<RunConfig, Failure> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        if !path.is_file() {
            return Err(usage(anyhow!("config file {} does not exist", path.display())));
        }
        cfg.apply_file(path)?;
    }
    for pair in &args.set {
        cfg.set_pair(pair).map_err(|e| usage(anyhow!("--set {pair}: {e}")))?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_config_used(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    cfg.write(&dir.join(CONFIG_USED)).map_err(Into::into)
}

fn require_exists(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(anyhow!("{} does not exist", path.display())))
    }
}

/// Output location for session `dir` found under `root`.
fn session_out(root: &Path, dir: &Path, out: &Path) -> PathBuf {
    match dir.strip_prefix(root) {
        Ok(rel) if !rel.as_os_str().is_empty() => out.join(rel),
        _ => out.to_path_buf(),
    }
}

fn cmd_synth(args: &ConfigArgs, preset: Option<&str>, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut base = RunConfig::default();
    if let Some(p) = preset {
        base.synth.apply_preset(p).map_err(usage)?;
    }
    let mut cfg = load_config(args, base)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    cfg.synth.validate().map_err(usage)?;
    let scenes = generate(&cfg.synth)?;
    create_dir(out)?;
    let manifest = write_scenes(out, &cfg.synth, &scenes)?;
    write_config_used(out, &cfg)?;
    let dropped: usize = manifest.flights.iter().map(|f| f.radar_dropped).sum();
    println!(
        "wrote {} flight(s) to {} ({} radar frames dropped)",
        manifest.flights.len(),
        out.display(),
        dropped
    );
    Ok(())
}

fn cmd_preprocess(args: &ConfigArgs, session: &Path, classifier: Option<&Path>, out: &Path) -> CmdResult {
    require_exists(session)?;
    let cfg = load_config(args, RunConfig::default())?;
    let dirs = discover(session, TRUTH_FILE)?;
    let streams = dirs
        .iter()
        .map(|d| load_session(d))
        .collect::<Result<Vec<_>, _>>()?;
    let model = match classifier {
        Some(path) => {
            require_exists(path)?;
            LstmClassifier::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?
        }
        None => fit_classifier(&streams, &cfg.preprocess, &cfg.classifier),
    };
    create_dir(out)?;
    let mut selected = 0;
    let mut total = 0;
    for (dir, s) in dirs.iter().zip(&streams) {
        let prepared = prepare_session(s, &model, &cfg.preprocess);
        total += prepared.records.len();
        selected += prepared.records.iter().filter(|r| r.selected).count();
        prepared.write(&session_out(session, dir, out))?;
    }
    let path = out.join(CLASSIFIER_FILE);
    model.save(&path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    write_config_used(out, &cfg)?;
    println!(
        "prepared {} session(s) in {}: {selected} of {total} cluster sequences selected",
        dirs.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: &ConfigArgs, data: &Path, out: &Path) -> CmdResult {
    require_exists(data)?;
    let cfg = load_config(args, RunConfig::default())?;
    cfg.train.validate().map_err(usage)?;
    let ds = uavfuse::pipeline::load_dataset(data, &cfg.ingest)?;
    let outcome = train(&ds.samples, &cfg.train)?;
    create_dir(out)?;
    let ck = out.join(CHECKPOINT_FILE);
    outcome.model.save(&ck).map_err(|e| anyhow!("{}: {e}", ck.display()))?;
    let metrics = out.join(METRICS_FILE);
    write_metrics_csv(&metrics, &outcome.report).with_context(|| metrics.display().to_string())?;
    let report = out.join(REPORT_FILE);
    std::fs::write(&report, serde_json::to_string_pretty(&outcome.report).expect("report serializes"))
        .with_context(|| report.display().to_string())?;
    write_config_used(out, &cfg)?;
    let r = &outcome.report;
    println!(
        "trained on {} samples ({} held out); best epoch {} with validation position RMSE {}",
        r.train_samples,
        r.val_samples,
        r.best_epoch,
        sig10(r.best_val_pos_rmse)
    );
    Ok(())
}

/// Aligned samples of one session directory. Prepared sessions are used
/// as-is; raw sessions use Avia plus the unfiltered LiDAR-360 returns.
fn predict_inputs(dir: &Path, cfg: &RunConfig) -> anyhow::Result<Vec<AlignedSample>> {
    let (lidar, radar, truth) = if dir.join(MERGED_LIDAR_FILE).is_file() {
        let p = PreparedSession::load(dir)?;
        (p.lidar, p.radar, p.truth)
    } else {
        let s = load_session(dir)?;
        (raw_lidar(&s, cfg.preprocess.tolerance_ns), s.radar, s.truth)
    };
    Ok(session_samples(&lidar, &radar, &truth, 0, &cfg.ingest).0)
}

fn cmd_predict(args: &ConfigArgs, checkpoint: Option<&Path>, session: &Path, out: &Path) -> CmdResult {
    require_exists(session)?;
    let cfg = load_config(args, RunConfig::default())?;
    let model = match checkpoint {
        Some(path) => {
            require_exists(path)?;
            let m = FusionModel::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
            if args.config.is_some() || !args.set.is_empty() {
                if m.config != cfg.train.model {
                    return Err(Failure::Data(anyhow!(
                        "{}: checkpoint model hyperparameters {:?} do not match the config {:?}",
                        path.display(),
                        m.config,
                        cfg.train.model
                    )));
                }
            }
            Some(m)
        }
        None => None,
    };
    let dirs = if session.join(MERGED_LIDAR_FILE).is_file() || session.join(TRUTH_FILE).is_file() {
        vec![session.to_path_buf()]
    } else {
        discover(session, TRUTH_FILE)?
    };
    for dir in &dirs {
        let samples = predict_inputs(dir, &cfg)?;
        if samples.is_empty() {
            return Err(Failure::Data(anyhow!("{}: no aligned samples", dir.display())));
        }
        let t: Vec<i64> = samples.iter().map(|s| s.t_ns).collect();
        let pred = match &model {
            Some(m) => {
                let refs: Vec<&AlignedSample> = samples.iter().collect();
                Trajectory::new(t.clone(), predict_samples(m, &refs)?)?
            }
            None => kf_track(&samples, &cfg.kalman)?,
        };
        let truth = Trajectory::new(t, samples.iter().map(|s| s.truth).collect())?;
        let target = session_out(session, dir, out);
        create_dir(&target)?;
        write_trajectory_csv(&target.join(PRED_FILE), &pred)?;
        write_trajectory_csv(&target.join(TRUTH_FILE), &truth)?;
        println!("{}: {} predictions", target.display(), pred.len());
    }
    write_config_used(out, &cfg)?;
    Ok(())
}

/// `v` with 10 significant digits.
fn sig10(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn print_table(report: &EvalReport, order: &[Strategy]) {
    println!("{:<16} {:>18} {:>18}", "strategy", "pos_rmse_m", "vel_rmse_mps");
    for s in order {
        let r = &report[s.as_str()];
        println!("{:<16} {:>18} {:>18}", s.as_str(), sig10(r.pos_rmse), sig10(r.vel_rmse));
    }
}

fn read_pair(pred: &Path, truth: &Path) -> Result<(Trajectory, Trajectory), Failure> {
    require_exists(pred)?;
    require_exists(truth)?;
    Ok((read_trajectory_csv(pred)?, read_trajectory_csv(truth)?))
}

fn cmd_eval(args: &ConfigArgs, pred: &Path, truth: &Path, strategies: &[Strategy], json: bool) -> CmdResult {
    let cfg = load_config(args, RunConfig::default())?;
    cfg.postprocess.validate().map_err(|e| usage(anyhow!(e)))?;
    let (p, t) = read_pair(pred, truth)?;
    let order: Vec<Strategy> = if strategies.is_empty() { Strategy::ALL.to_vec() } else { strategies.to_vec() };
    let report = evaluate(&p, &t, &cfg.postprocess, &order)
        .with_context(|| format!("{} vs {}", pred.display(), truth.display()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_table(&report, &order);
    }
    Ok(())
}

fn cmd_plot(pred: &Path, truth: &Path, out: &Path) -> CmdResult {
    let (p, t) = read_pair(pred, truth)?;
    if p.len() != t.len() || p.t_ns != t.t_ns {
        return Err(Failure::Data(anyhow!("{} and {} do not share timestamps", pred.display(), truth.display())));
    }
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let svg = plot::render_svg(&p, &t);
    std::fs::write(out, svg).with_context(|| out.display().to_string())?;
    let csv_path = out.with_extension("csv");
    plot::write_csv(&csv_path, &p, &t).with_context(|| csv_path.display().to_string())?;
    println!("wrote {} and {}", out.display(), csv_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(sig10(0.0), "0");
        assert_eq!(sig10(1.0), "1.000000000");
        assert_eq!(sig10(0.012345678912345), "0.01234567891");
        assert_eq!(sig10(12345.678912345), "12345.67891");
        assert_eq!(sig10(-2.5), "-2.500000000");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
