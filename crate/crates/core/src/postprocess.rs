//! Trajectory post-processing (bad-point correction, moving-average
//! smoothing), finite-difference velocity, and RMSE metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_model::Point3;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("trajectory length mismatch: prediction {pred}, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("timestamp mismatch at row {index}: prediction {pred} ns, truth {truth} ns")]
    TimestampMismatch { index: usize, pred: i64, truth: i64 },
    #[error("timestamps not strictly increasing at row {index}")]
    DegenerateTimestamps { index: usize },
    #[error("velocity needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("non-finite position at row {0}")]
    NonFinite(usize),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },
}

/// Time-stamped positions with strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t_ns: Vec<i64>,
    pub positions: Vec<Point3>,
}

impl Trajectory {
    pub fn new(t_ns: Vec<i64>, positions: Vec<Point3>) -> Result<Self, MetricError> {
        if t_ns.len() != positions.len() {
            return Err(MetricError::LengthMismatch {
                pred: positions.len(),
                truth: t_ns.len(),
            });
        }
        if let Some(i) = (1..t_ns.len()).find(|&i| t_ns[i] <= t_ns[i - 1]) {
            return Err(MetricError::DegenerateTimestamps { index: i });
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
        Ok(Self { t_ns, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn with_positions(&self, positions: Vec<Point3>) -> Self {
        Self {
            t_ns: self.t_ns.clone(),
            positions,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Step (m) from the previous accepted point above which a frame is flagged.
    pub outlier_threshold: f64,
    pub neighbor_halfwidth: usize,
    /// Odd moving-average window (frames).
    pub smooth_window: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            outlier_threshold: 2.0,
            neighbor_halfwidth: 2,
            smooth_window: 5,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.outlier_threshold > 0.0) {
            return Err("outlier_threshold must be positive".into());
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(format!("smooth_window must be odd and ≥ 1, got {}", self.smooth_window));
        }
        Ok(())
    }
}

/// Indices flagged by the left-to-right scan against the last accepted point.
pub fn flag_outliers(positions: &[Point3], threshold: f64) -> Vec<bool> {
    let mut flags = vec![false; positions.len()];
    let Some(&first) = positions.first() else {
        return flags;
    };
    let mut accepted = first;
    for (i, &p) in positions.iter().enumerate().skip(1) {
        if p.dist(accepted) > threshold {
            flags[i] = true;
        } else {
            accepted = p;
        }
    }
    flags
}

/// Replaces each flagged point by the mean of the non-flagged points within
/// `halfwidth` frames on either side. If that window holds none, the last
/// accepted point is used.
pub fn fix_outliers(traj: &Trajectory, threshold: f64, halfwidth: usize) -> Trajectory {
    let p = &traj.positions;
    let flags = flag_outliers(p, threshold);
    let mut out = p.clone();
    let mut accepted = p.first().copied().unwrap_or(Point3::ZERO);
    for i in 0..p.len() {
        if !flags[i] {
            accepted = p[i];
            continue;
        }
        let lo = i.saturating_sub(halfwidth);
        let hi = (i + halfwidth).min(p.len() - 1);
        let good: Vec<Point3> = (lo..=hi).filter(|&j| !flags[j]).map(|j| p[j]).collect();
        out[i] = Point3::centroid(&good).unwrap_or(accepted);
    }
    traj.with_positions(out)
}

/// Centred uniform moving average; the window shrinks symmetrically near the ends.
pub fn smooth(traj: &Trajectory, window: usize) -> Trajectory {
    assert!(window % 2 == 1, "smoothing window must be odd");
    let p = &traj.positions;
    let n = p.len();
    let h = window / 2;
    let out = (0..n)
        .map(|i| {
            let half = h.min(i).min(n - 1 - i);
            Point3::centroid(&p[i - half..=i + half]).expect("non-empty window")
        })
        .collect();
    traj.with_positions(out)
}

/// Forward differences in m/s; the last point repeats the previous velocity.
pub fn estimate_velocity(traj: &Trajectory) -> Result<Vec<Point3>, MetricError> {
    let n = traj.len();
    if n < 2 {
        return Err(MetricError::TooShort(n));
    }
    let mut v = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let dt_ns = traj.t_ns[i + 1] - traj.t_ns[i];
        if dt_ns <= 0 {
            return Err(MetricError::DegenerateTimestamps { index: i + 1 });
        }
        v.push((traj.positions[i + 1] - traj.positions[i]) * (1e9 / dt_ns as f64));
    }
    v.push(v[n - 2]);
    Ok(v)
}

fn check_matching(pred: &Trajectory, truth: &Trajectory) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if let Some(i) = (0..pred.len()).find(|&i| pred.t_ns[i] != truth.t_ns[i]) {
        return Err(MetricError::TimestampMismatch {
            index: i,
            pred: pred.t_ns[i],
            truth: truth.t_ns[i],
        });
    }
    Ok(())
}

fn rms_distance(a: &[Point3], b: &[Point3]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (*x - *y).norm().powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

/// `√(mean ‖p̂ − p‖²)` over frames.
pub fn position_rmse(pred: &Trajectory, truth: &Trajectory) -> Result<f64, MetricError> {
    check_matching(pred, truth)?;
    Ok(rms_distance(&pred.positions, &truth.positions))
}

/// Same metric over forward-difference velocities of both trajectories.
pub fn velocity_rmse(pred: &Trajectory, truth: &Trajectory) -> Result<f64, MetricError> {
    check_matching(pred, truth)?;
    Ok(rms_distance(&estimate_velocity(pred)?, &estimate_velocity(truth)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "smooth")]
    Smooth,
    #[serde(rename = "badpoint")]
    Badpoint,
    #[serde(rename = "badpoint+smooth")]
    BadpointSmooth,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::None,
        Strategy::Smooth,
        Strategy::Badpoint,
        Strategy::BadpointSmooth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Smooth => "smooth",
            Strategy::Badpoint => "badpoint",
            Strategy::BadpointSmooth => "badpoint+smooth",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy '{s}' (expected none, smooth, badpoint, badpoint+smooth)"))
    }
}

/// Bad-point correction runs before smoothing.
pub fn postprocess(traj: &Trajectory, cfg: &PostprocessConfig, strategy: Strategy) -> Trajectory {
    let fixed = |t: &Trajectory| fix_outliers(t, cfg.outlier_threshold, cfg.neighbor_halfwidth);
    match strategy {
        Strategy::None => traj.clone(),
        Strategy::Smooth => smooth(traj, cfg.smooth_window),
        Strategy::Badpoint => fixed(traj),
        Strategy::BadpointSmooth => smooth(&fixed(traj), cfg.smooth_window),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyScores {
    pub pos_rmse: f64,
    pub vel_rmse: f64,
}

/// Strategy name → scores.
pub type EvalReport = BTreeMap<String, StrategyScores>;

pub fn evaluate(
    pred: &Trajectory,
    truth: &Trajectory,
    cfg: &PostprocessConfig,
    strategies: &[Strategy],
) -> Result<EvalReport, MetricError> {
    check_matching(pred, truth)?;
    let mut report = EvalReport::new();
    for &s in strategies {
        let p = postprocess(pred, cfg, s);
        report.insert(
            s.as_str().to_string(),
            StrategyScores {
                pos_rmse: position_rmse(&p, truth)?,
                vel_rmse: velocity_rmse(&p, truth)?,
            },
        );
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn io_err(path: &Path, e: impl fmt::Display) -> MetricError {
    MetricError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Writes `t_ns,x,y,z,vx,vy,vz`. Velocity is zero for a single-point track.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), MetricError> {
    let vel = if traj.len() >= 2 {
        estimate_velocity(traj)?
    } else {
        vec![Point3::ZERO; traj.len()]
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["t_ns", "x", "y", "z", "vx", "vy", "vz"])
        .map_err(|e| io_err(path, e))?;
    for ((t, p), v) in traj.t_ns.iter().zip(&traj.positions).zip(&vel) {
        w.write_record([
            t.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            v.x.to_string(),
            v.y.to_string(),
            v.z.to_string(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads the first four columns (`t_ns,x,y,z`) of a header-led CSV; extra
/// columns such as velocities are ignored.
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, MetricError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut t_ns = Vec::new();
    let mut positions = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k as u64 + 2;
        let malformed = |reason: String| MetricError::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        if rec.len() < 4 {
            return Err(malformed(format!("expected at least 4 fields, got {}", rec.len())));
        }
        let t: i64 = rec[0].parse().map_err(|_| malformed(format!("bad t_ns '{}'", &rec[0])))?;
        let mut xyz = [0.0; 3];
        for a in 0..3 {
            xyz[a] = rec[a + 1]
                .parse()
                .map_err(|_| malformed(format!("bad coordinate '{}'", &rec[a + 1])))?;
        }
        if !xyz.iter().all(|v: &f64| v.is_finite()) {
            return Err(malformed("non-finite coordinate".into()));
        }
        if t_ns.last().is_some_and(|&prev| t <= prev) {
            return Err(malformed("timestamps must be strictly increasing".into()));
        }
        t_ns.push(t);
        positions.push(Point3::from_array(xyz));
    }
    Trajectory::new(t_ns, positions)
}
