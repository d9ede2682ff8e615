//! Geometric and temporal types, session CSV ingestion, nearest-time
//! modality alignment, and fixed-capacity zero padding.

use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// A point in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dist(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    /// Componentwise mean; `None` for an empty slice.
    pub fn centroid(points: &[Point3]) -> Option<Point3> {
        if points.is_empty() {
            return None;
        }
        let sum = points.iter().fold(Point3::ZERO, |acc, &p| acc + p);
        let n = points.len() as f64;
        Some(Point3::new(sum.x / n, sum.y / n, sum.z / n))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    LidarAvia,
    Lidar360,
    Radar,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::LidarAvia, SensorKind::Lidar360, SensorKind::Radar];

    pub fn file_name(self) -> &'static str {
        match self {
            SensorKind::LidarAvia => "lidar_avia.csv",
            SensorKind::Lidar360 => "lidar_360.csv",
            SensorKind::Radar => "radar.csv",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::LidarAvia => "lidar_avia",
            SensorKind::Lidar360 => "lidar_360",
            SensorKind::Radar => "radar",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sensor sweep: all rows sharing a timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedFrame {
    pub t_ns: i64,
    pub points: Vec<Point3>,
    pub sensor: SensorKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t_ns: i64,
    pub position: Point3,
}

/// A point set zero-padded (or stride-subsampled) to a fixed capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedPoints {
    pub points: Vec<Point3>,
    pub mask: Vec<bool>,
}

impl PaddedPoints {
    pub fn capacity(&self) -> usize {
        self.points.len()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_points(&self) -> Vec<Point3> {
        self.points
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// A truth-anchored, time-matched (lidar, radar, truth) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSample {
    pub t_ns: i64,
    /// Flight this sample belongs to; train/validation splits never cut a flight.
    pub trajectory: u32,
    pub lidar_t_ns: i64,
    pub radar_t_ns: i64,
    pub lidar: PaddedPoints,
    pub radar: PaddedPoints,
    pub truth: Point3,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sources: Vec<PathBuf>,
    pub tolerance_ns: i64,
    pub lidar_capacity: usize,
    pub radar_capacity: usize,
    pub seed: u64,
    /// Truth samples dropped for lack of a frame within tolerance.
    pub dropped: usize,
    /// Aligned samples discarded because one modality had no points.
    pub missing_modality: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionDataset {
    pub samples: Vec<AlignedSample>,
    pub meta: DatasetMeta,
}

impl SessionDataset {
    pub fn trajectories(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.trajectory).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub tolerance_ns: i64,
    pub lidar_capacity: usize,
    pub radar_capacity: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            tolerance_ns: 100_000_000,
            lidar_capacity: 128,
            radar_capacity: 64,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}:{line}: timestamp goes backwards in {stream} stream")]
    NonMonotonicTimestamp {
        stream: String,
        path: PathBuf,
        line: u64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The raw per-sensor streams of one session directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionStreams {
    pub lidar_avia: Vec<TimedFrame>,
    pub lidar_360: Vec<TimedFrame>,
    pub radar: Vec<TimedFrame>,
    pub truth: Vec<TruthSample>,
}

impl SessionStreams {
    pub fn stream(&self, sensor: SensorKind) -> &[TimedFrame] {
        match sensor {
            SensorKind::LidarAvia => &self.lidar_avia,
            SensorKind::Lidar360 => &self.lidar_360,
            SensorKind::Radar => &self.radar,
        }
    }
}

pub const TRUTH_FILE: &str = "truth.csv";

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct Row {
    line: u64,
    t_ns: i64,
    point: Point3,
}

fn read_rows(path: &Path) -> Result<Vec<Row>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let malformed = |line: u64, reason: String| DataError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 4 {
            return Err(malformed(line, format!("expected 4 columns, found {}", record.len())));
        }
        let t_ns: i64 = record[0]
            .parse()
            .map_err(|_| malformed(line, format!("bad timestamp {:?}", &record[0])))?;
        if t_ns < 0 {
            return Err(malformed(line, "negative timestamp".into()));
        }
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            let field = &record[k + 1];
            *v = field
                .parse::<f64>()
                .map_err(|_| malformed(line, format!("bad coordinate {field:?}")))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("non-finite coordinate {field:?}")));
            }
        }
        rows.push(Row {
            line,
            t_ns,
            point: Point3::from_array(xyz),
        });
    }
    Ok(rows)
}

/// Reads one sensor CSV, grouping consecutive rows with equal `t_ns` into frames.
pub fn read_frames(path: &Path, sensor: SensorKind) -> Result<Vec<TimedFrame>, DataError> {
    let mut frames: Vec<TimedFrame> = Vec::new();
    for row in read_rows(path)? {
        match frames.last_mut() {
            Some(f) if f.t_ns == row.t_ns => f.points.push(row.point),
            Some(f) if f.t_ns > row.t_ns => {
                return Err(DataError::NonMonotonicTimestamp {
                    stream: sensor.to_string(),
                    path: path.to_path_buf(),
                    line: row.line,
                })
            }
            _ => frames.push(TimedFrame {
                t_ns: row.t_ns,
                points: vec![row.point],
                sensor,
            }),
        }
    }
    Ok(frames)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthSample>, DataError> {
    let mut out: Vec<TruthSample> = Vec::new();
    for row in read_rows(path)? {
        if out.last().is_some_and(|s| s.t_ns >= row.t_ns) {
            return Err(DataError::NonMonotonicTimestamp {
                stream: "truth".into(),
                path: path.to_path_buf(),
                line: row.line,
            });
        }
        out.push(TruthSample {
            t_ns: row.t_ns,
            position: row.point,
        });
    }
    Ok(out)
}

/// Loads `lidar_avia.csv`, `lidar_360.csv`, `radar.csv` and `truth.csv` from `dir`.
pub fn load_session(dir: &Path) -> Result<SessionStreams, DataError> {
    Ok(SessionStreams {
        lidar_avia: read_frames(&dir.join(SensorKind::LidarAvia.file_name()), SensorKind::LidarAvia)?,
        lidar_360: read_frames(&dir.join(SensorKind::Lidar360.file_name()), SensorKind::Lidar360)?,
        radar: read_frames(&dir.join(SensorKind::Radar.file_name()), SensorKind::Radar)?,
        truth: read_truth(&dir.join(TRUTH_FILE))?,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, DataError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes frames as `t_ns,x,y,z` rows. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_frames(path: &Path, frames: &[TimedFrame]) -> Result<(), DataError> {
    let mut w = create(path)?;
    let err = io_err(path);
    writeln!(w, "t_ns,x,y,z").map_err(&err)?;
    for f in frames {
        for p in &f.points {
            writeln!(w, "{},{},{},{}", f.t_ns, p.x, p.y, p.z).map_err(&err)?;
        }
    }
    w.flush().map_err(&err)
}

pub fn write_truth(path: &Path, truth: &[TruthSample]) -> Result<(), DataError> {
    let mut w = create(path)?;
    let err = io_err(path);
    writeln!(w, "t_ns,x,y,z").map_err(&err)?;
    for s in truth {
        let p = s.position;
        writeln!(w, "{},{},{},{}", s.t_ns, p.x, p.y, p.z).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

pub fn write_session(dir: &Path, streams: &SessionStreams) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for sensor in SensorKind::ALL {
        write_frames(&dir.join(sensor.file_name()), streams.stream(sensor))?;
    }
    write_truth(&dir.join(TRUTH_FILE), &streams.truth)
}

// ---------------------------------------------------------------------------
// Alignment and padding
// ---------------------------------------------------------------------------

/// Index of the frame nearest to `t_ns`; ties go to the earlier frame.
pub fn nearest_frame(frames: &[TimedFrame], t_ns: i64) -> Option<usize> {
    if frames.is_empty() {
        return None;
    }
    let after = frames.partition_point(|f| f.t_ns < t_ns);
    if after == 0 {
        return Some(0);
    }
    if after == frames.len() {
        return Some(after - 1);
    }
    let before_gap = t_ns - frames[after - 1].t_ns;
    let after_gap = frames[after].t_ns - t_ns;
    Some(if after_gap < before_gap { after } else { after - 1 })
}

/// A truth sample with its matched frames, before padding.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedFrames {
    pub t_ns: i64,
    pub truth: Point3,
    pub lidar_index: usize,
    pub radar_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Alignment {
    pub matches: Vec<AlignedFrames>,
    pub dropped: usize,
}

/// Attaches to each truth sample the nearest lidar and radar frames. Samples
/// whose best match in either stream is further than `tolerance_ns` are
/// dropped and counted.
pub fn align_modalities(
    lidar: &[TimedFrame],
    radar: &[TimedFrame],
    truth: &[TruthSample],
    tolerance_ns: i64,
) -> Alignment {
    let mut out = Alignment::default();
    for s in truth {
        let within = |frames: &[TimedFrame]| {
            nearest_frame(frames, s.t_ns).filter(|&i| (frames[i].t_ns - s.t_ns).abs() <= tolerance_ns)
        };
        match (within(lidar), within(radar)) {
            (Some(li), Some(ri)) => out.matches.push(AlignedFrames {
                t_ns: s.t_ns,
                truth: s.position,
                lidar_index: li,
                radar_index: ri,
            }),
            _ => out.dropped += 1,
        }
    }
    out
}

/// Pads to `capacity` with zero rows, or stride-subsamples down to it when
/// there are too many points (indices `round(j·n/capacity)`).
pub fn pad_points(points: &[Point3], capacity: usize) -> PaddedPoints {
    assert!(capacity >= 1, "capacity must be at least 1");
    let n = points.len();
    if n <= capacity {
        let mut padded = points.to_vec();
        padded.resize(capacity, Point3::ZERO);
        let mut mask = vec![true; n];
        mask.resize(capacity, false);
        return PaddedPoints { points: padded, mask };
    }
    let mut selected = Vec::with_capacity(capacity);
    let mut prev: Option<usize> = None;
    for j in 0..capacity {
        // round-half-up of j·n/capacity in integer arithmetic
        let mut idx = (2 * j * n + capacity) / (2 * capacity);
        if let Some(p) = prev {
            if idx <= p {
                idx = p + 1;
            }
        }
        selected.push(points[idx.min(n - 1)]);
        prev = Some(idx);
    }
    PaddedPoints {
        points: selected,
        mask: vec![true; capacity],
    }
}

/// Pads aligned frames into samples tagged with `trajectory`.
pub fn build_samples(
    alignment: &Alignment,
    lidar: &[TimedFrame],
    radar: &[TimedFrame],
    trajectory: u32,
    cfg: &IngestConfig,
) -> Vec<AlignedSample> {
    alignment
        .matches
        .iter()
        .map(|m| {
            let lf = &lidar[m.lidar_index];
            let rf = &radar[m.radar_index];
            AlignedSample {
                t_ns: m.t_ns,
                trajectory,
                lidar_t_ns: lf.t_ns,
                radar_t_ns: rf.t_ns,
                lidar: pad_points(&lf.points, cfg.lidar_capacity),
                radar: pad_points(&rf.points, cfg.radar_capacity),
                truth: m.truth,
            }
        })
        .collect()
}
