//! Seeded synthetic scenes: drone flight paths, per-sensor observation
//! models with per-axis Gaussian noise, static LiDAR-360 clutter, radar frame
//! dropout, and the session CSV layout plus generation labels.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    write_frames, write_truth, DataError, Point3, SensorKind, SessionStreams, TimedFrame,
    TruthSample, TRUTH_FILE,
};

pub const LABELS_FILE: &str = "gen_labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Generation label for the drone's own returns.
pub const LABEL_DRONE: i32 = 0;
/// Generation label for all-zero (invalid) returns.
pub const LABEL_ZERO: i32 = -1;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("waypoint trajectory needs at least 2 points, got {0}")]
    BadWaypoints(usize),
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("could not place clutter blob {0} clear of the flight path")]
    ClutterPlacement(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Cv,
    Sinusoid,
    Waypoints,
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryKind::Cv => "cv",
            TrajectoryKind::Sinusoid => "sinusoid",
            TrajectoryKind::Waypoints => "waypoints",
        })
    }
}

impl FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cv" => Ok(TrajectoryKind::Cv),
            "sinusoid" => Ok(TrajectoryKind::Sinusoid),
            "waypoints" => Ok(TrajectoryKind::Waypoints),
            other => Err(format!("unknown trajectory model {other:?} (cv, sinusoid, waypoints)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Flight duration (s); waypoint paths derive it from length and speed.
    pub duration_s: f64,
    pub truth_rate: f64,
    pub lidar_rate: f64,
    pub radar_rate: f64,
    pub trajectory: TrajectoryKind,
    pub start: [f64; 3],
    /// Constant velocity for `cv` and `sinusoid` (m/s).
    pub velocity: [f64; 3],
    pub amplitude_lateral: f64,
    pub amplitude_vertical: f64,
    pub frequency_hz: f64,
    pub waypoints: Vec<[f64; 3]>,
    /// Waypoint traversal speed (m/s).
    pub speed: f64,
    pub lidar_lambda: f64,
    pub lidar_sigma: [f64; 3],
    pub radar_lambda: f64,
    pub radar_sigma: [f64; 3],
    pub radar_dropout: f64,
    pub clutter_blobs: usize,
    pub clutter_points: usize,
    /// Per-axis spread of one clutter blob (m).
    pub clutter_size: f64,
    pub clutter_min: [f64; 3],
    pub clutter_max: [f64; 3],
    /// Minimum distance from a blob center to the flight path (m).
    pub clutter_clearance: f64,
    /// All-zero returns added to every LiDAR-360 frame.
    pub zero_points: usize,
    pub flights: usize,
    /// Half-width of the uniform start offset per flight (m).
    pub start_spread: f64,
    /// Half-width of the uniform heading rotation per flight (rad).
    pub heading_spread: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            duration_s: 20.0,
            truth_rate: 50.0,
            lidar_rate: 10.0,
            radar_rate: 15.0,
            trajectory: TrajectoryKind::Cv,
            start: [10.0, 0.0, 5.0],
            velocity: [3.0, 1.5, 0.3],
            amplitude_lateral: 2.0,
            amplitude_vertical: 1.0,
            frequency_hz: 0.1,
            waypoints: vec![[10.0, 0.0, 5.0], [40.0, 10.0, 8.0], [50.0, 40.0, 6.0]],
            speed: 3.0,
            lidar_lambda: 32.0,
            lidar_sigma: [0.1, 0.1, 0.1],
            radar_lambda: 8.0,
            radar_sigma: [0.3, 0.3, 0.3],
            radar_dropout: 0.0,
            clutter_blobs: 3,
            clutter_points: 30,
            clutter_size: 0.15,
            clutter_min: [0.0, -20.0, 0.0],
            clutter_max: [80.0, 50.0, 15.0],
            clutter_clearance: 5.0,
            zero_points: 2,
            flights: 1,
            start_spread: 10.0,
            heading_spread: 0.5,
            seed: 0,
        }
    }
}

pub const PRESETS: [&str; 4] = ["default", "clean", "asymmetric", "clutter_asymmetric"];

impl SceneConfig {
    /// Applies a named preset on top of the current values.
    ///
    /// `clean`: no clutter, σ = 0.2 m for both modalities. `asymmetric`: no
    /// clutter, lidar σ = (0.05, 0.05, 0.4), radar σ = (0.4, 0.4, 0.05).
    /// `clutter_asymmetric`: the asymmetric noise with the default clutter.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), SynthError> {
        match name {
            "default" => {}
            "clean" => {
                self.clutter_blobs = 0;
                self.zero_points = 0;
                self.lidar_sigma = [0.2; 3];
                self.radar_sigma = [0.2; 3];
            }
            "asymmetric" | "clutter_asymmetric" => {
                if name == "asymmetric" {
                    self.clutter_blobs = 0;
                    self.zero_points = 0;
                }
                self.lidar_sigma = [0.05, 0.05, 0.4];
                self.radar_sigma = [0.4, 0.4, 0.05];
            }
            other => {
                return Err(SynthError::Config(format!(
                    "unknown preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let finite3 = |a: &[f64; 3]| a.iter().all(|v| v.is_finite());
        for (name, rate) in [
            ("truth_rate", self.truth_rate),
            ("lidar_rate", self.lidar_rate),
            ("radar_rate", self.radar_rate),
        ] {
            if !(rate > 0.0 && rate.is_finite()) {
                return bad(&format!("{name} must be > 0"));
            }
        }
        if self.trajectory != TrajectoryKind::Waypoints && !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be > 0");
        }
        if self.trajectory == TrajectoryKind::Waypoints {
            if self.waypoints.len() < 2 {
                return Err(SynthError::BadWaypoints(self.waypoints.len()));
            }
            if !(self.speed > 0.0 && self.speed.is_finite()) {
                return bad("speed must be > 0");
            }
        }
        if !(self.lidar_lambda > 0.0 && self.radar_lambda > 0.0) {
            return bad("point-count means must be > 0");
        }
        if !self.lidar_sigma.iter().chain(&self.radar_sigma).all(|&s| s >= 0.0 && s.is_finite()) {
            return bad("noise sigmas must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.radar_dropout) {
            return bad("radar_dropout must lie in [0, 1)");
        }
        if !(self.clutter_size >= 0.0 && self.clutter_clearance >= 0.0) {
            return bad("clutter_size and clutter_clearance must be >= 0");
        }
        if self.clutter_blobs > 0 && self.clutter_points == 0 {
            return bad("clutter_points must be > 0 when clutter_blobs > 0");
        }
        if (0..3).any(|k| self.clutter_min[k] > self.clutter_max[k]) {
            return bad("clutter_min must not exceed clutter_max");
        }
        if self.flights == 0 {
            return bad("flights must be >= 1");
        }
        if !(self.start_spread >= 0.0 && self.heading_spread >= 0.0) {
            return bad("spreads must be >= 0");
        }
        if ![self.start, self.velocity, self.clutter_min, self.clutter_max].iter().all(finite3)
            || !self.waypoints.iter().all(finite3)
            || !(self.amplitude_lateral.is_finite()
                && self.amplitude_vertical.is_finite()
                && self.frequency_hz.is_finite())
        {
            return bad("non-finite geometry");
        }
        Ok(())
    }
}

/// Number of samples of a `rate` Hz stream over `duration` seconds.
pub fn sample_count(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize
}

/// Timestamp of the `k`-th sample of a `rate` Hz stream.
pub fn sample_time_ns(k: usize, rate: f64) -> i64 {
    (k as f64 * 1e9 / rate).round() as i64
}

/// A continuous flight path evaluated at arbitrary times.
#[derive(Clone, Debug, PartialEq)]
pub struct FlightPath {
    kind: TrajectoryKind,
    start: Point3,
    velocity: Point3,
    amplitude_lateral: f64,
    amplitude_vertical: f64,
    frequency_hz: f64,
    waypoints: Vec<Point3>,
    /// Cumulative arc length at each waypoint.
    arc: Vec<f64>,
    speed: f64,
    duration_s: f64,
    /// Rigid per-flight transform: rotation about z through `start`, then offset.
    heading: f64,
    offset: Point3,
}

impl FlightPath {
    pub fn new(cfg: &SceneConfig) -> Result<Self, SynthError> {
        if cfg.trajectory == TrajectoryKind::Waypoints && cfg.waypoints.len() < 2 {
            return Err(SynthError::BadWaypoints(cfg.waypoints.len()));
        }
        let waypoints: Vec<Point3> = cfg.waypoints.iter().map(|&w| Point3::from_array(w)).collect();
        let mut arc = vec![0.0];
        for w in waypoints.windows(2) {
            arc.push(arc.last().unwrap() + w[0].dist(w[1]));
        }
        let (start, duration_s) = match cfg.trajectory {
            TrajectoryKind::Waypoints => (waypoints[0], arc.last().unwrap() / cfg.speed),
            _ => (Point3::from_array(cfg.start), cfg.duration_s),
        };
        Ok(Self {
            kind: cfg.trajectory,
            start,
            velocity: Point3::from_array(cfg.velocity),
            amplitude_lateral: cfg.amplitude_lateral,
            amplitude_vertical: cfg.amplitude_vertical,
            frequency_hz: cfg.frequency_hz,
            waypoints,
            arc,
            speed: cfg.speed,
            duration_s,
            heading: 0.0,
            offset: Point3::ZERO,
        })
    }

    /// The same path rotated by `heading` about the vertical through its start
    /// and shifted by `offset`.
    pub fn transformed(mut self, heading: f64, offset: Point3) -> Self {
        self.heading = heading;
        self.offset = offset;
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn path_length(&self) -> f64 {
        match self.kind {
            TrajectoryKind::Waypoints => *self.arc.last().unwrap(),
            _ => self.velocity.norm() * self.duration_s,
        }
    }

    fn local(&self, t: f64) -> Point3 {
        match self.kind {
            TrajectoryKind::Cv => self.start + self.velocity * t,
            TrajectoryKind::Sinusoid => {
                let base = self.start + self.velocity * t;
                let horiz = (self.velocity.x * self.velocity.x + self.velocity.y * self.velocity.y).sqrt();
                let lateral = if horiz > 0.0 {
                    Point3::new(-self.velocity.y / horiz, self.velocity.x / horiz, 0.0)
                } else {
                    Point3::new(1.0, 0.0, 0.0)
                };
                let s = (2.0 * std::f64::consts::PI * self.frequency_hz * t).sin();
                base + lateral * (self.amplitude_lateral * s) + Point3::new(0.0, 0.0, self.amplitude_vertical * s)
            }
            TrajectoryKind::Waypoints => {
                let d = (t * self.speed).clamp(0.0, *self.arc.last().unwrap());
                let seg = self.arc.partition_point(|&a| a <= d).clamp(1, self.arc.len() - 1) - 1;
                let len = self.arc[seg + 1] - self.arc[seg];
                let u = if len > 0.0 { (d - self.arc[seg]) / len } else { 0.0 };
                let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
                a + (b - a) * u
            }
        }
    }

    /// Position at `t` seconds after the flight start.
    pub fn position(&self, t: f64) -> Point3 {
        let p = self.local(t);
        if self.heading == 0.0 && self.offset == Point3::ZERO {
            return p;
        }
        let r = p - self.start;
        let (s, c) = self.heading.sin_cos();
        self.start + Point3::new(c * r.x - s * r.y, s * r.x + c * r.y, r.z) + self.offset
    }

    pub fn position_at_ns(&self, t_ns: i64) -> Point3 {
        self.position(t_ns as f64 * 1e-9)
    }

    /// Truth samples at `rate` Hz over the path duration.
    pub fn sample(&self, rate: f64) -> Vec<TruthSample> {
        (0..sample_count(self.duration_s, rate))
            .map(|k| {
                let t_ns = sample_time_ns(k, rate);
                TruthSample {
                    t_ns,
                    position: self.position_at_ns(t_ns),
                }
            })
            .collect()
    }
}

/// Truth trajectory of the configured (untransformed) path at the truth rate.
pub fn gen_trajectory(cfg: &SceneConfig) -> Result<Vec<TruthSample>, SynthError> {
    if cfg.trajectory != TrajectoryKind::Waypoints && !(cfg.duration_s > 0.0) {
        return Err(SynthError::Config("duration_s must be > 0".into()));
    }
    Ok(FlightPath::new(cfg)?.sample(cfg.truth_rate))
}

/// Ground-truth membership of one emitted point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenLabel {
    pub sensor: SensorKind,
    pub frame_t_ns: i64,
    pub point_index: usize,
    pub label: i32,
}

/// One generated flight.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub streams: SessionStreams,
    pub labels: Vec<GenLabel>,
    pub clutter_centers: Vec<Point3>,
    pub radar_dropped: usize,
    pub path: FlightPath,
}

impl Scene {
    /// Generation labels of one frame, in point order.
    pub fn frame_labels(&self, sensor: SensorKind, t_ns: i64) -> Vec<i32> {
        self.labels
            .iter()
            .filter(|l| l.sensor == sensor && l.frame_t_ns == t_ns)
            .map(|l| l.label)
            .collect()
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    // Empty frames cannot be represented in the CSV layout, so draw at least one.
    let n: f64 = Poisson::new(lambda).expect("lambda > 0").sample(rng);
    (n as usize).max(1)
}

fn gaussian(rng: &mut ChaCha8Rng, center: Point3, sigma: [f64; 3]) -> Point3 {
    let mut o = [0.0; 3];
    for (k, v) in o.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *v = z * sigma[k];
    }
    center + Point3::from_array(o)
}

fn place_clutter(
    cfg: &SceneConfig,
    truth: &[TruthSample],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point3>, SynthError> {
    let mut centers = Vec::with_capacity(cfg.clutter_blobs);
    for b in 0..cfg.clutter_blobs {
        let mut placed = None;
        for _ in 0..10_000 {
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = if cfg.clutter_max[k] > cfg.clutter_min[k] {
                    rng.random_range(cfg.clutter_min[k]..cfg.clutter_max[k])
                } else {
                    cfg.clutter_min[k]
                };
            }
            let c = Point3::from_array(c);
            let clear_path = truth.iter().all(|s| s.position.dist(c) >= cfg.clutter_clearance);
            let clear_blobs = centers.iter().all(|&o: &Point3| o.dist(c) >= cfg.clutter_clearance);
            if clear_path && clear_blobs {
                placed = Some(c);
                break;
            }
        }
        centers.push(placed.ok_or(SynthError::ClutterPlacement(b))?);
    }
    Ok(centers)
}

/// Emits one frame: shuffled points with their generation labels.
fn emit(
    rng: &mut ChaCha8Rng,
    sensor: SensorKind,
    t_ns: i64,
    mut tagged: Vec<(Point3, i32)>,
    labels: &mut Vec<GenLabel>,
) -> TimedFrame {
    tagged.shuffle(rng);
    labels.extend(tagged.iter().enumerate().map(|(i, &(_, label))| GenLabel {
        sensor,
        frame_t_ns: t_ns,
        point_index: i,
        label,
    }));
    TimedFrame {
        t_ns,
        points: tagged.into_iter().map(|(p, _)| p).collect(),
        sensor,
    }
}

/// Simulates every sensor along `path`. All randomness comes from `rng`.
pub fn observe(path: &FlightPath, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Scene, SynthError> {
    let truth = path.sample(cfg.truth_rate);
    let clutter_centers = place_clutter(cfg, &truth, rng)?;
    let duration = path.duration_s();
    let mut labels = Vec::new();
    let mut streams = SessionStreams {
        truth,
        ..SessionStreams::default()
    };

    for k in 0..sample_count(duration, cfg.lidar_rate) {
        let t_ns = sample_time_ns(k, cfg.lidar_rate);
        let center = path.position_at_ns(t_ns);
        for sensor in [SensorKind::LidarAvia, SensorKind::Lidar360] {
            let n = poisson_count(rng, cfg.lidar_lambda);
            let mut tagged: Vec<(Point3, i32)> =
                (0..n).map(|_| (gaussian(rng, center, cfg.lidar_sigma), LABEL_DRONE)).collect();
            if sensor == SensorKind::Lidar360 {
                for (b, &c) in clutter_centers.iter().enumerate() {
                    for _ in 0..cfg.clutter_points {
                        tagged.push((gaussian(rng, c, [cfg.clutter_size; 3]), b as i32 + 1));
                    }
                }
                tagged.extend((0..cfg.zero_points).map(|_| (Point3::ZERO, LABEL_ZERO)));
            }
            let frame = emit(rng, sensor, t_ns, tagged, &mut labels);
            match sensor {
                SensorKind::LidarAvia => streams.lidar_avia.push(frame),
                _ => streams.lidar_360.push(frame),
            }
        }
    }

    let mut radar_dropped = 0;
    for k in 0..sample_count(duration, cfg.radar_rate) {
        let t_ns = sample_time_ns(k, cfg.radar_rate);
        if cfg.radar_dropout > 0.0 && rng.random::<f64>() < cfg.radar_dropout {
            radar_dropped += 1;
            continue;
        }
        let center = path.position_at_ns(t_ns);
        let n = poisson_count(rng, cfg.radar_lambda);
        let tagged = (0..n).map(|_| (gaussian(rng, center, cfg.radar_sigma), LABEL_DRONE)).collect();
        streams.radar.push(emit(rng, SensorKind::Radar, t_ns, tagged, &mut labels));
    }

    Ok(Scene {
        streams,
        labels,
        clutter_centers,
        radar_dropped,
        path: path.clone(),
    })
}

/// Generates `cfg.flights` flights. Flight `i` draws from stream `i` of the
/// seeded generator, so flights are independent of each other's length.
pub fn generate(cfg: &SceneConfig) -> Result<Vec<Scene>, SynthError> {
    cfg.validate()?;
    let base = FlightPath::new(cfg)?;
    (0..cfg.flights)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let path = if i == 0 {
                base.clone()
            } else {
                let heading = spread(&mut rng, cfg.heading_spread);
                let offset = Point3::new(
                    spread(&mut rng, cfg.start_spread),
                    spread(&mut rng, cfg.start_spread),
                    spread(&mut rng, cfg.start_spread).max(-cfg.start[2].abs()),
                );
                base.clone().transformed(heading, offset)
            };
            observe(&path, cfg, &mut rng)
        })
        .collect()
}

fn spread(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..half_width)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightManifest {
    pub dir: String,
    /// Data rows per emitted file.
    pub rows: BTreeMap<String, usize>,
    pub frames: BTreeMap<String, usize>,
    pub radar_dropped: usize,
    pub labels: String,
    pub clutter_centers: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub config: SceneConfig,
    pub flights: Vec<FlightManifest>,
}

pub fn flight_dir_name(i: usize) -> String {
    format!("flight_{i:03}")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_labels(path: &Path, labels: &[GenLabel]) -> Result<(), SynthError> {
    let err = io_err(path);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&err)?);
    writeln!(w, "sensor,frame_t_ns,point_index,label").map_err(&err)?;
    for l in labels {
        writeln!(w, "{},{},{},{}", l.sensor, l.frame_t_ns, l.point_index, l.label).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

/// Writes each flight to `out/flight_XXX/` and the manifest to `out/`.
pub fn write_scenes(out: &Path, cfg: &SceneConfig, scenes: &[Scene]) -> Result<SceneManifest, SynthError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut flights = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let name = flight_dir_name(i);
        let dir = out.join(&name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut rows = BTreeMap::new();
        let mut frames = BTreeMap::new();
        for sensor in SensorKind::ALL {
            let stream = scene.streams.stream(sensor);
            write_frames(&dir.join(sensor.file_name()), stream)?;
            rows.insert(sensor.file_name().to_string(), stream.iter().map(|f| f.points.len()).sum());
            frames.insert(sensor.as_str().to_string(), stream.len());
        }
        write_truth(&dir.join(TRUTH_FILE), &scene.streams.truth)?;
        rows.insert(TRUTH_FILE.to_string(), scene.streams.truth.len());
        write_labels(&dir.join(LABELS_FILE), &scene.labels)?;
        rows.insert(LABELS_FILE.to_string(), scene.labels.len());
        flights.push(FlightManifest {
            labels: format!("{name}/{LABELS_FILE}"),
            dir: name,
            rows,
            frames,
            radar_dropped: scene.radar_dropped,
            clutter_centers: scene.clutter_centers.iter().map(|c| c.to_array()).collect(),
        });
    }
    let manifest = SceneManifest {
        config: cfg.clone(),
        flights,
    };
    let path = out.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, body + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

/// Displaces `round(fraction · n)` distinct positions by `U(min_m, max_m)`
/// meters in uniformly random directions. Returns the new positions and the
/// displaced indices in ascending order.
pub fn inject_outliers<R: Rng + ?Sized>(
    positions: &[Point3],
    fraction: f64,
    min_m: f64,
    max_m: f64,
    rng: &mut R,
) -> (Vec<Point3>, Vec<usize>) {
    let n = positions.len();
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut idx = sample_indices(rng, n, count).into_vec();
    idx.sort_unstable();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = positions.to_vec();
    for &i in &idx {
        let dir = loop {
            let d = Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            let len = d.norm();
            if len > 1e-9 {
                break d * (1.0 / len);
            }
        };
        let mag = if max_m > min_m { rng.random_range(min_m..max_m) } else { min_m };
        out[i] = out[i] + dir * mag;
    }
    (out, idx)
}
