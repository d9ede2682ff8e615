//! Flat `key=value` run configuration covering every module's settings.
//!
//! Files hold one `key = value` pair per line; `#` starts a comment. Later
//! assignments win, so command-line overrides are applied after the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data_model::IngestConfig;
use crate::kalman::KfConfig;
use crate::model::Variant;
use crate::postprocess::PostprocessConfig;
use crate::preprocess::{ClassifierConfig, PreprocessConfig};
use crate::synth::{SceneConfig, TrajectoryKind};
use crate::training::{LossKind, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {key:?}{}", location(.origin))]
    UnknownKey { key: String, origin: Option<(PathBuf, usize)> },
    #[error("bad value {value:?} for {key}: {reason}{}", location(.origin))]
    BadValue {
        key: String,
        value: String,
        reason: String,
        origin: Option<(PathBuf, usize)>,
    },
    #[error("malformed line (expected key = value){}", location(.origin))]
    Syntax { origin: Option<(PathBuf, usize)> },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn location(origin: &Option<(PathBuf, usize)>) -> String {
    match origin {
        Some((p, line)) => format!(" at {}:{}", p.display(), line),
        None => String::new(),
    }
}

impl ConfigError {
    fn with_origin(self, o: (PathBuf, usize)) -> Self {
        match self {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, origin: Some(o) },
            ConfigError::BadValue { key, value, reason, .. } => ConfigError::BadValue {
                key,
                value,
                reason,
                origin: Some(o),
            },
            other => other,
        }
    }
}

/// A value type that round-trips through its config text form.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                <$t as FromStr>::from_str(s).map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(usize, u64, i64, TrajectoryKind, Variant, LossKind);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for [f64; 3] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected 3 comma-separated numbers, found {}", parts.len()));
        }
        let mut out = [0.0; 3];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = f64::parse_value(p)?;
        }
        Ok(out)
    }
    fn render(&self) -> String {
        format!("{},{},{}", self[0], self[1], self[2])
    }
}

/// Points separated by `;`, coordinates by `,`.
impl ConfigValue for Vec<[f64; 3]> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(<[f64; 3]>::parse_value)
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(ConfigValue::render).collect::<Vec<_>>().join(";")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub synth: SceneConfig,
    pub ingest: IngestConfig,
    pub preprocess: PreprocessConfig,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
    pub kalman: KfConfig,
}

macro_rules! fields {
    ($($key:literal => $($f:ident).+ ;)*) => {
        /// Every recognized key, in file order.
        pub const KEYS: &'static [&'static str] = &[$($key),*];

        pub fn get(&self, key: &str) -> Option<String> {
            match key {
                $($key => Some(ConfigValue::render(&self.$($f).+)),)*
                _ => None,
            }
        }

        /// Assigns one key from its text form.
        pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
            let value = value.trim();
            let bad = |reason: String| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason,
                origin: None,
            };
            match key {
                $($key => self.$($f).+ = ConfigValue::parse_value(value).map_err(bad)?,)*
                _ => return Err(ConfigError::UnknownKey { key: key.to_string(), origin: None }),
            }
            Ok(())
        }
    };
}

impl RunConfig {
    fields! {
        "synth.duration_s" => synth.duration_s;
        "synth.truth_rate" => synth.truth_rate;
        "synth.lidar_rate" => synth.lidar_rate;
        "synth.radar_rate" => synth.radar_rate;
        "synth.trajectory" => synth.trajectory;
        "synth.start" => synth.start;
        "synth.velocity" => synth.velocity;
        "synth.amplitude_lateral" => synth.amplitude_lateral;
        "synth.amplitude_vertical" => synth.amplitude_vertical;
        "synth.frequency_hz" => synth.frequency_hz;
        "synth.waypoints" => synth.waypoints;
        "synth.speed" => synth.speed;
        "synth.lidar_lambda" => synth.lidar_lambda;
        "synth.lidar_sigma" => synth.lidar_sigma;
        "synth.radar_lambda" => synth.radar_lambda;
        "synth.radar_sigma" => synth.radar_sigma;
        "synth.radar_dropout" => synth.radar_dropout;
        "synth.clutter_blobs" => synth.clutter_blobs;
        "synth.clutter_points" => synth.clutter_points;
        "synth.clutter_size" => synth.clutter_size;
        "synth.clutter_min" => synth.clutter_min;
        "synth.clutter_max" => synth.clutter_max;
        "synth.clutter_clearance" => synth.clutter_clearance;
        "synth.zero_points" => synth.zero_points;
        "synth.flights" => synth.flights;
        "synth.start_spread" => synth.start_spread;
        "synth.heading_spread" => synth.heading_spread;
        "synth.seed" => synth.seed;
        "ingest.tolerance_ns" => ingest.tolerance_ns;
        "ingest.lidar_capacity" => ingest.lidar_capacity;
        "ingest.radar_capacity" => ingest.radar_capacity;
        "preprocess.unit_frames" => preprocess.unit_frames;
        "preprocess.gate" => preprocess.track.gate;
        "preprocess.min_cluster_size" => preprocess.track.hdbscan.min_cluster_size;
        "preprocess.min_samples" => preprocess.track.hdbscan.min_samples;
        "preprocess.cluster_selection_epsilon" => preprocess.track.hdbscan.cluster_selection_epsilon;
        "preprocess.tolerance_ns" => preprocess.tolerance_ns;
        "classifier.hidden" => classifier.hidden;
        "classifier.layers" => classifier.layers;
        "classifier.epochs" => classifier.epochs;
        "classifier.batch_size" => classifier.batch_size;
        "classifier.lr" => classifier.adam.lr;
        "classifier.seed" => classifier.seed;
        "train.batch_size" => train.batch_size;
        "train.epochs" => train.epochs;
        "train.lr" => train.adam.lr;
        "train.beta1" => train.adam.beta1;
        "train.beta2" => train.adam.beta2;
        "train.eps" => train.adam.eps;
        "train.loss" => train.loss;
        "train.smooth_l1_beta" => train.beta;
        "train.seed" => train.seed;
        "train.val_fraction" => train.val_fraction;
        "model.variant" => train.model.variant;
        "model.tokens" => train.model.tokens;
        "model.reduction" => train.model.reduction;
        "model.head_hidden" => train.model.head_hidden;
        "model.dropout" => train.model.dropout;
        "model.seed" => train.model.seed;
        "postprocess.outlier_threshold" => postprocess.outlier_threshold;
        "postprocess.neighbor_halfwidth" => postprocess.neighbor_halfwidth;
        "postprocess.smooth_window" => postprocess.smooth_window;
        "kalman.q" => kalman.q;
        "kalman.r" => kalman.r;
        "kalman.init_velocity_var" => kalman.init_velocity_var;
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or(ConfigError::Syntax { origin: None })?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment in `text`; `source` labels error locations.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let origin = (source.to_path_buf(), i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { origin: Some(origin.clone()) })?;
            self.set(k.trim(), v).map_err(|e| e.with_origin(origin))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, path)
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_text()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
