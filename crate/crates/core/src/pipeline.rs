//! Session-level glue: classifier fitting across sessions, LiDAR-360
//! cluster isolation and merging, prepared-session files, and aligned
//! datasets with one trajectory id per session.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data_model::{
    align_modalities, build_samples, read_frames, read_truth, write_frames, write_truth,
    AlignedSample, DataError, DatasetMeta, IngestConfig, SensorKind, SessionDataset,
    SessionStreams, TimedFrame, TruthSample, TRUTH_FILE,
};
use crate::preprocess::{
    chunk_frames, merge_streams, nonzero_mask, process_lidar360, track_clusters, label_sequence,
    train_classifier, ClassifierConfig, ClusterFeatureSequence, LstmClassifier, PreprocessConfig,
    SequenceRecord,
};

pub const MERGED_LIDAR_FILE: &str = "lidar_merged.csv";
pub const RADAR_FILE: &str = "radar.csv";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";
pub const CLASSIFIER_FILE: &str = "classifier.json";

/// Mean centroid-to-truth distance (m) below which a track counts as the drone.
pub const LABEL_THRESHOLD: f64 = 1.5;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Directories under `root` (or `root` itself) that contain `marker`, sorted.
pub fn discover(root: &Path, marker: &str) -> Result<Vec<PathBuf>, DataError> {
    if root.join(marker).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(DataError::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(marker).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DataError::MissingFile(root.join(marker)));
    }
    Ok(dirs)
}

/// Every tracked LiDAR-360 cluster of a session with its truth-derived label.
pub fn labeled_sequences(
    streams: &SessionStreams,
    cfg: &PreprocessConfig,
) -> Vec<(ClusterFeatureSequence, bool)> {
    chunk_frames(&streams.lidar_360, cfg.unit_frames.max(1))
        .iter()
        .flat_map(|unit| track_clusters(unit, &cfg.track))
        .map(|seq| {
            let drone = label_sequence(&seq, &streams.truth, LABEL_THRESHOLD);
            (seq, drone)
        })
        .collect()
}

/// Trains the drone/clutter classifier on the tracks of all `sessions`.
pub fn fit_classifier(
    sessions: &[SessionStreams],
    pcfg: &PreprocessConfig,
    ccfg: &ClassifierConfig,
) -> LstmClassifier {
    let data: Vec<(ClusterFeatureSequence, bool)> =
        sessions.iter().flat_map(|s| labeled_sequences(s, pcfg)).collect();
    train_classifier(&data, ccfg).0
}

/// Merged LiDAR, radar and truth streams ready for alignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreparedSession {
    pub lidar: Vec<TimedFrame>,
    pub radar: Vec<TimedFrame>,
    pub truth: Vec<TruthSample>,
    pub records: Vec<SequenceRecord>,
}

/// Isolates the drone cluster in LiDAR-360 and merges it with Avia. Frames
/// left without points are dropped, as they would be on disk.
pub fn prepare_session(
    streams: &SessionStreams,
    classifier: &LstmClassifier,
    cfg: &PreprocessConfig,
) -> PreparedSession {
    let out = process_lidar360(&streams.lidar_360, classifier, cfg);
    let mut lidar = merge_streams(&streams.lidar_avia, &out.frames, cfg.tolerance_ns);
    lidar.retain(|f| !f.points.is_empty());
    PreparedSession {
        lidar,
        radar: streams.radar.clone(),
        truth: streams.truth.clone(),
        records: out.records,
    }
}

/// Avia merged with the unprocessed (zero-masked) LiDAR-360 stream.
pub fn raw_lidar(streams: &SessionStreams, tolerance_ns: i64) -> Vec<TimedFrame> {
    let masked: Vec<TimedFrame> = streams.lidar_360.iter().map(nonzero_mask).collect();
    let mut lidar = merge_streams(&streams.lidar_avia, &masked, tolerance_ns);
    lidar.retain(|f| !f.points.is_empty());
    lidar
}

impl PreparedSession {
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_frames(&dir.join(MERGED_LIDAR_FILE), &self.lidar)?;
        write_frames(&dir.join(RADAR_FILE), &self.radar)?;
        write_truth(&dir.join(TRUTH_FILE), &self.truth)?;
        let path = dir.join(CLUSTERS_FILE);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))
    }

    /// Loads the stream files; cluster records are not read back.
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        Ok(Self {
            lidar: read_frames(&dir.join(MERGED_LIDAR_FILE), SensorKind::LidarAvia)?,
            radar: read_frames(&dir.join(RADAR_FILE), SensorKind::Radar)?,
            truth: read_truth(&dir.join(TRUTH_FILE))?,
            records: Vec::new(),
        })
    }
}

/// Aligned, padded samples of one session. Returns the samples, the truth
/// samples dropped by the tolerance, and the samples discarded for an empty
/// modality.
pub fn session_samples(
    lidar: &[TimedFrame],
    radar: &[TimedFrame],
    truth: &[TruthSample],
    trajectory: u32,
    cfg: &IngestConfig,
) -> (Vec<AlignedSample>, usize, usize) {
    let alignment = align_modalities(lidar, radar, truth, cfg.tolerance_ns);
    let all = build_samples(&alignment, lidar, radar, trajectory, cfg);
    let total = all.len();
    let kept: Vec<AlignedSample> = all
        .into_iter()
        .filter(|s| s.lidar.valid_count() > 0 && s.radar.valid_count() > 0)
        .collect();
    let missing = total - kept.len();
    (kept, alignment.dropped, missing)
}

/// One dataset over all sessions; session `i` becomes trajectory `i`.
pub fn build_dataset(sessions: &[PreparedSession], cfg: &IngestConfig) -> SessionDataset {
    let mut ds = SessionDataset {
        samples: Vec::new(),
        meta: DatasetMeta {
            tolerance_ns: cfg.tolerance_ns,
            lidar_capacity: cfg.lidar_capacity,
            radar_capacity: cfg.radar_capacity,
            ..DatasetMeta::default()
        },
    };
    for (i, s) in sessions.iter().enumerate() {
        let (samples, dropped, missing) = session_samples(&s.lidar, &s.radar, &s.truth, i as u32, cfg);
        ds.samples.extend(samples);
        ds.meta.dropped += dropped;
        ds.meta.missing_modality += missing;
    }
    ds
}

/// Loads every prepared session under `root` into one dataset.
pub fn load_dataset(root: &Path, cfg: &IngestConfig) -> Result<SessionDataset, DataError> {
    let dirs = discover(root, MERGED_LIDAR_FILE)?;
    let sessions = dirs
        .iter()
        .map(|d| PreparedSession::load(d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ds = build_dataset(&sessions, cfg);
    ds.meta.sources = dirs;
    if ds.samples.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Point3;

    fn frame(t: i64, pts: &[[f64; 3]], sensor: SensorKind) -> TimedFrame {
        TimedFrame {
            t_ns: t,
            points: pts.iter().map(|&p| Point3::from_array(p)).collect(),
            sensor,
        }
    }

    #[test]
    fn samples_without_a_modality_are_counted() {
        let lidar = vec![frame(0, &[[1.0, 0.0, 0.0]], SensorKind::LidarAvia)];
        let radar = vec![
            frame(0, &[], SensorKind::Radar),
            frame(400_000_000, &[[0.0, 1.0, 0.0]], SensorKind::Radar),
        ];
        let truth = vec![
            TruthSample { t_ns: 0, position: Point3::ZERO },
            TruthSample { t_ns: 300_000_000, position: Point3::ZERO },
        ];
        let cfg = IngestConfig::default();
        let (samples, dropped, missing) = session_samples(&lidar, &radar, &truth, 3, &cfg);
        assert!(samples.is_empty());
        assert_eq!(dropped, 1);
        assert_eq!(missing, 1);
    }

    #[test]
    fn prepared_session_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = PreparedSession {
            lidar: vec![frame(5, &[[1.0, 2.0, 3.0], [0.1, 0.2, 0.3]], SensorKind::LidarAvia)],
            radar: vec![frame(6, &[[4.0, 5.0, 6.0]], SensorKind::Radar)],
            truth: vec![TruthSample { t_ns: 5, position: Point3::new(1.0, 1.0, 1.0) }],
            records: Vec::new(),
        };
        s.write(dir.path()).unwrap();
        assert_eq!(PreparedSession::load(dir.path()).unwrap(), s);
        assert_eq!(discover(dir.path(), MERGED_LIDAR_FILE).unwrap(), vec![dir.path().to_path_buf()]);
        let ds = load_dataset(dir.path(), &IngestConfig::default()).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.samples[0].lidar.valid_count(), 2);
    }

    #[test]
    fn discover_sorts_subdirectories() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b", "a", "c"] {
            std::fs::create_dir(dir.path().join(name)).unwrap();
            if name != "c" {
                std::fs::write(dir.path().join(name).join(TRUTH_FILE), "t_ns,x,y,z\n").unwrap();
            }
        }
        let found = discover(dir.path(), TRUTH_FILE).unwrap();
        assert_eq!(found, vec![dir.path().join("a"), dir.path().join("b")]);
        assert!(discover(&dir.path().join("c"), TRUTH_FILE).is_err());
    }
}
