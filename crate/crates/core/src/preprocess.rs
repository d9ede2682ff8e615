//! LiDAR-360 isolation: chunk frames into units, drop zero points, cluster
//! each frame, track clusters across the unit, classify each track with an
//! LSTM, keep the drone track, and splice it onto the Livox Avia points.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{hdbscan, HdbscanParams};
use crate::data_model::{nearest_frame, Point3, SensorKind, TimedFrame, TruthSample};
use crate::nn::{
    adam_step, AdamConfig, Checkpoint, Lstm, NnError, ParamTensor, Parameterized, Tensor2,
};

pub const FEATURE_DIM: usize = 9;
pub const DRONE_CLASS: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessingUnit {
    pub index: usize,
    pub frames: Vec<TimedFrame>,
}

/// Consecutive non-overlapping blocks of `k` frames; a short tail block is kept.
pub fn chunk_frames(frames: &[TimedFrame], k: usize) -> Vec<ProcessingUnit> {
    assert!(k >= 1, "unit size must be at least 1");
    frames
        .chunks(k)
        .enumerate()
        .map(|(index, c)| ProcessingUnit {
            index,
            frames: c.to_vec(),
        })
        .collect()
}

/// Drops exact-origin points and points with a non-finite coordinate.
pub fn nonzero_mask(frame: &TimedFrame) -> TimedFrame {
    TimedFrame {
        t_ns: frame.t_ns,
        sensor: frame.sensor,
        points: frame
            .points
            .iter()
            .copied()
            .filter(|p| p.is_finite() && *p != Point3::ZERO)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub mean: [f64; 3],
    /// Population standard deviation.
    pub std: [f64; 3],
    pub range: [f64; 3],
}

impl ClusterStats {
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        let mut f = [0.0; FEATURE_DIM];
        f[..3].copy_from_slice(&self.mean);
        f[3..6].copy_from_slice(&self.std);
        f[6..].copy_from_slice(&self.range);
        f
    }

    pub fn centroid(&self) -> Point3 {
        Point3::from_array(self.mean)
    }
}

/// `None` for an empty cluster.
pub fn cluster_stats(points: &[Point3]) -> Option<ClusterStats> {
    if points.is_empty() {
        return None;
    }
    let m = points.len() as f64;
    let mut mean = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for (a, v) in p.to_array().into_iter().enumerate() {
            mean[a] += v;
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = [0.0; 3];
    for p in points {
        for (a, v) in p.to_array().into_iter().enumerate() {
            var[a] += (v - mean[a]).powi(2);
        }
    }
    Some(ClusterStats {
        mean,
        std: var.map(|v| (v / m).sqrt()),
        range: [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]],
    })
}

/// One cluster observation inside a tracked sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedCluster {
    /// Frame position within the unit.
    pub frame: usize,
    pub t_ns: i64,
    pub points: Vec<Point3>,
    pub stats: ClusterStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterFeatureSequence {
    pub unit_index: usize,
    pub observations: Vec<TrackedCluster>,
}

impl ClusterFeatureSequence {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The raw `f_t` rows.
    pub fn features(&self) -> Vec<[f64; FEATURE_DIM]> {
        self.observations.iter().map(|o| o.stats.features()).collect()
    }

    pub fn centroids(&self) -> Vec<Point3> {
        self.observations.iter().map(|o| o.stats.centroid()).collect()
    }

    /// Classifier input: `f_t` with the mean replaced by its step from the
    /// previous observation (zero on the first).
    pub fn classifier_inputs(&self) -> Vec<[f64; FEATURE_DIM]> {
        let rows = self.features();
        let mut out = rows.clone();
        for t in 0..rows.len() {
            for a in 0..3 {
                out[t][a] = if t == 0 { 0.0 } else { rows[t][a] - rows[t - 1][a] };
            }
        }
        out
    }

    pub fn observation_at(&self, frame: usize) -> Option<&TrackedCluster> {
        self.observations.iter().find(|o| o.frame == frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub hdbscan: HdbscanParams,
    /// Association gate on centroid distance (m).
    pub gate: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            hdbscan: HdbscanParams::default(),
            gate: 2.0,
        }
    }
}

/// Clusters every frame of the unit and links clusters across frames by
/// nearest centroid within the gate (greedy, one-to-one per frame).
pub fn track_clusters(unit: &ProcessingUnit, cfg: &TrackConfig) -> Vec<ClusterFeatureSequence> {
    let mut seqs: Vec<ClusterFeatureSequence> = Vec::new();
    for (fi, raw) in unit.frames.iter().enumerate() {
        let frame = nonzero_mask(raw);
        let labeling = hdbscan(&frame.points, &cfg.hdbscan);
        let clusters: Vec<TrackedCluster> = labeling
            .members()
            .into_iter()
            .filter_map(|idx| {
                let points: Vec<Point3> = idx.iter().map(|&i| frame.points[i]).collect();
                cluster_stats(&points).map(|stats| TrackedCluster {
                    frame: fi,
                    t_ns: frame.t_ns,
                    points,
                    stats,
                })
            })
            .collect();

        let mut pairs = Vec::new();
        for (si, s) in seqs.iter().enumerate() {
            let last = s.observations.last().expect("non-empty").stats.centroid();
            for (ci, c) in clusters.iter().enumerate() {
                let d = last.dist(c.stats.centroid());
                if d <= cfg.gate {
                    pairs.push((d, si, ci));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut seq_used = vec![false; seqs.len()];
        let mut assigned: Vec<Option<usize>> = vec![None; clusters.len()];
        for (_, si, ci) in pairs {
            if !seq_used[si] && assigned[ci].is_none() {
                seq_used[si] = true;
                assigned[ci] = Some(si);
            }
        }
        for (ci, c) in clusters.into_iter().enumerate() {
            match assigned[ci] {
                Some(si) => seqs[si].observations.push(c),
                None => seqs.push(ClusterFeatureSequence {
                    unit_index: unit.index,
                    observations: vec![c],
                }),
            }
        }
    }
    seqs
}

// ---------------------------------------------------------------------------
// LSTM classifier
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 1,
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmClassifier {
    pub lstm: Lstm,
    /// `2 × hidden` readout.
    pub readout_w: ParamTensor,
    pub readout_b: ParamTensor,
    /// Input standardization (identity when untrained).
    pub feature_mean: [f64; FEATURE_DIM],
    pub feature_std: [f64; FEATURE_DIM],
}

#[derive(Serialize, Deserialize)]
struct ClassifierHeader {
    kind: String,
    hidden: usize,
    layers: usize,
    feature_mean: [f64; FEATURE_DIM],
    feature_std: [f64; FEATURE_DIM],
}

impl LstmClassifier {
    pub fn new(hidden: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = Lstm::new(FEATURE_DIM, hidden, layers, &mut rng);
        Self {
            lstm,
            readout_w: ParamTensor::uniform_fan_in("readout.w", 2, hidden, &mut rng),
            readout_b: ParamTensor::zeros("readout.b", 1, 2),
            feature_mean: [0.0; FEATURE_DIM],
            feature_std: [1.0; FEATURE_DIM],
        }
    }

    /// Every weight and bias zero.
    pub fn zeros(hidden: usize, layers: usize) -> Self {
        let mut c = Self::new(hidden, layers, 0);
        for p in c.params_mut() {
            p.value.fill(0.0);
        }
        c
    }

    fn standardize(&self, rows: &[[f64; FEATURE_DIM]]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|f| {
                (0..FEATURE_DIM)
                    .map(|k| (f[k] - self.feature_mean[k]) / self.feature_std[k])
                    .collect()
            })
            .collect()
    }

    /// Two-class softmax over the readout of the last hidden state.
    pub fn class_probabilities(&self, seq: &ClusterFeatureSequence) -> [f64; 2] {
        let xs = self.standardize(&seq.classifier_inputs());
        let (h, _) = self.lstm.forward(&xs).expect("classifier shapes are consistent");
        softmax2(self.logits(&h))
    }

    /// Probability of the drone class.
    pub fn lstm_forward(&self, seq: &ClusterFeatureSequence) -> f64 {
        self.class_probabilities(seq)[DRONE_CLASS]
    }

    fn logits(&self, h: &[f64]) -> [f64; 2] {
        let w = &self.readout_w.value;
        let b = self.readout_b.value.as_slice();
        let mut z = [b[0], b[1]];
        for (k, zk) in z.iter_mut().enumerate() {
            *zk += w.row(k).iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
        z
    }

    /// Cross-entropy of one sequence; accumulates parameter gradients scaled by `weight`.
    fn accumulate_loss(&mut self, seq: &ClusterFeatureSequence, drone: bool, weight: f64) -> f64 {
        let xs = self.standardize(&seq.classifier_inputs());
        let (h, trace) = self.lstm.forward(&xs).expect("shapes");
        let p = softmax2(self.logits(&h));
        let target = usize::from(drone);
        let loss = -p[target].max(1e-300).ln();
        let dz: Vec<f64> = (0..2)
            .map(|k| weight * (p[k] - if k == target { 1.0 } else { 0.0 }))
            .collect();
        let mut dw = Tensor2::zeros(2, h.len());
        for k in 0..2 {
            for (j, &hj) in h.iter().enumerate() {
                dw.set(k, j, dz[k] * hj);
            }
        }
        self.readout_w.accumulate(&dw);
        self.readout_b.accumulate(&Tensor2::row_vector(dz.clone()));
        let w = &self.readout_w.value;
        let dh: Vec<f64> = (0..h.len()).map(|j| dz[0] * w.get(0, j) + dz[1] * w.get(1, j)).collect();
        self.lstm.backward(&trace, &dh).expect("shapes");
        loss
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = ClassifierHeader {
            kind: "lstm_classifier".into(),
            hidden: self.lstm.hidden(),
            layers: self.lstm.layers.len(),
            feature_mean: self.feature_mean,
            feature_std: self.feature_std,
        };
        Checkpoint::capture(self, serde_json::to_value(header).expect("serializable"))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        let h: ClassifierHeader = serde_json::from_value(ck.header.clone())
            .map_err(|e| NnError::Checkpoint(format!("classifier header: {e}")))?;
        if h.kind != "lstm_classifier" {
            return Err(NnError::Checkpoint(format!("expected lstm_classifier, got {}", h.kind)));
        }
        let mut c = Self::new(h.hidden, h.layers, 0);
        ck.restore(&mut c)?;
        c.feature_mean = h.feature_mean;
        c.feature_std = h.feature_std;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Parameterized for LstmClassifier {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.lstm.params();
        v.push(&self.readout_w);
        v.push(&self.readout_b);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.lstm.params_mut();
        v.push(&mut self.readout_w);
        v.push(&mut self.readout_b);
        v
    }
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

/// Positive when the mean distance from the track's centroids to the
/// nearest-in-time truth sample is below `threshold` meters.
pub fn label_sequence(seq: &ClusterFeatureSequence, truth: &[TruthSample], threshold: f64) -> bool {
    if seq.is_empty() || truth.is_empty() {
        return false;
    }
    let total: f64 = seq
        .observations
        .iter()
        .map(|o| {
            let k = truth.partition_point(|s| s.t_ns < o.t_ns);
            let pick = match (k.checked_sub(1), truth.get(k)) {
                (Some(a), Some(b)) => {
                    if o.t_ns - truth[a].t_ns <= b.t_ns - o.t_ns {
                        a
                    } else {
                        k
                    }
                }
                (Some(a), None) => a,
                (None, _) => k,
            };
            o.stats.centroid().dist(truth[pick].position)
        })
        .sum();
    total / (seq.len() as f64) < threshold
}

/// Trains a fresh classifier with cross-entropy, seeded shuffling, and Adam.
/// Returns the classifier and the mean training loss of each epoch.
pub fn train_classifier(
    data: &[(ClusterFeatureSequence, bool)],
    cfg: &ClassifierConfig,
) -> (LstmClassifier, Vec<f64>) {
    let mut model = LstmClassifier::new(cfg.hidden, cfg.layers, cfg.seed);
    let rows: Vec<[f64; FEATURE_DIM]> = data
        .iter()
        .flat_map(|(s, _)| s.classifier_inputs())
        .collect();
    if !rows.is_empty() {
        let n = rows.len() as f64;
        for k in 0..FEATURE_DIM {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            model.feature_mean[k] = mean;
            model.feature_std[k] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).filter(|&i| !data[i].0.is_empty()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                total += model.accumulate_loss(&data[i].0, data[i].1, w);
            }
            adam_step(model.params_mut(), &cfg.adam);
        }
        curve.push(if order.is_empty() { 0.0 } else { total / order.len() as f64 });
    }
    (model, curve)
}

// ---------------------------------------------------------------------------
// Selection and merging
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub probability: f64,
    /// The best probability was below 0.5.
    pub low_confidence: bool,
}

/// Argmax over drone probabilities (first on ties); `None` only when empty.
pub fn select_by_probability(probabilities: &[f64]) -> Option<Selection> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probabilities.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(index, probability)| Selection {
        index,
        probability,
        low_confidence: probability < 0.5,
    })
}

pub fn select_drone_cluster(
    sequences: &[ClusterFeatureSequence],
    classifier: &LstmClassifier,
) -> Option<Selection> {
    let probs: Vec<f64> = sequences.iter().map(|s| classifier.lstm_forward(s)).collect();
    select_by_probability(&probs)
}

/// Avia points first, then the selected cluster's points.
pub fn merge_lidar(avia: &[Point3], cluster: &[Point3]) -> Vec<Point3> {
    let mut out = Vec::with_capacity(avia.len() + cluster.len());
    out.extend_from_slice(avia);
    out.extend_from_slice(cluster);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub unit_frames: usize,
    pub track: TrackConfig,
    /// Maximum gap when attaching an Avia frame to a LiDAR-360 frame.
    pub tolerance_ns: i64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            unit_frames: 20,
            track: TrackConfig::default(),
            tolerance_ns: 100_000_000,
        }
    }
}

/// Per-sequence record for the JSON-lines report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub unit_index: usize,
    pub t_ns: Vec<i64>,
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub probability: f64,
    pub selected: bool,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lidar360Output {
    /// One frame per input frame holding only the selected cluster's points.
    pub frames: Vec<TimedFrame>,
    pub records: Vec<SequenceRecord>,
}

/// Runs the whole LiDAR-360 stage over a stream.
pub fn process_lidar360(
    frames: &[TimedFrame],
    classifier: &LstmClassifier,
    cfg: &PreprocessConfig,
) -> Lidar360Output {
    let mut out = Lidar360Output {
        frames: Vec::with_capacity(frames.len()),
        records: Vec::new(),
    };
    for unit in chunk_frames(frames, cfg.unit_frames.max(1)) {
        let seqs = track_clusters(&unit, &cfg.track);
        let probs: Vec<f64> = seqs.iter().map(|s| classifier.lstm_forward(s)).collect();
        let sel = select_by_probability(&probs);
        for (i, s) in seqs.iter().enumerate() {
            let chosen = sel.is_some_and(|x| x.index == i);
            out.records.push(SequenceRecord {
                unit_index: unit.index,
                t_ns: s.observations.iter().map(|o| o.t_ns).collect(),
                features: s.features(),
                probability: probs[i],
                selected: chosen,
                low_confidence: chosen && sel.is_some_and(|x| x.low_confidence),
            });
        }
        for (fi, f) in unit.frames.iter().enumerate() {
            let points = sel
                .and_then(|x| seqs[x.index].observation_at(fi))
                .map(|o| o.points.clone())
                .unwrap_or_default();
            out.frames.push(TimedFrame {
                t_ns: f.t_ns,
                points,
                sensor: SensorKind::Lidar360,
            });
        }
    }
    out
}

/// Builds the merged LiDAR stream on the LiDAR-360 timeline (the Avia
/// timeline when there is no LiDAR-360 data), attaching the nearest frame
/// of the other stream within the tolerance.
pub fn merge_streams(avia: &[TimedFrame], lidar360: &[TimedFrame], tolerance_ns: i64) -> Vec<TimedFrame> {
    let (base, other, base_first) = if lidar360.is_empty() {
        (avia, lidar360, true)
    } else {
        (lidar360, avia, false)
    };
    base.iter()
        .map(|f| {
            let partner = nearest_frame(other, f.t_ns)
                .filter(|&k| (other[k].t_ns - f.t_ns).abs() <= tolerance_ns)
                .map(|k| other[k].points.as_slice())
                .unwrap_or(&[]);
            let points = if base_first {
                merge_lidar(&f.points, partner)
            } else {
                merge_lidar(partner, &f.points)
            };
            TimedFrame {
                t_ns: f.t_ns,
                points,
                sensor: SensorKind::LidarAvia,
            }
        })
        .collect()
}
