//! Fusion network: twin point encoders with channel attention, bidirectional
//! token cross-attention, additive fusion and a regression head.
//!
//! Single-encoder variants (LiDAR only, radar only) feed their global feature
//! straight into the head and exist for ablation runs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{AlignedSample, PaddedPoints, Point3};
use crate::nn::ops::{
    dropout, dropout_backward, linear_backward, linear_forward, masked_avg_pool, masked_max_pool,
    relu, relu_backward, sigmoid_scalar, softmax_rows, softmax_rows_backward,
};
use crate::nn::{Checkpoint, Mode, NnError, ParamTensor, Parameterized, Tensor2};

pub const FEATURE_WIDTH: usize = 256;
const WIDTH_1: usize = 64;
const WIDTH_2: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("missing modality: no valid {0} points")]
    MissingModality(&'static str),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fused,
    LidarOnly,
    RadarOnly,
}

impl Variant {
    pub fn uses_lidar(self) -> bool {
        self != Variant::RadarOnly
    }

    pub fn uses_radar(self) -> bool {
        self != Variant::LidarOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fused => "fused",
            Variant::LidarOnly => "lidar_only",
            Variant::RadarOnly => "radar_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fused" => Ok(Variant::Fused),
            "lidar_only" => Ok(Variant::LidarOnly),
            "radar_only" => Ok(Variant::RadarOnly),
            other => Err(format!("unknown model variant '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Token count for cross-attention; token width is `256 / tokens`.
    pub tokens: usize,
    /// Channel-attention reduction width.
    pub reduction: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Fused,
            tokens: 8,
            reduction: 32,
            head_hidden: 128,
            dropout: 0.3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn token_width(&self) -> usize {
        FEATURE_WIDTH / self.tokens
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tokens == 0 || FEATURE_WIDTH % self.tokens != 0 {
            return Err(ModelError::Config(format!(
                "tokens must divide {FEATURE_WIDTH}, got {}",
                self.tokens
            )));
        }
        if self.reduction == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config("reduction and head_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Fixed affine map between metres and network units:
/// network input `(p − center) / scale`, output `center + scale · ŷ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Normalization {
    /// Center = mean truth position, scale = RMS deviation per axis (≥ 1 m).
    pub fn fit(samples: &[AlignedSample]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let n = samples.len() as f64;
        let mut center = [0.0; 3];
        for s in samples {
            for (c, v) in center.iter_mut().zip(s.truth.to_array()) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n);
        let mut ss = 0.0;
        for s in samples {
            for (c, v) in center.iter().zip(s.truth.to_array()) {
                ss += (v - c).powi(2);
            }
        }
        Self {
            center,
            scale: (ss / (3.0 * n)).sqrt().max(1.0),
        }
    }

    fn to_input(&self, p: Point3) -> [f64; 3] {
        let a = p.to_array();
        [
            (a[0] - self.center[0]) / self.scale,
            (a[1] - self.center[1]) / self.scale,
            (a[2] - self.center[2]) / self.scale,
        ]
    }

    fn to_output(&self, y: &[f64]) -> [f64; 3] {
        [
            self.center[0] + self.scale * y[0],
            self.center[1] + self.scale * y[1],
            self.center[2] + self.scale * y[2],
        ]
    }
}

fn bias(name: String, width: usize) -> ParamTensor {
    ParamTensor::zeros(name, 1, width)
}

fn matvec(w: &Tensor2, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Per-point MLP 3→64→128→256 with channel attention and max pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    pub w3: ParamTensor,
    pub b3: ParamTensor,
    /// `reduction × 512`, no bias.
    pub w4: ParamTensor,
    /// `256 × reduction`, no bias.
    pub w5: ParamTensor,
}

struct PoolCache {
    /// Global row of each column's maximum.
    argmax: Vec<usize>,
    max: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    s: Vec<f64>,
    a: Vec<f64>,
}

struct EncoderCache {
    x: Tensor2,
    h1_pre: Tensor2,
    h1: Tensor2,
    h2_pre: Tensor2,
    h2: Tensor2,
    segments: Vec<(usize, usize)>,
    pools: Vec<PoolCache>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(prefix: &str, reduction: usize, rng: &mut R) -> Self {
        Self {
            w1: ParamTensor::uniform_fan_in(format!("{prefix}.w1"), WIDTH_1, 3, rng),
            b1: bias(format!("{prefix}.b1"), WIDTH_1),
            w2: ParamTensor::uniform_fan_in(format!("{prefix}.w2"), WIDTH_2, WIDTH_1, rng),
            b2: bias(format!("{prefix}.b2"), WIDTH_2),
            w3: ParamTensor::uniform_fan_in(format!("{prefix}.w3"), FEATURE_WIDTH, WIDTH_2, rng),
            b3: bias(format!("{prefix}.b3"), FEATURE_WIDTH),
            w4: ParamTensor::uniform_fan_in(format!("{prefix}.w4"), reduction, 2 * FEATURE_WIDTH, rng),
            w5: ParamTensor::uniform_fan_in(format!("{prefix}.w5"), FEATURE_WIDTH, reduction, rng),
        }
    }

    fn tensors(&self) -> [&ParamTensor; 8] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.w4, &self.w5]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.w5,
        ]
    }

    /// `a = sigmoid(W₅ · relu(W₄ · z))` for the 512-wide channel statistic `z`.
    pub fn channel_attention(&self, z: &[f64]) -> Vec<f64> {
        let v = matvec(&self.w4.value, z);
        let s: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
        matvec(&self.w5.value, &s).into_iter().map(sigmoid_scalar).collect()
    }

    /// Encodes one point set (coordinates used as given).
    pub fn encode(&self, points: &[Point3], mask: &[bool]) -> Result<Vec<f64>, ModelError> {
        let valid: Vec<[f64; 3]> = points
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| p.to_array())
            .collect();
        if valid.is_empty() {
            return Err(NnError::EmptyMask.into());
        }
        let (mut out, _) = self.forward_sets(&[valid])?;
        Ok(out.pop().expect("one set"))
    }

    /// Stacks every set's points into one matrix for the shared MLP, then
    /// pools each set separately. Every set must be non-empty.
    fn forward_sets(&self, sets: &[Vec<[f64; 3]>]) -> Result<(Vec<Vec<f64>>, EncoderCache), NnError> {
        let total: usize = sets.iter().map(|s| s.len()).sum();
        let mut data = Vec::with_capacity(total * 3);
        let mut segments = Vec::with_capacity(sets.len());
        for s in sets {
            if s.is_empty() {
                return Err(NnError::EmptyMask);
            }
            segments.push((data.len() / 3, s.len()));
            for p in s {
                data.extend_from_slice(p);
            }
        }
        let x = Tensor2::from_vec(total, 3, data)?;
        let h1_pre = linear_forward(&x, &self.w1.value, &self.b1.value)?;
        let h1 = relu(&h1_pre);
        let h2_pre = linear_forward(&h1, &self.w2.value, &self.b2.value)?;
        let h2 = relu(&h2_pre);
        let h3 = linear_forward(&h2, &self.w3.value, &self.b3.value)?;

        let mut outputs = Vec::with_capacity(sets.len());
        let mut pools = Vec::with_capacity(sets.len());
        for &(start, len) in &segments {
            let rows: Vec<usize> = (start..start + len).collect();
            let seg = h3.select_rows(&rows);
            let all = vec![true; len];
            let mp = masked_max_pool(&seg, &all)?;
            let avg = masked_avg_pool(&seg, &all)?;
            let mut z = avg;
            z.extend_from_slice(&mp.values);
            let v = matvec(&self.w4.value, &z);
            let s: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
            let a: Vec<f64> = matvec(&self.w5.value, &s).into_iter().map(sigmoid_scalar).collect();
            // a > 0, so scaling before or after the max gives the same value.
            outputs.push(a.iter().zip(&mp.values).map(|(ai, m)| ai * m).collect());
            pools.push(PoolCache {
                argmax: mp.argmax.iter().map(|r| r + start).collect(),
                max: mp.values,
                z,
                v,
                s,
                a,
            });
        }
        Ok((
            outputs,
            EncoderCache {
                x,
                h1_pre,
                h1,
                h2_pre,
                h2,
                segments,
                pools,
            },
        ))
    }

    fn backward_sets(&mut self, cache: &EncoderCache, d_out: &[Vec<f64>]) -> Result<(), NnError> {
        let rows = cache.x.rows();
        let r = self.w4.value.rows();
        let mut dh3 = Tensor2::zeros(rows, FEATURE_WIDTH);
        let mut dw4 = Tensor2::zeros(r, 2 * FEATURE_WIDTH);
        let mut dw5 = Tensor2::zeros(FEATURE_WIDTH, r);
        for ((pc, &(start, len)), df) in cache.pools.iter().zip(&cache.segments).zip(d_out) {
            let mut d_max: Vec<f64> = df.iter().zip(&pc.a).map(|(g, a)| g * a).collect();
            let du: Vec<f64> = (0..FEATURE_WIDTH)
                .map(|j| df[j] * pc.max[j] * pc.a[j] * (1.0 - pc.a[j]))
                .collect();
            let w5 = &self.w5.value;
            let mut ds = vec![0.0; r];
            for j in 0..FEATURE_WIDTH {
                let row = dw5.row_mut(j);
                for k in 0..r {
                    row[k] += du[j] * pc.s[k];
                    ds[k] += w5.get(j, k) * du[j];
                }
            }
            let dv: Vec<f64> = ds
                .iter()
                .zip(&pc.v)
                .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                .collect();
            let w4 = &self.w4.value;
            let mut dz = vec![0.0; 2 * FEATURE_WIDTH];
            for k in 0..r {
                if dv[k] == 0.0 {
                    continue;
                }
                let grow = dw4.row_mut(k);
                for (j, g) in grow.iter_mut().enumerate() {
                    *g += dv[k] * pc.z[j];
                }
                for (j, d) in dz.iter_mut().enumerate() {
                    *d += w4.get(k, j) * dv[k];
                }
            }
            for j in 0..FEATURE_WIDTH {
                d_max[j] += dz[FEATURE_WIDTH + j];
            }
            let inv = 1.0 / len as f64;
            for row in start..start + len {
                let out = dh3.row_mut(row);
                for j in 0..FEATURE_WIDTH {
                    out[j] += dz[j] * inv;
                }
            }
            for j in 0..FEATURE_WIDTH {
                let v = dh3.get(pc.argmax[j], j) + d_max[j];
                dh3.set(pc.argmax[j], j, v);
            }
        }
        self.w4.accumulate(&dw4);
        self.w5.accumulate(&dw5);

        let g3 = linear_backward(&cache.h2, &self.w3.value, &dh3)?;
        self.w3.accumulate(&g3.w);
        self.b3.accumulate(&g3.b);
        let g2 = linear_backward(&cache.h1, &self.w2.value, &relu_backward(&cache.h2_pre, &g3.x)?)?;
        self.w2.accumulate(&g2.w);
        self.b2.accumulate(&g2.b);
        let g1 = linear_backward(&cache.x, &self.w1.value, &relu_backward(&cache.h1_pre, &g2.x)?)?;
        self.w1.accumulate(&g1.w);
        self.b1.accumulate(&g1.b);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Cross-attention
// ---------------------------------------------------------------------------

/// Single-head attention over the token reshape of two global features.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention {
    pub w_q: ParamTensor,
    pub w_k: ParamTensor,
    pub w_v: ParamTensor,
    tokens: usize,
}

struct AttentionCache {
    xq: Tensor2,
    xkv: Tensor2,
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    p: Tensor2,
}

impl CrossAttention {
    pub fn new<R: Rng + ?Sized>(prefix: &str, tokens: usize, rng: &mut R) -> Self {
        let d = FEATURE_WIDTH / tokens;
        Self {
            w_q: ParamTensor::uniform_fan_in(format!("{prefix}.w_q"), d, d, rng),
            w_k: ParamTensor::uniform_fan_in(format!("{prefix}.w_k"), d, d, rng),
            w_v: ParamTensor::uniform_fan_in(format!("{prefix}.w_v"), d, d, rng),
            tokens,
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn token_width(&self) -> usize {
        FEATURE_WIDTH / self.tokens
    }

    /// `softmax(Q Kᵀ / √d) V` with queries from `f_query`, keys and values from `f_kv`.
    pub fn forward(&self, f_query: &[f64], f_kv: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(f_query, f_kv)?.0)
    }

    fn forward_cached(&self, f_query: &[f64], f_kv: &[f64]) -> Result<(Vec<f64>, AttentionCache), NnError> {
        let d = self.token_width();
        let xq = Tensor2::from_vec(self.tokens, d, f_query.to_vec())?;
        let xkv = Tensor2::from_vec(self.tokens, d, f_kv.to_vec())?;
        let q = xq.matmul_nt(&self.w_q.value)?;
        let k = xkv.matmul_nt(&self.w_k.value)?;
        let v = xkv.matmul_nt(&self.w_v.value)?;
        let p = softmax_rows(&q.matmul_nt(&k)?.scale(1.0 / (d as f64).sqrt()));
        let out = p.matmul(&v)?.into_vec();
        Ok((out, AttentionCache { xq, xkv, q, k, v, p }))
    }

    /// Returns gradients for `(f_query, f_kv)` and accumulates weight gradients.
    fn backward(&mut self, c: &AttentionCache, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let d = self.token_width();
        let d_o = Tensor2::from_vec(self.tokens, d, d_out.to_vec())?;
        let d_p = d_o.matmul_nt(&c.v)?;
        let d_v = c.p.matmul_tn(&d_o)?;
        let d_s = softmax_rows_backward(&c.p, &d_p)?.scale(1.0 / (d as f64).sqrt());
        let d_q = d_s.matmul(&c.k)?;
        let d_k = d_s.matmul_tn(&c.q)?;
        self.w_q.accumulate(&d_q.matmul_tn(&c.xq)?);
        self.w_k.accumulate(&d_k.matmul_tn(&c.xkv)?);
        self.w_v.accumulate(&d_v.matmul_tn(&c.xkv)?);
        let d_xq = d_q.matmul(&self.w_q.value)?.into_vec();
        let d_xkv = d_k
            .matmul(&self.w_k.value)?
            .add(&d_v.matmul(&self.w_v.value)?)?
            .into_vec();
        Ok((d_xq, d_xkv))
    }
}

/// `f_L + f_R + A_LR + A_RL`.
pub fn fuse(f_l: &[f64], f_r: &[f64], a_lr: &[f64], a_rl: &[f64]) -> Vec<f64> {
    (0..f_l.len())
        .map(|i| f_l[i] + f_r[i] + a_lr[i] + a_rl[i])
        .collect()
}

// ---------------------------------------------------------------------------
// Head
// ---------------------------------------------------------------------------

/// `ŷ = W_p · dropout(relu(W_h f + b_h)) + b_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w_h: ParamTensor,
    pub b_h: ParamTensor,
    pub w_p: ParamTensor,
    pub b_p: ParamTensor,
    pub dropout: f64,
}

struct HeadCache {
    f: Tensor2,
    pre: Tensor2,
    hidden: Tensor2,
    scales: Option<Tensor2>,
    dropped: Tensor2,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(hidden: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            w_h: ParamTensor::uniform_fan_in("head.w_h", hidden, FEATURE_WIDTH, rng),
            b_h: bias("head.b_h".into(), hidden),
            w_p: ParamTensor::uniform_fan_in("head.w_p", 3, hidden, rng),
            b_p: bias("head.b_p".into(), 3),
            dropout,
        }
    }

    /// Rows of `f` are fused features; rows of the result are 3-vectors.
    pub fn forward<R: Rng + ?Sized>(&self, f: &Tensor2, mode: Mode, rng: &mut R) -> Result<Tensor2, NnError> {
        Ok(self.forward_cached(f.clone(), mode, rng)?.0)
    }

    fn forward_cached<R: Rng + ?Sized>(
        &self,
        f: Tensor2,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor2, HeadCache), NnError> {
        let pre = linear_forward(&f, &self.w_h.value, &self.b_h.value)?;
        let hidden = relu(&pre);
        let (dropped, scales) = dropout(&hidden, self.dropout, mode, rng);
        let y = linear_forward(&dropped, &self.w_p.value, &self.b_p.value)?;
        Ok((
            y,
            HeadCache {
                f,
                pre,
                hidden,
                scales,
                dropped,
            },
        ))
    }

    fn backward(&mut self, c: &HeadCache, d_y: &Tensor2) -> Result<Tensor2, NnError> {
        let gp = linear_backward(&c.dropped, &self.w_p.value, d_y)?;
        self.w_p.accumulate(&gp.w);
        self.b_p.accumulate(&gp.b);
        let d_hidden = dropout_backward(c.scales.as_ref(), &gp.x)?;
        debug_assert_eq!(d_hidden.shape(), c.hidden.shape());
        let gh = linear_backward(&c.f, &self.w_h.value, &relu_backward(&c.pre, &d_hidden)?)?;
        self.w_h.accumulate(&gh.w);
        self.b_h.accumulate(&gh.b);
        Ok(gh.x)
    }
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub lidar_encoder: Option<Encoder>,
    pub radar_encoder: Option<Encoder>,
    pub attn_lr: Option<CrossAttention>,
    pub attn_rl: Option<CrossAttention>,
    pub head: Head,
}

/// Everything the backward pass needs from one batched forward.
pub struct ForwardCache {
    lidar: Option<EncoderCache>,
    radar: Option<EncoderCache>,
    attn_lr: Vec<AttentionCache>,
    attn_rl: Vec<AttentionCache>,
    head: HeadCache,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    config: ModelConfig,
    normalization: Normalization,
}

fn valid_inputs(p: &PaddedPoints, norm: &Normalization) -> Vec<[f64; 3]> {
    p.points
        .iter()
        .zip(&p.mask)
        .filter(|(_, &m)| m)
        .map(|(q, _)| norm.to_input(*q))
        .collect()
}

impl FusionModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fused = config.variant == Variant::Fused;
        let lidar_encoder = config
            .variant
            .uses_lidar()
            .then(|| Encoder::new("enc_lidar", config.reduction, &mut rng));
        let radar_encoder = config
            .variant
            .uses_radar()
            .then(|| Encoder::new("enc_radar", config.reduction, &mut rng));
        let attn_lr = fused.then(|| CrossAttention::new("attn_lr", config.tokens, &mut rng));
        let attn_rl = fused.then(|| CrossAttention::new("attn_rl", config.tokens, &mut rng));
        let head = Head::new(config.head_hidden, config.dropout, &mut rng);
        Ok(Self {
            config,
            normalization: Normalization::default(),
            lidar_encoder,
            radar_encoder,
            attn_lr,
            attn_rl,
            head,
        })
    }

    /// Prediction in metres for one sample, dropout off.
    pub fn predict(&self, sample: &AlignedSample) -> Result<Point3, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(sample, Mode::Eval, &mut rng)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        sample: &AlignedSample,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Point3, ModelError> {
        let (ys, _) = self.forward_batch(&[sample], mode, rng)?;
        Ok(Point3::from_array(ys[0]))
    }

    /// Batched forward. Returns predictions in metres and the backward cache.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        samples: &[&AlignedSample],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<[f64; 3]>, ForwardCache), ModelError> {
        let norm = &self.normalization;
        let encode = |enc: &Option<Encoder>, name: &'static str, pick: fn(&AlignedSample) -> &PaddedPoints| {
            enc.as_ref()
                .map(|e| {
                    let sets: Vec<Vec<[f64; 3]>> =
                        samples.iter().map(|s| valid_inputs(pick(s), norm)).collect();
                    if sets.iter().any(|s| s.is_empty()) {
                        return Err(ModelError::MissingModality(name));
                    }
                    Ok(e.forward_sets(&sets)?)
                })
                .transpose()
        };
        let lidar = encode(&self.lidar_encoder, "lidar", |s| &s.lidar)?;
        let radar = encode(&self.radar_encoder, "radar", |s| &s.radar)?;

        let b = samples.len();
        let mut fused = Vec::with_capacity(b * FEATURE_WIDTH);
        let mut attn_lr = Vec::new();
        let mut attn_rl = Vec::new();
        match (&lidar, &radar) {
            (Some((fl, _)), Some((fr, _))) => {
                let lr = self.attn_lr.as_ref().expect("fused model has attention");
                let rl = self.attn_rl.as_ref().expect("fused model has attention");
                for i in 0..b {
                    let (a_lr, c_lr) = lr.forward_cached(&fl[i], &fr[i])?;
                    let (a_rl, c_rl) = rl.forward_cached(&fr[i], &fl[i])?;
                    fused.extend(fuse(&fl[i], &fr[i], &a_lr, &a_rl));
                    attn_lr.push(c_lr);
                    attn_rl.push(c_rl);
                }
            }
            (Some((f, _)), None) | (None, Some((f, _))) => {
                for fi in f {
                    fused.extend_from_slice(fi);
                }
            }
            (None, None) => unreachable!("every variant has an encoder"),
        }
        let f = Tensor2::from_vec(b, FEATURE_WIDTH, fused)?;
        let (y, head) = self.head.forward_cached(f, mode, rng)?;
        let ys = (0..b).map(|i| norm.to_output(y.row(i))).collect();
        Ok((
            ys,
            ForwardCache {
                lidar: lidar.map(|(_, c)| c),
                radar: radar.map(|(_, c)| c),
                attn_lr,
                attn_rl,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients given `dL/dŷ` (metres) per sample.
    pub fn backward(&mut self, cache: &ForwardCache, d_y: &[[f64; 3]]) -> Result<(), ModelError> {
        let b = d_y.len();
        let s = self.normalization.scale;
        let d_out = Tensor2::from_vec(b, 3, d_y.iter().flat_map(|g| g.map(|v| v * s)).collect())?;
        let d_f = self.head.backward(&cache.head, &d_out)?;
        let rows = |t: &Tensor2| (0..b).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
        match (cache.lidar.as_ref(), cache.radar.as_ref()) {
            (Some(cl), Some(cr)) => {
                let mut d_l = rows(&d_f);
                let mut d_r = d_l.clone();
                let lr = self.attn_lr.as_mut().expect("fused model has attention");
                for i in 0..b {
                    let (dq, dkv) = lr.backward(&cache.attn_lr[i], d_f.row(i))?;
                    add_into(&mut d_l[i], &dq);
                    add_into(&mut d_r[i], &dkv);
                }
                let rl = self.attn_rl.as_mut().expect("fused model has attention");
                for i in 0..b {
                    let (dq, dkv) = rl.backward(&cache.attn_rl[i], d_f.row(i))?;
                    add_into(&mut d_r[i], &dq);
                    add_into(&mut d_l[i], &dkv);
                }
                self.lidar_encoder.as_mut().expect("lidar").backward_sets(cl, &d_l)?;
                self.radar_encoder.as_mut().expect("radar").backward_sets(cr, &d_r)?;
            }
            (Some(c), None) => self.lidar_encoder.as_mut().expect("lidar").backward_sets(c, &rows(&d_f))?,
            (None, Some(c)) => self.radar_encoder.as_mut().expect("radar").backward_sets(c, &rows(&d_f))?,
            (None, None) => unreachable!("every variant has an encoder"),
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = ModelHeader {
            kind: "fusion_model".into(),
            config: self.config,
            normalization: self.normalization,
        };
        Checkpoint::capture(self, serde_json::to_value(header).expect("serializable"))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let h: ModelHeader = serde_json::from_value(ck.header.clone())
            .map_err(|e| NnError::Checkpoint(format!("model header: {e}")))?;
        if h.kind != "fusion_model" {
            return Err(NnError::Checkpoint(format!("expected fusion_model, got {}", h.kind)).into());
        }
        let mut m = Self::new(h.config)?;
        ck.restore(&mut m)?;
        m.normalization = h.normalization;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

impl Parameterized for FusionModel {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v: Vec<&ParamTensor> = Vec::new();
        for e in [&self.lidar_encoder, &self.radar_encoder].into_iter().flatten() {
            v.extend(e.tensors());
        }
        for a in [&self.attn_lr, &self.attn_rl].into_iter().flatten() {
            v.extend([&a.w_q, &a.w_k, &a.w_v]);
        }
        v.extend([&self.head.w_h, &self.head.b_h, &self.head.w_p, &self.head.b_p]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v: Vec<&mut ParamTensor> = Vec::new();
        for e in [&mut self.lidar_encoder, &mut self.radar_encoder].into_iter().flatten() {
            v.extend(e.tensors_mut());
        }
        for a in [&mut self.attn_lr, &mut self.attn_rl].into_iter().flatten() {
            v.extend([&mut a.w_q, &mut a.w_k, &mut a.w_v]);
        }
        let h = &mut self.head;
        v.extend([&mut h.w_h, &mut h.b_h, &mut h.w_p, &mut h.b_p]);
        v
    }
}
