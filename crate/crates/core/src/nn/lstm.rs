//! LSTM cell and stacked sequence runner with backpropagation through time.
//!
//! Gate layout inside the fused `4H` pre-activation is `[i, f, g, o]`.

use rand::Rng;

use super::ops::{sigmoid_scalar, linear_forward};
use super::{NnError, ParamTensor, Parameterized, Tensor2};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ih: ParamTensor,
    pub w_hh: ParamTensor,
    pub bias: ParamTensor,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = (1.0 / hidden as f64).sqrt();
        let mut uniform = |name: &str, rows, cols| {
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            ParamTensor::new(
                format!("{prefix}.{name}"),
                Tensor2::from_vec(rows, cols, data).expect("sized"),
            )
        };
        Self {
            w_ih: uniform("w_ih", 4 * hidden, input),
            w_hh: uniform("w_hh", 4 * hidden, hidden),
            bias: ParamTensor::zeros(format!("{prefix}.bias"), 1, 4 * hidden),
        }
    }

    pub fn zeros(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: ParamTensor::zeros(format!("{prefix}.w_ih"), 4 * hidden, input),
            w_hh: ParamTensor::zeros(format!("{prefix}.w_hh"), 4 * hidden, hidden),
            bias: ParamTensor::zeros(format!("{prefix}.bias"), 1, 4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.value.cols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.value.cols()
    }
}

/// Everything one cell step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    x: Tensor2,
    h_prev: Tensor2,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One step: returns `(h_t, c_t)` and the cache.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    layer: &LstmLayer,
) -> Result<(Vec<f64>, Vec<f64>, CellCache), NnError> {
    let hidden = layer.hidden();
    if x.len() != layer.input() || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(NnError::ShapeMismatch {
            op: "lstm_cell",
            expected: format!("x {} / state {}", layer.input(), hidden),
            got: format!("x {} / h {} / c {}", x.len(), h_prev.len(), c_prev.len()),
        });
    }
    let xt = Tensor2::row_vector(x.to_vec());
    let ht = Tensor2::row_vector(h_prev.to_vec());
    let mut pre = linear_forward(&xt, &layer.w_ih.value, &layer.bias.value)?;
    pre.add_assign(&ht.matmul_nt(&layer.w_hh.value)?)?;
    let pre = pre.as_slice();

    let gate = |k: usize, f: fn(f64) -> f64| -> Vec<f64> {
        pre[k * hidden..(k + 1) * hidden].iter().map(|&v| f(v)).collect()
    };
    let i = gate(0, sigmoid_scalar);
    let f = gate(1, sigmoid_scalar);
    let g = gate(2, f64::tanh);
    let o = gate(3, sigmoid_scalar);

    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    let cache = CellCache {
        x: xt,
        h_prev: ht,
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Backward through one step. Accumulates parameter gradients into `layer` and
/// returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward(
    cache: &CellCache,
    dh: &[f64],
    dc: &[f64],
    layer: &mut LstmLayer,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), NnError> {
    let hidden = layer.hidden();
    let mut dpre = vec![0.0; 4 * hidden];
    let mut dc_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        let d_o = dh[k] * tc;
        let d_i = dct * g;
        let d_g = dct * i;
        let d_f = dct * cache.c_prev[k];
        dc_prev[k] = dct * f;
        dpre[k] = d_i * i * (1.0 - i);
        dpre[hidden + k] = d_f * f * (1.0 - f);
        dpre[2 * hidden + k] = d_g * (1.0 - g * g);
        dpre[3 * hidden + k] = d_o * o * (1.0 - o);
    }
    let dpre = Tensor2::row_vector(dpre);
    layer.w_ih.accumulate(&dpre.matmul_tn(&cache.x)?);
    layer.w_hh.accumulate(&dpre.matmul_tn(&cache.h_prev)?);
    layer.bias.accumulate(&dpre);
    let dx = dpre.matmul(&layer.w_ih.value)?.into_vec();
    let dh_prev = dpre.matmul(&layer.w_hh.value)?.into_vec();
    Ok((dx, dh_prev, dc_prev))
}

/// Stacked LSTM with zero initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

/// Per-layer, per-step caches from [`Lstm::forward`].
pub struct LstmTrace {
    steps: Vec<Vec<CellCache>>,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                LstmLayer::new(&format!("lstm.{l}"), inp, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    /// Runs the sequence and returns the top layer's last hidden state.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmTrace), NnError> {
        let hidden = self.hidden();
        let mut inputs: Vec<Vec<f64>> = xs.to_vec();
        let mut steps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut h = vec![0.0; hidden];
            let mut c = vec![0.0; hidden];
            let mut caches = Vec::with_capacity(inputs.len());
            let mut outputs = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let (hn, cn, cache) = lstm_cell(x, &h, &c, layer)?;
                outputs.push(hn.clone());
                caches.push(cache);
                h = hn;
                c = cn;
            }
            steps.push(caches);
            inputs = outputs;
        }
        let last = inputs.pop().unwrap_or_else(|| vec![0.0; hidden]);
        Ok((last, LstmTrace { steps }))
    }

    /// Backpropagates a gradient on the final top-layer hidden state.
    pub fn backward(&mut self, trace: &LstmTrace, d_last: &[f64]) -> Result<(), NnError> {
        let hidden = self.hidden();
        let len = trace.steps.first().map_or(0, |s| s.len());
        // Gradient arriving at each step's hidden output from the layer above.
        let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; hidden]; len];
        if len > 0 {
            d_out[len - 1] = d_last.to_vec();
        }
        for (layer, caches) in self.layers.iter_mut().zip(&trace.steps).rev() {
            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            let mut d_in = vec![Vec::new(); len];
            for t in (0..len).rev() {
                let dh: Vec<f64> = d_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = lstm_cell_backward(&caches[t], &dh, &dc_next, layer)?;
                d_in[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            d_out = d_in;
        }
        Ok(())
    }
}

impl Parameterized for Lstm {
    fn params(&self) -> Vec<&ParamTensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w_ih, &l.w_hh, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w_ih, &mut l.w_hh, &mut l.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_zero_state_give_zero_output() {
        let layer = LstmLayer::zeros("l", 3, 2);
        let (h, c, _) = lstm_cell(&[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2], &layer).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_params_halve_the_carried_cell() {
        let layer = LstmLayer::zeros("l", 1, 2);
        let c_prev = [0.8, -3.0];
        let (h, c, _) = lstm_cell(&[4.0], &[0.1, 0.2], &c_prev, &layer).unwrap();
        for k in 0..2 {
            assert_eq!(c[k], 0.5 * c_prev[k]);
            assert_eq!(h[k], 0.5 * (0.5 * c_prev[k]).tanh());
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let layer = LstmLayer::zeros("l", 3, 2);
        assert!(lstm_cell(&[1.0], &[0.0; 2], &[0.0; 2], &layer).is_err());
    }

    fn seq_loss(lstm: &Lstm, xs: &[Vec<f64>], proj: &[f64]) -> f64 {
        let (h, _) = lstm.forward(xs).unwrap();
        h.iter().zip(proj).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for layers in [1, 2] {
            let mut lstm = Lstm::new(3, 2, layers, &mut rng);
            for p in lstm.params_mut() {
                for v in p.value.as_mut_slice() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let proj = [0.7, -1.3];
            let (_, trace) = lstm.forward(&xs).unwrap();
            lstm.backward(&trace, &proj).unwrap();
            let report = grad_check(
                &mut lstm,
                |m| seq_loss(m, &xs, &proj),
                &GradCheckOptions {
                    tol: 1e-5,
                    ..GradCheckOptions::default()
                },
            );
            assert!(report.passed(), "{layers} layers: {report:?}");
        }
    }

    #[test]
    fn single_step_sequence_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::new(9, 4, 1, &mut rng);
        let (h, _) = lstm.forward(&[vec![0.1; 9]]).unwrap();
        assert_eq!(h.len(), 4);
    }
}
