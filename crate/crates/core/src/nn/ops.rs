//! Differentiable layer primitives. Each forward has a matching backward that
//! takes the upstream gradient and whatever the forward needs to keep.

use rand::Rng;

use super::{NnError, Tensor2};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// `y = x·Wᵀ + b`, with `x: n×d_in`, `W: d_out×d_in`, `b: 1×d_out`.
pub fn linear_forward(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Result<Tensor2, NnError> {
    if b.shape() != (1, w.rows()) {
        return Err(NnError::ShapeMismatch {
            op: "linear_forward",
            expected: format!("bias 1x{}", w.rows()),
            got: format!("{:?}", b.shape()),
        });
    }
    let mut y = x.matmul_nt(w)?;
    let bias = b.as_slice();
    for r in 0..y.rows() {
        for (v, bb) in y.row_mut(r).iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Ok(y)
}

pub struct LinearGrads {
    pub x: Tensor2,
    pub w: Tensor2,
    pub b: Tensor2,
}

pub fn linear_backward(x: &Tensor2, w: &Tensor2, grad_out: &Tensor2) -> Result<LinearGrads, NnError> {
    if grad_out.shape() != (x.rows(), w.rows()) {
        return Err(NnError::ShapeMismatch {
            op: "linear_backward",
            expected: format!("grad {}x{}", x.rows(), w.rows()),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let gx = grad_out.matmul(w)?;
    let gw = grad_out.matmul_tn(x)?;
    let mut gb = Tensor2::zeros(1, w.rows());
    for r in 0..grad_out.rows() {
        for (acc, g) in gb.as_mut_slice().iter_mut().zip(grad_out.row(r)) {
            *acc += g;
        }
    }
    Ok(LinearGrads { x: gx, w: gw, b: gb })
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient through ReLU given the forward *input*.
pub fn relu_backward(input: &Tensor2, grad: &Tensor2) -> Result<Tensor2, NnError> {
    input.check_same_shape("relu_backward", grad)?;
    let mut out = grad.clone();
    for (g, &x) in out.as_mut_slice().iter_mut().zip(input.as_slice()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    x.map(sigmoid_scalar)
}

/// Gradient through sigmoid given the forward *output*.
pub fn sigmoid_backward(output: &Tensor2, grad: &Tensor2) -> Result<Tensor2, NnError> {
    output.check_same_shape("sigmoid_backward", grad)?;
    let mut out = grad.clone();
    for (g, &y) in out.as_mut_slice().iter_mut().zip(output.as_slice()) {
        *g *= y * (1.0 - y);
    }
    Ok(out)
}

pub fn tanh(x: &Tensor2) -> Tensor2 {
    x.map(f64::tanh)
}

/// Gradient through tanh given the forward *output*.
pub fn tanh_backward(output: &Tensor2, grad: &Tensor2) -> Result<Tensor2, NnError> {
    output.check_same_shape("tanh_backward", grad)?;
    let mut out = grad.clone();
    for (g, &y) in out.as_mut_slice().iter_mut().zip(output.as_slice()) {
        *g *= 1.0 - y * y;
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient through a row-wise softmax given its *output*.
pub fn softmax_rows_backward(output: &Tensor2, grad: &Tensor2) -> Result<Tensor2, NnError> {
    output.check_same_shape("softmax_rows_backward", grad)?;
    let mut out = Tensor2::zeros(output.rows(), output.cols());
    for r in 0..output.rows() {
        let y = output.row(r);
        let g = grad.row(r);
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &yy), &gg) in out.row_mut(r).iter_mut().zip(y).zip(g) {
            *o = yy * (gg - dot);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Masked pooling
// ---------------------------------------------------------------------------

fn check_mask(op: &'static str, features: &Tensor2, mask: &[bool]) -> Result<(), NnError> {
    if mask.len() != features.rows() {
        return Err(NnError::ShapeMismatch {
            op,
            expected: format!("mask of {}", features.rows()),
            got: format!("{}", mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(NnError::EmptyMask);
    }
    Ok(())
}

/// Column-wise maximum over valid rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxPool {
    pub values: Vec<f64>,
    /// Winning row per column; ties go to the lowest row index.
    pub argmax: Vec<usize>,
}

pub fn masked_max_pool(features: &Tensor2, mask: &[bool]) -> Result<MaxPool, NnError> {
    check_mask("masked_max_pool", features, mask)?;
    let d = features.cols();
    let mut values = vec![f64::NEG_INFINITY; d];
    let mut argmax = vec![usize::MAX; d];
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (c, &v) in features.row(r).iter().enumerate() {
            if argmax[c] == usize::MAX || v > values[c] {
                values[c] = v;
                argmax[c] = r;
            }
        }
    }
    Ok(MaxPool { values, argmax })
}

pub fn masked_max_pool_backward(grad: &[f64], argmax: &[usize], rows: usize) -> Tensor2 {
    let mut out = Tensor2::zeros(rows, grad.len());
    for (c, (&g, &r)) in grad.iter().zip(argmax).enumerate() {
        out.set(r, c, g);
    }
    out
}

/// Column-wise mean over valid rows.
///
/// Each column is summed in ascending value order so the result does not
/// depend on the order of the rows.
pub fn masked_avg_pool(features: &Tensor2, mask: &[bool]) -> Result<Vec<f64>, NnError> {
    check_mask("masked_avg_pool", features, mask)?;
    let valid: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
    let count = valid.len() as f64;
    let mut column = Vec::with_capacity(valid.len());
    let mut out = Vec::with_capacity(features.cols());
    for c in 0..features.cols() {
        column.clear();
        column.extend(valid.iter().map(|&r| features.get(r, c)));
        column.sort_by(f64::total_cmp);
        out.push(column.iter().sum::<f64>() / count);
    }
    Ok(out)
}

pub fn masked_avg_pool_backward(grad: &[f64], mask: &[bool]) -> Tensor2 {
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let mut out = Tensor2::zeros(mask.len(), grad.len());
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, g) in out.row_mut(r).iter_mut().zip(grad) {
            *o = g / count;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. Returns the output and the per-element scale that the
/// backward pass multiplies by (`None` when the layer is an identity).
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor2,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> (Tensor2, Option<Tensor2>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if mode == Mode::Eval || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let scales = Tensor2::from_vec(
        x.rows(),
        x.cols(),
        (0..x.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
    .expect("shape preserved");
    let out = x.hadamard(&scales).expect("shape preserved");
    (out, Some(scales))
}

pub fn dropout_backward(scales: Option<&Tensor2>, grad: &Tensor2) -> Result<Tensor2, NnError> {
    match scales {
        None => Ok(grad.clone()),
        Some(s) => grad.hadamard(s),
    }
}
