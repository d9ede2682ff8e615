//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Parameterized;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check at most this many elements per tensor (seeded choice); `None` checks all.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-6,
            floor: 1e-6,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compares the gradients currently stored in `model`'s parameters against
/// central differences of `loss`. `loss` must be deterministic.
pub fn grad_check<M: Parameterized>(
    model: &mut M,
    mut loss: impl FnMut(&M) -> f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shapes: Vec<(String, usize)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.len()))
        .collect();
    let mut tensors = Vec::with_capacity(shapes.len());
    for (k, (name, len)) in shapes.into_iter().enumerate() {
        let indices: Vec<usize> = match opts.max_per_tensor {
            Some(m) if m < len => {
                let mut idx = sample(&mut rng, len, m).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        };
        let mut worst: f64 = 0.0;
        for &i in &indices {
            let (orig, analytic) = {
                let p = &model.params()[k];
                (p.value.as_slice()[i], p.grad.as_slice()[i])
            };
            model.params_mut()[k].value.as_mut_slice()[i] = orig + opts.h;
            let plus = loss(model);
            model.params_mut()[k].value.as_mut_slice()[i] = orig - opts.h;
            let minus = loss(model);
            model.params_mut()[k].value.as_mut_slice()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            worst = worst.max(rel_error(analytic, numeric, opts.floor));
        }
        tensors.push(TensorCheck {
            name,
            checked: indices.len(),
            max_rel_err: worst,
        });
    }
    GradCheckReport {
        tensors,
        tol: opts.tol,
    }
}
