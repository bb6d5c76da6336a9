//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for the norm-wise relative error, so that inputs whose
/// true gradient is exactly zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// At most this many coordinates per input are probed (all when `None`).
    pub max_coords: Option<usize>,
    /// Seed for the random output projection and coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    /// Norm-wise relative error of the full probed gradient.
    pub max_rel_err: f64,
    /// Index of the input contributing the largest absolute discrepancy.
    pub worst_input: usize,
    pub coords_checked: usize,
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(REL_ERR_FLOOR)
}

/// Compares the gradient of `sum(f(inputs) ⊙ r)` (fixed random `r`) against
/// central differences for every input.
pub fn check<F>(inputs: &[(Vec<usize>, Vec<f64>)], f: F, opts: GradCheckOptions) -> Result<GradCheckOutcome>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(s, v)| Tensor::param(s, v.clone()))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    let proj: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proj_t = Tensor::new(out.shape(), proj.clone())?;
    out.mul(&proj_t)?.sum().backward()?;

    let project = |o: &Tensor<f64>| -> f64 { o.data().iter().zip(&proj).map(|(a, b)| a * b).sum() };

    let mut worst = (0.0f64, 0usize);
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let mut checked = 0;
    for (k, (shape, values)) in inputs.iter().enumerate() {
        let analytic_full = leaves[k].grad().unwrap_or_else(|| vec![0.0; values.len()]);
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < values.len() => {
                let mut idx: Vec<usize> = (0..values.len()).collect();
                for i in 0..m {
                    let j = rng.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                idx.truncate(m);
                idx
            }
            _ => (0..values.len()).collect(),
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let eval = |delta: f64| -> Result<f64> {
                let consts: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, (s, v))| {
                        if j == k {
                            let mut v = v.clone();
                            v[c] += delta;
                            Tensor::new(s, v)
                        } else {
                            Tensor::new(s, v.clone())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(project(&f(&consts)?))
            };
            let plus = eval(opts.step)?;
            let minus = eval(-opts.step)?;
            numeric.push((plus - minus) / (2.0 * opts.step));
            analytic.push(analytic_full[c]);
        }
        checked += coords.len();
        debug_assert!(shape.iter().product::<usize>() == values.len());
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        if diff > worst.0 || diff.is_nan() {
            worst = (diff, k);
        }
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    Ok(GradCheckOutcome {
        max_rel_err: relative_error(&all_a, &all_n),
        worst_input: worst.1,
        coords_checked: checked,
    })
}
