use super::Tensor;
use crate::error::{GlfcError, Result};
use crate::real::Real;

pub const NORM_EPS: f64 = 1e-5;

/// Normalizes contiguous groups of `group` values; `affine_idx(element)`
/// picks the gamma/beta slot for each element.
fn normalize<T: Real>(
    name: &'static str,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    group: usize,
    affine_idx: impl Fn(usize) -> usize + Send + Sync + 'static,
) -> Tensor<T> {
    let xd = x.data();
    let groups = xd.len() / group;
    let eps = T::from_real(NORM_EPS);
    let inv_n = T::one() / T::from_real(group as f64);
    let mut xhat = Vec::with_capacity(xd.len());
    let mut rstd = Vec::with_capacity(groups);
    for chunk in xd.chunks(group) {
        let mean = chunk.iter().copied().sum::<T>() * inv_n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        xhat.extend(chunk.iter().map(|&v| (v - mean) * r));
    }
    let (gd, bd) = (gamma.data(), beta.data());
    let out: Vec<T> = xhat
        .iter()
        .enumerate()
        .map(|(i, &h)| h * gd[affine_idx(i)] + bd[affine_idx(i)])
        .collect();
    let n_affine = gd.len();
    Tensor::from_op(
        name,
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |a| {
            let gd = a.inputs[1].data();
            let mut ggamma = vec![T::zero(); n_affine];
            let mut gbeta = vec![T::zero(); n_affine];
            for (i, (&g, &h)) in a.grad.iter().zip(&xhat).enumerate() {
                ggamma[affine_idx(i)] += g * h;
                gbeta[affine_idx(i)] += g;
            }
            let gx = a.needs[0].then(|| {
                let mut gx = Vec::with_capacity(xhat.len());
                for (gi, r) in rstd.iter().enumerate() {
                    let lo = gi * group;
                    let dh: Vec<T> = (lo..lo + group)
                        .map(|i| a.grad[i] * gd[affine_idx(i)])
                        .collect();
                    let hs = &xhat[lo..lo + group];
                    let mean_dh = dh.iter().copied().sum::<T>() * inv_n;
                    let mean_dhh = dh.iter().zip(hs).map(|(&d, &h)| d * h).sum::<T>() * inv_n;
                    gx.extend(
                        dh.iter()
                            .zip(hs)
                            .map(|(&d, &h)| *r * (d - mean_dh - h * mean_dhh)),
                    );
                }
                gx
            });
            vec![gx, a.needs[1].then_some(ggamma), a.needs[2].then_some(gbeta)]
        }),
    )
}

impl<T: Real> Tensor<T> {
    /// Per-(sample, channel) normalization of `[B,C,H,W]` with a per-channel
    /// affine transform.
    pub fn instance_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        let &[_, c, h, w] = self.shape() else {
            return Err(GlfcError::shape(format!(
                "instance_norm needs [B,C,H,W], got {:?}",
                self.shape()
            )));
        };
        if h * w < 2 {
            return Err(GlfcError::shape("instance_norm needs at least 2 pixels per plane"));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(GlfcError::shape(format!(
                "instance_norm affine params must be [{c}], got {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let hw = h * w;
        Ok(normalize("instance_norm", self, gamma, beta, hw, move |i| (i / hw) % c))
    }

    /// Normalization over the last axis with per-feature affine transform.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
        let e = *self.shape().last().expect("rank >= 1");
        if e < 2 {
            return Err(GlfcError::shape("layer_norm needs a last axis of at least 2"));
        }
        if gamma.shape() != [e] || beta.shape() != [e] {
            return Err(GlfcError::shape(format!(
                "layer_norm affine params must be [{e}], got {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        Ok(normalize("layer_norm", self, gamma, beta, e, move |i| i % e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-2.0..3.0)).collect()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 3], 7.0);
        let y = x
            .instance_norm(&Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]))
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_moments() {
        let x = Tensor::<f64>::new(&[2, 3, 4, 5], rand_vec(120, 1)).unwrap();
        let y = x
            .instance_norm(&Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]))
            .unwrap();
        for plane in y.data().chunks(20) {
            let mean = plane.iter().sum::<f64>() / 20.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
        let shifted = x
            .instance_norm(&Tensor::full(&[3], 1.0), &Tensor::full(&[3], 5.0))
            .unwrap();
        let mean = shifted.data()[..20].iter().sum::<f64>() / 20.0;
        assert!((mean - 5.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_matches_two_pass_oracle() {
        let e = 7;
        let data = rand_vec(3 * e, 9);
        let gamma: Vec<f64> = rand_vec(e, 10);
        let beta: Vec<f64> = rand_vec(e, 11);
        let x = Tensor::new(&[3, e], data.clone()).unwrap();
        let y = x
            .layer_norm(
                &Tensor::new(&[e], gamma.clone()).unwrap(),
                &Tensor::new(&[e], beta.clone()).unwrap(),
            )
            .unwrap();
        for (row, out) in data.chunks(e).zip(y.data().chunks(e)) {
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
            for j in 0..e {
                let expect = (row[j] - mean) / (var + NORM_EPS).sqrt() * gamma[j] + beta[j];
                assert!((out[j] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn layer_norm_constant_token() {
        let x = Tensor::<f64>::full(&[2, 4], -3.0);
        let y = x
            .layer_norm(&Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]))
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_random_token_mean() {
        let x = Tensor::<f64>::new(&[5, 6], rand_vec(30, 3)).unwrap();
        let y = x
            .layer_norm(&Tensor::full(&[6], 1.0), &Tensor::zeros(&[6]))
            .unwrap();
        for tok in y.data().chunks(6) {
            assert!((tok.iter().sum::<f64>() / 6.0).abs() < 1e-6);
        }
    }
}
