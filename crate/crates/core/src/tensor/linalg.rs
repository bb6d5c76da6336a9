use super::Tensor;
use crate::error::{GlfcError, Result};
use crate::real::{matmul_into, Real};

impl<T: Real> Tensor<T> {
    /// `[m,k]·[k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(GlfcError::shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        };
        if k != k2 {
            return Err(GlfcError::shape(format!(
                "matmul inner dimensions differ: {:?} · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.data(), false, other.data(), false, &mut out, m, k, n, false);
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |a| {
                let (x, w) = (a.inputs[0].data(), a.inputs[1].data());
                let ga = a.needs[0].then(|| {
                    let mut g = vec![T::zero(); m * k];
                    matmul_into(a.grad, false, w, true, &mut g, m, n, k, false);
                    g
                });
                let gb = a.needs[1].then(|| {
                    let mut g = vec![T::zero(); k * n];
                    matmul_into(x, true, a.grad, false, &mut g, k, m, n, false);
                    g
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Affine map over the last axis: `x[..., in]·w[in, out] + b[out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let &[fan_in, fan_out] = weight.shape() else {
            return Err(GlfcError::shape(format!(
                "linear weight must be rank 2, got {:?}",
                weight.shape()
            )));
        };
        let last = *self.shape().last().expect("tensors have rank >= 1");
        if last != fan_in {
            return Err(GlfcError::shape(format!(
                "linear expects last axis {fan_in}, got {:?}",
                self.shape()
            )));
        }
        let rows = self.numel() / fan_in;
        let mut y = self.reshape(&[rows, fan_in])?.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add(b)?;
        }
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().expect("non-empty") = fan_out;
        y.reshape(&out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_x() {
        let i2 = Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(i2.matmul(&x).unwrap().data(), x.data());
    }

    #[test]
    fn hand_product() {
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn mismatch_is_shape_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(GlfcError::Shape(_))));
    }

    #[test]
    fn linear_keeps_leading_axes() {
        let x = Tensor::<f64>::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let w = Tensor::full(&[4, 5], 1.0);
        let b = Tensor::full(&[5], 0.5);
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5]);
        assert_eq!(y.data()[0], 0.0 + 1.0 + 2.0 + 3.0 + 0.5);
    }
}
