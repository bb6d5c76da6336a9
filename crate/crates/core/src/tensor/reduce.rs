use super::Tensor;
use crate::error::{GlfcError, Result};
use crate::real::Real;

impl<T: Real> Tensor<T> {
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum::<T>();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |a| vec![Some(vec![a.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_real(self.numel() as f64);
        self.sum().scale((T::one() / n).as_f64())
    }

    /// Mean absolute difference. Subgradient at `a == b` is zero.
    pub fn l1_mean(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(GlfcError::shape(format!(
                "l1_mean needs equal shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let n = T::from_real(self.numel() as f64);
        let total = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum::<T>();
        Ok(Tensor::from_op(
            "l1_mean",
            vec![1],
            vec![total / n],
            vec![self.clone(), other.clone()],
            Box::new(move |a| {
                let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
                let scale = a.grad[0] / n;
                let ga: Vec<T> = x
                    .iter()
                    .zip(y)
                    .map(|(&p, &q)| {
                        let d = p - q;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gb = a.needs[1].then(|| ga.iter().map(|&g| -g).collect());
                vec![a.needs[0].then_some(ga), gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let a = Tensor::<f64>::new(&[2, 2], vec![0.1, -0.3, 0.7, 1.0]).unwrap();
        assert_eq!(a.l1_mean(&a).unwrap().item(), 0.0);
        let b = a.shift(0.5);
        assert!((b.l1_mean(&a).unwrap().item() - 0.5).abs() < 1e-15);
        assert!(a.l1_mean(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn l1_subgradient() {
        let p = Tensor::<f64>::param(&[3], vec![1.0, 0.0, -1.0]).unwrap();
        let y = Tensor::new(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        p.l1_mean(&y).unwrap().backward().unwrap();
        let g = p.grad().unwrap();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g[1], 0.0);
        assert!((g[2] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }
}
