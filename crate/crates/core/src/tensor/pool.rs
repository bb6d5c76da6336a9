use super::Tensor;
use crate::error::{GlfcError, Result};
use crate::real::Real;

fn dims4(shape: &[usize], op: &str) -> Result<[usize; 4]> {
    match *shape {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(GlfcError::shape(format!("{op} needs [B,C,H,W], got {shape:?}"))),
    }
}

impl<T: Real> Tensor<T> {
    /// 2×2 max-pool with stride 2. Ties route the gradient to the first
    /// maximum in row-major order within the block.
    pub fn maxpool2(&self) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4(self.shape(), "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(GlfcError::shape(format!(
                "maxpool2 needs even spatial dims, got {h}×{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let n = self.numel();
        Ok(Tensor::from_op(
            "maxpool2",
            vec![b, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |a| {
                let mut g = vec![T::zero(); n];
                for (&src, &go) in argmax.iter().zip(a.grad) {
                    g[src] += go;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&self) -> Result<Tensor<T>> {
        let [b, c, h, w] = dims4(self.shape(), "upsample2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                let row = &x[base + (oy / 2) * w..base + (oy / 2 + 1) * w];
                for ox in 0..ow {
                    out.push(row[ox / 2]);
                }
            }
        }
        Ok(Tensor::from_op(
            "upsample2",
            vec![b, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |a| {
                let mut g = vec![T::zero(); b * c * h * w];
                for plane in 0..b * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            g[plane * h * w + (oy / 2) * w + ox / 2] +=
                                a.grad[(plane * oh + oy) * ow + ox];
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_block() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.maxpool2().unwrap();
        assert_eq!(y.data(), &[4.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        x.maxpool2().unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_odd() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(x.maxpool2(), Err(GlfcError::Shape(_))));
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::<f64>::param(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let y = x.upsample2().unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0; 4]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn pool_then_upsample_keeps_constant_image() {
        let x = Tensor::<f32>::full(&[2, 3, 4, 6], 0.25);
        let y = x.maxpool2().unwrap().upsample2().unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }
}
