use super::{numel, Tensor};
use crate::error::{GlfcError, Result};
use crate::real::Real;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output element, the flat index of its source under `perm`.
fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel(shape);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..n {
        idx.push(src);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            src += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    idx
}

impl<T: Real> Tensor<T> {
    /// Same buffer, new extents (row-major order preserved).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(GlfcError::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|a| vec![Some(a.grad.to_vec())]),
        ))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(GlfcError::shape(format!(
                "invalid permutation {perm:?} for rank {rank}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src = permute_index(self.shape(), perm);
        self.gather_flat("permute", out_shape, src)
    }

    /// Reorders positions along axis 1 of `[B, L, ...]`: output position `t`
    /// takes input position `order[t]`. `order` must be a permutation of `0..L`.
    pub fn gather_axis1(&self, order: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() < 2 || order.len() != shape[1] {
            return Err(GlfcError::shape(format!(
                "gather_axis1: order of length {} does not fit {shape:?}",
                order.len()
            )));
        }
        let (b, l) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut src = Vec::with_capacity(self.numel());
        for n in 0..b {
            for &t in order {
                if t >= l {
                    return Err(GlfcError::shape(format!("gather_axis1: index {t} ≥ {l}")));
                }
                let base = (n * l + t) * inner;
                src.extend(base..base + inner);
            }
        }
        self.gather_flat("gather_axis1", shape.to_vec(), src)
    }

    /// `out[i] = self[src[i]]`; adjoint scatters back.
    fn gather_flat(&self, name: &'static str, out_shape: Vec<usize>, src: Vec<usize>) -> Result<Tensor<T>> {
        let x = self.data();
        let out: Vec<T> = src.iter().map(|&i| x[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op(
            name,
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |a| {
                let mut g = vec![T::zero(); n];
                for (&i, &go) in src.iter().zip(a.grad) {
                    g[i] += go;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| GlfcError::shape("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(GlfcError::shape(format!("concat axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(GlfcError::shape(format!(
                    "concat: {:?} incompatible with {:?} along axis {axis}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &wdt) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[o * wdt..(o + 1) * wdt]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            "concat",
            shape,
            out,
            parts.to_vec(),
            Box::new(move |a| {
                let mut grads: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(w * outer)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (g, &wdt) in grads.iter_mut().zip(&widths) {
                        g.extend_from_slice(&a.grad[off..off + wdt]);
                        off += wdt;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_channels() {
        let a = Tensor::<f32>::zeros(&[1, 64, 4, 4]);
        let b = Tensor::<f32>::full(&[1, 64, 4, 4], 1.0);
        let c = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 128, 4, 4]);
        assert_eq!(c.data()[64 * 16 - 1], 0.0);
        assert_eq!(c.data()[64 * 16], 1.0);
    }

    #[test]
    fn concat_backward_splits() {
        let a = Tensor::<f64>::param(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        c.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 4.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn permute_and_inverse() {
        let x = Tensor::<f64>::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        // y[k,i,j] = x[i,j,k] at (k,i,j) = (1,0,2)
        let (k, i, j) = (1, 0, 2);
        assert_eq!(y.data()[k * 6 + i * 3 + j], x.data()[i * 12 + j * 4 + k]);
        let back = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.data(), x.data());
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn reshape_keeps_order() {
        let x = Tensor::<f64>::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let y = x.reshape(&[3, 2]).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(x.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn gather_reverses_tokens() {
        let x = Tensor::<f64>::param(&[1, 3, 2], (0..6).map(f64::from).collect()).unwrap();
        let y = x.gather_axis1(&[2, 1, 0]).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0, 2.0, 3.0, 0.0, 1.0]);
        let w = Tensor::new(&[1, 3, 2], vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        y.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0, 2.0, 2.0, 1.0, 1.0]);
    }
}
