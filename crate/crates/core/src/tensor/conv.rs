use rayon::prelude::*;

use super::Tensor;
use crate::error::{GlfcError, Result};
use crate::real::{matmul_into, Real};

/// Unrolls `[cin, h, w]` into `[cin*k*k, h*w]` with zero padding `k/2`.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    let line = &mut dst[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + dx;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, gx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Stride-1 cross-correlation with an odd square kernel and "same" zero
    /// padding. `self`: `[B,Cin,H,W]`, `weight`: `[Cout,Cin,k,k]`, `bias`: `[Cout]`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let &[batch, cin, h, w] = self.shape() else {
            return Err(GlfcError::shape(format!(
                "conv2d input must be [B,C,H,W], got {:?}",
                self.shape()
            )));
        };
        let &[cout, wcin, k, k2] = weight.shape() else {
            return Err(GlfcError::shape(format!(
                "conv2d weight must be [Cout,Cin,k,k], got {:?}",
                weight.shape()
            )));
        };
        if k != k2 || k % 2 == 0 {
            return Err(GlfcError::shape(format!("conv2d kernel must be odd and square, got {k}×{k2}")));
        }
        if wcin != cin {
            return Err(GlfcError::shape(format!(
                "conv2d channel mismatch: input has {cin}, weight expects {wcin}"
            )));
        }
        if bias.shape() != [cout] {
            return Err(GlfcError::shape(format!(
                "conv2d bias must be [{cout}], got {:?}",
                bias.shape()
            )));
        }
        let hw = h * w;
        let kk = cin * k * k;
        let (xd, wd, bd) = (self.data(), weight.data(), bias.data());
        let out: Vec<T> = (0..batch)
            .into_par_iter()
            .flat_map_iter(|n| {
                let mut cols = vec![T::zero(); kk * hw];
                im2col(&xd[n * cin * hw..(n + 1) * cin * hw], cin, h, w, k, &mut cols);
                let mut o = vec![T::zero(); cout * hw];
                for (co, plane) in o.chunks_mut(hw).enumerate() {
                    plane.fill(bd[co]);
                }
                matmul_into(wd, false, &cols, false, &mut o, cout, kk, hw, true);
                o
            })
            .collect();

        Ok(Tensor::from_op(
            "conv2d",
            vec![batch, cout, h, w],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |a| {
                let (xd, wd) = (a.inputs[0].data(), a.inputs[1].data());
                let (need_x, need_w, need_b) = (a.needs[0], a.needs[1], a.needs[2]);
                // per-sample partials, reduced in sample order for determinism
                let parts: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..batch)
                    .into_par_iter()
                    .map(|n| {
                        let go = &a.grad[n * cout * hw..(n + 1) * cout * hw];
                        let gw = need_w.then(|| {
                            let mut cols = vec![T::zero(); kk * hw];
                            im2col(&xd[n * cin * hw..(n + 1) * cin * hw], cin, h, w, k, &mut cols);
                            let mut gw = vec![T::zero(); cout * kk];
                            matmul_into(go, false, &cols, true, &mut gw, cout, hw, kk, false);
                            gw
                        });
                        let gx = need_x.then(|| {
                            let mut gcols = vec![T::zero(); kk * hw];
                            matmul_into(wd, true, go, false, &mut gcols, kk, cout, hw, false);
                            let mut gx = vec![T::zero(); cin * hw];
                            col2im(&gcols, cin, h, w, k, &mut gx);
                            gx
                        });
                        (gx, gw)
                    })
                    .collect();
                let gx = need_x.then(|| {
                    parts
                        .iter()
                        .flat_map(|(gx, _)| gx.as_ref().expect("computed").iter().copied())
                        .collect::<Vec<T>>()
                });
                let gw = need_w.then(|| {
                    let mut acc = vec![T::zero(); cout * kk];
                    for (_, gw) in &parts {
                        for (s, &v) in acc.iter_mut().zip(gw.as_ref().expect("computed")) {
                            *s += v;
                        }
                    }
                    acc
                });
                let gb = need_b.then(|| {
                    let mut gb = vec![T::zero(); cout];
                    for n in 0..batch {
                        for (co, g) in gb.iter_mut().enumerate() {
                            let off = (n * cout + co) * hw;
                            *g += a.grad[off..off + hw].iter().copied().sum::<T>();
                        }
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    /// Per-channel 3×3 convolution, zero padding 1. `weight`: `[C,3,3]`, `bias`: `[C]`.
    pub fn depthwise_conv3x3(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let &[batch, c, h, w] = self.shape() else {
            return Err(GlfcError::shape(format!(
                "depthwise conv input must be [B,C,H,W], got {:?}",
                self.shape()
            )));
        };
        if weight.shape() != [c, 3, 3] || bias.shape() != [c] {
            return Err(GlfcError::shape(format!(
                "depthwise conv params {:?}/{:?} do not match {c} channels",
                weight.shape(),
                bias.shape()
            )));
        }
        let hw = h * w;
        let (xd, wd, bd) = (self.data(), weight.data(), bias.data());
        let mut out = vec![T::zero(); batch * c * hw];
        for n in 0..batch {
            for ch in 0..c {
                let base = (n * c + ch) * hw;
                let kern = &wd[ch * 9..ch * 9 + 9];
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = bd[ch];
                        for ky in 0..3 {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = ox as isize + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += kern[ky * 3 + kx] * xd[base + iy as usize * w + ix as usize];
                            }
                        }
                        out[base + oy * w + ox] = acc;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            "depthwise_conv3x3",
            vec![batch, c, h, w],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |a| {
                let (xd, wd) = (a.inputs[0].data(), a.inputs[1].data());
                let mut gx = vec![T::zero(); batch * c * hw];
                let mut gw = vec![T::zero(); c * 9];
                let mut gb = vec![T::zero(); c];
                for n in 0..batch {
                    for ch in 0..c {
                        let base = (n * c + ch) * hw;
                        for oy in 0..h {
                            for ox in 0..w {
                                let g = a.grad[base + oy * w + ox];
                                gb[ch] += g;
                                for ky in 0..3 {
                                    let iy = oy as isize + ky as isize - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let ix = ox as isize + kx as isize - 1;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = base + iy as usize * w + ix as usize;
                                        gw[ch * 9 + ky * 3 + kx] += g * xd[xi];
                                        gx[xi] += g * wd[ch * 9 + ky * 3 + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    a.needs[0].then_some(gx),
                    a.needs[1].then_some(gw),
                    a.needs[2].then_some(gb),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::<f64>::new(&[1, 1, 3, 4], (0..12).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::new(&[1, 1, 3, 3], k).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(x.conv2d(&w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn ones_kernel_on_constant_interior() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        // corner sees only a 2×2 neighbourhood
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        assert!(matches!(
            x.conv2d(&w, &Tensor::zeros(&[3])),
            Err(GlfcError::Shape(_))
        ));
    }

    #[test]
    fn one_by_one_kernel_mixes_channels() {
        let x = Tensor::<f64>::new(&[1, 2, 1, 2], vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        let w = Tensor::new(&[1, 2, 1, 1], vec![1.0, 0.5]).unwrap();
        let y = x.conv2d(&w, &Tensor::full(&[1], 1.0)).unwrap();
        assert_eq!(y.data(), &[7.0, 13.0]);
    }

    #[test]
    fn depthwise_identity() {
        let x = Tensor::<f64>::new(&[1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 18];
        k[4] = 1.0;
        k[13] = 2.0;
        let w = Tensor::new(&[2, 3, 3], k).unwrap();
        let y = x.depthwise_conv3x3(&w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 8.0, 10.0, 12.0, 14.0]);
    }
}
