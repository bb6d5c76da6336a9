//! Patch tokenization and the visual state-space (VSS) block.

use rand::Rng;

use super::params::{Builder, Init};
use crate::error::{GlfcError, Result};
use crate::real::Real;
use crate::ssm::{grid_side, init_ssm_values, ss2d_merge, SsmParams};
use crate::tensor::Tensor;

/// `[B,C,N,N]` → `[B,L,C·M·M]`: non-overlapping `M×M` patches in row-major
/// grid order, each flattened channel-major.
pub fn patchify<T: Real>(feat: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let &[b, c, h, w] = feat.shape() else {
        return Err(GlfcError::shape(format!("patchify needs [B,C,N,N], got {:?}", feat.shape())));
    };
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(GlfcError::shape(format!("{h}×{w} map is not divisible into {m}×{m} patches")));
    }
    let (gh, gw) = (h / m, w / m);
    feat.reshape(&[b, c, gh, m, gw, m])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b, gh * gw, c * m * m])
}

/// Inverse of [`patchify`] for a square map with `c` channels.
pub fn unpatchify<T: Real>(tokens: &Tensor<T>, c: usize, m: usize) -> Result<Tensor<T>> {
    let &[b, l, f] = tokens.shape() else {
        return Err(GlfcError::shape(format!("unpatchify needs [B,L,F], got {:?}", tokens.shape())));
    };
    if f != c * m * m {
        return Err(GlfcError::shape(format!("token width {f} != {c}·{m}·{m}")));
    }
    let g = grid_side(l)?;
    tokens
        .reshape(&[b, g, g, c, m, m])?
        .permute(&[0, 3, 1, 4, 2, 5])?
        .reshape(&[b, c, g * m, g * m])
}

/// Linear patch embedding and its un-embedding.
#[derive(Debug, Clone)]
pub struct PatchEmbed<T: Real> {
    pub patch: usize,
    pub channels: usize,
    /// `[C·M², E]`, `[E]`
    pub embed_w: Tensor<T>,
    pub embed_b: Tensor<T>,
    /// `[E, C·M²]`, `[C·M²]`
    pub unembed_w: Tensor<T>,
    pub unembed_b: Tensor<T>,
}

impl<T: Real> PatchEmbed<T> {
    pub fn embed(&self, feat: &Tensor<T>) -> Result<Tensor<T>> {
        if feat.shape().get(1) != Some(&self.channels) {
            return Err(GlfcError::shape(format!(
                "patch embed expects {} channels, got {:?}",
                self.channels,
                feat.shape()
            )));
        }
        patchify(feat, self.patch)?.linear(&self.embed_w, Some(&self.embed_b))
    }

    pub fn unembed(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = tokens.linear(&self.unembed_w, Some(&self.unembed_b))?;
        unpatchify(&flat, self.channels, self.patch)
    }
}

/// Tensors of one VSS block.
#[derive(Debug, Clone)]
pub struct VssBlock<T: Real> {
    pub pre_norm: (Tensor<T>, Tensor<T>),
    /// `[E,E]`, `[E]`
    pub in_proj: (Tensor<T>, Tensor<T>),
    pub gate_proj: (Tensor<T>, Tensor<T>),
    /// `[E,3,3]`, `[E]`
    pub dw_conv: (Tensor<T>, Tensor<T>),
    pub post_norm: (Tensor<T>, Tensor<T>),
    pub out_proj: (Tensor<T>, Tensor<T>),
    pub ssm: [SsmParams<T>; 4],
}

/// Number of tensors a VSS block occupies in a parameter list.
pub const VSS_BLOCK_TENSORS: usize = 12 + 4 * 6;

impl<T: Real> VssBlock<T> {
    /// Rebuilds a block from a contiguous run of parameter tensors laid out by
    /// [`build_vss_block`].
    pub fn from_slice(t: &[Tensor<T>]) -> Self {
        assert_eq!(t.len(), VSS_BLOCK_TENSORS);
        let pair = |i: usize| (t[i].clone(), t[i + 1].clone());
        let ssm = std::array::from_fn(|k| {
            let o = 12 + 6 * k;
            SsmParams {
                a_log: t[o].clone(),
                w_delta: t[o + 1].clone(),
                delta_bias: t[o + 2].clone(),
                w_b: t[o + 3].clone(),
                w_c: t[o + 4].clone(),
                d_skip: t[o + 5].clone(),
            }
        });
        VssBlock {
            pre_norm: pair(0),
            in_proj: pair(2),
            gate_proj: pair(4),
            dw_conv: pair(6),
            post_norm: pair(8),
            out_proj: pair(10),
            ssm,
        }
    }

    pub fn token_dim(&self) -> usize {
        self.pre_norm.0.numel()
    }

    /// All tensors in [`VssBlock::from_slice`] order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::with_capacity(VSS_BLOCK_TENSORS);
        for (w, b) in [&self.pre_norm, &self.in_proj, &self.gate_proj, &self.dw_conv, &self.post_norm, &self.out_proj] {
            v.push(w);
            v.push(b);
        }
        for s in &self.ssm {
            v.extend(s.tensors());
        }
        v
    }

    /// Residual gated block over `[B,L,E]` tokens on a square grid:
    ///
    /// `x + out_proj(post_norm(ss2d(silu(dwconv(in_proj(n))))) ⊙ silu(gate_proj(n)))`
    /// with `n = pre_norm(x)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let &[b, l, e] = x.shape() else {
            return Err(GlfcError::shape(format!("VSS block needs [B,L,E], got {:?}", x.shape())));
        };
        if e != self.token_dim() {
            return Err(GlfcError::shape(format!(
                "VSS block width {} does not match tokens of width {e}",
                self.token_dim()
            )));
        }
        let g = grid_side(l)?;
        let n = x.layer_norm(&self.pre_norm.0, &self.pre_norm.1)?;
        let u = n.linear(&self.in_proj.0, Some(&self.in_proj.1))?;
        let gate = n.linear(&self.gate_proj.0, Some(&self.gate_proj.1))?.silu();
        let u = u
            .reshape(&[b, g, g, e])?
            .permute(&[0, 3, 1, 2])?
            .depthwise_conv3x3(&self.dw_conv.0, &self.dw_conv.1)?
            .permute(&[0, 2, 3, 1])?
            .reshape(&[b, l, e])?
            .silu();
        let y = ss2d_merge(&u, &self.ssm)?
            .layer_norm(&self.post_norm.0, &self.post_norm.1)?
            .mul(&gate)?
            .linear(&self.out_proj.0, Some(&self.out_proj.1))?;
        x.add(&y)
    }
}

/// Appends a VSS block's parameters (layout of [`VssBlock::from_slice`]) and
/// returns the index of the first one. The output projection starts at zero,
/// so a fresh block is the identity map.
pub(crate) fn build_vss_block<T: Real>(b: &mut Builder<'_, T>, prefix: &str, e: usize, d: usize) -> usize {
    let lin = 1.0 / (e as f64).sqrt();
    let first = b.add(format!("{prefix}.pre_norm.gamma"), vec![e], Init::Ones);
    b.add(format!("{prefix}.pre_norm.beta"), vec![e], Init::Zeros);
    b.add(format!("{prefix}.in_proj.weight"), vec![e, e], Init::Uniform(lin));
    b.add(format!("{prefix}.in_proj.bias"), vec![e], Init::Zeros);
    b.add(format!("{prefix}.gate_proj.weight"), vec![e, e], Init::Uniform(lin));
    b.add(format!("{prefix}.gate_proj.bias"), vec![e], Init::Zeros);
    b.add(format!("{prefix}.dw_conv.weight"), vec![e, 3, 3], Init::Uniform(1.0 / 3.0));
    b.add(format!("{prefix}.dw_conv.bias"), vec![e], Init::Zeros);
    b.add(format!("{prefix}.post_norm.gamma"), vec![e], Init::Ones);
    b.add(format!("{prefix}.post_norm.beta"), vec![e], Init::Zeros);
    b.add(format!("{prefix}.out_proj.weight"), vec![e, e], Init::Zeros);
    b.add(format!("{prefix}.out_proj.bias"), vec![e], Init::Zeros);
    for k in 0..4 {
        let names = ["a_log", "w_delta", "delta_bias", "w_b", "w_c", "d_skip"];
        let vals = init_ssm_values(e, d, b.rng());
        for (name, (shape, v)) in names.iter().zip(vals) {
            b.add_values(format!("{prefix}.dir{k}.{name}"), shape, v);
        }
    }
    first
}

/// Random standalone block (all projections non-zero) for tests and checks.
pub fn random_vss_block<T: Real, R: Rng>(e: usize, d: usize, rng: &mut R) -> VssBlock<T> {
    use rand_distr::{Distribution, Uniform};
    let u = Uniform::new(-0.5, 0.5).expect("range");
    let mut mk = |shape: &[usize], base: f64, scale: f64| {
        let n: usize = shape.iter().product();
        Tensor::param(
            shape,
            (0..n).map(|_| T::from_real(base + scale * u.sample(rng))).collect(),
        )
        .expect("shape")
    };
    let pre_norm = (mk(&[e], 1.0, 0.2), mk(&[e], 0.0, 0.2));
    let in_proj = (mk(&[e, e], 0.0, 1.0), mk(&[e], 0.0, 0.2));
    let gate_proj = (mk(&[e, e], 0.0, 1.0), mk(&[e], 0.0, 0.2));
    let dw_conv = (mk(&[e, 3, 3], 0.0, 0.6), mk(&[e], 0.0, 0.2));
    let post_norm = (mk(&[e], 1.0, 0.2), mk(&[e], 0.0, 0.2));
    let out_proj = (mk(&[e, e], 0.0, 1.0), mk(&[e], 0.0, 0.2));
    let ssm = std::array::from_fn(|_| SsmParams::init(e, d, rng));
    VssBlock {
        pre_norm,
        in_proj,
        gate_proj,
        dw_conv,
        post_norm,
        out_proj,
        ssm,
    }
}
