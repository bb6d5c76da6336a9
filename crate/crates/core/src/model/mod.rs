//! Two-downsample UNet with VSS stacks on its skip connections (MEUNet) and
//! the plain UNet variants it is compared against.
//!
//! Encoder levels are `[conv3×3 → instance norm → leaky ReLU] × 2` followed
//! by 2×2 max-pooling. Each decoder level upsamples ×2 (nearest neighbour),
//! applies a 3×3 conv, concatenates the skip feature and runs another conv
//! block. A 1×1 conv with `tanh` maps to one output channel in `[-1, 1]`.
//!
//! On a VSS skip the encoder feature `f` is replaced by
//! `f + unembed(VSS^k(embed(f)))`; `unembed` starts at zero so every variant
//! begins as the plain UNet with the same shared weights.

mod config;
mod params;
mod vss;

pub use config::{adaptive_patch_size, MeunetConfig, Variant};
pub use params::ParamStore;
pub use vss::{patchify, random_vss_block, unpatchify, PatchEmbed, VssBlock, VSS_BLOCK_TENSORS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GlfcError, Result};
use crate::real::Real;
use crate::tensor::Tensor;
use params::{Builder, Init};

const CONV_BLOCK_TENSORS: usize = 8;

#[derive(Debug, Clone)]
struct SkipPlan {
    patch: usize,
    channels: usize,
    /// embed weight, embed bias
    embed: usize,
    blocks: Vec<usize>,
    /// unembed weight, unembed bias
    unembed: usize,
}

#[derive(Debug, Clone)]
struct Plan {
    enc: Vec<usize>,
    skips: Vec<Option<SkipPlan>>,
    bottleneck: usize,
    /// indexed by level; up[i] maps level i+1 → level i
    up: Vec<usize>,
    dec: Vec<usize>,
    head: usize,
}

fn conv(b: &mut Builder<'_, impl Real>, prefix: &str, cin: usize, cout: usize, k: usize, gain: f64) -> usize {
    let fan_in = (cin * k * k) as f64;
    let w = b.add(
        format!("{prefix}.weight"),
        vec![cout, cin, k, k],
        Init::Uniform(gain * (3.0 / fan_in).sqrt()),
    );
    b.add(format!("{prefix}.bias"), vec![cout], Init::Zeros);
    w
}

fn conv_block(b: &mut Builder<'_, impl Real>, prefix: &str, cin: usize, cout: usize) -> usize {
    // He-uniform for leaky ReLU(0.2)
    let gain = (2.0f64 / (1.0 + 0.04)).sqrt();
    let first = conv(b, &format!("{prefix}.conv1"), cin, cout, 3, gain);
    b.add(format!("{prefix}.norm1.gamma"), vec![cout], Init::Ones);
    b.add(format!("{prefix}.norm1.beta"), vec![cout], Init::Zeros);
    conv(b, &format!("{prefix}.conv2"), cout, cout, 3, gain);
    b.add(format!("{prefix}.norm2.gamma"), vec![cout], Init::Ones);
    b.add(format!("{prefix}.norm2.beta"), vec![cout], Init::Zeros);
    first
}

fn run_conv_block<T: Real>(x: &Tensor<T>, p: &[Tensor<T>]) -> Result<Tensor<T>> {
    let h = x.conv2d(&p[0], &p[1])?.instance_norm(&p[2], &p[3])?.leaky_relu();
    Ok(h.conv2d(&p[4], &p[5])?.instance_norm(&p[6], &p[7])?.leaky_relu())
}

/// A built network: architecture plan plus its parameters.
#[derive(Debug, Clone)]
pub struct Meunet<T: Real> {
    config: MeunetConfig,
    plan: Plan,
    params: ParamStore<T>,
}

impl<T: Real> Meunet<T> {
    /// Builds the network with seeded initial weights.
    pub fn new(config: MeunetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        let ch = config.level_channels();
        let levels = config.variant.downsamples();

        let mut enc = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        for i in 0..levels {
            let cin = if i == 0 { 1 } else { ch[i - 1] };
            enc.push(conv_block(&mut b, &format!("enc{i}"), cin, ch[i]));
            if config.variant.vss_on_skip(i) {
                let m = config.patch_size(i)?;
                let e = config.embed_dim(i);
                let flat = ch[i] * m * m;
                let embed = b.add(
                    format!("skip{i}.embed.weight"),
                    vec![flat, e],
                    Init::Uniform((3.0 / flat as f64).sqrt()),
                );
                b.add(format!("skip{i}.embed.bias"), vec![e], Init::Zeros);
                let blocks = (0..config.depth(i))
                    .map(|j| vss::build_vss_block(&mut b, &format!("skip{i}.block{j}"), e, config.state_dim))
                    .collect();
                let unembed = b.add(format!("skip{i}.unembed.weight"), vec![e, flat], Init::Zeros);
                b.add(format!("skip{i}.unembed.bias"), vec![flat], Init::Zeros);
                skips.push(Some(SkipPlan {
                    patch: m,
                    channels: ch[i],
                    embed,
                    blocks,
                    unembed,
                }));
            } else {
                skips.push(None);
            }
        }
        let bottleneck = conv_block(&mut b, "bottleneck", ch[levels - 1], ch[levels]);
        let mut up = vec![0; levels];
        let mut dec = vec![0; levels];
        for i in (0..levels).rev() {
            up[i] = conv(&mut b, &format!("up{i}.conv"), ch[i + 1], ch[i], 3, (2.0f64 / 1.04).sqrt());
            dec[i] = conv_block(&mut b, &format!("dec{i}"), 2 * ch[i], ch[i]);
        }
        let head = conv(&mut b, "head", ch[0], 1, 1, 1.0);

        Ok(Meunet {
            config,
            plan: Plan {
                enc,
                skips,
                bottleneck,
                up,
                dec,
                head,
            },
            params: store,
        })
    }

    pub fn config(&self) -> &MeunetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Exact learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Number of VSS blocks across all skips.
    pub fn vss_block_count(&self) -> usize {
        self.plan
            .skips
            .iter()
            .flatten()
            .map(|s| s.blocks.len())
            .sum()
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Meunet<U> {
        Meunet {
            config: self.config.clone(),
            plan: self.plan.clone(),
            params: self.params.cast(),
        }
    }

    /// Leaf tensors for one pass (see [`Meunet::forward_with`]).
    pub fn leaves(&self, requires_grad: bool) -> Vec<Tensor<T>> {
        self.params.leaves(requires_grad)
    }

    /// Forward pass without gradient tracking.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(&self.leaves(false), x)
    }

    /// Forward pass on explicit parameter leaves (as produced by
    /// [`Meunet::leaves`]); `x` is `[B,1,N,N]` in `[-1,1]`.
    pub fn forward_with(&self, p: &[Tensor<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
        if p.len() != self.params.len() {
            return Err(GlfcError::shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                p.len()
            )));
        }
        let n = self.config.input_size;
        match *x.shape() {
            [_, 1, h, w] if h == n && w == n => {}
            _ => {
                return Err(GlfcError::shape(format!(
                    "input must be [B,1,{n},{n}], got {:?}",
                    x.shape()
                )))
            }
        }
        let plan = &self.plan;
        let block = |at: usize, len: usize| &p[at..at + len];

        let mut skips = Vec::with_capacity(plan.enc.len());
        let mut h = x.clone();
        for (i, &e) in plan.enc.iter().enumerate() {
            let f = run_conv_block(&h, block(e, CONV_BLOCK_TENSORS))?;
            h = f.maxpool2()?;
            let s = match &plan.skips[i] {
                None => f,
                Some(sp) => {
                    let pe = PatchEmbed {
                        patch: sp.patch,
                        channels: sp.channels,
                        embed_w: p[sp.embed].clone(),
                        embed_b: p[sp.embed + 1].clone(),
                        unembed_w: p[sp.unembed].clone(),
                        unembed_b: p[sp.unembed + 1].clone(),
                    };
                    let mut tok = pe.embed(&f)?;
                    for &bi in &sp.blocks {
                        tok = VssBlock::from_slice(block(bi, VSS_BLOCK_TENSORS)).forward(&tok)?;
                    }
                    f.add(&pe.unembed(&tok)?)?
                }
            };
            skips.push(s);
        }
        h = run_conv_block(&h, block(plan.bottleneck, CONV_BLOCK_TENSORS))?;
        for i in (0..plan.enc.len()).rev() {
            let u = plan.up[i];
            let up = h.upsample2()?.conv2d(&p[u], &p[u + 1])?.leaky_relu();
            let cat = Tensor::concat(&[skips[i].clone(), up], 1)?;
            h = run_conv_block(&cat, block(plan.dec[i], CONV_BLOCK_TENSORS))?;
        }
        Ok(h.conv2d(&p[plan.head], &p[plan.head + 1])?.tanh())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_param_count() {
        let mut store = ParamStore::<f32>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };
        conv(&mut b, "c", 1, 64, 3, 1.0);
        assert_eq!(store.scalar_count(), 640);
    }

    #[test]
    fn submodels_are_smaller() {
        let count = |v| Meunet::<f32>::new(MeunetConfig::paper(v), 0).unwrap().param_count();
        let full = count(Variant::Meunet);
        assert!(count(Variant::MeunetV1) < full);
        assert!(count(Variant::MeunetV2) < full);
        assert!(count(Variant::UnetD2) < count(Variant::MeunetV1));
        assert!(full < count(Variant::UnetD4));
    }

    #[test]
    fn unet_d2_names_are_a_subset() {
        let me = Meunet::<f32>::new(MeunetConfig::miniature(Variant::Meunet), 1).unwrap();
        let un = Meunet::<f32>::new(MeunetConfig::miniature(Variant::UnetD2), 1).unwrap();
        let extra: Vec<&String> = me
            .params()
            .names()
            .iter()
            .filter(|n| !un.params().names().contains(n))
            .collect();
        assert!(extra.iter().all(|n| n.starts_with("skip")));
        assert!(un.params().names().iter().all(|n| me.params().names().contains(n)));
        assert_eq!(me.vss_block_count(), 2);
        assert_eq!(un.vss_block_count(), 0);
    }

    #[test]
    fn wrong_input_size_is_shape_error() {
        let m = Meunet::<f32>::new(MeunetConfig::miniature(Variant::UnetD2), 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(matches!(m.forward(&x), Err(GlfcError::Shape(_))));
    }
}
