use std::fmt;
use std::str::FromStr;

use crate::error::{GlfcError, Result};

/// Architecture variants of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// VSS stacks on both skips, adaptive patch size.
    Meunet,
    /// VSS only on the first (full resolution) skip.
    MeunetV1,
    /// VSS only on the second skip.
    MeunetV2,
    /// VSS on both skips with a fixed patch size.
    MeunetFixedPatch,
    UnetD2,
    UnetD3,
    UnetD4,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::UnetD2,
        Variant::UnetD3,
        Variant::UnetD4,
        Variant::Meunet,
        Variant::MeunetV1,
        Variant::MeunetV2,
        Variant::MeunetFixedPatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Meunet => "meunet",
            Variant::MeunetV1 => "meunet_v1",
            Variant::MeunetV2 => "meunet_v2",
            Variant::MeunetFixedPatch => "meunet_fixed_patch",
            Variant::UnetD2 => "unet_d2",
            Variant::UnetD3 => "unet_d3",
            Variant::UnetD4 => "unet_d4",
        }
    }

    pub fn downsamples(self) -> usize {
        match self {
            Variant::UnetD3 => 3,
            Variant::UnetD4 => 4,
            _ => 2,
        }
    }

    /// Which skip levels carry a VSS stack.
    pub fn vss_on_skip(self, level: usize) -> bool {
        match self {
            Variant::Meunet | Variant::MeunetFixedPatch => level < 2,
            Variant::MeunetV1 => level == 0,
            Variant::MeunetV2 => level == 1,
            Variant::UnetD2 | Variant::UnetD3 | Variant::UnetD4 => false,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = GlfcError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| GlfcError::config(format!("unknown architecture `{s}`")))
    }
}

/// Full architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct MeunetConfig {
    pub variant: Variant,
    /// Channels per resolution level of the two-downsample network. Deeper
    /// plain-UNet variants extend this list by doubling.
    pub channels: Vec<usize>,
    /// Tokens per skip connection for adaptive patching.
    pub token_count: usize,
    /// VSS blocks on the first and second skip.
    pub vss_depths: (usize, usize),
    /// Token embedding width on the first and second skip.
    pub embed_dims: (usize, usize),
    pub state_dim: usize,
    /// Square input side length.
    pub input_size: usize,
    /// Patch size used by `meunet_fixed_patch`.
    pub fixed_patch: usize,
}

impl MeunetConfig {
    /// Full-size configuration (256×256 slices, channels 64/128/256, 1024
    /// tokens, 16 + 8 VSS blocks).
    pub fn paper(variant: Variant) -> Self {
        MeunetConfig {
            variant,
            channels: vec![64, 128, 256],
            token_count: 1024,
            vss_depths: (16, 8),
            embed_dims: (128, 256),
            state_dim: 8,
            input_size: 256,
            fixed_patch: 8,
        }
    }

    /// Desk-scale configuration for CPU training on 64×64 slices. Keeps the
    /// 8 / 4 adaptive patch sizes of the full network.
    pub fn desk(variant: Variant) -> Self {
        MeunetConfig {
            variant,
            channels: vec![16, 32, 64],
            token_count: 64,
            vss_depths: (2, 1),
            embed_dims: (32, 48),
            state_dim: 8,
            input_size: 64,
            fixed_patch: 8,
        }
    }

    /// Tiny configuration for finite-difference checks (32×32, 16 tokens).
    pub fn miniature(variant: Variant) -> Self {
        MeunetConfig {
            variant,
            channels: vec![4, 8, 16],
            token_count: 16,
            vss_depths: (1, 1),
            embed_dims: (6, 6),
            state_dim: 3,
            input_size: 32,
            fixed_patch: 8,
        }
    }

    /// Channel list actually used: one entry per level including the bottleneck.
    pub fn level_channels(&self) -> Vec<usize> {
        let mut ch = self.channels.clone();
        while ch.len() < self.variant.downsamples() + 1 {
            let last = *ch.last().expect("validated non-empty");
            ch.push(last * 2);
        }
        ch
    }

    /// Side length of the feature map at `level`.
    pub fn side_at(&self, level: usize) -> usize {
        self.input_size >> level
    }

    /// Patch size on skip `level`.
    pub fn patch_size(&self, level: usize) -> Result<usize> {
        let n = self.side_at(level);
        if self.variant == Variant::MeunetFixedPatch {
            let m = self.fixed_patch;
            if m == 0 || !n.is_multiple_of(m) {
                return Err(GlfcError::config(format!(
                    "fixed patch {m} does not tile a {n}×{n} feature map"
                )));
            }
            Ok(m)
        } else {
            adaptive_patch_size(n, self.token_count)
        }
    }

    /// Token count on skip `level` (differs per level only for fixed patching).
    pub fn tokens_at(&self, level: usize) -> Result<usize> {
        let m = self.patch_size(level)?;
        let g = self.side_at(level) / m;
        Ok(g * g)
    }

    pub fn embed_dim(&self, level: usize) -> usize {
        if level == 0 {
            self.embed_dims.0
        } else {
            self.embed_dims.1
        }
    }

    pub fn depth(&self, level: usize) -> usize {
        if level == 0 {
            self.vss_depths.0
        } else {
            self.vss_depths.1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let downs = self.variant.downsamples();
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(GlfcError::config("channels must be non-empty and positive"));
        }
        if downs == 2 && self.channels.len() != 3 {
            return Err(GlfcError::config(format!(
                "{} needs 3 channel levels, got {:?}",
                self.variant, self.channels
            )));
        }
        if self.channels.len() > downs + 1 {
            return Err(GlfcError::config(format!(
                "{} has {} levels but {} channel entries were given",
                self.variant,
                downs + 1,
                self.channels.len()
            )));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << downs) || self.input_size >> downs < 2 {
            return Err(GlfcError::config(format!(
                "input size {} cannot be halved {downs} times down to at least 2",
                self.input_size
            )));
        }
        for level in 0..2 {
            if !self.variant.vss_on_skip(level) {
                continue;
            }
            if self.depth(level) == 0 || self.embed_dim(level) < 2 || self.state_dim == 0 {
                return Err(GlfcError::config(
                    "VSS stacks need depth >= 1, embed dim >= 2 and state dim >= 1",
                ));
            }
            self.patch_size(level)?;
        }
        Ok(())
    }
}

/// Patch side `M = sqrt(N² / L)` so that an `N×N` map yields exactly `L` tokens.
pub fn adaptive_patch_size(side: usize, tokens: usize) -> Result<usize> {
    let area = side * side;
    if tokens == 0 || !area.is_multiple_of(tokens) {
        return Err(GlfcError::config(format!(
            "{side}×{side} map cannot be split into {tokens} equal patches"
        )));
    }
    let sq = area / tokens;
    let m = (sq as f64).sqrt().round() as usize;
    if m == 0 || m * m != sq || !side.is_multiple_of(m) {
        return Err(GlfcError::config(format!(
            "patch area {sq} for a {side}×{side} map with {tokens} tokens is not a perfect square"
        )));
    }
    Ok(m)
}
