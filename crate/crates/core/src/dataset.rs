//! Paired CBCT / CT slice datasets on disk and seeded batch iteration.
//!
//! A dataset directory holds `cbct_<i>.gvol` and `ct_<i>.gvol` with
//! matching indices, optionally `labels_<i>.gvol`, and a `manifest.txt`
//! written by [`write_phantom_dataset`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GlfcError, Result};
use crate::io::{read_gvol, write_atomic, write_gvol, Volume};
use crate::losses::{hu_to_norm, norm_to_hu};
use crate::phantom::{gen_phantom_pair, PhantomConfig};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.txt";

/// File names of pair `i`.
pub fn pair_file_names(i: usize) -> [String; 3] {
    [format!("cbct_{i:04}.gvol"), format!("ct_{i:04}.gvol"), format!("labels_{i:04}.gvol")]
}

/// Generates `pairs` phantoms into `dir`. Pair seeds are drawn from one
/// generator seeded with `base.seed`.
pub fn write_phantom_dataset(dir: &Path, pairs: usize, base: &PhantomConfig) -> Result<()> {
    base.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| GlfcError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    let seeds: Vec<u64> = (0..pairs).map(|_| rng.random()).collect();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# glfc phantom dataset");
    let _ = writeln!(
        manifest,
        "pairs={pairs}\nseed={}\nsize={}\nshading={}\nstreaks={}\nnoise_sigma={}\ndrift={}",
        base.seed, base.size, base.shading, base.streaks, base.noise_sigma, base.drift
    );
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let p = gen_phantom_pair(&PhantomConfig { seed, ..*base })?;
            let [cb, ct, lab] = pair_file_names(i);
            write_gvol(&dir.join(cb), &p.cbct)?;
            write_gvol(&dir.join(ct), &p.ct)?;
            write_gvol(&dir.join(lab), &p.labels_volume())
        })
        .collect::<Result<()>>()?;
    for (i, seed) in seeds.iter().enumerate() {
        let [cb, ct, lab] = pair_file_names(i);
        let _ = writeln!(manifest, "pair.{i}={cb} {ct} {lab} seed={seed}");
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Paths of one on-disk pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFiles {
    pub index: usize,
    pub cbct: PathBuf,
    pub ct: PathBuf,
    pub labels: Option<PathBuf>,
}

fn indexed(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.strip_suffix(".gvol")?.parse().ok()
}

/// Lists the pairs in `dir`, failing on files without a partner.
pub fn scan_pairs(dir: &Path) -> Result<Vec<PairFiles>> {
    let entries = std::fs::read_dir(dir).map_err(|e| GlfcError::io(dir, e))?;
    let mut cbct = BTreeMap::new();
    let mut ct = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| GlfcError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(i) = indexed(&name, "cbct_") {
            cbct.insert(i, entry.path());
        } else if let Some(i) = indexed(&name, "ct_") {
            ct.insert(i, entry.path());
        } else if let Some(i) = indexed(&name, "labels_") {
            labels.insert(i, entry.path());
        }
    }
    let mut orphans: Vec<String> = cbct
        .iter()
        .filter(|(i, _)| !ct.contains_key(i))
        .chain(ct.iter().filter(|(i, _)| !cbct.contains_key(i)))
        .chain(labels.iter().filter(|(i, _)| !ct.contains_key(i)))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !orphans.is_empty() {
        orphans.sort();
        return Err(GlfcError::Dataset(format!("unpaired files: {}", orphans.join(", "))));
    }
    Ok(cbct
        .into_iter()
        .map(|(index, cb)| PairFiles {
            index,
            cbct: cb,
            ct: ct[&index].clone(),
            labels: labels.get(&index).cloned(),
        })
        .collect())
}

/// Nearest-neighbour resize of a `w×h` slice to `size×size`.
pub fn resize_nearest(src: &[f32], w: usize, h: usize, size: usize) -> Vec<f32> {
    resize_to(src, w, h, size, size)
}

/// Nearest-neighbour resize of a `w×h` slice to `ow×oh`.
pub fn resize_to(src: &[f32], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f32> {
    if (w, h) == (ow, oh) {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        let sy = ((2 * y + 1) * h / (2 * oh)).min(h - 1);
        for x in 0..ow {
            let sx = ((2 * x + 1) * w / (2 * ow)).min(w - 1);
            out.push(src[sy * w + sx]);
        }
    }
    out
}

/// One normalized training slice pair at the dataset resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    pub cbct: Vec<f32>,
    pub ct: Vec<f32>,
    pub labels: Option<Vec<u8>>,
    /// Pair index and slice within that pair's volume.
    pub source: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    /// Side of every stored slice.
    pub size: usize,
    pub slices: Vec<SlicePair>,
}

fn normalize(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&h| hu_to_norm(h as f64) as f32).collect()
}

impl PairedDataset {
    /// Loads every pair in `dir`, resized to `size×size` and normalized.
    pub fn load(dir: &Path, size: usize) -> Result<Self> {
        let files = scan_pairs(dir)?;
        let vols = files
            .iter()
            .map(|f| {
                let labels = f.labels.as_deref().map(read_gvol).transpose()?;
                Ok((f.index, read_gvol(&f.cbct)?, read_gvol(&f.ct)?, labels))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_volumes(vols, size)
    }

    /// Builds from `(index, cbct, ct, labels)` HU volumes.
    pub fn from_volumes(pairs: Vec<(usize, Volume, Volume, Option<Volume>)>, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(GlfcError::config("dataset slice size must be positive"));
        }
        let mut slices = Vec::new();
        for (index, cbct, ct, labels) in pairs {
            if cbct.dims != ct.dims {
                return Err(GlfcError::Dataset(format!(
                    "pair {index}: cbct dims {:?} differ from ct dims {:?}",
                    cbct.dims, ct.dims
                )));
            }
            if let Some(l) = &labels {
                if l.dims != ct.dims {
                    return Err(GlfcError::Dataset(format!(
                        "pair {index}: label dims {:?} differ from ct dims {:?}",
                        l.dims, ct.dims
                    )));
                }
            }
            let (w, h) = (ct.width(), ct.height());
            for z in 0..ct.slice_count() {
                slices.push(SlicePair {
                    cbct: normalize(&resize_nearest(cbct.slice(z), w, h, size)),
                    ct: normalize(&resize_nearest(ct.slice(z), w, h, size)),
                    labels: labels
                        .as_ref()
                        .map(|l| resize_nearest(l.slice(z), w, h, size).iter().map(|&v| v as u8).collect()),
                    source: (index, z),
                });
            }
        }
        Ok(PairedDataset { size, slices })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// One epoch of slice indices: a seeded permutation cut into batches of
    /// `batch`, keeping a short final batch.
    pub fn epoch_batches(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Convenience form of [`PairedDataset::epoch_batches`] from a seed.
    pub fn batches(&self, batch: usize, seed: u64) -> Vec<Vec<usize>> {
        self.epoch_batches(batch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `(cbct, ct)` tensors of shape `[n,1,size,size]`.
    pub fn batch_tensors<T: Real>(&self, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = self.size;
        let gather = |f: &dyn Fn(&SlicePair) -> &[f32]| -> Vec<T> {
            idx.iter()
                .flat_map(|&i| f(&self.slices[i]).iter().map(|&v| T::from_real(v as f64)))
                .collect()
        };
        let shape = [idx.len(), 1, s, s];
        Ok((
            Tensor::new(&shape, gather(&|p| &p.cbct))?,
            Tensor::new(&shape, gather(&|p| &p.ct))?,
        ))
    }

    /// Slices stacked into a `[size, size, n]` HU volume.
    pub fn stacked_hu(&self, pick: impl Fn(&SlicePair) -> &[f32]) -> Volume {
        Volume {
            dims: vec![self.size, self.size, self.len()],
            spacing: [1.0; 3],
            voxels: self
                .slices
                .iter()
                .flat_map(|p| pick(p).iter().map(|&v| norm_to_hu(v as f64) as f32))
                .collect(),
        }
    }

    /// Splits off `holdout` slices chosen by a seeded permutation.
    pub fn split(&self, holdout: usize, seed: u64) -> (PairedDataset, PairedDataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = holdout.min(self.len());
        let mut test: Vec<usize> = order[..k].to_vec();
        let mut train: Vec<usize> = order[k..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        let pick = |ix: &[usize]| PairedDataset {
            size: self.size,
            slices: ix.iter().map(|&i| self.slices[i].clone()).collect(),
        };
        (pick(&train), pick(&test))
    }
}
