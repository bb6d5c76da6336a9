//! Region masks and masked SSIM / PSNR in normalized intensity space.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{GlfcError, Result};
use crate::io::Volume;
use crate::losses::{hu_to_norm, norm_to_hu};

pub const BODY_THRESHOLD_HU: f64 = -500.0;
pub const SOFT_RANGE_HU: (f64, f64) = (-250.0, 250.0);
pub const BONE_RANGE_HU: (f64, f64) = (250.0, 3000.0);

/// Evaluation regions, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    FullBody,
    SoftTissue,
    Bone,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::FullBody, Region::SoftTissue, Region::Bone];

    pub fn key(self) -> &'static str {
        match self {
            Region::FullBody => "full",
            Region::SoftTissue => "st",
            Region::Bone => "bone",
        }
    }
}

/// Boolean masks of one 2D slice, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub width: usize,
    pub height: usize,
    pub full_body: Vec<bool>,
    pub soft_tissue: Vec<bool>,
    pub bone: Vec<bool>,
}

impl RegionMasks {
    pub fn get(&self, r: Region) -> &[bool] {
        match r {
            Region::FullBody => &self.full_body,
            Region::SoftTissue => &self.soft_tissue,
            Region::Bone => &self.bone,
        }
    }
}

/// Masks derived from a reference CT slice in HU.
///
/// The body is `HU > -500`, reduced to its largest 4-connected component,
/// with enclosed holes filled. Soft tissue and bone are HU ranges inside
/// the body.
pub fn region_masks_from_ct(ct_hu: &[f32], width: usize, height: usize) -> Result<RegionMasks> {
    if ct_hu.len() != width * height {
        return Err(GlfcError::shape(format!(
            "slice has {} voxels, expected {width}×{height}",
            ct_hu.len()
        )));
    }
    let above: Vec<bool> = ct_hu.iter().map(|&h| h as f64 > BODY_THRESHOLD_HU).collect();
    let body = fill_holes(&largest_component(&above, width, height), width, height);
    if !body.contains(&true) {
        return Err(GlfcError::Evaluation("body mask is empty".into()));
    }
    let in_range = |h: f32, (lo, hi): (f64, f64), lo_inclusive: bool| {
        let h = h as f64;
        (if lo_inclusive { h >= lo } else { h > lo }) && h <= hi
    };
    let soft_tissue = ct_hu
        .iter()
        .zip(&body)
        .map(|(&h, &b)| b && in_range(h, SOFT_RANGE_HU, true))
        .collect();
    let bone = ct_hu
        .iter()
        .zip(&body)
        .map(|(&h, &b)| b && in_range(h, BONE_RANGE_HU, false))
        .collect();
    Ok(RegionMasks {
        width,
        height,
        full_body: body,
        soft_tissue,
        bone,
    })
}

fn neighbours(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

fn flood(seed: &[usize], allowed: &[bool], w: usize, h: usize, label: &mut [u32], id: u32) -> usize {
    let mut queue: VecDeque<usize> = seed.iter().copied().filter(|&i| allowed[i] && label[i] == 0).collect();
    for &i in &queue {
        label[i] = id;
    }
    let mut size = queue.len();
    while let Some(i) = queue.pop_front() {
        for j in neighbours(i, w, h) {
            if allowed[j] && label[j] == 0 {
                label[j] = id;
                size += 1;
                queue.push_back(j);
            }
        }
    }
    size
}

/// Largest 4-connected component; ties go to the component found first in
/// raster order.
fn largest_component(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut label = vec![0u32; mask.len()];
    let mut best = (0usize, 0u32);
    let mut next = 1;
    for i in 0..mask.len() {
        if mask[i] && label[i] == 0 {
            let size = flood(&[i], mask, w, h, &mut label, next);
            if size > best.0 {
                best = (size, next);
            }
            next += 1;
        }
    }
    label.iter().map(|&l| l != 0 && l == best.1).collect()
}

/// Marks every non-mask pixel not 4-reachable from the border as inside.
fn fill_holes(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let border: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (x, y) = (i % w, i / w);
            x == 0 || y == 0 || x + 1 == w || y + 1 == h
        })
        .collect();
    let mut label = vec![0u32; mask.len()];
    flood(&border, &outside, w, h, &mut label, 1);
    label.iter().map(|&l| l == 0).collect()
}

/// SSIM / PSNR constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    /// Gaussian window side (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of normalized intensities.
    pub data_range: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 2.0,
        }
    }
}

/// Separable Gaussian blur; weights falling outside the image are dropped
/// and the rest renormalized.
fn gaussian_blur(img: &[f64], w: usize, h: usize, cfg: &MetricConfig) -> Vec<f64> {
    let r = (cfg.window / 2) as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * cfg.sigma * cfg.sigma)).exp())
        .collect();
    let pass = |src: &[f64], len: usize, count: usize, stride_along: usize, stride_across: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            for p in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (k, &wk) in kernel.iter().enumerate() {
                    let q = p as isize + k as isize - r;
                    if q >= 0 && (q as usize) < len {
                        acc += wk * src[line * stride_across + q as usize * stride_along];
                        norm += wk;
                    }
                }
                out[line * stride_across + p * stride_along] = acc / norm;
            }
        }
        out
    };
    let rows = pass(img, w, h, 1, w);
    pass(&rows, h, w, w, 1)
}

fn check_pair(p: &[f64], y: &[f64], mask: &[bool]) -> Result<()> {
    if p.len() != y.len() || p.len() != mask.len() {
        return Err(GlfcError::shape(format!(
            "image sizes differ: {} / {} / mask {}",
            p.len(),
            y.len(),
            mask.len()
        )));
    }
    if !mask.contains(&true) {
        return Err(GlfcError::Evaluation("mask is empty".into()));
    }
    Ok(())
}

/// Per-pixel SSIM map from local Gaussian statistics over all pixels.
pub fn ssim_map(p: &[f64], y: &[f64], w: usize, h: usize, cfg: &MetricConfig) -> Vec<f64> {
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let blur = |v: Vec<f64>| gaussian_blur(&v, w, h, cfg);
    let mu_p = blur(p.to_vec());
    let mu_y = blur(y.to_vec());
    let pp = blur(p.iter().map(|a| a * a).collect());
    let yy = blur(y.iter().map(|a| a * a).collect());
    let py = blur(p.iter().zip(y).map(|(a, b)| a * b).collect());
    (0..p.len())
        .map(|i| {
            let (mp, my) = (mu_p[i], mu_y[i]);
            let vp = pp[i] - mp * mp;
            let vy = yy[i] - my * my;
            let cov = py[i] - mp * my;
            ((2.0 * mp * my + c1) * (2.0 * cov + c2)) / ((mp * mp + my * my + c1) * (vp + vy + c2))
        })
        .collect()
}

/// Mean SSIM over mask pixels, floored at zero.
pub fn masked_ssim(p: &[f64], y: &[f64], mask: &[bool], w: usize, h: usize, cfg: &MetricConfig) -> Result<f64> {
    check_pair(p, y, mask)?;
    if w * h != p.len() {
        return Err(GlfcError::shape(format!("{} pixels is not {w}×{h}", p.len())));
    }
    let map = ssim_map(p, y, w, h, cfg);
    let (sum, n) = map
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    Ok((sum / n as f64).clamp(0.0, 1.0))
}

/// `10·log10(R² / MSE)` over mask pixels; `+inf` when the pixels agree.
pub fn masked_psnr(p: &[f64], y: &[f64], mask: &[bool], cfg: &MetricConfig) -> Result<f64> {
    check_pair(p, y, mask)?;
    let (sum, n) = p
        .iter()
        .zip(y)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b) * (a - b), n + 1));
    let mse = sum / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (cfg.data_range * cfg.data_range / mse).log10()
    })
}

/// Slice-averaged scores of one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    /// Fraction in `[0, 1]`.
    pub ssim: f64,
    /// dB, `+inf` when every counted slice matched exactly.
    pub psnr: f64,
    /// Mean absolute error in HU.
    pub mae_hu: f64,
    pub voxels: usize,
    pub slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Full body, soft tissue, bone. `None` when no voxel fell in the region.
    pub regions: [Option<RegionScore>; 3],
}

impl MetricsReport {
    pub fn region(&self, r: Region) -> Option<&RegionScore> {
        self.regions[r as usize].as_ref()
    }

    pub fn full(&self) -> &RegionScore {
        self.regions[0].as_ref().expect("full-body region is always present")
    }

    /// `key=value` lines, keys prefixed with `prefix.` when non-empty.
    pub fn to_key_values(&self, prefix: &str) -> String {
        let p = if prefix.is_empty() {
            String::new()
        } else {
            format!("{prefix}.")
        };
        let mut s = String::new();
        for r in Region::ALL {
            match self.region(r) {
                Some(sc) => {
                    let _ = writeln!(s, "{p}{}.ssim={:.6}", r.key(), sc.ssim);
                    let _ = writeln!(s, "{p}{}.psnr={}", r.key(), fmt_psnr(sc.psnr, 6));
                    let _ = writeln!(s, "{p}{}.mae_hu={:.4}", r.key(), sc.mae_hu);
                    let _ = writeln!(s, "{p}{}.voxels={}", r.key(), sc.voxels);
                    let _ = writeln!(s, "{p}{}.slices={}", r.key(), sc.slices);
                }
                None => {
                    let _ = writeln!(s, "{p}{}.voxels=0", r.key());
                }
            }
        }
        s
    }
}

fn fmt_psnr(v: f64, digits: usize) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.digits$}")
    }
}

/// Text table, one row per method: SSIM (%) and PSNR (dB) over full / ST /
/// bone, followed by voxel counts.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<name_w$} | {:^26} | {:^26} | {:^29}",
        "", "SSIM (%)", "PSNR (dB)", "voxels"
    );
    let _ = writeln!(
        s,
        "{:<name_w$} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>9} {:>9} {:>9}",
        "method", "full", "ST", "bone", "full", "ST", "bone", "full", "ST", "bone"
    );
    let _ = writeln!(s, "{}", "-".repeat(name_w + 92));
    for (name, rep) in rows {
        let cell = |r: Region, f: &dyn Fn(&RegionScore) -> String| rep.region(r).map_or("-".to_string(), f);
        let ssim: Vec<String> = Region::ALL
            .iter()
            .map(|&r| cell(r, &|sc| format!("{:.2}", 100.0 * sc.ssim)))
            .collect();
        let psnr: Vec<String> = Region::ALL
            .iter()
            .map(|&r| cell(r, &|sc| fmt_psnr(sc.psnr, 2)))
            .collect();
        let vox: Vec<String> = Region::ALL
            .iter()
            .map(|&r| cell(r, &|sc| sc.voxels.to_string()))
            .collect();
        let _ = writeln!(
            s,
            "{:<name_w$} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>9} {:>9} {:>9}",
            name, ssim[0], ssim[1], ssim[2], psnr[0], psnr[1], psnr[2], vox[0], vox[1], vox[2]
        );
    }
    s
}

struct SliceScores {
    /// ssim, psnr, abs HU error sum, voxels
    regions: [Option<(f64, f64, f64, usize)>; 3],
}

fn score_slice(pred_hu: &[f32], ref_hu: &[f32], w: usize, h: usize, cfg: &MetricConfig) -> Result<Option<SliceScores>> {
    let masks = match region_masks_from_ct(ref_hu, w, h) {
        Ok(m) => m,
        Err(GlfcError::Evaluation(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let p: Vec<f64> = pred_hu.iter().map(|&v| hu_to_norm(v as f64)).collect();
    let y: Vec<f64> = ref_hu.iter().map(|&v| hu_to_norm(v as f64)).collect();
    let map = ssim_map(&p, &y, w, h, cfg);
    let mut regions = [None; 3];
    for r in Region::ALL {
        let mask = masks.get(r);
        let n = mask.iter().filter(|&&m| m).count();
        if n == 0 {
            continue;
        }
        let ssim = (map.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n as f64).clamp(0.0, 1.0);
        let psnr = masked_psnr(&p, &y, mask, cfg)?;
        let mae = p
            .iter()
            .zip(&y)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (norm_to_hu(*a) - norm_to_hu(*b)).abs())
            .sum::<f64>();
        regions[r as usize] = Some((ssim, psnr, mae, n));
    }
    Ok(Some(SliceScores { regions }))
}

/// Scores a prediction against a registered reference, both in HU. Each 2D
/// slice is scored on masks derived from the reference, then scores are
/// averaged over slices where the region is non-empty.
pub fn evaluate_pair(pred_hu: &Volume, ref_hu: &Volume, cfg: &MetricConfig) -> Result<MetricsReport> {
    if pred_hu.dims != ref_hu.dims {
        return Err(GlfcError::shape(format!(
            "prediction dims {:?} differ from reference dims {:?}",
            pred_hu.dims, ref_hu.dims
        )));
    }
    let (w, h) = (ref_hu.dims[0], ref_hu.dims[1]);
    let n = w * h;
    let slices: Vec<Option<SliceScores>> = (0..ref_hu.slice_count())
        .into_par_iter()
        .map(|z| score_slice(&pred_hu.voxels[z * n..(z + 1) * n], &ref_hu.voxels[z * n..(z + 1) * n], w, h, cfg))
        .collect::<Result<_>>()?;
    if slices.iter().all(Option::is_none) {
        return Err(GlfcError::Evaluation("body mask is empty on every slice".into()));
    }
    let mut regions = [None; 3];
    for r in 0..3 {
        let mut acc = (0.0, 0.0, 0.0, 0usize, 0usize);
        for s in slices.iter().flatten() {
            if let Some((ssim, psnr, mae, vox)) = s.regions[r] {
                acc.0 += ssim;
                acc.1 += psnr;
                acc.2 += mae;
                acc.3 += vox;
                acc.4 += 1;
            }
        }
        if acc.4 > 0 {
            let k = acc.4 as f64;
            regions[r] = Some(RegionScore {
                ssim: acc.0 / k,
                psnr: acc.1 / k,
                mae_hu: acc.2 / acc.3 as f64,
                voxels: acc.3,
                slices: acc.4,
            });
        }
    }
    Ok(MetricsReport { regions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_air_is_error() {
        let img = vec![-1000.0f32; 64];
        assert!(matches!(region_masks_from_ct(&img, 8, 8), Err(GlfcError::Evaluation(_))));
    }

    #[test]
    fn zero_hu_is_soft_not_bone() {
        let img = vec![0.0f32; 25];
        let m = region_masks_from_ct(&img, 5, 5).unwrap();
        assert!(m.full_body[12] && m.soft_tissue[12] && !m.bone[12]);
    }

    #[test]
    fn holes_filled_and_islands_dropped() {
        // 7×7: ring of tissue around an air hole, plus a lone pixel elsewhere
        let mut img = vec![-1000.0f32; 81];
        for y in 1..6 {
            for x in 1..6 {
                img[y * 9 + x] = 40.0;
            }
        }
        img[3 * 9 + 3] = -1000.0;
        img[8 * 9 + 8] = 40.0;
        let m = region_masks_from_ct(&img, 9, 9).unwrap();
        assert!(m.full_body[3 * 9 + 3]);
        assert!(!m.full_body[8 * 9 + 8]);
        assert_eq!(m.full_body.iter().filter(|&&b| b).count(), 25);
        // the filled hole is body but in neither tissue range
        assert!(!m.soft_tissue[3 * 9 + 3] && !m.bone[3 * 9 + 3]);
    }

    #[test]
    fn psnr_closed_form() {
        let y: Vec<f64> = (0..100).map(|i| (i as f64 / 100.0) - 0.5).collect();
        let p: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        let mask = vec![true; 100];
        let cfg = MetricConfig::default();
        let v = masked_psnr(&p, &y, &mask, &cfg).unwrap();
        assert!((v - 20.0 * (2.0f64 / 0.1).log10()).abs() < 1e-9);
        assert_eq!(masked_psnr(&y, &y, &mask, &cfg).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let (w, h) = (20, 17);
        let y: Vec<f64> = (0..w * h).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let p: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + 0.01 * ((i % 7) as f64 - 3.0)).collect();
        let mask: Vec<bool> = (0..w * h).map(|i| i % 3 != 0).collect();
        let cfg = MetricConfig::default();
        assert!((masked_ssim(&y, &y, &mask, w, h, &cfg).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(
            masked_ssim(&p, &y, &mask, w, h, &cfg).unwrap(),
            masked_ssim(&y, &p, &mask, w, h, &cfg).unwrap()
        );
    }

    #[test]
    fn blur_preserves_constants() {
        let img = vec![0.3; 30];
        for v in gaussian_blur(&img, 6, 5, &MetricConfig::default()) {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }
}
