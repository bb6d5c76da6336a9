//! HU normalization, intensity windows and the multiple-contrast loss.

use crate::error::{GlfcError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3000.0;

/// Maps HU to `[-1, 1]` over `[HU_MIN, HU_MAX]`, clipping first.
pub fn hu_to_norm(h: f64) -> f64 {
    2.0 * (h.clamp(HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN) - 1.0
}

/// Inverse of [`hu_to_norm`]; `v` is clipped to `[-1, 1]`.
pub fn norm_to_hu(v: f64) -> f64 {
    (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (HU_MAX - HU_MIN) + HU_MIN
}

/// Sub-interval of normalized intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityWindow {
    pub lo: f64,
    pub hi: f64,
    pub label: &'static str,
}

impl IntensityWindow {
    pub const GLOBAL: IntensityWindow = IntensityWindow {
        lo: -1.0,
        hi: 1.0,
        label: "global",
    };
    pub const SOFT: IntensityWindow = IntensityWindow {
        lo: -0.615,
        hi: -0.368,
        label: "soft",
    };
    pub const BONE: IntensityWindow = IntensityWindow {
        lo: -0.368,
        hi: 1.0,
        label: "bone",
    };

    pub fn new(lo: f64, hi: f64, label: &'static str) -> Result<Self> {
        let w = IntensityWindow { lo, hi, label };
        w.check()?;
        Ok(w)
    }

    fn check(&self) -> Result<()> {
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(GlfcError::contract(format!(
                "window `{}` needs lo < hi, got [{}, {}]",
                self.label, self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Scalar form of [`window_renormalize`].
    pub fn apply(&self, p: f64) -> f64 {
        (2.0 * (p - self.lo) / (self.hi - self.lo) - 1.0).clamp(-1.0, 1.0)
    }
}

/// `clip(2(P − lo)/(hi − lo) − 1, −1, 1)`, differentiable with zero gradient
/// where clipped.
pub fn window_renormalize<T: Real>(p: &Tensor<T>, w: &IntensityWindow) -> Result<Tensor<T>> {
    w.check()?;
    p.shift(-w.lo).scale(2.0 / (w.hi - w.lo)).shift(-1.0).clip(-1.0, 1.0)
}

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// L1 in the global window only.
    Glob,
    /// Global + soft-tissue + bone window L1.
    Mcl,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Glob => "glob",
            LossKind::Mcl => "mcl",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = GlfcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glob" => Ok(LossKind::Glob),
            "mcl" => Ok(LossKind::Mcl),
            _ => Err(GlfcError::config(format!("unknown loss `{s}` (expected glob or mcl)"))),
        }
    }
}

/// Multiple-contrast loss and its three terms.
pub struct McLoss<T: Real> {
    pub total: Tensor<T>,
    pub glob: Tensor<T>,
    pub soft: Tensor<T>,
    pub bone: Tensor<T>,
}

impl<T: Real> McLoss<T> {
    /// `[total, glob, soft, bone]` as plain numbers.
    pub fn values(&self) -> [f64; 4] {
        [&self.total, &self.glob, &self.soft, &self.bone].map(|t| t.item().as_f64())
    }
}

pub fn mcl_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<McLoss<T>> {
    let glob = p.l1_mean(y)?;
    let term = |w: &IntensityWindow| -> Result<Tensor<T>> {
        window_renormalize(p, w)?.l1_mean(&window_renormalize(y, w)?)
    };
    let soft = term(&IntensityWindow::SOFT)?;
    let bone = term(&IntensityWindow::BONE)?;
    let total = glob.add(&soft)?.add(&bone)?;
    Ok(McLoss {
        total,
        glob,
        soft,
        bone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(hu_to_norm(-1024.0), -1.0);
        assert_eq!(hu_to_norm(3000.0), 1.0);
        assert_eq!(hu_to_norm(-5000.0), -1.0);
        assert!((norm_to_hu(hu_to_norm(123.5)) - 123.5).abs() < 1e-9);
    }

    #[test]
    fn window_examples() {
        let s = IntensityWindow::SOFT;
        assert!((s.apply(s.lo) + 1.0).abs() < 1e-12);
        assert!((s.apply(s.hi) - 1.0).abs() < 1e-12);
        assert!(s.apply(-0.4915).abs() < 1e-12);
        assert_eq!(s.apply(0.5), 1.0);
        assert!(IntensityWindow::new(0.2, 0.2, "x").is_err());
    }

    #[test]
    fn zero_at_identity() {
        let p = Tensor::<f64>::new(&[4], vec![-0.9, -0.5, 0.1, 0.7]).unwrap();
        let l = mcl_loss(&p, &p).unwrap();
        assert_eq!(l.values(), [0.0; 4]);
    }

    #[test]
    fn soft_window_scales_l1() {
        let eps = 1e-3;
        let y: Vec<f64> = vec![-0.6, -0.55, -0.5, -0.45];
        let p: Vec<f64> = y.iter().map(|v| v + eps).collect();
        let l = mcl_loss(
            &Tensor::new(&[4], p).unwrap(),
            &Tensor::new(&[4], y).unwrap(),
        )
        .unwrap();
        let [_, glob, soft, _] = l.values();
        assert!((glob - eps).abs() < 1e-12);
        assert!((soft - eps * 2.0 / 0.247).abs() < 1e-10);
    }
}
