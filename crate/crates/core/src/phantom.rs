//! Seeded synthetic head phantoms: a clean CT slice, a CBCT-like degraded
//! copy and a tissue label grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GlfcError, Result};
use crate::io::Volume;

pub const LABEL_AIR: u8 = 0;
pub const LABEL_SOFT: u8 = 1;
pub const LABEL_BONE: u8 = 2;

pub const AIR_HU: f64 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    /// Square side length in pixels (even).
    pub size: usize,
    pub seed: u64,
    /// Relative amplitude of the low-frequency multiplicative shading field.
    pub shading: f64,
    /// Peak HU of the angular streaks.
    pub streaks: f64,
    /// Standard deviation of additive Gaussian noise in HU.
    pub noise_sigma: f64,
    /// Relative global scale drift; the HU offset drift is `500 × drift`.
    pub drift: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            size: 256,
            seed: 0,
            shading: 0.15,
            streaks: 100.0,
            noise_sigma: 80.0,
            drift: 0.08,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || !self.size.is_multiple_of(2) {
            return Err(GlfcError::config(format!("phantom size {} must be even and >= 8", self.size)));
        }
        for (name, v) in [
            ("shading", self.shading),
            ("streaks", self.streaks),
            ("noise_sigma", self.noise_sigma),
            ("drift", self.drift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GlfcError::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.shading >= 1.0 || self.drift >= 1.0 {
            return Err(GlfcError::config("shading and drift must stay below 1"));
        }
        Ok(())
    }

    /// Same pair geometry with every artifact switched off.
    pub fn clean(self) -> Self {
        PhantomConfig {
            shading: 0.0,
            streaks: 0.0,
            noise_sigma: 0.0,
            drift: 0.0,
            ..self
        }
    }
}

/// One generated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: Volume,
    pub cbct: Volume,
    /// [`LABEL_AIR`], [`LABEL_SOFT`] or [`LABEL_BONE`] per pixel.
    pub labels: Vec<u8>,
}

impl Phantom {
    pub fn labels_volume(&self) -> Volume {
        Volume {
            dims: self.ct.dims.clone(),
            spacing: self.ct.spacing,
            voxels: self.labels.iter().map(|&l| l as f32).collect(),
        }
    }
}

struct Blob {
    x: f64,
    y: f64,
    r: f64,
    amp: f64,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Generates a pair. Pure function of `cfg`.
pub fn gen_phantom_pair(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let s = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rng = &mut rng;

    // head geometry in [-1, 1] image coordinates
    let (cx, cy) = (uniform(rng, -0.04, 0.04), uniform(rng, -0.04, 0.04));
    let (ax, ay) = (uniform(rng, 0.64, 0.72), uniform(rng, 0.78, 0.86));
    let theta = uniform(rng, -0.15, 0.15);
    let (sin, cos) = theta.sin_cos();
    let skull_outer = uniform(rng, 0.93, 0.95);
    let skull_inner = uniform(rng, 0.83, 0.86);
    let skull_phase = uniform(rng, 0.0, std::f64::consts::TAU);
    let scalp_hu = uniform(rng, 30.0, 50.0);
    let brain_hu = uniform(rng, 28.0, 36.0);
    let blobs: Vec<Blob> = (0..6)
        .map(|_| Blob {
            x: uniform(rng, -0.5, 0.5),
            y: uniform(rng, -0.6, 0.6),
            r: uniform(rng, 0.12, 0.3),
            amp: uniform(rng, -18.0, 18.0),
        })
        .collect();
    let vent_dx = uniform(rng, 0.08, 0.14);
    let vent_ry = uniform(rng, 0.14, 0.22);
    let vent_rx = uniform(rng, 0.04, 0.07);
    let vent_hu = uniform(rng, 4.0, 10.0);

    let coord = |i: usize| (2.0 * i as f64 + 1.0) / s as f64 - 1.0;
    let mut ct = vec![0f64; s * s];
    let mut labels = vec![LABEL_AIR; s * s];
    for py in 0..s {
        for px in 0..s {
            let (u, v) = (coord(px) - cx, coord(py) - cy);
            // head frame
            let (hx, hy) = (cos * u + sin * v, -sin * u + cos * v);
            let rho = ((hx / ax).powi(2) + (hy / ay).powi(2)).sqrt();
            let i = py * s + px;
            if rho > 1.0 {
                ct[i] = AIR_HU;
                continue;
            }
            if rho > skull_outer {
                ct[i] = scalp_hu;
                labels[i] = LABEL_SOFT;
            } else if rho > skull_inner {
                let ang = hy.atan2(hx);
                ct[i] = 1000.0 + 180.0 * (3.0 * ang + skull_phase).sin();
                labels[i] = LABEL_BONE;
            } else {
                let mut h = brain_hu;
                for b in &blobs {
                    let d2 = (hx - b.x * ax).powi(2) + (hy - b.y * ay).powi(2);
                    h += b.amp * (-d2 / (2.0 * b.r * b.r)).exp();
                }
                let in_vent = |sx: f64| ((hx - sx) / vent_rx).powi(2) + (hy / vent_ry).powi(2) <= 1.0;
                if in_vent(vent_dx) || in_vent(-vent_dx) {
                    h = vent_hu;
                }
                ct[i] = h.clamp(0.0, 60.0);
                labels[i] = LABEL_SOFT;
            }
        }
    }

    let mut cb = ct.clone();
    if cfg.drift > 0.0 {
        let scale = 1.0 + cfg.drift * uniform(rng, -1.0, 1.0);
        let offset = 500.0 * cfg.drift * uniform(rng, -1.0, 1.0);
        for h in &mut cb {
            *h = (*h - AIR_HU) * scale + AIR_HU + offset;
        }
    }
    if cfg.shading > 0.0 {
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    uniform(rng, 0.2, 1.0),
                    uniform(rng, -0.9, 0.9),
                    uniform(rng, -0.9, 0.9),
                    uniform(rng, 0.0, std::f64::consts::TAU),
                ]
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w[0]).sum();
        for py in 0..s {
            for px in 0..s {
                let (u, v) = (coord(px), coord(py));
                let f: f64 = waves
                    .iter()
                    .map(|w| w[0] * (std::f64::consts::PI * (w[1] * u + w[2] * v) + w[3]).cos())
                    .sum::<f64>()
                    / norm;
                let i = py * s + px;
                cb[i] = (cb[i] - AIR_HU) * (1.0 + cfg.shading * f) + AIR_HU;
            }
        }
    }
    if cfg.streaks > 0.0 {
        let n = rng.random_range(4..=8);
        let width = 1.5 * 2.0 / s as f64;
        let lines: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                let ang = uniform(rng, 0.0, std::f64::consts::PI);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [ang, uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), sign * uniform(rng, 0.5, 1.0)]
            })
            .collect();
        for py in 0..s {
            for px in 0..s {
                let (u, v) = (coord(px), coord(py));
                let i = py * s + px;
                for l in &lines {
                    let (ls, lc) = l[0].sin_cos();
                    // distance to the line through (l[1], l[2]) at angle l[0]
                    let d = (-(u - l[1]) * ls + (v - l[2]) * lc).abs();
                    cb[i] += cfg.streaks * l[3] * (-d * d / (2.0 * width * width)).exp();
                }
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
        for h in &mut cb {
            *h += normal.sample(rng);
        }
    }

    let to_vol = |v: Vec<f64>| Volume {
        dims: vec![s, s],
        spacing: [1.0; 3],
        voxels: v.into_iter().map(|h| h as f32).collect(),
    };
    Ok(Phantom {
        ct: to_vol(ct),
        cbct: to_vol(cb),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strength_is_identity() {
        let cfg = PhantomConfig {
            size: 32,
            seed: 9,
            ..PhantomConfig::default()
        }
        .clean();
        let p = gen_phantom_pair(&cfg).unwrap();
        assert_eq!(p.ct, p.cbct);
    }

    #[test]
    fn deterministic() {
        let cfg = PhantomConfig {
            size: 48,
            seed: 4,
            ..PhantomConfig::default()
        };
        assert_eq!(gen_phantom_pair(&cfg).unwrap(), gen_phantom_pair(&cfg).unwrap());
    }

    #[test]
    fn label_ranges() {
        let p = gen_phantom_pair(&PhantomConfig {
            size: 64,
            seed: 1,
            ..PhantomConfig::default()
        })
        .unwrap();
        for (&h, &l) in p.ct.voxels.iter().zip(&p.labels) {
            match l {
                LABEL_AIR => assert_eq!(h, -1000.0),
                LABEL_SOFT => assert!((0.0..=60.0).contains(&h)),
                _ => assert!(h > 250.0 && h < 1300.0),
            }
        }
        assert!(p.labels.contains(&LABEL_BONE));
    }

    #[test]
    fn odd_size_rejected() {
        let cfg = PhantomConfig {
            size: 33,
            ..PhantomConfig::default()
        };
        assert!(matches!(gen_phantom_pair(&cfg), Err(GlfcError::Config(_))));
    }
}
