use glfc::io::Volume;
use glfc::metrics::{evaluate_pair, masked_psnr, masked_ssim, region_masks_from_ct, MetricConfig, Region};
use glfc::phantom::{gen_phantom_pair, PhantomConfig, LABEL_BONE};
use proptest::prelude::*;

fn phantom(size: usize, seed: u64) -> glfc::phantom::Phantom {
    gen_phantom_pair(&PhantomConfig {
        size,
        seed,
        ..PhantomConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn region_masks_are_disjoint_and_inside_the_body(seed in any::<u64>()) {
        let p = phantom(48, seed);
        let m = region_masks_from_ct(&p.ct.voxels, 48, 48).unwrap();
        for i in 0..48 * 48 {
            prop_assert!(!(m.soft_tissue[i] && m.bone[i]));
            prop_assert!(!m.soft_tissue[i] || m.full_body[i]);
            prop_assert!(!m.bone[i] || m.full_body[i]);
        }
    }

    #[test]
    fn bone_mask_matches_phantom_bone_label(seed in any::<u64>()) {
        let p = phantom(48, seed);
        let m = region_masks_from_ct(&p.ct.voxels, 48, 48).unwrap();
        for i in 0..48 * 48 {
            prop_assert_eq!(m.bone[i], p.labels[i] == LABEL_BONE, "pixel {}", i);
        }
    }

    #[test]
    fn metrics_are_symmetric_on_a_shared_mask(seed in any::<u64>()) {
        let p = phantom(40, seed);
        let cfg = MetricConfig::default();
        let m = region_masks_from_ct(&p.ct.voxels, 40, 40).unwrap();
        let norm = |v: &[f32]| -> Vec<f64> { v.iter().map(|&h| glfc::losses::hu_to_norm(h as f64)).collect() };
        let (a, b) = (norm(&p.cbct.voxels), norm(&p.ct.voxels));
        let s1 = masked_ssim(&a, &b, &m.full_body, 40, 40, &cfg).unwrap();
        let s2 = masked_ssim(&b, &a, &m.full_body, 40, 40, &cfg).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s1));
        let p1 = masked_psnr(&a, &b, &m.full_body, &cfg).unwrap();
        let p2 = masked_psnr(&b, &a, &m.full_body, &cfg).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-12);
    }
}

#[test]
fn identical_volumes_score_perfectly() {
    let p = phantom(64, 2);
    let r = evaluate_pair(&p.ct, &p.ct, &MetricConfig::default()).unwrap();
    for reg in Region::ALL {
        let s = r.region(reg).unwrap();
        assert_eq!(s.ssim, 1.0);
        assert!(s.psnr.is_infinite());
        assert_eq!(s.mae_hu, 0.0);
    }
    let full = r.full().voxels;
    assert_eq!(full, r.region(Region::SoftTissue).unwrap().voxels + r.region(Region::Bone).unwrap().voxels);
}

#[test]
fn default_phantom_cbct_is_degraded_but_recognizable() {
    let p = phantom(256, 0);
    let s = evaluate_pair(&p.cbct, &p.ct, &MetricConfig::default()).unwrap().full().ssim;
    assert!(s > 0.4 && s < 0.95, "{s}");
}

#[test]
fn more_noise_lowers_ssim() {
    let score = |sigma: f64| {
        let p = gen_phantom_pair(&PhantomConfig {
            size: 96,
            seed: 4,
            noise_sigma: sigma,
            ..PhantomConfig::default().clean()
        })
        .unwrap();
        evaluate_pair(&p.cbct, &p.ct, &MetricConfig::default()).unwrap().full().ssim
    };
    // sigmas in normalized units of 0.05 and 0.2
    let (lo, hi) = (score(0.05 * 2012.0), score(0.2 * 2012.0));
    assert!(lo > hi, "{lo} vs {hi}");
}

#[test]
fn mismatched_dims_are_rejected() {
    let a = Volume::new(vec![8, 8], vec![0.0; 64]).unwrap();
    let b = Volume::new(vec![8, 4], vec![0.0; 32]).unwrap();
    assert!(evaluate_pair(&a, &b, &MetricConfig::default()).is_err());
}

#[test]
fn all_air_reference_is_an_error() {
    let a = Volume::new(vec![8, 8], vec![-1000.0; 64]).unwrap();
    assert!(evaluate_pair(&a, &a, &MetricConfig::default()).is_err());
}
