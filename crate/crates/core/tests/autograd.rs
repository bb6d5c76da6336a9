use glfc::tensor::{BackwardArgs, Tensor};
use glfc::verify::gradcheck::{check, relative_error, GradCheckOptions};
use glfc::verify::suites::{gradcheck_trials, GradCase, OP_TOLERANCE};
use proptest::prelude::*;
use rand::Rng;

/// Clip whose backward passes the gradient through everywhere, even where
/// the forward saturates.
fn broken_clip(x: &Tensor<f64>, lo: f64, hi: f64) -> Tensor<f64> {
    let data = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
    Tensor::from_op(
        "clip",
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(|a: &BackwardArgs<'_, f64>| vec![Some(a.grad.to_vec())]),
    )
}

#[test]
fn corrupted_clip_gradient_is_caught_and_named() {
    let r = gradcheck_trials("clip", 5, OP_TOLERANCE, 3, |rng| {
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        GradCase::new(vec![(vec![12], v)], |t| Ok(broken_clip(&t[0], -0.5, 0.5)))
    });
    assert!(!r.passed);
    assert_eq!(r.name, "clip");
    assert!(r.max_error > 0.1);
}

#[test]
fn correct_clip_passes_same_harness() {
    let r = gradcheck_trials("clip", 5, OP_TOLERANCE, 3, |rng| {
        let v: Vec<f64> = (0..12)
            .map(|_| loop {
                let x: f64 = rng.random_range(-2.0..2.0);
                if (x.abs() - 0.5).abs() > 0.01 {
                    break x;
                }
            })
            .collect();
        GradCase::new(vec![(vec![12], v)], |t| t[0].clip(-0.5, 0.5))
    });
    assert!(r.passed, "{r:?}");
}

#[test]
fn relative_error_floor_handles_zero_gradients() {
    assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    assert!(relative_error(&[1.0], &[1.0 + 1e-9]) < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn broadcast_add_gradient_sums_over_leading_axes(
        lead in 1usize..4, inner in 1usize..5, seed in any::<u64>()
    ) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let a: Vec<f64> = (0..lead * inner).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..inner).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ta = Tensor::param(&[lead, inner], a).unwrap();
        let tb = Tensor::param(&[inner], b).unwrap();
        ta.add(&tb).unwrap().sum().backward().unwrap();
        prop_assert_eq!(ta.grad().unwrap(), vec![1.0; lead * inner]);
        prop_assert_eq!(tb.grad().unwrap(), vec![lead as f64; inner]);
    }

    #[test]
    fn matmul_gradcheck(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let inputs = vec![(vec![m, k], draw(m * k)), (vec![k, n], draw(k * n))];
        let o = check(&inputs, |t| t[0].matmul(&t[1]), GradCheckOptions { seed, ..Default::default() }).unwrap();
        prop_assert!(o.max_rel_err < OP_TOLERANCE, "{}", o.max_rel_err);
    }

    #[test]
    fn reused_tensor_accumulates_gradient(v in prop::collection::vec(-3.0f64..3.0, 1..16)) {
        let x = Tensor::param(&[v.len()], v.clone()).unwrap();
        x.mul(&x).unwrap().add(&x).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, vi) in g.iter().zip(&v) {
            prop_assert!((gi - (2.0 * vi + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_then_inverse_is_identity(shape in prop::collection::vec(1usize..4, 2..5), seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let x = Tensor::new(&shape, (0..n).map(|i| i as f64).collect()).unwrap();
        let mut perm: Vec<usize> = (0..shape.len()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let y = x.permute(&perm).unwrap().permute(&inv).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert_eq!(y.data(), x.data());
    }
}
