//! Named verification checks shared by the CLI and the test suites.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, GradCheckOptions};
use super::oracle::scan_by_summation;
use crate::error::{GlfcError, Result};
use crate::io::{decode_checkpoint, decode_gvol, encode_checkpoint, encode_gvol, Volume};
use crate::losses::{hu_to_norm, mcl_loss, window_renormalize, IntensityWindow};
use crate::model::{random_vss_block, Meunet, MeunetConfig, ParamStore, Variant, VssBlock, VSS_BLOCK_TENSORS};
use crate::ssm::{discretize, selective_scan, ss2d, ScanDirection, Ss2dOutput, SsmParams};
use crate::tensor::Tensor;

/// Relative-error bound for individual ops and blocks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Relative-error bound for the whole network.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Absolute bound for scan-versus-oracle agreement.
pub const SCAN_ORACLE_TOLERANCE: f64 = 1e-10;
/// Bound on `|A_bar − 1|` and `|B_bar|` at a vanishing step.
pub const DISCRETIZE_LIMIT_TOLERANCE: f64 = 1e-9;
/// Allowed distance of the normalized soft-window bounds from the published
/// constants.
pub const WINDOW_CONSTANT_TOLERANCE: f64 = 5e-4;
/// Seeded trials per op.
pub const OP_TRIALS: usize = 20;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (meaning depends on the check).
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckReport {
    fn new(name: impl Into<String>, max_error: f64, tolerance: f64, detail: String) -> Self {
        CheckReport {
            name: name.into(),
            passed: max_error < tolerance,
            max_error,
            tolerance,
            detail,
        }
    }

    fn failed(name: impl Into<String>, detail: String) -> Self {
        CheckReport {
            name: name.into(),
            passed: false,
            max_error: f64::NAN,
            tolerance: f64::NAN,
            detail,
        }
    }
}

/// Fixed-width pass/fail table.
pub fn render_reports(reports: &[CheckReport]) -> String {
    let w = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w$}  {:<6}  {:>10}  {:>10}  detail\n", "check", "result", "max err", "tol");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<w$}  {:<6}  {:>10.3e}  {:>10.1e}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_error,
            r.tolerance,
            r.detail
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    let _ = writeln!(s, "{} checks, {} failed", reports.len(), failed);
    s
}

type CheckFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

/// One random gradient-check instance.
pub struct GradCase {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub f: CheckFn,
    pub max_coords: Option<usize>,
    pub step: f64,
}

impl GradCase {
    pub fn new(inputs: Vec<(Vec<usize>, Vec<f64>)>, f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> Self {
        GradCase {
            inputs,
            f: Box::new(f),
            max_coords: None,
            step: 1e-5,
        }
    }

    fn sampled(mut self, coords: usize) -> Self {
        self.max_coords = Some(coords);
        self
    }
}

/// Runs `trials` seeded instances from `make` and reports the worst error.
pub fn gradcheck_trials(
    name: &str,
    trials: usize,
    tolerance: f64,
    seed: u64,
    make: impl Fn(&mut ChaCha8Rng) -> GradCase,
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut coords = 0;
    for trial in 0..trials {
        let case = make(&mut rng);
        let opts = GradCheckOptions {
            step: case.step,
            max_coords: case.max_coords,
            seed: seed.wrapping_add(trial as u64),
        };
        match check(&case.inputs, &case.f, opts) {
            Ok(o) => {
                coords += o.coords_checked;
                if o.max_rel_err > worst || o.max_rel_err.is_nan() {
                    worst = o.max_rel_err;
                }
            }
            Err(e) => return CheckReport::failed(name, format!("trial {trial}: {e}")),
        }
    }
    let mut r = CheckReport::new(name, worst, tolerance, format!("{trials} trials, {coords} coords"));
    if worst.is_nan() {
        r.passed = false;
    }
    r
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Uniform draws kept at least `margin` away from every kink.
fn away_from(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, kinks: &[f64], margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() >= margin) {
                break v;
            }
        })
        .collect()
}

fn rand_shape(rng: &mut ChaCha8Rng, rank_lo: usize, rank_hi: usize, max: usize) -> Vec<usize> {
    let rank = rng.random_range(rank_lo..=rank_hi);
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

fn input(shape: Vec<usize>, vals: Vec<f64>) -> (Vec<usize>, Vec<f64>) {
    (shape, vals)
}

fn dense(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), uniform(rng, n, lo, hi))
}

fn binary_case(rng: &mut ChaCha8Rng, op: fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>) -> GradCase {
    let xs = rand_shape(rng, 1, 3, 4);
    let ys = if rng.random_bool(0.5) {
        xs.clone()
    } else {
        xs[rng.random_range(0..xs.len())..].to_vec()
    };
    let (a, b) = (dense(rng, &xs, -2.0, 2.0), dense(rng, &ys, -2.0, 2.0));
    // swap so broadcasting is exercised on both sides
    let inputs = if rng.random_bool(0.5) { vec![a, b] } else { vec![b, a] };
    GradCase::new(inputs, move |t| op(&t[0], &t[1]))
}

fn unary_case(rng: &mut ChaCha8Rng, lo: f64, hi: f64, kinks: &[f64], f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> + 'static) -> GradCase {
    let s = rand_shape(rng, 1, 3, 5);
    let n = s.iter().product();
    GradCase::new(vec![input(s, away_from(rng, n, lo, hi, kinks, 0.01))], move |t| f(&t[0]))
}

fn random_ssm(rng: &mut ChaCha8Rng, e: usize, d: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    vec![
        dense(rng, &[e, d], -0.5, 1.5),
        dense(rng, &[e, e], -0.8, 0.8),
        dense(rng, &[e], -2.0, 0.5),
        dense(rng, &[e, d], -1.0, 1.0),
        dense(rng, &[e, d], -1.0, 1.0),
        dense(rng, &[e], -1.0, 1.0),
    ]
}

fn ssm_from(t: &[Tensor<f64>]) -> SsmParams<f64> {
    SsmParams {
        a_log: t[0].clone(),
        w_delta: t[1].clone(),
        delta_bias: t[2].clone(),
        w_b: t[3].clone(),
        w_c: t[4].clone(),
        d_skip: t[5].clone(),
    }
}

/// Ops covered by [`gradcheck_op`].
pub const OP_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "exp",
    "tanh",
    "silu",
    "softplus",
    "leaky_relu",
    "clip",
    "scale",
    "shift",
    "matmul",
    "linear",
    "conv2d",
    "depthwise_conv3x3",
    "maxpool2",
    "upsample2",
    "instance_norm",
    "layer_norm",
    "reshape",
    "permute",
    "gather_axis1",
    "concat",
    "sum",
    "mean",
    "l1_mean",
    "selective_scan",
    "ss2d",
    "vss_block",
    "window_renormalize",
    "mcl_loss",
    "meunet",
];

fn make_case(name: &str, rng: &mut ChaCha8Rng) -> GradCase {
    match name {
        "add" => binary_case(rng, Tensor::add),
        "sub" => binary_case(rng, Tensor::sub),
        "mul" => binary_case(rng, Tensor::mul),
        "exp" => unary_case(rng, -2.0, 2.0, &[], |x| Ok(x.exp())),
        "tanh" => unary_case(rng, -3.0, 3.0, &[], |x| Ok(x.tanh())),
        "silu" => unary_case(rng, -4.0, 4.0, &[], |x| Ok(x.silu())),
        "softplus" => unary_case(rng, -4.0, 4.0, &[], |x| Ok(x.softplus())),
        "leaky_relu" => unary_case(rng, -2.0, 2.0, &[0.0], |x| Ok(x.leaky_relu())),
        "clip" => {
            let lo = rng.random_range(-1.0..0.0);
            let hi = lo + rng.random_range(0.2..1.5);
            unary_case(rng, -2.0, 2.0, &[lo, hi], move |x| x.clip(lo, hi))
        }
        "scale" => {
            let c = rng.random_range(-3.0..3.0);
            unary_case(rng, -2.0, 2.0, &[], move |x| Ok(x.scale(c)))
        }
        "shift" => {
            let c = rng.random_range(-3.0..3.0);
            unary_case(rng, -2.0, 2.0, &[], move |x| Ok(x.shift(c)).and_then(|y| y.mul(x)))
        }
        "matmul" => {
            let (m, k, n) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=5));
            GradCase::new(vec![dense(rng, &[m, k], -1.0, 1.0), dense(rng, &[k, n], -1.0, 1.0)], |t| {
                t[0].matmul(&t[1])
            })
        }
        "linear" => {
            let (i, o) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let mut xs = rand_shape(rng, 0, 2, 4);
            xs.push(i);
            let with_bias = rng.random_bool(0.5);
            let mut inputs = vec![dense(rng, &xs, -1.0, 1.0), dense(rng, &[i, o], -1.0, 1.0)];
            if with_bias {
                inputs.push(dense(rng, &[o], -1.0, 1.0));
            }
            GradCase::new(inputs, |t| t[0].linear(&t[1], t.get(2)))
        }
        "conv2d" => {
            let (b, ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
            let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
            let k = [1, 3, 5][rng.random_range(0..3)];
            GradCase::new(
                vec![
                    dense(rng, &[b, ci, h, w], -1.0, 1.0),
                    dense(rng, &[co, ci, k, k], -1.0, 1.0),
                    dense(rng, &[co], -1.0, 1.0),
                ],
                |t| t[0].conv2d(&t[1], &t[2]),
            )
        }
        "depthwise_conv3x3" => {
            let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
            let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
            GradCase::new(
                vec![
                    dense(rng, &[b, c, h, w], -1.0, 1.0),
                    dense(rng, &[c, 3, 3], -1.0, 1.0),
                    dense(rng, &[c], -1.0, 1.0),
                ],
                |t| t[0].depthwise_conv3x3(&t[1], &t[2]),
            )
        }
        "maxpool2" => {
            let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=2));
            let (h, w) = (2 * rng.random_range(1..=3), 2 * rng.random_range(1..=3));
            let n = b * c * h * w;
            // distinct values with gaps far above the step
            let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
            v.shuffle(rng);
            GradCase::new(vec![input(vec![b, c, h, w], v)], |t| t[0].maxpool2())
        }
        "upsample2" => {
            let s = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3)];
            GradCase::new(vec![dense(rng, &s, -1.0, 1.0)], |t| t[0].upsample2())
        }
        "instance_norm" => {
            let (b, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
            let (h, w) = (rng.random_range(1..=4), rng.random_range(2..=4));
            GradCase::new(
                vec![
                    dense(rng, &[b, c, h, w], -2.0, 2.0),
                    dense(rng, &[c], 0.5, 1.5),
                    dense(rng, &[c], -0.5, 0.5),
                ],
                |t| t[0].instance_norm(&t[1], &t[2]),
            )
        }
        "layer_norm" => {
            let e = rng.random_range(2..=6);
            let mut s = rand_shape(rng, 0, 2, 3);
            s.push(e);
            GradCase::new(
                vec![dense(rng, &s, -2.0, 2.0), dense(rng, &[e], 0.5, 1.5), dense(rng, &[e], -0.5, 0.5)],
                |t| t[0].layer_norm(&t[1], &t[2]),
            )
        }
        "reshape" => {
            let (a, b, c) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
            GradCase::new(vec![dense(rng, &[a, b, c], -1.0, 1.0)], move |t| {
                t[0].reshape(&[c * a, b])?.mul(&t[0].reshape(&[c * a, b])?)
            })
        }
        "permute" => {
            let s = rand_shape(rng, 2, 4, 3);
            let mut perm: Vec<usize> = (0..s.len()).collect();
            perm.shuffle(rng);
            GradCase::new(vec![dense(rng, &s, -1.0, 1.0)], move |t| t[0].permute(&perm))
        }
        "gather_axis1" => {
            let (b, l, e) = (rng.random_range(1..=2), rng.random_range(1..=6), rng.random_range(1..=3));
            let mut order: Vec<usize> = (0..l).collect();
            order.shuffle(rng);
            GradCase::new(vec![dense(rng, &[b, l, e], -1.0, 1.0)], move |t| t[0].gather_axis1(&order))
        }
        "concat" => {
            let base = rand_shape(rng, 1, 3, 3);
            let axis = rng.random_range(0..base.len());
            let parts = rng.random_range(2..=3);
            let inputs = (0..parts)
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = rng.random_range(1..=3);
                    dense(rng, &s, -1.0, 1.0)
                })
                .collect();
            GradCase::new(inputs, move |t| Tensor::concat(t, axis))
        }
        "sum" => {
            let s = rand_shape(rng, 1, 3, 4);
            GradCase::new(vec![dense(rng, &s, -1.0, 1.0)], |t| Ok(t[0].mul(&t[0])?.sum()))
        }
        "mean" => {
            let s = rand_shape(rng, 1, 3, 4);
            GradCase::new(vec![dense(rng, &s, -1.0, 1.0)], |t| Ok(t[0].mul(&t[0])?.mean()))
        }
        "l1_mean" => {
            let s = rand_shape(rng, 1, 3, 4);
            let n: usize = s.iter().product();
            let a = uniform(rng, n, -1.0, 1.0);
            let b: Vec<f64> = a
                .iter()
                .map(|&x| {
                    let d = rng.random_range(0.01..0.5);
                    if rng.random_bool(0.5) {
                        x + d
                    } else {
                        x - d
                    }
                })
                .collect();
            GradCase::new(vec![input(s.clone(), a), input(s, b)], |t| t[0].l1_mean(&t[1]))
        }
        "selective_scan" => {
            let (b, l, e, d) = (
                rng.random_range(1..=2),
                rng.random_range(1..=8),
                rng.random_range(1..=4),
                rng.random_range(1..=4),
            );
            let mut inputs = vec![dense(rng, &[b, l, e], -1.0, 1.0)];
            inputs.extend(random_ssm(rng, e, d));
            GradCase::new(inputs, |t| selective_scan(&t[0], &ssm_from(&t[1..7])))
        }
        "ss2d" => {
            let (b, g, e, d) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(2..=3), rng.random_range(1..=3));
            let mut inputs = vec![dense(rng, &[b, g * g, e], -1.0, 1.0)];
            for _ in 0..4 {
                inputs.extend(random_ssm(rng, e, d));
            }
            inputs.push(dense(rng, &[e], 0.5, 1.5));
            inputs.push(dense(rng, &[e], -0.5, 0.5));
            inputs.push(dense(rng, &[e, e], -1.0, 1.0));
            inputs.push(dense(rng, &[e], -0.5, 0.5));
            GradCase::new(inputs, |t| {
                let params = std::array::from_fn(|k| ssm_from(&t[1 + 6 * k..7 + 6 * k]));
                let out = Ss2dOutput {
                    norm_gamma: t[25].clone(),
                    norm_beta: t[26].clone(),
                    proj_w: t[27].clone(),
                    proj_b: t[28].clone(),
                };
                ss2d(&t[0], &params, &out)
            })
        }
        "vss_block" => {
            let (b, g, e, d) = (rng.random_range(1..=2), rng.random_range(2..=3), rng.random_range(2..=4), rng.random_range(1..=3));
            let block: VssBlock<f64> = random_vss_block(e, d, rng);
            let mut inputs = vec![dense(rng, &[b, g * g, e], -1.0, 1.0)];
            inputs.extend(block.tensors().iter().map(|t| (t.shape().to_vec(), t.to_vec())));
            GradCase::new(inputs, |t| VssBlock::from_slice(&t[1..1 + VSS_BLOCK_TENSORS]).forward(&t[0])).sampled(24)
        }
        "window_renormalize" => {
            let w = [IntensityWindow::GLOBAL, IntensityWindow::SOFT, IntensityWindow::BONE][rng.random_range(0..3)];
            unary_case(rng, -1.1, 1.1, &[w.lo, w.hi], move |x| window_renormalize(x, &w))
        }
        "mcl_loss" => {
            let s = [rng.random_range(1..=2), 1, rng.random_range(2..=5), rng.random_range(2..=5)];
            let n: usize = s.iter().product();
            let kinks = [-1.0, -0.615, -0.368, 1.0];
            let y = away_from(rng, n, -1.0, 1.0, &kinks, 0.01);
            // half the predictions land in another window, including clipped ones
            let p: Vec<f64> = y
                .iter()
                .map(|&v| loop {
                    let q = if rng.random_bool(0.5) {
                        v + rng.random_range(-0.1..0.1)
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                    if (q - v).abs() >= 0.01 && kinks.iter().all(|k| (q - k).abs() >= 0.01) {
                        break q;
                    }
                })
                .collect();
            GradCase::new(vec![input(s.to_vec(), p), input(s.to_vec(), y)], |t| Ok(mcl_loss(&t[0], &t[1])?.total))
        }
        "meunet" => meunet_case(rng),
        _ => unreachable!("unknown op {name}"),
    }
}

/// Miniature network with every parameter randomized (including the
/// zero-initialized projections, so every path carries gradient).
fn meunet_case(rng: &mut ChaCha8Rng) -> GradCase {
    let seed = rng.random();
    let mut model = Meunet::<f64>::new(MeunetConfig::miniature(Variant::Meunet), seed).expect("miniature config");
    for i in 0..model.params().len() {
        let vals = model.params_mut().values_mut(i);
        if vals.iter().all(|&v| v == 0.0) {
            for v in vals {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let n = model.config().input_size;
    let mut inputs = vec![dense(rng, &[1, 1, n, n], -1.0, 1.0)];
    inputs.extend(model.params().iter().map(|(_, s, v)| (s.to_vec(), v.to_vec())));
    let mut case = GradCase::new(inputs, move |t| model.forward_with(&t[1..], &t[0])).sampled(3);
    case.step = 1e-6;
    case
}

/// Gradient check of one named op over its seeded trials.
pub fn gradcheck_op(name: &str) -> Result<CheckReport> {
    let Some(pos) = OP_NAMES.iter().position(|&n| n == name) else {
        return Err(GlfcError::config(format!(
            "unknown op `{name}`; known ops: {}",
            OP_NAMES.join(", ")
        )));
    };
    let (trials, tol) = match name {
        "meunet" => (2, END_TO_END_TOLERANCE),
        "vss_block" | "ss2d" => (8, OP_TOLERANCE),
        _ => (OP_TRIALS, OP_TOLERANCE),
    };
    Ok(gradcheck_trials(name, trials, tol, 1000 + pos as u64, |rng| make_case(name, rng)))
}

/// Every op's gradient check, plus the scan oracle checks for
/// `selective_scan`.
pub fn suite_for_op(name: &str) -> Result<Vec<CheckReport>> {
    let mut v = vec![gradcheck_op(name)?];
    if name == "selective_scan" {
        v.push(scan_oracle_check(100, 7));
        v.push(discretization_limit_check());
    }
    Ok(v)
}

pub fn gradcheck_all() -> Vec<CheckReport> {
    OP_NAMES
        .iter()
        .map(|n| gradcheck_op(n).expect("listed op"))
        .collect()
}

/// Fused scan against [`scan_by_summation`] on `cases` random problems with
/// `L ≤ 64`, `D ≤ 8`, `E ≤ 4`.
pub fn scan_oracle_check(cases: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (b, l, e, d) = (
            rng.random_range(1..=2),
            rng.random_range(1..=64),
            rng.random_range(1..=4),
            rng.random_range(1..=8),
        );
        let raw = random_ssm(&mut rng, e, d);
        let t: Vec<Tensor<f64>> = raw
            .iter()
            .map(|(s, v)| Tensor::new(s, v.clone()).expect("shape"))
            .collect();
        let p = ssm_from(&t);
        let x = uniform(&mut rng, b * l * e, -1.0, 1.0);
        let y = match selective_scan(&Tensor::new(&[b, l, e], x.clone()).expect("shape"), &p) {
            Ok(y) => y,
            Err(err) => return CheckReport::failed("scan_oracle", format!("case {case}: {err}")),
        };
        for n in 0..b {
            let want = scan_by_summation(&x[n * l * e..(n + 1) * l * e], l, &p);
            let got = &y.data()[n * l * e..(n + 1) * l * e];
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    CheckReport::new("scan_oracle", worst, SCAN_ORACLE_TOLERANCE, format!("{cases} cases, max abs diff"))
}

/// `Δ → 0` limit of the discretization: `A_bar → 1`, `B_bar → 0`.
pub fn discretization_limit_check() -> CheckReport {
    let mut worst = 0.0f64;
    for a in [-0.01, -1.0, -8.0, -100.0] {
        for b in [-3.0, 0.5, 1.0, 7.0] {
            match discretize(1e-12f64, a, b) {
                Ok((ab, bb)) => worst = worst.max((ab - 1.0).abs()).max(bb.abs()),
                Err(e) => return CheckReport::failed("discretize_limit", e.to_string()),
            }
        }
    }
    CheckReport::new(
        "discretize_limit",
        worst,
        DISCRETIZE_LIMIT_TOLERANCE,
        "delta=1e-12, |A_bar-1| and |B_bar|".into(),
    )
}

/// Normalized soft-window bounds against the published window constants.
pub fn window_constant_check() -> CheckReport {
    let lo = hu_to_norm(-250.0);
    let hi = hu_to_norm(250.0);
    let err = (lo - IntensityWindow::SOFT.lo).abs().max((hi - IntensityWindow::SOFT.hi).abs());
    CheckReport::new(
        "window_constants",
        err,
        WINDOW_CONSTANT_TOLERANCE,
        format!("hu_to_norm(-250)={lo:.6}, hu_to_norm(250)={hi:.6}"),
    )
}

fn random_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

/// Random volume for round-trip checks; values cover the whole finite f32 range.
pub fn random_volume(rng: &mut ChaCha8Rng) -> Volume {
    let rank = rng.random_range(2..=3);
    let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=9)).collect();
    let n = dims.iter().product();
    Volume {
        dims,
        spacing: std::array::from_fn(|_| rng.random_range(0.1f32..4.0)),
        voxels: (0..n).map(|_| random_f32(rng)).collect(),
    }
}

/// Random named tensors for round-trip checks.
pub fn random_store(rng: &mut ChaCha8Rng) -> ParamStore<f32> {
    let mut s = ParamStore::default();
    for i in 0..rng.random_range(0..6) {
        let shape = rand_shape(rng, 0, 4, 4);
        let n = shape.iter().product();
        let name = if rng.random_bool(0.3) {
            format!("blöck{i}.γ")
        } else {
            format!("layer{i}.weight")
        };
        s.push(name, shape, (0..n).map(|_| random_f32(rng)).collect());
    }
    s
}

/// Bit-exact GVOL and GCKPT1 round trips.
pub fn format_roundtrip_check(cases: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    let mut first = String::new();
    for case in 0..cases {
        let v = random_volume(&mut rng);
        let ok = encode_gvol(&v)
            .and_then(|b| decode_gvol(&b))
            .map(|back| {
                back.dims == v.dims
                    && back.spacing.map(f32::to_bits) == v.spacing.map(f32::to_bits)
                    && back.voxels.iter().map(|x| x.to_bits()).eq(v.voxels.iter().map(|x| x.to_bits()))
            })
            .unwrap_or(false);
        let s = random_store(&mut rng);
        let ck_ok = decode_checkpoint(&encode_checkpoint(&s))
            .map(|recs| {
                recs.len() == s.len()
                    && recs.iter().zip(s.iter()).all(|((n, sh, v), (n2, sh2, v2))| {
                        n == n2 && sh == sh2 && v.iter().map(|x| x.to_bits()).eq(v2.iter().map(|x| x.to_bits()))
                    })
            })
            .unwrap_or(false);
        if !(ok && ck_ok) {
            mismatches += 1;
            if first.is_empty() {
                first = format!("first failure in case {case}");
            }
        }
    }
    CheckReport::new(
        "format_roundtrip",
        mismatches as f64,
        0.5,
        format!("{cases} volumes + {cases} checkpoints, {mismatches} mismatches {first}"),
    )
}

/// A corrupted file and the offset its error must report.
pub struct CorruptFixture {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    pub offset: u64,
    pub checkpoint: bool,
}

fn put_u32(b: &mut [u8], at: usize, v: u32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

/// Twenty corrupted GVOL / GCKPT1 files with known error offsets.
pub fn corrupt_fixtures() -> Vec<CorruptFixture> {
    // 3×2 volume: header 32 bytes, payload 32..56
    let vol = Volume::new(vec![3, 2], vec![-1000.0, 0.0, 40.0, 1000.0, 3000.0, -5.0]).expect("valid");
    let g = encode_gvol(&vol).expect("valid");
    let gv = |name, f: &dyn Fn(&mut Vec<u8>), offset| {
        let mut b = g.clone();
        f(&mut b);
        CorruptFixture {
            name,
            bytes: b,
            offset,
            checkpoint: false,
        }
    };
    // tensors "a" [2] and "bb" [1,2]: a at 10..31, bb at 31..57
    let mut s = ParamStore::default();
    s.push("a".into(), vec![2], vec![1.0, 2.0]);
    s.push("bb".into(), vec![1, 2], vec![3.0, 4.0]);
    let c = encode_checkpoint(&s);
    let ck = |name, f: &dyn Fn(&mut Vec<u8>), offset| {
        let mut b = c.clone();
        f(&mut b);
        CorruptFixture {
            name,
            bytes: b,
            offset,
            checkpoint: true,
        }
    };
    vec![
        gv("gvol bad magic", &|b| b[..4].copy_from_slice(b"XXXX"), 0),
        gv("gvol rank 4", &|b| put_u32(b, 4, 4), 4),
        gv("gvol rank 1", &|b| put_u32(b, 4, 1), 4),
        gv("gvol zero extent", &|b| put_u32(b, 8, 0), 8),
        gv("gvol unknown dtype", &|b| put_u32(b, 16, 2), 16),
        gv("gvol nan spacing", &|b| b[20..24].copy_from_slice(&f32::NAN.to_le_bytes()), 20),
        gv("gvol negative spacing", &|b| b[28..32].copy_from_slice(&(-1.0f32).to_le_bytes()), 28),
        gv("gvol truncated payload", &|b| b.truncate(53), 53),
        gv("gvol truncated header", &|b| b.truncate(10), 10),
        gv("gvol trailing byte", &|b| b.push(7), 56),
        gv("gvol nan voxel", &|b| b[40..44].copy_from_slice(&f32::NAN.to_le_bytes()), 40),
        ck("ckpt bad magic", &|b| b[..6].copy_from_slice(b"GCKPT2"), 0),
        ck("ckpt absurd count", &|b| put_u32(b, 6, 1000), 6),
        ck("ckpt non-utf8 name", &|b| b[14] = 0xff, 14),
        ck("ckpt zero extent", &|b| put_u32(b, 19, 0), 19),
        ck("ckpt truncated payload", &|b| b.truncate(56), 56),
        ck("ckpt trailing byte", &|b| b.push(0), 57),
        ck("ckpt rank 9", &|b| put_u32(b, 15, 9), 15),
        ck("ckpt infinite value", &|b| b[23..27].copy_from_slice(&f32::INFINITY.to_le_bytes()), 23),
        ck("ckpt name overruns file", &|b| put_u32(b, 31, 1000), 57),
    ]
}

/// Each fixture must fail with a format error at its known offset.
pub fn corrupt_fixture_check() -> CheckReport {
    let fixtures = corrupt_fixtures();
    let mut wrong = Vec::new();
    for f in &fixtures {
        let res = if f.checkpoint {
            decode_checkpoint(&f.bytes).map(|_| ())
        } else {
            decode_gvol(&f.bytes).map(|_| ())
        };
        match res {
            Err(GlfcError::Format { offset, .. }) if offset == f.offset => {}
            other => wrong.push(format!("{}: {:?}", f.name, other.err())),
        }
    }
    CheckReport::new(
        "corrupt_files",
        wrong.len() as f64,
        0.5,
        if wrong.is_empty() {
            format!("{} fixtures, all positioned format errors", fixtures.len())
        } else {
            wrong.join("; ")
        },
    )
}

/// Scan directions visit every grid cell exactly once.
fn direction_check() -> CheckReport {
    let mut bad = 0;
    for side in 1..=6 {
        for d in ScanDirection::ALL {
            let mut o = d.order(side);
            o.sort_unstable();
            if o != (0..side * side).collect::<Vec<_>>() {
                bad += 1;
            }
        }
    }
    CheckReport::new("scan_directions", bad as f64, 0.5, "orders are permutations".into())
}

/// Everything except the full op gradient sweep.
pub fn selftest() -> Vec<CheckReport> {
    vec![
        window_constant_check(),
        scan_oracle_check(100, 7),
        discretization_limit_check(),
        direction_check(),
        format_roundtrip_check(100, 11),
        corrupt_fixture_check(),
        gradcheck_op("selective_scan").expect("listed"),
        gradcheck_op("mcl_loss").expect("listed"),
        gradcheck_op("vss_block").expect("listed"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_op_is_config_error() {
        assert!(matches!(gradcheck_op("fft"), Err(GlfcError::Config(_))));
    }

    #[test]
    fn fixtures_are_positioned() {
        let r = corrupt_fixture_check();
        assert!(r.passed, "{}", r.detail);
        assert_eq!(corrupt_fixtures().len(), 20);
    }

    #[test]
    fn window_constant_report_matches_mapping() {
        let r = window_constant_check();
        assert!((hu_to_norm(-250.0) - IntensityWindow::SOFT.lo).abs() <= WINDOW_CONSTANT_TOLERANCE);
        let hi_err = (hu_to_norm(250.0) - IntensityWindow::SOFT.hi).abs();
        assert!(r.max_error >= hi_err);
        assert_eq!(r.passed, r.max_error <= WINDOW_CONSTANT_TOLERANCE);
    }
}
