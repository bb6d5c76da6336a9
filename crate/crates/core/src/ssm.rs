//! Selective state-space scan and its four-direction 2D variant.
//!
//! Each channel `e` carries a diagonal state of size `D`:
//!
//! ```text
//! A_bar = exp(delta * A)          B_bar = (exp(delta * A) - 1) / A * B
//! h_t   = A_bar_t * h_{t-1} + B_bar_t * x_t
//! y_t   = <C_t, h_t> + D_skip * x_t
//! ```
//!
//! `delta`, `B` and `C` are computed from the current token; `A` and `D_skip`
//! are input independent. `A = -exp(A_log)` keeps every decay strictly
//! inside `(0, 1)` whenever `delta > 0`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{GlfcError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Zero-order-hold discretization of one (channel, state) pair.
///
/// Returns `(A_bar, B_bar)`. `a` must be strictly negative and `delta`
/// non-negative.
pub fn discretize<T: Real>(delta: T, a: T, b: T) -> Result<(T, T)> {
    if !(a < T::zero()) {
        return Err(GlfcError::contract(format!(
            "state matrix entry must be negative, got {a}"
        )));
    }
    if delta < T::zero() || !delta.is_finite() {
        return Err(GlfcError::contract(format!("step size must be >= 0, got {delta}")));
    }
    let z = delta * a;
    Ok((z.exp(), z.exp_m1() / a * b))
}

/// `d/da [expm1(delta*a)/a]`, with a series branch where the closed form
/// cancels catastrophically.
fn dfactor_da<T: Real>(delta: T, a: T) -> T {
    let z = delta * a;
    if z.abs() < T::from_real(1e-4) {
        let (half, third, eighth) = (T::from_real(0.5), T::from_real(1.0 / 3.0), T::from_real(0.125));
        delta * delta * (half + z * third + z * z * eighth)
    } else {
        (z * z.exp() - z.exp_m1()) / (a * a)
    }
}

fn dims3(t: &Tensor<impl Real>, what: &str) -> Result<[usize; 3]> {
    match *t.shape() {
        [b, l, e] => Ok([b, l, e]),
        _ => Err(GlfcError::shape(format!("{what} must be [B,L,*], got {:?}", t.shape()))),
    }
}

/// Fused recurrence over already-projected inputs.
///
/// Shapes: `u`, `delta`: `[B,L,E]`; `a`: `[E,D]`; `b`, `c`: `[B,L,D]`;
/// `d_skip`: `[E]`. Returns `[B,L,E]`.
pub fn scan_projected<T: Real>(
    u: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [nb, l, e] = dims3(u, "scan input")?;
    let &[ea, d] = a.shape() else {
        return Err(GlfcError::shape(format!("A must be [E,D], got {:?}", a.shape())));
    };
    if delta.shape() != u.shape()
        || ea != e
        || b.shape() != [nb, l, d]
        || c.shape() != [nb, l, d]
        || d_skip.shape() != [e]
    {
        return Err(GlfcError::shape(format!(
            "scan operands disagree: u {:?} delta {:?} A {:?} B {:?} C {:?} D_skip {:?}",
            u.shape(),
            delta.shape(),
            a.shape(),
            b.shape(),
            c.shape(),
            d_skip.shape()
        )));
    }
    if let Some(bad) = a.data().iter().find(|&&v| !(v < T::zero())) {
        return Err(GlfcError::contract(format!(
            "state matrix entries must be negative, found {bad}"
        )));
    }
    if let Some(bad) = delta.data().iter().find(|&&v| !(v >= T::zero())) {
        return Err(GlfcError::contract(format!("step sizes must be >= 0, found {bad}")));
    }

    let (ud, dd, ad, bd, cd, sd) = (u.data(), delta.data(), a.data(), b.data(), c.data(), d_skip.data());
    let mut out = vec![T::zero(); nb * l * e];
    let mut h = vec![T::zero(); d];
    for n in 0..nb {
        for ch in 0..e {
            h.fill(T::zero());
            let arow = &ad[ch * d..(ch + 1) * d];
            for t in 0..l {
                let i = (n * l + t) * e + ch;
                let (dt, ut) = (dd[i], ud[i]);
                let bt = &bd[(n * l + t) * d..(n * l + t + 1) * d];
                let ct = &cd[(n * l + t) * d..(n * l + t + 1) * d];
                let mut y = T::zero();
                for s in 0..d {
                    let z = dt * arow[s];
                    h[s] = z.exp() * h[s] + z.exp_m1() / arow[s] * bt[s] * ut;
                    y += ct[s] * h[s];
                }
                out[i] = y + sd[ch] * ut;
            }
        }
    }

    Ok(Tensor::from_op(
        "selective_scan",
        vec![nb, l, e],
        out,
        vec![u.clone(), delta.clone(), a.clone(), b.clone(), c.clone(), d_skip.clone()],
        Box::new(move |args| {
            let ins = args.inputs;
            let (ud, dd, ad, bd, cd, sd) = (
                ins[0].data(),
                ins[1].data(),
                ins[2].data(),
                ins[3].data(),
                ins[4].data(),
                ins[5].data(),
            );
            let g = args.grad;
            let mut gu = vec![T::zero(); nb * l * e];
            let mut gdelta = vec![T::zero(); nb * l * e];
            let mut ga = vec![T::zero(); e * d];
            let mut gb = vec![T::zero(); nb * l * d];
            let mut gc = vec![T::zero(); nb * l * d];
            let mut gs = vec![T::zero(); e];
            let mut hs = vec![T::zero(); l * d];
            let mut gh = vec![T::zero(); d];
            for n in 0..nb {
                for ch in 0..e {
                    let arow = &ad[ch * d..(ch + 1) * d];
                    // replay the forward states for this channel
                    let mut prev = vec![T::zero(); d];
                    for t in 0..l {
                        let i = (n * l + t) * e + ch;
                        let bt = &bd[(n * l + t) * d..(n * l + t + 1) * d];
                        for s in 0..d {
                            let z = dd[i] * arow[s];
                            prev[s] = z.exp() * prev[s] + z.exp_m1() / arow[s] * bt[s] * ud[i];
                            hs[t * d + s] = prev[s];
                        }
                    }
                    gh.fill(T::zero());
                    for t in (0..l).rev() {
                        let i = (n * l + t) * e + ch;
                        let (dt, ut, gy) = (dd[i], ud[i], g[i]);
                        let row = (n * l + t) * d;
                        gs[ch] += gy * ut;
                        let mut gut = gy * sd[ch];
                        let mut gdt = T::zero();
                        for s in 0..d {
                            let (av, bv) = (arow[s], bd[row + s]);
                            let ht = hs[t * d + s];
                            let hp = if t > 0 { hs[(t - 1) * d + s] } else { T::zero() };
                            gh[s] += gy * cd[row + s];
                            gc[row + s] += gy * ht;
                            let z = dt * av;
                            let abar = z.exp();
                            let factor = z.exp_m1() / av;
                            let g_abar = gh[s] * hp;
                            let g_bbar = gh[s] * ut;
                            gut += gh[s] * factor * bv;
                            gb[row + s] += g_bbar * factor;
                            gdt += g_abar * av * abar + g_bbar * bv * abar;
                            ga[ch * d + s] += g_abar * dt * abar + g_bbar * bv * dfactor_da(dt, av);
                            gh[s] *= abar;
                        }
                        gu[i] = gut;
                        gdelta[i] = gdt;
                    }
                }
            }
            let need = args.needs;
            vec![
                need[0].then_some(gu),
                need[1].then_some(gdelta),
                need[2].then_some(ga),
                need[3].then_some(gb),
                need[4].then_some(gc),
                need[5].then_some(gs),
            ]
        }),
    ))
}

/// Learnable parameters of one directional selective scan over tokens of
/// width `E` with state size `D`.
#[derive(Debug, Clone)]
pub struct SsmParams<T: Real> {
    /// `[E,D]`; `A = -exp(A_log)`.
    pub a_log: Tensor<T>,
    /// `[E,E]` token → per-channel step size (before softplus).
    pub w_delta: Tensor<T>,
    /// `[E]`
    pub delta_bias: Tensor<T>,
    /// `[E,D]`
    pub w_b: Tensor<T>,
    /// `[E,D]`
    pub w_c: Tensor<T>,
    /// `[E]`
    pub d_skip: Tensor<T>,
}

/// Raw initial values for [`SsmParams`], in field order.
pub fn init_ssm_values<R: Rng>(e: usize, d: usize, rng: &mut R) -> [(Vec<usize>, Vec<f64>); 6] {
    // A = -(1..=D) per channel
    let a_log: Vec<f64> = (0..e).flat_map(|_| (1..=d).map(|s| (s as f64).ln())).collect();
    let bound = 1.0 / (e as f64).sqrt();
    let u = Uniform::new(-bound, bound).expect("valid range");
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| u.sample(rng)).collect() };
    let w_delta = draw(e * e).into_iter().map(|v| v * 0.1).collect();
    let w_b = draw(e * d);
    let w_c = draw(e * d);
    // softplus(bias) log-uniform in [0.01, 0.1]
    let ldt = Uniform::new(0.01f64.ln(), 0.1f64.ln()).expect("valid range");
    let delta_bias = (0..e)
        .map(|_| {
            let dt = ldt.sample(rng).exp();
            dt + (-(-dt).exp_m1()).ln()
        })
        .collect();
    [
        (vec![e, d], a_log),
        (vec![e, e], w_delta),
        (vec![e], delta_bias),
        (vec![e, d], w_b),
        (vec![e, d], w_c),
        (vec![e], vec![1.0; e]),
    ]
}

impl<T: Real> SsmParams<T> {
    /// Fresh trainable parameters with the standard initialization.
    pub fn init<R: Rng>(e: usize, d: usize, rng: &mut R) -> Self {
        let [a_log, w_delta, delta_bias, w_b, w_c, d_skip] = init_ssm_values(e, d, rng);
        let mk = |(shape, v): (Vec<usize>, Vec<f64>)| {
            Tensor::param(&shape, v.into_iter().map(T::from_real).collect()).expect("init shape")
        };
        SsmParams {
            a_log: mk(a_log),
            w_delta: mk(w_delta),
            delta_bias: mk(delta_bias),
            w_b: mk(w_b),
            w_c: mk(w_c),
            d_skip: mk(d_skip),
        }
    }

    pub fn token_dim(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor<T>; 6] {
        [&self.a_log, &self.w_delta, &self.delta_bias, &self.w_b, &self.w_c, &self.d_skip]
    }

    /// `A = -exp(A_log)`.
    pub fn a(&self) -> Tensor<T> {
        self.a_log.exp().neg()
    }
}

/// Selective scan over `[B,L,E]` (or `[L,E]`) tokens, starting from `h_0 = 0`.
pub fn selective_scan<T: Real>(x: &Tensor<T>, p: &SsmParams<T>) -> Result<Tensor<T>> {
    let unbatched = x.rank() == 2;
    let x3 = if unbatched {
        x.reshape(&[1, x.shape()[0], x.shape()[1]])?
    } else {
        x.clone()
    };
    let [_, _, e] = dims3(&x3, "selective_scan input")?;
    if e != p.token_dim() {
        return Err(GlfcError::shape(format!(
            "tokens have width {e}, SSM parameters expect {}",
            p.token_dim()
        )));
    }
    let delta = x3.linear(&p.w_delta, Some(&p.delta_bias))?.softplus();
    let b = x3.linear(&p.w_b, None)?;
    let c = x3.linear(&p.w_c, None)?;
    let y = scan_projected(&x3, &delta, &p.a(), &b, &c, &p.d_skip)?;
    if unbatched {
        y.reshape(x.shape())
    } else {
        Ok(y)
    }
}

/// Traversal order over a square token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowBackward,
        ScanDirection::ColForward,
        ScanDirection::ColBackward,
    ];

    /// `order[t]` is the row-major grid index visited at step `t`.
    pub fn order(self, side: usize) -> Vec<usize> {
        let l = side * side;
        let col_major = |t: usize| (t % side) * side + t / side;
        match self {
            ScanDirection::RowForward => (0..l).collect(),
            ScanDirection::RowBackward => (0..l).rev().collect(),
            ScanDirection::ColForward => (0..l).map(col_major).collect(),
            ScanDirection::ColBackward => (0..l).rev().map(col_major).collect(),
        }
    }
}

fn inverse_order(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (t, &p) in order.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

/// Side length of a square token grid with `l` tokens.
pub fn grid_side(l: usize) -> Result<usize> {
    let side = (l as f64).sqrt().round() as usize;
    if side * side != l || l == 0 {
        return Err(GlfcError::shape(format!("{l} tokens do not form a square grid")));
    }
    Ok(side)
}

/// Runs one directional scan and maps the result back onto grid positions.
pub fn directional_scan<T: Real>(
    tokens: &Tensor<T>,
    dir: ScanDirection,
    p: &SsmParams<T>,
) -> Result<Tensor<T>> {
    let [_, l, _] = dims3(tokens, "directional scan input")?;
    let order = dir.order(grid_side(l)?);
    let seq = tokens.gather_axis1(&order)?;
    selective_scan(&seq, p)?.gather_axis1(&inverse_order(&order))
}

/// Sum of the four directional scans over a `[B, G*G, E]` token grid.
pub fn ss2d_merge<T: Real>(tokens: &Tensor<T>, params: &[SsmParams<T>; 4]) -> Result<Tensor<T>> {
    let mut acc: Option<Tensor<T>> = None;
    for (dir, p) in ScanDirection::ALL.iter().zip(params) {
        let y = directional_scan(tokens, *dir, p)?;
        acc = Some(match acc {
            None => y,
            Some(s) => s.add(&y)?,
        });
    }
    Ok(acc.expect("four directions"))
}

/// Output stage of SS2D: layer norm followed by a linear projection.
#[derive(Debug, Clone)]
pub struct Ss2dOutput<T: Real> {
    pub norm_gamma: Tensor<T>,
    pub norm_beta: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
}

/// Four-direction scan, merged by summation, then normalized and projected.
pub fn ss2d<T: Real>(
    tokens: &Tensor<T>,
    params: &[SsmParams<T>; 4],
    out: &Ss2dOutput<T>,
) -> Result<Tensor<T>> {
    ss2d_merge(tokens, params)?
        .layer_norm(&out.norm_gamma, &out.norm_beta)?
        .linear(&out.proj_w, Some(&out.proj_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discretize_zero_step() {
        let (ab, bb) = discretize(0.0f64, -3.0, 5.0).unwrap();
        assert_eq!(ab, 1.0);
        assert_eq!(bb, 0.0);
    }

    #[test]
    fn discretize_closed_forms() {
        let (ab, bb) = discretize(2f64.ln(), -1.0, 2.0).unwrap();
        assert!((ab - 0.5).abs() < 1e-15);
        assert!((bb - 1.0).abs() < 1e-15);
        let (ab, bb) = discretize(0.5f64, -2.0, 1.0).unwrap();
        assert!((ab - 0.36788).abs() < 1e-5);
        assert!((bb - 0.31606).abs() < 1e-5);
    }

    #[test]
    fn discretize_rejects_non_negative_a() {
        assert!(matches!(discretize(0.1f64, 0.0, 1.0), Err(GlfcError::Contract(_))));
        assert!(matches!(discretize(0.1f64, 0.5, 1.0), Err(GlfcError::Contract(_))));
    }

    #[test]
    fn vanishing_step_limit() {
        for a in [-0.5, -1.0, -8.0] {
            let (ab, bb) = discretize(1e-12f64, a, 3.0).unwrap();
            assert!((ab - 1.0).abs() < 1e-9);
            assert!(bb.abs() < 1e-9);
        }
    }

    #[test]
    fn series_branch_matches_closed_form() {
        // just above and below the switch point
        for (dt, a) in [(1.1e-4, -1.0), (0.9e-4, -1.0), (2e-5, -4.0)] {
            let z: f64 = dt * a;
            let closed = (z * z.exp() - z.exp_m1()) / (a * a);
            assert!((dfactor_da(dt, a) - closed).abs() <= 1e-12 * closed.abs().max(1e-12));
        }
    }

    #[test]
    fn two_step_hand_unroll() {
        // A_bar = 0.5 with delta = ln2, A = -1; B_bar * x = 1 with B = 2, x = 1
        let u = Tensor::<f64>::new(&[1, 2, 1], vec![1.0, 1.0]).unwrap();
        let delta = Tensor::full(&[1, 2, 1], 2f64.ln());
        let a = Tensor::new(&[1, 1], vec![-1.0]).unwrap();
        let b = Tensor::full(&[1, 2, 1], 2.0);
        let c = Tensor::full(&[1, 2, 1], 1.0);
        let y = scan_projected(&u, &delta, &a, &b, &c, &Tensor::zeros(&[1])).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-14);
        assert!((y.data()[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn single_token_has_no_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SsmParams::<f64>::init(3, 4, &mut rng);
        let x = Tensor::new(&[1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let y = selective_scan(&x, &p).unwrap();
        for ch in 0..3 {
            let xv = x.data();
            let dlt: f64 = (0..3).map(|k| xv[k] * p.w_delta.data()[k * 3 + ch]).sum::<f64>()
                + p.delta_bias.data()[ch];
            let dlt = dlt.exp().ln_1p();
            let mut expect = p.d_skip.data()[ch] * xv[ch];
            for s in 0..4 {
                let bv: f64 = (0..3).map(|k| xv[k] * p.w_b.data()[k * 4 + s]).sum();
                let cv: f64 = (0..3).map(|k| xv[k] * p.w_c.data()[k * 4 + s]).sum();
                let a = -p.a_log.data()[ch * 4 + s].exp();
                let (_, bb) = discretize(dlt, a, bv).unwrap();
                expect += cv * bb * xv[ch];
            }
            assert!((y.data()[ch] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn directions_cover_every_cell_once() {
        for dir in ScanDirection::ALL {
            let mut o = dir.order(5);
            o.sort_unstable();
            assert_eq!(o, (0..25).collect::<Vec<_>>());
        }
        let rf = ScanDirection::RowForward.order(4);
        let rb = ScanDirection::RowBackward.order(4);
        assert_eq!(rb, rf.iter().rev().copied().collect::<Vec<_>>());
        let cf = ScanDirection::ColForward.order(3);
        assert_eq!(cf, vec![0, 3, 6, 1, 4, 7, 2, 5, 8]);
    }

    #[test]
    fn non_square_grid_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params: [SsmParams<f64>; 4] = std::array::from_fn(|_| SsmParams::init(2, 2, &mut rng));
        let x = Tensor::zeros(&[1, 6, 2]);
        assert!(matches!(ss2d_merge(&x, &params), Err(GlfcError::Shape(_))));
    }

    #[test]
    fn positive_a_is_contract_error() {
        let u = Tensor::<f64>::zeros(&[1, 2, 1]);
        let r = scan_projected(
            &u,
            &Tensor::full(&[1, 2, 1], 0.1),
            &Tensor::full(&[1, 1], 0.2),
            &Tensor::zeros(&[1, 2, 1]),
            &Tensor::zeros(&[1, 2, 1]),
            &Tensor::zeros(&[1]),
        );
        assert!(matches!(r, Err(GlfcError::Contract(_))));
    }
}
