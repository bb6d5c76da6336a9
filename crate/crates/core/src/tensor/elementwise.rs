use super::Tensor;
use crate::error::{GlfcError, Result};
use crate::real::Real;

/// Pointwise unary operation tags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Exp,
    Tanh,
    Silu,
    Softplus,
    LeakyRelu(f64),
    /// Clamp into `[lo, hi]`.
    Clip(f64, f64),
    /// Multiply by a constant.
    Scale(f64),
    /// Add a constant.
    Shift(f64),
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    fn validate(self) -> Result<()> {
        match self {
            Unary::Clip(lo, hi) if !(lo < hi) => Err(GlfcError::contract(format!(
                "clip needs lo < hi, got [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Tanh => "tanh",
            Unary::Silu => "silu",
            Unary::Softplus => "softplus",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Clip(..) => "clip",
            Unary::Scale(_) => "scale",
            Unary::Shift(_) => "shift",
        }
    }

    fn forward<T: Real>(self, x: T) -> T {
        match self {
            Unary::Exp => x.exp(),
            Unary::Tanh => x.tanh(),
            Unary::Silu => x * sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_real(s)
                }
            }
            Unary::Clip(lo, hi) => x.max(T::from_real(lo)).min(T::from_real(hi)),
            Unary::Scale(s) => x * T::from_real(s),
            Unary::Shift(s) => x + T::from_real(s),
        }
    }

    /// d out / d x given input and output.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Exp => y,
            Unary::Tanh => T::one() - y * y,
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            Unary::Softplus => sigmoid(x),
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_real(s)
                }
            }
            Unary::Clip(lo, hi) => {
                if x < T::from_real(lo) || x > T::from_real(hi) {
                    T::zero()
                } else {
                    T::one()
                }
            }
            Unary::Scale(s) => T::from_real(s),
            Unary::Shift(_) => T::one(),
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Tensor<T> {
    pub fn unary(&self, op: Unary) -> Result<Tensor<T>> {
        op.validate()?;
        let out: Vec<T> = self.data().iter().map(|&x| op.forward(x)).collect();
        Ok(Tensor::from_op(
            op.name(),
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |a| {
                let x = a.inputs[0].data();
                let g = x
                    .iter()
                    .zip(a.out)
                    .zip(a.grad)
                    .map(|((&x, &y), &g)| g * op.derivative(x, y))
                    .collect();
                vec![Some(g)]
            }),
        ))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(Unary::Exp).expect("exp is total")
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(Unary::Tanh).expect("tanh is total")
    }

    pub fn silu(&self) -> Tensor<T> {
        self.unary(Unary::Silu).expect("silu is total")
    }

    pub fn softplus(&self) -> Tensor<T> {
        self.unary(Unary::Softplus).expect("softplus is total")
    }

    /// Leaky ReLU with negative slope 0.2.
    pub fn leaky_relu(&self) -> Tensor<T> {
        self.unary(Unary::LeakyRelu(0.2)).expect("leaky_relu is total")
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Result<Tensor<T>> {
        self.unary(Unary::Clip(lo, hi))
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        self.unary(Unary::Scale(s)).expect("scale is total")
    }

    pub fn shift(&self, s: f64) -> Tensor<T> {
        self.unary(Unary::Shift(s)).expect("shift is total")
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul)
    }

    /// Shapes must match, or one must equal the trailing axes of the other
    /// (the smaller operand repeats along the leading axes).
    fn binary(&self, other: &Tensor<T>, op: Binary) -> Result<Tensor<T>> {
        let (xs, ys) = (self.shape(), other.shape());
        let out_shape = if xs == ys || (xs.len() > ys.len() && xs.ends_with(ys)) {
            xs.to_vec()
        } else if ys.len() > xs.len() && ys.ends_with(xs) {
            ys.to_vec()
        } else {
            return Err(GlfcError::shape(format!(
                "cannot broadcast {xs:?} with {ys:?}"
            )));
        };
        let n = super::numel(&out_shape);
        let (nx, ny) = (self.numel(), other.numel());
        let (x, y) = (self.data(), other.data());
        let out: Vec<T> = (0..n)
            .map(|i| {
                let (a, b) = (x[i % nx], y[i % ny]);
                match op {
                    Binary::Add => a + b,
                    Binary::Sub => a - b,
                    Binary::Mul => a * b,
                }
            })
            .collect();
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        Ok(Tensor::from_op(
            name,
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |a| {
                let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
                let (nx, ny) = (x.len(), y.len());
                let mut gx = a.needs[0].then(|| vec![T::zero(); nx]);
                let mut gy = a.needs[1].then(|| vec![T::zero(); ny]);
                for (i, &g) in a.grad.iter().enumerate() {
                    let (ix, iy) = (i % nx, i % ny);
                    let (dx, dy) = match op {
                        Binary::Add => (g, g),
                        Binary::Sub => (g, -g),
                        Binary::Mul => (g * y[iy], g * x[ix]),
                    };
                    if let Some(gx) = gx.as_mut() {
                        gx[ix] += dx;
                    }
                    if let Some(gy) = gy.as_mut() {
                        gy[iy] += dy;
                    }
                }
                vec![gx, gy]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::param(shape, v).unwrap()
    }

    #[test]
    fn clip_examples() {
        let x = t(&[3], vec![-2.0, 0.0, 2.0]);
        let y = x.clip(-1.0, 1.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 0.0, 1.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(x.clip(1.0, 1.0).is_err());
        assert!(x.clip(2.0, 1.0).is_err());
    }

    #[test]
    fn exp_at_zero() {
        let x = t(&[1], vec![0.0]);
        let y = x.exp();
        assert_eq!(y.data(), &[1.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn softplus_at_zero() {
        let x = t(&[1], vec![0.0]);
        let y = x.softplus();
        assert!((y.item() - std::f64::consts::LN_2).abs() < 1e-15);
        y.sum().backward().unwrap();
        assert!((x.grad().unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let x = Tensor::<f32>::new(&[2], vec![200.0, -200.0]).unwrap();
        let y = x.softplus();
        assert_eq!(y.data()[0], 200.0);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-30);
    }

    #[test]
    fn leaky_relu_slope() {
        let x = t(&[2], vec![-1.0, 3.0]);
        assert_eq!(x.leaky_relu().data(), &[-0.2, 3.0]);
    }

    #[test]
    fn broadcast_along_leading_axes() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], vec![10.0, 20.0, 30.0]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        let c = t(&[2], vec![1.0, 1.0]);
        assert!(matches!(x.add(&c), Err(GlfcError::Shape(_))));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let x = t(&[3], vec![1.0, -2.0, 0.25]);
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 0.5]);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let x = t(&[3], vec![1.0, -2.0, 0.25]);
        let before = x.to_vec();
        let _ = x.exp().mul(&x).unwrap().clip(-1.0, 1.0).unwrap();
        assert_eq!(x.to_vec(), before);
    }
}
