//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value. Operations on tensors that require
//! gradients record their inputs and a backward closure; [`Tensor::backward`]
//! sweeps the recorded graph in reverse topological order. Gradients are only
//! stored on leaf tensors and they accumulate across calls until
//! [`Tensor::zero_grad`] is called.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod reduce;
mod shape;

pub use elementwise::Unary;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{GlfcError, Result};
use crate::real::Real;

/// Arguments handed to a backward closure.
pub struct BackwardArgs<'a, T: Real> {
    /// Forward output values.
    pub out: &'a [T],
    /// Adjoint of the output.
    pub grad: &'a [T],
    pub inputs: &'a [Tensor<T>],
    /// Which inputs need an adjoint.
    pub needs: &'a [bool],
}

/// Returns one adjoint buffer per input (`None` when not needed).
pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct OpRecord<T: Real> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    op: Option<OpRecord<T>>,
}

pub struct Tensor<T: Real>(Arc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op: None,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::check_buffer(shape, &data)?;
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::check_buffer(shape, &data)?;
        Ok(Self::leaf(shape.to_vec(), data, true))
    }

    fn check_buffer(shape: &[usize], data: &[T]) -> Result<()> {
        if shape.contains(&0) {
            return Err(GlfcError::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(GlfcError::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![T::zero(); numel(shape)], false)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Records a differentiable operation. When no input requires a gradient
    /// the result is a plain constant and nothing is recorded.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "op `{name}` produced a bad buffer");
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| OpRecord {
            name,
            inputs,
            backward,
        });
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the recording operation, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|o| o.name)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Copy of the accumulated gradient (leaf tensors only).
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Detached copy with gradient tracking switched off.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn same_node(&self, other: &Tensor<T>) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node<T> {
        Arc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a single-element loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(GlfcError::contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut adjoints: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        adjoints.insert(self.key(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(grad) = adjoints.remove(&t.key()) else {
                continue;
            };
            match &t.0.op {
                None => {
                    let mut slot = t.0.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(op) => {
                    let needs: Vec<bool> = op.inputs.iter().map(|i| i.requires_grad()).collect();
                    let input_grads = (op.backward)(&BackwardArgs {
                        out: &t.0.data,
                        grad: &grad,
                        inputs: &op.inputs,
                        needs: &needs,
                    });
                    debug_assert_eq!(input_grads.len(), op.inputs.len());
                    for ((input, g), need) in op.inputs.iter().zip(input_grads).zip(needs) {
                        let (Some(g), true) = (g, need) else {
                            continue;
                        };
                        debug_assert_eq!(
                            g.len(),
                            input.numel(),
                            "op `{}` returned a bad adjoint",
                            op.name
                        );
                        adjoints
                            .entry(input.key())
                            .and_modify(|acc| acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v))
                            .or_insert(g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through gradient-tracking edges, inputs before outputs.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, next input index to visit)
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((node, idx)) = stack.pop() {
            let inputs = node.0.op.as_ref().map(|o| o.inputs.as_slice()).unwrap_or(&[]);
            if idx < inputs.len() {
                let child = inputs[idx].clone();
                stack.push((node, idx + 1));
                if child.requires_grad() && visited.insert(child.key()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

impl<T: Real> Tensor<T> {
    /// Lossless-ish dtype conversion (drops the graph).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::leaf(
            self.0.shape.clone(),
            self.0.data.iter().map(|&v| U::from_real(v.as_f64())).collect(),
            false,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_buffers() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn non_scalar_backward_is_a_contract_error() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.exp();
        assert!(matches!(y.backward(), Err(GlfcError::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, -8.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_subexpression_collects_both_paths() {
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        let z = y.add(&y).unwrap().sum();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn constants_record_nothing() {
        let x = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.exp();
        assert!(y.op_name().is_none());
        assert!(!y.requires_grad());
    }
}
