use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{GlfcError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Named, ordered learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<T>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(values);
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[T] {
        &self.values[i]
    }

    pub fn values_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((n, s), v)| (n.as_str(), s.as_slice(), v.as_slice()))
    }

    /// Total learnable scalar count.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Leaf tensors for one forward pass.
    pub fn leaves(&self, requires_grad: bool) -> Vec<Tensor<T>> {
        self.shapes
            .iter()
            .zip(&self.values)
            .map(|(s, v)| {
                if requires_grad {
                    Tensor::param(s, v.clone())
                } else {
                    Tensor::new(s, v.clone())
                }
                .expect("stored shapes are consistent")
            })
            .collect()
    }

    /// Mutable views of every parameter buffer, in order.
    pub fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        self.values.iter_mut().map(Vec::as_mut_slice).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|&x| U::from_real(x.as_f64())).collect())
                .collect(),
        }
    }

    /// Replaces every value from `(name, shape, values)` records. Every
    /// expected tensor must be present exactly once with a matching shape,
    /// and no unknown tensor may appear.
    pub fn load_named(&mut self, records: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<()> {
        let mut by_name: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
        let mut order = Vec::new();
        for (name, shape, vals) in records {
            if by_name.contains_key(&name) {
                return Err(GlfcError::Checkpoint {
                    tensor: name,
                    message: "appears more than once".into(),
                });
            }
            order.push(name.clone());
            by_name.insert(name, (shape, vals));
        }
        for (i, name) in self.names.iter().enumerate() {
            let Some((shape, _)) = by_name.get(name) else {
                return Err(GlfcError::Checkpoint {
                    tensor: name.clone(),
                    message: "missing from checkpoint".into(),
                });
            };
            if shape != &self.shapes[i] {
                return Err(GlfcError::Checkpoint {
                    tensor: name.clone(),
                    message: format!("shape {shape:?} does not match expected {:?}", self.shapes[i]),
                });
            }
        }
        if let Some(extra) = order.iter().find(|n| !self.names.contains(n)) {
            return Err(GlfcError::Checkpoint {
                tensor: extra.clone(),
                message: "not part of this architecture".into(),
            });
        }
        for (i, name) in self.names.iter().enumerate() {
            let (_, vals) = by_name.remove(name).expect("checked above");
            self.values[i] = vals.into_iter().map(|v| T::from_real(v as f64)).collect();
        }
        Ok(())
    }

    /// Copies every tensor whose name and shape also exist in `other`.
    /// Returns how many were copied.
    pub fn copy_shared_from(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(j) = other.index_of(name) {
                if other.shapes[j] == self.shapes[i] {
                    self.values[i] = other.values[j].clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `±bound`.
    Uniform(f64),
}

/// Appends parameters in a fixed order, drawing initial values from a
/// seeded generator.
pub(crate) struct Builder<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    pub fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let n: usize = shape.iter().product();
        let vals: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Uniform(bound) => {
                let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| T::from_real(u.sample(self.rng))).collect()
            }
        };
        self.store.push(name, shape, vals)
    }

    pub fn add_values(&mut self, name: String, shape: Vec<usize>, vals: Vec<f64>) -> usize {
        self.store
            .push(name, shape, vals.into_iter().map(T::from_real).collect())
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        self.rng
    }
}
