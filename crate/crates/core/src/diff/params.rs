use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Uniform(-bound, bound) initialization.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, dims: &[usize], bound: f64, rng: &mut R) -> usize {
        let n: usize = dims.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound).expect("bound must be finite");
        let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
        self.add(name, Tensor::new(dims.to_vec(), data).expect("dims"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.dims())).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with the same-named tensor of `other`. Names
    /// and shapes must agree exactly.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::CheckpointIncompatible("parameter names differ".into()));
        }
        for (i, (mine, theirs)) in self.tensors.iter_mut().zip(&other.tensors).enumerate() {
            if mine.dims() != theirs.dims() {
                return Err(Error::CheckpointIncompatible(format!(
                    "{}: {:?} vs {:?}",
                    self.names[i],
                    mine.dims(),
                    theirs.dims()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

/// Global L2 norm over a gradient set.
pub fn grad_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    grads.iter().flat_map(|t| t.data()).map(|&v| v * v).sum::<T>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        for t in grads.iter_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
