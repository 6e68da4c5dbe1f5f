use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Vec<F>>,
}

/// Named trainable tensors, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

/// Parameter gradients extracted from a finished graph.
#[derive(Debug)]
pub struct ParamGrads<F> {
    pub(crate) entries: Vec<(ParamId, Vec<F>)>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn accumulate(&mut self, grads: ParamGrads<F>) {
        for (id, g) in grads.entries {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    for (a, &x) in acc.iter_mut().zip(&g) {
                        *a = *a + x;
                    }
                }
                None => p.grad = Some(g),
            }
        }
    }

    pub fn grad_norm(&self) -> F {
        let sq = self
            .params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .fold(F::zero(), |acc, &x| acc + x * x);
        sq.sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: F) -> F {
        let norm = self.grad_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                for x in g.iter_mut() {
                    *x = *x * s;
                }
            }
        }
        norm
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
        }
    }

    /// Overwrites values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::invalid("parameter layouts differ"));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.dims() != b.value.dims() {
                return Err(Error::invalid(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
pub fn init_uniform<F: Scalar, R: Rng>(rng: &mut R, dims: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| F::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::new(dims.to_vec(), data).expect("consistent dims")
}
