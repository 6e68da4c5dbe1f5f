use super::params::ParamStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated on the first step.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter that carries a gradient.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<F>) -> Result<()> {
        if params.iter().all(|(_, p)| p.grad.is_none()) {
            return Err(Error::invalid("adam step called without gradients"));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![F::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::invalid("parameter count changed between adam steps"));
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let lr = F::lit(c.learning_rate);
        let eps = F::lit(c.epsilon);
        let t = self.t as i32;
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let Some(g) = p.grad.as_ref() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
