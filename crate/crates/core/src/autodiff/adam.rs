use super::graph::{Gradients, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Adam with bias-corrected moment estimates. One moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    /// Per-tensor learning rate; all equal to `config.learning_rate` unless overridden.
    rates: Vec<f64>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: AsRef<Tensor>>(config: AdamConfig, params: &[P]) -> Self {
        Adam {
            config,
            step: 0,
            rates: vec![config.learning_rate; params.len()],
            first: params.iter().map(|p| vec![0.0; p.as_ref().len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.as_ref().len()]).collect(),
        }
    }

    /// Gives tensor `i` its own learning rate.
    pub fn set_learning_rate(&mut self, i: usize, rate: f64) -> Result<()> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be positive, got {rate}"
            )));
        }
        let n = self.rates.len();
        *self.rates.get_mut(i).ok_or_else(|| {
            Error::contract(format!("parameter {i} out of range for {n} tensors"))
        })? = rate;
        Ok(())
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` using `grads[i]` for `params[i]`.
    ///
    /// `params` may hold tensors or `&mut Tensor` borrowed from a larger struct.
    pub fn step<P: AsMut<Tensor>>(&mut self, params: &mut [P], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        if grads.len() != params.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let p = p.as_mut();
            if p.shape() != g.shape() || p.len() != self.first[i].len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let p = p.as_mut();
            let learning_rate = self.rates[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Looks up the gradient of every bound parameter and applies one update.
    /// A parameter the loss never touched is a contract violation.
    pub fn step_with<P: AsMut<Tensor>>(
        &mut self,
        params: &mut [P],
        vars: &[Var],
        grads: &Gradients,
    ) -> Result<()> {
        let found: Vec<&Tensor> = vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                grads
                    .get(*v)
                    .ok_or_else(|| Error::contract(format!("no gradient for parameter {i}")))
            })
            .collect::<Result<_>>()?;
        self.step(params, &found)
    }
}
