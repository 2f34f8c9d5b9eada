use super::{Grads, NetParams, Network, NnError};

/// Adaptive-moment optimiser with bias correction. Buffers are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &NetParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.arrays().iter().map(|a| vec![0.0; a.data.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_params(&mut self, params: &mut NetParams, grads: &Grads) -> Result<(), NnError> {
        if grads.0.len() != params.len() || self.m.len() != params.len() {
            return Err(NnError::Shape(format!("{} grads, {} moments for {} arrays", grads.0.len(), self.m.len(), params.len())));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if !params.arrays()[i].trainable {
                continue;
            }
            let g = &grads.0[i];
            if g.len() != params.data(i).len() {
                return Err(NnError::Param(params.arrays()[i].name.clone()));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in params.data_mut(i).iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, net: &mut Network, grads: &Grads) -> Result<(), NnError> {
        self.step_params(net.params_mut(), grads)
    }
}
