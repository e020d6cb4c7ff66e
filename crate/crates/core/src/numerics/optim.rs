use crate::error::Result;
use crate::numerics::ParamSet;

/// Plain SGD with optional heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: Option<f64>,
    velocity: Option<ParamSet>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: Option<f64>) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: None,
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        match self.momentum {
            None => params.axpy(-self.lr, grads),
            Some(mu) => {
                let v = self.velocity.get_or_insert_with(|| grads.zeros_like());
                *v = v.scale(mu);
                v.axpy(1.0, grads)?;
                params.axpy(-self.lr, v)
            }
        }
    }
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        let g = grads.flatten();
        let m = self.m.get_or_insert_with(|| vec![0.0; g.len()]);
        let v = self.v.get_or_insert_with(|| vec![0.0; g.len()]);
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut delta = vec![0.0; g.len()];
        for i in 0..g.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            delta[i] = -self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
        params.axpy(1.0, &params.unflatten(&delta)?)
    }
}
