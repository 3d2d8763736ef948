use serde::{Deserialize, Serialize};

use super::{AutodiffError, Gradients, ParamStore, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn build(&self, store: &ParamStore) -> Optimizer {
        match *self {
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd(Sgd { lr }),
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => Optimizer::Adam(Adam::new(store, lr, beta1, beta2, eps)),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.values(id).len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
        }
        match self {
            Optimizer::Sgd(sgd) => {
                for (id, g) in grads.iter() {
                    for (p, gi) in store.values_mut(id).iter_mut().zip(g) {
                        *p -= sgd.lr * gi;
                    }
                }
            }
            Optimizer::Adam(adam) => {
                adam.step += 1;
                let t = adam.step as i32;
                let c1 = 1.0 - adam.beta1.powi(t);
                let c2 = 1.0 - adam.beta2.powi(t);
                for (id, g) in grads.iter() {
                    let (m, v) = (&mut adam.m[id.index()], &mut adam.v[id.index()]);
                    for (k, (p, gi)) in store.values_mut(id).iter_mut().zip(g).enumerate() {
                        m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * gi;
                        v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * gi * gi;
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        *p -= adam.lr * mh / (vh.sqrt() + adam.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
