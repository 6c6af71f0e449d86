use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::equinet::params::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[serde(alias = "SGD")]
    Sgd,
    #[serde(alias = "ADAM")]
    Adam,
}

/// Optimizer state; moments are keyed by parameter name.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: BTreeMap<String, Tensor>,
        v: BTreeMap<String, Tensor>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update in place. Gradients missing from `grads` count as zero.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParameterStore) {
        match self {
            Optimizer::Sgd { lr } => {
                for (name, p) in params.params.iter_mut() {
                    if let Some(g) = grads.params.get(name) {
                        for (x, g) in p.data.iter_mut().zip(&g.data) {
                            *x -= *lr * g;
                        }
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (name, p) in params.params.iter_mut() {
                    let zeros = || Tensor::zeros(p.rows, p.cols);
                    let mt = m.entry(name.clone()).or_insert_with(zeros);
                    let vt = v.entry(name.clone()).or_insert_with(zeros);
                    let g = grads.params.get(name);
                    for i in 0..p.data.len() {
                        let gi = g.map_or(0.0, |g| g.data[i]);
                        mt.data[i] = *beta1 * mt.data[i] + (1.0 - *beta1) * gi;
                        vt.data[i] = *beta2 * vt.data[i] + (1.0 - *beta2) * gi * gi;
                        let mh = mt.data[i] / c1;
                        let vh = vt.data[i] / c2;
                        p.data[i] -= *lr * mh / (vh.sqrt() + *eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.params.insert("p".into(), Tensor::from_vec(1, v.len(), v.to_vec()));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let init = store(&[1.5, -2.0, 0.25]);
        for mut opt in [Optimizer::sgd(0.1), Optimizer::adam(0.1, 0.9, 0.999, 1e-8)] {
            let mut p = init.clone();
            for _ in 0..3 {
                opt.step(&mut p, &init.zeros_like());
            }
            assert_eq!(p, init);
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = store(&[1.0, 2.0]);
        Optimizer::sgd(0.5).step(&mut p, &store(&[2.0, -4.0]));
        assert_eq!(p.params["p"].data, vec![0.0, 4.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = store(&[1.0, 1.0]);
        let mut opt = Optimizer::adam(0.01, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &store(&[3.0, -0.5]));
        let d = &p.params["p"].data;
        assert!((d[0] - 0.99).abs() < 1e-9);
        assert!((d[1] - 1.01).abs() < 1e-9);
    }
}
