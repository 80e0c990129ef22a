use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub algo: Algo,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
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

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimConfig {
            algo: Algo::Sgd,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimConfig {
            algo: Algo::Adam,
            ..OptimConfig::sgd(lr)
        }
    }
}

/// First-order optimizer state. Moment buffers are allocated lazily on the
/// first step and tied to the parameter order used there.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !config.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        Ok(Optimizer {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("opt_step", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::dim("opt_step", p.value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: p.name.clone(),
                    step: self.steps,
                });
            }
        }
        self.steps += 1;
        let lr = self.config.lr;
        match self.config.algo {
            Algo::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * gv;
                    }
                }
            }
            Algo::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second = self.first.clone();
                }
                let OptimConfig {
                    beta1, beta2, eps, ..
                } = self.config;
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for (j, (w, &gv)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Param {
        Param::new("p", Tensor::vector(vec![v]))
    }

    #[test]
    fn sgd_zero_grad_leaves_params() {
        let mut p = scalar_param(1.5);
        let mut opt = Optimizer::new(OptimConfig::sgd(0.1)).unwrap();
        opt.step(&mut [&mut p], &[Tensor::vector(vec![0.0])]).unwrap();
        assert_eq!(p.value.item(), 1.5);
    }

    #[test]
    fn sgd_single_step() {
        let mut p = scalar_param(1.0);
        let mut opt = Optimizer::new(OptimConfig::sgd(0.1)).unwrap();
        opt.step(&mut [&mut p], &[Tensor::vector(vec![2.0])]).unwrap();
        assert!((p.value.item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        // oracle: hand-iterated recurrence, g = 1 everywhere
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.25f64);
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = Param::new("p", Tensor::vector(vec![0.25, 0.25]));
        let mut opt = Optimizer::new(OptimConfig::adam(lr)).unwrap();
        for _ in 0..3 {
            opt.step(&mut [&mut p], &[Tensor::vector(vec![1.0, 1.0])]).unwrap();
        }
        for &x in p.value.data() {
            assert!((x - w).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_reports_param_and_step() {
        let mut p = scalar_param(0.0);
        let mut opt = Optimizer::new(OptimConfig::adam(0.1)).unwrap();
        opt.step(&mut [&mut p], &[Tensor::vector(vec![1.0])]).unwrap();
        let err = opt
            .step(&mut [&mut p], &[Tensor::vector(vec![f64::INFINITY])])
            .unwrap_err();
        match err {
            Error::NonFiniteGradient { param, step } => {
                assert_eq!(param, "p");
                assert_eq!(step, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_learning_rate() {
        assert!(Optimizer::new(OptimConfig::sgd(0.0)).is_err());
    }
}
