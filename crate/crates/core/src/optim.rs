//! Optimizers: Adam with bias correction and momentum-SGD with weight decay.

use std::collections::BTreeMap;

use crate::params::ParamSet;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter moment accumulators plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every parameter; `grads` must cover all of them.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<(), TensorError> {
        for name in params.names() {
            if !grads.contains_key(name) {
                return Err(TensorError::Contract(format!("missing gradient for {name:?}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let p = params.get(&name).expect("listed above");
            let g = &grads[&name];
            if g.shape() != p.shape() {
                return Err(TensorError::Contract(format!(
                    "gradient shape {:?} does not match parameter {name:?} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
            let mut data = p.data().to_vec();
            for i in 0..data.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = p.shape().to_vec();
            params.set(&name, Tensor::new(shape, data)?)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: 0.9, weight_decay: 5e-4 }
    }
}

/// Momentum-SGD: v <- mu*v + (g + wd*p); p <- p - lr*v.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new(config: SgdConfig) -> Self {
        SgdState { config, velocity: BTreeMap::new() }
    }

    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<(), TensorError> {
        for name in params.names() {
            if !grads.contains_key(name) {
                return Err(TensorError::Contract(format!("missing gradient for {name:?}")));
            }
        }
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let p = params.get(&name).expect("listed above");
            let g = &grads[&name];
            if g.shape() != p.shape() {
                return Err(TensorError::Contract(format!(
                    "gradient shape {:?} does not match parameter {name:?} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let vel = self.velocity.entry(name.clone()).or_insert_with(|| vec![0.0; p.numel()]);
            let mut data = p.data().to_vec();
            for i in 0..data.len() {
                let gi = g.data()[i] + wd * data[i];
                vel[i] = mu * vel[i] + gi;
                data[i] -= lr * vel[i];
            }
            let shape = p.shape().to_vec();
            params.set(&name, Tensor::new(shape, data)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    fn scalar_grads(g: f64) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), Tensor::scalar(g));
        m
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = scalar_params(1.5);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut params, &scalar_grads(0.0), 0.1).unwrap();
        assert_eq!(params.get("x").unwrap().data(), &[1.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        // grad 1 at step 1: m_hat = v_hat = 1 -> delta = lr / (1 + eps)
        let lr = 0.05;
        let mut params = scalar_params(2.0);
        let mut adam = AdamState::new(AdamConfig { lr, ..Default::default() });
        adam.step(&mut params, &scalar_grads(1.0), lr).unwrap();
        let expect = 2.0 - lr / (1.0 + 1e-8);
        assert!((params.get("x").unwrap().data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        // 100 steps of f(x) = x^2 from x0 = 1, lr 0.1
        let mut params = scalar_params(1.0);
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..100 {
            let x = params.get("x").unwrap().data()[0];
            adam.step(&mut params, &scalar_grads(2.0 * x), 0.1).unwrap();
        }
        let x = params.get("x").unwrap().data()[0];
        assert!(x.abs() < 0.1, "x = {x}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = scalar_params(0.0);
        let mut grads = BTreeMap::new();
        grads.insert("x".to_string(), Tensor::zeros(vec![2]));
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(
            adam.step(&mut params, &grads, 0.1),
            Err(TensorError::Contract(_))
        ));
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut params = scalar_params(0.0);
        let grads = BTreeMap::new();
        let mut sgd = SgdState::new(SgdConfig::default());
        assert!(matches!(sgd.step(&mut params, &grads, 0.1), Err(TensorError::Contract(_))));
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut params = scalar_params(0.0);
        let mut sgd = SgdState::new(SgdConfig { momentum: 0.9, weight_decay: 0.0 });
        sgd.step(&mut params, &scalar_grads(1.0), 0.1).unwrap();
        assert!((params.get("x").unwrap().data()[0] + 0.1).abs() < 1e-15);
        sgd.step(&mut params, &scalar_grads(1.0), 0.1).unwrap();
        // velocity = 0.9*1 + 1 = 1.9 -> x = -0.1 - 0.19
        assert!((params.get("x").unwrap().data()[0] + 0.29).abs() < 1e-12);
    }
}
