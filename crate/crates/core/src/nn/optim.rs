use serde::{Deserialize, Serialize};

use super::{Float, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; the learning rate is supplied per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) {
        self.step += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step = T::of(lr * c2.sqrt() / c1);
        let (b1, b2, eps) = (T::of(b1), T::of(b2), T::of(self.config.eps * c2.sqrt()));
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { momentum: 0.9 }
    }
}

/// SGD with classical momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(params: &ParamSet<T>, config: SgdConfig) -> Self {
        Sgd {
            config,
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) {
        let mu = T::of(self.config.momentum);
        let lr = T::of(lr);
        for ((p, g), vel) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((p, &g), u) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
                *u = mu * *u + g;
                *p -= lr * *u;
            }
        }
    }
}
