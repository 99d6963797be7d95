//! First-order optimizers over a [`ParamSet`].

use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every tensor of a parameter set. With `sgd` set the
/// moments are unused and the update is `w -= lr * g`.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    sgd: bool,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: ParamSet<T>>(config: AdamConfig, params: &P) -> Self {
        let sizes: Vec<usize> = (0..params.tensor_count())
            .map(|i| params.tensor(i).numel())
            .collect();
        AdamState {
            config,
            step: 0,
            sgd: false,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn sgd<P: ParamSet<T>>(lr: f64, params: &P) -> Self {
        let mut s = Self::new(
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            params,
        );
        s.sgd = true;
        s.m.iter_mut().for_each(Vec::clear);
        s.v.iter_mut().for_each(Vec::clear);
        s
    }

    pub fn is_sgd(&self) -> bool {
        self.sgd
    }

    /// Applies one update using each tensor's gradient buffer. Tensors without
    /// a gradient buffer are left untouched. All gradients are checked for
    /// finiteness before anything is modified.
    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P) -> Result<()> {
        let n = params.tensor_count();
        if n != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, parameter set has {n}",
                self.m.len()
            )));
        }
        for i in 0..n {
            let t = params.tensor(i);
            if let Some(g) = t.grad() {
                if let Some(k) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} at index {k} is {}",
                        params.tensor_name(i),
                        g[k]
                    )));
                }
                if !self.sgd && self.m[i].len() != t.numel() {
                    return Err(Error::Shape(format!(
                        "optimizer state for {} has {} entries, tensor has {}",
                        params.tensor_name(i),
                        self.m[i].len(),
                        t.numel()
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let lr = T::of(c.lr);
        if self.sgd {
            for i in 0..n {
                let t = params.tensor_mut(i);
                let Some(g) = t.grad().map(<[T]>::to_vec) else {
                    continue;
                };
                for (w, g) in t.data_mut().iter_mut().zip(g) {
                    *w -= lr * g;
                }
            }
            return Ok(());
        }
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let eps = T::of(c.eps);
        for i in 0..n {
            let t = params.tensor_mut(i);
            let Some(g) = t.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in t.data_mut().iter_mut().enumerate() {
                let gk = g[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
