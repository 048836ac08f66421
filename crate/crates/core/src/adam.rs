//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::out_of_range("learning rate", self.lr, "> 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::out_of_range(name, b, "(0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::out_of_range("adam epsilon", self.eps, "> 0"));
        }
        Ok(())
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], hp: &AdamHyper) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("adam parameters", self.m.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::dims("adam gradients", params.len(), grads.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        let (b1, b2) = (hp.beta1, hp.beta2);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
        Ok(())
    }
}
