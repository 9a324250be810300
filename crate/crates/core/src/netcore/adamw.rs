use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay and bias correction. Decay skips blocks
/// flagged as biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new<P: ParamSet>(config: AdamWConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .blocks()
            .iter()
            .map(|b| vec![0.0; b.values.len()])
            .collect();
        AdamWState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn check_shapes<P: ParamSet>(&self, params: &P, grads: &P) -> Result<Vec<bool>> {
        let pb = params.blocks();
        let gb = grads.blocks();
        if pb.len() != self.m.len() || gb.len() != self.m.len() {
            return Err(Error::Dimension {
                what: "parameter block count",
                expected: self.m.len(),
                got: if pb.len() != self.m.len() { pb.len() } else { gb.len() },
            });
        }
        for ((p, g), m) in pb.iter().zip(&gb).zip(&self.m) {
            if p.values.len() != m.len() || g.values.len() != m.len() {
                return Err(Error::Dimension {
                    what: "parameter block",
                    expected: m.len(),
                    got: if p.values.len() != m.len() { p.values.len() } else { g.values.len() },
                });
            }
        }
        Ok(pb.iter().map(|b| b.decay).collect())
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let decays = self.check_shapes(params, grads)?;
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let shrink = 1.0 - lr * weight_decay;
        let gblocks = grads.blocks();
        for (bi, p) in params.blocks_mut().into_iter().enumerate() {
            let g = gblocks[bi].values;
            let m = &mut self.m[bi];
            let v = &mut self.v[bi];
            for i in 0..p.len() {
                if decays[bi] {
                    p[i] *= shrink;
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
