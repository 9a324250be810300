use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dot;

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Shared encoder: `h = ReLU(Wᵀx + b)`, `W` stored row-major as `input_dim × output_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkWeights {
    pub input_dim: usize,
    pub output_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl TrunkWeights {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        TrunkWeights {
            input_dim,
            output_dim,
            w: vec![0.0; input_dim * output_dim],
            b: vec![0.0; output_dim],
        }
    }

    pub fn init<R: Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        if output_dim < 2 {
            return Err(Error::Config(format!("trunk output dim must be >= 2, got {output_dim}")));
        }
        Ok(TrunkWeights {
            input_dim,
            output_dim,
            w: glorot(rng, input_dim, output_dim, input_dim * output_dim),
            b: vec![0.0; output_dim],
        })
    }

    /// Pre-activations `Wᵀx + b`.
    pub(crate) fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                what: "trunk input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let d = self.output_dim;
        let mut z = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * d..(i + 1) * d];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        Ok(z)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.pre_activation(x)?;
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(z)
    }

    /// Accumulates `dW += x ⊗ dz`, `db += dz`.
    pub(crate) fn accumulate(&mut self, x: &[f64], dz: &[f64]) {
        let d = self.output_dim;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut self.w[i * d..(i + 1) * d];
            for (g, &dzj) in row.iter_mut().zip(dz) {
                *g += xi * dzj;
            }
        }
        for (g, &dzj) in self.b.iter_mut().zip(dz) {
            *g += dzj;
        }
    }
}

/// Bias-free linear utility `s(h) = u·h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityHead {
    pub u: Vec<f64>,
}

impl UtilityHead {
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        UtilityHead {
            u: glorot(rng, dim, 1, dim),
        }
    }

    pub fn score(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.u.len() {
            return Err(Error::Dimension {
                what: "utility head input",
                expected: self.u.len(),
                got: h.len(),
            });
        }
        Ok(dot(&self.u, h))
    }
}

/// `pred = w2·ReLU(W1ᵀ input + b1) + b2`, hidden width `floor(input_dim / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionHead {
    pub input_dim: usize,
    pub hidden: usize,
    /// Row-major `input_dim × hidden`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

pub(crate) struct HeadTrace {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub pred: f64,
}

impl RegressionHead {
    pub fn zeros(input_dim: usize) -> Self {
        let hidden = input_dim / 2;
        RegressionHead {
            input_dim,
            hidden,
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn init<R: Rng>(input_dim: usize, rng: &mut R) -> Result<Self> {
        let hidden = input_dim / 2;
        if hidden == 0 {
            return Err(Error::Config("regression head input must be at least 2 wide".into()));
        }
        Ok(RegressionHead {
            input_dim,
            hidden,
            w1: glorot(rng, input_dim, hidden, input_dim * hidden),
            b1: vec![0.0; hidden],
            w2: glorot(rng, hidden, 1, hidden),
            b2: 0.0,
        })
    }

    pub(crate) fn trace(&self, input: &[f64]) -> Result<HeadTrace> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension {
                what: "regression head input",
                expected: self.input_dim,
                got: input.len(),
            });
        }
        let k = self.hidden;
        let mut z1 = self.b1.clone();
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (zj, wij) in z1.iter_mut().zip(&self.w1[i * k..(i + 1) * k]) {
                *zj += xi * wij;
            }
        }
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let pred = dot(&self.w2, &a1) + self.b2;
        Ok(HeadTrace { z1, a1, pred })
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        Ok(self.trace(input)?.pred)
    }
}
