//! Versioned JSON checkpoints. Parameters are stored as named flat arrays in
//! declared block order; floats use shortest round-trip formatting so a
//! save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;

use super::layers::{RegressionHead, TrunkWeights};
use super::model::{AbsoluteParams, PairwiseModel};
use super::ParamSet;

pub const CHECKPOINT_FORMAT: &str = "pairscore-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Pairwise,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub features: FeatureConfig,
    pub trunk_input_dim: usize,
    pub trunk_output_dim: usize,
    /// Regression head input width (absolute checkpoints only).
    pub head_input_dim: Option<usize>,
    /// `(purpose, seed)` pairs from the run seed down to each stream used.
    pub seed_lineage: Vec<(String, u64)>,
    pub params: Vec<ParamArray>,
}

fn arrays<P: ParamSet>(p: &P, shapes: &[Vec<usize>]) -> Vec<ParamArray> {
    p.blocks()
        .iter()
        .zip(shapes)
        .map(|(b, s)| ParamArray {
            name: b.name.to_string(),
            shape: s.clone(),
            values: b.values.to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_pairwise(model: &PairwiseModel, features: &FeatureConfig, seed_lineage: Vec<(String, u64)>) -> Self {
        let (f, d) = (model.trunk.input_dim, model.trunk.output_dim);
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: CheckpointKind::Pairwise,
            features: features.clone(),
            trunk_input_dim: f,
            trunk_output_dim: d,
            head_input_dim: None,
            seed_lineage,
            params: arrays(model, &[vec![f, d], vec![d], vec![d]]),
        }
    }

    pub fn from_absolute(params: &AbsoluteParams, features: &FeatureConfig, seed_lineage: Vec<(String, u64)>) -> Self {
        let (f, d) = (params.trunk.input_dim, params.trunk.output_dim);
        let (din, k) = (params.head.input_dim, params.head.hidden);
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: CheckpointKind::Absolute,
            features: features.clone(),
            trunk_input_dim: f,
            trunk_output_dim: d,
            head_input_dim: Some(din),
            seed_lineage,
            params: arrays(params, &[vec![f, d], vec![d], vec![din, k], vec![k], vec![k], vec![1]]),
        }
    }

    fn check_header(&self, kind: CheckpointKind) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("unsupported format {} v{}", self.format, self.version),
            });
        }
        if self.kind != kind {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("expected {kind:?} checkpoint, found {:?}", self.kind),
            });
        }
        Ok(())
    }

    fn fill<P: ParamSet>(&self, target: &mut P) -> Result<()> {
        let names: Vec<&'static str> = target.blocks().iter().map(|b| b.name).collect();
        let blocks = target.blocks_mut();
        if blocks.len() != self.params.len() {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("expected {} parameter arrays, found {}", blocks.len(), self.params.len()),
            });
        }
        for ((dst, src), name) in blocks.into_iter().zip(&self.params).zip(names) {
            if src.name != name || src.values.len() != dst.len() {
                return Err(Error::Format {
                    what: "checkpoint",
                    msg: format!(
                        "array {} ({} values) does not match {} ({} values)",
                        src.name,
                        src.values.len(),
                        name,
                        dst.len()
                    ),
                });
            }
            dst.copy_from_slice(&src.values);
        }
        Ok(())
    }

    pub fn to_pairwise(&self) -> Result<PairwiseModel> {
        self.check_header(CheckpointKind::Pairwise)?;
        let mut m = PairwiseModel::zeros(self.trunk_input_dim, self.trunk_output_dim);
        self.fill(&mut m)?;
        Ok(m)
    }

    pub fn to_absolute(&self) -> Result<AbsoluteParams> {
        self.check_header(CheckpointKind::Absolute)?;
        let din = self.head_input_dim.ok_or_else(|| Error::Format {
            what: "checkpoint",
            msg: "absolute checkpoint without head_input_dim".into(),
        })?;
        let mut p = AbsoluteParams {
            trunk: TrunkWeights::zeros(self.trunk_input_dim, self.trunk_output_dim),
            head: RegressionHead::zeros(din),
        };
        self.fill(&mut p)?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dataset::write_text(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::UtilityHead;
    use crate::seed;

    #[test]
    fn pairwise_round_trip_is_bit_exact() {
        let mut rng = seed::rng(77);
        let m = PairwiseModel {
            trunk: TrunkWeights::init(12, 4, &mut rng).unwrap(),
            head: UtilityHead::init(4, &mut rng),
        };
        let cp = Checkpoint::from_pairwise(&m, &FeatureConfig::default(), vec![("run".into(), 42)]);
        let text = cp.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        let m2 = back.to_pairwise().unwrap();
        for (a, b) in m.blocks().iter().zip(m2.blocks().iter()) {
            let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert!(back.to_absolute().is_err());
    }

    #[test]
    fn absolute_round_trip() {
        let mut rng = seed::rng(78);
        let p = AbsoluteParams {
            trunk: TrunkWeights::init(9, 4, &mut rng).unwrap(),
            head: RegressionHead::init(8, &mut rng).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        Checkpoint::from_absolute(&p, &FeatureConfig::default(), vec![])
            .save(&path)
            .unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().to_absolute().unwrap(), p);
    }
}
