//! Stage 2: the absolute trait scorer under the baseline and the eight
//! transfer variants.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{snap_half_up, write_text};
use crate::error::{Error, Result};
use crate::metrics::{qwk, GridSpec};
use crate::netcore::{
    grad_absolute, AbsExample, AbsoluteModel, AbsoluteParams, AdamWConfig, AdamWState, EarlyStopper,
    RegressionHead, StopDecision, TrunkWeights,
};
use crate::seed;
use crate::stage1::Stage1Artifact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSetSize {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Duration {
    Standard,
    OneEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Baseline,
    WarmStart,
    Fusion,
}

/// One of the four Stage-1 trainings per (trait, fold).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stage1Setting {
    pub pair_set: PairSetSize,
    pub duration: Duration,
}

impl Stage1Setting {
    pub const ALL: [Stage1Setting; 4] = [
        Stage1Setting { pair_set: PairSetSize::Small, duration: Duration::Standard },
        Stage1Setting { pair_set: PairSetSize::Small, duration: Duration::OneEpoch },
        Stage1Setting { pair_set: PairSetSize::Large, duration: Duration::Standard },
        Stage1Setting { pair_set: PairSetSize::Large, duration: Duration::OneEpoch },
    ];

    /// Directory-safe name, e.g. `small_one_epoch`.
    pub fn slug(&self) -> String {
        format!("{}_{}", self.pair_set.as_str(), self.duration.as_str())
    }
}

impl PairSetSize {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairSetSize::Small => "small",
            PairSetSize::Large => "large",
        }
    }
}

impl Duration {
    pub fn as_str(&self) -> &'static str {
        match self {
            Duration::Standard => "standard",
            Duration::OneEpoch => "one_epoch",
        }
    }
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::WarmStart => "warm_start",
            Family::Fusion => "fusion",
        }
    }
}

/// A Stage-2 setting. Pair set and duration only exist for transfer
/// variants, so there are exactly nine values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantSpec {
    Baseline,
    Transfer { fusion: bool, setting: Stage1Setting },
}

impl VariantSpec {
    /// Baseline first, then warm-start/fusion × small/large × standard/one-epoch.
    /// This is also the tie precedence used when ranking variants.
    pub fn all() -> Vec<VariantSpec> {
        let mut v = vec![VariantSpec::Baseline];
        for fusion in [false, true] {
            for pair_set in [PairSetSize::Small, PairSetSize::Large] {
                for duration in [Duration::Standard, Duration::OneEpoch] {
                    v.push(VariantSpec::Transfer {
                        fusion,
                        setting: Stage1Setting { pair_set, duration },
                    });
                }
            }
        }
        v
    }

    pub fn transfer(family: Family, pair_set: PairSetSize, duration: Duration) -> Result<Self> {
        let setting = Stage1Setting { pair_set, duration };
        match family {
            Family::Baseline => Err(Error::invalid("baseline has no pair set or duration")),
            Family::WarmStart => Ok(VariantSpec::Transfer { fusion: false, setting }),
            Family::Fusion => Ok(VariantSpec::Transfer { fusion: true, setting }),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            VariantSpec::Baseline => Family::Baseline,
            VariantSpec::Transfer { fusion: false, .. } => Family::WarmStart,
            VariantSpec::Transfer { fusion: true, .. } => Family::Fusion,
        }
    }

    pub fn setting(&self) -> Option<Stage1Setting> {
        match self {
            VariantSpec::Baseline => None,
            VariantSpec::Transfer { setting, .. } => Some(*setting),
        }
    }

    /// Short code: `baseline`, or size (`S`/`L`) + family (`WS`/`F`) with an
    /// `-r1` suffix for the one-epoch duration, e.g. `SWS-r1`.
    pub fn code(&self) -> String {
        match self {
            VariantSpec::Baseline => "baseline".into(),
            VariantSpec::Transfer { fusion, setting } => {
                let size = match setting.pair_set {
                    PairSetSize::Small => "S",
                    PairSetSize::Large => "L",
                };
                let fam = if *fusion { "F" } else { "WS" };
                let dur = match setting.duration {
                    Duration::Standard => "",
                    Duration::OneEpoch => "-r1",
                };
                format!("{size}{fam}{dur}")
            }
        }
    }

    /// Position in [`VariantSpec::all`].
    pub fn precedence(&self) -> usize {
        VariantSpec::all().iter().position(|v| v == self).expect("every variant is listed")
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for VariantSpec {
    type Err = Error;

    /// Accepts a short code (`SF-r1`) or `family:pair_set:duration`
    /// (`fusion:small:one_epoch`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(v) = VariantSpec::all().into_iter().find(|v| v.code().eq_ignore_ascii_case(s)) {
            return Ok(v);
        }
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::invalid(format!("unknown variant {s:?}"));
        match parts.as_slice() {
            ["baseline"] => Ok(VariantSpec::Baseline),
            [fam, size, dur] => {
                let family = match *fam {
                    "warm_start" => Family::WarmStart,
                    "fusion" => Family::Fusion,
                    _ => return Err(bad()),
                };
                let pair_set = match *size {
                    "small" => PairSetSize::Small,
                    "large" => PairSetSize::Large,
                    _ => return Err(bad()),
                };
                let duration = match *dur {
                    "standard" => Duration::Standard,
                    "one_epoch" => Duration::OneEpoch,
                    _ => return Err(bad()),
                };
                VariantSpec::transfer(family, pair_set, duration)
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for VariantSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for VariantSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How the regression head's output bias starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputBias {
    Zero,
    /// Median of the training labels (the best constant under L1).
    TrainMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub output_bias: OutputBias,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 4,
            max_epochs: 15,
            patience: 4,
            min_delta: 5e-4,
            output_bias: OutputBias::Zero,
        }
    }
}

/// Shapes and the starting output bias for [`build_stage2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Dims {
    pub feature_dim: usize,
    pub trunk_dim: usize,
    pub output_bias: f64,
}

/// Builds the initial absolute scorer for `variant`. Baseline draws a fresh
/// trunk; transfer variants deep-copy the artifact's trunk. Every variant
/// draws its head from the same seeded stream, so baseline and warm-start
/// differ only in the trunk. Fusion reads `frozen` embeddings, which must
/// cover every document the model will see.
pub fn build_stage2(
    variant: VariantSpec,
    artifact: Option<&Stage1Artifact>,
    frozen: Option<crate::netcore::FrozenEmbeddings>,
    dims: Stage2Dims,
    run_seed: u64,
) -> Result<AbsoluteModel> {
    let trunk = match (variant, artifact) {
        (VariantSpec::Baseline, None) => {
            TrunkWeights::init(dims.feature_dim, dims.trunk_dim, &mut seed::rng_for(run_seed, "stage2/trunk"))?
        }
        (VariantSpec::Baseline, Some(_)) => {
            return Err(Error::invalid("baseline must not consume a stage-1 artifact"));
        }
        (VariantSpec::Transfer { .. }, None) => {
            return Err(Error::invalid(format!("variant {variant} needs a stage-1 artifact")));
        }
        (VariantSpec::Transfer { .. }, Some(a)) => {
            if a.model.trunk.input_dim != dims.feature_dim || a.model.trunk.output_dim != dims.trunk_dim {
                return Err(Error::Dimension {
                    what: "stage-1 trunk",
                    expected: dims.feature_dim * dims.trunk_dim,
                    got: a.model.trunk.input_dim * a.model.trunk.output_dim,
                });
            }
            a.model.trunk.clone()
        }
    };
    let fusion = variant.family() == Family::Fusion;
    let frozen = match (fusion, frozen) {
        (true, Some(f)) => {
            if f.dim != dims.trunk_dim {
                return Err(Error::Dimension {
                    what: "frozen embedding",
                    expected: dims.trunk_dim,
                    got: f.dim,
                });
            }
            Some(f)
        }
        (true, None) => return Err(Error::invalid("fusion needs a frozen embedding table")),
        (false, _) => None,
    };
    let head_in = if fusion { 2 * dims.trunk_dim } else { dims.trunk_dim };
    let mut head = RegressionHead::init(head_in, &mut seed::rng_for(run_seed, "stage2/head"))?;
    head.b2 = dims.output_bias;
    Ok(AbsoluteModel {
        params: AbsoluteParams { trunk, head },
        frozen,
    })
}

/// Lower median (the smaller middle value for even counts).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

/// Clamps to `[lo, hi]`, snaps to the 0.5 grid (quarter midpoints round up)
/// and clamps again.
pub fn discretize(preds: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let on_half = |v: f64| v.is_finite() && (2.0 * v).fract() == 0.0;
    if !(on_half(lo) && on_half(hi)) || lo > hi {
        return Err(Error::invalid(format!("bad clip range [{lo}, {hi}]")));
    }
    Ok(preds
        .iter()
        .map(|&p| snap_half_up(p.clamp(lo, hi)).clamp(lo, hi))
        .collect())
}

pub fn predict(model: &AbsoluteModel, docs: &[(&str, &[f64])]) -> Result<Vec<(String, f64)>> {
    docs.iter()
        .map(|(id, x)| Ok((id.to_string(), model.predict_one(id, x)?)))
        .collect()
}

fn predict_examples(model: &AbsoluteModel, examples: &[AbsExample<'_>]) -> Result<Vec<f64>> {
    examples.iter().map(|e| model.predict_one(e.doc_id, e.x)).collect()
}

/// Label range of the training examples, used to clip predictions.
pub fn clip_range(train: &[AbsExample<'_>]) -> Result<(f64, f64)> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let lo = train.iter().map(|e| e.y).fold(f64::INFINITY, f64::min);
    let hi = train.iter().map(|e| e.y).fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// QWK of discretized predictions against the example labels.
pub fn evaluate_qwk(model: &AbsoluteModel, examples: &[AbsExample<'_>], clip: (f64, f64)) -> Result<f64> {
    let disc = discretize(&predict_examples(model, examples)?, clip.0, clip.1)?;
    let truth: Vec<f64> = examples.iter().map(|e| e.y).collect();
    qwk(&truth, &disc, &GridSpec::RUBRIC)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Epoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_qwk: f64,
}

#[derive(Debug, Clone)]
pub struct Stage2Fit {
    pub model: AbsoluteModel,
    pub history: Vec<Stage2Epoch>,
    pub best_epoch: usize,
    pub val_qwk: f64,
    pub clip: (f64, f64),
}

/// Minibatch AdamW on mean L1 with validation-QWK early stopping; returns
/// the selected snapshot. Optimizer moments always start at zero.
pub fn train_stage2(
    model: AbsoluteModel,
    train: &[AbsExample<'_>],
    val: &[AbsExample<'_>],
    hp: &Stage2Config,
    shuffle_seed: u64,
) -> Result<Stage2Fit> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("stage 2 needs non-empty train and validation sets"));
    }
    if hp.batch_size == 0 || hp.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    let first = val[0].y;
    if val.iter().all(|e| e.y == first) {
        return Err(Error::Degenerate(format!(
            "validation labels are all {first}; QWK is undefined"
        )));
    }
    let clip = clip_range(train)?;
    let mut model = model;
    let mut opt = AdamWState::new(AdamWConfig::new(hp.lr, hp.weight_decay), &model.params);
    let mut stopper = EarlyStopper::new(hp.patience, hp.min_delta);
    let mut rng = seed::rng(shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut batch = Vec::with_capacity(hp.batch_size);
    for epoch in 1..=hp.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let (loss, grads) = grad_absolute(&model, &batch)?;
            total += loss * batch.len() as f64;
            opt.step(&mut model.params, &grads)?;
        }
        let val_qwk = evaluate_qwk(&model, val, clip)?;
        history.push(Stage2Epoch {
            epoch,
            train_loss: total / train.len() as f64,
            val_qwk,
        });
        if stopper.update(epoch, val_qwk, || model.params.clone()) == StopDecision::Stop {
            break;
        }
    }
    let (best_epoch, val_qwk, params) = stopper.into_best().expect("at least one epoch ran");
    model.params = params;
    Ok(Stage2Fit {
        model,
        history,
        best_epoch,
        val_qwk,
        clip,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub continuous: f64,
    pub discretized: f64,
    pub truth: f64,
}

/// Held-out predictions and their QWK.
pub fn evaluate(model: &AbsoluteModel, test: &[AbsExample<'_>], clip: (f64, f64)) -> Result<(Vec<Prediction>, f64)> {
    let cont = predict_examples(model, test)?;
    let disc = discretize(&cont, clip.0, clip.1)?;
    let truth: Vec<f64> = test.iter().map(|e| e.y).collect();
    let k = qwk(&truth, &disc, &GridSpec::RUBRIC)?;
    let preds = test
        .iter()
        .zip(cont.iter().zip(&disc))
        .map(|(e, (&c, &d))| Prediction {
            doc_id: e.doc_id.to_string(),
            continuous: c,
            discretized: d,
            truth: e.y,
        })
        .collect();
    Ok((preds, k))
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let mut s = String::from("doc_id,continuous,discretized,truth\n");
    for p in preds {
        writeln!(s, "{},{},{},{}", p.doc_id, p.continuous, p.discretized, p.truth).expect("string write");
    }
    write_text(path.as_ref(), &s)
}

/// Outcome of one Stage-2 setting on one (trait, fold).
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Result {
    pub variant: VariantSpec,
    pub trait_name: String,
    pub fold: String,
    pub seed: u64,
    pub test_qwk: f64,
    pub val_qwk: f64,
    pub best_epoch: usize,
    pub predictions: Vec<Prediction>,
    /// Identifier of the consumed Stage-1 artifact; `None` for baseline.
    pub linkage: Option<String>,
}
