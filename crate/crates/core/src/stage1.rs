//! Stage 1: the directional Siamese ranker.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_text, Stage1Split};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureTable};
use crate::netcore::{
    grad_pairwise, pairwise_loss, AdamWConfig, AdamWState, Checkpoint, EarlyStopper, FrozenEmbeddings,
    PairwiseModel, StopDecision, TrunkWeights, UtilityHead,
};
use crate::pairgen::{Pair, PairSet};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            lr: 2e-4,
            weight_decay: 0.01,
            batch_size: 4,
            max_epochs: 10,
            patience: 3,
            min_delta: 5e-4,
        }
    }
}

/// Pair sets for the three Stage-1 partitions.
#[derive(Debug, Clone, Default)]
pub struct Stage1Pairs {
    pub train: PairSet,
    pub val: PairSet,
    pub pairtest: PairSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Diagnostics {
    pub val_acc: f64,
    pub val_loss: f64,
    /// `None` when the pair-test partition produced no pairs.
    pub pairtest_acc: Option<f64>,
    pub pairtest_loss: Option<f64>,
    /// 1-based epoch of the selected snapshot.
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Validation-selected ranker plus frozen per-document embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Artifact {
    pub model: PairwiseModel,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    pub history: Vec<EpochStats>,
    pub diagnostics: Stage1Diagnostics,
    pub seed_lineage: Vec<(String, u64)>,
}

type FeaturePair<'a> = (&'a [f64], &'a [f64]);

fn resolve<'a>(features: &'a FeatureTable, pairs: &[Pair]) -> Result<Vec<FeaturePair<'a>>> {
    pairs
        .iter()
        .map(|p| Ok((features.get(&p.a_id)?, features.get(&p.b_id)?)))
        .collect()
}

fn accuracy_and_loss(model: &PairwiseModel, pairs: &[FeaturePair<'_>]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("accuracy over an empty pair set"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (xa, xb) in pairs {
        let d = model.delta(xa, xb)?;
        if d > 0.0 {
            correct += 1;
        }
        loss += pairwise_loss(d);
    }
    let n = pairs.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Fraction of pairs with strictly positive Δ in stored orientation.
pub fn pair_accuracy(model: &PairwiseModel, pairs: &[Pair], features: &FeatureTable) -> Result<f64> {
    Ok(accuracy_and_loss(model, &resolve(features, pairs)?)?.0)
}

pub fn pair_loss(model: &PairwiseModel, pairs: &[Pair], features: &FeatureTable) -> Result<f64> {
    Ok(accuracy_and_loss(model, &resolve(features, pairs)?)?.1)
}

pub fn init_pairwise(input_dim: usize, trunk_dim: usize, run_seed: u64) -> Result<PairwiseModel> {
    let mut rng = seed::rng_for(run_seed, "stage1/init");
    let trunk = TrunkWeights::init(input_dim, trunk_dim, &mut rng)?;
    let head = UtilityHead::init(trunk_dim, &mut rng);
    Ok(PairwiseModel { trunk, head })
}

/// Outcome of [`fit_pairwise`].
#[derive(Debug, Clone)]
pub struct PairwiseFit {
    pub model: PairwiseModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Minibatch AdamW on the pairwise logistic loss with validation-accuracy
/// early stopping. Returns the selected snapshot.
pub fn fit_pairwise(
    init: PairwiseModel,
    train: &[FeaturePair<'_>],
    val: &[FeaturePair<'_>],
    hp: &Stage1Config,
    shuffle_seed: u64,
) -> Result<PairwiseFit> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("stage 1 needs non-empty train and validation pair sets"));
    }
    if hp.batch_size == 0 || hp.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    let mut model = init;
    let mut opt = AdamWState::new(AdamWConfig::new(hp.lr, hp.weight_decay), &model);
    let mut stopper = EarlyStopper::new(hp.patience, hp.min_delta);
    let mut rng = seed::rng(shuffle_seed);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(hp.batch_size);
    for epoch in 1..=hp.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let (loss, grads) = grad_pairwise(&model, &batch)?;
            total += loss * batch.len() as f64;
            opt.step(&mut model, &grads)?;
        }
        let (val_acc, val_loss) = accuracy_and_loss(&model, val)?;
        history.push(EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            val_acc,
            val_loss,
        });
        if stopper.update(epoch, val_acc, || model.clone()) == StopDecision::Stop {
            break;
        }
    }
    let (best_epoch, best_val_acc, model) = stopper.into_best().expect("at least one epoch ran");
    Ok(PairwiseFit {
        model,
        history,
        best_epoch,
        best_val_acc,
    })
}

/// Trains the ranker for one run and builds its artifact. Embeddings cover
/// every document of the split (the run's training folds).
pub fn train_stage1(
    features: &FeatureTable,
    split: &Stage1Split,
    pairs: &Stage1Pairs,
    hp: &Stage1Config,
    trunk_dim: usize,
    run_seed: u64,
) -> Result<Stage1Artifact> {
    let train = resolve(features, &pairs.train.pairs)?;
    let val = resolve(features, &pairs.val.pairs)?;
    let pairtest = resolve(features, &pairs.pairtest.pairs)?;
    let init_seed = seed::derive_seed(run_seed, "stage1/init");
    let shuffle_seed = seed::derive_seed(run_seed, "stage1/shuffle");
    let init = init_pairwise(features.dim(), trunk_dim, run_seed)?;
    let fit = fit_pairwise(init, &train, &val, hp, shuffle_seed)?;

    let selected = &fit.history[fit.best_epoch - 1];
    let (pairtest_acc, pairtest_loss) = if pairtest.is_empty() {
        (None, None)
    } else {
        let (a, l) = accuracy_and_loss(&fit.model, &pairtest)?;
        (Some(a), Some(l))
    };
    let mut embeddings = BTreeMap::new();
    for id in split.all_ids() {
        embeddings.insert(id.clone(), fit.model.trunk.forward(features.get(id)?)?);
    }
    Ok(Stage1Artifact {
        diagnostics: Stage1Diagnostics {
            val_acc: selected.val_acc,
            val_loss: selected.val_loss,
            pairtest_acc,
            pairtest_loss,
            best_epoch: fit.best_epoch,
            epochs_run: fit.history.len(),
        },
        model: fit.model,
        embeddings,
        history: fit.history,
        seed_lineage: vec![
            ("run".into(), run_seed),
            ("stage1/init".into(), init_seed),
            ("stage1/shuffle".into(), shuffle_seed),
        ],
    })
}

const CHECKPOINT_FILE: &str = "checkpoint.json";
const EMBEDDINGS_FILE: &str = "embeddings.tsv";
const HISTORY_FILE: &str = "history.csv";
const DIAGNOSTICS_FILE: &str = "diagnostics.json";

impl Stage1Artifact {
    pub fn embedding_dim(&self) -> usize {
        self.model.trunk.output_dim
    }

    /// The frozen table for fusion: stored embeddings plus embeddings of
    /// `extra_ids` computed with the same selected trunk.
    pub fn frozen_embeddings(&self, features: &FeatureTable, extra_ids: &[String]) -> Result<FrozenEmbeddings> {
        let mut table = self.embeddings.clone();
        for id in extra_ids {
            if !table.contains_key(id) {
                table.insert(id.clone(), self.model.trunk.forward(features.get(id)?)?);
            }
        }
        Ok(FrozenEmbeddings {
            dim: self.embedding_dim(),
            table,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>, features: &FeatureConfig) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Checkpoint::from_pairwise(&self.model, features, self.seed_lineage.clone()).save(dir.join(CHECKPOINT_FILE))?;

        let mut emb = String::new();
        for (id, v) in &self.embeddings {
            emb.push_str(id);
            for x in v {
                write!(emb, "\t{x}").expect("string write");
            }
            emb.push('\n');
        }
        write_text(&dir.join(EMBEDDINGS_FILE), &emb)?;

        let mut hist = String::from("epoch,train_loss,val_acc,val_loss\n");
        for h in &self.history {
            writeln!(hist, "{},{},{},{}", h.epoch, h.train_loss, h.val_acc, h.val_loss).expect("string write");
        }
        write_text(&dir.join(HISTORY_FILE), &hist)?;

        let mut diag = serde_json::to_string_pretty(&self.diagnostics)?;
        diag.push('\n');
        write_text(&dir.join(DIAGNOSTICS_FILE), &diag)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        let cp = Checkpoint::from_json(&read(CHECKPOINT_FILE)?)?;
        let model = cp.to_pairwise()?;
        let bad = |what: &'static str, msg: String| Error::Format { what, msg };

        let mut embeddings = BTreeMap::new();
        for line in read(EMBEDDINGS_FILE)?.lines().filter(|l| !l.is_empty()) {
            let mut parts = line.split('\t');
            let id = parts.next().unwrap_or_default().to_string();
            let v = parts
                .map(|s| s.parse::<f64>().map_err(|_| bad("embeddings", format!("bad value {s:?} for {id}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != model.trunk.output_dim {
                return Err(Error::Dimension {
                    what: "stored embedding",
                    expected: model.trunk.output_dim,
                    got: v.len(),
                });
            }
            embeddings.insert(id, v);
        }

        let mut history = Vec::new();
        for line in read(HISTORY_FILE)?.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("history", format!("bad line {line:?}")))
            };
            history.push(EpochStats {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                val_acc: num(2)?,
                val_loss: num(3)?,
            });
        }
        let diagnostics = serde_json::from_str(&read(DIAGNOSTICS_FILE)?)?;
        Ok(Stage1Artifact {
            model,
            embeddings,
            history,
            diagnostics,
            seed_lineage: cp.seed_lineage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::ParamSet;
    use crate::pairgen::{generate_pairs, PairPolicy};

    fn features_for(n: usize) -> (FeatureTable, Vec<(String, f64)>) {
        // Each document's text repeats a marker in proportion to its label.
        let docs: Vec<(String, String, f64)> = (0..n)
            .map(|i| {
                let y = 1.0 + 0.5 * (i % 9) as f64;
                let reps = (2.0 * y) as usize;
                let text = format!("{} {}", "good ".repeat(reps), "plain filler words here ".repeat(4));
                (format!("d{i:03}"), text, y)
            })
            .collect();
        let cfg = FeatureConfig {
            dim: 32,
            ..Default::default()
        };
        let table = FeatureTable::build(docs.iter().map(|(id, t, _)| (id.as_str(), t.as_str())), &cfg).unwrap();
        (table, docs.into_iter().map(|(id, _, y)| (id, y)).collect())
    }

    #[test]
    fn accuracy_definition() {
        let (features, docs) = features_for(20);
        let pairs = generate_pairs(&docs, &PairPolicy::default(), 0).unwrap().pairs;
        let mut m = PairwiseModel::zeros(32, 4);
        // Δ = 0 everywhere counts as wrong.
        assert_eq!(pair_accuracy(&m, &pairs, &features).unwrap(), 0.0);
        assert!(pair_accuracy(&m, &[], &features).is_err());
        m = init_pairwise(32, 4, 3).unwrap();
        let acc = pair_accuracy(&m, &pairs, &features).unwrap();
        m.head.u.iter_mut().for_each(|v| *v = -*v);
        let flipped = pair_accuracy(&m, &pairs, &features).unwrap();
        let xs = resolve(&features, &pairs).unwrap();
        let ties = xs.iter().filter(|(a, b)| m.delta(a, b).unwrap() == 0.0).count() as f64 / xs.len() as f64;
        assert!((flipped - (1.0 - acc - ties)).abs() < 1e-12);
    }

    fn run_fixture() -> (FeatureTable, Stage1Split, Stage1Pairs) {
        let (features, docs) = features_for(60);
        let ids: Vec<String> = docs.iter().map(|d| d.0.clone()).collect();
        let split = crate::dataset::split_stage1(&ids, 4).unwrap();
        let labels: std::collections::HashMap<_, _> = docs.iter().cloned().collect();
        let part = |ids: &[String], s: u64| {
            let d: Vec<(String, f64)> = ids.iter().map(|i| (i.clone(), labels[i])).collect();
            generate_pairs(&d, &PairPolicy::default(), s).unwrap()
        };
        let pairs = Stage1Pairs {
            train: part(&split.train_ids, 1),
            val: part(&split.val_ids, 2),
            pairtest: part(&split.pairtest_ids, 3),
        };
        (features, split, pairs)
    }

    #[test]
    fn one_epoch_setting_selects_epoch_one() {
        let (features, split, pairs) = run_fixture();
        let hp = Stage1Config {
            max_epochs: 1,
            ..Default::default()
        };
        let art = train_stage1(&features, &split, &pairs, &hp, 8, 42).unwrap();
        assert_eq!(art.history.len(), 1);
        assert_eq!(art.diagnostics.best_epoch, 1);
        assert_eq!(art.diagnostics.epochs_run, 1);
    }

    #[test]
    fn artifact_is_deterministic_and_round_trips() {
        let (features, split, pairs) = run_fixture();
        let hp = Stage1Config {
            lr: 1e-2,
            ..Default::default()
        };
        let a = train_stage1(&features, &split, &pairs, &hp, 8, 42).unwrap();
        let b = train_stage1(&features, &split, &pairs, &hp, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.embeddings.len(), 60);
        for (id, e) in &a.embeddings {
            assert_eq!(e, &a.model.trunk.forward(features.get(id).unwrap()).unwrap());
        }
        let best = a.history.iter().map(|h| h.val_acc).fold(f64::MIN, f64::max);
        assert!(best - a.diagnostics.val_acc <= hp.min_delta);

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), &FeatureConfig::default()).unwrap();
        let back = Stage1Artifact::load(dir.path()).unwrap();
        assert_eq!(back, a);
        let d2 = tempfile::tempdir().unwrap();
        back.save(d2.path(), &FeatureConfig::default()).unwrap();
        for f in [CHECKPOINT_FILE, EMBEDDINGS_FILE, HISTORY_FILE, DIAGNOSTICS_FILE] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(d2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn empty_train_pairs_rejected() {
        let (features, split, mut pairs) = run_fixture();
        pairs.train = PairSet::default();
        assert!(train_stage1(&features, &split, &pairs, &Stage1Config::default(), 8, 1).is_err());
    }

    #[test]
    fn reflected_pairs_with_negated_head_train_identically() {
        let (features, _, pairs) = run_fixture();
        let fwd_train = resolve(&features, &pairs.train.pairs).unwrap();
        let fwd_val = resolve(&features, &pairs.val.pairs).unwrap();
        let rev_train: Vec<_> = fwd_train.iter().map(|&(a, b)| (b, a)).collect();
        let rev_val: Vec<_> = fwd_val.iter().map(|&(a, b)| (b, a)).collect();
        let init = init_pairwise(32, 6, 5).unwrap();
        let mut neg = init.clone();
        neg.head.u.iter_mut().for_each(|v| *v = -*v);
        let hp = Stage1Config {
            lr: 5e-3,
            max_epochs: 4,
            ..Default::default()
        };
        let a = fit_pairwise(init, &fwd_train, &fwd_val, &hp, 11).unwrap();
        let b = fit_pairwise(neg, &rev_train, &rev_val, &hp, 11).unwrap();
        // Branch gradients are summed in the opposite order, so agreement is
        // up to rounding rather than bitwise.
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
        assert_eq!(a.history.len(), b.history.len());
        for (ha, hb) in a.history.iter().zip(&b.history) {
            assert!(close(ha.train_loss, hb.train_loss));
            assert_eq!(ha.val_acc, hb.val_acc);
        }
        for (x, y) in a.model.trunk.w.iter().zip(&b.model.trunk.w) {
            assert!(close(*x, *y));
        }
        for (x, y) in a.model.head.u.iter().zip(&b.model.head.u) {
            assert!(close(*x, -*y));
        }
        assert!(a.model.is_finite());
    }

    #[test]
    fn learns_a_separable_ranking() {
        let (features, split, pairs) = run_fixture();
        let hp = Stage1Config {
            lr: 1e-2,
            ..Default::default()
        };
        let art = train_stage1(&features, &split, &pairs, &hp, 8, 42).unwrap();
        assert!(art.diagnostics.pairtest_acc.unwrap() >= 0.95, "{:?}", art.diagnostics);
    }
}
