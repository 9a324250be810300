//! The cross-validated experiment: per (trait, held-out fold) runs with
//! co-rotated seeds, cached pair sets, four Stage-1 artifacts, every Stage-2
//! variant, and a resumable results file.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.txt                                  effective configuration
//! results.jsonl                               one RunRecord per line
//! pairs/<trait>/<fold>/<size>_<partition>.csv
//! stage1/<trait>/<fold>/<size>_<duration>/    checkpoint, embeddings, history, diagnostics
//! stage2/<trait>/<fold>/<variant>/predictions.csv
//! ```

pub mod analysis;
pub mod report;
pub mod results;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::config::ProtocolConfig;
use crate::dataset::{split_stage1, write_text, Corpus, FoldMap, Stage1Split};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::netcore::AbsExample;
use crate::pairgen::{generate_pairs, write_pair_cache, PairSet};
use crate::seed::derive_seed;
use crate::stage1::{train_stage1, Stage1Artifact, Stage1Pairs};
use crate::stage2::{
    build_stage2, evaluate, median, train_stage2, write_predictions, OutputBias, PairSetSize, Stage1Setting,
    Stage2Dims, Stage2Result, VariantSpec,
};

pub use analysis::{
    best_variant_freq, contrast, paired_comparison, spread_summary, stage1_stage2_correlation, standard_contrasts,
    trait_means, BestFrequency, BestRow, Correlation, Diagnostic, Factor, PairedResult, Spread, SpreadSummary,
    TraitMean,
};
pub use results::{ResultTable, RunRecord, Stage1Link};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const CONFIG_FILE: &str = "config.txt";

pub const PARTITIONS: [&str; 3] = ["train", "val", "pairtest"];

/// Document sets of one (trait, held-out fold) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub trait_name: String,
    pub fold: String,
    pub seed: u64,
    pub held_out: Vec<String>,
    pub split: Stage1Split,
    /// Stage-1 train and pair-test documents.
    pub stage2_train: Vec<String>,
    /// Stage-1 validation documents.
    pub stage2_val: Vec<String>,
}

impl RunPlan {
    pub fn new(cfg: &ProtocolConfig, folds: &FoldMap, trait_name: &str, fold: &str) -> Result<Self> {
        let seed = cfg.seed_for(fold)?;
        if !folds.folds().iter().any(|f| f == fold) {
            return Err(Error::Config(format!("fold {fold:?} is not in the fold map")));
        }
        let split = split_stage1(&folds.training_ids(fold), derive_seed(seed, &format!("split/{trait_name}")))?;
        let mut stage2_train = split.train_ids.clone();
        stage2_train.extend(split.pairtest_ids.iter().cloned());
        Ok(RunPlan {
            trait_name: trait_name.to_string(),
            fold: fold.to_string(),
            seed,
            held_out: folds.members(fold),
            stage2_val: split.val_ids.clone(),
            stage2_train,
            split,
        })
    }

    pub fn partition(&self, name: &str) -> &[String] {
        match name {
            "train" => &self.split.train_ids,
            "val" => &self.split.val_ids,
            "pairtest" => &self.split.pairtest_ids,
            _ => panic!("unknown partition {name}"),
        }
    }

    pub fn pair_seed(&self, size: PairSetSize, partition: &str) -> u64 {
        derive_seed(
            self.seed,
            &format!("pairs/{}/{}/{partition}", self.trait_name, size.as_str()),
        )
    }

    /// Fails if any held-out document appears in a Stage-1 split, a Stage-2
    /// train or validation set, or any of `pair_sets`.
    pub fn check_integrity<'a>(&self, pair_sets: impl IntoIterator<Item = &'a PairSet>) -> Result<()> {
        let held: HashSet<&str> = self.held_out.iter().map(String::as_str).collect();
        let leak = |what: &str, id: &str| {
            Error::Integrity(format!(
                "held-out document {id} of fold {} appears in {what} (trait {})",
                self.fold, self.trait_name
            ))
        };
        for (what, ids) in [
            ("the stage-1 split", self.split.all_ids().collect::<Vec<_>>()),
            ("the stage-2 training set", self.stage2_train.iter().collect()),
            ("the stage-2 validation set", self.stage2_val.iter().collect()),
        ] {
            if let Some(id) = ids.into_iter().find(|id| held.contains(id.as_str())) {
                return Err(leak(what, id));
            }
        }
        for set in pair_sets {
            for p in &set.pairs {
                for id in [&p.a_id, &p.b_id] {
                    if held.contains(id.as_str()) {
                        return Err(leak("a pair set", id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Pair sets of one run, by size.
pub type RunPairs = BTreeMap<PairSetSize, Stage1Pairs>;

/// Everything a run needs: configuration, data, features and the output root.
pub struct Workspace {
    pub cfg: ProtocolConfig,
    pub corpus: Corpus,
    pub folds: FoldMap,
    pub features: FeatureTable,
    pub out: PathBuf,
    config_hash: String,
}

fn examples<'a>(ws: &'a Workspace, ids: &'a [String], trait_name: &str) -> Result<Vec<AbsExample<'a>>> {
    ids.iter()
        .map(|id| {
            Ok(AbsExample {
                doc_id: id,
                x: ws.features.get(id)?,
                y: ws.corpus.label(id, trait_name)?,
            })
        })
        .collect()
}

impl Workspace {
    pub fn new(cfg: ProtocolConfig, corpus: Corpus, folds: FoldMap, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        folds.check_covers(&corpus)?;
        let mut want = cfg.folds();
        let mut have = folds.folds().to_vec();
        want.sort();
        have.sort();
        if want != have {
            return Err(Error::Config(format!(
                "configured folds {want:?} do not match the fold map {have:?}"
            )));
        }
        for t in &cfg.traits {
            if let Some(d) = corpus.docs().iter().find(|d| d.label(t).is_none()) {
                return Err(Error::Label {
                    doc_id: d.doc_id.clone(),
                    msg: format!("no {t} label"),
                });
            }
        }
        let features = FeatureTable::for_corpus(&corpus, &cfg.features)?;
        let config_hash = cfg.identity_hash();
        Ok(Workspace {
            cfg,
            corpus,
            folds,
            features,
            out: out.into(),
            config_hash,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn plan(&self, trait_name: &str, fold: &str) -> Result<RunPlan> {
        RunPlan::new(&self.cfg, &self.folds, trait_name, fold)
    }

    pub fn pair_cache_path(&self, trait_name: &str, fold: &str, size: PairSetSize, partition: &str) -> PathBuf {
        self.out
            .join("pairs")
            .join(trait_name)
            .join(fold)
            .join(format!("{}_{partition}.csv", size.as_str()))
    }

    pub fn stage1_dir(&self, trait_name: &str, fold: &str, setting: Stage1Setting) -> PathBuf {
        self.out.join("stage1").join(trait_name).join(fold).join(setting.slug())
    }

    pub fn stage2_dir(&self, trait_name: &str, fold: &str, variant: VariantSpec) -> PathBuf {
        self.out.join("stage2").join(trait_name).join(fold).join(variant.code())
    }

    /// Generates the run's small and large pair sets for every Stage-1
    /// partition and writes them to the pair cache.
    pub fn generate_pairs(&self, plan: &RunPlan) -> Result<RunPairs> {
        let mut out = RunPairs::new();
        for size in [PairSetSize::Small, PairSetSize::Large] {
            let fraction = match size {
                PairSetSize::Small => self.cfg.small_fraction,
                PairSetSize::Large => 1.0,
            };
            let policy = self.cfg.pairs.clone().with_subsample(fraction);
            let mut sets = Vec::with_capacity(3);
            for part in PARTITIONS {
                let docs = self.corpus.labeled(plan.partition(part), &plan.trait_name)?;
                let seed = plan.pair_seed(size, part);
                let set = generate_pairs(&docs, &policy, seed)?;
                let meta = [
                    ("trait", plan.trait_name.clone()),
                    ("fold", plan.fold.clone()),
                    ("run_seed", plan.seed.to_string()),
                    ("size", size.as_str().to_string()),
                    ("partition", part.to_string()),
                    ("pair_seed", seed.to_string()),
                    ("config", self.config_hash.clone()),
                ]
                .map(|(k, v)| (k.to_string(), v));
                write_pair_cache(self.pair_cache_path(&plan.trait_name, &plan.fold, size, part), &meta, &set)?;
                sets.push(set);
            }
            let pairtest = sets.pop().expect("three partitions");
            let val = sets.pop().expect("three partitions");
            let train = sets.pop().expect("three partitions");
            out.insert(size, Stage1Pairs { train, val, pairtest });
        }
        Ok(out)
    }

    pub fn train_stage1(&self, plan: &RunPlan, pairs: &RunPairs, setting: Stage1Setting) -> Result<Stage1Artifact> {
        let mut hp = self.cfg.stage1.clone();
        if setting.duration == crate::stage2::Duration::OneEpoch {
            hp.max_epochs = 1;
        }
        let set = &pairs[&setting.pair_set];
        let art = train_stage1(&self.features, &plan.split, set, &hp, self.cfg.trunk_dim, plan.seed)?;
        art.save(self.stage1_dir(&plan.trait_name, &plan.fold, setting), &self.cfg.features)?;
        Ok(art)
    }

    /// Reads a previously trained artifact, naming the run and setting if
    /// it is missing.
    pub fn load_stage1(&self, trait_name: &str, fold: &str, setting: Stage1Setting) -> Result<Stage1Artifact> {
        let dir = self.stage1_dir(trait_name, fold, setting);
        Stage1Artifact::load(&dir).map_err(|e| Error::MissingArtifact {
            trait_name: trait_name.to_string(),
            fold: fold.to_string(),
            setting: setting.slug(),
            msg: format!("{} ({e})", dir.display()),
        })
    }

    /// Trains and evaluates one Stage-2 variant and writes its predictions.
    pub fn train_stage2(&self, plan: &RunPlan, variant: VariantSpec, artifact: Option<&Stage1Artifact>) -> Result<Stage2Result> {
        let train = examples(self, &plan.stage2_train, &plan.trait_name)?;
        let val = examples(self, &plan.stage2_val, &plan.trait_name)?;
        let test = examples(self, &plan.held_out, &plan.trait_name)?;
        let output_bias = match self.cfg.stage2.output_bias {
            OutputBias::Zero => 0.0,
            OutputBias::TrainMedian => median(&train.iter().map(|e| e.y).collect::<Vec<_>>())?,
        };
        let dims = Stage2Dims {
            feature_dim: self.features.dim(),
            trunk_dim: self.cfg.trunk_dim,
            output_bias,
        };
        // Fusion embeddings are computed once, before any Stage-2 update; the
        // held-out documents get theirs from the same selected trunk.
        let frozen = match (variant, artifact) {
            (VariantSpec::Transfer { fusion: true, .. }, Some(a)) => Some(a.frozen_embeddings(&self.features, &plan.held_out)?),
            _ => None,
        };
        let model = build_stage2(variant, artifact, frozen, dims, plan.seed)?;
        let fit = train_stage2(model, &train, &val, &self.cfg.stage2, derive_seed(plan.seed, "stage2/shuffle"))?;
        let (predictions, test_qwk) = evaluate(&fit.model, &test, fit.clip)?;
        write_predictions(
            self.stage2_dir(&plan.trait_name, &plan.fold, variant).join("predictions.csv"),
            &predictions,
        )?;
        Ok(Stage2Result {
            variant,
            trait_name: plan.trait_name.clone(),
            fold: plan.fold.clone(),
            seed: plan.seed,
            test_qwk,
            val_qwk: fit.val_qwk,
            best_epoch: fit.best_epoch,
            predictions,
            linkage: variant
                .setting()
                .map(|s| format!("stage1/{}/{}/{}", plan.trait_name, plan.fold, s.slug())),
        })
    }

    fn record(&self, result: &Stage2Result, artifact: Option<&Stage1Artifact>) -> RunRecord {
        let stage1 = match (&result.linkage, artifact) {
            (Some(id), Some(a)) => Some(Stage1Link {
                artifact: id.clone(),
                val_acc: a.diagnostics.val_acc,
                val_loss: a.diagnostics.val_loss,
                pairtest_acc: a.diagnostics.pairtest_acc,
                pairtest_loss: a.diagnostics.pairtest_loss,
                best_epoch: a.diagnostics.best_epoch,
            }),
            _ => None,
        };
        RunRecord {
            trait_name: result.trait_name.clone(),
            fold: result.fold.clone(),
            seed: result.seed,
            variant: result.variant,
            test_qwk: result.test_qwk,
            val_qwk: Some(result.val_qwk),
            best_epoch: Some(result.best_epoch),
            stage1,
            config_hash: Some(self.config_hash.clone()),
        }
    }

    /// Runs `variants` for one (trait, fold). Each needed Stage-1 setting is
    /// trained once and shared by both transfer families.
    pub fn run_job(&self, trait_name: &str, fold: &str, variants: &[VariantSpec]) -> Result<Vec<RunRecord>> {
        let plan = self.plan(trait_name, fold)?;
        let pairs = self.generate_pairs(&plan)?;
        plan.check_integrity(pairs.values().flat_map(|p| [&p.train, &p.val, &p.pairtest]))?;
        let mut artifacts: BTreeMap<Stage1Setting, Stage1Artifact> = BTreeMap::new();
        for s in Stage1Setting::ALL {
            if variants.iter().any(|v| v.setting() == Some(s)) {
                artifacts.insert(s, self.train_stage1(&plan, &pairs, s)?);
            }
        }
        let mut records = Vec::with_capacity(variants.len());
        for &v in variants {
            let art = v.setting().map(|s| &artifacts[&s]);
            let result = self.train_stage2(&plan, v, art)?;
            records.push(self.record(&result, art));
        }
        Ok(records)
    }

    /// Existing results in the run directory, checked against this config.
    pub fn existing_results(&self) -> Result<ResultTable> {
        let path = self.out.join(RESULTS_FILE);
        if !path.exists() {
            return Ok(ResultTable::new());
        }
        let table = ResultTable::load(&path)?;
        if let Some(r) = table
            .records()
            .iter()
            .find(|r| r.config_hash.as_deref() != Some(self.config_hash.as_str()))
        {
            return Err(Error::Config(format!(
                "{} holds results from a different configuration ({} vs {}); use a fresh output directory",
                path.display(),
                r.config_hash.as_deref().unwrap_or("none"),
                self.config_hash
            )));
        }
        Ok(table)
    }
}

/// Runs every configured (trait, fold, variant) not already in the results
/// file, on up to `jobs` threads. Records are appended in canonical
/// (trait, fold, variant) order regardless of completion order, so the
/// results file does not depend on `jobs`.
pub fn run_matrix(ws: &Workspace, jobs: usize) -> Result<ResultTable> {
    std::fs::create_dir_all(&ws.out).map_err(|e| Error::io(&ws.out, e))?;
    let mut table = ws.existing_results()?;
    write_text(&ws.out.join(CONFIG_FILE), &ws.cfg.to_text())?;

    let mut work: Vec<(String, String, Vec<VariantSpec>)> = Vec::new();
    for t in &ws.cfg.traits {
        for f in ws.cfg.folds() {
            let missing: Vec<VariantSpec> = ws
                .cfg
                .variants
                .iter()
                .copied()
                .filter(|v| table.get(t, &f, *v).is_none())
                .collect();
            if !missing.is_empty() {
                work.push((t.clone(), f, missing));
            }
        }
    }
    if work.is_empty() {
        return Ok(table);
    }

    let results_path = ws.out.join(RESULTS_FILE);
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let mut first_error = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..jobs.clamp(1, work.len()) {
            let tx = tx.clone();
            let (next, failed, work) = (&next, &failed, &work);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= work.len() || failed.load(Ordering::SeqCst) {
                    break;
                }
                let (t, f, vs) = &work[i];
                let r = ws.run_job(t, f, vs);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut commit = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while first_error.is_none() {
                let Some(r) = pending.remove(&commit) else { break };
                commit += 1;
                match r.and_then(|recs| {
                    results::append_records(&results_path, &recs)?;
                    recs.into_iter().try_for_each(|rec| table.push(rec))
                }) {
                    Ok(()) => {}
                    Err(e) => {
                        failed.store(true, Ordering::SeqCst);
                        first_error = Some(e);
                    }
                }
            }
        }
    });
    match first_error {
        Some(e) => Err(e),
        None => Ok(table),
    }
}
