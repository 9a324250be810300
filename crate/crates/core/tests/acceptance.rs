//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria share one
//! synthetic matrix run and report in order. Exits non-zero if any fail.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use pairscore::config::{ProtocolConfig, StdKind};
use pairscore::dataset::{load_documents, make_fold_map, synth_corpus, write_documents, FoldMap};
use pairscore::metrics::{qwk, GridSpec};
use pairscore::netcore::{
    delta, grad_check_absolute, grad_check_pairwise, AbsExample, AbsoluteModel, AbsoluteParams, FrozenEmbeddings,
    PairwiseModel, ParamSet, RegressionHead, TrunkWeights, UtilityHead,
};
use pairscore::pairgen::{generate_pairs, read_pair_cache, validate_pairs, PairPolicy};
use pairscore::protocol::{
    best_variant_freq, run_matrix, spread_summary, stage1_stage2_correlation, standard_contrasts, trait_means,
    paired_comparison, Diagnostic, Factor, ResultTable, RunPlan, Workspace, PARTITIONS,
};
use pairscore::seed;
use pairscore::stage2::{PairSetSize, VariantSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// 1. Antisymmetry

fn antisymmetry() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seed::rng(1001);
    for i in 0..10_000 {
        let d = rng.random_range(1..=64);
        let mut vec = |scale: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(-scale..scale)).collect() };
        let head = UtilityHead { u: vec(3.0) };
        let (ha, hb) = (vec(10.0), vec(10.0));
        let ab = delta(&head, &ha, &hb).map_err(|e| e.to_string())?;
        let ba = delta(&head, &hb, &ha).map_err(|e| e.to_string())?;
        ensure(ab.to_bits() == (-ba).to_bits(), || format!("triple {i}: {ab:e} vs {ba:e}"))?;
    }
    let el = t0.elapsed();
    within(el, Duration::from_secs(1))?;
    Ok(format!("10000 triples bit-exact in {el:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. Gradient fidelity

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn gradient_fidelity() -> Outcome {
    const EPS: f64 = 1e-5;
    let t0 = Instant::now();
    let mut rng = seed::rng(2002);
    let (mut worst_pair, mut worst_abs) = (0.0f64, 0.0f64);
    for m in 0..20 {
        let f = rng.random_range(4..=30);
        let d = rng.random_range(2..=12);

        let mut model = PairwiseModel {
            trunk: TrunkWeights::init(f, d, &mut rng).map_err(|e| e.to_string())?,
            head: UtilityHead::init(d, &mut rng),
        };
        model.trunk.b = random_vec(&mut rng, d).iter().map(|v| 0.1 * v).collect();
        ensure(model.param_count() <= 5000, || format!("model {m} too large"))?;
        let xs: Vec<Vec<f64>> = (0..2 * rng.random_range(2..=6)).map(|_| random_vec(&mut rng, f)).collect();
        let batch: Vec<(&[f64], &[f64])> = xs.chunks(2).map(|c| (c[0].as_slice(), c[1].as_slice())).collect();
        let err = grad_check_pairwise(&model, &batch, EPS).map_err(|e| e.to_string())?;
        ensure(err < 1e-4, || format!("pairwise model {m} (F={f}, d={d}): rel err {err:e}"))?;
        worst_pair = worst_pair.max(err);

        // Half of the absolute checks use the fusion head input.
        let fusion = m % 2 == 1;
        let n = rng.random_range(3..=8);
        let ids: Vec<String> = (0..n).map(|i| format!("doc{i}")).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, f)).collect();
        let frozen = fusion.then(|| FrozenEmbeddings {
            dim: d,
            table: ids.iter().map(|id| (id.clone(), random_vec(&mut rng, d))).collect(),
        });
        let din = if fusion { 2 * d } else { d };
        let mut params = AbsoluteParams {
            trunk: TrunkWeights::init(f, d, &mut rng).map_err(|e| e.to_string())?,
            head: RegressionHead::init(din, &mut rng).map_err(|e| e.to_string())?,
        };
        params.trunk.b = random_vec(&mut rng, d).iter().map(|v| 0.1 * v).collect();
        params.head.b1 = random_vec(&mut rng, params.head.hidden).iter().map(|v| 0.1 * v).collect();
        ensure(params.param_count() <= 5000, || format!("model {m} too large"))?;
        let model = AbsoluteModel { params, frozen };
        // Targets sit at least 0.5 from the prediction, away from the L1 kink.
        let ys: Vec<f64> = ids
            .iter()
            .zip(&xs)
            .map(|(id, x)| {
                let p = model.predict_one(id, x).expect("valid input");
                let off = rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) { p + off } else { p - off }
            })
            .collect();
        let batch: Vec<AbsExample> = ids
            .iter()
            .zip(&xs)
            .zip(&ys)
            .map(|((id, x), &y)| AbsExample { doc_id: id, x, y })
            .collect();
        let err = grad_check_absolute(&model, &batch, EPS).map_err(|e| e.to_string())?;
        ensure(err < 1e-4, || format!("absolute model {m} (fusion={fusion}): rel err {err:e}"))?;
        worst_abs = worst_abs.max(err);
    }
    let el = t0.elapsed();
    within(el, Duration::from_secs(30))?;
    Ok(format!(
        "20 models; worst rel err pairwise {worst_pair:.2e}, absolute {worst_abs:.2e}; {el:.2?}"
    ))
}

// ---------------------------------------------------------------------------
// 3. QWK oracle equivalence

/// Textbook κ from raw counts: 1 − Σ w·O / Σ w·E with E = row·col / n.
fn qwk_oracle(truth: &[f64], pred: &[f64]) -> f64 {
    let cats: Vec<f64> = (0..9).map(|i| 1.0 + 0.5 * i as f64).collect();
    let pos = |v: f64| cats.iter().position(|c| *c == v).expect("grid value");
    let k = cats.len();
    let mut o = vec![vec![0.0; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        o[pos(t)][pos(p)] += 1.0;
    }
    let rows: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..k).map(|j| o.iter().map(|r| r[j]).sum()).collect();
    let n = truth.len() as f64;
    let span = cats[k - 1] - cats[0];
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((cats[i] - cats[j]) / span).powi(2);
            num += w * o[i][j];
            den += w * rows[i] * cols[j] / n;
        }
    }
    1.0 - num / den
}

fn qwk_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut rng = seed::rng(3003);
    let g = GridSpec::RUBRIC;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let truth: Vec<f64> = (0..200).map(|_| 1.0 + 0.5 * rng.random_range(0..9) as f64).collect();
        // Alternate unrelated and correlated predictions.
        let pred: Vec<f64> = truth
            .iter()
            .map(|&t| {
                if case % 2 == 0 {
                    1.0 + 0.5 * rng.random_range(0..9) as f64
                } else {
                    (t + 0.5 * rng.random_range(-2i32..=2) as f64).clamp(1.0, 5.0)
                }
            })
            .collect();
        let k = qwk(&truth, &pred, &g).map_err(|e| e.to_string())?;
        let diff = (k - qwk_oracle(&truth, &pred)).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("case {case}: |Δ| = {diff:e}"))?;
        let ks = qwk(&pred, &truth, &g).map_err(|e| e.to_string())?;
        ensure((k - ks).abs() <= 1e-12, || format!("case {case}: asymmetric"))?;
        ensure(qwk(&truth, &truth, &g).map_err(|e| e.to_string())? == 1.0, || {
            format!("case {case}: qwk(y, y) != 1")
        })?;
    }
    let el = t0.elapsed();
    within(el, Duration::from_secs(5))?;
    Ok(format!("100 cases, max |Δ| vs oracle {worst:.1e}; {el:.2?}"))
}

// ---------------------------------------------------------------------------
// 4. Pair-policy compliance

fn pair_policy() -> Outcome {
    let t0 = Instant::now();
    let n = 200usize;
    let full = PairPolicy::default();
    let half = PairPolicy::default().with_subsample(0.5);
    for c in 0..50u64 {
        let s = synth_corpus(n, 4000 + c, 0.25).map_err(|e| e.to_string())?;
        let docs = s.corpus.labeled(&s.corpus.ids(), "grammar").map_err(|e| e.to_string())?;
        let distinct: BTreeSet<u64> = docs.iter().map(|(_, y)| y.to_bits()).collect();
        ensure(distinct.len() >= 5, || format!("corpus {c}: only {} distinct labels", distinct.len()))?;

        let set = generate_pairs(&docs, &full, c).map_err(|e| e.to_string())?;
        let rep = validate_pairs(&set.pairs, &docs, &full).map_err(|e| e.to_string())?;
        ensure(rep.is_clean(), || format!("corpus {c}: violations {:?}", rep.violations))?;
        ensure(rep.uncovered_with_partner == 0, || {
            format!("corpus {c}: {} coverable documents uncovered", rep.uncovered_with_partner)
        })?;
        let target = (5 * n).div_ceil(2) as i64;
        ensure((set.pairs.len() as i64 - target).abs() <= 1, || {
            format!("corpus {c}: {} pairs, target {target}", set.pairs.len())
        })?;

        let sub = generate_pairs(&docs, &half, c).map_err(|e| e.to_string())?;
        let engaged: HashSet<&str> = sub.pairs.iter().flat_map(|p| [p.a_id.as_str(), p.b_id.as_str()]).collect();
        ensure(sub.participants.len() == n.div_ceil(2) && engaged.len() == n.div_ceil(2), || {
            format!(
                "corpus {c}: subsample kept {} and engaged {} documents",
                sub.participants.len(),
                engaged.len()
            )
        })?;
        let sub_docs: Vec<(String, f64)> = docs.iter().filter(|(id, _)| engaged.contains(id.as_str())).cloned().collect();
        let rep = validate_pairs(&sub.pairs, &sub_docs, &half).map_err(|e| e.to_string())?;
        ensure(rep.is_clean(), || format!("corpus {c} (subsampled): violations {:?}", rep.violations))?;
    }
    let el = t0.elapsed();
    within(el, Duration::from_secs(10))?;
    Ok(format!("50 corpora clean; {el:.2?}"))
}

// ---------------------------------------------------------------------------
// 5. Table arithmetic on the reference fold-level matrix

const FOLD_SEEDS: [(&str, u64); 5] = [("A", 42), ("B", 48), ("C", 54), ("D", 60), ("E", 36)];

/// Reference trait means (grammar, vocabulary, syntax) per variant.
const TRAIT_MEANS: [(&str, [f64; 3]); 9] = [
    ("baseline", [0.6789, 0.6140, 0.6474]),
    ("SWS", [0.6604, 0.5959, 0.6306]),
    ("SWS-r1", [0.6735, 0.6152, 0.6278]),
    ("LWS", [0.6502, 0.5970, 0.6497]),
    ("LWS-r1", [0.6724, 0.6000, 0.6300]),
    ("SF", [0.6633, 0.5914, 0.6271]),
    ("SF-r1", [0.6824, 0.6197, 0.6317]),
    ("LF", [0.6611, 0.5920, 0.6426]),
    ("LF-r1", [0.6670, 0.6019, 0.6382]),
];

/// Reference paired contrasts in [`standard_contrasts`] order:
/// (mean Δ to three decimals, first wins, ties, second wins).
const CONTRASTS: [(f64, usize, usize, usize); 8] = [
    (0.010, 8, 4, 3),
    (0.017, 8, 3, 4),
    (0.002, 6, 4, 5),
    (0.004, 5, 7, 3),
    (0.003, 7, 3, 5),
    (-0.005, 7, 2, 6),
    (0.005, 9, 1, 5),
    (-0.009, 5, 0, 10),
];

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn table_arithmetic() -> Outcome {
    let t0 = Instant::now();
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_fold_matrix.csv"))
        .map_err(|e| e.to_string())?;
    let seed_of = |f: &str| FOLD_SEEDS.iter().find(|(k, _)| *k == f).map(|(_, s)| *s);
    let table = ResultTable::from_matrix_csv(&text, seed_of).map_err(|e| e.to_string())?;
    ensure(table.len() == 135, || format!("{} records", table.len()))?;

    let means = trait_means(&table, StdKind::Population).map_err(|e| e.to_string())?;
    let traits = ["grammar", "vocabulary", "syntax"];
    let mut worst = 0.0f64;
    for (code, vals) in TRAIT_MEANS {
        let v: VariantSpec = code.parse().map_err(|e: pairscore::Error| e.to_string())?;
        for (t, want) in traits.iter().zip(vals) {
            let got = means
                .iter()
                .find(|m| m.variant == v && m.trait_name == *t)
                .ok_or_else(|| format!("no mean for {code}/{t}"))?
                .spread
                .mean;
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-4 + 1e-12, || format!("{code}/{t}: {got:.5} vs {want}"))?;
        }
    }

    let best = best_variant_freq(&table).map_err(|e| e.to_string())?;
    let count = |code: &str| {
        best.counts
            .iter()
            .find(|(v, _)| v.code() == code)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    };
    let named = [("SF-r1", 3), ("SWS-r1", 2), ("SF", 2), ("LWS", 2), ("baseline", 4)];
    for (code, want) in named {
        ensure(count(code) == want, || format!("best-variant count {code}: {} vs {want}", count(code)))?;
    }
    let other: usize = best
        .counts
        .iter()
        .filter(|(v, _)| !named.iter().any(|(c, _)| *c == v.code()))
        .map(|(_, c)| c)
        .sum();
    ensure(other == 2, || format!("other transfer wins {other} vs 2"))?;
    let tied: Vec<String> = best
        .rows
        .iter()
        .filter(|r| r.co_winners.len() > 1)
        .map(|r| {
            format!(
                "{}/{}:{}",
                r.trait_name,
                r.fold,
                r.co_winners.iter().map(|v| v.code()).collect::<Vec<_>>().join("=")
            )
        })
        .collect();

    for ((factor, label, a, b), (want, w, t, l)) in standard_contrasts().into_iter().zip(CONTRASTS) {
        let p = paired_comparison(&table, a, b).map_err(|e| e.to_string())?;
        let kind = match factor {
            Factor::Duration => "duration",
            Factor::PairSet => "pair set",
        };
        ensure(
            (round3(p.mean_delta) - want).abs() < 1e-9 && (p.wins, p.ties, p.losses) == (w, t, l),
            || {
                format!(
                    "{kind} [{label}]: {:+.4} {}/{}/{} vs {want:+.3} {w}/{t}/{l}",
                    p.mean_delta, p.wins, p.ties, p.losses
                )
            },
        )?;
    }

    let s = spread_summary(&table, StdKind::Population).map_err(|e| e.to_string())?;
    let got = [
        round3(s.baseline.min),
        round3(s.baseline.max),
        round3(s.baseline.std),
        round3(s.best_transfer.min),
        round3(s.best_transfer.max),
        round3(s.best_transfer.std),
        round3(s.mean_best_gain),
    ];
    let want = [0.588, 0.709, 0.033, 0.623, 0.707, 0.027, 0.012];
    ensure(got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-9), || {
        format!("spread {got:?} vs {want:?}")
    })?;
    ensure(s.transfer_wins == 11, || format!("transfer beats baseline in {} runs, not 11", s.transfer_wins))?;

    let el = t0.elapsed();
    within(el, Duration::from_secs(1))?;
    Ok(format!(
        "27 means (max |Δ| {worst:.1e}), best-variant counts, 8 contrasts, spread; tied rows credited by precedence: {}; {el:.2?}",
        if tied.is_empty() { "none".into() } else { tied.join(", ") }
    ))
}

// ---------------------------------------------------------------------------
// 6–8. Synthetic end-to-end matrix

struct MatrixRuns {
    cfg: ProtocolConfig,
    folds: FoldMap,
    dirs: [PathBuf; 3],
    tables: [ResultTable; 3],
    times: [Duration; 3],
}

fn matrix_runs(root: &Path) -> Result<MatrixRuns, String> {
    let e = |e: pairscore::Error| e.to_string();
    let synth = synth_corpus(500, 2024, 0.0).map_err(e)?;
    let traits = synth.params.traits.clone();
    let docs_path = root.join("docs.csv");
    let folds_path = root.join("folds.csv");
    write_documents(&docs_path, &synth.corpus, &traits).map_err(e)?;
    make_fold_map(&synth.corpus.ids(), 5, 7).map_err(e)?.save(&folds_path).map_err(e)?;

    let cfg = ProtocolConfig::default();
    let mut tables = Vec::new();
    let mut times = Vec::new();
    let dirs = [root.join("run1"), root.join("run2"), root.join("run4")];
    for (dir, jobs) in dirs.iter().zip([1, 1, 4]) {
        let corpus = load_documents(&docs_path, &traits).map_err(e)?;
        let folds = FoldMap::load(&folds_path).map_err(e)?;
        let ws = Workspace::new(cfg.clone(), corpus, folds, dir).map_err(e)?;
        let t0 = Instant::now();
        tables.push(run_matrix(&ws, jobs).map_err(e)?);
        times.push(t0.elapsed());
    }
    let folds = FoldMap::load(&folds_path).map_err(e)?;
    Ok(MatrixRuns {
        cfg,
        folds,
        dirs,
        tables: tables.try_into().expect("three runs"),
        times: times.try_into().expect("three runs"),
    })
}

fn learnability(runs: &MatrixRuns) -> Outcome {
    let t = &runs.tables[0];
    ensure(t.len() == 135, || format!("{} records, expected 135", t.len()))?;
    let standard: Vec<f64> = t
        .records()
        .iter()
        .filter_map(|r| r.stage1.as_ref())
        .filter(|l| l.artifact.ends_with("_standard"))
        .map(|l| l.pairtest_acc.unwrap_or(f64::NAN))
        .collect();
    let min_acc = standard.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(!standard.is_empty() && min_acc >= 0.95, || {
        format!("min standard-duration pair-test accuracy {min_acc:.4}")
    })?;
    let baseline: Vec<(String, f64)> = t
        .records()
        .iter()
        .filter(|r| r.variant == VariantSpec::Baseline)
        .map(|r| (format!("{}/{}", r.trait_name, r.fold), r.test_qwk))
        .collect();
    ensure(baseline.len() == 15, || format!("{} baseline records", baseline.len()))?;
    let worst = baseline.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
    ensure(worst.1 >= 0.8, || format!("baseline test QWK {:.4} on {}", worst.1, worst.0))?;
    within(runs.times[0], Duration::from_secs(600))?;
    Ok(format!(
        "min pair-test acc {min_acc:.4} over {} standard-duration records; min baseline QWK {:.4} ({}); single-threaded run {:.1?}",
        standard.len(),
        worst.1,
        worst.0,
        runs.times[0]
    ))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path, sub: &str) -> Result<usize, String> {
    let (fa, fb) = (files_under(&a.join(sub)), files_under(&b.join(sub)));
    ensure(fa == fb, || format!("{sub}: file lists differ"))?;
    for f in &fa {
        let (x, y) = (std::fs::read(a.join(sub).join(f)), std::fs::read(b.join(sub).join(f)));
        ensure(x.ok() == y.ok(), || format!("{sub}/{} differs", f.display()))?;
    }
    Ok(fa.len())
}

fn determinism(runs: &MatrixRuns) -> Outcome {
    let read = |d: &PathBuf| std::fs::read(d.join("results.jsonl")).map_err(|e| e.to_string());
    let (r1, r2, r4) = (read(&runs.dirs[0])?, read(&runs.dirs[1])?, read(&runs.dirs[2])?);
    ensure(r1 == r2, || "results differ between identical single-threaded runs".into())?;
    ensure(r1 == r4, || "results differ between --jobs 1 and --jobs 4".into())?;
    let mut counts = Vec::new();
    for sub in ["pairs", "stage1", "stage2"] {
        counts.push(same_tree(&runs.dirs[0], &runs.dirs[1], sub)?);
        same_tree(&runs.dirs[0], &runs.dirs[2], sub)?;
    }
    let total: Duration = runs.times.iter().sum();
    within(total, Duration::from_secs(25 * 60))?;
    Ok(format!(
        "results, {} pair caches, {} stage-1 files, {} prediction files identical across 3 runs (jobs 1, 1, 4); total {:.1?}",
        counts[0], counts[1], counts[2], total
    ))
}

fn integrity(runs: &MatrixRuns) -> Outcome {
    let t = &runs.tables[0];
    let dir = &runs.dirs[0];
    let mut checked = 0;
    for r in t.records() {
        let want = FOLD_SEEDS.iter().find(|(f, _)| *f == r.fold).map(|(_, s)| *s);
        ensure(Some(r.seed) == want, || format!("{}/{}: seed {}", r.trait_name, r.fold, r.seed))?;
    }
    for tr in &runs.cfg.traits {
        for fold in runs.cfg.folds() {
            let plan = RunPlan::new(&runs.cfg, &runs.folds, tr, &fold).map_err(|e| e.to_string())?;
            let held: HashSet<&str> = plan.held_out.iter().map(String::as_str).collect();
            let disjoint = |what: &str, ids: &mut dyn Iterator<Item = &str>| {
                let leaked: Vec<&str> = ids.filter(|id| held.contains(id)).collect();
                ensure(leaked.is_empty(), || format!("{tr}/{fold}: held-out {leaked:?} in {what}"))
            };
            disjoint("stage-1 split", &mut plan.split.all_ids().map(String::as_str))?;
            disjoint("stage-2 train", &mut plan.stage2_train.iter().map(String::as_str))?;
            disjoint("stage-2 val", &mut plan.stage2_val.iter().map(String::as_str))?;
            for size in [PairSetSize::Small, PairSetSize::Large] {
                for part in PARTITIONS {
                    let path = dir.join("pairs").join(tr).join(&fold).join(format!("{}_{part}.csv", size.as_str()));
                    let cache = read_pair_cache(&path).map_err(|e| e.to_string())?;
                    disjoint(&path.display().to_string(), &mut cache.pairs.iter().flat_map(|p| [p.a_id.as_str(), p.b_id.as_str()]))?;
                }
            }
            let mut artifacts = BTreeMap::new();
            for v in VariantSpec::all() {
                let rec = t.get(tr, &fold, v).ok_or_else(|| format!("missing {tr}/{fold}/{v}"))?;
                let preds = std::fs::read_to_string(dir.join("stage2").join(tr).join(&fold).join(v.code()).join("predictions.csv"))
                    .map_err(|e| e.to_string())?;
                let ids: HashSet<&str> = preds.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
                ensure(ids == held, || format!("{tr}/{fold}/{v}: test predictions not exactly the held-out fold"))?;
                if let Some(link) = &rec.stage1 {
                    artifacts.entry(link.artifact.clone()).or_insert_with(Vec::new).push(v.code());
                }
                checked += 1;
            }
            ensure(artifacts.len() == 4 && artifacts.values().all(|v| v.len() == 2), || {
                format!("{tr}/{fold}: artifact sharing {artifacts:?}")
            })?;
        }
    }
    let corr = stage1_stage2_correlation(t, Diagnostic::BestEpoch, false).map_err(|e| e.to_string())?;
    ensure(corr[0].n == 120, || format!("correlation over {} records", corr[0].n))?;
    Ok(format!(
        "{checked} (run, setting) cells leak-free; seeds co-rotated; correlation n = {}",
        corr[0].n
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n} [{name}]: PASS — {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} [{name}]: FAIL — {why}");
            }
        }
    };
    report(1, "antisymmetry", antisymmetry());
    report(2, "gradient fidelity", gradient_fidelity());
    report(3, "qwk oracle", qwk_equivalence());
    report(4, "pair policy", pair_policy());
    report(5, "table arithmetic", table_arithmetic());

    let root = tempfile::tempdir().expect("temp dir");
    match matrix_runs(root.path()) {
        Ok(runs) => {
            report(6, "learnability", learnability(&runs));
            report(7, "determinism", determinism(&runs));
            report(8, "protocol integrity", integrity(&runs));
        }
        Err(e) => {
            for (n, name) in [(6, "learnability"), (7, "determinism"), (8, "protocol integrity")] {
                report(n, name, Err(format!("matrix run failed: {e}")));
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
