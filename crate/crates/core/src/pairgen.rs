//! Label-derived comparison pairs.
//!
//! Generation runs in two phases. Coverage gives every document at least one
//! partner, preferring a partner at least `min_gap` away and falling back to
//! the largest positive gap. Fill then samples unused pairs round-robin over
//! the gap buckets until `ceil(usage_target · n / 2)` pairs exist, first under
//! a per-document usage cap of `ceil(usage_target) + 1` and then without it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const FALLBACK: &str = "fallback";
pub const UNBUCKETED: &str = "none";

/// Half-open gap interval `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapBucket {
    pub label: String,
    pub lo: f64,
    pub hi: Option<f64>,
}

impl GapBucket {
    pub fn new(label: &str, lo: f64, hi: Option<f64>) -> Self {
        GapBucket {
            label: label.to_string(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, gap: f64) -> bool {
        gap >= self.lo && self.hi.is_none_or(|hi| gap < hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub min_gap: f64,
    pub usage_target: f64,
    /// Fill-phase draw order.
    pub buckets: Vec<GapBucket>,
    pub subsample_fraction: f64,
}

impl Default for PairPolicy {
    fn default() -> Self {
        PairPolicy {
            min_gap: 1.0,
            usage_target: 5.0,
            buckets: vec![
                GapBucket::new(">=3", 3.0, None),
                GapBucket::new("2-3", 2.0, Some(3.0)),
                GapBucket::new("1-2", 1.0, Some(2.0)),
            ],
            subsample_fraction: 1.0,
        }
    }
}

impl PairPolicy {
    pub fn with_subsample(mut self, fraction: f64) -> Self {
        self.subsample_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_gap > 0.0 && self.min_gap.is_finite()) {
            return Err(Error::Config(format!("min_gap must be > 0, got {}", self.min_gap)));
        }
        if !(self.usage_target >= 1.0 && self.usage_target.is_finite()) {
            return Err(Error::Config(format!(
                "usage_target must be >= 1, got {}",
                self.usage_target
            )));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subsample_fraction must be in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if self.buckets.is_empty() {
            return Err(Error::Config("at least one gap bucket is required".into()));
        }
        Ok(())
    }

    pub fn bucket_of(&self, gap: f64) -> Option<&GapBucket> {
        self.buckets.iter().find(|b| b.contains(gap))
    }

    pub fn target_pairs(&self, n_docs: usize) -> usize {
        (self.usage_target * n_docs as f64 / 2.0).ceil() as usize
    }

    pub fn usage_cap(&self) -> usize {
        self.usage_target.ceil() as usize + 1
    }

    pub fn subsample_size(&self, n_docs: usize) -> usize {
        ((self.subsample_fraction * n_docs as f64).ceil() as usize).min(n_docs)
    }
}

/// One comparison, stored once with the higher-labeled document first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a_id: String,
    pub b_id: String,
    pub gap: f64,
    pub bucket: String,
    pub is_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    /// Documents that survived subsampling.
    pub participants: Vec<String>,
    /// Participants left without any pair (no partner with a different label).
    pub uncovered: Vec<String>,
    /// Pairs missing from the target when the admissible universe ran out.
    pub shortfall: usize,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn doc_ids(&self) -> HashSet<&str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.a_id.as_str(), p.b_id.as_str()])
            .collect()
    }
}

struct Builder<'a> {
    ids: Vec<&'a str>,
    labels: Vec<f64>,
    usage: Vec<usize>,
    used: HashSet<(usize, usize)>,
    pairs: Vec<Pair>,
}

impl Builder<'_> {
    fn push(&mut self, i: usize, j: usize, bucket: String, is_fallback: bool) {
        let (a, b) = if self.labels[i] >= self.labels[j] { (i, j) } else { (j, i) };
        self.used.insert((i.min(j), i.max(j)));
        self.usage[i] += 1;
        self.usage[j] += 1;
        self.pairs.push(Pair {
            a_id: self.ids[a].to_string(),
            b_id: self.ids[b].to_string(),
            gap: self.labels[a] - self.labels[b],
            bucket,
            is_fallback,
        });
    }

    fn gap(&self, i: usize, j: usize) -> f64 {
        (self.labels[i] - self.labels[j]).abs()
    }
}

fn check_docs(docs: &[(String, f64)]) -> Result<()> {
    let mut seen = HashSet::with_capacity(docs.len());
    for (id, y) in docs {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
        if !y.is_finite() {
            return Err(Error::Label {
                doc_id: id.clone(),
                msg: "non-finite label".into(),
            });
        }
    }
    Ok(())
}

/// Builds the comparison set for one trait within one document partition.
pub fn generate_pairs(docs: &[(String, f64)], policy: &PairPolicy, seed: u64) -> Result<PairSet> {
    policy.validate()?;
    if docs.len() < 2 {
        return Err(Error::invalid("pair generation needs at least two documents"));
    }
    check_docs(docs)?;

    let mut pool: Vec<&(String, f64)> = docs.iter().collect();
    pool.sort_by(|a, b| a.0.cmp(&b.0));
    if policy.subsample_fraction < 1.0 {
        let keep = policy.subsample_size(pool.len());
        pool.shuffle(&mut seed::rng_for(seed, "pairs/subsample"));
        pool.truncate(keep);
        pool.sort_by(|a, b| a.0.cmp(&b.0));
    }

    let n = pool.len();
    let mut b = Builder {
        ids: pool.iter().map(|d| d.0.as_str()).collect(),
        labels: pool.iter().map(|d| d.1).collect(),
        usage: vec![0; n],
        used: HashSet::new(),
        pairs: Vec::new(),
    };

    // Coverage. Ids are sorted, so scanning in index order visits usage-0
    // documents in ascending (usage, doc_id) order.
    let mut uncovered = Vec::new();
    for i in 0..n {
        if b.usage[i] > 0 {
            continue;
        }
        let best = (0..n)
            .filter(|&j| j != i && b.gap(i, j) >= policy.min_gap)
            .min_by_key(|&j| (b.usage[j], j));
        if let Some(j) = best {
            let bucket = policy
                .bucket_of(b.gap(i, j))
                .map_or(UNBUCKETED.to_string(), |bk| bk.label.clone());
            b.push(i, j, bucket, false);
            continue;
        }
        let widest = (0..n)
            .filter(|&j| j != i && b.gap(i, j) > 0.0)
            .max_by(|&x, &y| b.gap(i, x).total_cmp(&b.gap(i, y)).then(y.cmp(&x)));
        match widest {
            Some(j) => b.push(i, j, FALLBACK.to_string(), true),
            None => uncovered.push(b.ids[i].to_string()),
        }
    }

    // Fill.
    let target = policy.target_pairs(n);
    let mut active: Vec<Vec<(usize, usize)>> = vec![Vec::new(); policy.buckets.len()];
    for i in 0..n {
        for j in i + 1..n {
            let gap = b.gap(i, j);
            if gap < policy.min_gap || b.used.contains(&(i, j)) {
                continue;
            }
            if let Some(k) = policy.buckets.iter().position(|bk| bk.contains(gap)) {
                active[k].push((i, j));
            }
        }
    }
    let mut deferred: Vec<Vec<(usize, usize)>> = vec![Vec::new(); policy.buckets.len()];
    let mut rng = seed::rng_for(seed, "pairs/fill");
    let cap = policy.usage_cap();
    let mut capped = true;
    let mut cursor = 0;
    let mut shortfall = 0;
    while b.pairs.len() < target {
        let mut drawn = None;
        for step in 0..active.len() {
            let k = (cursor + step) % active.len();
            if let Some(pair) = draw(&mut rng, &mut active[k], &mut deferred[k], &b, capped.then_some(cap)) {
                drawn = Some((k, pair));
                break;
            }
        }
        match drawn {
            Some((k, (i, j))) => {
                b.push(i, j, policy.buckets[k].label.clone(), false);
                cursor = (k + 1) % active.len();
            }
            None if capped => {
                capped = false;
                for (a, d) in active.iter_mut().zip(deferred.iter_mut()) {
                    a.append(d);
                }
            }
            None => {
                shortfall = target - b.pairs.len();
                break;
            }
        }
    }

    Ok(PairSet {
        pairs: b.pairs,
        participants: b.ids.iter().map(|s| s.to_string()).collect(),
        uncovered,
        shortfall,
    })
}

/// Uniform draw among the admissible pairs of one bucket. Pairs blocked by
/// the cap move to `deferred`; pairs used elsewhere are dropped.
fn draw(
    rng: &mut ChaCha8Rng,
    active: &mut Vec<(usize, usize)>,
    deferred: &mut Vec<(usize, usize)>,
    b: &Builder<'_>,
    cap: Option<usize>,
) -> Option<(usize, usize)> {
    while !active.is_empty() {
        let idx = rng.random_range(0..active.len());
        let (i, j) = active.swap_remove(idx);
        if b.used.contains(&(i, j)) {
            continue;
        }
        if cap.is_some_and(|c| b.usage[i] >= c || b.usage[j] >= c) {
            deferred.push((i, j));
            continue;
        }
        return Some((i, j));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    SelfPair,
    CanonicalOrder,
    GapMismatch,
    BelowMinGap,
    ZeroGap,
    Duplicate,
    BucketMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub pair_index: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairReport {
    pub violations: Vec<Violation>,
    /// usage count → number of documents with that usage.
    pub usage_histogram: BTreeMap<usize, usize>,
    pub bucket_counts: BTreeMap<String, usize>,
    pub fallback_count: usize,
    /// Documents in `docs` without any pair.
    pub uncovered_count: usize,
    /// Uncovered documents that did have a partner with a different label.
    pub uncovered_with_partner: usize,
}

impl PairReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every pair invariant and policy constraint against the labels.
pub fn validate_pairs(pairs: &[Pair], docs: &[(String, f64)], policy: &PairPolicy) -> Result<PairReport> {
    let labels: HashMap<&str, f64> = docs.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    let mut report = PairReport::default();
    let mut usage: HashMap<&str, usize> = HashMap::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let flag = |report: &mut PairReport, i: usize, kind: ViolationKind, detail: String| {
        report.violations.push(Violation {
            pair_index: i,
            kind,
            detail,
        })
    };
    for (i, p) in pairs.iter().enumerate() {
        let ya = *labels
            .get(p.a_id.as_str())
            .ok_or_else(|| Error::UnknownDoc(p.a_id.clone()))?;
        let yb = *labels
            .get(p.b_id.as_str())
            .ok_or_else(|| Error::UnknownDoc(p.b_id.clone()))?;
        *usage.entry(p.a_id.as_str()).or_default() += 1;
        *usage.entry(p.b_id.as_str()).or_default() += 1;
        *report.bucket_counts.entry(p.bucket.clone()).or_default() += 1;
        if p.is_fallback {
            report.fallback_count += 1;
        }
        if p.a_id == p.b_id {
            flag(&mut report, i, ViolationKind::SelfPair, p.a_id.clone());
        }
        if ya < yb {
            flag(
                &mut report,
                i,
                ViolationKind::CanonicalOrder,
                format!("{}={ya} below {}={yb}", p.a_id, p.b_id),
            );
        }
        if p.gap != ya - yb {
            flag(
                &mut report,
                i,
                ViolationKind::GapMismatch,
                format!("stored {} but labels give {}", p.gap, ya - yb),
            );
        }
        if ya - yb == 0.0 {
            flag(&mut report, i, ViolationKind::ZeroGap, format!("{} vs {}", p.a_id, p.b_id));
        }
        if !p.is_fallback && (ya - yb) < policy.min_gap {
            flag(
                &mut report,
                i,
                ViolationKind::BelowMinGap,
                format!("gap {} < {}", ya - yb, policy.min_gap),
            );
        }
        let expected_bucket = if p.is_fallback {
            Some(FALLBACK.to_string())
        } else {
            Some(
                policy
                    .bucket_of(ya - yb)
                    .map_or(UNBUCKETED.to_string(), |b| b.label.clone()),
            )
        };
        if expected_bucket.as_deref() != Some(p.bucket.as_str()) {
            flag(
                &mut report,
                i,
                ViolationKind::BucketMismatch,
                format!("bucket {} for gap {}", p.bucket, ya - yb),
            );
        }
        let key = if p.a_id <= p.b_id {
            (p.a_id.as_str(), p.b_id.as_str())
        } else {
            (p.b_id.as_str(), p.a_id.as_str())
        };
        if !seen.insert(key) {
            flag(
                &mut report,
                i,
                ViolationKind::Duplicate,
                format!("{{{}, {}}}", key.0, key.1),
            );
        }
    }
    let distinct: Vec<f64> = {
        let mut v: Vec<f64> = docs.iter().map(|d| d.1).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    for (id, y) in docs {
        let u = usage.get(id.as_str()).copied().unwrap_or(0);
        *report.usage_histogram.entry(u).or_default() += 1;
        if u == 0 {
            report.uncovered_count += 1;
            if distinct.iter().any(|v| v != y) {
                report.uncovered_with_partner += 1;
            }
        }
    }
    Ok(report)
}

/// Writes a pair cache: `# key=value` metadata lines, then a CSV table.
pub fn write_pair_cache(path: impl AsRef<Path>, meta: &[(String, String)], set: &PairSet) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(io)?;
    }
    writeln!(out, "# participants={}", set.participants.len()).map_err(io)?;
    writeln!(out, "# uncovered={}", set.uncovered.join(" ")).map_err(io)?;
    writeln!(out, "# shortfall={}", set.shortfall).map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["a_id", "b_id", "gap", "bucket", "is_fallback"])?;
    for p in &set.pairs {
        w.write_record([
            p.a_id.as_str(),
            p.b_id.as_str(),
            &p.gap.to_string(),
            p.bucket.as_str(),
            if p.is_fallback { "true" } else { "false" },
        ])?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCache {
    pub meta: BTreeMap<String, String>,
    pub pairs: Vec<Pair>,
}

pub fn read_pair_cache(path: impl AsRef<Path>) -> Result<PairCache> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |msg: String| Error::Format { what: "pair cache", msg };
        pairs.push(Pair {
            a_id: field(0).to_string(),
            b_id: field(1).to_string(),
            gap: field(2).parse().map_err(|_| bad(format!("bad gap {:?}", field(2))))?,
            bucket: field(3).to_string(),
            is_fallback: field(4)
                .parse()
                .map_err(|_| bad(format!("bad flag {:?}", field(4))))?,
        });
    }
    Ok(PairCache { meta, pairs })
}
