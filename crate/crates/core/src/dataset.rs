//! Documents, trait labels, fold maps, synthetic corpora and the
//! document-level Stage-1 split.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

pub const LABEL_MIN: f64 = 1.0;
pub const LABEL_MAX: f64 = 5.0;

pub const DEFAULT_TRAITS: [&str; 3] = ["grammar", "vocabulary", "syntax"];
pub const DEFAULT_FOLDS: [&str; 5] = ["A", "B", "C", "D", "E"];

const ID_COLUMNS: [&str; 3] = ["text_id", "doc_id", "id"];
const TEXT_COLUMNS: [&str; 2] = ["full_text", "text"];

/// True when `v` is a rubric value: inside `[1.0, 5.0]` and a multiple of 0.5.
pub fn on_rubric_grid(v: f64) -> bool {
    v.is_finite() && (LABEL_MIN..=LABEL_MAX).contains(&v) && (2.0 * v).fract() == 0.0
}

/// Rounds to the nearest multiple of 0.5; exact quarter midpoints go up.
pub fn snap_half_up(v: f64) -> f64 {
    (2.0 * v + 0.5).floor() / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub labels: BTreeMap<String, f64>,
}

impl Document {
    pub fn label(&self, trait_name: &str) -> Option<f64> {
        self.labels.get(trait_name).copied()
    }
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.doc_id.clone()));
            }
            for (trait_name, &v) in &doc.labels {
                if !on_rubric_grid(v) {
                    return Err(Error::Label {
                        doc_id: doc.doc_id.clone(),
                        msg: format!("{trait_name}={v} is not on the 0.5 grid within [1, 5]"),
                    });
                }
            }
        }
        Ok(Corpus { docs, index })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }

    pub fn get(&self, doc_id: &str) -> Result<&Document> {
        self.index
            .get(doc_id)
            .map(|&i| &self.docs[i])
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn label(&self, doc_id: &str, trait_name: &str) -> Result<f64> {
        let doc = self.get(doc_id)?;
        doc.label(trait_name).ok_or_else(|| Error::Label {
            doc_id: doc_id.to_string(),
            msg: format!("no label for trait {trait_name}"),
        })
    }

    /// `(doc_id, label)` for the given ids, in the given order.
    pub fn labeled(&self, ids: &[String], trait_name: &str) -> Result<Vec<(String, f64)>> {
        ids.iter()
            .map(|id| Ok((id.clone(), self.label(id, trait_name)?)))
            .collect()
    }
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.contains(&h.trim()))
}

/// Loads a comma-separated documents file with a header row.
///
/// The id column may be named `text_id`, `doc_id` or `id`; the text column
/// `full_text` or `text`. Every requested trait must have its own column.
pub fn load_documents(path: impl AsRef<Path>, trait_names: &[String]) -> Result<Corpus> {
    let path = path.as_ref();
    let schema = |msg: String| Error::Schema {
        path: path.to_path_buf(),
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let id_col = find_column(&headers, &ID_COLUMNS)
        .ok_or_else(|| schema(format!("no id column (one of {ID_COLUMNS:?})")))?;
    let text_col = find_column(&headers, &TEXT_COLUMNS)
        .ok_or_else(|| schema(format!("no text column (one of {TEXT_COLUMNS:?})")))?;
    let trait_cols = trait_names
        .iter()
        .map(|t| {
            find_column(&headers, &[t.as_str()])
                .map(|c| (t.clone(), c))
                .ok_or_else(|| schema(format!("missing trait column {t}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut docs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let doc_id = record.get(id_col).unwrap_or_default().trim().to_string();
        if doc_id.is_empty() {
            return Err(schema(format!("empty id on line {}", docs.len() + 2)));
        }
        let text = record.get(text_col).unwrap_or_default().to_string();
        let mut labels = BTreeMap::new();
        for (t, c) in &trait_cols {
            let raw = record.get(*c).unwrap_or_default().trim();
            let v: f64 = raw.parse().map_err(|_| Error::Label {
                doc_id: doc_id.clone(),
                msg: format!("{t}={raw:?} is not a number"),
            })?;
            labels.insert(t.clone(), v);
        }
        docs.push(Document {
            doc_id,
            text,
            labels,
        });
    }
    Corpus::new(docs)
}

pub fn write_documents(path: impl AsRef<Path>, corpus: &Corpus, trait_names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["text_id".to_string(), "full_text".to_string()];
    header.extend(trait_names.iter().cloned());
    w.write_record(&header)?;
    for doc in corpus.docs() {
        let mut row = vec![doc.doc_id.clone(), doc.text.clone()];
        for t in trait_names {
            row.push(format!("{:.1}", corpus.label(&doc.doc_id, t)?));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fixed document → fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldMap {
    folds: Vec<String>,
    assignment: BTreeMap<String, String>,
}

impl FoldMap {
    pub fn from_assignment(folds: Vec<String>, assignment: BTreeMap<String, String>) -> Result<Self> {
        if let Some((id, f)) = assignment.iter().find(|(_, f)| !folds.contains(f)) {
            return Err(Error::invalid(format!("document {id} assigned to unknown fold {f}")));
        }
        Ok(FoldMap { folds, assignment })
    }

    pub fn folds(&self) -> &[String] {
        &self.folds
    }

    pub fn fold_of(&self, doc_id: &str) -> Option<&str> {
        self.assignment.get(doc_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Ids in `fold`, sorted.
    pub fn members(&self, fold: &str) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, f)| f.as_str() == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Ids in every fold except `held_out`, sorted.
    pub fn training_ids(&self, held_out: &str) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, f)| f.as_str() != held_out)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn sizes(&self) -> Vec<(String, usize)> {
        self.folds
            .iter()
            .map(|f| (f.clone(), self.assignment.values().filter(|v| *v == f).count()))
            .collect()
    }

    /// Checks that every corpus document has exactly one fold and nothing else does.
    pub fn check_covers(&self, corpus: &Corpus) -> Result<()> {
        for doc in corpus.docs() {
            if !self.assignment.contains_key(&doc.doc_id) {
                return Err(Error::invalid(format!("document {} has no fold", doc.doc_id)));
            }
        }
        if let Some(id) = self.assignment.keys().find(|id| !corpus.contains(id)) {
            return Err(Error::UnknownDoc(id.clone()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["doc_id", "fold"])?;
        for (id, fold) in &self.assignment {
            w.write_record([id, fold])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Loads a `doc_id,fold` file. Fold order is the sorted set of labels seen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        let (Some(id_col), Some(fold_col)) = (
            find_column(&headers, &["doc_id"]),
            find_column(&headers, &["fold"]),
        ) else {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                msg: "fold map header must contain doc_id and fold".into(),
            });
        };
        let mut assignment = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let id = record.get(id_col).unwrap_or_default().trim().to_string();
            let fold = record.get(fold_col).unwrap_or_default().trim().to_string();
            if assignment.insert(id.clone(), fold).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        let mut folds: Vec<String> = assignment.values().cloned().collect();
        folds.sort();
        folds.dedup();
        Ok(FoldMap { folds, assignment })
    }
}

/// Fold labels `A, B, C, ...` for `n` folds.
pub fn fold_labels(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            if i < 26 {
                ((b'A' + i as u8) as char).to_string()
            } else {
                format!("F{i}")
            }
        })
        .collect()
}

/// Seeded shuffle, then round-robin assignment over the fold labels in order.
pub fn make_fold_map(doc_ids: &[String], n_folds: usize, seed: u64) -> Result<FoldMap> {
    if n_folds < 2 {
        return Err(Error::invalid("n_folds must be at least 2"));
    }
    if doc_ids.is_empty() {
        return Err(Error::invalid("no documents to assign"));
    }
    let mut order = doc_ids.to_vec();
    let mut seen = std::collections::HashSet::with_capacity(order.len());
    if let Some(dup) = order.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::DuplicateId(dup.clone()));
    }
    order.shuffle(&mut seed::rng(seed));
    let folds = fold_labels(n_folds);
    let assignment = order
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, folds[i % n_folds].clone()))
        .collect();
    Ok(FoldMap { folds, assignment })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage1Split {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub pairtest_ids: Vec<String>,
}

impl Stage1Split {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train_ids
            .iter()
            .chain(&self.val_ids)
            .chain(&self.pairtest_ids)
    }
}

/// Seeded shuffle followed by a contiguous 80/10/10 cut; validation and
/// pair-test take `floor(N / 10)` each and training keeps the remainder.
pub fn split_stage1(training_fold_ids: &[String], seed: u64) -> Result<Stage1Split> {
    let n = training_fold_ids.len();
    if n < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 documents for an 80/10/10 split, got {n}"
        )));
    }
    let mut order = training_fold_ids.to_vec();
    order.shuffle(&mut seed::rng(seed));
    let tenth = n / 10;
    let n_train = n - 2 * tenth;
    let pairtest_ids = order.split_off(n_train + tenth);
    let val_ids = order.split_off(n_train);
    Ok(Stage1Split {
        train_ids: order,
        val_ids,
        pairtest_ids,
    })
}

/// Generating parameters of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub traits: Vec<String>,
    /// Marker words planted for each trait, same order as `traits`.
    pub markers: Vec<Vec<String>>,
    pub filler: Vec<String>,
    pub intercept: f64,
    pub slope: f64,
    pub noise_sd: f64,
    /// Per document: token count and per-trait marker counts.
    pub counts: BTreeMap<String, (usize, Vec<usize>)>,
}

impl SynthParams {
    /// The noiseless latent score for one document and trait index.
    pub fn latent(&self, doc_id: &str, trait_index: usize) -> Option<f64> {
        let (len, counts) = self.counts.get(doc_id)?;
        Some(self.intercept + self.slope * counts[trait_index] as f64 / *len as f64)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub params: SynthParams,
}

const MARKERS_PER_TRAIT: usize = 8;
const FILLER_WORDS: usize = 300;
const MAX_MARKER_RATE: f64 = 0.3;
const DOC_LEN: (usize, usize) = (60, 160);

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
    const VOWELS: &[u8] = b"aeiou";
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
        if rng.random_bool(0.5) {
            w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        }
    }
    w
}

/// Generates a corpus whose labels are an affine function of planted marker
/// frequencies. Each document draws a per-trait intensity `q ∈ [0, 1)`; every
/// token is a marker of trait `t` with probability `0.3·q_t`, otherwise filler.
/// The label is `1 + (4 / 0.3)·(marker count / length) + N(0, noise_sd)`,
/// clipped to `[1, 5]` and snapped to the 0.5 grid.
pub fn synth_corpus(n_docs: usize, seed: u64, noise_sd: f64) -> Result<SynthCorpus> {
    if n_docs < 20 {
        return Err(Error::invalid("synthetic corpus needs at least 20 documents"));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd must be finite and non-negative"));
    }
    let traits: Vec<String> = DEFAULT_TRAITS.iter().map(|s| s.to_string()).collect();
    let mut vocab_rng = seed::rng_for(seed, "synth/vocab");
    let mut words = std::collections::BTreeSet::new();
    let mut ordered = Vec::new();
    let total = FILLER_WORDS + MARKERS_PER_TRAIT * traits.len();
    while ordered.len() < total {
        let w = pseudo_word(&mut vocab_rng);
        if w.len() >= 3 && words.insert(w.clone()) {
            ordered.push(w);
        }
    }
    let filler = ordered.split_off(MARKERS_PER_TRAIT * traits.len());
    let markers: Vec<Vec<String>> = ordered
        .chunks(MARKERS_PER_TRAIT)
        .map(|c| c.to_vec())
        .collect();

    let intercept = LABEL_MIN;
    let slope = (LABEL_MAX - LABEL_MIN) / MAX_MARKER_RATE;
    let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut doc_rng = seed::rng_for(seed, "synth/docs");
    let mut noise_rng = seed::rng_for(seed, "synth/noise");
    let width = n_docs.to_string().len().max(4);

    let mut docs = Vec::with_capacity(n_docs);
    let mut counts = BTreeMap::new();
    for i in 0..n_docs {
        let doc_id = format!("doc{i:0width$}");
        let len = doc_rng.random_range(DOC_LEN.0..=DOC_LEN.1);
        let rates: Vec<f64> = (0..traits.len())
            .map(|_| MAX_MARKER_RATE * doc_rng.random::<f64>())
            .collect();
        let mut marker_counts = vec![0usize; traits.len()];
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = doc_rng.random();
            let mut acc = 0.0;
            let mut picked = None;
            for (t, &r) in rates.iter().enumerate() {
                acc += r;
                if u < acc {
                    picked = Some(t);
                    break;
                }
            }
            match picked {
                Some(t) => {
                    marker_counts[t] += 1;
                    tokens.push(markers[t][doc_rng.random_range(0..MARKERS_PER_TRAIT)].as_str());
                }
                None => tokens.push(filler[doc_rng.random_range(0..filler.len())].as_str()),
            }
        }
        let mut labels = BTreeMap::new();
        for (t, name) in traits.iter().enumerate() {
            let latent = intercept + slope * marker_counts[t] as f64 / len as f64;
            let eps = if noise_sd > 0.0 {
                noise.sample(&mut noise_rng)
            } else {
                0.0
            };
            let y = snap_half_up((latent + eps).clamp(LABEL_MIN, LABEL_MAX));
            labels.insert(name.clone(), y);
        }
        docs.push(Document {
            doc_id: doc_id.clone(),
            text: tokens.join(" "),
            labels,
        });
        counts.insert(doc_id, (len, marker_counts));
    }

    Ok(SynthCorpus {
        corpus: Corpus::new(docs)?,
        params: SynthParams {
            traits,
            markers,
            filler,
            intercept,
            slope,
            noise_sd,
            counts,
        },
    })
}

/// Writes arbitrary text atomically enough for our purposes: create + write + flush.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}
