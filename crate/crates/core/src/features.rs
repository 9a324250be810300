//! Hashed character n-gram and word-unigram featurizer.
//!
//! Each feature id (`c:<ngram>` or `w:<word>`) is hashed once into a bucket
//! and a ±1 sign; bucket totals are L2-normalized.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{fnv1a, mix64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dim: usize,
    pub char_ngram: usize,
    pub use_word_unigrams: bool,
    pub hash_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim: 256,
            char_ngram: 3,
            use_word_unigrams: true,
            hash_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config(format!("feature dim must be >= 8, got {}", self.dim)));
        }
        if self.char_ngram < 2 {
            return Err(Error::Config(format!(
                "char_ngram must be >= 2, got {}",
                self.char_ngram
            )));
        }
        Ok(())
    }
}

pub type FeatureVector = Vec<f64>;

/// The one string hash used for feature ids.
fn feature_hash(seed: u64, kind: u8, token: &str) -> u64 {
    let h = fnv1a(0xcbf2_9ce4_8422_2325 ^ seed, &[kind]);
    mix64(fnv1a(h, token.as_bytes()))
}

fn add_feature(cfg: &FeatureConfig, kind: u8, token: &str, signed: &mut [f64], plain: &mut [f64]) {
    let h = feature_hash(cfg.hash_seed, kind, token);
    let bucket = (h % cfg.dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    signed[bucket] += sign;
    plain[bucket] += 1.0;
}

/// Featurizes one text. Empty text gives the zero vector; any other text
/// gives a unit vector. If signed collisions cancel every bucket, the
/// unsigned counts are used instead.
pub fn featurize(text: &str, cfg: &FeatureConfig) -> FeatureVector {
    let mut signed = vec![0.0; cfg.dim];
    if text.is_empty() {
        return signed;
    }
    let mut plain = vec![0.0; cfg.dim];
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut gram = String::new();
    if chars.len() < cfg.char_ngram {
        add_feature(cfg, b'c', &lower, &mut signed, &mut plain);
    } else {
        for window in chars.windows(cfg.char_ngram) {
            gram.clear();
            gram.extend(window);
            add_feature(cfg, b'c', &gram, &mut signed, &mut plain);
        }
    }
    if cfg.use_word_unigrams {
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            add_feature(cfg, b'w', word, &mut signed, &mut plain);
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (mut out, n) = match norm(&signed) {
        n if n > 0.0 => (signed, n),
        _ => {
            let n = norm(&plain);
            (plain, n)
        }
    };
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// Feature vectors for a set of documents, addressable by id.
#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    dim: usize,
    index: HashMap<String, usize>,
    rows: Vec<FeatureVector>,
}

impl FeatureTable {
    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>, cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let mut table = FeatureTable {
            dim: cfg.dim,
            ..Default::default()
        };
        for (id, text) in docs {
            if table.index.insert(id.to_string(), table.rows.len()).is_some() {
                return Err(Error::DuplicateId(id.to_string()));
            }
            table.rows.push(featurize(text, cfg));
        }
        Ok(table)
    }

    pub fn for_corpus(corpus: &crate::dataset::Corpus, cfg: &FeatureConfig) -> Result<Self> {
        Self::build(
            corpus.docs().iter().map(|d| (d.doc_id.as_str(), d.text.as_str())),
            cfg,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Result<&[f64]> {
        self.index
            .get(doc_id)
            .map(|&i| self.rows[i].as_slice())
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }
}
