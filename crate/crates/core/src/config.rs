//! Run configuration as flat `key = value` text.
//!
//! ```text
//! # comment
//! [stage1]
//! lr = 0.0002          # same as `stage1.lr = 0.0002` outside a section
//! ```
//!
//! [`ProtocolConfig::to_text`] writes every key in a fixed order, so the
//! text doubles as the canonical form hashed into result records.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::{DEFAULT_FOLDS, DEFAULT_TRAITS};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::pairgen::{GapBucket, PairPolicy};
use crate::stage1::Stage1Config;
use crate::stage2::{OutputBias, Stage2Config, VariantSpec};

/// Denominator for the spread summary's standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StdKind {
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub documents: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub traits: Vec<String>,
    /// Held-out fold → run seed, in fold order.
    pub fold_seeds: Vec<(String, u64)>,
    pub variants: Vec<VariantSpec>,
    /// Fraction of each Stage-1 partition kept for the small pair set.
    pub small_fraction: f64,
    pub std_kind: StdKind,
    pub features: FeatureConfig,
    pub trunk_dim: usize,
    pub pairs: PairPolicy,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let seeds = [42, 48, 54, 60, 36];
        ProtocolConfig {
            documents: None,
            folds: None,
            out_dir: None,
            traits: DEFAULT_TRAITS.iter().map(|s| s.to_string()).collect(),
            fold_seeds: DEFAULT_FOLDS.iter().map(|f| f.to_string()).zip(seeds).collect(),
            variants: VariantSpec::all(),
            small_fraction: 0.5,
            std_kind: StdKind::Population,
            features: FeatureConfig::default(),
            trunk_dim: 64,
            pairs: PairPolicy::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {value:?}"))),
    }
}

fn parse_buckets(value: &str) -> Result<Vec<GapBucket>> {
    list(value)
        .iter()
        .map(|spec| {
            let parts: Vec<&str> = spec.split(':').collect();
            let bad = || Error::Config(format!("pairs.buckets: expected label:lo:hi, got {spec:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[1].parse().map_err(|_| bad())?;
            let hi = match parts[2] {
                "inf" => None,
                h => Some(h.parse::<f64>().map_err(|_| bad())?),
            };
            Ok(GapBucket::new(parts[0], lo, hi))
        })
        .collect()
}

fn format_buckets(buckets: &[GapBucket]) -> String {
    buckets
        .iter()
        .map(|b| match b.hi {
            Some(hi) => format!("{}:{}:{}", b.label, b.lo, hi),
            None => format!("{}:{}:inf", b.label, b.lo),
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl ProtocolConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "paths.documents" => self.documents = Some(v.into()),
            "paths.folds" => self.folds = Some(v.into()),
            "paths.out" => self.out_dir = Some(v.into()),
            "protocol.traits" => self.traits = list(v),
            "protocol.fold_seeds" => {
                self.fold_seeds = list(v)
                    .iter()
                    .map(|kv| {
                        let (f, s) = kv
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("{key}: expected fold:seed, got {kv:?}")))?;
                        Ok((f.trim().to_string(), parse(key, s.trim())?))
                    })
                    .collect::<Result<_>>()?
            }
            "protocol.variants" => {
                self.variants = if v == "all" {
                    VariantSpec::all()
                } else {
                    list(v).iter().map(|s| s.parse()).collect::<Result<_>>()?
                }
            }
            "protocol.small_fraction" => self.small_fraction = parse(key, v)?,
            "protocol.std" => {
                self.std_kind = match v {
                    "population" => StdKind::Population,
                    "sample" => StdKind::Sample,
                    _ => return Err(Error::Config(format!("{key}: expected population or sample"))),
                }
            }
            "features.dim" => self.features.dim = parse(key, v)?,
            "features.char_ngram" => self.features.char_ngram = parse(key, v)?,
            "features.word_unigrams" => self.features.use_word_unigrams = parse_bool(key, v)?,
            "features.hash_seed" => self.features.hash_seed = parse(key, v)?,
            "model.trunk_dim" => self.trunk_dim = parse(key, v)?,
            "pairs.min_gap" => self.pairs.min_gap = parse(key, v)?,
            "pairs.usage_target" => self.pairs.usage_target = parse(key, v)?,
            "pairs.buckets" => self.pairs.buckets = parse_buckets(v)?,
            "stage1.lr" => self.stage1.lr = parse(key, v)?,
            "stage1.weight_decay" => self.stage1.weight_decay = parse(key, v)?,
            "stage1.batch_size" => self.stage1.batch_size = parse(key, v)?,
            "stage1.max_epochs" => self.stage1.max_epochs = parse(key, v)?,
            "stage1.patience" => self.stage1.patience = parse(key, v)?,
            "stage1.min_delta" => self.stage1.min_delta = parse(key, v)?,
            "stage2.lr" => self.stage2.lr = parse(key, v)?,
            "stage2.weight_decay" => self.stage2.weight_decay = parse(key, v)?,
            "stage2.batch_size" => self.stage2.batch_size = parse(key, v)?,
            "stage2.max_epochs" => self.stage2.max_epochs = parse(key, v)?,
            "stage2.patience" => self.stage2.patience = parse(key, v)?,
            "stage2.min_delta" => self.stage2.min_delta = parse(key, v)?,
            "stage2.output_bias" => {
                self.stage2.output_bias = match v {
                    "zero" => OutputBias::Zero,
                    "train_median" => OutputBias::TrainMedian,
                    _ => return Err(Error::Config(format!("{key}: expected zero or train_median"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `text` on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ProtocolConfig::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find(" #") {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            let key = if section.is_empty() || k.contains('.') {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            if !seen.insert(key.clone()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(&key, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.pairs.validate()?;
        if self.traits.is_empty() || self.fold_seeds.is_empty() || self.variants.is_empty() {
            return Err(Error::Config("traits, fold seeds and variants must be non-empty".into()));
        }
        if !(self.small_fraction > 0.0 && self.small_fraction <= 1.0) {
            return Err(Error::Config("protocol.small_fraction must be in (0, 1]".into()));
        }
        if self.trunk_dim < 2 {
            return Err(Error::Config("model.trunk_dim must be at least 2".into()));
        }
        let mut folds: Vec<&String> = self.fold_seeds.iter().map(|(f, _)| f).collect();
        folds.sort();
        folds.dedup();
        if folds.len() != self.fold_seeds.len() {
            return Err(Error::Config("protocol.fold_seeds lists a fold twice".into()));
        }
        Ok(())
    }

    pub fn seed_for(&self, fold: &str) -> Result<u64> {
        self.fold_seeds
            .iter()
            .find(|(f, _)| f == fold)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::Config(format!("no seed configured for fold {fold:?}")))
    }

    pub fn folds(&self) -> Vec<String> {
        self.fold_seeds.iter().map(|(f, _)| f.clone()).collect()
    }

    /// Every setting except paths, one `key = value` per line in a fixed order.
    fn settings_text(&self) -> String {
        let f = &self.features;
        let (s1, s2) = (&self.stage1, &self.stage2);
        let lines = [
            "[protocol]".to_string(),
            format!("traits = {}", self.traits.join(",")),
            format!(
                "fold_seeds = {}",
                self.fold_seeds
                    .iter()
                    .map(|(f, s)| format!("{f}:{s}"))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            format!(
                "variants = {}",
                self.variants.iter().map(|v| v.code()).collect::<Vec<_>>().join(",")
            ),
            format!("small_fraction = {}", self.small_fraction),
            format!(
                "std = {}",
                match self.std_kind {
                    StdKind::Population => "population",
                    StdKind::Sample => "sample",
                }
            ),
            String::new(),
            "[features]".into(),
            format!("dim = {}", f.dim),
            format!("char_ngram = {}", f.char_ngram),
            format!("word_unigrams = {}", f.use_word_unigrams),
            format!("hash_seed = {}", f.hash_seed),
            String::new(),
            "[model]".into(),
            format!("trunk_dim = {}", self.trunk_dim),
            String::new(),
            "[pairs]".into(),
            format!("min_gap = {}", self.pairs.min_gap),
            format!("usage_target = {}", self.pairs.usage_target),
            format!("buckets = {}", format_buckets(&self.pairs.buckets)),
            String::new(),
            "[stage1]".into(),
            format!("lr = {}", s1.lr),
            format!("weight_decay = {}", s1.weight_decay),
            format!("batch_size = {}", s1.batch_size),
            format!("max_epochs = {}", s1.max_epochs),
            format!("patience = {}", s1.patience),
            format!("min_delta = {}", s1.min_delta),
            String::new(),
            "[stage2]".into(),
            format!("lr = {}", s2.lr),
            format!("weight_decay = {}", s2.weight_decay),
            format!("batch_size = {}", s2.batch_size),
            format!("max_epochs = {}", s2.max_epochs),
            format!("patience = {}", s2.patience),
            format!("min_delta = {}", s2.min_delta),
            format!(
                "output_bias = {}",
                match s2.output_bias {
                    OutputBias::Zero => "zero",
                    OutputBias::TrainMedian => "train_median",
                }
            ),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// The full configuration, including paths that are set.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let paths = [
            ("documents", &self.documents),
            ("folds", &self.folds),
            ("out", &self.out_dir),
        ];
        if paths.iter().any(|(_, p)| p.is_some()) {
            s.push_str("[paths]\n");
            for (k, p) in paths {
                if let Some(p) = p {
                    s.push_str(&format!("{k} = {}\n", p.display()));
                }
            }
            s.push('\n');
        }
        s.push_str(&self.settings_text());
        s
    }

    /// Short identity of every setting that affects results. Paths are
    /// excluded so a run can be moved or resumed from another directory.
    pub fn identity_hash(&self) -> String {
        let digest = Sha256::digest(self.settings_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ProtocolConfig::default();
        let text = cfg.to_text();
        assert_eq!(ProtocolConfig::from_text(&text).unwrap(), cfg);
        assert!(text.contains("fold_seeds = A:42,B:48,C:54,D:60,E:36"));
        assert!(text.contains("lr = 0.0002"));
        assert!(text.contains("buckets = >=3:3:inf,2-3:2:3,1-2:1:2"));
    }

    #[test]
    fn sections_comments_and_dotted_keys() {
        let cfg = ProtocolConfig::from_text(
            "# run\n[paths]\ndocuments = data/docs.csv\n\n[stage2]\nlr = 0.001 # faster\nstage1.max_epochs = 3\nprotocol.variants = baseline, SF-r1\n",
        )
        .unwrap();
        assert_eq!(cfg.documents.as_deref(), Some(Path::new("data/docs.csv")));
        assert_eq!(cfg.stage2.lr, 0.001);
        assert_eq!(cfg.stage1.max_epochs, 3);
        assert_eq!(cfg.variants.len(), 2);
        assert_eq!(ProtocolConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        let e = ProtocolConfig::from_text("stage1.lr = 1\nstage1.bogus = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(ProtocolConfig::from_text("stage1.lr = x").is_err());
        assert!(ProtocolConfig::from_text("stage1.lr = 1\nstage1.lr = 2").is_err());
        assert!(ProtocolConfig::from_text("no equals sign").is_err());
        assert!(ProtocolConfig::from_text("protocol.fold_seeds = A:1,A:2").is_err());
        assert!(ProtocolConfig::from_text("protocol.small_fraction = 0").is_err());
    }

    #[test]
    fn identity_ignores_paths_only() {
        let a = ProtocolConfig::default();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        b.documents = Some("x.csv".into());
        assert_eq!(a.identity_hash(), b.identity_hash());
        assert_eq!(a.identity_hash().len(), 16);
        b.stage2.lr = 2e-4;
        assert_ne!(a.identity_hash(), b.identity_hash());
    }

    #[test]
    fn seed_lookup() {
        let cfg = ProtocolConfig::default();
        assert_eq!(cfg.seed_for("E").unwrap(), 36);
        assert!(cfg.seed_for("Z").is_err());
        assert_eq!(cfg.folds(), ["A", "B", "C", "D", "E"]);
    }
}
