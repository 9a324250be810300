//! Run records and the append-only results file.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage2::VariantSpec;

/// Stage-1 diagnostics of the artifact a transfer run consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Link {
    /// Artifact identifier, `stage1/<trait>/<fold>/<setting>`.
    pub artifact: String,
    pub val_acc: f64,
    pub val_loss: f64,
    pub pairtest_acc: Option<f64>,
    pub pairtest_loss: Option<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub fold: String,
    pub seed: u64,
    pub variant: VariantSpec,
    pub test_qwk: f64,
    /// Selection-time validation QWK; absent for imported tables.
    #[serde(default)]
    pub val_qwk: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    /// Absent for the baseline.
    #[serde(default)]
    pub stage1: Option<Stage1Link>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl RunRecord {
    pub fn key(&self) -> (&str, &str, VariantSpec) {
        (&self.trait_name, &self.fold, self.variant)
    }
}

/// Records unique by (trait, fold, variant), kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    records: Vec<RunRecord>,
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = RunRecord>) -> Result<Self> {
        let mut t = ResultTable::new();
        for r in records {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, record: RunRecord) -> Result<()> {
        if self.get(&record.trait_name, &record.fold, record.variant).is_some() {
            return Err(Error::invalid(format!(
                "duplicate record for trait={} fold={} variant={}",
                record.trait_name, record.fold, record.variant
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, trait_name: &str, fold: &str, variant: VariantSpec) -> Option<&RunRecord> {
        self.records
            .iter()
            .find(|r| r.trait_name == trait_name && r.fold == fold && r.variant == variant)
    }

    /// Test QWK for one cell, or an error naming the missing cell.
    pub fn qwk(&self, trait_name: &str, fold: &str, variant: VariantSpec) -> Result<f64> {
        self.get(trait_name, fold, variant)
            .map(|r| r.test_qwk)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no record for trait={trait_name} fold={fold} variant={variant}"
                ))
            })
    }

    /// Traits in first-appearance order.
    pub fn traits(&self) -> Vec<String> {
        first_seen(self.records.iter().map(|r| r.trait_name.as_str()))
    }

    /// Folds in first-appearance order.
    pub fn folds(&self) -> Vec<String> {
        first_seen(self.records.iter().map(|r| r.fold.as_str()))
    }

    /// Variants present, in precedence order.
    pub fn variants(&self) -> Vec<VariantSpec> {
        VariantSpec::all()
            .into_iter()
            .filter(|v| self.records.iter().any(|r| r.variant == *v))
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut t = ResultTable::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: RunRecord = serde_json::from_str(line).map_err(|e| Error::Format {
                what: "results file",
                msg: format!("line {}: {e}", n + 1),
            })?;
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Reads a long-form `trait,fold,variant,test_qwk[,seed]` CSV, e.g. a
    /// reference fold-level matrix. Missing seeds come from `seed_of`.
    pub fn from_matrix_csv(text: &str, seed_of: impl Fn(&str) -> Option<u64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let bad = |msg: String| Error::Format { what: "matrix csv", msg };
        let (t, f, v, q) = match (col("trait"), col("fold"), col("variant"), col("test_qwk")) {
            (Some(t), Some(f), Some(v), Some(q)) => (t, f, v, q),
            _ => return Err(bad("need trait, fold, variant and test_qwk columns".into())),
        };
        let s = col("seed");
        let mut table = ResultTable::new();
        for row in rdr.records() {
            let row = row?;
            let fold = row[f].to_string();
            let seed = match s {
                Some(i) => row[i].parse().map_err(|_| bad(format!("bad seed {:?}", &row[i])))?,
                None => seed_of(&fold).ok_or_else(|| bad(format!("no seed for fold {fold}")))?,
            };
            table.push(RunRecord {
                trait_name: row[t].to_string(),
                fold,
                seed,
                variant: row[v].parse()?,
                test_qwk: row[q].parse().map_err(|_| bad(format!("bad qwk {:?}", &row[q])))?,
                val_qwk: None,
                best_epoch: None,
                stage1: None,
                config_hash: None,
            })?;
        }
        Ok(table)
    }
}

/// Appends one JSON line per record and flushes, so an interrupted run
/// leaves only whole records behind.
pub(crate) fn append_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
