//! Aggregates over a [`ResultTable`]: trait means, spread, best-variant
//! counts, paired contrasts and Stage-1/Stage-2 correlations.

use std::str::FromStr;

use serde::Serialize;

use crate::config::StdKind;
use crate::error::{Error, Result};
use crate::metrics::{pearson, spearman};
use crate::stage2::{Duration, Family, PairSetSize, VariantSpec};

use super::results::ResultTable;

pub fn std_dev(values: &[f64], kind: StdKind) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match kind {
        StdKind::Population => n,
        StdKind::Sample => n - 1,
    };
    (ss / denom as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64], kind: StdKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("spread of an empty set"));
        }
        Ok(Spread {
            n: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: std_dev(values, kind),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraitMean {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub variant: VariantSpec,
    pub spread: Spread,
}

/// Mean test QWK over folds for every (variant, trait), variants in
/// precedence order. Every fold of the table must be present.
pub fn trait_means(table: &ResultTable, kind: StdKind) -> Result<Vec<TraitMean>> {
    let folds = table.folds();
    let mut out = Vec::new();
    for variant in table.variants() {
        for t in table.traits() {
            let vals = folds
                .iter()
                .map(|f| table.qwk(&t, f, variant))
                .collect::<Result<Vec<f64>>>()?;
            out.push(TraitMean {
                trait_name: t,
                variant,
                spread: Spread::of(&vals, kind)?,
            });
        }
    }
    Ok(out)
}

/// Spread of the baseline and of the best transfer variant per run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadSummary {
    pub baseline: Spread,
    pub best_transfer: Spread,
    /// Runs where the best transfer variant strictly beats the baseline.
    pub transfer_wins: usize,
    /// Mean of (best transfer − baseline) over runs.
    pub mean_best_gain: f64,
}

pub fn spread_summary(table: &ResultTable, kind: StdKind) -> Result<SpreadSummary> {
    let transfer: Vec<VariantSpec> = table
        .variants()
        .into_iter()
        .filter(|v| *v != VariantSpec::Baseline)
        .collect();
    if transfer.is_empty() {
        return Err(Error::invalid("no transfer variants in the table"));
    }
    let (mut base, mut best) = (Vec::new(), Vec::new());
    for t in table.traits() {
        for f in table.folds() {
            base.push(table.qwk(&t, &f, VariantSpec::Baseline)?);
            let mut m = f64::NEG_INFINITY;
            for v in &transfer {
                m = m.max(table.qwk(&t, &f, *v)?);
            }
            best.push(m);
        }
    }
    let gains: Vec<f64> = best.iter().zip(&base).map(|(b, a)| b - a).collect();
    Ok(SpreadSummary {
        baseline: Spread::of(&base, kind)?,
        best_transfer: Spread::of(&best, kind)?,
        transfer_wins: gains.iter().filter(|g| **g > 0.0).count(),
        mean_best_gain: gains.iter().sum::<f64>() / gains.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRow {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub fold: String,
    pub best_qwk: f64,
    /// The credited variant: the first co-winner in precedence order.
    pub winner: VariantSpec,
    /// Every variant attaining the row maximum.
    pub co_winners: Vec<VariantSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestFrequency {
    /// Every variant in the table with its win count, precedence order.
    pub counts: Vec<(VariantSpec, usize)>,
    pub rows: Vec<BestRow>,
}

/// Counts how often each variant attains its (trait, fold) row maximum.
/// Exact ties are credited once, to the co-winner earliest in
/// [`VariantSpec::all`] order (baseline first).
pub fn best_variant_freq(table: &ResultTable) -> Result<BestFrequency> {
    let variants = table.variants();
    let mut counts: Vec<(VariantSpec, usize)> = variants.iter().map(|v| (*v, 0)).collect();
    let mut rows = Vec::new();
    for t in table.traits() {
        for f in table.folds() {
            let vals = variants
                .iter()
                .map(|v| table.qwk(&t, &f, *v))
                .collect::<Result<Vec<f64>>>()?;
            let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let co_winners: Vec<VariantSpec> = variants
                .iter()
                .zip(&vals)
                .filter(|(_, q)| **q == best)
                .map(|(v, _)| *v)
                .collect();
            let winner = co_winners[0];
            counts.iter_mut().find(|(v, _)| *v == winner).expect("listed").1 += 1;
            rows.push(BestRow {
                trait_name: t.clone(),
                fold: f,
                best_qwk: best,
                winner,
                co_winners,
            });
        }
    }
    Ok(BestFrequency { counts, rows })
}

/// The factor varied by a paired contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// One-epoch (first) versus standard (second).
    Duration,
    /// Large (first) versus small (second).
    PairSet,
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duration" => Ok(Factor::Duration),
            "pair_set" | "pair-set" | "size" => Ok(Factor::PairSet),
            _ => Err(Error::invalid(format!("unknown factor {s:?}; use duration or pair_set"))),
        }
    }
}

/// Variant pair for varying `vary` with the family and the remaining factor
/// held at the levels named in `fixed` (e.g. `["small", "warm_start"]`).
pub fn contrast(vary: Factor, fixed: &[&str]) -> Result<(VariantSpec, VariantSpec)> {
    let mut family = None;
    let mut size = None;
    let mut duration = None;
    for tok in fixed {
        match tok.trim() {
            "warm_start" | "warm-start" | "ws" => family = Some(Family::WarmStart),
            "fusion" => family = Some(Family::Fusion),
            "small" => size = Some(PairSetSize::Small),
            "large" => size = Some(PairSetSize::Large),
            "standard" | "std" => duration = Some(Duration::Standard),
            "one_epoch" | "one-epoch" | "1-ep" => duration = Some(Duration::OneEpoch),
            other => return Err(Error::invalid(format!("unknown level {other:?}"))),
        }
    }
    let family = family.ok_or_else(|| Error::invalid("fix a family: warm_start or fusion"))?;
    match vary {
        Factor::Duration => {
            if duration.is_some() {
                return Err(Error::invalid("duration is the varied factor; do not fix it"));
            }
            let size = size.ok_or_else(|| Error::invalid("fix a pair set: small or large"))?;
            Ok((
                VariantSpec::transfer(family, size, Duration::OneEpoch)?,
                VariantSpec::transfer(family, size, Duration::Standard)?,
            ))
        }
        Factor::PairSet => {
            if size.is_some() {
                return Err(Error::invalid("pair set is the varied factor; do not fix it"));
            }
            let duration = duration.ok_or_else(|| Error::invalid("fix a duration: standard or one_epoch"))?;
            Ok((
                VariantSpec::transfer(family, PairSetSize::Large, duration)?,
                VariantSpec::transfer(family, PairSetSize::Small, duration)?,
            ))
        }
    }
}

/// The eight standard contrasts: four varying duration, four varying size.
pub fn standard_contrasts() -> Vec<(Factor, String, VariantSpec, VariantSpec)> {
    let mut out = Vec::new();
    for size in ["small", "large"] {
        for fam in ["warm_start", "fusion"] {
            let (a, b) = contrast(Factor::Duration, &[size, fam]).expect("valid levels");
            out.push((Factor::Duration, format!("{size}, {fam}"), a, b));
        }
    }
    for fam in ["warm_start", "fusion"] {
        for dur in ["standard", "one_epoch"] {
            let (a, b) = contrast(Factor::PairSet, &[fam, dur]).expect("valid levels");
            out.push((Factor::PairSet, format!("{fam}, {dur}"), a, b));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedResult {
    pub first: VariantSpec,
    pub second: VariantSpec,
    /// Mean of (first − second); positive favors `first`.
    pub mean_delta: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub n: usize,
}

pub fn paired_comparison(table: &ResultTable, first: VariantSpec, second: VariantSpec) -> Result<PairedResult> {
    let mut deltas = Vec::new();
    for t in table.traits() {
        for f in table.folds() {
            deltas.push(table.qwk(&t, &f, first)? - table.qwk(&t, &f, second)?);
        }
    }
    if deltas.is_empty() {
        return Err(Error::invalid("empty table"));
    }
    Ok(PairedResult {
        first,
        second,
        mean_delta: deltas.iter().sum::<f64>() / deltas.len() as f64,
        wins: deltas.iter().filter(|d| **d > 0.0).count(),
        ties: deltas.iter().filter(|d| **d == 0.0).count(),
        losses: deltas.iter().filter(|d| **d < 0.0).count(),
        n: deltas.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    PairtestAcc,
    ValAcc,
    ValLoss,
    BestEpoch,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 4] = [
        Diagnostic::PairtestAcc,
        Diagnostic::ValAcc,
        Diagnostic::ValLoss,
        Diagnostic::BestEpoch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Diagnostic::PairtestAcc => "pairtest_acc",
            Diagnostic::ValAcc => "val_acc",
            Diagnostic::ValLoss => "val_loss",
            Diagnostic::BestEpoch => "best_epoch",
        }
    }
}

impl FromStr for Diagnostic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Diagnostic::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown diagnostic {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub diagnostic: Diagnostic,
    /// `overall` or a trait name.
    pub scope: String,
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

/// Correlates a Stage-1 diagnostic with Stage-2 test QWK over transfer
/// records. Records sharing an artifact repeat its diagnostics.
pub fn stage1_stage2_correlation(table: &ResultTable, diagnostic: Diagnostic, per_trait: bool) -> Result<Vec<Correlation>> {
    let scopes: Vec<Option<String>> = if per_trait {
        table.traits().into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for scope in scopes {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for r in table.records() {
            let Some(link) = &r.stage1 else { continue };
            if scope.as_ref().is_some_and(|t| *t != r.trait_name) {
                continue;
            }
            let v = match diagnostic {
                Diagnostic::PairtestAcc => link.pairtest_acc.ok_or_else(|| {
                    Error::invalid(format!("{} has no pair-test accuracy", link.artifact))
                })?,
                Diagnostic::ValAcc => link.val_acc,
                Diagnostic::ValLoss => link.val_loss,
                Diagnostic::BestEpoch => link.best_epoch as f64,
            };
            x.push(v);
            y.push(r.test_qwk);
        }
        out.push(Correlation {
            diagnostic,
            scope: scope.unwrap_or_else(|| "overall".into()),
            pearson: pearson(&x, &y)?,
            spearman: spearman(&x, &y)?,
            n: x.len(),
        });
    }
    Ok(out)
}
