//! Plain-text and CSV renderings of the analyses.

use super::analysis::{BestFrequency, Correlation, PairedResult, SpreadSummary, TraitMean};
use super::results::ResultTable;
use crate::stage2::VariantSpec;

/// A header plus string rows, rendered aligned or as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    fn new(headers: &[&str]) -> Self {
        TextTable {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Columns padded to their widest cell; the first column is
    /// left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len().saturating_sub(1))));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let esc = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        let mut out = String::new();
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            out.push_str(&row.iter().map(esc).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn signed(v: f64) -> String {
    format!("{v:+.4}")
}

/// Variants as rows, traits as columns of mean QWK.
pub fn trait_means_table(rows: &[TraitMean]) -> TextTable {
    let mut traits: Vec<&str> = Vec::new();
    let mut variants: Vec<VariantSpec> = Vec::new();
    for r in rows {
        if !traits.contains(&r.trait_name.as_str()) {
            traits.push(&r.trait_name);
        }
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    let mut headers = vec!["setting"];
    headers.extend(&traits);
    let mut t = TextTable::new(&headers);
    for v in variants {
        let mut row = vec![v.code()];
        for tr in &traits {
            let cell = rows
                .iter()
                .find(|r| r.variant == v && r.trait_name == *tr)
                .map(|r| f4(r.spread.mean))
                .unwrap_or_default();
            row.push(cell);
        }
        t.rows.push(row);
    }
    t
}

/// One row per (trait, variant) with mean, range and std.
pub fn trait_means_long(rows: &[TraitMean]) -> TextTable {
    let mut t = TextTable::new(&["trait", "variant", "n", "mean", "min", "max", "std"]);
    for r in rows {
        let s = &r.spread;
        t.rows.push(vec![
            r.trait_name.clone(),
            r.variant.code(),
            s.n.to_string(),
            f4(s.mean),
            f4(s.min),
            f4(s.max),
            f4(s.std),
        ]);
    }
    t
}

pub fn spread_table(s: &SpreadSummary) -> TextTable {
    let mut t = TextTable::new(&["series", "n", "mean", "min", "max", "std"]);
    for (name, sp) in [("baseline", &s.baseline), ("best_transfer", &s.best_transfer)] {
        t.rows.push(vec![
            name.into(),
            sp.n.to_string(),
            f4(sp.mean),
            f4(sp.min),
            f4(sp.max),
            f4(sp.std),
        ]);
    }
    t
}

pub fn best_freq_table(b: &BestFrequency) -> TextTable {
    let mut t = TextTable::new(&["variant", "count"]);
    for (v, c) in &b.counts {
        t.rows.push(vec![v.code(), c.to_string()]);
    }
    t
}

/// Per-run winners, listing every co-winner of a tied maximum.
pub fn best_rows_table(b: &BestFrequency) -> TextTable {
    let mut t = TextTable::new(&["trait", "fold", "best_qwk", "credited", "co_winners"]);
    for r in &b.rows {
        t.rows.push(vec![
            r.trait_name.clone(),
            r.fold.clone(),
            f4(r.best_qwk),
            r.winner.code(),
            r.co_winners.iter().map(|v| v.code()).collect::<Vec<_>>().join(" "),
        ]);
    }
    t
}

pub fn paired_table(rows: &[(String, PairedResult)]) -> TextTable {
    let mut t = TextTable::new(&["contrast", "first", "second", "mean_delta", "wins", "ties", "losses", "n"]);
    for (label, p) in rows {
        t.rows.push(vec![
            label.clone(),
            p.first.code(),
            p.second.code(),
            signed(p.mean_delta),
            p.wins.to_string(),
            p.ties.to_string(),
            p.losses.to_string(),
            p.n.to_string(),
        ]);
    }
    t
}

pub fn correlation_table(rows: &[Correlation]) -> TextTable {
    let mut t = TextTable::new(&["diagnostic", "scope", "pearson", "spearman", "n"]);
    for c in rows {
        t.rows.push(vec![
            c.diagnostic.as_str().into(),
            c.scope.clone(),
            f4(c.pearson),
            f4(c.spearman),
            c.n.to_string(),
        ]);
    }
    t
}

/// Fold-level test QWK: one row per (trait, fold), one column per variant.
pub fn fold_matrix_table(table: &ResultTable) -> TextTable {
    let variants = table.variants();
    let mut headers = vec!["trait".to_string(), "fold".to_string()];
    headers.extend(variants.iter().map(|v| v.code()));
    let mut t = TextTable {
        headers,
        rows: Vec::new(),
    };
    for tr in table.traits() {
        for f in table.folds() {
            let mut row = vec![tr.clone(), f.clone()];
            for v in &variants {
                row.push(table.get(&tr, &f, *v).map(|r| f4(r.test_qwk)).unwrap_or_default());
            }
            t.rows.push(row);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_and_csv() {
        let mut t = TextTable::new(&["name", "value"]);
        t.rows.push(vec!["a".into(), "1.0000".into()]);
        t.rows.push(vec!["long,name".into(), "-0.5".into()]);
        assert_eq!(
            t.to_text(),
            "name        value\n-----------------\na          1.0000\nlong,name    -0.5\n"
        );
        assert_eq!(t.to_csv(), "name,value\na,1.0000\n\"long,name\",-0.5\n");
    }
}
