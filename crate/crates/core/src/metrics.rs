//! Agreement and correlation metrics.

use crate::error::{Error, Result};

/// An ordered rubric grid `lo, lo + 0.5, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
}

impl GridSpec {
    pub const RUBRIC: GridSpec = GridSpec { lo: 1.0, hi: 5.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let on_half = |v: f64| v.is_finite() && (2.0 * v).fract() == 0.0;
        if !(on_half(lo) && on_half(hi)) || hi < lo {
            return Err(Error::invalid(format!("bad grid [{lo}, {hi}]")));
        }
        Ok(GridSpec { lo, hi })
    }

    pub fn categories(&self) -> usize {
        (2.0 * (self.hi - self.lo)).round() as usize + 1
    }

    /// Category index `round(2(v − lo))`, validated to be on the grid.
    pub fn index(&self, v: f64) -> Result<usize> {
        let raw = 2.0 * (v - self.lo);
        let idx = raw.round();
        if !v.is_finite() || (raw - idx).abs() > 1e-9 || idx < 0.0 || idx as usize >= self.categories() {
            return Err(Error::invalid(format!(
                "{v} is not on grid [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(idx as usize)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.categories()).map(|i| self.lo + 0.5 * i as f64).collect()
    }
}

/// Quadratic weighted kappa between two grid labelings.
pub fn qwk(truth: &[f64], pred: &[f64], grid: &GridSpec) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension {
            what: "qwk inputs",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::Degenerate("qwk needs at least two items".into()));
    }
    let k = grid.categories();
    let n = truth.len() as f64;
    let mut observed = vec![0.0; k * k];
    let mut row = vec![0.0; k];
    let mut col = vec![0.0; k];
    for (&t, &p) in truth.iter().zip(pred) {
        let (i, j) = (grid.index(t)?, grid.index(p)?);
        observed[i * k + j] += 1.0;
        row[i] += 1.0;
        col[j] += 1.0;
    }
    let scale = ((k.max(2) - 1) * (k.max(2) - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / scale;
            num += w * observed[i * k + j] / n;
            den += w * (row[i] / n) * (col[j] / n);
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "qwk undefined: both labelings concentrate on one category".into(),
        ));
    }
    Ok(1.0 - num / den)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            what: "correlation inputs",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("correlation needs at least two points".into()));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}
