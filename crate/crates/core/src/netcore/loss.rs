/// `log(1 + exp(−d))` in the overflow-free form `max(0, −d) + log1p(exp(−|d|))`.
pub fn pairwise_loss(d: f64) -> f64 {
    (-d).max(0.0) + (-d.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn l1_loss(pred: f64, y: f64) -> f64 {
    (pred - y).abs()
}

pub fn mean_l1_loss(preds: &[f64], ys: &[f64]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(ys).map(|(&p, &y)| l1_loss(p, y)).sum::<f64>() / preds.len() as f64
}
