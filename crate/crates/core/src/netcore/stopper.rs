#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early stopping on a maximized metric.
///
/// An epoch improves iff `metric > best + min_delta`. Improvements store the
/// snapshot and reset the counter; anything else increments it, and training
/// stops once the counter exceeds `patience`.
#[derive(Debug, Clone)]
pub struct EarlyStopper<T> {
    pub patience: usize,
    pub min_delta: f64,
    best: Option<(usize, f64, T)>,
    since_improvement: usize,
}

impl<T> EarlyStopper<T> {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopper {
            patience,
            min_delta,
            best: None,
            since_improvement: 0,
        }
    }

    /// `epoch` is 1-based and only recorded alongside the snapshot.
    pub fn update(&mut self, epoch: usize, metric: f64, snapshot: impl FnOnce() -> T) -> StopDecision {
        let improved = match &self.best {
            None => true,
            Some((_, best, _)) => metric > best + self.min_delta,
        };
        if improved {
            self.best = Some((epoch, metric, snapshot()));
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, m, _)| *m)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _, _)| *e)
    }

    pub fn best_snapshot(&self) -> Option<&T> {
        self.best.as_ref().map(|(_, _, s)| s)
    }

    pub fn into_best(self) -> Option<(usize, f64, T)> {
        self.best
    }
}
