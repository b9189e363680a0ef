/// Reduce-on-plateau learning rate.
///
/// A validation loss counts as an improvement only when it beats the best so far
/// by more than `threshold`. After `patience` epochs without one the rate is
/// multiplied by `factor` and the counter restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: f64,
    pub epochs_since_improvement: usize,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    /// Reductions since the last improvement.
    pub reductions_since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        PlateauScheduler {
            lr,
            best: f64::INFINITY,
            epochs_since_improvement: 0,
            factor: 0.1,
            patience: 2,
            threshold: 1e-4,
            reductions_since_improvement: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns `true` when the rate was reduced.
    pub fn step(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.epochs_since_improvement = 0;
            self.reductions_since_improvement = 0;
            return false;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.lr *= self.factor;
            self.epochs_since_improvement = 0;
            self.reductions_since_improvement += 1;
            return true;
        }
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Scheduler plus best-epoch tracking and the stopping rule: halt once the rate
/// has been reduced `max_reductions` times without improvement, or at `max_epochs`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub scheduler: PlateauScheduler,
    pub max_epochs: usize,
    pub max_reductions: usize,
    best_epoch: Option<usize>,
    best_loss: f64,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(lr: f64, max_epochs: usize) -> Self {
        EarlyStopping {
            scheduler: PlateauScheduler::new(lr),
            max_epochs,
            max_reductions: 2,
            best_epoch: None,
            best_loss: f64::INFINITY,
            epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    /// 1-based epoch with the lowest validation loss; the earlier epoch wins ties.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// Whether the epoch just observed is the new best.
    pub fn is_best(&self) -> bool {
        self.best_epoch == Some(self.epochs)
    }

    pub fn observe(&mut self, val_loss: f64) -> Decision {
        self.epochs += 1;
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = Some(self.epochs);
        }
        self.scheduler.step(val_loss);
        if self.scheduler.reductions_since_improvement >= self.max_reductions
            || self.epochs >= self.max_epochs
        {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

/// Replays a validation-loss trace: learning rate in force after each epoch,
/// the epoch training stops at, and the selected best epoch.
pub fn replay(lr: f64, max_epochs: usize, val_losses: &[f64]) -> (Vec<f64>, usize, usize) {
    let mut es = EarlyStopping::new(lr, max_epochs);
    let mut lrs = Vec::new();
    let mut stop = 0;
    for (i, &loss) in val_losses.iter().enumerate() {
        let d = es.observe(loss);
        lrs.push(es.lr());
        stop = i + 1;
        if d == Decision::Stop {
            break;
        }
    }
    (lrs, stop, es.best_epoch().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_losses_reduce_after_third_epoch() {
        let mut s = PlateauScheduler::new(1e-3);
        assert!(!s.step(1.0));
        assert!(!s.step(1.0));
        assert!(s.step(1.0));
        assert_eq!(s.lr, 1e-3 * 0.1);
    }

    #[test]
    fn improvement_below_threshold_is_plateau() {
        let mut s = PlateauScheduler::new(1e-3);
        s.step(1.0);
        s.step(1.0 - 1e-6);
        assert_eq!(s.epochs_since_improvement, 1);
    }

    #[test]
    fn decreasing_losses_keep_rate() {
        let (lrs, stop, best) = replay(3e-4, 20, &(0..20).map(|i| 5.0 - i as f64 * 0.1).collect::<Vec<_>>());
        assert!(lrs.iter().all(|&lr| lr == 3e-4));
        assert_eq!((stop, best), (20, 20));
    }

    #[test]
    fn best_epoch_is_argmin_with_earliest_tie() {
        let (_, _, best) = replay(1e-3, 100, &[3.0, 2.0, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0]);
        assert_eq!(best, 2);
        let (_, _, best) = replay(1e-3, 100, &[3.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(best, 2);
    }

    #[test]
    fn stops_after_two_reductions_without_improvement() {
        let (lrs, stop, best) = replay(1e-3, 100, &[3.0, 2.0, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0]);
        assert_eq!(stop, 6);
        assert_eq!(best, 2);
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-3, 1e-3 * 0.1, 1e-3 * 0.1, 1e-3 * 0.1 * 0.1]);
    }

    proptest! {
        #[test]
        fn rate_never_increases_and_drops_by_factor(losses in prop::collection::vec(0.0f64..10.0, 1..60)) {
            let mut s = PlateauScheduler::new(1e-3);
            let mut prev = s.lr;
            for l in losses {
                let reduced = s.step(l);
                prop_assert!(s.lr > 0.0);
                if reduced {
                    prop_assert_eq!(s.lr, prev * 0.1);
                } else {
                    prop_assert_eq!(s.lr, prev);
                }
                prev = s.lr;
            }
        }

        #[test]
        fn best_loss_is_trace_minimum(losses in prop::collection::vec(0.0f64..10.0, 1..60)) {
            let mut es = EarlyStopping::new(1e-3, 1000);
            let mut seen = Vec::new();
            for l in losses {
                seen.push(l);
                if es.observe(l) == Decision::Stop {
                    break;
                }
            }
            let min = seen.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(es.best_loss(), min);
            let first = seen.iter().position(|&l| l == min).unwrap() + 1;
            prop_assert_eq!(es.best_epoch(), Some(first));
        }
    }
}
