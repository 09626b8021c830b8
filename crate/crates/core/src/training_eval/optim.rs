use serde::{Deserialize, Serialize};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(size: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; size],
            v: vec![0.0; size],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer built for a different parameter count");
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// What the early-stopping rule concluded after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stale,
    Stop,
}

/// Stops once the monitored metric has not improved for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Stale
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut adam = Adam::new(3, 0.01);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[4.0, -0.001, 0.0]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-5);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut adam = Adam::new(2, 0.05);
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn improving_metric_never_stops() {
        let mut es = EarlyStopping::new(30);
        for epoch in 1..=100 {
            assert_eq!(es.observe(epoch, 100.0 - epoch as f64), Verdict::Improved);
        }
        assert_eq!(es.best_epoch, 100);
    }

    #[test]
    fn frozen_metric_stops_at_patience_plus_one() {
        let mut es = EarlyStopping::new(30);
        let mut stopped = None;
        for epoch in 1..=100 {
            if es.observe(epoch, 1.0) == Verdict::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(31));
        assert_eq!(es.best_epoch, 1);
    }
}
