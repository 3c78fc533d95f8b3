//! Adaptive-moment optimizer and learning-rate schedules.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::graph::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Linear,
}

/// Learning rate at optimizer step `step` (0-based): linear warmup, then
/// constant or linear decay to zero at `total_steps`.
pub fn learning_rate(base: f64, schedule: Schedule, warmup: usize, step: usize, total_steps: usize) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Linear => {
            let span = total_steps.saturating_sub(warmup).max(1) as f64;
            let done = (step - warmup.min(step)) as f64;
            base * (1.0 - done / span).max(0.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Mat>) -> Self {
        let (m, v): (Vec<Mat>, Vec<Mat>) = params
            .into_iter()
            .map(|p| (Mat::zeros(p.raw_dim()), Mat::zeros(p.raw_dim())))
            .unzip();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m, v }
    }

    pub fn steps(&self) -> usize {
        self.step as usize
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Mat>, grads: &[Mat], lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn warmup_then_schedules() {
        assert_eq!(learning_rate(1.0, Schedule::Constant, 4, 0, 10), 0.25);
        assert_eq!(learning_rate(1.0, Schedule::Constant, 4, 3, 10), 1.0);
        assert_eq!(learning_rate(1.0, Schedule::Constant, 0, 9, 10), 1.0);
        assert_eq!(learning_rate(1.0, Schedule::Linear, 0, 0, 10), 1.0);
        assert!((learning_rate(1.0, Schedule::Linear, 0, 5, 10) - 0.5).abs() < 1e-12);
        assert_eq!(learning_rate(1.0, Schedule::Linear, 2, 12, 10), 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic_and_zero_lr_is_identity() {
        let mut p = vec![array![[3.0, -2.0]]];
        let mut adam = Adam::new(&p);
        for _ in 0..2000 {
            let g = vec![p[0].clone() * 2.0];
            adam.step(p.iter_mut(), &g, 0.05);
        }
        assert!(p[0].iter().all(|v| v.abs() < 1e-2));
        let before = p.clone();
        let g = vec![array![[1.0, 1.0]]];
        adam.step(p.iter_mut(), &g, 0.0);
        assert_eq!(p, before);
    }
}
