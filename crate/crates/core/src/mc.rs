//! Monte Carlo estimates with standard errors.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    /// Sample standard deviation over √count.
    pub stderr: f64,
    pub count: usize,
    pub seed: u64,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64], seed: u64) -> Self {
        let n = xs.len();
        if n == 0 {
            return MCEstimate { mean: 0.0, stderr: 0.0, count: 0, seed };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        MCEstimate { mean, stderr: (var / n as f64).sqrt(), count: n, seed }
    }

    pub fn exact(value: f64) -> Self {
        MCEstimate { mean: value, stderr: 0.0, count: 0, seed: 0 }
    }

    pub fn scale(&self, c: f64) -> Self {
        MCEstimate { mean: self.mean * c, stderr: self.stderr * c.abs(), ..self.clone() }
    }

    /// Sum of independent estimates.
    pub fn plus(&self, other: &MCEstimate) -> Self {
        MCEstimate {
            mean: self.mean + other.mean,
            stderr: self.stderr.hypot(other.stderr),
            count: self.count + other.count,
            seed: self.seed,
        }
    }

    /// Whether `target` lies within `k` standard errors.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }

    pub fn relative_stderr(&self) -> f64 {
        if self.mean == 0.0 {
            f64::INFINITY
        } else {
            self.stderr / self.mean.abs()
        }
    }
}
