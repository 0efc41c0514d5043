//! Sample summaries used by the experiment drivers and statistical tests.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for n < 2.
    pub std_dev: f64,
    pub std_err: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std_dev: f64::NAN, std_err: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_dev = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { n, mean, std_dev, std_err: std_dev / (n as f64).sqrt() }
    }

    /// Normal-approximation 95% interval.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_err, self.mean + 1.96 * self.std_err)
    }
}

/// True when the two 95% intervals do not overlap.
pub fn separated(a: &Summary, b: &Summary) -> bool {
    let (alo, ahi) = a.ci95();
    let (blo, bhi) = b.ci95();
    ahi < blo || bhi < alo
}
