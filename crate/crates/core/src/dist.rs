//! Small helpers for finite probability vectors.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Row-sum tolerance used for every probability table in the crate.
pub const ROW_TOL: f64 = 1e-12;

pub fn check_distribution(row: &[f64], context: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + ROW_TOL) {
        return Err(Error::InvalidDistribution {
            context: format!("{context}: entry outside [0,1]"),
            sum: row.iter().sum(),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidDistribution {
            context: context.to_string(),
            sum,
        });
    }
    Ok(())
}

pub fn check_table(table: &[Vec<f64>], width: usize, context: &str) -> Result<()> {
    for (i, row) in table.iter().enumerate() {
        if row.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "{context}: row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
        check_distribution(row, &format!("{context} row {i}"))?;
    }
    Ok(())
}

/// Normalises in place; returns the pre-normalisation mass.
pub fn normalize(v: &mut [f64]) -> f64 {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    total
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Inverse-CDF draw. Falls back to the last index with positive mass to absorb
/// rounding in the cumulative sum.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Symmetric Dirichlet(1) draw, i.e. a uniform point on the simplex.
pub fn sample_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    normalize(&mut v);
    v
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn simplex_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let v = sample_simplex(n, &mut rng);
            check_distribution(&v, "simplex").unwrap();
        }
    }

    #[test]
    fn categorical_never_picks_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = [0.0, 0.3, 0.0, 0.7, 0.0];
        for _ in 0..10_000 {
            let i = sample_categorical(&p, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }
}
