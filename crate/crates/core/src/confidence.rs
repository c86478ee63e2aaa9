//! Empirical-CDF confidence intervals built from generated samples, and
//! their coverage against observed truths.
//!
//! For samples `s₍₁₎ ≤ … ≤ s₍N₎` and level `α`, the interval is
//! `(s₍⌈Nα/2⌉₎, s₍⌈N(1−α/2)⌉₎]`: the order statistics are taken without
//! interpolation and membership is half-open on the left.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfidenceError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("need at least 2 samples for an interval, got {0}")]
    TooFewSamples(usize),
    #[error("level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("{intervals} intervals but {truths} truths")]
    LengthMismatch { intervals: usize, truths: usize },
}

pub type Result<T> = std::result::Result<T, ConfidenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Miscoverage level `α`; nominal coverage is `1 − α`.
    pub level: f64,
}

impl Interval {
    /// `lower < x ≤ upper`. A degenerate interval `lower == upper` contains
    /// exactly that point.
    pub fn contains(&self, x: f64) -> bool {
        if self.lower == self.upper {
            x == self.upper
        } else {
            self.lower < x && x <= self.upper
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Applies a monotone increasing map to both endpoints.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            lower: f(self.lower),
            upper: f(self.upper),
            level: self.level,
        }
    }
}

/// Fraction of samples `≤ x`.
pub fn empirical_cdf(samples: &[f64], x: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(ConfidenceError::EmptySamples);
    }
    let below = samples.iter().filter(|&&s| s <= x).count();
    Ok(below as f64 / samples.len() as f64)
}

/// 1-based order-statistic index `⌈N·q⌉`, clamped to `1..=N`.
///
/// `N·q` is rounded to 9 decimals before taking the ceiling so that products
/// such as `100 · 0.975` are not pushed up by binary representation error.
pub fn order_index(n: usize, q: f64) -> usize {
    let raw = n as f64 * q;
    let rounded = (raw * 1e9).round() / 1e9;
    (rounded.ceil() as usize).clamp(1, n)
}

pub fn quantile_interval(samples: &[f64], level: f64) -> Result<Interval> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_interval_sorted(&sorted, level)
}

/// As [`quantile_interval`] for samples that are already sorted ascending.
pub fn quantile_interval_sorted(sorted: &[f64], level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ConfidenceError::InvalidLevel(level));
    }
    let n = sorted.len();
    if n < 2 {
        return Err(ConfidenceError::TooFewSamples(n));
    }
    let lo = order_index(n, level / 2.0);
    let hi = order_index(n, 1.0 - level / 2.0);
    Ok(Interval {
        lower: sorted[lo - 1],
        upper: sorted[hi - 1],
        level,
    })
}

/// `mean ± k·std` of the samples (sample standard deviation).
pub fn sigma_band(samples: &[f64], k: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(ConfidenceError::EmptySamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    Ok((mean - k * sd, mean + k * sd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub covered: usize,
    pub rate: f64,
    pub flags: Vec<bool>,
}

pub fn coverage(intervals: &[Interval], truths: &[f64]) -> Result<CoverageReport> {
    if intervals.len() != truths.len() {
        return Err(ConfidenceError::LengthMismatch {
            intervals: intervals.len(),
            truths: truths.len(),
        });
    }
    let flags: Vec<bool> = intervals
        .iter()
        .zip(truths)
        .map(|(iv, &t)| iv.contains(t))
        .collect();
    Ok(CoverageReport::from_flags(flags))
}

/// Coverage of many truths by one shared interval.
pub fn coverage_single(interval: &Interval, truths: &[f64]) -> CoverageReport {
    CoverageReport::from_flags(truths.iter().map(|&t| interval.contains(t)).collect())
}

impl CoverageReport {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        let total = flags.len();
        let covered = flags.iter().filter(|&&f| f).count();
        let rate = if total == 0 {
            0.0
        } else {
            covered as f64 / total as f64
        };
        Self {
            total,
            covered,
            rate,
            flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_counts() {
        let s = [1.0, 2.0, 3.0];
        assert!((empirical_cdf(&s, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(empirical_cdf(&s, 0.5).unwrap(), 0.0);
        assert_eq!(empirical_cdf(&s, 3.0).unwrap(), 1.0);
        assert_eq!(empirical_cdf(&[], 0.0), Err(ConfidenceError::EmptySamples));
    }

    #[test]
    fn hundred_integers() {
        let s: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let iv = quantile_interval(&s, 0.05).unwrap();
        assert_eq!((iv.lower, iv.upper), (3.0, 98.0));
        assert!(!iv.contains(3.0));
        assert!(iv.contains(98.0));
    }

    #[test]
    fn order_index_rounding() {
        assert_eq!(order_index(100, 0.025), 3);
        assert_eq!(order_index(100, 0.975), 98);
        assert_eq!(order_index(1000, 0.025), 25);
        assert_eq!(order_index(1000, 0.975), 975);
        assert_eq!(order_index(10, 0.001), 1);
    }

    #[test]
    fn constant_samples_give_point_interval() {
        let iv = quantile_interval(&[4.0; 10], 0.05).unwrap();
        assert_eq!((iv.lower, iv.upper), (4.0, 4.0));
        assert!(iv.contains(4.0));
        assert!(!iv.contains(4.0 + 1e-12));
        assert!(!iv.contains(4.0 - 1e-12));
    }

    #[test]
    fn interval_errors() {
        assert_eq!(quantile_interval(&[1.0], 0.05), Err(ConfidenceError::TooFewSamples(1)));
        assert_eq!(quantile_interval(&[1.0, 2.0], 0.0), Err(ConfidenceError::InvalidLevel(0.0)));
        assert_eq!(quantile_interval(&[1.0, 2.0], 1.0), Err(ConfidenceError::InvalidLevel(1.0)));
    }

    #[test]
    fn coverage_rates() {
        let iv = Interval {
            lower: 0.0,
            upper: 1.0,
            level: 0.05,
        };
        let all = coverage(&[iv; 3], &[0.5, 1.0, 0.1]).unwrap();
        assert_eq!(all.rate, 1.0);
        let truths: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.5 } else { 2.0 }).collect();
        let half = coverage(&[iv; 10], &truths).unwrap();
        assert_eq!((half.covered, half.rate), (5, 0.5));
        assert!(!half.flags[1]);
        assert!(matches!(
            coverage(&[iv], &[0.1, 0.2]),
            Err(ConfidenceError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sigma_band_symmetric() {
        let (lo, hi) = sigma_band(&[1.0, 2.0, 3.0], 3.0).unwrap();
        assert!((lo + hi - 4.0).abs() < 1e-12);
        assert!((hi - 2.0 - 3.0).abs() < 1e-12);
    }
}
