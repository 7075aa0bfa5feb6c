//! Relay detection from channel reciprocity.
//!
//! Both nodes report the per-carrier magnitudes they observed; a relay whose
//! forward and reverse paths differ breaks the symmetry of the propagation
//! channel. The check is `dissimilarity(|H_AB|, |H_BA|) > ε`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("magnitude vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("magnitude vectors are empty")]
    Empty,
    #[error("dB-domain comparison needs strictly positive magnitudes")]
    NonPositiveMagnitude,
    #[error("need at least {MIN_CALIBRATION_SAMPLES} clean samples, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate quantile {0}: must lie strictly between 0 and 1")]
    DegenerateQuantile(f64),
    #[error("threshold must be non-negative (got {0})")]
    NegativeThreshold(f64),
}

pub const MIN_CALIBRATION_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricDomain {
    /// Compare `20 log10 |H|`.
    #[default]
    Db,
    /// Compare raw magnitudes.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Attack,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Clean => "clean",
            Verdict::Attack => "attack",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocityReport {
    pub dissimilarity: f64,
    pub domain: MetricDomain,
    pub epsilon: f64,
    pub verdict: Verdict,
    pub mag_ab: Vec<f64>,
    pub mag_ba: Vec<f64>,
}

/// Euclidean distance between the two magnitude responses.
pub fn reciprocity_dissimilarity(mag_ab: &[f64], mag_ba: &[f64], domain: MetricDomain) -> Result<f64, DetectionError> {
    if mag_ab.len() != mag_ba.len() {
        return Err(DetectionError::LengthMismatch(mag_ab.len(), mag_ba.len()));
    }
    if mag_ab.is_empty() {
        return Err(DetectionError::Empty);
    }
    let map = |x: f64| match domain {
        MetricDomain::Db => 20.0 * x.log10(),
        MetricDomain::Linear => x,
    };
    if domain == MetricDomain::Db && mag_ab.iter().chain(mag_ba).any(|&x| !(x > 0.0)) {
        return Err(DetectionError::NonPositiveMagnitude);
    }
    let sum_sq: f64 = mag_ab
        .iter()
        .zip(mag_ba)
        .map(|(&a, &b)| {
            let d = map(a) - map(b);
            d * d
        })
        .sum();
    Ok(sum_sq.sqrt())
}

pub fn detect(
    mag_ab: &[f64],
    mag_ba: &[f64],
    domain: MetricDomain,
    epsilon: f64,
) -> Result<ReciprocityReport, DetectionError> {
    if !(epsilon >= 0.0) {
        return Err(DetectionError::NegativeThreshold(epsilon));
    }
    let dissimilarity = reciprocity_dissimilarity(mag_ab, mag_ba, domain)?;
    Ok(ReciprocityReport {
        dissimilarity,
        domain,
        epsilon,
        verdict: verdict(dissimilarity, epsilon),
        mag_ab: mag_ab.to_vec(),
        mag_ba: mag_ba.to_vec(),
    })
}

pub fn verdict(dissimilarity: f64, epsilon: f64) -> Verdict {
    if dissimilarity > epsilon {
        Verdict::Attack
    } else {
        Verdict::Clean
    }
}

/// Nearest-rank empirical quantile of clean-run dissimilarities.
pub fn calibrate_epsilon(clean_samples: &[f64], quantile: f64) -> Result<f64, DetectionError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(DetectionError::DegenerateQuantile(quantile));
    }
    if clean_samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(DetectionError::TooFewSamples(clean_samples.len()));
    }
    let mut sorted = clean_samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the epsilon absorbs products like 0.99 * 100 = 99.00000000000001
    let rank = ((quantile * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors() {
        let v = [0.1, 0.2, 0.3];
        assert_eq!(reciprocity_dissimilarity(&v, &v, MetricDomain::Db).unwrap(), 0.0);
    }

    #[test]
    fn one_db_everywhere() {
        let a = vec![1e-3; 40];
        let b: Vec<f64> = a.iter().map(|x| x * 10f64.powf(1.0 / 20.0)).collect();
        let d = reciprocity_dissimilarity(&a, &b, MetricDomain::Db).unwrap();
        assert!((d - 40f64.sqrt()).abs() < 1e-9);
        assert!((d - 6.325).abs() < 1e-3);
    }

    #[test]
    fn linear_single_element() {
        assert_eq!(reciprocity_dissimilarity(&[3.0], &[7.0], MetricDomain::Linear).unwrap(), 4.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            reciprocity_dissimilarity(&[1.0], &[1.0, 2.0], MetricDomain::Db).unwrap_err(),
            DetectionError::LengthMismatch(1, 2)
        );
        assert_eq!(
            reciprocity_dissimilarity(&[], &[], MetricDomain::Db).unwrap_err(),
            DetectionError::Empty
        );
        assert_eq!(
            reciprocity_dissimilarity(&[0.0], &[1.0], MetricDomain::Db).unwrap_err(),
            DetectionError::NonPositiveMagnitude
        );
    }

    #[test]
    fn detect_clean_and_attack() {
        let r = detect(&[1.0, 2.0], &[1.0, 2.0], MetricDomain::Db, 0.1).unwrap();
        assert_eq!(r.verdict, Verdict::Clean);
        let r = detect(&[1.0], &[2.0], MetricDomain::Linear, 0.5).unwrap();
        assert_eq!(r.verdict, Verdict::Attack);
        assert_eq!(r.dissimilarity, 1.0);
        // boundary: equal to epsilon is clean
        let r = detect(&[1.0], &[2.0], MetricDomain::Linear, 1.0).unwrap();
        assert_eq!(r.verdict, Verdict::Clean);
        assert_eq!(
            detect(&[1.0], &[1.0], MetricDomain::Db, -1.0).unwrap_err(),
            DetectionError::NegativeThreshold(-1.0)
        );
    }

    #[test]
    fn calibration_examples() {
        let constant = vec![2.5; 40];
        for q in [0.01, 0.5, 0.99] {
            assert_eq!(calibrate_epsilon(&constant, q).unwrap(), 2.5);
        }
        let ramp: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(calibrate_epsilon(&ramp, 0.99).unwrap(), 99.0);
        assert_eq!(calibrate_epsilon(&ramp, 0.5).unwrap(), 50.0);
        assert_eq!(
            calibrate_epsilon(&ramp, 0.0).unwrap_err(),
            DetectionError::DegenerateQuantile(0.0)
        );
        assert_eq!(
            calibrate_epsilon(&ramp, 1.0).unwrap_err(),
            DetectionError::DegenerateQuantile(1.0)
        );
        assert_eq!(
            calibrate_epsilon(&ramp[..29], 0.5).unwrap_err(),
            DetectionError::TooFewSamples(29)
        );
    }

    #[test]
    fn ks_basics() {
        let a: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(ks_statistic(&a, &a), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 1000.0).collect();
        assert_eq!(ks_statistic(&a, &shifted), 1.0);
        let half: Vec<f64> = a.iter().map(|x| x + 50.0).collect();
        assert!((ks_statistic(&a, &half) - 0.5).abs() < 1e-12);
        assert!((ks_critical_value(100, 100, 0.05) - 1.3581 * 0.02f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
