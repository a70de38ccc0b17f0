//! Distances and estimators for comparing simulation output with references.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 30;

/// An empirical distribution: a sorted real sample or an integer histogram.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalDist {
    Sample(Vec<f64>),
    Histogram(Vec<u64>),
}

impl EmpiricalDist {
    pub fn from_sample(mut xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySample);
        }
        xs.sort_by(f64::total_cmp);
        Ok(EmpiricalDist::Sample(xs))
    }

    /// Histogram of nonnegative integer observations.
    pub fn from_counts<I: IntoIterator<Item = usize>>(obs: I) -> Result<Self> {
        let mut h: Vec<u64> = Vec::new();
        for x in obs {
            if x >= h.len() {
                h.resize(x + 1, 0);
            }
            h[x] += 1;
        }
        if h.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(EmpiricalDist::Histogram(h))
    }

    pub fn sample_size(&self) -> u64 {
        match self {
            EmpiricalDist::Sample(x) => x.len() as u64,
            EmpiricalDist::Histogram(h) => h.iter().sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            EmpiricalDist::Sample(x) => x.iter().sum::<f64>() / x.len() as f64,
            EmpiricalDist::Histogram(h) => {
                let total: u64 = h.iter().sum();
                let s: f64 = h.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
                s / total as f64
            }
        }
    }

    /// Normalized histogram; `None` for real samples.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            EmpiricalDist::Histogram(h) => {
                let total = h.iter().sum::<u64>() as f64;
                Some(h.iter().map(|&c| c as f64 / total).collect())
            }
            EmpiricalDist::Sample(_) => None,
        }
    }

    /// Mergeable across shards: histogram addition or sample concatenation.
    pub fn merge(self, other: EmpiricalDist) -> Result<EmpiricalDist> {
        match (self, other) {
            (EmpiricalDist::Sample(mut a), EmpiricalDist::Sample(b)) => {
                a.extend(b);
                EmpiricalDist::from_sample(a)
            }
            (EmpiricalDist::Histogram(mut a), EmpiricalDist::Histogram(b)) => {
                if b.len() > a.len() {
                    a.resize(b.len(), 0);
                }
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(EmpiricalDist::Histogram(a))
            }
            _ => Err(Error::InvalidParameter(
                "cannot merge a sample with a histogram".into(),
            )),
        }
    }
}

/// Sup distance between the empirical CDF of `sample` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        // treat runs of ties as a single jump
        let mut j = i;
        while j + 1 < xs.len() && xs[j + 1] == xs[i] {
            j += 1;
        }
        let f = cdf(xs[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Half the L1 distance between two histograms after normalization.
/// Shorter inputs are padded with zeros.
pub fn tv_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if sa <= 0.0 || sb <= 0.0 {
        return Err(Error::EmptySample);
    }
    let len = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let l1: f64 = (0..len).map(|i| (at(a, i) / sa - at(b, i) / sb).abs()).sum();
    Ok((0.5 * l1).clamp(0.0, 1.0))
}

/// Pearson chi-square statistic of observed counts against expected probabilities.
pub fn chi_square_statistic(observed: &[u64], expected_probs: &[f64]) -> Result<f64> {
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    Ok(observed
        .iter()
        .zip(expected_probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum())
}

/// Mean and batch-means standard error.
///
/// The sample is cut into `batches` contiguous batches of equal length (the
/// remainder is dropped from the error estimate only); the standard error is
/// the standard deviation of the batch means over `sqrt(batches)`.
pub fn batch_means(values: &[f64], batches: usize) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let b = batches.min(values.len());
    if b < 2 {
        return Ok((mean, f64::INFINITY));
    }
    let size = values.len() / b;
    let bm: Vec<f64> = values
        .chunks_exact(size)
        .take(b)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let m = bm.iter().sum::<f64>() / b as f64;
    let var = bm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok((mean, (var / b as f64).sqrt()))
}

/// Excursions of a count trace away from 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionStats {
    pub num_excursions: usize,
    pub lengths: Vec<u64>,
    pub mean_length: f64,
    pub stderr: f64,
}

/// Splits a count trace at its zeros; each complete excursion runs from one
/// visit to 0 to the next, and its length is the number of steps between them.
pub fn excursion_stats(count_trace: &[u64]) -> Result<ExcursionStats> {
    let zeros: Vec<usize> = count_trace
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    if zeros.is_empty() {
        return Err(Error::NoZeroVisit);
    }
    let lengths: Vec<u64> = zeros.windows(2).map(|w| (w[1] - w[0]) as u64).collect();
    excursion_stats_from_lengths(lengths)
}

pub fn excursion_stats_from_lengths(lengths: Vec<u64>) -> Result<ExcursionStats> {
    if lengths.is_empty() {
        return Ok(ExcursionStats {
            num_excursions: 0,
            lengths,
            mean_length: f64::NAN,
            stderr: f64::INFINITY,
        });
    }
    let as_f: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let (mean_length, stderr) = batch_means(&as_f, DEFAULT_BATCHES)?;
    Ok(ExcursionStats {
        num_excursions: lengths.len(),
        lengths,
        mean_length,
        stderr,
    })
}

/// One diagnostic line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub diagnostic: String,
    pub expected: serde_json::Value,
    pub observed: serde_json::Value,
    pub distance: Option<f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    #[test]
    fn ks_quantile_sample() {
        let n = 50;
        let xs: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
        let d = ks_distance(&xs, |x| x).unwrap();
        assert!((d - 1.0 / (2.0 * n as f64)).abs() < 1e-12);
    }

    #[test]
    fn ks_constant_sample() {
        let xs = vec![0.0; 10];
        assert_eq!(ks_distance(&xs, |x| x.clamp(0.0, 1.0)).unwrap(), 1.0);
        assert!(matches!(ks_distance(&[], |x| x), Err(Error::EmptySample)));
    }

    #[test]
    fn ks_uniform_draws_dkw() {
        // DKW: P[D > eps] <= 2 exp(-2 n eps^2) = 2e-9 for n = 1e5, eps = 0.01
        let mut rng = SimRng::new(8);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.uniform()).collect();
        assert!(ks_distance(&xs, |x| x).unwrap() < 0.01);
    }

    #[test]
    fn ks_two_sample_basic() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 0.0, 5.0]).unwrap(), 1.0);
        assert!(matches!(tv_distance(&[], &[1.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn excursion_examples() {
        let e = excursion_stats(&[0, 1, 0, 2, 1, 0]).unwrap();
        assert_eq!(e.num_excursions, 2);
        assert_eq!(e.lengths, vec![2, 3]);
        assert_eq!(e.mean_length, 2.5);
        let e = excursion_stats(&[0; 7]).unwrap();
        assert_eq!(e.lengths, vec![1; 6]);
        assert!(matches!(excursion_stats(&[1, 2, 3]), Err(Error::NoZeroVisit)));
    }

    #[test]
    fn batch_means_constant() {
        let (m, se) = batch_means(&[2.0; 300], 30).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn histogram_mean_matches_running_mean() {
        let mut rng = SimRng::new(3);
        let obs: Vec<usize> = (0..10_000).map(|_| rng.below(17)).collect();
        let running = obs.iter().sum::<usize>() as f64 / obs.len() as f64;
        let h = EmpiricalDist::from_counts(obs.iter().copied()).unwrap();
        assert!((h.mean() - running).abs() < 1e-9);
        assert_eq!(h.sample_size(), 10_000);
    }

    #[test]
    fn merge_histograms() {
        let a = EmpiricalDist::Histogram(vec![1, 2]);
        let b = EmpiricalDist::Histogram(vec![0, 1, 4]);
        assert_eq!(a.merge(b).unwrap(), EmpiricalDist::Histogram(vec![1, 3, 4]));
    }

    fn hist() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..10.0, 5).prop_filter("mass", |v| v.iter().sum::<f64>() > 0.1)
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(a in hist(), b in hist(), c in hist()) {
            let ab = tv_distance(&a, &b).unwrap();
            let ba = tv_distance(&b, &a).unwrap();
            let ac = tv_distance(&a, &c).unwrap();
            let cb = tv_distance(&c, &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert!(tv_distance(&a, &a).unwrap() < 1e-12);
        }

        #[test]
        fn ks_two_sample_symmetric(a in proptest::collection::vec(0.0f64..1.0, 1..50),
                                   b in proptest::collection::vec(0.0f64..1.0, 1..50),
                                   c in proptest::collection::vec(0.0f64..1.0, 1..50)) {
            let ab = ks_two_sample(&a, &b).unwrap();
            prop_assert!((ab - ks_two_sample(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= ks_two_sample(&a, &c).unwrap() + ks_two_sample(&c, &b).unwrap() + 1e-12);
            prop_assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        }
    }
}
