//! Hamming-weight randomness check of non-EUI-64 interface identifiers.
//!
//! Random IIDs with the Universal/Local bit held at zero have 63 free bits,
//! so their weights follow Binomial(63, 1/2) with mean 31.5.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::addr::Iid64;

pub const FREE_BITS: u32 = 63;
pub const DEFAULT_MIN_SAMPLES: u64 = 10_000;
pub const DEFAULT_P_THRESHOLD: f64 = 0.01;
/// Bins whose expected count falls below this are pooled into their neighbours.
pub const MIN_EXPECTED: f64 = 5.0;

/// Binomial(63, 1/2) probabilities for weights 0..=64 (weight 64 has mass 0).
pub fn reference_pmf() -> [f64; 65] {
    let mut pmf = [0.0; 65];
    let mut c: u128 = 1; // C(63, k)
    let denom = (1u128 << FREE_BITS) as f64;
    for (k, slot) in pmf.iter_mut().enumerate().take(FREE_BITS as usize + 1) {
        *slot = c as f64 / denom;
        c = c * (u128::from(FREE_BITS) - k as u128) / (k as u128 + 1);
    }
    pmf
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub degrees_of_freedom: u32,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of observed counts against expected counts.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> ChiSquareTest {
    assert_eq!(observed.len(), expected.len());
    assert!(observed.len() >= 2, "need at least two bins");
    let statistic: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (observed.len() - 1) as u32;
    let dist = ChiSquared::new(f64::from(df)).expect("positive degrees of freedom");
    ChiSquareTest { statistic, degrees_of_freedom: df, p_value: dist.sf(statistic) }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Insufficient { samples: u64, required: u64 },
    Fit {
        test: ChiSquareTest,
        /// Inclusive weight range of the bins kept after pooling the tails.
        bins: (u32, u32),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HammingFit {
    pub histogram: [u64; 65],
    pub samples: u64,
    pub mean: Option<f64>,
    pub outcome: FitOutcome,
}

impl HammingFit {
    pub fn p_value(&self) -> Option<f64> {
        match self.outcome {
            FitOutcome::Fit { test, .. } => Some(test.p_value),
            FitOutcome::Insufficient { .. } => None,
        }
    }

    pub fn passes(&self, threshold: f64) -> Option<bool> {
        self.p_value().map(|p| p > threshold)
    }
}

pub fn histogram(iids: impl IntoIterator<Item = Iid64>) -> [u64; 65] {
    let mut h = [0u64; 65];
    for iid in iids {
        h[iid.hamming_weight() as usize] += 1;
    }
    h
}

/// Fits a weight histogram against Binomial(63, 1/2).
pub fn fit_histogram(histogram: [u64; 65], min_samples: u64) -> HammingFit {
    let samples: u64 = histogram.iter().sum();
    let mean = (samples > 0).then(|| {
        histogram.iter().enumerate().map(|(w, c)| w as f64 * *c as f64).sum::<f64>() / samples as f64
    });
    if samples < min_samples.max(1) {
        return HammingFit {
            histogram,
            samples,
            mean,
            outcome: FitOutcome::Insufficient { samples, required: min_samples.max(1) },
        };
    }

    let pmf = reference_pmf();
    let n = samples as f64;
    let kept: Vec<usize> = (0..65).filter(|&w| pmf[w] * n >= MIN_EXPECTED).collect();
    if kept.len() < 2 {
        return HammingFit {
            histogram,
            samples,
            mean,
            outcome: FitOutcome::Insufficient { samples, required: min_samples.max(1) },
        };
    }
    let (lo, hi) = (kept[0], *kept.last().expect("non-empty"));
    let mut observed = vec![0.0; hi - lo + 1];
    let mut expected = vec![0.0; hi - lo + 1];
    for w in 0..65 {
        let bin = w.clamp(lo, hi) - lo;
        observed[bin] += histogram[w] as f64;
        expected[bin] += pmf[w] * n;
    }
    HammingFit {
        histogram,
        samples,
        mean,
        outcome: FitOutcome::Fit { test: chi_square(&observed, &expected), bins: (lo as u32, hi as u32) },
    }
}

pub fn hamming_fit(iids: impl IntoIterator<Item = Iid64>, min_samples: u64) -> HammingFit {
    fit_histogram(histogram(iids), min_samples)
}
