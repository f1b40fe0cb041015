//! Bjøntegaard delta rate between two RD curves.
//!
//! Both variants integrate the difference of log10(rate) over the shared
//! distortion interval, divide by its width and report
//! `(10^avg - 1) * 100`. Negative percentages are bitrate savings of the
//! test curve against the reference.

use serde::{Deserialize, Serialize};

use crate::curvefit::{fit_curve, FitOrientation, RateSamples};
use crate::error::{Error, Result};
use crate::types::{MetricKind, RDCurve};

/// Uniform distortion samples used by [`bd_rate_sampled`].
pub const SAMPLED_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BDRateResult {
    pub percent: f64,
    /// Mean log10-rate difference (test minus reference) over the overlap.
    pub avg_log_diff: f64,
    pub overlap_lo: f64,
    pub overlap_hi: f64,
}

impl BDRateResult {
    fn from_avg(avg_log_diff: f64, overlap_lo: f64, overlap_hi: f64) -> Self {
        BDRateResult {
            percent: (10f64.powf(avg_log_diff) - 1.0) * 100.0,
            avg_log_diff,
            overlap_lo,
            overlap_hi,
        }
    }

    /// Positive when the test curve saves bitrate.
    pub fn improvement(&self) -> f64 {
        -self.percent
    }
}

fn overlap(metric: MetricKind, a: (f64, f64), b: (f64, f64)) -> Result<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if !(hi - lo >= metric.min_overlap()) {
        return Err(Error::NoOverlap { span: hi - lo });
    }
    Ok((lo, hi))
}

/// Closed-form BD-Rate from cubic log-rate-of-distortion fits.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve) -> Result<BDRateResult> {
    if reference.metric != test.metric {
        return Err(Error::MetricMismatch);
    }
    let fit_ref = fit_curve(&reference.points, FitOrientation::LogROfD)?;
    let fit_test = fit_curve(&test.points, FitOrientation::LogROfD)?;
    let (lo, hi) = overlap(
        reference.metric,
        (fit_ref.domain_lo, fit_ref.domain_hi),
        (fit_test.domain_lo, fit_test.domain_hi),
    )?;
    let diff = fit_test.integrate(lo, hi)? - fit_ref.integrate(lo, hi)?;
    Ok(BDRateResult::from_avg(diff / (hi - lo), lo, hi))
}

// log10(rate) as a piecewise-linear function of distortion, after a
// running-max repair. Flat stretches resolve to the cheapest rate.
struct InverseCurve {
    log_rates: Vec<f64>,
    distortions: Vec<f64>,
}

impl InverseCurve {
    fn new(samples: &dyn RateSamples) -> Result<Self> {
        let rates = samples.rates();
        if rates.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut best = f64::NEG_INFINITY;
        let mut repaired = 0usize;
        let distortions: Vec<f64> = samples
            .distortions()
            .iter()
            .map(|&d| {
                if d < best {
                    repaired += 1;
                } else {
                    best = d;
                }
                best
            })
            .collect();
        if repaired > 0 {
            log::debug!("running-max repair touched {repaired} samples before inversion");
        }
        Ok(InverseCurve {
            log_rates: rates.iter().map(|&r| (r as f64).log10()).collect(),
            distortions,
        })
    }

    fn span(&self) -> (f64, f64) {
        (self.distortions[0], *self.distortions.last().unwrap())
    }

    fn log_rate_at(&self, d: f64) -> f64 {
        let i = self.distortions.partition_point(|&x| x < d);
        if i == 0 {
            return self.log_rates[0];
        }
        if i == self.distortions.len() {
            return *self.log_rates.last().unwrap();
        }
        let (d0, d1) = (self.distortions[i - 1], self.distortions[i]);
        let (r0, r1) = (self.log_rates[i - 1], self.log_rates[i]);
        r0 + (r1 - r0) * (d - d0) / (d1 - d0)
    }
}

/// BD-Rate between two densely sampled curves or envelopes.
pub fn bd_rate_sampled(reference: &dyn RateSamples, test: &dyn RateSamples) -> Result<BDRateResult> {
    if reference.metric() != test.metric() {
        return Err(Error::MetricMismatch);
    }
    let inv_ref = InverseCurve::new(reference)?;
    let inv_test = InverseCurve::new(test)?;
    let (lo, hi) = overlap(reference.metric(), inv_ref.span(), inv_test.span())?;

    let n = SAMPLED_STEPS;
    let step = (hi - lo) / (n - 1) as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let d = if i == n - 1 { hi } else { lo + step * i as f64 };
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        sum += w * (inv_test.log_rate_at(d) - inv_ref.log_rate_at(d));
    }
    Ok(BDRateResult::from_avg(sum / (n - 1) as f64, lo, hi))
}
