//! Cubic fits in log-rate coordinates, dense 1 kbps sampling and the
//! per-rate maximum envelope over curves evaluated at different k.
//!
//! Fits are solved in a normalized variable `u = (x - center) / half_width`
//! with `u` in `[-1, 1]`, which keeps the least-squares system well
//! conditioned for PSNR-sized abscissas. Raw power-basis coefficients are
//! available through [`LogRateFit::coeffs`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MetricKind, RDPoint};

const DEGREE: usize = 3;
const MIN_SPREAD: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;
// Slack for evaluation points that land a rounding error outside the domain.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FitOrientation {
    /// Distortion as a function of log10(bitrate).
    DOfLogR,
    /// log10(bitrate) as a function of distortion.
    LogROfD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRateFit {
    pub orientation: FitOrientation,
    pub domain_lo: f64,
    pub domain_hi: f64,
    center: f64,
    half_width: f64,
    /// Ascending-degree coefficients in the normalized variable.
    norm_coeffs: [f64; DEGREE + 1],
}

impl LogRateFit {
    fn to_unit(&self, x: f64) -> f64 {
        (x - self.center) / self.half_width
    }

    fn horner(c: &[f64; DEGREE + 1], u: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &a| acc * u + a)
    }

    /// Evaluates the fit at `x`; rejects points outside the fit domain.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let slack = DOMAIN_SLACK * (self.domain_hi - self.domain_lo).max(1.0);
        if !(x >= self.domain_lo - slack && x <= self.domain_hi + slack) {
            return Err(Error::OutsideDomain {
                x,
                lo: self.domain_lo,
                hi: self.domain_hi,
            });
        }
        Ok(self.eval_clamped(x))
    }

    pub(crate) fn eval_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(self.domain_lo, self.domain_hi);
        Self::horner(&self.norm_coeffs, self.to_unit(x))
    }

    /// Exact integral of the fitted polynomial over `[lo, hi]`.
    pub fn integrate(&self, lo: f64, hi: f64) -> Result<f64> {
        self.evaluate(lo)?;
        self.evaluate(hi)?;
        let anti = |x: f64| {
            let u = self.to_unit(x);
            let mut acc = 0.0;
            for (j, &c) in self.norm_coeffs.iter().enumerate().rev() {
                acc = acc * u + c / (j as f64 + 1.0);
            }
            acc * u
        };
        Ok(self.half_width * (anti(hi) - anti(lo)))
    }

    /// Ascending-degree coefficients in the raw independent variable.
    pub fn coeffs(&self) -> [f64; DEGREE + 1] {
        let mut out = [0.0; DEGREE + 1];
        // (x - c)^j / h^j expanded binomially.
        for (j, &nc) in self.norm_coeffs.iter().enumerate() {
            let scale = nc / self.half_width.powi(j as i32);
            for (i, slot) in out.iter_mut().enumerate().take(j + 1) {
                let binom = binomial(j, i) as f64;
                *slot += scale * binom * (-self.center).powi((j - i) as i32);
            }
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

/// Least-squares cubic through validated RD points in the requested
/// orientation. Exactly four points give an interpolating cubic.
pub fn fit_curve(points: &[RDPoint], orientation: FitOrientation) -> Result<LogRateFit> {
    if points.len() < DEGREE + 1 {
        return Err(Error::TooFewPoints {
            found: points.len(),
            needed: DEGREE + 1,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .map(|p| {
            let lr = p.bitrate.log10();
            match orientation {
                FitOrientation::DOfLogR => (lr, p.distortion),
                FitOrientation::LogROfD => (p.distortion, lr),
            }
        })
        .unzip();
    fit_xy(&xs, &ys, orientation)
}

fn fit_xy(xs: &[f64], ys: &[f64], orientation: FitOrientation) -> Result<LogRateFit> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo >= MIN_SPREAD) {
        return Err(Error::SingularFit(format!(
            "independent variable spread {} below {MIN_SPREAD}",
            hi - lo
        )));
    }
    let center = 0.5 * (lo + hi);
    let half_width = 0.5 * (hi - lo);

    let m = xs.len();
    let a = DMatrix::from_fn(m, DEGREE + 1, |i, j| ((xs[i] - center) / half_width).powi(j as i32));
    let b = DVector::from_column_slice(ys);

    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..=DEGREE).map(|i| r[(i, i)].abs()).collect();
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    if diag.iter().any(|&d| !(d > RANK_TOL * max_diag)) {
        return Err(Error::SingularFit("design matrix has rank < 4".into()));
    }
    let qtb = qr.q().transpose() * b;
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::SingularFit("triangular solve failed".into()))?;

    let mut norm_coeffs = [0.0; DEGREE + 1];
    norm_coeffs.copy_from_slice(sol.as_slice());
    if norm_coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularFit("non-finite coefficients".into()));
    }
    Ok(LogRateFit {
        orientation,
        domain_lo: lo,
        domain_hi: hi,
        center,
        half_width,
        norm_coeffs,
    })
}

/// Anything that carries distortion samples on an integer kbps grid.
pub trait RateSamples {
    fn metric(&self) -> MetricKind;
    fn rates(&self) -> &[u32];
    fn distortions(&self) -> &[f64];
}

/// Distortions of one k on a contiguous 1 kbps grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    pub k: f64,
    pub metric: MetricKind,
    pub rate_grid: Vec<u32>,
    pub distortions: Vec<f64>,
}

impl SampledCurve {
    pub fn new(k: f64, metric: MetricKind, rate_grid: Vec<u32>, distortions: Vec<f64>) -> Result<Self> {
        if rate_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if rate_grid.len() != distortions.len() {
            return Err(Error::Parse("rate grid and distortions differ in length".into()));
        }
        if rate_grid.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Parse("rate grid must have unit step".into()));
        }
        if let Some(&d) = distortions.iter().find(|d| !d.is_finite()) {
            return Err(Error::InvalidDistortion {
                value: d,
                metric: metric.name(),
            });
        }
        Ok(SampledCurve {
            k,
            metric,
            rate_grid,
            distortions,
        })
    }
}

impl RateSamples for SampledCurve {
    fn metric(&self) -> MetricKind {
        self.metric
    }
    fn rates(&self) -> &[u32] {
        &self.rate_grid
    }
    fn distortions(&self) -> &[f64] {
        &self.distortions
    }
}

// 10^x, snapped to the nearest integer when it is one up to rounding.
fn snapped_rate(log_rate: f64) -> f64 {
    let r = 10f64.powf(log_rate);
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        n
    } else {
        r
    }
}

/// Samples a distortion-of-log-rate fit on every integer kbps inside its
/// domain.
pub fn sample_curve(fit: &LogRateFit, k: f64, metric: MetricKind) -> Result<SampledCurve> {
    if fit.orientation != FitOrientation::DOfLogR {
        return Err(Error::Parse("sampling needs a distortion-of-log-rate fit".into()));
    }
    let r_lo = snapped_rate(fit.domain_lo).ceil();
    let r_hi = snapped_rate(fit.domain_hi).floor();
    if r_lo > r_hi || r_lo < 1.0 || r_hi > u32::MAX as f64 {
        return Err(Error::EmptyGrid);
    }
    let rate_grid: Vec<u32> = (r_lo as u32..=r_hi as u32).collect();
    let distortions = rate_grid
        .iter()
        .map(|&r| fit.eval_clamped((r as f64).log10()))
        .collect();
    SampledCurve::new(k, metric, rate_grid, distortions)
}

/// Per-rate maximum distortion over a set of sampled curves, with the k
/// that attains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEnvelope {
    pub metric: MetricKind,
    pub rate_grid: Vec<u32>,
    pub best_distortion: Vec<f64>,
    pub argmax_k: Vec<f64>,
}

impl ParetoEnvelope {
    /// Repackages a gap-free envelope as a single-k sampled curve.
    pub fn to_sampled_curve(&self, k: f64) -> Result<SampledCurve> {
        SampledCurve::new(k, self.metric, self.rate_grid.clone(), self.best_distortion.clone())
    }

    pub fn distortion_at(&self, rate: u32) -> Option<f64> {
        self.rate_grid
            .binary_search(&rate)
            .ok()
            .map(|i| self.best_distortion[i])
    }
}

impl RateSamples for ParetoEnvelope {
    fn metric(&self) -> MetricKind {
        self.metric
    }
    fn rates(&self) -> &[u32] {
        &self.rate_grid
    }
    fn distortions(&self) -> &[f64] {
        &self.best_distortion
    }
}

// Higher distortion wins; ties go to k nearest 1.0, then to the smaller k.
fn beats(d: f64, k: f64, inc_d: f64, inc_k: f64) -> bool {
    if d != inc_d {
        return d > inc_d;
    }
    let (dist, inc_dist) = ((k - 1.0).abs(), (inc_k - 1.0).abs());
    if dist != inc_dist {
        return dist < inc_dist;
    }
    k < inc_k
}

pub fn pareto_envelope(curves: &[SampledCurve]) -> Result<ParetoEnvelope> {
    let first = curves.first().ok_or(Error::NoCurves)?;
    let metric = first.metric;
    if curves.iter().any(|c| c.metric != metric) {
        return Err(Error::MetricMismatch);
    }
    let non_empty = || curves.iter().filter(|c| !c.rate_grid.is_empty());
    let lo = non_empty().map(|c| c.rate_grid[0]).min().ok_or(Error::NoCurves)?;
    let hi = non_empty()
        .map(|c| *c.rate_grid.last().unwrap())
        .max()
        .ok_or(Error::NoCurves)?;

    let mut slots: Vec<Option<(f64, f64)>> = vec![None; (hi - lo) as usize + 1];
    for c in curves {
        for (&r, &d) in c.rate_grid.iter().zip(&c.distortions) {
            let slot = &mut slots[(r - lo) as usize];
            match slot {
                Some((inc_d, inc_k)) if !beats(d, c.k, *inc_d, *inc_k) => {}
                _ => *slot = Some((d, c.k)),
            }
        }
    }

    let mut env = ParetoEnvelope {
        metric,
        rate_grid: Vec::new(),
        best_distortion: Vec::new(),
        argmax_k: Vec::new(),
    };
    for (i, slot) in slots.into_iter().enumerate() {
        if let Some((d, k)) = slot {
            env.rate_grid.push(lo + i as u32);
            env.best_distortion.push(d);
            env.argmax_k.push(k);
        }
    }
    Ok(env)
}
