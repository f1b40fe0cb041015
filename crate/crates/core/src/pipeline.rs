//! Per-clip orchestration.
//!
//! For each of the LOW/MED/HIGH ranges the k = 1 curve is encoded first and
//! Brent's method then minimizes the BD-Rate of the curve at k against it.
//! Every curve built along the way is fitted, sampled at 1 kbps and folded
//! into the Pareto envelope; the default envelope is built from the three
//! k = 1 curves alone.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdrate::{bd_rate, bd_rate_sampled};
use crate::brent::{minimize_scalar, OptimizationTrace, OptimizerConfig};
use crate::curvefit::{fit_curve, pareto_envelope, sample_curve, FitOrientation, ParetoEnvelope, SampledCurve};
use crate::encoder::{CacheKey, EncodeRequest, EncodeResult, Encoder};
use crate::error::{Error, Result};
use crate::types::{
    range_presets, BitrateRange, ClipDescriptor, MetricKind, RDCurve, RDPoint, RangeLabel, RateControlMode,
    MIN_CURVE_POINTS,
};

/// Three ranges of at most six points for twelve evaluations each, plus the
/// nine-point full-span curve.
pub const DEFAULT_ENCODE_BUDGET: usize = 3 * 12 * 6 + 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub optimizer: OptimizerConfig,
    /// Distinct encodes one clip may request.
    pub encode_budget: usize,
    /// Also run the single-k full-span baseline.
    pub with_direct: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            optimizer: OptimizerConfig::default(),
            encode_budget: DEFAULT_ENCODE_BUDGET,
            with_direct: true,
        }
    }
}

/// Encoder access for one clip, with encode accounting.
pub struct ClipContext<'a> {
    pub encoder: &'a Encoder<'a>,
    pub clip: &'a ClipDescriptor,
    pub mode: RateControlMode,
    pub metric: MetricKind,
    encode_budget: usize,
    /// Every distinct request of this clip, with its outcome once known.
    requested: Mutex<HashMap<CacheKey, Option<std::result::Result<EncodeResult, String>>>>,
    fresh: AtomicUsize,
}

impl<'a> ClipContext<'a> {
    pub fn new(
        encoder: &'a Encoder<'a>,
        clip: &'a ClipDescriptor,
        mode: RateControlMode,
        metric: MetricKind,
        encode_budget: usize,
    ) -> Self {
        ClipContext {
            encoder,
            clip,
            mode,
            metric,
            encode_budget,
            requested: Mutex::new(HashMap::new()),
            fresh: AtomicUsize::new(0),
        }
    }

    /// Distinct encodes requested so far, whether or not the cache served
    /// them.
    pub fn requested_encodes(&self) -> usize {
        self.requested.lock().unwrap().len()
    }

    /// Encodes the backend actually performed.
    pub fn fresh_encodes(&self) -> usize {
        self.fresh.load(Ordering::Relaxed)
    }

    fn request(&self, op: crate::types::OperatingPoint, k: f64) -> EncodeRequest {
        EncodeRequest {
            clip: self.clip.clone(),
            op,
            k,
            tune: self.metric,
        }
    }

    fn reserve(&self, requests: &[EncodeRequest]) -> Result<()> {
        let mut requested = self.requested.lock().unwrap();
        let new: Vec<CacheKey> = requests
            .iter()
            .map(|r| self.encoder.key(r))
            .filter(|key| !requested.contains_key(key))
            .collect();
        if requested.len() + new.len() > self.encode_budget {
            return Err(Error::BudgetExhausted {
                budget: self.encode_budget,
            });
        }
        requested.extend(new.into_iter().map(|key| (key, None)));
        Ok(())
    }

    /// Runs one request at most once per clip, cache or not.
    fn encode(&self, request: &EncodeRequest) -> Result<EncodeResult> {
        let key = self.encoder.key(request);
        match self.requested.lock().unwrap().get(&key) {
            Some(Some(Ok(hit))) => return Ok(hit.clone()),
            Some(Some(Err(msg))) => return Err(Error::ProcessFailed(msg.clone())),
            _ => {}
        }
        let outcome = self.encoder.encode(request);
        let memo = match &outcome {
            Ok((result, fresh)) => {
                if *fresh {
                    self.fresh.fetch_add(1, Ordering::Relaxed);
                }
                Ok(result.clone())
            }
            Err(err) => Err(err.to_string()),
        };
        self.requested.lock().unwrap().insert(key, Some(memo));
        outcome.map(|(result, _)| result)
    }
}

/// Encodes one curve. Failed operating points are dropped; the curve only
/// fails when fewer than four points remain.
pub fn build_rd_curve(ctx: &ClipContext<'_>, range: &BitrateRange, k: f64) -> Result<RDCurve> {
    let requests: Vec<EncodeRequest> = range.points.iter().map(|&op| ctx.request(op, k)).collect();
    ctx.reserve(&requests)?;

    let outcomes: Vec<Result<EncodeResult>> = requests.par_iter().map(|r| ctx.encode(r)).collect();

    let mut points = Vec::with_capacity(outcomes.len());
    let mut last_err = None;
    for (req, outcome) in requests.iter().zip(outcomes) {
        match outcome {
            Ok(res) => {
                points.push(RDPoint::new(res.achieved_bitrate, res.distortion(ctx.metric)));
            }
            Err(err) => {
                log::warn!(
                    "clip {}: {} {} at k = {:.3} failed: {err}",
                    ctx.clip.id,
                    req.op.mode,
                    req.op.value,
                    k
                );
                last_err = Some(err);
            }
        }
    }
    if points.len() < MIN_CURVE_POINTS {
        if let Some(err) = last_err {
            return Err(err);
        }
    }
    RDCurve::new(k, ctx.mode, ctx.metric, range.label, &points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeResult {
    pub range_label: RangeLabel,
    pub k_opt: f64,
    /// BD-Rate percent of the best curve against k = 1.
    pub bd_rate_opt: f64,
    pub trace: OptimizationTrace,
    /// Every curve built during the search, ordered by k; includes k = 1.
    pub curves: Vec<RDCurve>,
}

impl RangeResult {
    pub fn reference(&self) -> Option<&RDCurve> {
        self.curves.iter().find(|c| c.k == 1.0)
    }
}

fn k_key(k: f64) -> i64 {
    (k * 1000.0).round() as i64
}

/// Minimizes BD-Rate against the k = 1 curve over one range.
pub fn direct_optimize_range(
    ctx: &ClipContext<'_>,
    range: &BitrateRange,
    config: &OptimizerConfig,
) -> Result<RangeResult> {
    let reference = build_rd_curve(ctx, range, 1.0)?;
    let mut curves: BTreeMap<i64, RDCurve> = BTreeMap::new();
    curves.insert(k_key(1.0), reference.clone());

    let objective = |k: f64| -> f64 {
        if k_key(k) == k_key(1.0) {
            return 0.0;
        }
        let curve = match build_rd_curve(ctx, range, k) {
            Ok(c) => c,
            Err(err) => {
                log::warn!("clip {}: {} curve at k = {k:.3}: {err}", ctx.clip.id, range.label);
                return f64::INFINITY;
            }
        };
        let score = match bd_rate(&reference, &curve) {
            Ok(r) => r.percent,
            Err(err) => {
                log::warn!("clip {}: {} BD-Rate at k = {k:.3}: {err}", ctx.clip.id, range.label);
                f64::INFINITY
            }
        };
        curves.insert(k_key(k), curve);
        score
    };
    let trace = minimize_scalar(objective, config)?;
    Ok(RangeResult {
        range_label: range.label,
        k_opt: trace.k_best,
        bd_rate_opt: trace.f_best,
        trace,
        curves: curves.into_values().collect(),
    })
}

/// Single-k optimization over the union of the three ranges.
pub fn direct_optimize_fullspan(ctx: &ClipContext<'_>, config: &OptimizerConfig) -> Result<RangeResult> {
    let full = BitrateRange::union(&range_presets(ctx.mode))?;
    direct_optimize_range(ctx, &full, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipResult {
    pub clip_id: String,
    pub mode: RateControlMode,
    pub metric: MetricKind,
    pub range_results: Vec<RangeResult>,
    /// BD-Rate percent of the Pareto envelope against the default envelope.
    pub pareto_bd_rate: f64,
    pub direct_fullspan_bd_rate: Option<f64>,
    pub direct_fullspan_k: Option<f64>,
    /// `max(0, -pareto_bd_rate)`.
    pub final_gain: f64,
    /// Distinct encodes requested for this clip.
    pub encode_count: usize,
    /// True when one of the three ranges failed.
    pub partial: bool,
}

impl ClipResult {
    pub fn pareto_improvement(&self) -> f64 {
        -self.pareto_bd_rate
    }

    pub fn direct_improvement(&self) -> Option<f64> {
        self.direct_fullspan_bd_rate.map(|b| -b)
    }

    /// Best single-range improvement, clamped at zero.
    pub fn best_range_gain(&self) -> f64 {
        self.range_results
            .iter()
            .map(|r| (-r.bd_rate_opt).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// A clip result together with the envelopes it was computed from.
#[derive(Debug, Clone)]
pub struct ClipAnalysis {
    pub result: ClipResult,
    pub sampled: Vec<SampledCurve>,
    pub envelope: ParetoEnvelope,
    pub default_envelope: ParetoEnvelope,
    pub fresh_encodes: usize,
}

fn sample_rd_curve(curve: &RDCurve) -> Result<SampledCurve> {
    let fit = fit_curve(&curve.points, FitOrientation::DOfLogR)?;
    sample_curve(&fit, curve.k, curve.metric)
}

fn sample_all<'c>(clip_id: &str, curves: impl Iterator<Item = &'c RDCurve>) -> Vec<SampledCurve> {
    curves
        .filter_map(|c| match sample_rd_curve(c) {
            Ok(s) => Some(s),
            Err(err) => {
                log::warn!(
                    "clip {clip_id}: skipping {} curve at k = {:.3}: {err}",
                    c.range_label,
                    c.k
                );
                None
            }
        })
        .collect()
}

pub fn pareto_for_clip(
    encoder: &Encoder<'_>,
    clip: &ClipDescriptor,
    mode: RateControlMode,
    metric: MetricKind,
    config: &PipelineConfig,
) -> Result<ClipResult> {
    pareto_for_clip_detailed(encoder, clip, mode, metric, config).map(|a| a.result)
}

pub fn pareto_for_clip_detailed(
    encoder: &Encoder<'_>,
    clip: &ClipDescriptor,
    mode: RateControlMode,
    metric: MetricKind,
    config: &PipelineConfig,
) -> Result<ClipAnalysis> {
    clip.validate()?;
    let ctx = ClipContext::new(encoder, clip, mode, metric, config.encode_budget);

    let mut range_results = Vec::with_capacity(3);
    let mut failures = Vec::new();
    for range in range_presets(mode) {
        match direct_optimize_range(&ctx, &range, &config.optimizer) {
            Ok(r) => range_results.push(r),
            Err(err) => {
                log::warn!("clip {}: range {} failed: {err}", clip.id, range.label);
                failures.push(err);
            }
        }
    }
    if failures.len() > 1 {
        return Err(failures.swap_remove(0));
    }
    let partial = !failures.is_empty();

    let sampled = sample_all(&clip.id, range_results.iter().flat_map(|r| r.curves.iter()));
    let defaults = sample_all(&clip.id, range_results.iter().filter_map(|r| r.reference()));
    let envelope = pareto_envelope(&sampled)?;
    let default_envelope = pareto_envelope(&defaults)?;
    let pareto_bd_rate = bd_rate_sampled(&default_envelope, &envelope)?.percent;

    let (direct_fullspan_bd_rate, direct_fullspan_k) = if config.with_direct {
        match direct_optimize_fullspan(&ctx, &config.optimizer) {
            Ok(r) => (Some(r.bd_rate_opt), Some(r.k_opt)),
            Err(err) => {
                log::warn!("clip {}: full-span baseline failed: {err}", clip.id);
                (None, None)
            }
        }
    } else {
        (None, None)
    };

    let result = ClipResult {
        clip_id: clip.id.clone(),
        mode,
        metric,
        range_results,
        pareto_bd_rate,
        direct_fullspan_bd_rate,
        direct_fullspan_k,
        final_gain: (-pareto_bd_rate).max(0.0),
        encode_count: ctx.requested_encodes(),
        partial,
    };
    Ok(ClipAnalysis {
        result,
        sampled,
        envelope,
        default_envelope,
        fresh_encodes: ctx.fresh_encodes(),
    })
}
