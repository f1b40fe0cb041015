//! C ABI over the kscale toolkit.
//!
//! Every fallible call returns a [`KsStatus`]; on failure the message is
//! kept per thread and can be read with [`ks_last_error_message`]. Curves
//! and envelopes cross the boundary as opaque handles that the caller frees.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kscale::bdrate::{bd_rate, bd_rate_sampled, BDRateResult};
use kscale::brent::{minimize_scalar, OptimizerConfig};
use kscale::curvefit::{fit_curve, pareto_envelope, sample_curve, FitOrientation, ParetoEnvelope, SampledCurve};
use kscale::encoder::{default_lambda, FrameType};
use kscale::types::{MetricKind, RDCurve, RDPoint, RangeLabel, RateControlMode};
use kscale::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    TooFewPoints = 3,
    SingularFit = 4,
    NoOverlap = 5,
    NoCurves = 6,
    OutOfRange = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsMetric {
    Psnr = 0,
    Ssim = 1,
}

impl From<KsMetric> for MetricKind {
    fn from(m: KsMetric) -> Self {
        match m {
            KsMetric::Psnr => MetricKind::Psnr,
            KsMetric::Ssim => MetricKind::Ssim,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsFrameType {
    I = 0,
    P = 1,
    B = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KsBdRate {
    /// Negative means the test curve saves bitrate.
    pub percent: f64,
    pub avg_log_diff: f64,
    pub overlap_lo: f64,
    pub overlap_hi: f64,
}

impl From<BDRateResult> for KsBdRate {
    fn from(r: BDRateResult) -> Self {
        KsBdRate {
            percent: r.percent,
            avg_log_diff: r.avg_log_diff,
            overlap_lo: r.overlap_lo,
            overlap_hi: r.overlap_hi,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KsMinimizeResult {
    pub k_best: f64,
    pub f_best: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Accumulates sampled curves for one metric.
pub struct KsEnvelopeBuilder {
    metric: MetricKind,
    curves: Vec<SampledCurve>,
}

pub struct KsEnvelope {
    inner: ParetoEnvelope,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> KsStatus {
    match err {
        Error::TooFewPoints { .. } => KsStatus::TooFewPoints,
        Error::SingularFit(_) => KsStatus::SingularFit,
        Error::NoOverlap { .. } => KsStatus::NoOverlap,
        Error::NoCurves => KsStatus::NoCurves,
        Error::QpOutOfRange(_) | Error::OutsideDomain { .. } => KsStatus::OutOfRange,
        Error::NonPositiveBitrate(_)
        | Error::InvalidDistortion { .. }
        | Error::InvalidBounds { .. }
        | Error::InvalidTolerance(_)
        | Error::BudgetZero
        | Error::MetricMismatch
        | Error::EmptyGrid
        | Error::Parse(_) => KsStatus::InvalidArgument,
        _ => KsStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), KsStatus>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            KsStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("panic inside kscale".into());
            KsStatus::Panic
        }
    }
}

fn fail(err: Error) -> KsStatus {
    let status = status_of(&err);
    set_last_error(err.to_string());
    status
}

fn null(what: &str) -> KsStatus {
    set_last_error(format!("{what} is null"));
    KsStatus::NullPointer
}

unsafe fn points(rates: *const f64, distortions: *const f64, len: usize) -> Result<Vec<RDPoint>, KsStatus> {
    if rates.is_null() || distortions.is_null() {
        return Err(null("curve array"));
    }
    let r = std::slice::from_raw_parts(rates, len);
    let d = std::slice::from_raw_parts(distortions, len);
    Ok(r.iter().zip(d).map(|(&r, &d)| RDPoint::new(r, d)).collect())
}

/// Copies the last error message of this thread into `buf`, NUL terminated
/// and truncated to `len` bytes. Returns the full message length, or 0 when
/// there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ks_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The encoder's default Lagrangian multiplier for a frame type and QP.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_default_lambda(frame_type: KsFrameType, qp: i32, out: *mut f64) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ft = match frame_type {
            KsFrameType::I => FrameType::I,
            KsFrameType::P => FrameType::P,
            KsFrameType::B => FrameType::B,
        };
        *out = default_lambda(ft, qp).map_err(fail)?;
        Ok(())
    })
}

/// Closed-form BD-Rate of the test curve against the reference.
///
/// # Safety
/// Each rate/distortion pair of pointers must reference `len` readable
/// doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_bd_rate(
    ref_rates: *const f64,
    ref_distortions: *const f64,
    ref_len: usize,
    test_rates: *const f64,
    test_distortions: *const f64,
    test_len: usize,
    metric: KsMetric,
    out: *mut KsBdRate,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let metric = MetricKind::from(metric);
        let make =
            |pts: Vec<RDPoint>| RDCurve::new(1.0, RateControlMode::Cbr, metric, RangeLabel::Full, &pts).map_err(fail);
        let reference = make(points(ref_rates, ref_distortions, ref_len)?)?;
        let test = make(points(test_rates, test_distortions, test_len)?)?;
        *out = bd_rate(&reference, &test).map_err(fail)?.into();
        Ok(())
    })
}

pub type KsObjective = Option<unsafe extern "C" fn(k: f64, user_data: *mut c_void) -> f64>;

/// Bounded Brent minimization of `objective` over `[lo, hi]`. Probes are
/// rounded to three decimals and never repeated.
///
/// # Safety
/// `objective` is called with `user_data` from this thread only; `out` must
/// be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_minimize(
    objective: KsObjective,
    user_data: *mut c_void,
    lo: f64,
    hi: f64,
    xtol: f64,
    max_evals: usize,
    out: *mut KsMinimizeResult,
) -> KsStatus {
    guard(|| {
        let Some(objective) = objective else {
            return Err(null("objective"));
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let config = OptimizerConfig {
            lo,
            hi,
            xtol,
            max_evals,
            ..OptimizerConfig::default()
        };
        let trace = minimize_scalar(|k| objective(k, user_data), &config).map_err(fail)?;
        *out = KsMinimizeResult {
            k_best: trace.k_best,
            f_best: trace.f_best,
            evaluations: trace.evaluations.len(),
            converged: trace.converged,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ks_envelope_builder_new(metric: KsMetric) -> *mut KsEnvelopeBuilder {
    Box::into_raw(Box::new(KsEnvelopeBuilder {
        metric: metric.into(),
        curves: Vec::new(),
    }))
}

/// # Safety
/// `builder` must come from [`ks_envelope_builder_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_builder_free(builder: *mut KsEnvelopeBuilder) {
    if !builder.is_null() {
        drop(Box::from_raw(builder));
    }
}

/// Fits one RD curve measured at scale `k` and samples it at 1 kbps.
///
/// # Safety
/// `builder` must be live; `rates` and `distortions` must reference `len`
/// readable doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_builder_add_curve(
    builder: *mut KsEnvelopeBuilder,
    k: f64,
    rates: *const f64,
    distortions: *const f64,
    len: usize,
) -> KsStatus {
    guard(|| {
        let Some(b) = builder.as_mut() else {
            return Err(null("builder"));
        };
        let curve = RDCurve::new(
            k,
            RateControlMode::Cbr,
            b.metric,
            RangeLabel::Full,
            &points(rates, distortions, len)?,
        )
        .map_err(fail)?;
        let fit = fit_curve(&curve.points, FitOrientation::DOfLogR).map_err(fail)?;
        b.curves.push(sample_curve(&fit, k, b.metric).map_err(fail)?);
        Ok(())
    })
}

/// Builds the per-rate maximum over every curve added so far. The builder
/// stays usable.
///
/// # Safety
/// `builder` must be live; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_build(builder: *const KsEnvelopeBuilder, out: *mut *mut KsEnvelope) -> KsStatus {
    guard(|| {
        let Some(b) = builder.as_ref() else {
            return Err(null("builder"));
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = pareto_envelope(&b.curves).map_err(fail)?;
        *out = Box::into_raw(Box::new(KsEnvelope { inner }));
        Ok(())
    })
}

/// # Safety
/// `envelope` must come from [`ks_envelope_build`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_free(envelope: *mut KsEnvelope) {
    if !envelope.is_null() {
        drop(Box::from_raw(envelope));
    }
}

/// Number of 1 kbps grid points; 0 for a null handle.
///
/// # Safety
/// `envelope` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_len(envelope: *const KsEnvelope) -> usize {
    envelope.as_ref().map_or(0, |e| e.inner.rate_grid.len())
}

/// Grid point `index`: rate in kbps, best distortion and the k that
/// achieved it. Any output pointer may be null.
///
/// # Safety
/// `envelope` must be live; non-null outputs must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_get(
    envelope: *const KsEnvelope,
    index: usize,
    rate: *mut u32,
    distortion: *mut f64,
    k: *mut f64,
) -> KsStatus {
    guard(|| {
        let Some(e) = envelope.as_ref() else {
            return Err(null("envelope"));
        };
        let e = &e.inner;
        if index >= e.rate_grid.len() {
            set_last_error(format!("index {index} out of range for {} points", e.rate_grid.len()));
            return Err(KsStatus::OutOfRange);
        }
        if !rate.is_null() {
            *rate = e.rate_grid[index];
        }
        if !distortion.is_null() {
            *distortion = e.best_distortion[index];
        }
        if !k.is_null() {
            *k = e.argmax_k[index];
        }
        Ok(())
    })
}

/// Sampled BD-Rate of one envelope against another.
///
/// # Safety
/// Both handles must be live; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ks_envelope_bd_rate(
    reference: *const KsEnvelope,
    test: *const KsEnvelope,
    out: *mut KsBdRate,
) -> KsStatus {
    guard(|| {
        let (Some(r), Some(t)) = (reference.as_ref(), test.as_ref()) else {
            return Err(null("envelope"));
        };
        if out.is_null() {
            return Err(null("out"));
        }
        *out = bd_rate_sampled(&r.inner, &t.inner).map_err(fail)?.into();
        Ok(())
    })
}
