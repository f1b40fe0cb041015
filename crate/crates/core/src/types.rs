//! Shared domain types and the operating-point presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of points a curve needs for a cubic fit.
pub const MIN_CURVE_POINTS: usize = 4;

pub const CRF_MAX: u32 = 51;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MetricKind {
    /// Decibels.
    Psnr,
    /// Unitless, in (0, 1].
    Ssim,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Psnr => "PSNR",
            MetricKind::Ssim => "SSIM",
        }
    }

    /// Smallest distortion overlap a BD-Rate integral is computed over.
    pub fn min_overlap(self) -> f64 {
        match self {
            MetricKind::Psnr => 0.01,
            MetricKind::Ssim => 0.001,
        }
    }

    /// Lower-case token used in command templates (`--tune-psnr`).
    pub fn tune_token(self) -> &'static str {
        match self {
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
        }
    }

    pub fn check(self, value: f64) -> Result<()> {
        let ok = match self {
            MetricKind::Psnr => value.is_finite() && value > 0.0,
            MetricKind::Ssim => value > 0.0 && value <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDistortion {
                value,
                metric: self.name(),
            })
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(MetricKind::Psnr),
            "ssim" => Ok(MetricKind::Ssim),
            other => Err(Error::Parse(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RateControlMode {
    /// Constant rate factor; value is the quality index.
    Crf,
    /// Constant bitrate; value is the target in kbps.
    Cbr,
}

impl RateControlMode {
    pub fn name(self) -> &'static str {
        match self {
            RateControlMode::Crf => "CRF",
            RateControlMode::Cbr => "CBR",
        }
    }
}

impl fmt::Display for RateControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RateControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crf" => Ok(RateControlMode::Crf),
            "cbr" => Ok(RateControlMode::Cbr),
            other => Err(Error::Parse(format!("unknown rate control mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub mode: RateControlMode,
    pub value: u32,
}

impl OperatingPoint {
    pub fn new(mode: RateControlMode, value: u32) -> Result<Self> {
        let op = OperatingPoint { mode, value };
        op.validate()?;
        Ok(op)
    }

    pub fn crf(value: u32) -> Result<Self> {
        Self::new(RateControlMode::Crf, value)
    }

    pub fn cbr(kbps: u32) -> Result<Self> {
        Self::new(RateControlMode::Cbr, kbps)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            RateControlMode::Crf if self.value > CRF_MAX => Err(Error::InvalidOperatingPoint(format!(
                "CRF {} outside [0, {CRF_MAX}]",
                self.value
            ))),
            RateControlMode::Cbr if self.value == 0 => {
                Err(Error::InvalidOperatingPoint("CBR target must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RangeLabel {
    Low,
    Med,
    High,
    /// Union of the three ranges, used by the full-span baseline.
    Full,
}

impl RangeLabel {
    pub fn name(self) -> &'static str {
        match self {
            RangeLabel::Low => "LOW",
            RangeLabel::Med => "MED",
            RangeLabel::High => "HIGH",
            RangeLabel::Full => "FULL",
        }
    }
}

impl fmt::Display for RangeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitrateRange {
    pub label: RangeLabel,
    pub points: Vec<OperatingPoint>,
}

impl BitrateRange {
    pub fn new(label: RangeLabel, points: Vec<OperatingPoint>) -> Result<Self> {
        if points.len() < MIN_CURVE_POINTS {
            return Err(Error::InvalidOperatingPoint(format!(
                "range {label} has {} points, need {MIN_CURVE_POINTS}",
                points.len()
            )));
        }
        for p in &points {
            p.validate()?;
        }
        for w in points.windows(2) {
            if w[0].mode != w[1].mode || w[0].value >= w[1].value {
                return Err(Error::InvalidOperatingPoint(format!(
                    "range {label} is not strictly increasing in one mode"
                )));
            }
        }
        Ok(BitrateRange { label, points })
    }

    pub fn mode(&self) -> RateControlMode {
        self.points[0].mode
    }

    /// Sorted, deduplicated union of several ranges' operating points.
    pub fn union(ranges: &[BitrateRange]) -> Result<Self> {
        let mut points: Vec<OperatingPoint> = ranges.iter().flat_map(|r| r.points.iter().copied()).collect();
        points.sort_by_key(|p| (p.mode, p.value));
        points.dedup();
        BitrateRange::new(RangeLabel::Full, points)
    }
}

fn range_of(mode: RateControlMode, label: RangeLabel, values: &[u32]) -> BitrateRange {
    let points = values.iter().map(|&value| OperatingPoint { mode, value }).collect();
    BitrateRange { label, points }
}

fn crf_sweep(from: u32, step: u32, to: u32) -> Vec<u32> {
    (from..=to).step_by(step as usize).collect()
}

/// The LOW, MED and HIGH operating-point sets for a rate control mode.
///
/// CRF rows are written `from:step:to` and expand inclusively, so each CRF
/// range has six points against five for CBR.
pub fn range_presets(mode: RateControlMode) -> Vec<BitrateRange> {
    match mode {
        RateControlMode::Cbr => vec![
            range_of(mode, RangeLabel::Low, &[256, 512, 1000, 2000, 4000]),
            range_of(mode, RangeLabel::Med, &[1000, 2000, 4000, 6000, 8000]),
            range_of(mode, RangeLabel::High, &[4000, 6000, 8000, 10000, 12000]),
        ],
        RateControlMode::Crf => vec![
            range_of(mode, RangeLabel::Low, &crf_sweep(22, 2, 32)),
            range_of(mode, RangeLabel::Med, &crf_sweep(27, 2, 37)),
            range_of(mode, RangeLabel::High, &crf_sweep(32, 2, 42)),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipDescriptor {
    pub id: String,
    pub source_path: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
}

impl ClipDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Parse("clip id is empty".into()));
        }
        if self.frame_count == 0 {
            return Err(Error::Parse(format!("clip {} has zero frames", self.id)));
        }
        Ok(())
    }
}

/// One measured operating point: achieved bitrate in kbps and distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub bitrate: f64,
    pub distortion: f64,
}

impl RDPoint {
    pub fn new(bitrate: f64, distortion: f64) -> Self {
        RDPoint { bitrate, distortion }
    }
}

/// Sort, collapse duplicate bitrates and drop points that a cheaper point
/// beats on quality.
///
/// Duplicate bitrates keep the larger distortion value. A point is dropped
/// when some cheaper point has strictly greater distortion; ties survive.
pub fn validate_curve(raw_points: &[RDPoint]) -> Result<Vec<RDPoint>> {
    if let Some(p) = raw_points.iter().find(|p| !(p.bitrate > 0.0 && p.bitrate.is_finite())) {
        return Err(Error::NonPositiveBitrate(p.bitrate));
    }
    if let Some(p) = raw_points.iter().find(|p| !p.distortion.is_finite()) {
        return Err(Error::InvalidDistortion {
            value: p.distortion,
            metric: "distortion",
        });
    }

    let mut sorted = raw_points.to_vec();
    sorted.sort_by(|a, b| a.bitrate.total_cmp(&b.bitrate));

    let mut deduped: Vec<RDPoint> = Vec::with_capacity(sorted.len());
    for p in sorted {
        match deduped.last_mut() {
            Some(last) if last.bitrate == p.bitrate => {
                last.distortion = last.distortion.max(p.distortion);
            }
            _ => deduped.push(p),
        }
    }

    let mut kept: Vec<RDPoint> = Vec::with_capacity(deduped.len());
    let mut best = f64::NEG_INFINITY;
    for p in deduped {
        if p.distortion >= best {
            best = p.distortion;
            kept.push(p);
        }
    }

    if kept.len() < MIN_CURVE_POINTS {
        return Err(Error::TooFewPoints {
            found: kept.len(),
            needed: MIN_CURVE_POINTS,
        });
    }
    Ok(kept)
}

/// Measured RD points for one k, one rate control mode and one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDCurve {
    pub k: f64,
    pub mode: RateControlMode,
    pub metric: MetricKind,
    pub range_label: RangeLabel,
    pub points: Vec<RDPoint>,
}

impl RDCurve {
    /// Builds a curve, running `validate_curve` and the metric range checks.
    pub fn new(
        k: f64,
        mode: RateControlMode,
        metric: MetricKind,
        range_label: RangeLabel,
        raw_points: &[RDPoint],
    ) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Parse(format!("k must be positive, got {k}")));
        }
        let points = validate_curve(raw_points)?;
        for p in &points {
            metric.check(p.distortion)?;
        }
        Ok(RDCurve {
            k,
            mode,
            metric,
            range_label,
            points,
        })
    }

    pub fn bitrates(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.bitrate)
    }
}
