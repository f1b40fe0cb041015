//! Encoder backends and the persistent encode cache.

mod cache;
mod external;
mod lambda;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, CacheRecord, EncodeCache};
pub use external::{
    render_command, ExternalBackend, ExternalEncoderConfig, Extractor, Placeholders, Reduce, StatsExtraction, Stream,
};
pub use lambda::{default_lambda, FrameType};
pub use synthetic::{synthetic_distortion, synthetic_rate, synthetic_ssim, SyntheticBackend, SyntheticClipModel};

use crate::error::{Error, Result};
use crate::types::{ClipDescriptor, MetricKind, OperatingPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub clip: ClipDescriptor,
    pub op: OperatingPoint,
    /// Scale applied to the encoder's default Lagrangian multiplier.
    pub k: f64,
    pub tune: MetricKind,
}

impl EncodeRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidConfig(format!("k must be positive, got {}", self.k)));
        }
        self.op.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    /// Measured, not requested, bitrate in kbps.
    pub achieved_bitrate: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub encoder_id: String,
    pub wall_time: f64,
}

impl EncodeResult {
    pub fn distortion(&self, metric: MetricKind) -> f64 {
        match metric {
            MetricKind::Psnr => self.psnr,
            MetricKind::Ssim => self.ssim,
        }
    }
}

pub trait EncoderBackend: Send + Sync {
    /// Stable identifier that becomes part of every cache key.
    fn id(&self) -> &str;

    fn encode(&self, request: &EncodeRequest) -> Result<EncodeResult>;
}

/// A backend fronted by an optional cache.
pub struct Encoder<'a> {
    backend: &'a dyn EncoderBackend,
    cache: Option<&'a EncodeCache>,
}

impl<'a> Encoder<'a> {
    pub fn new(backend: &'a dyn EncoderBackend, cache: Option<&'a EncodeCache>) -> Self {
        Encoder { backend, cache }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn key(&self, request: &EncodeRequest) -> CacheKey {
        CacheKey::new(request, self.backend.id())
    }

    /// Serves from the cache when possible. The flag is true when the
    /// backend actually ran.
    pub fn encode(&self, request: &EncodeRequest) -> Result<(EncodeResult, bool)> {
        request.validate()?;
        let key = self.key(request);
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.lookup(&key) {
                return Ok((hit, false));
            }
        }
        let result = self.backend.encode(request)?;
        if result.achieved_bitrate.is_nan() || result.achieved_bitrate <= 0.0 {
            return Err(Error::NonPositiveBitrate(result.achieved_bitrate));
        }
        if let Some(cache) = self.cache {
            cache.store(key, result.clone())?;
        }
        Ok((result, true))
    }
}
