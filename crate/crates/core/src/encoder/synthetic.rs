//! Deterministic stand-in for a real encoder.
//!
//! Distortion rises with `b * ln(rate)` and is penalized quadratically in
//! `ln k` around a rate-dependent optimum `k*(rate)`, which moves
//! log-linearly from `k_lo_opt` at `r_min` to `k_hi_opt` at `r_max`. Curves
//! at different k therefore cross, and the best k depends on the bitrate.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncodeRequest, EncodeResult, EncoderBackend};
use crate::error::{Error, Result};
use crate::types::RateControlMode;

const SSIM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClipModel {
    /// Distortion offset, dB.
    pub a: f64,
    /// dB per natural-log unit of rate.
    pub b: f64,
    /// Sensitivity of distortion to a mistuned k, dB.
    pub c: f64,
    pub k_lo_opt: f64,
    pub k_hi_opt: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Rate produced at `crf0` with k = 1.
    pub r0: f64,
    pub crf0: u32,
    /// How strongly k moves the rate in CRF mode.
    pub gamma: f64,
    pub seed: u64,
    /// Subtracted from the dB surface before mapping to SSIM.
    #[serde(default)]
    pub ssim_db_offset: f64,
}

impl SyntheticClipModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.b > 0.0
            && self.c >= 0.0
            && self.k_lo_opt > 0.0
            && self.k_hi_opt > 0.0
            && self.r_min > 0.0
            && self.r_min < self.r_max
            && self.r0 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid synthetic model {self:?}")))
        }
    }

    /// The k that maximizes distortion at `rate`.
    pub fn k_opt(&self, rate: f64) -> f64 {
        let t = ((rate.ln() - self.r_min.ln()) / (self.r_max.ln() - self.r_min.ln())).clamp(0.0, 1.0);
        ((1.0 - t) * self.k_lo_opt.ln() + t * self.k_hi_opt.ln()).exp()
    }
}

/// Distortion in dB at a given rate and k.
pub fn synthetic_distortion(model: &SyntheticClipModel, rate: f64, k: f64) -> f64 {
    let miss = k.ln() - model.k_opt(rate).ln();
    model.a + model.b * rate.ln() - model.c * miss * miss
}

pub fn synthetic_ssim(model: &SyntheticClipModel, distortion_db: f64) -> f64 {
    (1.0 - 10f64.powf(-(distortion_db - model.ssim_db_offset) / 10.0)).clamp(SSIM_FLOOR, 1.0)
}

/// Rate produced by a CRF index; larger k lowers the rate when gamma > 0.
pub fn synthetic_rate(model: &SyntheticClipModel, crf: u32, k: f64) -> f64 {
    model.r0 * 2f64.powf(-(crf as f64 - model.crf0 as f64) / 6.0) * k.powf(-model.gamma)
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct SyntheticBackend {
    models: HashMap<String, SyntheticClipModel>,
    /// Multiplicative bitrate jitter amplitude in CBR mode, 0 for exact rates.
    jitter: f64,
    calls: AtomicUsize,
}

impl SyntheticBackend {
    pub fn new(models: impl IntoIterator<Item = (String, SyntheticClipModel)>) -> Result<Self> {
        let models: HashMap<_, _> = models.into_iter().collect();
        for m in models.values() {
            m.validate()?;
        }
        Ok(SyntheticBackend {
            models,
            jitter: 0.0,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn with_jitter(mut self, amplitude: f64) -> Self {
        self.jitter = amplitude;
        self
    }

    /// Number of encodes this backend has performed.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn model(&self, clip_id: &str) -> Option<&SyntheticClipModel> {
        self.models.get(clip_id)
    }

    fn jitter_factor(&self, model: &SyntheticClipModel, request: &EncodeRequest) -> f64 {
        if self.jitter == 0.0 {
            return 1.0;
        }
        let k_milli = (request.k * 1000.0).round() as i64 as u64;
        let seed = mix(model.seed ^ mix(request.op.value as u64 ^ mix(k_milli)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        1.0 + rng.gen_range(-self.jitter..=self.jitter)
    }
}

impl EncoderBackend for SyntheticBackend {
    fn id(&self) -> &str {
        "synthetic-v1"
    }

    fn encode(&self, request: &EncodeRequest) -> Result<EncodeResult> {
        let model = self
            .models
            .get(&request.clip.id)
            .ok_or_else(|| Error::UnknownClip(request.clip.id.clone()))?;
        self.calls.fetch_add(1, Ordering::Relaxed);

        let k = request.k;
        let (rate, achieved) = match request.op.mode {
            RateControlMode::Cbr => {
                let rate = request.op.value as f64;
                (rate, rate * self.jitter_factor(model, request))
            }
            RateControlMode::Crf => {
                let rate = synthetic_rate(model, request.op.value, k);
                (rate, rate)
            }
        };
        let psnr = synthetic_distortion(model, rate, k);
        Ok(EncodeResult {
            achieved_bitrate: achieved,
            psnr,
            ssim: synthetic_ssim(model, psnr),
            encoder_id: self.id().to_string(),
            wall_time: 0.0,
        })
    }
}
