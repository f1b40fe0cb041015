//! Clip manifests and seeded synthetic corpora.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::SyntheticClipModel;
use crate::error::{Error, Result};
use crate::types::ClipDescriptor;

/// Reads a CSV manifest with columns `id,source_path,frame_count,width,height`.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipDescriptor>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        })?;
    let mut clips = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize::<ClipDescriptor>() {
        let clip = row?;
        clip.validate()?;
        if !seen.insert(clip.id.clone()) {
            return Err(Error::Parse(format!("duplicate clip id {:?}", clip.id)));
        }
        clips.push(clip);
    }
    Ok(clips)
}

/// Parameter ranges the synthetic corpus draws from.
pub mod ranges {
    pub const A: (f64, f64) = (15.0, 30.0);
    pub const B: (f64, f64) = (2.0, 5.0);
    pub const C: (f64, f64) = (0.0, 3.0);
    pub const K_OPT: (f64, f64) = (0.5, 1.3);
    pub const R_MIN: (f64, f64) = (200.0, 800.0);
    pub const R_MAX: (f64, f64) = (6000.0, 16000.0);
    pub const R0: (f64, f64) = (800.0, 3000.0);
    pub const CRF0: u32 = 32;
    pub const GAMMA: (f64, f64) = (0.1, 0.5);
    /// SSIM-domain dB at `r_min`, which puts SSIM near 0.84 there.
    pub const SSIM_DB_AT_RMIN: f64 = 8.0;
}

/// `n` clips with model parameters drawn uniformly from [`ranges`].
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<(ClipDescriptor, SyntheticClipModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
    (0..n)
        .map(|i| {
            let id = format!("synth-{i:04}");
            let a = draw(ranges::A);
            let b = draw(ranges::B);
            let c = draw(ranges::C);
            let k_lo_opt = draw(ranges::K_OPT);
            let k_hi_opt = draw(ranges::K_OPT);
            let r_min = draw(ranges::R_MIN);
            let r_max = draw(ranges::R_MAX);
            let r0 = draw(ranges::R0);
            let gamma = draw(ranges::GAMMA);
            let model = SyntheticClipModel {
                a,
                b,
                c,
                k_lo_opt,
                k_hi_opt,
                r_min,
                r_max,
                r0,
                crf0: ranges::CRF0,
                gamma,
                seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64),
                ssim_db_offset: a + b * r_min.ln() - ranges::SSIM_DB_AT_RMIN,
            };
            let clip = ClipDescriptor {
                source_path: format!("{id}.y4m"),
                id,
                frame_count: 150,
                width: 1920,
                height: 1080,
            };
            (clip, model)
        })
        .collect()
}
