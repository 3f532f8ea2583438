//! Synthetic ultrasound-like phantoms.
//!
//! Each sample is a star-convex nodule (a harmonic perturbation of a
//! circle, optionally anisotropically scaled and rotated) rendered as a
//! hypoechoic region inside brighter tissue, with multiplicative speckle
//! and box smoothing. The measurement annotation is recovered from the
//! mask exactly the way it would be measured: longest inside chord plus
//! the widest perpendicular chord.
//!
//! Sampling is keyed by (seed, index, attempt): every sample draws from
//! its own deterministic substream, and degenerate draws (too small, or
//! touching the frame) retry on the next attempt substream.

use crate::geometry::{annotation_from_mask, AspectAnnotation};
use crate::mask::BinaryMask;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("sample {index} degenerate after {attempts} attempts")]
    DegenerateSample { index: usize, attempts: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Image side length in pixels.
    pub size: usize,
    /// Number of samples.
    pub n: usize,
    pub seed: u64,
    /// Suppress boundary harmonics, producing exact (rotated) ellipses.
    pub convex_only: bool,
    /// Amplitude bound of radial harmonics 2..4.
    pub star_harmonics: f64,
    /// Base intensity inside the nodule.
    pub fg_level: f64,
    /// Base intensity of surrounding tissue.
    pub bg_level: f64,
    /// Multiplicative speckle strength.
    pub speckle_strength: f64,
    /// Anisotropic scaling range of the major axis over the minor.
    pub aspect_min: f64,
    pub aspect_max: f64,
    /// Fraction of samples assigned to the training split.
    pub split_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n: 250,
            seed: 7,
            convex_only: false,
            star_harmonics: 0.15,
            fg_level: 0.25,
            bg_level: 0.55,
            speckle_strength: 0.4,
            aspect_min: 1.0,
            aspect_max: 2.2,
            split_ratio: 0.8,
        }
    }
}

/// One dataset item: image intensities in [0,1] (quantized to 8 bits so
/// on-disk round trips are exact), the reference mask, and the derived
/// annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f64>,
    pub gt: BinaryMask,
    pub ann: AspectAnnotation,
}

const MAX_ATTEMPTS: u64 = 64;

fn stream_id(index: usize, attempt: u64) -> u64 {
    (index as u64) * MAX_ATTEMPTS + attempt
}

/// Generate sample `index` of the configured dataset.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> Result<SampleRecord, SynthError> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::substream(cfg.seed, stream_id(index, attempt));
        if let Some(record) = try_sample(cfg, index, &mut rng) {
            return Ok(record);
        }
    }
    Err(SynthError::DegenerateSample {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

fn try_sample(cfg: &SynthConfig, index: usize, rng: &mut impl Rng) -> Option<SampleRecord> {
    let size = cfg.size;
    let sizef = size as f64;

    // Draw order is fixed; convex-only zeroes the harmonics but still
    // consumes the same draws so geometry is comparable across modes.
    let base_radius = rng.gen_range(0.12..0.28) * sizef;
    let mut amps = [0.0f64; 3];
    let mut phases = [0.0f64; 3];
    for j in 0..3 {
        let a = rng.gen_range(-cfg.star_harmonics..=cfg.star_harmonics);
        amps[j] = if cfg.convex_only { 0.0 } else { a };
        phases[j] = rng.gen_range(0.0..std::f64::consts::TAU);
    }
    let aspect = if cfg.aspect_max > cfg.aspect_min {
        rng.gen_range(cfg.aspect_min..cfg.aspect_max)
    } else {
        cfg.aspect_min
    };
    let rot = rng.gen_range(0.0..std::f64::consts::PI);
    let cx = rng.gen_range(0.25..0.75) * sizef;
    let cy = rng.gen_range(0.25..0.75) * sizef;

    // Area-preserving anisotropy: major scaled up, minor scaled down.
    let sx = aspect.sqrt();
    let sy = 1.0 / aspect.sqrt();
    let (cr, sr) = (rot.cos(), rot.sin());
    let radius_at = |theta: f64| -> f64 {
        let mut r = 1.0;
        for j in 0..3 {
            r += amps[j] * ((j as f64 + 2.0) * theta + phases[j]).cos();
        }
        base_radius * r
    };

    let mut gt = BinaryMask::zeros(size, size);
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 + 0.5 - cx;
            let dy = row as f64 + 0.5 - cy;
            // Undo rotation, then anisotropic scaling.
            let qx = (cr * dx + sr * dy) / sx;
            let qy = (-sr * dx + cr * dy) / sy;
            let rho = qx.hypot(qy);
            if rho < radius_at(qy.atan2(qx)) {
                gt.set(row, col, true);
            }
        }
    }

    if gt.count() < 16 || touches_border(&gt) {
        return None;
    }
    let ann = annotation_from_mask(&gt).ok()?;

    // Hypoechoic interior with multiplicative speckle, box-smoothed twice.
    let mut img: Vec<f64> = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let base = if gt.get(row, col) { cfg.fg_level } else { cfg.bg_level };
            let noise: f64 = gaussian(rng);
            img.push(base * (1.0 + cfg.speckle_strength * noise));
        }
    }
    let img = box_smooth(&img, size, size);
    let mut img = box_smooth(&img, size, size);
    for v in &mut img {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    Some(SampleRecord {
        id: format!("s{index:04}"),
        height: size,
        width: size,
        image: img,
        gt,
        ann,
    })
}

/// Generate the whole configured dataset.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SampleRecord>, SynthError> {
    (0..cfg.n).map(|i| synth_sample(cfg, i)).collect()
}

/// Deterministic train/test split: a seeded shuffle of the index range,
/// disjoint and exhaustive.
pub fn split_indices(n: usize, split_ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::substream(seed, u64::MAX);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let cut = ((n as f64) * split_ratio).round() as usize;
    let (train, test) = idx.split_at(cut.min(n));
    (train.to_vec(), test.to_vec())
}

fn touches_border(mask: &BinaryMask) -> bool {
    let (h, w) = (mask.height(), mask.width());
    (0..w).any(|c| mask.get(0, c) || mask.get(h - 1, c))
        || (0..h).any(|r| mask.get(r, 0) || mask.get(r, w - 1))
}

/// Standard normal via Box-Muller, consuming two uniform draws.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// 3x3 box filter with clamped borders.
fn box_smooth(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    acc += img[rr * w + cc];
                }
            }
            out[r * w + c] = acc / 9.0;
        }
    }
    out
}
