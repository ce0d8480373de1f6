//! Synthetic scenes: Gaussian blobs of classes with per-class spectra.
//!
//! `2 * classes` blob centers are scattered over the image and each class owns
//! two of them. A pixel belongs to its nearest blob when it lies within twice
//! the blob radius, otherwise it is background (label 0). Its spectrum is the
//! class signature plus a per-blob offset, attenuated by a Gaussian falloff
//! from the blob center, plus white noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::{HyperCube, LabelMap};
use crate::tensor::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub blob_radius: f64,
    pub noise_std: f64,
    /// Standard deviation of the per-blob spectral offset.
    pub blob_jitter: f64,
    /// Class signatures are a shared base spectrum plus uniform deviations
    /// in `[-spread, spread]`.
    pub signature_spread: f64,
    /// Overall gain on every value, e.g. 1000 to mimic raw sensor counts.
    pub amplitude: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 60,
            width: 60,
            bands: 10,
            classes: 6,
            blob_radius: 8.0,
            noise_std: 0.1,
            blob_jitter: 0.05,
            signature_spread: 0.3,
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub cube: HyperCube,
    pub ground_truth: LabelMap,
}

pub fn generate(params: &SynthParams, seed: u64) -> Result<Scene> {
    let p = params;
    if p.height == 0 || p.width == 0 || p.bands == 0 {
        return Err(Error::param("scene extents must be positive"));
    }
    if p.classes == 0 || p.classes > u16::MAX as usize / 2 {
        return Err(Error::param(format!(
            "unsupported class count {}",
            p.classes
        )));
    }
    if !(p.blob_radius > 0.0)
        || !(p.noise_std >= 0.0)
        || !(p.blob_jitter >= 0.0)
        || !(p.signature_spread >= 0.0)
    {
        return Err(Error::param(
            "radius must be positive; noise, jitter and spread nonnegative",
        ));
    }
    if !(p.amplitude > 0.0) || !p.amplitude.is_finite() {
        return Err(Error::param(format!(
            "amplitude must be positive, got {}",
            p.amplitude
        )));
    }
    let rng = RngState::new(seed);
    let mut layout = rng.fork(1);
    let mut spectra = rng.fork(2);
    let mut noise_rng = rng.fork(3);

    let blobs: Vec<(f64, f64)> = (0..2 * p.classes)
        .map(|_| {
            (
                layout.random_range(0.0..p.height as f64),
                layout.random_range(0.0..p.width as f64),
            )
        })
        .collect();
    let background: Vec<f64> = (0..p.bands)
        .map(|_| spectra.random_range(0.0..1.0))
        .collect();
    let base: Vec<f64> = (0..p.bands)
        .map(|_| spectra.random_range(0.0..1.0))
        .collect();
    let signatures: Vec<Vec<f64>> = (0..p.classes)
        .map(|_| {
            base.iter()
                .map(|&v| v + p.signature_spread * spectra.random_range(-1.0..=1.0))
                .collect()
        })
        .collect();
    let jitter = Normal::new(0.0, p.blob_jitter).map_err(|e| Error::param(e.to_string()))?;
    let offsets: Vec<Vec<f64>> = blobs
        .iter()
        .map(|_| (0..p.bands).map(|_| jitter.sample(&mut spectra)).collect())
        .collect();
    let noise = Normal::new(0.0, p.noise_std).map_err(|e| Error::param(e.to_string()))?;

    let plane = p.height * p.width;
    let mut data = vec![0f32; plane * p.bands];
    let mut labels = vec![0u16; plane];
    let reach = 2.0 * p.blob_radius;
    for r in 0..p.height {
        for c in 0..p.width {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let (blob, d2) = blobs
                .iter()
                .enumerate()
                .map(|(i, &(by, bx))| (i, (y - by).powi(2) + (x - bx).powi(2)))
                .fold(
                    (0, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                );
            let i = r * p.width + c;
            let inside = d2.sqrt() <= reach;
            let falloff = (-d2 / (2.0 * reach * reach)).exp();
            if inside {
                labels[i] = (blob % p.classes) as u16 + 1;
            }
            for b in 0..p.bands {
                let clean = if inside {
                    let s = signatures[blob % p.classes][b] + offsets[blob][b];
                    falloff * s + (1.0 - falloff) * background[b]
                } else {
                    background[b]
                };
                data[b * plane + i] = (p.amplitude * (clean + noise.sample(&mut noise_rng))) as f32;
            }
        }
    }
    Ok(Scene {
        cube: HyperCube::new(p.height, p.width, p.bands, data)?,
        ground_truth: LabelMap::new(p.height, p.width, labels)?,
    })
}
