//! Synthetic labelled datasets for exercising the transfer pipeline.
//!
//! Each sample has two views of one latent point `z = center[class] + noise`
//! with unit isotropic noise:
//!
//! * `features`: `z` itself, the "teacher" representation that clusters
//!   cleanly.
//! * `inputs`: what the student network sees. Every coordinate of `z` has its
//!   sign flipped at random, so class information survives only in
//!   coordinate magnitudes, and pure-noise distractor coordinates are
//!   appended. A network has to learn both to read magnitudes and to ignore
//!   the distractors; a randomly initialized one does neither.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{write_features, write_labels, FeatureMatrix, LabelVector, Manifest};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Minimum distance between class centers, in units of the noise std.
    /// Also enforced between the coordinate-wise absolute values of centers.
    pub sep: f64,
    /// Fixes the class centers.
    pub seed: u64,
    /// Fixes the samples drawn around the centers; defaults to `seed`.
    pub sample_seed: Option<u64>,
    /// Noise coordinates appended to `inputs`.
    pub distractors: usize,
    pub distractor_std: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            classes: 10,
            per_class: 200,
            dim: 16,
            sep: 10.0,
            seed: 0,
            sample_seed: None,
            distractors: 16,
            distractor_std: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobData {
    pub features: FeatureMatrix,
    pub inputs: FeatureMatrix,
    pub labels: LabelVector,
    pub centers: FeatureMatrix,
}

const CENTER_ATTEMPTS: usize = 10_000;

fn min_distance(centers: &[Vec<f64>], cand: &[f64], fold: bool) -> f64 {
    centers
        .iter()
        .map(|c| {
            c.iter()
                .zip(cand)
                .map(|(a, b)| {
                    let d = if fold { a.abs() - b.abs() } else { a - b };
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Centers whose raw and folded pairwise distances are all at least `sep`.
fn draw_centers(cfg: &BlobConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = Rng::substream(cfg.seed, 0);
    // coordinate scale giving a typical pairwise distance of about 1.5 * sep
    let mut scale = 1.5 * cfg.sep / (2.0 * cfg.dim as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    let mut attempts = 0;
    while centers.len() < cfg.classes {
        if attempts == CENTER_ATTEMPTS {
            // too crowded at this scale: spread out and start over
            scale *= 1.25;
            centers.clear();
            attempts = 0;
        }
        attempts += 1;
        let cand: Vec<f64> = (0..cfg.dim).map(|_| scale * rng.normal()).collect();
        if min_distance(&centers, &cand, false) >= cfg.sep
            && min_distance(&centers, &cand, true) >= cfg.sep
        {
            centers.push(cand);
        }
    }
    Ok(centers)
}

/// Samples are ordered class by class.
pub fn blobs(cfg: &BlobConfig) -> Result<BlobData> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.dim == 0 {
        return Err(Error::InvalidConfig(
            "classes, per_class and dim must all be >= 1".into(),
        ));
    }
    if !(cfg.sep >= 0.0 && cfg.sep.is_finite()) {
        return Err(Error::InvalidConfig("sep must be finite and >= 0".into()));
    }
    if !(cfg.distractor_std >= 0.0 && cfg.distractor_std.is_finite()) {
        return Err(Error::InvalidConfig(
            "distractor_std must be finite and >= 0".into(),
        ));
    }
    let centers = draw_centers(cfg)?;
    let mut rng = Rng::substream(cfg.sample_seed.unwrap_or(cfg.seed), 1);
    let n = cfg.classes * cfg.per_class;
    let mut features = Vec::with_capacity(n * cfg.dim);
    let in_dim = cfg.dim + cfg.distractors;
    let mut inputs = Vec::with_capacity(n * in_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.per_class {
            for &m in center {
                let z = m + rng.normal();
                features.push(z);
                inputs.push(if rng.bernoulli(0.5) { -z } else { z });
            }
            for _ in 0..cfg.distractors {
                inputs.push(cfg.distractor_std * rng.normal());
            }
            labels.push(c);
        }
    }
    Ok(BlobData {
        features: FeatureMatrix::new(n, cfg.dim, features)?,
        inputs: FeatureMatrix::new(n, in_dim, inputs)?,
        labels: LabelVector::new(labels, cfg.classes)?,
        centers: FeatureMatrix::from_rows(&centers)?,
    })
}

/// Writes `<prefix>.features.fve`, `<prefix>.inputs.fve`,
/// `<prefix>.labels.lbl` and the manifest `<prefix>.json`; returns the
/// manifest path.
pub fn write_blobs(data: &BlobData, prefix: impl AsRef<Path>) -> Result<PathBuf> {
    let prefix = prefix.as_ref();
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let (f, i, l, m) = (
        with(".features.fve"),
        with(".inputs.fve"),
        with(".labels.lbl"),
        with(".json"),
    );
    write_features(&data.features, &f)?;
    write_features(&data.inputs, &i)?;
    write_labels(&data.labels, &l)?;
    let name = |p: &Path| PathBuf::from(p.file_name().unwrap());
    Manifest {
        features: Some(name(&f)),
        labels: Some(name(&l)),
        images_dir: None,
        inputs: Some(name(&i)),
    }
    .save(&m)?;
    Ok(m)
}
