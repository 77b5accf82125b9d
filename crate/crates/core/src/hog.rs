//! Histogram-of-oriented-gradients descriptors and bag-of-words encoding.
//!
//! Gradients use centered `[-1, 0, 1]` differences with border replication.
//! Each pixel votes its gradient magnitude into the two orientation bins
//! nearest its angle (linear interpolation between bin centers, wrapping
//! around). Cells are `cell_size` pixels square; pixels past the last whole
//! cell are ignored. Blocks of `block_size x block_size` cells are L2-hys
//! normalized: L2, clip, L2 again. A block whose norm is zero stays zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{FeatureMatrix, RawImage};
use crate::error::{Error, Result};
use crate::jigsaw::to_grayscale;
use crate::kmeans::{self, Codebook, KMeansConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    pub cell_size: usize,
    pub n_bins: usize,
    /// Block side, in cells.
    pub block_size: usize,
    /// Block step, in cells.
    pub block_stride: usize,
    /// Orientations over [0, 360) instead of [0, 180).
    pub signed: bool,
    /// L2-hys clip threshold; `None` gives plain L2 block normalization.
    pub clip: Option<f64>,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell_size: 8,
            n_bins: 9,
            block_size: 2,
            block_stride: 1,
            signed: false,
            clip: Some(0.2),
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 || self.cell_size < 2 {
            return Err(Error::InvalidConfig(
                "HOG needs n_bins >= 2 and cell_size >= 2".into(),
            ));
        }
        if self.block_size == 0 || self.block_stride == 0 {
            return Err(Error::InvalidConfig(
                "block size and stride must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn orientation_range(&self) -> f64 {
        if self.signed {
            360.0
        } else {
            180.0
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.orientation_range() / self.n_bins as f64
    }
}

/// Single-channel intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayPlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(GrayPlane {
            height,
            width,
            data,
        })
    }

    /// Intensities of a grey image; colour images go through BT.601 luma.
    pub fn from_image(img: &RawImage) -> Result<Self> {
        let grey = if img.channels == 3 {
            let g = to_grayscale(img)?;
            g.pixels.iter().step_by(3).map(|&v| v as f64).collect()
        } else {
            img.pixels.iter().map(|&v| v as f64).collect()
        };
        GrayPlane::new(img.height, img.width, grey)
    }

    fn at(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub cells_y: usize,
    pub cells_x: usize,
    pub n_bins: usize,
    /// `cells_y * cells_x * n_bins`, row-major over cells.
    pub cell_hists: Vec<f64>,
    pub blocks_y: usize,
    pub blocks_x: usize,
    pub block_len: usize,
    /// Normalized block vectors, concatenated row-major over blocks. This is
    /// also the flat descriptor.
    pub blocks: Vec<f64>,
}

impl HogDescriptor {
    pub fn cell(&self, cy: usize, cx: usize) -> &[f64] {
        let i = (cy * self.cells_x + cx) * self.n_bins;
        &self.cell_hists[i..i + self.n_bins]
    }

    pub fn block(&self, by: usize, bx: usize) -> &[f64] {
        let i = (by * self.blocks_x + bx) * self.block_len;
        &self.blocks[i..i + self.block_len]
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks_y * self.blocks_x
    }

    pub fn block_vectors(&self) -> Vec<Vec<f64>> {
        self.blocks
            .chunks_exact(self.block_len)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn as_vector(&self) -> &[f64] {
        &self.blocks
    }
}

/// Per-cell orientation histograms: `(cells_y, cells_x, data)`.
pub fn cell_histograms(plane: &GrayPlane, cfg: &HogConfig) -> Result<(usize, usize, Vec<f64>)> {
    cfg.validate()?;
    let cs = cfg.cell_size;
    let (cells_y, cells_x) = (plane.height / cs, plane.width / cs);
    let nb = cfg.n_bins;
    let range = cfg.orientation_range();
    let width = cfg.bin_width();
    let mut hist = vec![0.0; cells_y * cells_x * nb];
    for y in 0..cells_y * cs {
        for x in 0..cells_x * cs {
            let (yi, xi) = (y as isize, x as isize);
            let gx = plane.at(yi, xi + 1) - plane.at(yi, xi - 1);
            let gy = plane.at(yi + 1, xi) - plane.at(yi - 1, xi);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += range;
            }
            if angle >= range {
                angle -= range;
            }
            let pos = angle / width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(nb as isize) as usize;
            let b1 = (b0 + 1) % nb;
            let base = ((y / cs) * cells_x + x / cs) * nb;
            hist[base + b0] += mag * (1.0 - frac);
            hist[base + b1] += mag * frac;
        }
    }
    Ok((cells_y, cells_x, hist))
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// L2, clip at `clip`, L2 again.
pub fn l2_hys(v: &mut [f64], clip: Option<f64>) {
    l2_normalize(v);
    if let Some(c) = clip {
        v.iter_mut().for_each(|x| *x = x.min(c));
        l2_normalize(v);
    }
}

pub fn hog_from_plane(plane: &GrayPlane, cfg: &HogConfig) -> Result<HogDescriptor> {
    let (cells_y, cells_x, cell_hists) = cell_histograms(plane, cfg)?;
    let bs = cfg.block_size;
    if cells_y < bs || cells_x < bs {
        return Err(Error::InvalidShape(format!(
            "image {}x{} too small for {bs}x{bs} blocks of {} px cells",
            plane.height, plane.width, cfg.cell_size
        )));
    }
    let nb = cfg.n_bins;
    let blocks_y = (cells_y - bs) / cfg.block_stride + 1;
    let blocks_x = (cells_x - bs) / cfg.block_stride + 1;
    let block_len = bs * bs * nb;
    let mut blocks = Vec::with_capacity(blocks_y * blocks_x * block_len);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let start = blocks.len();
            for i in 0..bs {
                for j in 0..bs {
                    let (cy, cx) = (by * cfg.block_stride + i, bx * cfg.block_stride + j);
                    let c = (cy * cells_x + cx) * nb;
                    blocks.extend_from_slice(&cell_hists[c..c + nb]);
                }
            }
            l2_hys(&mut blocks[start..], cfg.clip);
        }
    }
    Ok(HogDescriptor {
        cells_y,
        cells_x,
        n_bins: nb,
        cell_hists,
        blocks_y,
        blocks_x,
        block_len,
        blocks,
    })
}

pub fn hog_descriptor(img: &RawImage, cfg: &HogConfig) -> Result<HogDescriptor> {
    hog_from_plane(&GrayPlane::from_image(img)?, cfg)
}

/// Visual-word vocabulary: k-means over the block vectors of all images.
pub fn build_vocab(per_image: &[Vec<Vec<f64>>], kcfg: &KMeansConfig) -> Result<Codebook> {
    let rows: Vec<&Vec<f64>> = per_image.iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::InvalidShape(
            "no block vectors to build a vocabulary".into(),
        ));
    }
    let x = FeatureMatrix::from_rows(&rows)?;
    kmeans::lloyd_fit(&x, kcfg, &mut Rng::new(kcfg.seed))
}

/// One L1-normalized visual-word histogram per image.
pub fn bow_encode(per_image: &[Vec<Vec<f64>>], vocab: &Codebook) -> Result<FeatureMatrix> {
    let k = vocab.k();
    let rows = per_image
        .par_iter()
        .map(|blocks| {
            if blocks.is_empty() {
                return Err(Error::InvalidShape("image has no blocks".into()));
            }
            let x = FeatureMatrix::from_rows(blocks)?;
            let words = kmeans::assign(&x, vocab)?;
            let mut hist = vec![0.0; k];
            for &w in words.labels() {
                hist[w] += 1.0;
            }
            let n = blocks.len() as f64;
            hist.iter_mut().for_each(|h| *h /= n);
            Ok(hist)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(&rows)
}
