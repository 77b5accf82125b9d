//! Occluded jigsaw puzzle samples.
//!
//! A square crop is cut into a `grid x grid` arrangement of cells, one tile
//! is taken from each cell at a random offset, up to `max_occluders` tiles are
//! swapped for tiles of a donor image, and the tiles are reordered by a
//! permutation drawn from a [`PermutationSet`]. The permutation index is the
//! classification target.
//!
//! Random draws for one sample happen in a fixed order: grayscale decision,
//! main crop, main tile offsets, occluder count, occluded cells, permutation
//! index, donor crop, donor tile offsets. Nothing drawn for the main image
//! depends on the donor.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{push_u32, read_file, u32_len, write_file, ByteReader, RawImage};
use crate::error::{Error, Result};
use crate::permset::PermutationSet;
use crate::rng::Rng;

pub const SHARD_MAGIC: [u8; 4] = *b"JPP1";

/// Tiles whose standard deviation falls below this are zeroed.
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuzzleConfig {
    pub grid: usize,
    pub crop_size: usize,
    pub tile_size: usize,
    pub max_occluders: usize,
    pub grayscale_prob: f64,
    pub seed: u64,
}

impl Default for PuzzleConfig {
    fn default() -> Self {
        PuzzleConfig {
            grid: 3,
            crop_size: 225,
            tile_size: 64,
            max_occluders: 2,
            grayscale_prob: 0.7,
            seed: 0,
        }
    }
}

impl PuzzleConfig {
    pub fn cell_size(&self) -> usize {
        self.crop_size / self.grid
    }

    pub fn n_tiles(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.tile_size == 0 {
            return Err(Error::InvalidConfig(
                "grid and tile_size must be >= 1".into(),
            ));
        }
        if self.n_tiles() > 32 {
            return Err(Error::InvalidConfig(
                "at most 32 tiles fit the occlusion mask".into(),
            ));
        }
        if self.tile_size > self.cell_size() {
            return Err(Error::InvalidConfig(format!(
                "tile_size {} exceeds cell size {}",
                self.tile_size,
                self.cell_size()
            )));
        }
        if !(0.0..=1.0).contains(&self.grayscale_prob) {
            return Err(Error::InvalidConfig(
                "grayscale_prob must lie in [0, 1]".into(),
            ));
        }
        if self.max_occluders >= self.n_tiles() {
            return Err(Error::InvalidConfig(
                "max_occluders must be < number of tiles".into(),
            ));
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PuzzleSample {
    /// `grid²` tiles in output slot order, each `tile_size² x channels`
    /// values laid out row-major with interleaved channels.
    pub tiles: Vec<Vec<f32>>,
    pub tile_size: usize,
    pub channels: usize,
    pub perm_index: usize,
    /// Bit `j` set when output slot `j` holds a donor tile.
    pub occ_mask: u32,
    pub n_occluders: usize,
    pub is_gray: bool,
    pub source_id: usize,
    pub donor_id: usize,
}

/// BT.601 luma replicated into all three channels.
pub fn to_grayscale(img: &RawImage) -> Result<RawImage> {
    if img.channels != 3 {
        return Err(Error::InvalidShape(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels
        )));
    }
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for px in img.pixels.chunks_exact(3) {
        let y = (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64).round();
        let y = y.clamp(0.0, 255.0) as u8;
        pixels.extend_from_slice(&[y, y, y]);
    }
    RawImage::new(img.height, img.width, 3, pixels)
}

/// Zero mean, unit (population) standard deviation over all entries.
pub fn normalize_tile(tile: &[f64]) -> Vec<f64> {
    let n = tile.len() as f64;
    let mean = tile.iter().sum::<f64>() / n;
    let var = tile.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_EPSILON {
        return vec![0.0; tile.len()];
    }
    tile.iter().map(|v| (v - mean) / std).collect()
}

fn expand_to_rgb(img: &RawImage) -> RawImage {
    if img.channels == 3 {
        return img.clone();
    }
    let pixels = img.pixels.iter().flat_map(|&v| [v, v, v]).collect();
    RawImage {
        channels: 3,
        pixels,
        ..*img
    }
}

/// Square region `(y0, x0, size)` of `img`, scaled to [0, 1].
fn cut(img: &RawImage, y0: usize, x0: usize, size: usize) -> Vec<f64> {
    let c = img.channels;
    let mut out = Vec::with_capacity(size * size * c);
    for y in y0..y0 + size {
        let start = (y * img.width + x0) * c;
        out.extend(
            img.pixels[start..start + size * c]
                .iter()
                .map(|&v| v as f64 / 255.0),
        );
    }
    out
}

struct CropDraw {
    y: usize,
    x: usize,
    offsets: Vec<(usize, usize)>,
}

fn draw_crop(rng: &mut Rng, img: &RawImage, cfg: &PuzzleConfig) -> CropDraw {
    let y = rng.below(img.height - cfg.crop_size + 1);
    let x = rng.below(img.width - cfg.crop_size + 1);
    let slack = cfg.cell_size() - cfg.tile_size + 1;
    let offsets = (0..cfg.n_tiles())
        .map(|_| (rng.below(slack), rng.below(slack)))
        .collect();
    CropDraw { y, x, offsets }
}

fn tile_at(img: &RawImage, crop: &CropDraw, cell: usize, cfg: &PuzzleConfig) -> Vec<f64> {
    let cs = cfg.cell_size();
    let (row, col) = (cell / cfg.grid, cell % cfg.grid);
    let (dy, dx) = crop.offsets[cell];
    cut(
        img,
        crop.y + row * cs + dy,
        crop.x + col * cs + dx,
        cfg.tile_size,
    )
}

/// Builds one puzzle from `main`, taking occluders from `donor`.
///
/// Grey inputs are widened to three channels when the other image is
/// colour; the sample has as many channels as the wider of the two.
pub fn make_puzzle(
    main: &RawImage,
    donor: &RawImage,
    ps: &PermutationSet,
    cfg: &PuzzleConfig,
    rng: &mut Rng,
) -> Result<PuzzleSample> {
    cfg.validate()?;
    if ps.is_empty() {
        return Err(Error::InvalidConfig("empty permutation set".into()));
    }
    if ps.n_tiles != cfg.n_tiles() {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_tiles(),
            found: ps.n_tiles,
        });
    }
    for img in [main, donor] {
        if img.height < cfg.crop_size || img.width < cfg.crop_size {
            return Err(Error::InvalidShape(format!(
                "image {}x{} smaller than crop {}",
                img.height, img.width, cfg.crop_size
            )));
        }
    }
    let (main, donor) = if main.channels != donor.channels {
        (expand_to_rgb(main), expand_to_rgb(donor))
    } else {
        (main.clone(), donor.clone())
    };

    let is_gray = rng.bernoulli(cfg.grayscale_prob);
    let main_crop = draw_crop(rng, &main, cfg);
    let n_occluders = rng.below(cfg.max_occluders + 1);
    let occluded = rng.choose_distinct(cfg.n_tiles(), n_occluders);
    let perm_index = rng.below(ps.len());
    let donor_crop = draw_crop(rng, &donor, cfg);

    let (main, donor) = if is_gray && main.channels == 3 {
        (to_grayscale(&main)?, to_grayscale(&donor)?)
    } else {
        (main, donor)
    };

    let cells: Vec<Vec<f64>> = (0..cfg.n_tiles())
        .map(|cell| {
            if occluded.contains(&cell) {
                tile_at(&donor, &donor_crop, cell, cfg)
            } else {
                tile_at(&main, &main_crop, cell, cfg)
            }
        })
        .collect();

    let perm = ps.get(perm_index);
    let mut occ_mask = 0u32;
    let mut tiles = Vec::with_capacity(cfg.n_tiles());
    for (slot, &cell) in perm.iter().enumerate() {
        if occluded.contains(&cell) {
            occ_mask |= 1 << slot;
        }
        tiles.push(
            normalize_tile(&cells[cell])
                .into_iter()
                .map(|v| v as f32)
                .collect(),
        );
    }

    Ok(PuzzleSample {
        tiles,
        tile_size: cfg.tile_size,
        channels: main.channels,
        perm_index,
        occ_mask,
        n_occluders,
        is_gray,
        source_id: 0,
        donor_id: 0,
    })
}

/// `count` samples from a pool of images.
///
/// Sample `i` uses its own stream `Rng::substream(cfg.seed, i)`, which first
/// picks the main image and then a different donor (when more than one image
/// exists), so the output does not depend on how work is scheduled.
pub fn generate_samples(
    images: &[RawImage],
    ps: &PermutationSet,
    cfg: &PuzzleConfig,
    count: usize,
) -> Result<Vec<PuzzleSample>> {
    generate_range(images, ps, cfg, 0..count)
}

/// Samples `range.start..range.end` of the sequence [`generate_samples`]
/// produces, so large runs can be processed in chunks.
pub fn generate_range(
    images: &[RawImage],
    ps: &PermutationSet,
    cfg: &PuzzleConfig,
    range: std::ops::Range<usize>,
) -> Result<Vec<PuzzleSample>> {
    if images.is_empty() {
        return Err(Error::InvalidConfig(
            "no images to build puzzles from".into(),
        ));
    }
    cfg.validate()?;
    range
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::substream(cfg.seed, i as u64);
            let n = images.len();
            let source = rng.below(n);
            let donor = if n > 1 {
                let d = rng.below(n - 1);
                if d >= source {
                    d + 1
                } else {
                    d
                }
            } else {
                source
            };
            let mut s = make_puzzle(&images[source], &images[donor], ps, cfg, &mut rng)?;
            s.source_id = source;
            s.donor_id = donor;
            Ok(s)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JPP1 shards
//
// magic, u32 grid, u32 tile_size, u32 channels, u32 count, then per sample:
// u32 perm_index, u32 occ_mask, u8 n_occluders, u8 is_gray, u32 source_id,
// u32 donor_id, grid² * tile_size² * channels f32 values.

const SAMPLE_HEADER_BYTES: usize = 18;

/// Shard header plus samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub grid: usize,
    pub tile_size: usize,
    pub channels: usize,
    pub samples: Vec<PuzzleSample>,
}

pub fn encode_shard(
    grid: usize,
    tile_size: usize,
    channels: usize,
    samples: &[PuzzleSample],
) -> Result<Vec<u8>> {
    let tile_len = tile_size * tile_size * channels;
    let mut out = Vec::new();
    out.extend_from_slice(&SHARD_MAGIC);
    push_u32(&mut out, u32_len(grid, "grid")?);
    push_u32(&mut out, u32_len(tile_size, "tile_size")?);
    push_u32(&mut out, u32_len(channels, "channels")?);
    push_u32(&mut out, u32_len(samples.len(), "count")?);
    for s in samples {
        if s.tiles.len() != grid * grid || s.tiles.iter().any(|t| t.len() != tile_len) {
            return Err(Error::InvalidShape(
                "sample does not match shard geometry".into(),
            ));
        }
        push_u32(&mut out, u32_len(s.perm_index, "perm_index")?);
        push_u32(&mut out, s.occ_mask);
        out.push(s.n_occluders as u8);
        out.push(s.is_gray as u8);
        push_u32(&mut out, u32_len(s.source_id, "source_id")?);
        push_u32(&mut out, u32_len(s.donor_id, "donor_id")?);
        for t in &s.tiles {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_shard(bytes: &[u8]) -> Result<Shard> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(&SHARD_MAGIC)?;
    let grid = r.u32()? as usize;
    let tile_size = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let count = r.u32()? as usize;
    let tile_len = tile_size * tile_size * channels;
    r.require(count * (SAMPLE_HEADER_BYTES + grid * grid * tile_len * 4))?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let perm_index = r.u32()? as usize;
        let occ_mask = r.u32()?;
        let n_occluders = r.u8()? as usize;
        let is_gray = r.u8()? != 0;
        let source_id = r.u32()? as usize;
        let donor_id = r.u32()? as usize;
        let tiles = (0..grid * grid)
            .map(|_| (0..tile_len).map(|_| r.f32()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        samples.push(PuzzleSample {
            tiles,
            tile_size,
            channels,
            perm_index,
            occ_mask,
            n_occluders,
            is_gray,
            source_id,
            donor_id,
        });
    }
    r.finish()?;
    Ok(Shard {
        grid,
        tile_size,
        channels,
        samples,
    })
}

/// Writes samples as a shard; geometry comes from the first sample (or the
/// config for an empty shard).
pub fn emit_shard(
    samples: &[PuzzleSample],
    cfg: &PuzzleConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let channels = samples.first().map_or(3, |s| s.channels);
    write_file(
        path.as_ref(),
        &encode_shard(cfg.grid, cfg.tile_size, channels, samples)?,
    )
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Shard> {
    decode_shard(&read_file(path.as_ref())?)
}
