//! On-disk formats and the containers they hold.
//!
//! All binary formats are little-endian with a 4-byte magic:
//!
//! | magic       | contents                                                     |
//! |-------------|--------------------------------------------------------------|
//! | `FV1\0`     | feature matrix: u32 n_samples, u32 n_dims, f32 row-major      |
//! | `LBL1`      | labels: u32 n_samples, u32 n_classes, u32 labels              |
//! | `FMP1`      | feature maps: u32 n, c, h, w, f32 in (n, c, h, w) order       |
//!
//! Images are binary PNM only (P5 grey, P6 RGB, maxval 255). In memory every
//! real is `f64`; values are narrowed to `f32` only when written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURES_MAGIC: [u8; 4] = *b"FV1\0";
pub const LABELS_MAGIC: [u8; 4] = *b"LBL1";
pub const FEATURE_MAP_MAGIC: [u8; 4] = *b"FMP1";

/// Dense `n_samples x n_dims` matrix, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_samples: usize,
    n_dims: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_samples: usize, n_dims: usize, data: Vec<f64>) -> Result<Self> {
        if n_samples == 0 || n_dims == 0 {
            return Err(Error::InvalidShape(format!(
                "feature matrix must be at least 1x1, got {n_samples}x{n_dims}"
            )));
        }
        if data.len() != n_samples * n_dims {
            return Err(Error::DimensionMismatch {
                expected: n_samples * n_dims,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureMatrix {
            n_samples,
            n_dims,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_dims = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_dims);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_dims {
                return Err(Error::DimensionMismatch {
                    expected: n_dims,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(rows.len(), n_dims, data)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_dims)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.n_dims);
        for &i in idx {
            if i >= self.n_samples {
                return Err(Error::OutOfRange {
                    what: "row index",
                    value: i,
                    limit: self.n_samples,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(idx.len(), self.n_dims, data)
    }

    /// Each row scaled to unit Euclidean norm; zero rows stay zero.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.n_dims) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        FeatureMatrix { data, ..*self }
    }
}

/// Pre-pooling activations, `(n_samples, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub n_samples: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        n_samples: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if [n_samples, channels, height, width].contains(&0) {
            return Err(Error::InvalidShape(format!(
                "feature map dims must be >= 1, got {n_samples}x{channels}x{height}x{width}"
            )));
        }
        let expected = n_samples * channels * height * width;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(FeatureMap {
            n_samples,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.channels + c) * self.height + y) * self.width + x]
    }
}

/// Class or cluster index per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::OutOfRange {
                what: "label",
                value: bad,
                limit: n_classes,
            });
        }
        Ok(LabelVector { labels, n_classes })
    }

    /// Infers `n_classes` as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        LabelVector { labels, n_classes }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        LabelVector {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// 8-bit image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidShape(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: height * width * channels,
                found: pixels.len(),
            });
        }
        Ok(RawImage {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }
}

// ---------------------------------------------------------------------------
// byte-level helpers shared by every binary format in the crate

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Fails with `Truncated` unless `n` more bytes are available.
    pub(crate) fn require(&self, n: usize) -> Result<()> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        let extra = self.buf.len() - self.pos;
        if extra != 0 {
            return Err(Error::TrailingData { extra });
        }
        Ok(())
    }
}

pub(crate) fn u32_len(n: usize, what: &'static str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::OutOfRange {
        what,
        value: n,
        limit: u32::MAX as usize,
    })
}

pub(crate) fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Narrows to f32, rejecting values that are or become non-finite.
pub(crate) fn push_f32_checked(out: &mut Vec<u8>, v: f64, index: usize) -> Result<()> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::NonFinite { index });
    }
    out.extend_from_slice(&f.to_le_bytes());
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32_payload(r: &mut ByteReader<'_>, count: usize) -> Result<Vec<f64>> {
    r.require(count * 4)?;
    let mut data = Vec::with_capacity(count);
    for index in 0..count {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        data.push(v as f64);
    }
    Ok(data)
}

// ---------------------------------------------------------------------------
// feature matrices

pub fn encode_features(fm: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + fm.data.len() * 4);
    out.extend_from_slice(&FEATURES_MAGIC);
    push_u32(&mut out, u32_len(fm.n_samples, "n_samples")?);
    push_u32(&mut out, u32_len(fm.n_dims, "n_dims")?);
    for (i, &v) in fm.data.iter().enumerate() {
        push_f32_checked(&mut out, v, i)?;
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(&FEATURES_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let data = read_f32_payload(&mut r, n * d)?;
    r.finish()?;
    FeatureMatrix::new(n, d, data)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_features(&read_file(path.as_ref())?)
}

pub fn write_features(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_features(fm)?)
}

// ---------------------------------------------------------------------------
// labels

pub fn encode_labels(lv: &LabelVector) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + lv.labels.len() * 4);
    out.extend_from_slice(&LABELS_MAGIC);
    push_u32(&mut out, u32_len(lv.labels.len(), "n_samples")?);
    push_u32(&mut out, u32_len(lv.n_classes, "n_classes")?);
    for &l in &lv.labels {
        push_u32(&mut out, l as u32);
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelVector> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(&LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    r.require(n * 4)?;
    let labels = (0..n)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    LabelVector::new(labels, n_classes)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    decode_labels(&read_file(path.as_ref())?)
}

pub fn write_labels(lv: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_labels(lv)?)
}

// ---------------------------------------------------------------------------
// feature maps

pub fn encode_feature_map(fm: &FeatureMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + fm.data.len() * 4);
    out.extend_from_slice(&FEATURE_MAP_MAGIC);
    for (v, what) in [
        (fm.n_samples, "n_samples"),
        (fm.channels, "channels"),
        (fm.height, "height"),
        (fm.width, "width"),
    ] {
        push_u32(&mut out, u32_len(v, what)?);
    }
    for (i, &v) in fm.data.iter().enumerate() {
        push_f32_checked(&mut out, v, i)?;
    }
    Ok(out)
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(&FEATURE_MAP_MAGIC)?;
    let n = r.u32()? as usize;
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let data = read_f32_payload(&mut r, n * c * h * w)?;
    r.finish()?;
    FeatureMap::new(n, c, h, w, data)
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_feature_map(&read_file(path.as_ref())?)
}

pub fn write_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_feature_map(fm)?)
}

// ---------------------------------------------------------------------------
// PNM

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while !matches!(bytes.get(*pos), Some(b'\n') | None) {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => {
                return Err(Error::MalformedHeader(
                    "unexpected end of PNM header".into(),
                ))
            }
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader(
            "expected a number in PNM header".into(),
        ));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| Error::MalformedHeader("number out of range in PNM header".into()))
}

pub fn decode_pnm(bytes: &[u8]) -> Result<RawImage> {
    let magic = bytes.get(..2).ok_or(Error::Truncated {
        expected: 2,
        found: bytes.len(),
    })?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        [b'P', b'1'..=b'4'] | b"P7" => {
            return Err(Error::UnsupportedFormat(format!(
                "PNM variant {} (only binary P5/P6 are supported)",
                String::from_utf8_lossy(magic)
            )))
        }
        _ => {
            return Err(Error::BadMagic {
                expected: "P5|P6".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            })
        }
    };
    let mut pos = 2;
    let width = pnm_token(bytes, &mut pos)?;
    let height = pnm_token(bytes, &mut pos)?;
    let maxval = pnm_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PNM maxval {maxval} (only 255)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let need = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::Truncated {
            expected: pos + need,
            found: bytes.len(),
        });
    }
    RawImage::new(height, width, channels, raster[..need].to_vec())
}

pub fn encode_pnm(img: &RawImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_image_pnm(path: impl AsRef<Path>) -> Result<RawImage> {
    decode_pnm(&read_file(path.as_ref())?)
}

pub fn write_image_pnm(img: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pnm(img))
}

// ---------------------------------------------------------------------------
// pooling

/// Window `[floor(i*n/out), ceil((i+1)*n/out))` along one axis.
pub fn pool_window(i: usize, n: usize, out: usize) -> (usize, usize) {
    let start = i * n / out;
    let end = ((i + 1) * n).div_ceil(out);
    (start, end)
}

/// Adaptive spatial max pooling followed by flattening.
///
/// Output column for channel `c`, cell `(i, j)` is `(c * out_h + i) * out_w + j`.
pub fn adaptive_max_pool(fm: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMatrix> {
    if out_h == 0 || out_w == 0 || out_h > fm.height || out_w > fm.width {
        return Err(Error::InvalidShape(format!(
            "cannot pool {}x{} to {out_h}x{out_w}",
            fm.height, fm.width
        )));
    }
    let dims = fm.channels * out_h * out_w;
    let mut data = Vec::with_capacity(fm.n_samples * dims);
    for n in 0..fm.n_samples {
        for c in 0..fm.channels {
            for i in 0..out_h {
                let (y0, y1) = pool_window(i, fm.height, out_h);
                for j in 0..out_w {
                    let (x0, x1) = pool_window(j, fm.width, out_w);
                    let mut m = f64::NEG_INFINITY;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            m = m.max(fm.get(n, c, y, x));
                        }
                    }
                    data.push(m);
                }
            }
        }
    }
    FeatureMatrix::new(fm.n_samples, dims, data)
}

// ---------------------------------------------------------------------------
// dataset manifest

/// JSON description of a dataset. Relative paths are resolved against the
/// directory holding the manifest.
///
/// `inputs` optionally names a second feature file holding what a student
/// network sees; when absent the student consumes `features`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub images_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<PathBuf>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: Manifest = serde_json::from_slice(&read_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut m.features,
            &mut m.labels,
            &mut m.images_dir,
            &mut m.inputs,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_file(path.as_ref(), s.as_bytes())
    }

    pub fn load_features(&self) -> Result<FeatureMatrix> {
        read_features(self.require(&self.features, "features")?)
    }

    pub fn load_labels(&self) -> Result<Option<LabelVector>> {
        self.labels.as_ref().map(read_labels).transpose()
    }

    /// Student inputs, falling back to `features`.
    pub fn load_inputs(&self) -> Result<FeatureMatrix> {
        match &self.inputs {
            Some(p) => read_features(p),
            None => self.load_features(),
        }
    }

    /// `.pgm`/`.ppm`/`.pnm` files under `images_dir`, sorted by file name.
    pub fn image_paths(&self) -> Result<Vec<PathBuf>> {
        let dir = self.require(&self.images_dir, "images_dir")?;
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            if matches!(ext, "pgm" | "ppm" | "pnm") {
                paths.push(p);
            }
        }
        paths.sort();
        Ok(paths)
    }

    pub fn load_images(&self) -> Result<Vec<RawImage>> {
        self.image_paths()?.iter().map(read_image_pnm).collect()
    }

    fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("manifest has no `{name}` entry")))
    }
}
