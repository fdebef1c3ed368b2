//! Feature images, RoI max pooling and the `FIMG` binary file format.
//!
//! File layout (little-endian, no padding):
//!
//! ```text
//! "FIMG"  u32 version=1  u32 C  u32 H  u32 W  f32 stride  C*H*W f32
//! ```
//!
//! Values are channel-major, row-major within a channel.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::write_atomic;

pub const FEATURE_MAGIC: &[u8; 4] = b"FIMG";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 4;

/// A `C x H x W` grid of features with `stride` image pixels per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    channels: usize,
    height: usize,
    width: usize,
    stride: f32,
    data: Vec<f32>,
}

impl FeatureImage {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        stride: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch {
                what: "feature image dimensions must be positive",
                expected: 1,
                actual: 0,
            });
        }
        if !(stride.is_finite() && stride > 0.0) {
            return Err(Error::NonFinite("feature stride"));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature data length",
                expected,
                actual: data.len(),
            });
        }
        Ok(FeatureImage {
            channels,
            height,
            width,
            stride,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, stride: f32) -> Result<Self> {
        FeatureImage::new(
            channels,
            height,
            width,
            stride,
            vec![0.0; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> f64 {
        self.stride as f64
    }

    pub fn stride_f32(&self) -> f32 {
        self.stride
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Half-open rectangle of feature cells, `x0..x1` by `y0..y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn cols(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn rows(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Cells touched by `roi`: floor of the top-left corner, ceil of the
/// bottom-right, clamped to the grid, at least one cell per axis.
pub fn image_to_feature_rect(
    roi: &BBox,
    stride: f64,
    height: usize,
    width: usize,
) -> Result<CellRect> {
    let extent_x = width as f64 * stride;
    let extent_y = height as f64 * stride;
    if roi.x2() <= 0.0 || roi.y2() <= 0.0 || roi.x1() >= extent_x || roi.y1() >= extent_y {
        return Err(Error::OutOfBounds {
            x1: roi.x1(),
            y1: roi.y1(),
            x2: roi.x2(),
            y2: roi.y2(),
        });
    }
    let axis = |lo: f64, hi: f64, n: usize| {
        let start = ((lo / stride).floor().max(0.0) as usize).min(n - 1);
        let end = ((hi / stride).ceil().max(0.0) as usize).min(n);
        (start, end.max(start + 1))
    };
    let (x0, x1) = axis(roi.x1(), roi.x2(), width);
    let (y0, y1) = axis(roi.y1(), roi.y2(), height);
    Ok(CellRect { x0, y0, x1, y1 })
}

/// Max-pooled RoI descriptor of length `C * G * G`, laid out
/// `[c * G * G + i * G + j]` for bin row `i`, column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledVector(pub Vec<f32>);

impl PooledVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Cell span of bin `i` among `g` bins over `n` cells, widened to one cell
/// when rounding leaves it empty.
#[inline]
pub(crate) fn bin_span(i: usize, n: usize, g: usize) -> (usize, usize) {
    let lo = i * n / g;
    let hi = (i + 1) * n / g;
    if hi > lo {
        (lo, hi)
    } else {
        let c = lo.min(n - 1);
        (c, c + 1)
    }
}

pub fn roi_pool(feat: &FeatureImage, roi: &BBox, grid: usize) -> Result<PooledVector> {
    let mut out = vec![0.0; feat.channels * grid * grid];
    roi_pool_into(feat, roi, grid, &mut out)?;
    Ok(PooledVector(out))
}

/// [`roi_pool`] writing into a caller-provided buffer of length `C * G * G`.
pub fn roi_pool_into(
    feat: &FeatureImage,
    roi: &BBox,
    grid: usize,
    out: &mut [f32],
) -> Result<()> {
    if grid == 0 {
        return Err(Error::DimensionMismatch {
            what: "pooling grid",
            expected: 1,
            actual: 0,
        });
    }
    let len = feat.channels * grid * grid;
    if out.len() != len {
        return Err(Error::DimensionMismatch {
            what: "pooled buffer length",
            expected: len,
            actual: out.len(),
        });
    }
    let rect = image_to_feature_rect(roi, feat.stride(), feat.height, feat.width)?;
    let (rows, cols) = (rect.rows(), rect.cols());
    let x_spans: Vec<_> = (0..grid).map(|j| bin_span(j, cols, grid)).collect();
    let y_spans: Vec<_> = (0..grid).map(|i| bin_span(i, rows, grid)).collect();
    for c in 0..feat.channels {
        let plane = feat.channel(c);
        for (i, &(ya, yb)) in y_spans.iter().enumerate() {
            for (j, &(xa, xb)) in x_spans.iter().enumerate() {
                let mut best = f32::NEG_INFINITY;
                for y in rect.y0 + ya..rect.y0 + yb {
                    let row = &plane[y * feat.width..(y + 1) * feat.width];
                    for &v in &row[rect.x0 + xa..rect.x0 + xb] {
                        best = best.max(v);
                    }
                }
                out[c * grid * grid + i * grid + j] = best;
            }
        }
    }
    Ok(())
}

pub fn encode_features(feat: &FeatureImage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * feat.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    for dim in [feat.channels, feat.height, feat.width] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&feat.stride.to_le_bytes());
    for v in &feat.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureImage> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "bad magic, expected FIMG"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (c, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let stride = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if count.checked_mul(4) != Some(payload.len()) {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, header implies {c}x{h}x{w} f32 values",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureImage::new(c, h, w, stride, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_features(feat: &FeatureImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_features(feat))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}
