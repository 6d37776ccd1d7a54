//! Path-signature features and their 7-channel raster.
//!
//! For two consecutive points `a`, `b` the truncated signature of the segment
//! is `(1, Δ, Δ⊗Δ)` with `Δ = b - a`, seven numbers in total. Rasterizing a
//! height-normalized sample writes each segment's vector into every pixel on
//! the segment's discrete line, giving a `(W, 128, 7)` tensor whose width
//! varies with the ink.

use std::path::Path;

use ndarray::{Array3, Axis};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pngio;
use crate::stroke::HandwritingSample;

/// Fixed raster height.
pub const RASTER_HEIGHT: usize = 128;

/// Raster widths are padded to a multiple of this.
pub const WIDTH_MULTIPLE: usize = 16;

/// Number of signature channels.
pub const PSF_CHANNELS: usize = 7;

/// Level 0, 1 and 2 signature terms of one segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsfVector {
    pub p0: f64,
    pub p1: [f64; 2],
    /// Row-major `p1 ⊗ p1`: `[xx, xy, yx, yy]`.
    pub p2: [f64; 4],
}

impl PsfVector {
    pub fn to_array(&self) -> [f64; PSF_CHANNELS] {
        [
            self.p0, self.p1[0], self.p1[1], self.p2[0], self.p2[1], self.p2[2], self.p2[3],
        ]
    }
}

/// Signature of the segment from `a` to `b`.
pub fn psf_pair(a: (f64, f64), b: (f64, f64)) -> PsfVector {
    let d = [b.0 - a.0, b.1 - a.1];
    PsfVector {
        p0: 1.0,
        p1: d,
        p2: [d[0] * d[0], d[0] * d[1], d[1] * d[0], d[1] * d[1]],
    }
}

/// Integer pixels on the segment between two pixel centres (Bresenham).
pub fn line_pixels(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// The `(W, 128, 7)` signature raster.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfRaster {
    data: Array3<f32>,
}

impl PsfRaster {
    /// All-zero raster of the given width.
    pub fn zeros(width: usize) -> Self {
        Self {
            data: Array3::zeros((width, RASTER_HEIGHT, PSF_CHANNELS)),
        }
    }

    pub fn from_array(data: Array3<f32>) -> Result<Self> {
        let (_, h, c) = data.dim();
        if h != RASTER_HEIGHT || c != PSF_CHANNELS {
            return Err(Error::Shape(format!(
                "raster must be (W, {RASTER_HEIGHT}, {PSF_CHANNELS}), got {:?}",
                data.dim()
            )));
        }
        Ok(Self { data })
    }

    pub fn width(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        RASTER_HEIGHT
    }

    /// Indexed `[x, y, channel]`.
    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// Channel-major copy `(7, 128, W)` in the model's scalar type.
    pub fn to_chw<F: Float>(&self) -> Array3<F> {
        let mut out = Array3::zeros((PSF_CHANNELS, RASTER_HEIGHT, self.width()));
        for ((x, y, c), &v) in self.data.indexed_iter() {
            out[[c, y, x]] = F::from(v).unwrap();
        }
        out
    }

    /// Writes one grayscale PNG per channel, `<stem>_ch<k>.png`, each scaled
    /// by its own maximum magnitude so mid-gray is zero.
    pub fn write_pngs(&self, dir: &Path, stem: &str) -> Result<()> {
        let (w, h) = (self.width(), RASTER_HEIGHT);
        for (k, chan) in self.data.axis_iter(Axis(2)).enumerate() {
            let max = chan.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let mut pixels = vec![0u8; w * h];
            for ((x, y), &v) in chan.indexed_iter() {
                let t = if max > 0.0 { v / max } else { 0.0 };
                pixels[y * w + x] = (127.5 + 127.5 * t).round().clamp(0.0, 255.0) as u8;
            }
            pngio::write_gray(&dir.join(format!("{stem}_ch{k}.png")), w as u32, h as u32, &pixels)?;
        }
        Ok(())
    }
}

fn padded_width(columns: usize) -> usize {
    columns.max(1).div_ceil(WIDTH_MULTIPLE) * WIDTH_MULTIPLE
}

/// Number of pixel columns the sample's ink spans once its left edge is at
/// column 0, before padding.
pub fn natural_width(sample: &HandwritingSample) -> usize {
    let b = sample.bbox();
    b.width().max(0.0).floor() as usize + 1
}

fn check_height(sample: &HandwritingSample) -> Result<()> {
    let h = sample.bbox().height();
    if (h - RASTER_HEIGHT as f64).abs() > 0.5 {
        return Err(Error::Contract(format!(
            "rasterization needs a sample scaled to height {RASTER_HEIGHT}, got {h}"
        )));
    }
    Ok(())
}

/// Rasterizes a height-normalized sample at its natural padded width.
///
/// Only pen-down pairs (consecutive points of one stroke) are drawn. Later
/// segments overwrite earlier ones where they cross.
pub fn rasterize_psf(sample: &HandwritingSample) -> Result<PsfRaster> {
    check_height(sample)?;
    rasterize_into(sample, padded_width(natural_width(sample)))
}

/// Like [`rasterize_psf`] but on a canvas of exactly `width` columns, which
/// must hold the ink.
pub fn rasterize_psf_width(sample: &HandwritingSample, width: usize) -> Result<PsfRaster> {
    check_height(sample)?;
    if width % WIDTH_MULTIPLE != 0 || width == 0 {
        return Err(Error::Contract(format!(
            "raster width {width} is not a positive multiple of {WIDTH_MULTIPLE}"
        )));
    }
    let need = natural_width(sample);
    if need > width {
        return Err(Error::Contract(format!(
            "ink spans {need} columns, canvas has {width}"
        )));
    }
    rasterize_into(sample, width)
}

fn rasterize_into(sample: &HandwritingSample, width: usize) -> Result<PsfRaster> {
    let b = sample.bbox();
    let mut raster = PsfRaster::zeros(width);
    let to_px = |x: f64, y: f64| {
        let px = ((x - b.min_x).floor() as i64).clamp(0, width as i64 - 1);
        let py = ((y - b.min_y).floor() as i64).clamp(0, RASTER_HEIGHT as i64 - 1);
        (px, py)
    };
    for stroke in sample.strokes() {
        for w in stroke.points().windows(2) {
            let v = psf_pair((w[0].x, w[0].y), (w[1].x, w[1].y)).to_array();
            let (x0, y0) = to_px(w[0].x, w[0].y);
            let (x1, y1) = to_px(w[1].x, w[1].y);
            for (x, y) in line_pixels(x0, y0, x1, y1) {
                let mut cell = raster.data.slice_mut(ndarray::s![x as usize, y as usize, ..]);
                for (dst, &src) in cell.iter_mut().zip(v.iter()) {
                    *dst = src as f32;
                }
            }
        }
    }
    Ok(raster)
}

/// Maps the ink mask to `{-1, 1}` and divides channels 1-6 by `scales`,
/// clipping to `[-1, 1]`.
pub fn normalize_psf(raster: &PsfRaster, scales: &[f64; 6]) -> Result<PsfRaster> {
    if let Some(bad) = scales.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "normalization constants must be positive, got {bad}"
        )));
    }
    let mut data = raster.data.clone();
    for mut cell in data.lanes_mut(Axis(2)) {
        cell[0] = 2.0 * cell[0] - 1.0;
        for k in 1..PSF_CHANNELS {
            cell[k] = (cell[k] as f64 / scales[k - 1]).clamp(-1.0, 1.0) as f32;
        }
    }
    Ok(PsfRaster { data })
}

/// Feature-extraction settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsfConfig {
    /// Arc-length resampling step in pixels after height normalization.
    pub step: f64,
    /// Divisors for channels 1-6. `None` derives `(s, s, s², s², s², s²)`
    /// from the step.
    pub scales: Option<[f64; 6]>,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            step: 2.0,
            scales: None,
        }
    }
}

impl PsfConfig {
    pub fn effective_scales(&self) -> [f64; 6] {
        self.scales.unwrap_or_else(|| {
            let s = self.step;
            [s, s, s * s, s * s, s * s, s * s]
        })
    }
}

/// Height-normalize, resample at `step`, and height-normalize again: the
/// resampled polyline can cut sharp extrema and lose a little height.
fn normalized_resampled(sample: &HandwritingSample, step: f64) -> Result<HandwritingSample> {
    let scaled = sample.scale_to_height(RASTER_HEIGHT as f64)?;
    let resampled = scaled.resample_uniform(step)?;
    resampled.scale_to_height(RASTER_HEIGHT as f64)
}

/// Scale to height 128, resample, rasterize, normalize.
pub fn psf_pipeline(sample: &HandwritingSample, config: &PsfConfig) -> Result<PsfRaster> {
    let ink = normalized_resampled(sample, config.step)?;
    let raster = rasterize_psf(&ink)?;
    normalize_psf(&raster, &config.effective_scales())
}

/// Allowed raster widths shared by real and generated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeBuckets(Vec<usize>);

impl Default for SizeBuckets {
    fn default() -> Self {
        Self(vec![128, 256, 384, 512, 768, 1024])
    }
}

impl SizeBuckets {
    pub fn new(mut widths: Vec<usize>) -> Result<Self> {
        widths.sort_unstable();
        widths.dedup();
        if widths.is_empty() || widths.iter().any(|&w| w == 0 || w % WIDTH_MULTIPLE != 0) {
            return Err(Error::InvalidConfig(format!(
                "width buckets must be non-empty positive multiples of {WIDTH_MULTIPLE}: {widths:?}"
            )));
        }
        Ok(Self(widths))
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, width: usize) -> bool {
        self.0.binary_search(&width).is_ok()
    }

    /// Smallest bucket holding `columns`, or the largest bucket.
    pub fn snap(&self, columns: usize) -> usize {
        self.0
            .iter()
            .copied()
            .find(|&w| w >= columns)
            .unwrap_or(*self.0.last().expect("non-empty"))
    }

    /// Bucket a sample lands in after height normalization.
    pub fn bucket_for(&self, sample: &HandwritingSample) -> Result<usize> {
        let scaled = sample.scale_to_height(RASTER_HEIGHT as f64)?;
        Ok(self.snap(natural_width(&scaled)))
    }
}

/// [`psf_pipeline`] onto a canvas of exactly `width` columns. Ink wider than
/// the canvas is compressed horizontally to fit; narrower ink is padded.
pub fn psf_pipeline_fit(
    sample: &HandwritingSample,
    config: &PsfConfig,
    width: usize,
) -> Result<PsfRaster> {
    let mut ink = normalized_resampled(sample, config.step)?;
    let w = ink.bbox().width();
    if w.floor() as usize + 1 > width {
        let sx = (width as f64 - 1.0) / w;
        ink = ink.map_coords(|x, y| (x * sx, y));
    }
    let raster = rasterize_psf_width(&ink, width)?;
    normalize_psf(&raster, &config.effective_scales())
}
