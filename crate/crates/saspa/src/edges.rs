//! Structural conditioning: shortest-side resizing and Canny edge maps.
//!
//! Edge maps are extracted at generation resolution so the conditioning
//! aligns pixel-for-pixel with the generated image. The detector is a
//! from-scratch Canny: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression over four quantized directions, then hysteresis.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing width used before gradient computation.
pub const GAUSSIAN_SIGMA: f64 = 1.4;

/// Shortest side of every conditioning image.
pub const TARGET_SHORTEST_SIDE: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Canny,
    /// Learned detector; provided by external backends only.
    Hed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub low: u8,
    pub high: u8,
    pub gaussian_sigma: f64,
}

/// Single-channel binary edge image; every value is 0 or 255.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: u32,
    pub height: u32,
    /// Row-major, one byte per pixel.
    pub data: Vec<u8>,
    pub source_image_id: String,
    pub detector: Detector,
    pub params: DetectorParams,
}

impl EdgeMap {
    pub fn is_empty_map(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions match data length")
    }

    /// Persist as `<source_image_id>.edge.png` inside `dir`.
    pub fn save_png(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(edge_png_name(&self.source_image_id));
        self.to_gray_image()
            .save(&path)
            .map_err(|e| Error::Stage {
                stage: "edges",
                source: Box::new(Error::Validation(format!(
                    "failed to write {}: {e}",
                    path.display()
                ))),
            })?;
        Ok(path)
    }
}

pub fn edge_png_name(source_image_id: &str) -> String {
    format!("{source_image_id}.edge.png")
}

/// Load a persisted edge map. The caller supplies the provenance the file
/// format cannot carry.
pub fn load_edge_png(
    path: impl AsRef<Path>,
    source_image_id: &str,
    detector: Detector,
    params: DetectorParams,
) -> Result<EdgeMap> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|e| Error::parse(path, e))?;
    let gray = match dynamic {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Validation(format!(
                "{} is not a single-channel 8-bit image (found {:?})",
                path.display(),
                other.color()
            )))
        }
    };
    if let Some(v) = gray.as_raw().iter().find(|v| **v != 0 && **v != 255) {
        return Err(Error::Validation(format!(
            "{} holds non-binary value {v}",
            path.display()
        )));
    }
    Ok(EdgeMap {
        width: gray.width(),
        height: gray.height(),
        data: gray.into_raw(),
        source_image_id: source_image_id.to_string(),
        detector,
        params,
    })
}

/// Dimensions after scaling so the shortest side equals `target`.
pub fn scaled_dimensions(width: u32, height: u32, target: u32) -> (u32, u32) {
    let short = width.min(height);
    if short == target {
        return (width, height);
    }
    let scale = |side: u32| ((side as f64) * (target as f64) / (short as f64)).round() as u32;
    if width <= height {
        (target, scale(height))
    } else {
        (scale(width), target)
    }
}

/// Bilinear resize so the shortest side equals `target`; no-op when it
/// already does.
pub fn resize_shortest_side(image: &DynamicImage, target: u32) -> Result<DynamicImage> {
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(Error::Validation(format!("zero-dimension image {w}x{h}")));
    }
    if target == 0 {
        return Err(Error::Validation("resize target must be positive".into()));
    }
    let (nw, nh) = scaled_dimensions(w, h, target);
    if (nw, nh) == (w, h) {
        return Ok(image.clone());
    }
    Ok(image.resize_exact(nw, nh, image::imageops::FilterType::Triangle))
}

/// Median-based threshold heuristic: (floor(0.66·median), floor(1.33·median))
/// clamped to the byte range.
pub fn auto_thresholds(image: &DynamicImage) -> Result<(u8, u8)> {
    let gray = image.to_luma8();
    if gray.width() == 0 || gray.height() == 0 {
        return Err(Error::Validation("zero-dimension image".into()));
    }
    let mut histogram = [0usize; 256];
    for v in gray.as_raw() {
        histogram[*v as usize] += 1;
    }
    let total = gray.as_raw().len();
    // lower median: smallest value covering half the pixels
    let mut seen = 0;
    let mut median = 0u8;
    for (value, count) in histogram.iter().enumerate() {
        seen += count;
        if seen * 2 > total {
            median = value as u8;
            break;
        }
    }
    let low = (0.66 * median as f64).floor().clamp(0.0, 255.0) as u8;
    let high = (1.33 * median as f64).floor().clamp(0.0, 255.0) as u8;
    Ok((low, high))
}

/// Gradient magnitudes on the 0..255 intensity scale plus per-pixel
/// quantized gradient direction. Shared by the detector and kept separable
/// so tests can cross-check intermediate stages.
struct GradientField {
    width: usize,
    height: usize,
    magnitude: Vec<f64>,
    /// 0 = horizontal gradient, 1 = 45 degrees, 2 = vertical, 3 = 135.
    direction: Vec<u8>,
}

fn gaussian_kernel(sigma: f64) -> [f64; 5] {
    let mut kernel = [0.0; 5];
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = kernel.iter().sum();
    kernel.map(|k| k / sum)
}

fn smooth(gray: &GrayImage, sigma: f64) -> Vec<f64> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let kernel = gaussian_kernel(sigma);
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;

    let raw = gray.as_raw();
    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = clamp_x(x as isize + i as isize - 2);
                acc += k * raw[y * w + sx] as f64;
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut smoothed = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sy = clamp_y(y as isize + i as isize - 2);
                acc += k * horizontal[sy * w + x];
            }
            smoothed[y * w + x] = acc;
        }
    }
    smoothed
}

fn gradients(smoothed: &[f64], w: usize, h: usize) -> GradientField {
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;
    let at = |x: isize, y: isize| smoothed[clamp_y(y) * w + clamp_x(x)];

    let mut magnitude = vec![0.0; w * h];
    let mut direction = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) - at(x - 1, y - 1)
                + 2.0 * (at(x + 1, y) - at(x - 1, y))
                + at(x + 1, y + 1) - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) - at(x - 1, y - 1)
                + 2.0 * (at(x, y + 1) - at(x, y - 1))
                + at(x + 1, y + 1) - at(x + 1, y - 1);
            // /4 brings a full-contrast step back to the 0..255 scale, so
            // thresholds read as intensities
            let index = (y as usize) * w + x as usize;
            magnitude[index] = (gx * gx + gy * gy).sqrt() / 4.0;

            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            direction[index] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    GradientField {
        width: w,
        height: h,
        magnitude,
        direction,
    }
}

/// Forward/backward neighbor offsets per quantized direction, y-down.
const NEIGHBOR: [(isize, isize); 4] = [(1, 0), (1, 1), (0, 1), (1, -1)];

fn non_max_suppress(field: &GradientField) -> Vec<f64> {
    let (w, h) = (field.width, field.height);
    let mag = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            field.magnitude[y as usize * w + x as usize]
        }
    };
    let mut kept = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let index = y as usize * w + x as usize;
            let m = field.magnitude[index];
            let (dx, dy) = NEIGHBOR[field.direction[index] as usize];
            // strict against the forward neighbor, lenient against the
            // backward one: an exact two-pixel tie keeps exactly one pixel
            if m > mag(x + dx, y + dy) && m >= mag(x - dx, y - dy) {
                kept[index] = m;
            }
        }
    }
    kept
}

fn hysteresis(suppressed: &[f64], w: usize, h: usize, low: u8, high: u8) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    let mut queue: Vec<usize> = Vec::new();
    for (index, &m) in suppressed.iter().enumerate() {
        if m > 0.0 && m >= high as f64 {
            out[index] = 255;
            queue.push(index);
        }
    }
    while let Some(index) = queue.pop() {
        let (x, y) = ((index % w) as isize, (index / w) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if out[n] == 0 && suppressed[n] > 0.0 && suppressed[n] >= low as f64 {
                    out[n] = 255;
                    queue.push(n);
                }
            }
        }
    }
    out
}

/// Run the full detector. `low`/`high` are hysteresis thresholds on the
/// 0..255 intensity scale.
pub fn extract_canny_edges(
    image: &DynamicImage,
    source_image_id: &str,
    low: u8,
    high: u8,
) -> Result<EdgeMap> {
    if low > high {
        return Err(Error::Validation(format!(
            "low threshold {low} exceeds high threshold {high}"
        )));
    }
    let gray = image.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Validation("zero-dimension image".into()));
    }
    let smoothed = smooth(&gray, GAUSSIAN_SIGMA);
    let field = gradients(&smoothed, w, h);
    let suppressed = non_max_suppress(&field);
    let data = hysteresis(&suppressed, w, h, low, high);
    Ok(EdgeMap {
        width: w as u32,
        height: h as u32,
        data,
        source_image_id: source_image_id.to_string(),
        detector: Detector::Canny,
        params: DetectorParams {
            low,
            high,
            gaussian_sigma: GAUSSIAN_SIGMA,
        },
    })
}
