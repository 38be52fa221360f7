//! Crop preprocessing ahead of registration.
//!
//! The chain is grayscale, CLAHE, Canny, then a Gaussian blur of the binary
//! edge map. Blurring widens the MI basin around the true shift; a binary map
//! alone gives a 2x2 joint histogram whose objective is flat almost
//! everywhere.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Crop, Pixels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub clahe_clip_limit: f64,
    /// Tile grid as (cols, rows).
    pub clahe_tiles: (usize, usize),
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub edge_blur_sigma: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clahe_clip_limit: 2.0,
            clahe_tiles: (8, 8),
            canny_sigma: 1.4,
            canny_low: 50.0,
            canny_high: 150.0,
            edge_blur_sigma: 1.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.clahe_clip_limit > 0.0) {
            return bad(format!("clahe_clip_limit must be positive, got {}", self.clahe_clip_limit));
        }
        if self.clahe_tiles.0 == 0 || self.clahe_tiles.1 == 0 {
            return bad(format!("clahe_tiles must be >= 1, got {:?}", self.clahe_tiles));
        }
        if !(self.canny_low > 0.0 && self.canny_low < self.canny_high) {
            return bad(format!(
                "need 0 < canny_low < canny_high, got {} / {}",
                self.canny_low, self.canny_high
            ));
        }
        if !(self.canny_sigma >= 0.0 && self.edge_blur_sigma >= 0.0) {
            return bad("sigmas must be non-negative".into());
        }
        Ok(())
    }
}

/// Real-valued image with a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

/// Luma conversion; grayscale input is returned unchanged.
pub fn to_grayscale(image: &Pixels) -> Pixels {
    if image.is_gray() {
        return image.clone();
    }
    let data = image
        .data()
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8)
        .collect();
    Pixels::gray(image.width(), image.height(), data).expect("same dimensions")
}

fn tile_bounds(len: usize, tiles: usize, i: usize) -> (usize, usize) {
    (i * len / tiles, (i + 1) * len / tiles)
}

/// Contrast-limited adaptive histogram equalization.
///
/// Pixels with `mask[i] == false` are ignored by the tile histograms and
/// come out as 0. Pass `None` to treat every pixel as valid.
pub fn clahe(image: &Pixels, mask: Option<&[bool]>, cfg: &PreprocessConfig) -> Result<Pixels> {
    let gray = to_grayscale(image);
    let (w, h) = (gray.width(), gray.height());
    let (tx, ty) = cfg.clahe_tiles;
    if tx == 0 || ty == 0 || w < tx || h < ty {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} image for a {tx}x{ty} tile grid"
        )));
    }
    let src = gray.data();
    let is_valid = |i: usize| mask.is_none_or(|m| m[i]);

    // One 256-entry mapping per tile.
    let mut luts = vec![[0f32; 256]; tx * ty];
    let mut centers_x = vec![0f64; tx];
    let mut centers_y = vec![0f64; ty];
    for (ti, c) in centers_x.iter_mut().enumerate() {
        let (a, b) = tile_bounds(w, tx, ti);
        *c = (a + b) as f64 * 0.5 - 0.5;
    }
    for (tj, c) in centers_y.iter_mut().enumerate() {
        let (a, b) = tile_bounds(h, ty, tj);
        *c = (a + b) as f64 * 0.5 - 0.5;
    }
    for tj in 0..ty {
        let (y0, y1) = tile_bounds(h, ty, tj);
        for ti in 0..tx {
            let (x0, x1) = tile_bounds(w, tx, ti);
            let mut hist = [0f64; 256];
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let i = y * w + x;
                    if is_valid(i) {
                        hist[src[i] as usize] += 1.0;
                        n += 1;
                    }
                }
            }
            let lut = &mut luts[tj * tx + ti];
            if n == 0 {
                for (v, l) in lut.iter_mut().enumerate() {
                    *l = v as f32;
                }
                continue;
            }
            let clip = (cfg.clahe_clip_limit * n as f64 / 256.0).max(1.0);
            let mut excess = 0.0;
            for c in hist.iter_mut() {
                if *c > clip {
                    excess += *c - clip;
                    *c = clip;
                }
            }
            let bonus = excess / 256.0;
            let mut cdf = 0.0;
            for (c, l) in hist.iter().zip(lut.iter_mut()) {
                cdf += c + bonus;
                *l = (255.0 * cdf / n as f64).floor().min(255.0) as f32;
            }
        }
    }

    // Bracketing tile index and weight along one axis.
    let bracket = |centers: &[f64], p: f64| -> (usize, usize, f32) {
        let last = centers.len() - 1;
        if p <= centers[0] {
            return (0, 0, 0.0);
        }
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let mut k = 0;
        while centers[k + 1] < p {
            k += 1;
        }
        let t = (p - centers[k]) / (centers[k + 1] - centers[k]);
        (k, k + 1, t as f32)
    };
    let xb: Vec<_> = (0..w).map(|x| bracket(&centers_x, x as f64)).collect();
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let (j0, j1, fy) = bracket(&centers_y, y as f64);
        for (x, &(i0, i1, fx)) in xb.iter().enumerate() {
            let i = y * w + x;
            if !is_valid(i) {
                continue;
            }
            let v = src[i] as usize;
            let a = luts[j0 * tx + i0][v] * (1.0 - fx) + luts[j0 * tx + i1][v] * fx;
            let b = luts[j1 * tx + i0][v] * (1.0 - fx) + luts[j1 * tx + i1][v] * fx;
            out[i] = (a * (1.0 - fy) + b * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    Pixels::gray(w, h, out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with replicated borders. `sigma == 0` is a copy.
pub fn gaussian_blur(values: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0f32; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0f32;
            for (t, kv) in k.iter().enumerate() {
                let xx = (x as isize + t as isize - r).clamp(0, width as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0f32; values.len()];
    for y in 0..height {
        for (t, kv) in k.iter().enumerate() {
            let yy = (y as isize + t as isize - r).clamp(0, height as isize - 1) as usize;
            let src = &tmp[yy * width..(yy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Sobel gradients `(gx, gy)` on a real image, replicated borders.
pub fn sobel(values: &[f32], width: usize, height: usize) -> (Vec<f32>, Vec<f32>) {
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, width as isize - 1) as usize;
        let yy = y.clamp(0, height as isize - 1) as usize;
        values[yy * width + xx]
    };
    let mut gx = vec![0f32; values.len()];
    let mut gy = vec![0f32; values.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let i = y as usize * width + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Canny edge detector producing a {0, 255} map.
pub fn canny(image: &Pixels, cfg: &PreprocessConfig) -> Result<Pixels> {
    let gray = to_grayscale(image);
    let (w, h) = (gray.width(), gray.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall(format!("canny needs at least 3x3, got {w}x{h}")));
    }
    let src: Vec<f32> = gray.data().iter().map(|v| *v as f32).collect();
    let blurred = gaussian_blur(&src, w, h, cfg.canny_sigma);
    let (gx, gy) = sobel(&blurred, w, h);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    // Non-maximum suppression along the quantized gradient direction. The
    // comparison is strict on one side only, so a plateau of two equal
    // maxima keeps exactly one pixel.
    let mut thin = vec![0f32; w * h];
    let tan22 = (std::f32::consts::PI / 8.0).tan();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let (before, after) = if ay <= ax * tan22 {
                (i - 1, i + 1)
            } else if ax <= ay * tan22 {
                (i - w, i + w)
            } else if (gx[i] > 0.0) == (gy[i] > 0.0) {
                (i - w - 1, i + w + 1)
            } else {
                (i - w + 1, i + w - 1)
            };
            if m > mag[before] && m >= mag[after] {
                thin[i] = m;
            }
        }
    }

    let low = cfg.canny_low as f32;
    let high = cfg.canny_high as f32;
    let mut out = vec![0u8; w * h];
    let mut queue = VecDeque::new();
    for (i, m) in thin.iter().enumerate() {
        if *m >= high {
            out[i] = 255;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0 && thin[j] >= low {
                    out[j] = 255;
                    queue.push_back(j);
                }
            }
        }
    }
    Pixels::gray(w, h, out)
}

/// Full preprocessing chain for one registration crop.
pub fn preprocess_for_registration(crop: &Crop, cfg: &PreprocessConfig) -> Result<Features> {
    let (w, h) = (crop.width(), crop.height());
    let equalized = clahe(&crop.pixels, Some(&crop.valid), cfg)?;
    let edges = canny(&equalized, cfg)?;
    let edge_f: Vec<f32> = edges.data().iter().map(|v| *v as f32).collect();
    let mut values = gaussian_blur(&edge_f, w, h, cfg.edge_blur_sigma);
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 255.0);
    }
    Ok(Features {
        width: w,
        height: h,
        values,
        valid: crop.valid.clone(),
    })
}
