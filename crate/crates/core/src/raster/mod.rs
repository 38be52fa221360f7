//! Georeferenced raster model.
//!
//! Metric coordinates are y-up; pixel row 0 is the top row of the image.
//! Pixel `(col, row)` has its center at
//! `origin + (col * res, (height - 1 - row) * res)`, so the metric origin
//! maps to the bottom-left pixel `(0, height - 1)`.

mod frames;
mod io;

pub use frames::{load_manifest, FrameRecord};
pub use io::{
    decode_png, encode_png, load_raster, load_raster_auto, save_layer, save_png, sidecar_path_for,
    Sidecar,
};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ground sampling distance of both layers.
pub const DEFAULT_RESOLUTION: f64 = 0.15;

/// Sub-pixel distance below which a sample position is treated as integral.
const SNAP_EPS: f64 = 1e-6;

/// Identifies which metric frame a raster lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemId {
    Basemap,
    Aerial,
}

impl std::fmt::Display for SystemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SystemId::Basemap => "basemap",
            SystemId::Aerial => "aerial",
        })
    }
}

/// A metric point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// Continuous pixel position; integral values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub col: f64,
    pub row: f64,
    /// Whether the position falls on or between pixel centers of the layer.
    pub in_bounds: bool,
}

/// Interleaved 8-bit pixel buffer with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixels {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Pixels {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "pixel buffer must be non-empty, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Channel values of pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Pixel `(x, y)` expanded to RGB.
    pub fn rgb_at(&self, x: usize, y: usize) -> [u8; 3] {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            [p[0]; 3]
        } else {
            [p[0], p[1], p[2]]
        }
    }
}

/// A georeferenced raster, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterLayer {
    pixels: Pixels,
    resolution: f64,
    origin: Point,
    system_id: SystemId,
    capture_date: Option<NaiveDate>,
}

impl RasterLayer {
    pub fn new(pixels: Pixels, resolution: f64, origin: Point, system_id: SystemId) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::NonPositiveResolution(resolution));
        }
        Ok(Self {
            pixels,
            resolution,
            origin,
            system_id,
            capture_date: None,
        })
    }

    pub fn with_capture_date(mut self, date: Option<NaiveDate>) -> Self {
        self.capture_date = date;
        self
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    pub fn width_px(&self) -> usize {
        self.pixels.width
    }

    pub fn height_px(&self) -> usize {
        self.pixels.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn system_id(&self) -> SystemId {
        self.system_id
    }

    pub fn capture_date(&self) -> Option<NaiveDate> {
        self.capture_date
    }

    /// Metric extent `(width_px * res, height_px * res)`.
    pub fn extent_m(&self) -> (f64, f64) {
        (
            self.pixels.width as f64 * self.resolution,
            self.pixels.height as f64 * self.resolution,
        )
    }

    /// Metric position of the central pixel-center of the raster.
    pub fn center(&self) -> Point {
        self.origin.offset(
            (self.pixels.width as f64 - 1.0) * 0.5 * self.resolution,
            (self.pixels.height as f64 - 1.0) * 0.5 * self.resolution,
        )
    }

    /// Whether `p` lies inside the metric extent `[origin, origin + extent)`.
    pub fn contains(&self, p: Point) -> bool {
        let (w, h) = self.extent_m();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x < self.origin.x + w && p.y < self.origin.y + h
    }

    pub fn metric_to_pixel(&self, p: Point) -> PixelCoord {
        let col = (p.x - self.origin.x) / self.resolution;
        let row = self.pixels.height as f64 - 1.0 - (p.y - self.origin.y) / self.resolution;
        let in_bounds = col >= 0.0
            && row >= 0.0
            && col <= (self.pixels.width - 1) as f64
            && row <= (self.pixels.height - 1) as f64;
        PixelCoord { col, row, in_bounds }
    }

    pub fn pixel_to_metric(&self, col: f64, row: f64) -> Point {
        Point::new(
            self.origin.x + col * self.resolution,
            self.origin.y + (self.pixels.height as f64 - 1.0 - row) * self.resolution,
        )
    }

    /// Bilinear sample at a continuous pixel position, or `None` outside the
    /// pixel-center hull. Returns one value per channel.
    pub(crate) fn sample(&self, col: f64, row: f64, out: &mut [f64; 3]) -> bool {
        let col = snap(col);
        let row = snap(row);
        let w = self.pixels.width;
        let h = self.pixels.height;
        if !(col >= 0.0 && row >= 0.0 && col <= (w - 1) as f64 && row <= (h - 1) as f64) {
            return false;
        }
        let x0 = (col.floor() as usize).min(w.saturating_sub(2));
        let y0 = (row.floor() as usize).min(h.saturating_sub(2));
        let fx = col - x0 as f64;
        let fy = row - y0 as f64;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ch = self.pixels.channels;
        let d = &self.pixels.data;
        for (c, o) in out.iter_mut().enumerate().take(ch) {
            let at = |x: usize, y: usize| d[(y * w + x) * ch + c] as f64;
            let v = if fx == 0.0 && fy == 0.0 {
                at(x0, y0)
            } else {
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                top * (1.0 - fy) + bot * fy
            };
            *o = v;
        }
        true
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}

/// Pixel count along one crop side for a metric length.
pub fn side_px(length_m: f64, resolution: f64) -> usize {
    ((length_m / resolution).round() as usize).max(1)
}

/// A resampled window of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub pixels: Pixels,
    pub center_m: Point,
    pub size_m: (f64, f64),
    pub yaw_rad: f64,
    /// `false` where the sample fell outside the source raster.
    pub valid: Vec<bool>,
    pub source_system: SystemId,
    pub resolution: f64,
}

impl Crop {
    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Extracts a crop centered at `center` with metric side lengths `size_m`,
/// rotated by `yaw_rad` (counter-clockwise in the metric frame).
pub fn extract_crop(layer: &RasterLayer, center: Point, size_m: (f64, f64), yaw_rad: f64) -> Result<Crop> {
    if !(size_m.0 > 0.0 && size_m.1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "non-positive crop size {:?}",
            size_m
        )));
    }
    let w = side_px(size_m.0, layer.resolution);
    let h = side_px(size_m.1, layer.resolution);
    Ok(extract_crop_px(layer, center, w, h, yaw_rad))
}

/// Crop with explicit pixel dimensions.
pub fn extract_crop_px(layer: &RasterLayer, center: Point, width: usize, height: usize, yaw_rad: f64) -> Crop {
    resample_crop(layer, center, width, height, yaw_rad, layer.resolution)
}

/// Crop with explicit pixel dimensions and output pixel spacing `res`.
pub fn resample_crop(layer: &RasterLayer, center: Point, width: usize, height: usize, yaw_rad: f64, res: f64) -> Crop {
    let ch = layer.pixels.channels;
    let mut data = vec![0u8; width * height * ch];
    let mut valid = vec![false; width * height];
    let (sin, cos) = if yaw_rad == 0.0 { (0.0, 1.0) } else { yaw_rad.sin_cos() };
    let half_w = (width as f64 - 1.0) * 0.5;
    let half_h = (height as f64 - 1.0) * 0.5;
    let mut sample = [0.0f64; 3];
    for v in 0..height {
        let oy = (half_h - v as f64) * res;
        for u in 0..width {
            let ox = (u as f64 - half_w) * res;
            let p = Point::new(center.x + cos * ox - sin * oy, center.y + sin * ox + cos * oy);
            let pc = layer.metric_to_pixel(p);
            let idx = v * width + u;
            if layer.sample(pc.col, pc.row, &mut sample) {
                valid[idx] = true;
                for c in 0..ch {
                    data[idx * ch + c] = sample[c].round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Crop {
        pixels: Pixels {
            width,
            height,
            channels: ch,
            data,
        },
        center_m: center,
        size_m: (width as f64 * res, height as f64 * res),
        yaw_rad,
        valid,
        source_system: layer.system_id,
        resolution: res,
    }
}

/// Metric displacement of a pixel-space shift. Pixel y grows downwards, so a
/// positive `dy` moves the window towards smaller metric y.
pub fn shift_to_metric(shift_px: (i32, i32), resolution: f64) -> (f64, f64) {
    (shift_px.0 as f64 * resolution, -(shift_px.1 as f64) * resolution)
}

/// Axis-aligned crop whose window is displaced by `shift_px` pixels.
pub fn shift_view(
    layer: &RasterLayer,
    center: Point,
    size_m: (f64, f64),
    shift_px: (i32, i32),
    s_max_px: i32,
) -> Result<Crop> {
    if shift_px.0.abs() > s_max_px || shift_px.1.abs() > s_max_px {
        return Err(Error::ShiftOutOfWindow {
            dx: shift_px.0,
            dy: shift_px.1,
            s_max: s_max_px,
        });
    }
    let (dx, dy) = shift_to_metric(shift_px, layer.resolution);
    extract_crop(layer, center.offset(dx, dy), size_m, 0.0)
}

/// Blends a desaturated aerial crop over a base crop.
///
/// `aerial_saturation` of 1 keeps the aerial colors, 0 renders them as gray.
/// Invalid aerial pixels show the base crop only.
pub fn render_overlay(base: &Crop, aerial: &Crop, aerial_alpha: f64, aerial_saturation: f64) -> Result<Pixels> {
    if base.width() != aerial.width() || base.height() != aerial.height() {
        return Err(Error::DimensionMismatch(format!(
            "base {}x{} vs aerial {}x{}",
            base.width(),
            base.height(),
            aerial.width(),
            aerial.height()
        )));
    }
    for (name, v) in [("alpha", aerial_alpha), ("saturation", aerial_saturation)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")));
        }
    }
    let (w, h) = (base.width(), base.height());
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let b = base.pixels.rgb_at(x, y);
            if !aerial.valid[y * w + x] {
                out.extend_from_slice(&b);
                continue;
            }
            let a = aerial.pixels.rgb_at(x, y);
            let luma = 0.299 * a[0] as f64 + 0.587 * a[1] as f64 + 0.114 * a[2] as f64;
            for c in 0..3 {
                let desat = luma + aerial_saturation * (a[c] as f64 - luma);
                let v = (1.0 - aerial_alpha) * b[c] as f64 + aerial_alpha * desat;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Pixels::rgb(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> RasterLayer {
        let data = (0..w * h).map(|i| ((i * 37 + i / w * 11) % 251) as u8).collect();
        RasterLayer::new(Pixels::gray(w, h, data).unwrap(), 0.15, Point::new(10.0, 20.0), SystemId::Basemap).unwrap()
    }

    #[test]
    fn origin_maps_to_bottom_left() {
        let l = pattern(5, 7);
        let pc = l.metric_to_pixel(l.origin());
        assert_eq!((pc.col, pc.row), (0.0, 6.0));
        let pc = l.metric_to_pixel(l.origin().offset(0.15, 0.15));
        assert!((pc.col - 1.0).abs() < 1e-9 && (pc.row - 5.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_is_flagged() {
        let l = pattern(5, 5);
        assert!(!l.metric_to_pixel(l.origin().offset(-1.0, 0.0)).in_bounds);
        assert!(l.metric_to_pixel(l.center()).in_bounds);
    }

    #[test]
    fn identity_crop() {
        let l = pattern(9, 6);
        let (w, h) = l.extent_m();
        let c = extract_crop(&l, l.center(), (w, h), 0.0).unwrap();
        assert_eq!(c.pixels, *l.pixels());
        assert!(c.valid.iter().all(|v| *v));
    }

    #[test]
    fn half_outside_crop_masks_exactly_that_half() {
        let l = pattern(8, 8);
        // shift the window left by 4 pixels
        let c = extract_crop(&l, l.center().offset(-0.6, 0.0), (1.2, 1.2), 0.0).unwrap();
        for v in 0..8 {
            for u in 0..8 {
                let i = v * 8 + u;
                assert_eq!(c.valid[i], u >= 4, "u={u} v={v}");
                if !c.valid[i] {
                    assert_eq!(c.pixels.pixel(u, v)[0], 0);
                } else {
                    assert_eq!(c.pixels.pixel(u, v), l.pixels().pixel(u - 4, v));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_matches_index_remap() {
        let l = pattern(8, 8);
        let c = extract_crop(&l, l.center(), (1.2, 1.2), std::f64::consts::FRAC_PI_2).unwrap();
        // crop offset (ox, oy) maps to layer offset (-oy, ox); in pixel
        // indices that is layer(col = v, row = 7 - u).
        for v in 0..8 {
            for u in 0..8 {
                assert!(c.valid[v * 8 + u]);
                assert_eq!(c.pixels.pixel(u, v), l.pixels().pixel(v, 7 - u), "u={u} v={v}");
            }
        }
    }

    #[test]
    fn non_positive_size_rejected() {
        let l = pattern(4, 4);
        assert!(extract_crop(&l, l.center(), (0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn shift_view_matches_displaced_crop() {
        let l = pattern(40, 40);
        let center = l.center();
        let a = shift_view(&l, center, (3.0, 3.0), (2, -3), 8).unwrap();
        let b = extract_crop(&l, center.offset(0.30, 0.45), (3.0, 3.0), 0.0).unwrap();
        assert_eq!(a, b);
        let z = shift_view(&l, center, (3.0, 3.0), (0, 0), 8).unwrap();
        assert_eq!(z, extract_crop(&l, center, (3.0, 3.0), 0.0).unwrap());
        assert!(matches!(
            shift_view(&l, center, (3.0, 3.0), (9, 0), 8),
            Err(Error::ShiftOutOfWindow { .. })
        ));
    }

    #[test]
    fn inverse_shifts_restore_interior() {
        let l = pattern(40, 40);
        let center = l.center();
        let orig = extract_crop(&l, center, (3.0, 3.0), 0.0).unwrap();
        let shifted = shift_view(&l, center, (3.0, 3.0), (3, 0), 8).unwrap();
        let back = shift_view(&l, shifted.center_m, (3.0, 3.0), (-3, 0), 8).unwrap();
        assert_eq!(back.pixels, orig.pixels);
    }

    #[test]
    fn overlay_blend_identities() {
        let mk = |v: u8| {
            let l = RasterLayer::new(Pixels::filled(4, 4, 1, v).unwrap(), 0.15, Point::default(), SystemId::Aerial).unwrap();
            extract_crop(&l, l.center(), l.extent_m(), 0.0).unwrap()
        };
        let base = mk(100);
        let aerial = mk(200);
        let o = render_overlay(&base, &aerial, 0.0, 0.3).unwrap();
        assert!(o.data().iter().all(|v| *v == 100));
        let o = render_overlay(&base, &aerial, 1.0, 1.0).unwrap();
        assert!(o.data().iter().all(|v| *v == 200));
        let o = render_overlay(&base, &aerial, 0.5, 0.5).unwrap();
        assert!(o.data().iter().all(|v| *v == 150));
        assert!(render_overlay(&base, &aerial, 1.5, 0.5).is_err());
    }

    #[test]
    fn overlay_ignores_invalid_aerial_pixels() {
        let l = pattern(8, 8);
        let base = extract_crop(&l, l.center(), (1.2, 1.2), 0.0).unwrap();
        let mut aerial = base.clone();
        aerial.valid[0] = false;
        aerial.pixels.data[0] = 255;
        let o = render_overlay(&base, &aerial, 1.0, 1.0).unwrap();
        assert_eq!(o.rgb_at(0, 0), base.pixels.rgb_at(0, 0));
    }

    #[test]
    fn overlay_dimension_mismatch() {
        let l = pattern(8, 8);
        let a = extract_crop(&l, l.center(), (1.2, 1.2), 0.0).unwrap();
        let b = extract_crop(&l, l.center(), (0.6, 1.2), 0.0).unwrap();
        assert!(matches!(render_overlay(&a, &b, 0.5, 0.5), Err(Error::DimensionMismatch(_))));
    }
}
