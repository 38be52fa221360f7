//! Procedural road scenes with a known distortion field.
//!
//! The aerial layer is a rendered top-down road scene. The base map is the
//! same scene resampled through a smooth offset field, converted to gray,
//! contrast-warped and overlaid with independent pixel noise. The field is
//! the ground truth: aerial position `p + field(p)` shows what the base map
//! shows at `p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offsetgrid::OffsetGrid;
use crate::raster::{FrameRecord, Pixels, Point, RasterLayer, SystemId, DEFAULT_RESOLUTION};

/// Largest allowed distortion: the default shift window of 67 px.
pub const MAX_MAGNITUDE_PX: f64 = 67.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub extent_m: (f64, f64),
    pub distortion_magnitude_m: f64,
    pub distortion_wavelength_m: f64,
    pub resolution_m_per_px: f64,
    pub cell_m: f64,
    /// Std-dev of the base-map pixel noise in 8-bit levels.
    pub noise_sigma: f64,
    /// Base-map contrast gain is drawn from `1 +/- contrast_jitter`.
    pub contrast_jitter: f64,
    /// Spacing of ego poses along each road.
    pub frame_spacing_m: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: (500.0, 500.0),
            distortion_magnitude_m: 3.0,
            distortion_wavelength_m: 800.0,
            resolution_m_per_px: DEFAULT_RESOLUTION,
            cell_m: 5.0,
            noise_sigma: 8.0,
            contrast_jitter: 0.2,
            frame_spacing_m: 2.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.extent_m.0 > 0.0 && self.extent_m.1 > 0.0) {
            return bad(format!("extent must be positive, got {:?}", self.extent_m));
        }
        if !(self.resolution_m_per_px > 0.0) {
            return Err(Error::NonPositiveResolution(self.resolution_m_per_px));
        }
        if !(self.cell_m > 0.0) {
            return bad(format!("cell_m must be positive, got {}", self.cell_m));
        }
        if !(self.distortion_wavelength_m > 2.0 * self.cell_m) {
            return bad(format!(
                "wavelength {} m must exceed twice the cell size {} m",
                self.distortion_wavelength_m, self.cell_m
            ));
        }
        let limit = MAX_MAGNITUDE_PX * self.resolution_m_per_px;
        if !(self.distortion_magnitude_m >= 0.0 && self.distortion_magnitude_m <= limit) {
            return bad(format!(
                "magnitude {} m outside [0, {limit}] m",
                self.distortion_magnitude_m
            ));
        }
        if !(self.noise_sigma >= 0.0 && (0.0..1.0).contains(&self.contrast_jitter) && self.frame_spacing_m > 0.0) {
            return bad("noise, contrast jitter or frame spacing out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Wave {
    kx: f64,
    ky: f64,
    phase_x: f64,
    phase_y: f64,
    amp_x: f64,
    amp_y: f64,
}

/// Band-limited offset field built from a few plane waves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpField {
    waves: Vec<Wave>,
    scale: f64,
}

impl WarpField {
    fn random(rng: &mut ChaCha8Rng, wavelength: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let lambda = wavelength * rng.random_range(1.0..1.5);
                let k = std::f64::consts::TAU / lambda;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase_x: rng.random_range(0.0..std::f64::consts::TAU),
                    phase_y: rng.random_range(0.0..std::f64::consts::TAU),
                    amp_x: rng.random_range(0.5..1.0),
                    amp_y: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        Self { waves, scale: 1.0 }
    }

    fn raw(&self, p: Point) -> (f64, f64) {
        let mut d = (0.0, 0.0);
        for w in &self.waves {
            let t = w.kx * p.x + w.ky * p.y;
            d.0 += w.amp_x * (t + w.phase_x).sin();
            d.1 += w.amp_y * (t + w.phase_y).sin();
        }
        d
    }

    /// Offset at `p` in meters.
    pub fn at(&self, p: Point) -> (f64, f64) {
        let (x, y) = self.raw(p);
        (x * self.scale, y * self.scale)
    }

    /// A constant field.
    pub fn constant(dx: f64, dy: f64) -> Self {
        Self {
            waves: vec![Wave {
                kx: 0.0,
                ky: 0.0,
                phase_x: std::f64::consts::FRAC_PI_2,
                phase_y: std::f64::consts::FRAC_PI_2,
                amp_x: dx,
                amp_y: dy,
            }],
            scale: 1.0,
        }
    }
}

/// A rendered scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub basemap: RasterLayer,
    pub aerial: RasterLayer,
    /// Distortion sampled at the cell centers of the base-map grid.
    pub truth_field: OffsetGrid,
    pub seed: u64,
    /// Ego poses along the rendered roads.
    pub frames: Vec<FrameRecord>,
}

// ---------------------------------------------------------------------------
// Rendering

struct Canvas {
    width: usize,
    height: usize,
    res: f64,
    origin: Point,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize, res: f64, origin: Point) -> Self {
        Self {
            width,
            height,
            res,
            origin,
            rgb: vec![0; width * height * 3],
        }
    }

    fn center_of(&self, col: usize, row: usize) -> Point {
        Point::new(
            self.origin.x + col as f64 * self.res,
            self.origin.y + (self.height - 1 - row) as f64 * self.res,
        )
    }

    /// Pixel index range covering a metric bounding box.
    fn span(&self, min: Point, max: Point) -> Option<(usize, usize, usize, usize)> {
        let c0 = ((min.x - self.origin.x) / self.res).floor().max(0.0);
        let c1 = ((max.x - self.origin.x) / self.res).ceil().min(self.width as f64 - 1.0);
        let r0 = (self.height as f64 - 1.0 - (max.y - self.origin.y) / self.res).floor().max(0.0);
        let r1 = (self.height as f64 - 1.0 - (min.y - self.origin.y) / self.res)
            .ceil()
            .min(self.height as f64 - 1.0);
        if c0 > c1 || r0 > r1 {
            return None;
        }
        Some((c0 as usize, c1 as usize, r0 as usize, r1 as usize))
    }

    fn put(&mut self, col: usize, row: usize, color: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.rgb[i..i + 3].copy_from_slice(&color);
    }

    /// Oriented rectangle around `center` with half sizes along its own axes.
    fn rect(&mut self, center: Point, half_len: f64, half_wid: f64, angle: f64, color: [u8; 3]) {
        let (s, c) = angle.sin_cos();
        let ext_x = (half_len * c).abs() + (half_wid * s).abs();
        let ext_y = (half_len * s).abs() + (half_wid * c).abs();
        let Some((c0, c1, r0, r1)) = self.span(center.offset(-ext_x, -ext_y), center.offset(ext_x, ext_y)) else {
            return;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let p = self.center_of(col, row);
                let (dx, dy) = (p.x - center.x, p.y - center.y);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if u.abs() <= half_len && v.abs() <= half_wid {
                    self.put(col, row, color);
                }
            }
        }
    }

    fn disc(&mut self, center: Point, radius: f64, color: [u8; 3]) {
        let Some((c0, c1, r0, r1)) = self.span(center.offset(-radius, -radius), center.offset(radius, radius)) else {
            return;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let p = self.center_of(col, row);
                if (p.x - center.x).hypot(p.y - center.y) <= radius {
                    self.put(col, row, color);
                }
            }
        }
    }
}

/// Smooth value noise on a square lattice.
struct ValueNoise {
    cols: usize,
    rows: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, extent: (f64, f64), spacing: f64) -> Self {
        let cols = (extent.0 / spacing).ceil() as usize + 2;
        let rows = (extent.1 / spacing).ceil() as usize + 2;
        let values = (0..cols * rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            cols,
            rows,
            spacing,
            values,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let gx = (x / self.spacing).clamp(0.0, (self.cols - 2) as f64);
        let gy = (y / self.spacing).clamp(0.0, (self.rows - 2) as f64);
        let (i, j) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (smooth(gx - i as f64), smooth(gy - j as f64));
        let v = |a: usize, b: usize| self.values[b * self.cols + a];
        let top = v(i, j) * (1.0 - fx) + v(i + 1, j) * fx;
        let bot = v(i, j + 1) * (1.0 - fx) + v(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

struct Road {
    start: Point,
    dir: (f64, f64),
    length: f64,
    width: f64,
}

impl Road {
    fn point(&self, t: f64, lateral: f64) -> Point {
        self.start
            .offset(self.dir.0 * t - self.dir.1 * lateral, self.dir.1 * t + self.dir.0 * lateral)
    }

    fn angle(&self) -> f64 {
        self.dir.1.atan2(self.dir.0)
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    let d = rng.random_range(-amount..=amount);
    base.map(|c| (c as i32 + d).clamp(0, 255) as u8)
}

fn road_network(rng: &mut ChaCha8Rng, extent: (f64, f64)) -> Vec<Road> {
    let mut roads = Vec::new();
    let mut add_parallel = |rng: &mut ChaCha8Rng, horizontal: bool| {
        let (along, across) = if horizontal { (extent.0, extent.1) } else { (extent.1, extent.0) };
        let mut pos = rng.random_range(25.0..70.0);
        while pos < across - 15.0 {
            let width = rng.random_range(7.0..14.0);
            let (start, dir) = if horizontal {
                (Point::new(-20.0, pos), (1.0, 0.0))
            } else {
                (Point::new(pos, -20.0), (0.0, 1.0))
            };
            roads.push(Road {
                start,
                dir,
                length: along + 40.0,
                width,
            });
            pos += rng.random_range(70.0..150.0);
        }
    };
    add_parallel(rng, true);
    add_parallel(rng, false);
    let diag = ((extent.0 * extent.1).sqrt() / 400.0).ceil() as usize;
    let reach = extent.0.hypot(extent.1);
    for _ in 0..diag {
        let angle: f64 = rng.random_range(0.3..1.2) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let through = Point::new(rng.random_range(0.0..extent.0), rng.random_range(0.0..extent.1));
        let dir = (angle.cos(), angle.sin());
        roads.push(Road {
            start: through.offset(-dir.0 * reach, -dir.1 * reach),
            dir,
            length: 2.0 * reach,
            width: rng.random_range(8.0..12.0),
        });
    }
    roads
}

/// Renders a textured road scene as an RGB aerial layer.
///
/// Returns the layer and the road centerlines used for ego poses.
fn render_scene(rng: &mut ChaCha8Rng, width: usize, height: usize, res: f64, origin: Point) -> (RasterLayer, Vec<Road>) {
    let extent = (width as f64 * res, height as f64 * res);
    let mut canvas = Canvas::new(width, height, res, origin);

    // ground
    let coarse = ValueNoise::new(rng, extent, 25.0);
    let fine = ValueNoise::new(rng, extent, 4.0);
    for row in 0..height {
        for col in 0..width {
            let p = canvas.center_of(col, row);
            let (lx, ly) = (p.x - origin.x, p.y - origin.y);
            let t = 30.0 * coarse.at(lx, ly) + 14.0 * fine.at(lx, ly);
            let g = [(95.0 + t) as u8, (108.0 + t) as u8, (80.0 + 0.8 * t) as u8];
            canvas.put(col, row, g);
        }
    }

    // buildings
    let n_buildings = (extent.0 * extent.1 / 450.0) as usize;
    for _ in 0..n_buildings {
        let c = origin.offset(rng.random_range(0.0..extent.0), rng.random_range(0.0..extent.1));
        let hl = rng.random_range(3.0..16.0);
        let hw = rng.random_range(3.0..12.0);
        let angle = if rng.random_bool(0.7) { 0.0 } else { rng.random_range(0.0..std::f64::consts::PI) };
        let shade = rng.random_range(110..235u8);
        let roof = [shade, jitter(rng, [shade; 3], 20)[1], jitter(rng, [shade; 3], 30)[2]];
        canvas.rect(c, hl + 0.6, hw + 0.6, angle, [40, 40, 45]);
        canvas.rect(c, hl, hw, angle, roof);
        if rng.random_bool(0.6) {
            canvas.rect(c, hl, 0.3, angle, jitter(rng, [shade / 2; 3], 10));
        }
        if rng.random_bool(0.4) {
            let (s, co) = angle.sin_cos();
            let off = rng.random_range(-hl * 0.5..hl * 0.5);
            canvas.rect(c.offset(off * co, off * s), 1.2, 1.2, angle, [70, 70, 80]);
        }
    }

    // trees
    for _ in 0..(extent.0 * extent.1 / 700.0) as usize {
        let c = origin.offset(rng.random_range(0.0..extent.0), rng.random_range(0.0..extent.1));
        let r = rng.random_range(1.5..4.5);
        canvas.disc(c, r, jitter(rng, [40, 75, 35], 12));
        canvas.disc(c.offset(r * 0.3, r * 0.3), r * 0.4, jitter(rng, [60, 100, 50], 10));
    }

    // roads
    let mut roads = road_network(rng, extent);
    for r in roads.iter_mut() {
        r.start = r.start.offset(origin.x, origin.y);
    }
    for road in &roads {
        let mid = road.point(road.length / 2.0, 0.0);
        let asphalt = jitter(rng, [72, 72, 78], 8);
        canvas.rect(mid, road.length / 2.0, road.width / 2.0 + 0.8, road.angle(), [120, 118, 110]);
        canvas.rect(mid, road.length / 2.0, road.width / 2.0, road.angle(), asphalt);
    }
    for road in &roads {
        let angle = road.angle();
        let white = [232, 232, 225];
        // solid edge lines
        for side in [-1.0, 1.0] {
            let lateral = side * (road.width / 2.0 - 0.5);
            canvas.rect(road.point(road.length / 2.0, lateral), road.length / 2.0, 0.12, angle, white);
        }
        // dashed center and lane lines with random dash pattern per line
        let lanes = if road.width >= 11.0 { vec![-road.width / 4.0, 0.0, road.width / 4.0] } else { vec![0.0] };
        for lateral in lanes {
            let dash = rng.random_range(2.0..4.0);
            let gap = rng.random_range(3.0..7.0);
            let mut t = rng.random_range(0.0..gap);
            while t < road.length {
                canvas.rect(road.point(t + dash / 2.0, lateral), dash / 2.0, 0.12, angle, white);
                t += dash + gap * rng.random_range(0.8..1.2);
            }
        }
        // vehicles
        let mut t = rng.random_range(0.0..30.0);
        while t < road.length {
            let lateral = rng.random_range(-road.width / 3.0..road.width / 3.0);
            let color = [rng.random_range(20..240), rng.random_range(20..240), rng.random_range(20..240)];
            canvas.rect(road.point(t, lateral), 2.3, 0.95, angle, color);
            canvas.rect(road.point(t + 0.4, lateral), 1.0, 0.75, angle, [30, 35, 45]);
            t += rng.random_range(8.0..50.0);
        }
        // crosswalks at random positions
        let mut t = rng.random_range(10.0..80.0);
        while t < road.length {
            let stripes = (road.width / 1.1) as usize;
            for k in 0..stripes {
                let lateral = -road.width / 2.0 + 0.55 + k as f64 * 1.1;
                canvas.rect(road.point(t, lateral), 2.0, 0.28, angle, white);
            }
            t += rng.random_range(60.0..160.0);
        }
    }

    // sensor noise
    let normal = Normal::new(0.0, 3.0).expect("valid sigma");
    for v in canvas.rgb.iter_mut() {
        *v = (*v as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
    let pixels = Pixels::rgb(width, height, canvas.rgb).expect("canvas size");
    let layer = RasterLayer::new(pixels, res, origin, SystemId::Aerial).expect("positive resolution");
    (layer, roads)
}

/// Resamples the aerial scene through `warp`, converting to a gray base map
/// with a contrast gain and pixel noise.
pub fn degrade_to_basemap(
    aerial: &RasterLayer,
    warp: &WarpField,
    gain: f64,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> RasterLayer {
    let gray = crate::imaging::to_grayscale(aerial.pixels());
    let gray_layer = RasterLayer::new(gray, aerial.resolution(), aerial.origin(), SystemId::Aerial).expect("same geometry");
    let (w, h) = (aerial.width_px(), aerial.height_px());
    let res = aerial.resolution();
    let mut data = vec![0u8; w * h];
    let normal = Normal::new(0.0, noise_sigma.max(1e-12)).expect("valid sigma");
    let mut sample = [0.0; 3];
    for row in 0..h {
        for col in 0..w {
            let p = aerial.pixel_to_metric(col as f64, row as f64);
            let (dx, dy) = warp.at(p);
            // integral pixel offsets are sampled exactly
            let src_col = col as f64 + dx / res;
            let src_row = row as f64 - dy / res;
            let v = if gray_layer.sample(src_col, src_row, &mut sample) { sample[0] } else { 0.0 };
            let noise = if noise_sigma > 0.0 { normal.sample(rng) } else { 0.0 };
            data[row * w + col] = (128.0 + gain * (v - 128.0) + noise).round().clamp(0.0, 255.0) as u8;
        }
    }
    RasterLayer::new(Pixels::gray(w, h, data).expect("size"), res, aerial.origin(), SystemId::Basemap)
        .expect("positive resolution")
}

/// An aerial layer and a base map that is the same scene translated by a
/// whole number of pixels, for registration experiments.
///
/// The returned base map satisfies `basemap(col, row) ~ aerial(col + sx, row + sy)`,
/// so the expected registration result is `shift_px`.
pub fn translated_pair(
    seed: u64,
    side_px: usize,
    resolution: f64,
    shift_px: (i32, i32),
    noise_sigma: f64,
    gain: f64,
) -> (RasterLayer, RasterLayer) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (aerial, _) = render_scene(&mut rng, side_px, side_px, resolution, Point::default());
    let warp = WarpField::constant(shift_px.0 as f64 * resolution, -(shift_px.1 as f64) * resolution);
    let basemap = degrade_to_basemap(&aerial, &warp, gain, noise_sigma, &mut rng);
    (basemap, aerial)
}

/// Generates a full scene with a smooth random distortion.
pub fn generate_synthetic_scene(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let res = cfg.resolution_m_per_px;
    let w = crate::raster::side_px(cfg.extent_m.0, res);
    let h = crate::raster::side_px(cfg.extent_m.1, res);
    let mut warp = WarpField::random(&mut rng, cfg.distortion_wavelength_m);
    let gain = 1.0 + rng.random_range(-cfg.contrast_jitter..=cfg.contrast_jitter);

    let (aerial, roads) = render_scene(&mut rng, w, h, res, Point::default());
    let mut truth = OffsetGrid::for_layer(&aerial, cfg.cell_m)?;

    // Normalize on a half-cell lattice so the largest sampled norm hits the
    // configured magnitude exactly.
    let mut peak = 0.0f64;
    let step = cfg.cell_m / 2.0;
    let (ex, ey) = aerial.extent_m();
    let mut y = 0.0;
    while y <= ey {
        let mut x = 0.0;
        while x <= ex {
            let (a, b) = warp.raw(Point::new(x, y));
            peak = peak.max(a.hypot(b));
            x += step;
        }
        y += step;
    }
    warp.scale = if peak > 0.0 { cfg.distortion_magnitude_m / peak } else { 0.0 };

    for row in 0..truth.rows {
        for col in 0..truth.cols {
            let (dx, dy) = warp.at(truth.cell_center(col, row));
            truth.set_observed(col, row, dx, dy);
        }
    }
    // floating rounding must never push a sample past the bound
    for i in 0..truth.dx.len() {
        let n = truth.dx[i].hypot(truth.dy[i]);
        if n > cfg.distortion_magnitude_m {
            let s = cfg.distortion_magnitude_m / n;
            truth.dx[i] *= s;
            truth.dy[i] *= s;
        }
    }
    truth.dense = true;

    let basemap = degrade_to_basemap(&aerial, &warp, gain, cfg.noise_sigma, &mut rng);

    let mut frames = Vec::new();
    for road in &roads {
        let lane = road.width / 4.0;
        let mut t = 0.0;
        while t < road.length {
            let forward = frames.len() % 2 == 0;
            let p = road.point(t, if forward { -lane } else { lane });
            if basemap.contains(p) {
                let yaw = road.angle() + if forward { 0.0 } else { std::f64::consts::PI };
                let index = frames.len() as u64 + 1;
                frames.push(FrameRecord {
                    frame_id: format!("f{index:06}"),
                    index,
                    x_m: p.x,
                    y_m: p.y,
                    yaw_rad: yaw,
                    timestamp: Some(index as i64 * 500_000),
                });
            }
            t += cfg.frame_spacing_m;
        }
    }

    Ok(SyntheticScene {
        basemap,
        aerial,
        truth_field: truth,
        seed: cfg.seed,
        frames,
    })
}
