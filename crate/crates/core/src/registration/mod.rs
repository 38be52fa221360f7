//! Per-frame misalignment estimation between base map and aerial layer.
//!
//! For each frame an axis-aligned base-map crop is compared against aerial
//! crops displaced by every candidate pixel shift in `[-s_max, s_max]^2`; the
//! shift with the highest mutual information of the preprocessed edge
//! features wins.

mod mi;
mod sampling;
pub mod search;

pub use mi::{bin_index, mi_from_joint, mutual_information};
pub use sampling::{bucket_of, sample_frames};
pub use search::{Candidate, ShiftSearch};

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{preprocess_for_registration, Features, PreprocessConfig};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::raster::{extract_crop_px, shift_to_metric, side_px, FrameRecord, RasterLayer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub s_max_px: i32,
    pub step_px: i32,
    pub crop_size_m: f64,
    pub mi_bins: usize,
    pub coarse_to_fine: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            s_max_px: 67,
            step_px: 1,
            crop_size_m: 100.0,
            mi_bins: 32,
            coarse_to_fine: true,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self, resolution: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.s_max_px < 1 {
            return bad(format!("s_max_px must be >= 1, got {}", self.s_max_px));
        }
        if self.step_px < 1 || self.step_px > self.s_max_px {
            return bad(format!("step_px must be in [1, s_max_px], got {}", self.step_px));
        }
        if !(2..=256).contains(&self.mi_bins) {
            return bad(format!("mi_bins must be in [2, 256], got {}", self.mi_bins));
        }
        if !(self.crop_size_m > 2.0 * self.s_max_px as f64 * resolution) {
            return bad(format!(
                "crop_size_m {} must exceed the shift window {} m",
                self.crop_size_m,
                2.0 * self.s_max_px as f64 * resolution
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateStatus {
    Auto,
    Accepted,
    Rejected,
}

/// Result of aligning one frame.
///
/// `dx_px` grows to the right and `dy_px` grows down the image rows;
/// `dx_m` / `dy_m` are the same displacement in the y-up metric frame, i.e.
/// the point of the aerial layer that matches base-map position `p` is
/// `p + (dx_m, dy_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    pub frame_id: String,
    pub dx_px: i32,
    pub dy_px: i32,
    pub dx_m: f64,
    pub dy_m: f64,
    pub mi_score: f64,
    pub valid_overlap_fraction: f64,
    pub status: EstimateStatus,
}

/// Overlap below which an estimate is queued for review first.
pub const LOW_OVERLAP: f64 = 0.5;

impl ShiftEstimate {
    pub fn needs_priority_review(&self) -> bool {
        self.valid_overlap_fraction < LOW_OVERLAP
    }

    /// Moves an automatic estimate to a reviewed state. Reviewed estimates
    /// keep their status.
    pub fn review(&mut self, verdict: EstimateStatus) -> Result<()> {
        match (self.status, verdict) {
            (EstimateStatus::Auto, EstimateStatus::Accepted | EstimateStatus::Rejected) => {
                self.status = verdict;
                Ok(())
            }
            (from, to) => Err(Error::InvalidParameter(format!(
                "status transition {from:?} -> {to:?} for frame {}",
                self.frame_id
            ))),
        }
    }
}

/// Radius in pixels over which the feature chain spreads information.
fn feature_reach(pcfg: &PreprocessConfig) -> usize {
    (3.0 * pcfg.canny_sigma).ceil() as usize + 1 + (3.0 * pcfg.edge_blur_sigma).ceil() as usize + 1
}

/// Clears validity of every pixel within Chebyshev distance `r` of an
/// invalid pixel, so edges induced by the zero fill never enter the MI.
fn erode_mask(valid: &mut [bool], width: usize, height: usize, r: usize) {
    if r == 0 || valid.iter().all(|v| *v) {
        return;
    }
    let pass = |src: &[bool], len: usize, stride: usize, count: usize, line_stride: usize| {
        let mut out = src.to_vec();
        let mut prefix = vec![0usize; len + 1];
        for line in 0..count {
            let base = line * line_stride;
            for k in 0..len {
                prefix[k + 1] = prefix[k] + (!src[base + k * stride]) as usize;
            }
            for k in 0..len {
                let lo = k.saturating_sub(r);
                let hi = (k + r + 1).min(len);
                if prefix[hi] - prefix[lo] > 0 {
                    out[base + k * stride] = false;
                }
            }
        }
        out
    };
    let rows = pass(valid, width, 1, height, width);
    let both = pass(&rows, height, width, width, 1);
    valid.copy_from_slice(&both);
}

/// Feature images used for one frame: the base crop and the aerial window
/// padded by `s_max` on every side.
pub struct FramePair {
    pub base: Features,
    pub aerial_window: Features,
}

pub fn prepare_frame(
    frame: &FrameRecord,
    basemap: &RasterLayer,
    aerial: &RasterLayer,
    pcfg: &PreprocessConfig,
    rcfg: &RegistrationConfig,
) -> Result<FramePair> {
    let res = basemap.resolution();
    if (res - aerial.resolution()).abs() > 1e-9 * res {
        return Err(Error::ResolutionMismatch(res, aerial.resolution()));
    }
    rcfg.validate(res)?;
    if !basemap.contains(frame.position()) {
        return Err(Error::FrameOutOfBounds {
            frame_id: frame.frame_id.clone(),
            x_m: frame.x_m,
            y_m: frame.y_m,
        });
    }
    let side = side_px(rcfg.crop_size_m, res);
    let s = rcfg.s_max_px as usize;
    let center = frame.position();
    let base_crop = extract_crop_px(basemap, center, side, side, 0.0);
    let aerial_crop = extract_crop_px(aerial, center, side + 2 * s, side + 2 * s, 0.0);
    for (crop, layer) in [(&base_crop, "basemap"), (&aerial_crop, "aerial")] {
        if crop.valid_count() == 0 {
            return Err(Error::CropInvalid {
                frame_id: frame.frame_id.clone(),
                layer: layer.into(),
            });
        }
    }
    let reach = feature_reach(pcfg);
    let mut base = preprocess_for_registration(&base_crop, pcfg)?;
    erode_mask(&mut base.valid, base.width, base.height, reach);
    let mut aerial_window = preprocess_for_registration(&aerial_crop, pcfg)?;
    erode_mask(&mut aerial_window.valid, aerial_window.width, aerial_window.height, reach);
    Ok(FramePair { base, aerial_window })
}

/// Estimates the shift of one frame.
pub fn estimate_shift(
    frame: &FrameRecord,
    basemap: &RasterLayer,
    aerial: &RasterLayer,
    pcfg: &PreprocessConfig,
    rcfg: &RegistrationConfig,
) -> Result<ShiftEstimate> {
    let pair = prepare_frame(frame, basemap, aerial, pcfg, rcfg)?;
    let search = ShiftSearch::new(&pair.base, &pair.aerial_window, rcfg.s_max_px, rcfg.mi_bins)?;
    let best = if rcfg.coarse_to_fine {
        search.coarse_to_fine(rcfg.step_px)
    } else {
        search.exhaustive(rcfg.step_px)
    };
    let best = best.ok_or_else(|| Error::CropInvalid {
        frame_id: frame.frame_id.clone(),
        layer: "joint".into(),
    })?;
    let (dx_m, dy_m) = shift_to_metric((best.dx, best.dy), basemap.resolution());
    Ok(ShiftEstimate {
        frame_id: frame.frame_id.clone(),
        dx_px: best.dx,
        dy_px: best.dy,
        dx_m,
        dy_m,
        mi_score: best.mi,
        valid_overlap_fraction: best.overlap as f64 / search.crop_pixels() as f64,
        status: EstimateStatus::Auto,
    })
}

/// A frame that could not be processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// Successful estimates in manifest order.
    pub estimates: Vec<ShiftEstimate>,
    pub failures: Vec<FrameFailure>,
}

/// Builds a rayon pool of `workers` threads (0 = all cores).
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Aligns every frame; individual failures do not abort the batch.
pub fn batch_align(
    frames: &[FrameRecord],
    basemap: &RasterLayer,
    aerial: &RasterLayer,
    pcfg: &PreprocessConfig,
    rcfg: &RegistrationConfig,
    workers: usize,
) -> Result<BatchOutcome> {
    if frames.is_empty() {
        return Err(Error::Empty("frame manifest".into()));
    }
    pcfg.validate()?;
    rcfg.validate(basemap.resolution())?;
    let results: Vec<Result<ShiftEstimate>> = worker_pool(workers)?.install(|| {
        frames
            .par_iter()
            .map(|f| estimate_shift(f, basemap, aerial, pcfg, rcfg))
            .collect()
    });
    let mut out = BatchOutcome::default();
    for (frame, r) in frames.iter().zip(results) {
        match r {
            Ok(e) => out.estimates.push(e),
            Err(e) => out.failures.push(FrameFailure {
                frame_id: frame.frame_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if out.estimates.is_empty() {
        return Err(Error::AllFailed(out.failures.len()));
    }
    Ok(out)
}

/// Failure log written alongside an estimates file.
pub fn failures_path_for(estimates_path: &Path) -> std::path::PathBuf {
    estimates_path.with_extension("failures.jsonl")
}

/// Runs [`batch_align`] and persists estimates and failures.
pub fn batch_align_to_file(
    frames: &[FrameRecord],
    basemap: &RasterLayer,
    aerial: &RasterLayer,
    pcfg: &PreprocessConfig,
    rcfg: &RegistrationConfig,
    workers: usize,
    out_path: &Path,
) -> Result<BatchOutcome> {
    let outcome = batch_align(frames, basemap, aerial, pcfg, rcfg, workers)?;
    write_estimates(out_path, &outcome.estimates)?;
    write_jsonl(&failures_path_for(out_path), &outcome.failures)?;
    Ok(outcome)
}

pub fn write_estimates(path: &Path, estimates: &[ShiftEstimate]) -> Result<()> {
    write_jsonl(path, estimates)
}

pub fn read_estimates(path: &Path) -> Result<Vec<ShiftEstimate>> {
    read_jsonl(path)
}

/// Pairs estimates with the positions of their frames.
pub fn join_positions<'a>(
    estimates: &'a [ShiftEstimate],
    frames: &[FrameRecord],
) -> Result<Vec<(&'a ShiftEstimate, crate::raster::Point)>> {
    let by_id: HashMap<&str, &FrameRecord> = frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    estimates
        .iter()
        .map(|e| {
            by_id
                .get(e.frame_id.as_str())
                .map(|f| (e, f.position()))
                .ok_or_else(|| Error::InvalidParameter(format!("estimate for unknown frame {}", e.frame_id)))
        })
        .collect()
}
