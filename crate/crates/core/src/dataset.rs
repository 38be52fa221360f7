//! Offset-corrected, ego-centered aerial crops.
//!
//! Each frame's crop is cut from the aerial layer at the frame position plus
//! the grid offset there, optionally rotated into the vehicle heading. The
//! output directory holds `<frame_id>.png`, `<frame_id>.meta.json`,
//! `manifest.jsonl` (sorted by frame id) and `failures.jsonl`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::offsetgrid::{lookup, OffsetGrid};
use crate::raster::{decode_png, encode_png, resample_crop, side_px, FrameRecord, RasterLayer, DEFAULT_RESOLUTION};
use crate::registration::{worker_pool, FrameFailure};

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const FAILURES_NAME: &str = "failures.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropJobConfig {
    pub crop_size_m: (f64, f64),
    pub rotate_to_ego: bool,
    pub output_dir: PathBuf,
    pub resolution_m_per_px: f64,
}

impl Default for CropJobConfig {
    fn default() -> Self {
        Self {
            crop_size_m: (60.0, 30.0),
            rotate_to_ego: true,
            output_dir: PathBuf::from("crops"),
            resolution_m_per_px: DEFAULT_RESOLUTION,
        }
    }
}

impl CropJobConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_size_m.0 > 0.0 && self.crop_size_m.1 > 0.0) {
            return Err(Error::InvalidParameter(format!("non-positive crop size {:?}", self.crop_size_m)));
        }
        if !(self.resolution_m_per_px > 0.0) {
            return Err(Error::NonPositiveResolution(self.resolution_m_per_px));
        }
        Ok(())
    }

    pub fn dimensions_px(&self) -> (usize, usize) {
        (
            side_px(self.crop_size_m.0, self.resolution_m_per_px),
            side_px(self.crop_size_m.1, self.resolution_m_per_px),
        )
    }
}

/// One row of the output manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub frame_id: String,
    /// Image path relative to the manifest directory.
    pub path: PathBuf,
    pub center_m: [f64; 2],
    pub applied_offset_m: [f64; 2],
    pub yaw_rad: f64,
    pub size_m: [f64; 2],
}

/// Per-crop sidecar: the manifest row plus the sampling resolution and the
/// uncorrected frame position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropMeta {
    pub frame_id: String,
    pub center_m: [f64; 2],
    pub applied_offset_m: [f64; 2],
    pub yaw_rad: f64,
    pub size_m: [f64; 2],
    pub resolution_m_per_px: f64,
    pub frame_position_m: [f64; 2],
}

#[derive(Debug, Clone, Default)]
pub struct CropOutcome {
    pub entries: Vec<CropEntry>,
    pub failures: Vec<FrameFailure>,
}

fn crop_one(
    frame: &FrameRecord,
    aerial: &RasterLayer,
    grid: &OffsetGrid,
    cfg: &CropJobConfig,
) -> Result<(CropEntry, CropMeta, Vec<u8>)> {
    let p = frame.position();
    let (dx, dy) = lookup(grid, p)?;
    let center = p.offset(dx, dy);
    if !aerial.contains(center) {
        return Err(Error::FrameOutOfBounds {
            frame_id: frame.frame_id.clone(),
            x_m: center.x,
            y_m: center.y,
        });
    }
    let yaw = if cfg.rotate_to_ego { frame.yaw_rad } else { 0.0 };
    let (w, h) = cfg.dimensions_px();
    let crop = resample_crop(aerial, center, w, h, yaw, cfg.resolution_m_per_px);
    let png = encode_png(&crop.pixels)?;
    let size_m = [cfg.crop_size_m.0, cfg.crop_size_m.1];
    let entry = CropEntry {
        frame_id: frame.frame_id.clone(),
        path: PathBuf::from(format!("{}.png", frame.frame_id)),
        center_m: [center.x, center.y],
        applied_offset_m: [dx, dy],
        yaw_rad: yaw,
        size_m,
    };
    let meta = CropMeta {
        frame_id: frame.frame_id.clone(),
        center_m: entry.center_m,
        applied_offset_m: entry.applied_offset_m,
        yaw_rad: yaw,
        size_m,
        resolution_m_per_px: cfg.resolution_m_per_px,
        frame_position_m: [p.x, p.y],
    };
    Ok((entry, meta, png))
}

fn meta_path(dir: &Path, frame_id: &str) -> PathBuf {
    dir.join(format!("{frame_id}.meta.json"))
}

/// Cuts and writes one crop per frame. Frames that fail are recorded in
/// `failures.jsonl`; the call errors only when nothing succeeded.
pub fn generate_aligned_crops(
    frames: &[FrameRecord],
    aerial: &RasterLayer,
    grid: &OffsetGrid,
    cfg: &CropJobConfig,
    workers: usize,
) -> Result<CropOutcome> {
    cfg.validate()?;
    if !grid.dense {
        return Err(Error::NotDense);
    }
    if frames.is_empty() {
        return Err(Error::Empty("frame manifest".into()));
    }
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results: Vec<Result<CropEntry>> = worker_pool(workers)?.install(|| {
        frames
            .par_iter()
            .map(|f| {
                let (entry, meta, png) = crop_one(f, aerial, grid, cfg)?;
                let img = dir.join(&entry.path);
                std::fs::write(&img, png).map_err(|e| Error::io(&img, e))?;
                let side = meta_path(dir, &entry.frame_id);
                std::fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
                Ok(entry)
            })
            .collect()
    });
    let mut out = CropOutcome::default();
    for (frame, r) in frames.iter().zip(results) {
        match r {
            Ok(e) => out.entries.push(e),
            Err(e) => out.failures.push(FrameFailure {
                frame_id: frame.frame_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    out.entries.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    out.failures.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    write_jsonl(&dir.join(MANIFEST_NAME), &out.entries)?;
    write_jsonl(&dir.join(FAILURES_NAME), &out.failures)?;
    if out.entries.is_empty() {
        return Err(Error::AllFailed(out.failures.len()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingFile,
    DecodeFailure,
    Dimensions,
    Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub frame_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every crop listed in a manifest: the image exists and decodes, its
/// sidecar is complete and agrees with the manifest, and the pixel
/// dimensions follow from size and resolution.
pub fn verify_crop_set(manifest_path: &Path) -> Result<VerifyReport> {
    let entries: Vec<CropEntry> = read_jsonl(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut report = VerifyReport {
        checked: entries.len(),
        violations: Vec::new(),
    };
    for e in &entries {
        let mut flag = |kind, detail: String| {
            report.violations.push(Violation {
                frame_id: e.frame_id.clone(),
                kind,
                detail,
            })
        };
        let img = dir.join(&e.path);
        let meta = match std::fs::read(meta_path(dir, &e.frame_id)) {
            Err(err) => {
                flag(ViolationKind::Metadata, format!("sidecar unreadable: {err}"));
                None
            }
            Ok(bytes) => match serde_json::from_slice::<CropMeta>(&bytes) {
                Err(err) => {
                    flag(ViolationKind::Metadata, format!("sidecar incomplete: {err}"));
                    None
                }
                Ok(m) => {
                    let agrees = m.frame_id == e.frame_id
                        && m.center_m == e.center_m
                        && m.applied_offset_m == e.applied_offset_m
                        && m.yaw_rad == e.yaw_rad
                        && m.size_m == e.size_m
                        && m.resolution_m_per_px > 0.0;
                    if !agrees {
                        flag(ViolationKind::Metadata, "sidecar disagrees with manifest".into());
                    }
                    Some(m)
                }
            },
        };
        let bytes = match std::fs::read(&img) {
            Ok(b) => b,
            Err(err) => {
                flag(ViolationKind::MissingFile, format!("{}: {err}", img.display()));
                continue;
            }
        };
        let pixels = match decode_png(&bytes, &img) {
            Ok(p) => p,
            Err(err) => {
                flag(ViolationKind::DecodeFailure, err.to_string());
                continue;
            }
        };
        if let Some(m) = meta {
            let want = (side_px(m.size_m[0], m.resolution_m_per_px), side_px(m.size_m[1], m.resolution_m_per_px));
            if (pixels.width(), pixels.height()) != want {
                flag(
                    ViolationKind::Dimensions,
                    format!("{}x{} px, expected {}x{}", pixels.width(), pixels.height(), want.0, want.1),
                );
            }
        }
    }
    Ok(report)
}
