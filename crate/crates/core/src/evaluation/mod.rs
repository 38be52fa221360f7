//! Alignment-quality metrics, review accounting, comparison reports and the
//! synthetic end-to-end experiment.

pub mod synthetic;

pub use synthetic::{
    degrade_to_basemap, generate_synthetic_scene, translated_pair, SyntheticConfig, SyntheticScene, WarpField,
};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::PreprocessConfig;
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::offsetgrid::{accumulate, interpolate, lookup, OffsetGrid};
use crate::raster::{load_raster_auto, save_layer, FrameRecord, Point};
use crate::registration::{batch_align, join_positions, sample_frames, EstimateStatus, RegistrationConfig, ShiftEstimate};

/// Frames per synthetic evaluation run.
pub const DEFAULT_EVAL_FRAMES: usize = 100;

/// Mean and max of the Euclidean norms of a set of offsets.
pub fn alde(offsets: &[(f64, f64)]) -> Result<(f64, f64)> {
    if offsets.is_empty() {
        return Err(Error::Empty("no offsets for ALDE".into()));
    }
    let norms: Vec<f64> = offsets.iter().map(|(x, y)| (x * x + y * y).sqrt()).collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let max = norms.iter().copied().fold(0.0, f64::max);
    Ok((mean, max))
}

/// One row of a dataset comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AldeReport {
    pub dataset_name: String,
    pub n_frames: usize,
    pub alde_mean_m: f64,
    pub alde_max_m: f64,
    pub resolution_m_per_px: f64,
    pub annotations_note: String,
}

impl AldeReport {
    pub fn from_offsets(
        dataset_name: impl Into<String>,
        offsets: &[(f64, f64)],
        resolution_m_per_px: f64,
        annotations_note: impl Into<String>,
    ) -> Result<Self> {
        let (alde_mean_m, alde_max_m) = alde(offsets)?;
        Ok(Self {
            dataset_name: dataset_name.into(),
            n_frames: offsets.len(),
            alde_mean_m,
            alde_max_m,
            resolution_m_per_px,
            annotations_note: annotations_note.into(),
        })
    }
}

/// Share of accepted verdicts among labeled frames. `Auto` entries are
/// unlabeled and ignored.
pub fn success_rate(labels: &[EstimateStatus]) -> Result<f64> {
    let accepted = labels.iter().filter(|s| **s == EstimateStatus::Accepted).count();
    let rejected = labels.iter().filter(|s| **s == EstimateStatus::Rejected).count();
    if accepted + rejected == 0 {
        return Err(Error::Empty("no labeled frames".into()));
    }
    Ok(accepted as f64 / (accepted + rejected) as f64)
}

/// Percentage with one decimal, e.g. `68.6%`.
pub fn format_rate(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

const BEST_MARK: char = '*';
/// Decimals shown in the text table; the CSV keeps full precision.
pub const REPORT_DECIMALS: usize = 2;
const TIE_EPS: f64 = 1e-12;

fn best_flags(values: &[f64]) -> Vec<bool> {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().map(|v| (v - best).abs() <= TIE_EPS).collect()
}

/// Renders the comparison table as aligned text and CSV, writing
/// `report.txt` and `report.csv` into `out_dir`. Lower is better in every
/// numeric column; best entries (ties included) carry a `*`.
pub fn comparison_report(reports: &[AldeReport], out_dir: &Path) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Empty("no report rows".into()));
    }
    let col = |f: fn(&AldeReport) -> f64| best_flags(&reports.iter().map(f).collect::<Vec<_>>());
    let best_mean = col(|r| r.alde_mean_m);
    let best_max = col(|r| r.alde_max_m);
    let best_res = col(|r| r.resolution_m_per_px);
    let mark = |v: f64, best: bool| {
        let text = format!("{v:.REPORT_DECIMALS$}");
        if best {
            format!("{text}{BEST_MARK}")
        } else {
            text
        }
    };

    let header = ["dataset", "ALDE mean [m]", "ALDE max [m]", "resolution [m/px]", "annotations"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            [
                r.dataset_name.clone(),
                mark(r.alde_mean_m, best_mean[i]),
                mark(r.alde_max_m, best_max[i]),
                mark(r.resolution_m_per_px, best_res[i]),
                r.annotations_note.clone(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut text = String::new();
    let line = |text: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(text, "{}", padded.join("  ").trim_end()).expect("string write");
    };
    line(&mut text, &header);
    line(
        &mut text,
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for row in &rows {
        line(&mut text, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    writeln!(text, "{BEST_MARK} best value in column").expect("string write");

    let mut csv = String::from("dataset,alde_mean_m,alde_max_m,resolution_m_per_px,annotations,best_mean,best_max,best_resolution\n");
    for (i, r) in reports.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.dataset_name),
            r.alde_mean_m,
            r.alde_max_m,
            r.resolution_m_per_px,
            csv_field(&r.annotations_note),
            best_mean[i],
            best_max[i],
            best_res[i]
        )
        .expect("string write");
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, body) in [("report.txt", &text), ("report.csv", &csv)] {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(text)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads report rows from a JSON-Lines file of [`AldeReport`].
pub fn read_report_rows(path: &Path) -> Result<Vec<AldeReport>> {
    read_jsonl(path)
}

/// Outcome of a synthetic end-to-end run.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    /// Norms of the true distortion at the sampled frames.
    pub before: AldeReport,
    /// Norms of corrected-minus-true offsets at the sampled frames.
    pub after: AldeReport,
    /// Frames chosen by the stratified sampler, in manifest order.
    pub sampled: Vec<FrameRecord>,
    pub estimates: Vec<ShiftEstimate>,
    pub grid: OffsetGrid,
}

/// Sample, align, accept everything, grid, interpolate, and compare the
/// corrected field with the truth at the sampled frames.
pub fn end_to_end_eval(
    scene: &SyntheticScene,
    pcfg: &PreprocessConfig,
    rcfg: &RegistrationConfig,
    n_frames: usize,
    seed: u64,
    workers: usize,
) -> Result<EndToEnd> {
    let cell = scene.truth_field.cell_m;
    let n = n_frames.min(scene.frames.len());
    let sampled = sample_frames(&scene.frames, n, cell, seed)?;
    let mut outcome = batch_align(&sampled, &scene.basemap, &scene.aerial, pcfg, rcfg, workers)?;
    for e in outcome.estimates.iter_mut() {
        e.review(EstimateStatus::Accepted)?;
    }
    let joined = join_positions(&outcome.estimates, &sampled)?;
    let template = OffsetGrid::for_layer(&scene.basemap, cell)?;
    let grid = interpolate(&accumulate(&joined, &template)?)?;

    let mut truth = Vec::with_capacity(sampled.len());
    let mut residual = Vec::with_capacity(sampled.len());
    for f in &sampled {
        let p = f.position();
        let t = lookup(&scene.truth_field, p)?;
        let g = lookup(&grid, p)?;
        truth.push(t);
        residual.push((g.0 - t.0, g.1 - t.1));
    }
    let res = scene.basemap.resolution();
    let name = format!("synthetic seed {}", scene.seed);
    Ok(EndToEnd {
        before: AldeReport::from_offsets(format!("{name} (before)"), &truth, res, "none")?,
        after: AldeReport::from_offsets(format!("{name} (after)"), &residual, res, "none")?,
        sampled,
        estimates: outcome.estimates,
        grid,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneInfo {
    seed: u64,
}

/// Writes a scene as `basemap.png`, `aerial.png` (with sidecars),
/// `truth_grid.json`, `frames.jsonl` and `scene.json`.
pub fn save_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_layer(&scene.basemap, &dir.join("basemap.png"))?;
    save_layer(&scene.aerial, &dir.join("aerial.png"))?;
    scene.truth_field.save(&dir.join("truth_grid.json"))?;
    write_jsonl(&dir.join("frames.jsonl"), &scene.frames)?;
    let info = dir.join("scene.json");
    std::fs::write(&info, serde_json::to_vec(&SceneInfo { seed: scene.seed })?).map_err(|e| Error::io(&info, e))
}

pub fn load_scene(dir: &Path) -> Result<SyntheticScene> {
    let info_path = dir.join("scene.json");
    let info: SceneInfo =
        serde_json::from_slice(&std::fs::read(&info_path).map_err(|e| Error::io(&info_path, e))?)?;
    let frames: Vec<FrameRecord> = crate::raster::load_manifest(&dir.join("frames.jsonl"))?;
    Ok(SyntheticScene {
        basemap: load_raster_auto(&dir.join("basemap.png"))?,
        aerial: load_raster_auto(&dir.join("aerial.png"))?,
        truth_field: OffsetGrid::load(&dir.join("truth_grid.json"))?,
        seed: info.seed,
        frames,
    })
}

/// Offsets of the truth field at the given positions.
pub fn truth_offsets(scene: &SyntheticScene, positions: &[Point]) -> Result<Vec<(f64, f64)>> {
    positions.iter().map(|p| lookup(&scene.truth_field, *p)).collect()
}
