//! Review state: estimates, effective labels, queue order and progress.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use aerialign_core::evaluation::{format_rate, success_rate};
use aerialign_core::raster::{encode_png, extract_crop, render_overlay, shift_view, FrameRecord, RasterLayer};
use aerialign_core::registration::{read_estimates, write_estimates, EstimateStatus, ShiftEstimate};
use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::labels::{effective_labels, read_labels, LabelLog, ReviewLabel, Verdict};
use crate::{ReviewError, ReviewResult};

/// Everything the service needs besides the label log.
#[derive(Debug, Clone)]
pub struct ReviewInputs {
    pub estimates: Vec<ShiftEstimate>,
    pub frames: Vec<FrameRecord>,
    pub basemap: RasterLayer,
    pub aerial: RasterLayer,
    /// Side length of the overlay crops.
    pub crop_size_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub remaining: usize,
    pub success_rate: Option<f64>,
    pub success_rate_text: Option<String>,
}

/// Estimate plus its current review state, as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    #[serde(flatten)]
    pub estimate: ShiftEstimate,
    pub x_m: f64,
    pub y_m: f64,
    /// Low overlap; reviewed first.
    pub priority: bool,
    pub overlay_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub frame_id: String,
    pub verdict: String,
    #[serde(default)]
    pub annotator: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub frame_id: String,
    pub verdict: Verdict,
    pub progress: Progress,
}

#[derive(Debug, Default)]
struct State {
    effective: HashMap<String, Verdict>,
}

pub struct ReviewSession {
    estimates: Vec<ShiftEstimate>,
    positions: Vec<(f64, f64)>,
    by_id: HashMap<String, usize>,
    /// Estimate indices in review priority order.
    order: Vec<usize>,
    basemap: RasterLayer,
    aerial: RasterLayer,
    crop_size_m: f64,
    writer: Mutex<LabelLog>,
    state: RwLock<State>,
}

/// Queue priority: low-overlap estimates first, then ascending MI, then id.
fn priority(a: &ShiftEstimate, b: &ShiftEstimate) -> Ordering {
    b.needs_priority_review()
        .cmp(&a.needs_priority_review())
        .then(a.mi_score.total_cmp(&b.mi_score))
        .then(a.frame_id.cmp(&b.frame_id))
}

impl ReviewSession {
    /// Builds a session and replays the label log at `labels_path`.
    pub fn open(inputs: ReviewInputs, labels_path: &Path) -> ReviewResult<Self> {
        if inputs.crop_size_m.is_nan() || inputs.crop_size_m <= 0.0 {
            return Err(ReviewError::BadParameter(format!("crop size {}", inputs.crop_size_m)));
        }
        let frame_pos: HashMap<&str, (f64, f64)> =
            inputs.frames.iter().map(|f| (f.frame_id.as_str(), (f.x_m, f.y_m))).collect();
        let mut by_id = HashMap::new();
        let mut positions = Vec::with_capacity(inputs.estimates.len());
        for (i, e) in inputs.estimates.iter().enumerate() {
            if by_id.insert(e.frame_id.clone(), i).is_some() {
                return Err(ReviewError::BadParameter(format!("duplicate estimate for {}", e.frame_id)));
            }
            let p = frame_pos
                .get(e.frame_id.as_str())
                .ok_or_else(|| ReviewError::BadParameter(format!("estimate {} has no frame in the manifest", e.frame_id)))?;
            positions.push(*p);
        }
        let mut order: Vec<usize> = (0..inputs.estimates.len()).collect();
        order.sort_by(|a, b| priority(&inputs.estimates[*a], &inputs.estimates[*b]));

        let (log, labels) = LabelLog::open(labels_path)?;
        let mut effective = effective_labels(&labels);
        let before = effective.len();
        effective.retain(|id, _| by_id.contains_key(id));
        if effective.len() != before {
            log::warn!("{} labelled frames are not in the estimates file", before - effective.len());
        }
        Ok(Self {
            estimates: inputs.estimates,
            positions,
            by_id,
            order,
            basemap: inputs.basemap,
            aerial: inputs.aerial,
            crop_size_m: inputs.crop_size_m,
            writer: Mutex::new(log),
            state: RwLock::new(State { effective }),
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn index(&self, frame_id: &str) -> ReviewResult<usize> {
        self.by_id
            .get(frame_id)
            .copied()
            .ok_or_else(|| ReviewError::UnknownFrame(frame_id.to_string()))
    }

    fn view(&self, i: usize, state: &State) -> FrameView {
        let mut estimate = self.estimates[i].clone();
        if let Some(v) = state.effective.get(&estimate.frame_id) {
            estimate.status = v.status();
        }
        FrameView {
            priority: estimate.needs_priority_review(),
            overlay_url: format!("/api/overlay/{}.png", estimate.frame_id),
            x_m: self.positions[i].0,
            y_m: self.positions[i].1,
            estimate,
        }
    }

    fn progress_of(&self, state: &State) -> Progress {
        let accepted = state.effective.values().filter(|v| **v == Verdict::Accepted).count();
        let labeled = state.effective.len();
        let statuses: Vec<EstimateStatus> = state.effective.values().map(|v| v.status()).collect();
        let rate = success_rate(&statuses).ok();
        Progress {
            total: self.estimates.len(),
            labeled,
            accepted,
            rejected: labeled - accepted,
            remaining: self.estimates.len() - labeled,
            success_rate: rate,
            success_rate_text: rate.map(format_rate),
        }
    }

    pub fn progress(&self) -> Progress {
        self.progress_of(&self.read())
    }

    /// All frames in queue priority order.
    pub fn frames(&self) -> Vec<FrameView> {
        let state = self.read();
        self.order.iter().map(|i| self.view(*i, &state)).collect()
    }

    pub fn frame(&self, frame_id: &str) -> ReviewResult<FrameView> {
        let i = self.index(frame_id)?;
        Ok(self.view(i, &self.read()))
    }

    /// Unlabeled frame ids in priority order.
    pub fn queue(&self) -> Vec<String> {
        let state = self.read();
        self.order
            .iter()
            .map(|i| &self.estimates[*i].frame_id)
            .filter(|id| !state.effective.contains_key(*id))
            .cloned()
            .collect()
    }

    /// Head of the queue, passing over `skip` unless nothing else is left.
    pub fn next(&self, skip: &HashSet<String>) -> Option<FrameView> {
        let state = self.read();
        let mut pending = self
            .order
            .iter()
            .filter(|i| !state.effective.contains_key(&self.estimates[**i].frame_id));
        let first = pending.clone().next().copied();
        pending
            .find(|i| !skip.contains(&self.estimates[**i].frame_id))
            .copied()
            .or(first)
            .map(|i| self.view(i, &state))
    }

    /// Validates, persists, then applies a label.
    pub fn submit(&self, req: LabelRequest) -> ReviewResult<LabelAck> {
        self.index(&req.frame_id)?;
        let verdict = Verdict::parse(&req.verdict).ok_or_else(|| ReviewError::BadVerdict(req.verdict.clone()))?;
        let label = ReviewLabel {
            frame_id: req.frame_id,
            verdict,
            annotator: req.annotator.unwrap_or_else(|| "anonymous".into()),
            labeled_at: Utc::now(),
            note: req.note.filter(|n| !n.is_empty()),
        };
        let log = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        log.append(&label)?;
        let mut state = self.state.write().unwrap_or_else(|p| p.into_inner());
        state.effective.insert(label.frame_id.clone(), verdict);
        let progress = self.progress_of(&state);
        Ok(LabelAck {
            frame_id: label.frame_id,
            verdict,
            progress,
        })
    }

    /// Base-map crop blended with the aerial crop displaced by the estimated
    /// shift, PNG-encoded.
    pub fn overlay_png(&self, frame_id: &str, alpha: f64, saturation: f64) -> ReviewResult<Vec<u8>> {
        let i = self.index(frame_id)?;
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&saturation) {
            return Err(ReviewError::BadParameter(format!(
                "alpha {alpha} and saturation {saturation} must lie in [0, 1]"
            )));
        }
        let e = &self.estimates[i];
        let center = aerialign_core::raster::Point::new(self.positions[i].0, self.positions[i].1);
        let size = (self.crop_size_m, self.crop_size_m);
        let base = extract_crop(&self.basemap, center, size, 0.0)?;
        let shift = (e.dx_px, e.dy_px);
        let aerial = shift_view(&self.aerial, center, size, shift, e.dx_px.abs().max(e.dy_px.abs()))?;
        Ok(encode_png(&render_overlay(&base, &aerial, alpha, saturation)?)?)
    }
}

/// Estimates whose effective verdict is accepted, marked accepted.
pub fn validated(labels: &[ReviewLabel], estimates: &[ShiftEstimate]) -> Vec<ShiftEstimate> {
    let effective = effective_labels(labels);
    estimates
        .iter()
        .filter(|e| effective.get(&e.frame_id) == Some(&Verdict::Accepted))
        .map(|e| ShiftEstimate {
            status: EstimateStatus::Accepted,
            ..e.clone()
        })
        .collect()
}

/// Writes the accepted subset of `estimates_path` to `out_path` and returns
/// its size.
pub fn export_validated(labels_path: &Path, estimates_path: &Path, out_path: &Path) -> ReviewResult<usize> {
    let labels = read_labels(labels_path)?;
    let estimates = read_estimates(estimates_path)?;
    let out = validated(&labels, &estimates);
    write_estimates(out_path, &out)?;
    Ok(out.len())
}
