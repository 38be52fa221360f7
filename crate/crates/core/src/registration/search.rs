//! Discrete translation search maximizing mutual information.

use std::cmp::Ordering;

use super::mi::{bin_index, mi_from_joint};
use crate::error::{Error, Result};
use crate::imaging::Features;

/// Lattice spacing of the coarse pass.
pub const COARSE_STRIDE: i32 = 4;
/// Half-width of the stride-1 refinement around a coarse optimum.
pub const REFINE_RADIUS: i32 = 4;
/// Number of best coarse positions refined at full resolution.
pub const REFINE_CANDIDATES: usize = 3;
/// The coarse pass scores every `COARSE_SUBSAMPLE`-th pixel per axis.
pub const COARSE_SUBSAMPLE: usize = 2;

/// One evaluated window position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub dx: i32,
    pub dy: i32,
    pub mi: f64,
    /// Jointly valid pixels at this position.
    pub overlap: usize,
}

impl Candidate {
    fn norm2(&self) -> i64 {
        (self.dx as i64).pow(2) + (self.dy as i64).pow(2)
    }

    /// Ranking used by the search: higher MI first, then the shorter shift,
    /// then lexicographically smaller `(dx, dy)`.
    pub fn rank(&self, other: &Candidate) -> Ordering {
        other
            .mi
            .partial_cmp(&self.mi)
            .unwrap_or(Ordering::Equal)
            .then(self.norm2().cmp(&other.norm2()))
            .then((self.dx, self.dy).cmp(&(other.dx, other.dy)))
    }
}

/// Base crop features and the aerial window around them, pre-binned.
///
/// The aerial window is `2 * s_max` pixels larger than the base crop on each
/// axis; shift `(dx, dy)` selects the sub-window whose top-left corner is
/// `(s_max + dx, s_max + dy)`.
pub struct ShiftSearch {
    bins: usize,
    s_max: i32,
    crop_w: usize,
    crop_h: usize,
    win_w: usize,
    /// Row offsets into the `(bins + 1)^2` table; the last bin marks invalid.
    base: Vec<u32>,
    aerial: Vec<u32>,
}

impl ShiftSearch {
    pub fn new(base: &Features, aerial_window: &Features, s_max: i32, bins: usize) -> Result<Self> {
        if !(2..=256).contains(&bins) {
            return Err(Error::InvalidParameter(format!("mi_bins must be in [2, 256], got {bins}")));
        }
        let s = s_max as usize;
        if aerial_window.width != base.width + 2 * s || aerial_window.height != base.height + 2 * s {
            return Err(Error::DimensionMismatch(format!(
                "aerial window {}x{} for base {}x{} and s_max {s_max}",
                aerial_window.width, aerial_window.height, base.width, base.height
            )));
        }
        let stride = (bins + 1) as u32;
        let base_bins = base
            .values
            .iter()
            .zip(&base.valid)
            .map(|(v, ok)| if *ok { bin_index(*v, bins) as u32 } else { bins as u32 } * stride)
            .collect();
        let aerial_bins = aerial_window
            .values
            .iter()
            .zip(&aerial_window.valid)
            .map(|(v, ok)| if *ok { bin_index(*v, bins) as u32 } else { bins as u32 })
            .collect();
        Ok(Self {
            bins,
            s_max,
            crop_w: base.width,
            crop_h: base.height,
            win_w: aerial_window.width,
            base: base_bins,
            aerial: aerial_bins,
        })
    }

    pub fn s_max(&self) -> i32 {
        self.s_max
    }

    pub fn crop_pixels(&self) -> usize {
        self.crop_w * self.crop_h
    }

    /// MI at one shift; `None` when the position has no jointly valid pixel.
    pub fn score(&self, dx: i32, dy: i32) -> Option<Candidate> {
        self.score_sampled(dx, dy, 1)
    }

    /// MI over every `sub`-th row and column of the crop.
    fn score_sampled(&self, dx: i32, dy: i32, sub: usize) -> Option<Candidate> {
        debug_assert!(dx.abs() <= self.s_max && dy.abs() <= self.s_max);
        let side = self.bins + 1;
        let mut table = vec![0u32; side * side];
        let x0 = (self.s_max + dx) as usize;
        let y0 = (self.s_max + dy) as usize;
        for v in (0..self.crop_h).step_by(sub) {
            let brow = &self.base[v * self.crop_w..(v + 1) * self.crop_w];
            let start = (y0 + v) * self.win_w + x0;
            let arow = &self.aerial[start..start + self.crop_w];
            if sub == 1 {
                for (b, a) in brow.iter().zip(arow) {
                    table[(b + a) as usize] += 1;
                }
            } else {
                for (b, a) in brow.iter().step_by(sub).zip(arow.iter().step_by(sub)) {
                    table[(b + a) as usize] += 1;
                }
            }
        }
        let mut joint = vec![0u32; self.bins * self.bins];
        let mut overlap = 0usize;
        for r in 0..self.bins {
            let src = &table[r * side..r * side + self.bins];
            joint[r * self.bins..(r + 1) * self.bins].copy_from_slice(src);
            overlap += src.iter().map(|c| *c as usize).sum::<usize>();
        }
        if overlap == 0 {
            return None;
        }
        Some(Candidate {
            dx,
            dy,
            mi: mi_from_joint(&joint, self.bins),
            overlap,
        })
    }

    fn best_of(&self, positions: impl IntoIterator<Item = (i32, i32)>, sub: usize) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = positions
            .into_iter()
            .filter_map(|(dx, dy)| self.score_sampled(dx, dy, sub))
            .collect();
        out.sort_by(|a, b| a.rank(b));
        out
    }

    /// Lattice of shifts with spacing `step` anchored at zero.
    fn lattice(&self, step: i32) -> Vec<(i32, i32)> {
        let k = self.s_max / step;
        let axis: Vec<i32> = (-k..=k).map(|i| i * step).collect();
        axis.iter().flat_map(|y| axis.iter().map(move |x| (*x, *y))).collect()
    }

    /// Evaluates every lattice position with spacing `step`.
    pub fn exhaustive(&self, step: i32) -> Option<Candidate> {
        self.best_of(self.lattice(step), 1).into_iter().next()
    }

    /// Coarse lattice pass on subsampled pixels, then a full-resolution
    /// stride-`step` refinement around the best few coarse positions.
    pub fn coarse_to_fine(&self, step: i32) -> Option<Candidate> {
        let coarse = self.best_of(self.lattice(COARSE_STRIDE.max(step)), COARSE_SUBSAMPLE);
        let mut positions = Vec::new();
        for c in coarse.iter().take(REFINE_CANDIDATES) {
            for oy in (-REFINE_RADIUS..=REFINE_RADIUS).step_by(step as usize) {
                for ox in (-REFINE_RADIUS..=REFINE_RADIUS).step_by(step as usize) {
                    let (dx, dy) = (c.dx + ox, c.dy + oy);
                    if dx.abs() <= self.s_max && dy.abs() <= self.s_max {
                        positions.push((dx, dy));
                    }
                }
            }
        }
        positions.sort_unstable();
        positions.dedup();
        self.best_of(positions, 1).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_prefers_mi_then_norm_then_lexicographic() {
        let c = |dx, dy, mi| Candidate { dx, dy, mi, overlap: 1 };
        assert_eq!(c(5, 5, 1.0).rank(&c(0, 0, 0.5)), Ordering::Less);
        assert_eq!(c(0, 1, 1.0).rank(&c(2, 0, 1.0)), Ordering::Less);
        assert_eq!(c(-1, 0, 1.0).rank(&c(0, -1, 1.0)), Ordering::Less);
        assert_eq!(c(0, -1, 1.0).rank(&c(0, 1, 1.0)), Ordering::Less);
    }

    #[test]
    fn rejects_bad_geometry() {
        let f = |w: usize| Features {
            width: w,
            height: w,
            values: vec![0.0; w * w],
            valid: vec![true; w * w],
        };
        assert!(ShiftSearch::new(&f(10), &f(14), 2, 32).is_ok());
        assert!(ShiftSearch::new(&f(10), &f(13), 2, 32).is_err());
        assert!(ShiftSearch::new(&f(10), &f(14), 2, 1).is_err());
    }
}
