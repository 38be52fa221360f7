//! Offset grid: validated per-frame offsets averaged into square cells,
//! interpolated into a dense correction field.
//!
//! Cell `(col, row)` covers `origin + [col, col + 1) * cell` horizontally and
//! `origin + [row, row + 1) * cell` vertically; row 0 is the southernmost
//! row. Flattened arrays are row-major with index `row * cols + col`.
//! Offsets are metric (y-up) and describe where the aerial layer shows what
//! the base map shows at a given position.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Point, RasterLayer};
use crate::registration::{EstimateStatus, ShiftEstimate};

pub const DEFAULT_CELL_M: f64 = 5.0;

/// Gridded offset field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetGrid {
    pub cell_m: f64,
    #[serde(with = "point_array")]
    pub origin_m: Point,
    pub cols: usize,
    pub rows: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// Cells observed before interpolation.
    pub valid: Vec<bool>,
    pub dense: bool,
}

mod point_array {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point::new(x, y))
    }
}

impl OffsetGrid {
    /// An empty sparse grid.
    pub fn new(origin_m: Point, cell_m: f64, cols: usize, rows: usize) -> Result<Self> {
        if !(cell_m > 0.0) {
            return Err(Error::InvalidParameter(format!("cell size must be positive, got {cell_m}")));
        }
        if cols == 0 || rows == 0 {
            return Err(Error::InvalidParameter(format!("empty grid {cols}x{rows}")));
        }
        let n = cols * rows;
        Ok(Self {
            cell_m,
            origin_m,
            cols,
            rows,
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            valid: vec![false; n],
            dense: false,
        })
    }

    /// Grid covering a metric rectangle, rounding up to whole cells.
    pub fn covering(origin_m: Point, size_m: (f64, f64), cell_m: f64) -> Result<Self> {
        if !(cell_m > 0.0) {
            return Err(Error::InvalidParameter(format!("cell size must be positive, got {cell_m}")));
        }
        let cols = ((size_m.0 / cell_m).ceil() as usize).max(1);
        let rows = ((size_m.1 / cell_m).ceil() as usize).max(1);
        Self::new(origin_m, cell_m, cols, rows)
    }

    /// Grid over the full metric extent of a layer.
    pub fn for_layer(layer: &RasterLayer, cell_m: f64) -> Result<Self> {
        Self::covering(layer.origin(), layer.extent_m(), cell_m)
    }

    /// Same geometry, no observations.
    pub fn empty_like(&self) -> Self {
        Self::new(self.origin_m, self.cell_m, self.cols, self.rows).expect("geometry already validated")
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin_m.x) / self.cell_m).floor();
        let r = ((p.y - self.origin_m.y) / self.cell_m).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some((c as usize, r as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        self.origin_m.offset((col as f64 + 0.5) * self.cell_m, (row as f64 + 0.5) * self.cell_m)
    }

    pub fn set_observed(&mut self, col: usize, row: usize, dx: f64, dy: f64) {
        let i = self.index(col, row);
        self.dx[i] = dx;
        self.dy[i] = dy;
        self.valid[i] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Largest offset norm stored in the grid.
    pub fn max_norm(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.cols * self.rows;
        if self.dx.len() != n || self.dy.len() != n || self.valid.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "grid {}x{} with {} / {} / {} entries",
                self.cols,
                self.rows,
                self.dx.len(),
                self.dy.len(),
                self.valid.len()
            )));
        }
        if self.dense && self.dx.iter().chain(&self.dy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dense grid with non-finite values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let grid: Self = serde_json::from_slice(&bytes)?;
        grid.check()?;
        Ok(grid)
    }
}

/// Averages accepted offsets into the cells containing their frames.
pub fn accumulate(samples: &[(&ShiftEstimate, Point)], template: &OffsetGrid) -> Result<OffsetGrid> {
    if samples.is_empty() {
        return Err(Error::Empty("no accepted estimates to accumulate".into()));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for (est, p) in samples {
        if est.status != EstimateStatus::Accepted {
            return Err(Error::NotAccepted(est.frame_id.clone()));
        }
        let cell = template.cell_of(*p).ok_or(Error::OutsideGrid { x_m: p.x, y_m: p.y })?;
        cells.entry(cell).or_default().push((est.dx_m, est.dy_m));
    }
    let mut grid = template.empty_like();
    for ((col, row), mut offsets) in cells {
        // sorted summation keeps the mean independent of input order
        offsets.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let n = offsets.len() as f64;
        let sx: f64 = offsets.iter().map(|o| o.0).sum();
        let sy: f64 = offsets.iter().map(|o| o.1).sum();
        grid.set_observed(col, row, sx / n, sy / n);
    }
    Ok(grid)
}

/// Fills unobserved cells.
///
/// Cells inside the convex hull of observed cell centers get piecewise-linear
/// values over a Delaunay triangulation; the rest copy the nearest observed
/// cell. Observed cells are left untouched. A dense input is recomputed from
/// its observed cells.
pub fn interpolate(sparse: &OffsetGrid) -> Result<OffsetGrid> {
    sparse.check()?;
    let observed: Vec<(usize, usize)> = (0..sparse.rows)
        .flat_map(|r| (0..sparse.cols).map(move |c| (c, r)))
        .filter(|(c, r)| sparse.valid[sparse.index(*c, *r)])
        .collect();
    if observed.is_empty() {
        return Err(Error::Empty("grid has no observed cells".into()));
    }
    let mut out = sparse.clone();
    let mut filled = sparse.valid.clone();
    for (i, v) in sparse.valid.iter().enumerate() {
        if !v {
            out.dx[i] = 0.0;
            out.dy[i] = 0.0;
        }
    }

    // Work in cell-index space, where centers are exact integers.
    let pts: Vec<delaunator::Point> = observed
        .iter()
        .map(|(c, r)| delaunator::Point {
            x: *c as f64,
            y: *r as f64,
        })
        .collect();
    let tri = delaunator::triangulate(&pts);
    if !tri.triangles.is_empty() {
        fill_triangles(sparse, &observed, &tri.triangles, &mut out, &mut filled);
    } else if observed.len() >= 2 {
        fill_segment(sparse, &observed, &mut out, &mut filled);
    }
    fill_nearest(sparse, &observed, &mut out, &mut filled);
    out.dense = true;
    Ok(out)
}

fn fill_triangles(
    sparse: &OffsetGrid,
    observed: &[(usize, usize)],
    triangles: &[usize],
    out: &mut OffsetGrid,
    filled: &mut [bool],
) {
    const EPS: f64 = 1e-12;
    for t in triangles.chunks_exact(3) {
        let v: Vec<(f64, f64)> = t.iter().map(|&k| (observed[k].0 as f64, observed[k].1 as f64)).collect();
        let vals: Vec<(f64, f64)> = t
            .iter()
            .map(|&k| {
                let i = sparse.index(observed[k].0, observed[k].1);
                (sparse.dx[i], sparse.dy[i])
            })
            .collect();
        let det = (v[1].1 - v[2].1) * (v[0].0 - v[2].0) + (v[2].0 - v[1].0) * (v[0].1 - v[2].1);
        if det.abs() < EPS {
            continue;
        }
        let c0 = v.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) as usize;
        let c1 = v.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) as usize;
        let r0 = v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) as usize;
        let r1 = v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let i = sparse.index(c, r);
                if filled[i] {
                    continue;
                }
                let (x, y) = (c as f64, r as f64);
                let l0 = ((v[1].1 - v[2].1) * (x - v[2].0) + (v[2].0 - v[1].0) * (y - v[2].1)) / det;
                let l1 = ((v[2].1 - v[0].1) * (x - v[2].0) + (v[0].0 - v[2].0) * (y - v[2].1)) / det;
                let l2 = 1.0 - l0 - l1;
                if l0 < -EPS || l1 < -EPS || l2 < -EPS {
                    continue;
                }
                // clamping to the vertex range only removes rounding excursions
                let mix = |a: f64, b: f64, c: f64| {
                    let lo = a.min(b).min(c);
                    let hi = a.max(b).max(c);
                    (l0 * a + l1 * b + l2 * c).clamp(lo, hi)
                };
                out.dx[i] = mix(vals[0].0, vals[1].0, vals[2].0);
                out.dy[i] = mix(vals[0].1, vals[1].1, vals[2].1);
                filled[i] = true;
            }
        }
    }
}

/// Degenerate hull: all observed centers on one line.
fn fill_segment(sparse: &OffsetGrid, observed: &[(usize, usize)], out: &mut OffsetGrid, filled: &mut [bool]) {
    let p0 = (observed[0].0 as i64, observed[0].1 as i64);
    let far = observed
        .iter()
        .map(|(c, r)| (*c as i64, *r as i64))
        .max_by_key(|(c, r)| (c - p0.0).pow(2) + (r - p0.1).pow(2))
        .expect("non-empty");
    let dir = (far.0 - p0.0, far.1 - p0.1);
    let len2 = dir.0 * dir.0 + dir.1 * dir.1;
    // observed points ordered along the line
    let mut along: Vec<(f64, usize)> = observed
        .iter()
        .map(|(c, r)| {
            let t = ((*c as i64 - p0.0) * dir.0 + (*r as i64 - p0.1) * dir.1) as f64 / len2 as f64;
            (t, sparse.index(*c, *r))
        })
        .collect();
    along.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (t_min, t_max) = (along[0].0, along[along.len() - 1].0);
    for r in 0..sparse.rows {
        for c in 0..sparse.cols {
            let i = sparse.index(c, r);
            if filled[i] {
                continue;
            }
            let q = (c as i64 - p0.0, r as i64 - p0.1);
            if q.0 * dir.1 - q.1 * dir.0 != 0 {
                continue;
            }
            let t = (q.0 * dir.0 + q.1 * dir.1) as f64 / len2 as f64;
            if t < t_min || t > t_max {
                continue;
            }
            let k = along.partition_point(|a| a.0 <= t).clamp(1, along.len() - 1);
            let (ta, ia) = along[k - 1];
            let (tb, ib) = along[k];
            let w = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
            let lerp = |a: f64, b: f64| (a + w * (b - a)).clamp(a.min(b), a.max(b));
            out.dx[i] = lerp(sparse.dx[ia], sparse.dx[ib]);
            out.dy[i] = lerp(sparse.dy[ia], sparse.dy[ib]);
            filled[i] = true;
        }
    }
}

/// Copies the nearest observed cell into every still-empty cell. Ties go to
/// the lowest `(row, col)`.
fn fill_nearest(sparse: &OffsetGrid, observed: &[(usize, usize)], out: &mut OffsetGrid, filled: &mut [bool]) {
    let pending: Vec<usize> = (0..filled.len()).filter(|i| !filled[*i]).collect();
    if pending.is_empty() {
        return;
    }
    let key = |c: usize, r: usize, qc: usize, qr: usize| {
        let d2 = (c as i64 - qc as i64).pow(2) + (r as i64 - qr as i64).pow(2);
        (d2, r, c)
    };
    let brute = pending.len().saturating_mul(observed.len()) <= 50_000_000;
    for i in pending {
        let (qc, qr) = (i % sparse.cols, i / sparse.cols);
        let best = if brute {
            observed
                .iter()
                .map(|(c, r)| key(*c, *r, qc, qr))
                .min()
                .expect("non-empty")
        } else {
            ring_search(sparse, qc, qr, key)
        };
        let j = sparse.index(best.2, best.1);
        out.dx[i] = sparse.dx[j];
        out.dy[i] = sparse.dy[j];
        filled[i] = true;
    }
}

fn ring_search(
    sparse: &OffsetGrid,
    qc: usize,
    qr: usize,
    key: impl Fn(usize, usize, usize, usize) -> (i64, usize, usize),
) -> (i64, usize, usize) {
    let mut best: Option<(i64, usize, usize)> = None;
    let max_r = sparse.cols.max(sparse.rows) as i64;
    for rad in 1..=max_r {
        if let Some(b) = best {
            if rad * rad > b.0 {
                break;
            }
        }
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                if dr.abs() != rad && dc.abs() != rad {
                    continue;
                }
                let (c, r) = (qc as i64 + dc, qr as i64 + dr);
                if c < 0 || r < 0 || c >= sparse.cols as i64 || r >= sparse.rows as i64 {
                    continue;
                }
                let (c, r) = (c as usize, r as usize);
                if sparse.valid[sparse.index(c, r)] {
                    let k = key(c, r, qc, qr);
                    if best.is_none_or(|b| k < b) {
                        best = Some(k);
                    }
                }
            }
        }
    }
    best.expect("grid has an observed cell")
}

/// Offset at a metric point by bilinear interpolation between cell centers.
pub fn lookup(grid: &OffsetGrid, p: Point) -> Result<(f64, f64)> {
    if !grid.dense {
        return Err(Error::NotDense);
    }
    let axis = |v: f64, origin: f64, n: usize| {
        let g = ((v - origin) / grid.cell_m - 0.5).clamp(0.0, (n - 1) as f64);
        let r = g.round();
        let g = if (g - r).abs() < 1e-9 { r } else { g };
        let i0 = (g.floor() as usize).min(n.saturating_sub(2));
        let t = g - i0 as f64;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, t)
    };
    let (c0, c1, tx) = axis(p.x, grid.origin_m.x, grid.cols);
    let (r0, r1, ty) = axis(p.y, grid.origin_m.y, grid.rows);
    // a + t * (b - a) returns equal neighbours unchanged, so constant fields
    // come back exactly; the t == 1 case covers centers on the last row/column
    let lerp = |a: f64, b: f64, t: f64| if t == 1.0 { b } else { a + t * (b - a) };
    let blend = |f: &[f64]| {
        let v = |c: usize, r: usize| f[grid.index(c, r)];
        let lo = lerp(v(c0, r0), v(c1, r0), tx);
        let hi = lerp(v(c0, r1), v(c1, r1), tx);
        lerp(lo, hi, ty)
    };
    Ok((blend(&grid.dx), blend(&grid.dy)))
}

pub const QUIVER_HEADER: &str = "x_m,y_m,dx_m,dy_m,observed";

/// Writes cell centers and offsets as CSV: observed cells of a sparse grid,
/// every cell of a dense one.
pub fn export_quiver(grid: &OffsetGrid, out_path: &Path) -> Result<usize> {
    let mut buf = Vec::new();
    writeln!(buf, "{QUIVER_HEADER}").expect("in-memory write");
    let mut rows = 0;
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let i = grid.index(c, r);
            if !grid.dense && !grid.valid[i] {
                continue;
            }
            let p = grid.cell_center(c, r);
            writeln!(buf, "{},{},{},{},{}", p.x, p.y, grid.dx[i], grid.dy[i], grid.valid[i]).expect("in-memory write");
            rows += 1;
        }
    }
    std::fs::write(out_path, buf).map_err(|e| Error::io(out_path, e))?;
    Ok(rows)
}

/// Rebuilds a sparse grid with `template`'s geometry from the observed rows
/// of a quiver CSV.
pub fn import_quiver(path: &Path, template: &OffsetGrid) -> Result<OffsetGrid> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut grid = template.empty_like();
    let bad = |line: usize, reason: String| Error::Record {
        path: path.to_path_buf(),
        line,
        reason,
    };
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            if line.trim() != QUIVER_HEADER {
                return Err(bad(1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n + 1, format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(n + 1, e.to_string()));
        let (x, y, dx, dy) = (num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?);
        let observed: bool = f[4].trim().parse().map_err(|_| bad(n + 1, format!("bad flag {:?}", f[4])))?;
        if !observed {
            continue;
        }
        let (c, r) = grid.cell_of(Point::new(x, y)).ok_or(Error::OutsideGrid { x_m: x, y_m: y })?;
        grid.set_observed(c, r, dx, dy);
    }
    Ok(grid)
}
