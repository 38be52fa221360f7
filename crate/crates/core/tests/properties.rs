use std::collections::HashSet;

use aerialign_core::evaluation::alde;
use aerialign_core::imaging::Features;
use aerialign_core::offsetgrid::{accumulate, export_quiver, import_quiver, interpolate, lookup, OffsetGrid};
use aerialign_core::raster::{
    extract_crop, extract_crop_px, render_overlay, Crop, Pixels, Point, RasterLayer, SystemId,
};
use aerialign_core::registration::{mutual_information, EstimateStatus, ShiftEstimate, ShiftSearch};
use proptest::prelude::*;

const BINS: usize = 32;

fn features(width: usize, height: usize, values: Vec<f32>) -> Features {
    Features {
        width,
        height,
        valid: vec![true; values.len()],
        values,
    }
}

fn image(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0u16..256, n).prop_map(|v| v.into_iter().map(f32::from).collect())
}

fn entropy(values: &[f32]) -> f64 {
    let mut counts = [0usize; BINS];
    for v in values {
        counts[((*v as usize) * BINS / 256).min(BINS - 1)] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mi_is_symmetric_and_non_negative(a in image(256), b in image(256)) {
        let (fa, fb) = (features(16, 16, a), features(16, 16, b));
        let ab = mutual_information(&fa, &fb, BINS).unwrap();
        let ba = mutual_information(&fb, &fa, BINS).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
    }

    #[test]
    fn mi_of_two_valued_image_with_itself_is_its_entropy(
        lo in 0u8..128, hi in 128u8..=255, mask in prop::collection::vec(any::<bool>(), 200)
    ) {
        let v: Vec<f32> = mask.iter().map(|m| if *m { hi as f32 } else { lo as f32 }).collect();
        let f = features(20, 10, v.clone());
        let mi = mutual_information(&f, &f, BINS).unwrap();
        prop_assert!((mi - entropy(&v)).abs() < 1e-12);
    }

    #[test]
    fn mi_is_invariant_under_bin_permutation(
        a in image(256), b in image(256), perm in Just((0..BINS).collect::<Vec<_>>()).prop_shuffle()
    ) {
        let width = 256 / BINS;
        let remapped: Vec<f32> = b
            .iter()
            .map(|v| {
                let bin = *v as usize / width;
                (perm[bin] * width + *v as usize % width) as f32
            })
            .collect();
        let (fa, fb, fr) = (features(16, 16, a), features(16, 16, b), features(16, 16, remapped));
        let m0 = mutual_information(&fa, &fb, BINS).unwrap();
        let m1 = mutual_information(&fa, &fr, BINS).unwrap();
        prop_assert!((m0 - m1).abs() < 1e-12);
    }

    #[test]
    fn argmax_survives_bin_preserving_scale(
        base in prop::collection::vec(0usize..BINS, 24 * 24),
        window in prop::collection::vec(0usize..BINS, 32 * 32),
        scale in 1.0f32..1.015,
    ) {
        // bin centers move by less than half a bin under the scale
        let centers = |v: &[usize], c: f32| v.iter().map(|b| ((b * 8 + 4) as f32 * c).min(255.0)).collect::<Vec<_>>();
        let s0 = ShiftSearch::new(&features(24, 24, centers(&base, 1.0)), &features(32, 32, centers(&window, 1.0)), 4, BINS).unwrap();
        let s1 = ShiftSearch::new(&features(24, 24, centers(&base, scale)), &features(32, 32, centers(&window, scale)), 4, BINS).unwrap();
        let (a, b) = (s0.exhaustive(1).unwrap(), s1.exhaustive(1).unwrap());
        prop_assert_eq!((a.dx, a.dy), (b.dx, b.dy));
        prop_assert!(a.dx.abs() <= 4 && a.dy.abs() <= 4);
    }
}

fn layer(w: usize, h: usize, seed: u64) -> RasterLayer {
    let data = (0..w * h * 3).map(|i| ((i as u64 * 2654435761 + seed) % 251) as u8).collect();
    RasterLayer::new(Pixels::rgb(w, h, data).unwrap(), 0.15, Point::new(10.0, -4.0), SystemId::Aerial).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metric_pixel_round_trip(x in 10.0f64..13.0, y in -4.0f64..-1.0) {
        let l = layer(20, 20, 1);
        let pc = l.metric_to_pixel(Point::new(x, y));
        let back = l.pixel_to_metric(pc.col.round(), pc.row.round());
        prop_assert!((back.x - x).abs() <= 0.075 + 1e-12 && (back.y - y).abs() <= 0.075 + 1e-12);
    }

    #[test]
    fn integer_aligned_crops_are_subarrays(c0 in 0usize..12, r0 in 0usize..12, w in 1usize..8, h in 1usize..8) {
        let l = layer(20, 20, 2);
        // the center of a w x h block starting at (c0, r0)
        let center = l.pixel_to_metric(c0 as f64 + (w as f64 - 1.0) / 2.0, r0 as f64 + (h as f64 - 1.0) / 2.0);
        let crop = extract_crop_px(&l, center, w, h, 0.0);
        for v in 0..h {
            for u in 0..w {
                prop_assert_eq!(crop.pixels.pixel(u, v), l.pixels().pixel(c0 + u, r0 + v));
            }
        }
        prop_assert!(crop.valid.iter().all(|v| *v));
    }

    #[test]
    fn overlay_never_reads_invalid_aerial_pixels(
        dx in -3.0f64..3.0, dy in -3.0f64..3.0, alpha in 0.0f64..=1.0, sat in 0.0f64..=1.0, fill in any::<u8>()
    ) {
        let base_layer = layer(30, 30, 3);
        let c = base_layer.center();
        let base = extract_crop(&base_layer, c, (3.0, 3.0), 0.0).unwrap();
        let mut aerial: Crop = extract_crop(&layer(30, 30, 4), c.offset(dx * 2.0, dy * 2.0), (3.0, 3.0), 0.0).unwrap();
        let a = render_overlay(&base, &aerial, alpha, sat).unwrap();
        // scribbling over invalid pixels must not change the output
        for (i, ok) in aerial.valid.clone().iter().enumerate() {
            if !ok {
                let ch = aerial.pixels.channels();
                let mut data = aerial.pixels.clone().into_data();
                data[i * ch..(i + 1) * ch].fill(fill);
                aerial.pixels = Pixels::new(aerial.pixels.width(), aerial.pixels.height(), ch, data).unwrap();
            }
        }
        let b = render_overlay(&base, &aerial, alpha, sat).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!((a.width(), a.height()), (base.width(), base.height()));
    }

    #[test]
    fn alde_properties(offsets in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
        let (mean, max) = alde(&offsets).unwrap();
        let neg: Vec<_> = offsets.iter().map(|(x, y)| (-x, -y)).collect();
        prop_assert_eq!(alde(&neg).unwrap(), (mean, max));
        prop_assert!(mean <= max + 1e-12 && mean >= 0.0);
    }
}

fn est(i: usize, dx: f64, dy: f64) -> ShiftEstimate {
    ShiftEstimate {
        frame_id: format!("e{i}"),
        dx_px: 0,
        dy_px: 0,
        dx_m: dx,
        dy_m: dy,
        mi_score: 0.0,
        valid_overlap_fraction: 1.0,
        status: EstimateStatus::Accepted,
    }
}

/// Random accepted estimates with positions inside a `cols x rows` grid of
/// 5 m cells anchored at (100, 200).
/// `(x, y, dx, dy)` relative to the grid origin.
type Sample = (f64, f64, f64, f64);

fn samples() -> impl Strategy<Value = (usize, usize, Vec<Sample>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(cols, rows)| {
        let pts = prop::collection::vec(
            (0.0..cols as f64 * 5.0, 0.0..rows as f64 * 5.0, -3.0f64..3.0, -3.0f64..3.0),
            1..30,
        );
        (Just(cols), Just(rows), pts)
    })
}

fn sparse_grid(cols: usize, rows: usize, pts: &[Sample]) -> OffsetGrid {
    let template = OffsetGrid::new(Point::new(100.0, 200.0), 5.0, cols, rows).unwrap();
    let ests: Vec<_> = pts.iter().enumerate().map(|(i, p)| est(i, p.2, p.3)).collect();
    let joined: Vec<_> = ests
        .iter()
        .zip(pts)
        .map(|(e, p)| (e, Point::new(100.0 + p.0, 200.0 + p.1)))
        .collect();
    accumulate(&joined, &template).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn accumulate_is_permutation_invariant((cols, rows, pts) in samples(), seed in any::<u64>()) {
        let mut shuffled = pts.clone();
        // deterministic Fisher-Yates from the seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(sparse_grid(cols, rows, &pts), sparse_grid(cols, rows, &shuffled));
    }

    #[test]
    fn valid_count_matches_floor_index_oracle((cols, rows, pts) in samples()) {
        let g = sparse_grid(cols, rows, &pts);
        let cells: HashSet<(i64, i64)> = pts.iter().map(|p| ((p.0 / 5.0).floor() as i64, (p.1 / 5.0).floor() as i64)).collect();
        prop_assert_eq!(g.valid_count(), cells.len());
    }

    #[test]
    fn interpolation_fixes_observed_cells_and_is_idempotent((cols, rows, pts) in samples()) {
        let sparse = sparse_grid(cols, rows, &pts);
        let dense = interpolate(&sparse).unwrap();
        prop_assert!(dense.dense);
        for i in 0..dense.dx.len() {
            if sparse.valid[i] {
                prop_assert_eq!((dense.dx[i], dense.dy[i]), (sparse.dx[i], sparse.dy[i]));
            }
        }
        prop_assert_eq!(&interpolate(&dense).unwrap(), &dense);

        let bounds = |f: &[f64]| {
            let v: Vec<f64> = f.iter().zip(&sparse.valid).filter(|(_, ok)| **ok).map(|(x, _)| *x).collect();
            (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        let (lx, hx) = bounds(&sparse.dx);
        let (ly, hy) = bounds(&sparse.dy);
        prop_assert!(dense.dx.iter().all(|v| v.is_finite() && *v >= lx && *v <= hx));
        prop_assert!(dense.dy.iter().all(|v| v.is_finite() && *v >= ly && *v <= hy));
    }

    #[test]
    fn lookup_exact_at_centers_and_continuous((cols, rows, pts) in samples(), fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let dense = interpolate(&sparse_grid(cols, rows, &pts)).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let i = dense.index(c, r);
                prop_assert_eq!(lookup(&dense, dense.cell_center(c, r)).unwrap(), (dense.dx[i], dense.dy[i]));
            }
        }
        let mut delta = 0.0f64;
        for r in 0..rows {
            for c in 0..cols {
                let i = dense.index(c, r);
                for j in [(c + 1 < cols).then(|| dense.index(c + 1, r)), (r + 1 < rows).then(|| dense.index(c, r + 1))].into_iter().flatten() {
                    delta = delta.max((dense.dx[i] - dense.dx[j]).abs()).max((dense.dy[i] - dense.dy[j]).abs());
                }
            }
        }
        let p = Point::new(100.0 + fx * cols as f64 * 5.0, 200.0 + fy * rows as f64 * 5.0);
        let bound = delta / 5.0 * 0.001 + 1e-12;
        let a = lookup(&dense, p).unwrap();
        for q in [p.offset(0.001, 0.0), p.offset(0.0, 0.001)] {
            let b = lookup(&dense, q).unwrap();
            prop_assert!((a.0 - b.0).abs() <= bound && (a.1 - b.1).abs() <= bound);
        }
    }

    #[test]
    fn constant_field_lookup_is_constant(
        cols in 1usize..10, rows in 1usize..10, dx in -4.0f64..4.0, dy in -4.0f64..4.0,
        probes in prop::collection::vec((-20.0f64..80.0, -20.0f64..80.0), 20)
    ) {
        let mut g = OffsetGrid::new(Point::new(0.0, 0.0), 5.0, cols, rows).unwrap();
        g.set_observed(cols / 2, rows / 2, dx, dy);
        let dense = interpolate(&g).unwrap();
        for (x, y) in probes {
            prop_assert_eq!(lookup(&dense, Point::new(x, y)).unwrap(), (dx, dy));
        }
    }

    #[test]
    fn isolated_estimate_is_reproduced_at_its_center(cols in 1usize..10, rows in 1usize..10, fx in 0.0f64..1.0, fy in 0.0f64..1.0, dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let template = OffsetGrid::new(Point::new(0.0, 0.0), 5.0, cols, rows).unwrap();
        let p = Point::new(fx * cols as f64 * 5.0 * 0.999, fy * rows as f64 * 5.0 * 0.999);
        let e = est(0, dx, dy);
        let sparse = accumulate(&[(&e, p)], &template).unwrap();
        let (c, r) = template.cell_of(p).unwrap();
        let dense = interpolate(&sparse).unwrap();
        prop_assert_eq!(lookup(&dense, dense.cell_center(c, r)).unwrap(), (dx, dy));
    }

    #[test]
    fn quiver_export_round_trips((cols, rows, pts) in samples()) {
        let dir = tempfile::tempdir().unwrap();
        let sparse = sparse_grid(cols, rows, &pts);
        let path = dir.path().join("q.csv");
        prop_assert_eq!(export_quiver(&sparse, &path).unwrap(), sparse.valid_count());
        prop_assert_eq!(import_quiver(&path, &sparse).unwrap(), sparse);
    }
}

fn frame_at(i: usize, x: f64, y: f64) -> aerialign_core::raster::FrameRecord {
    aerialign_core::raster::FrameRecord {
        frame_id: format!("f{i:04}"),
        index: i as u64,
        x_m: x,
        y_m: y,
        yaw_rad: 0.0,
        timestamp: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sampling_covers_buckets(
        pts in prop::collection::vec((0.0f64..60.0, 0.0f64..60.0), 1..120),
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        use aerialign_core::registration::{bucket_of, sample_frames};
        let frames: Vec<_> = pts.iter().enumerate().map(|(i, p)| frame_at(i, p.0, p.1)).collect();
        let n = 1 + (frac * (frames.len() - 1) as f64) as usize;
        let picked = sample_frames(&frames, n, 5.0, seed).unwrap();
        prop_assert_eq!(picked.len(), n);
        let all: HashSet<_> = frames.iter().map(|f| bucket_of(f, 5.0)).collect();
        let hit: HashSet<_> = picked.iter().map(|f| bucket_of(f, 5.0)).collect();
        // one frame per bucket before any bucket gets a second
        prop_assert_eq!(hit.len(), n.min(all.len()));
        let ids: HashSet<_> = picked.iter().map(|f| &f.frame_id).collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(picked, sample_frames(&frames, n, 5.0, seed).unwrap());
    }
}
