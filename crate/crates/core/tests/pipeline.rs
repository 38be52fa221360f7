use aerialign_core::dataset::{
    generate_aligned_crops, verify_crop_set, CropEntry, CropJobConfig, ViolationKind, MANIFEST_NAME,
};
use aerialign_core::evaluation::{end_to_end_eval, generate_synthetic_scene, SyntheticConfig, SyntheticScene};
use aerialign_core::imaging::PreprocessConfig;
use aerialign_core::jsonl::read_jsonl;
use aerialign_core::offsetgrid::{interpolate, lookup, OffsetGrid};
use aerialign_core::raster::{decode_png, resample_crop, FrameRecord, Point};
use aerialign_core::registration::RegistrationConfig;

fn scene(seed: u64, magnitude: f64) -> SyntheticScene {
    generate_synthetic_scene(&SyntheticConfig {
        seed,
        extent_m: (60.0, 60.0),
        distortion_magnitude_m: magnitude,
        distortion_wavelength_m: 120.0,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn rcfg() -> RegistrationConfig {
    RegistrationConfig {
        s_max_px: 16,
        crop_size_m: 15.0,
        ..RegistrationConfig::default()
    }
}

fn crop_cfg(dir: &std::path::Path) -> CropJobConfig {
    CropJobConfig {
        crop_size_m: (6.0, 3.0),
        output_dir: dir.to_path_buf(),
        ..CropJobConfig::default()
    }
}

/// Frames well inside the 60 m scene.
fn inner_frames(s: &SyntheticScene, n: usize) -> Vec<FrameRecord> {
    s.frames
        .iter()
        .filter(|f| (10.0..50.0).contains(&f.x_m) && (10.0..50.0).contains(&f.y_m))
        .take(n)
        .cloned()
        .collect()
}

fn constant_grid(s: &SyntheticScene, dx: f64, dy: f64) -> OffsetGrid {
    let mut g = OffsetGrid::for_layer(&s.basemap, 5.0).unwrap();
    g.set_observed(0, 0, dx, dy);
    interpolate(&g).unwrap()
}

#[test]
fn zero_magnitude_scene_has_zero_truth() {
    let s = scene(1, 0.0);
    assert!(s.truth_field.dx.iter().chain(&s.truth_field.dy).all(|v| *v == 0.0));
    assert_eq!(s.basemap.extent_m(), s.aerial.extent_m());
}

#[test]
fn same_seed_gives_identical_scene() {
    let (a, b) = (scene(9, 1.0), scene(9, 1.0));
    assert_eq!(a.basemap, b.basemap);
    assert_eq!(a.aerial, b.aerial);
    assert_eq!(a.truth_field, b.truth_field);
    assert_eq!(a.frames, b.frames);
    assert_ne!(scene(10, 1.0).aerial, a.aerial);
}

#[test]
fn truth_never_exceeds_magnitude() {
    for m in [0.5, 1.5] {
        let s = scene(3, m);
        assert!(s.truth_field.max_norm() <= m + 1e-9, "{} > {m}", s.truth_field.max_norm());
    }
}

#[test]
fn undistorted_scene_round_trips_to_zero_error() {
    let s = scene(2, 0.0);
    let r = end_to_end_eval(&s, &PreprocessConfig::default(), &rcfg(), 12, 0, 1).unwrap();
    assert_eq!(r.before.alde_mean_m, 0.0);
    assert_eq!(r.after.alde_mean_m, 0.0);
    assert_eq!(r.after.alde_max_m, 0.0);
}

#[test]
fn correction_reduces_error() {
    let s = scene(4, 1.5);
    let r = end_to_end_eval(&s, &PreprocessConfig::default(), &rcfg(), 12, 0, 1).unwrap();
    assert!(r.after.alde_mean_m < r.before.alde_mean_m, "{:?} vs {:?}", r.after, r.before);
}

#[test]
fn zero_grid_crops_are_direct_crops() {
    let s = scene(5, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = crop_cfg(dir.path());
    let frames = inner_frames(&s, 5);
    let out = generate_aligned_crops(&frames, &s.aerial, &constant_grid(&s, 0.0, 0.0), &cfg, 1).unwrap();
    let (w, h) = cfg.dimensions_px();
    for e in &out.entries {
        assert_eq!(e.applied_offset_m, [0.0, 0.0]);
        let f = frames.iter().find(|f| f.frame_id == e.frame_id).unwrap();
        let expect = resample_crop(&s.aerial, f.position(), w, h, f.yaw_rad, cfg.resolution_m_per_px);
        let path = dir.path().join(&e.path);
        let got = decode_png(&std::fs::read(&path).unwrap(), &path).unwrap();
        assert_eq!(got, expect.pixels);
    }
}

#[test]
fn constant_grid_shifts_every_center() {
    let s = scene(5, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let grid = constant_grid(&s, 1.2, -0.6);
    let frames = inner_frames(&s, 6);
    let out = generate_aligned_crops(&frames, &s.aerial, &grid, &crop_cfg(dir.path()), 1).unwrap();
    assert_eq!(out.entries.len(), frames.len());
    for e in &out.entries {
        let f = frames.iter().find(|f| f.frame_id == e.frame_id).unwrap();
        assert_eq!(e.applied_offset_m, [1.2, -0.6]);
        assert_eq!(e.center_m, [f.x_m + 1.2, f.y_m - 0.6]);
        let norm = (e.applied_offset_m[0].powi(2) + e.applied_offset_m[1].powi(2)).sqrt();
        assert!(norm <= grid.max_norm() + 1e-12);
    }
}

#[test]
fn regeneration_is_byte_identical_across_workers() {
    let s = scene(6, 1.0);
    let grid = interpolate(&{
        let mut g = OffsetGrid::for_layer(&s.basemap, 5.0).unwrap();
        g.set_observed(1, 1, 0.4, 0.2);
        g.set_observed(9, 8, -0.7, 0.9);
        g
    })
    .unwrap();
    let frames = inner_frames(&s, 8);
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, workers) in dirs.iter().zip([1, 8]) {
        generate_aligned_crops(&frames, &s.aerial, &grid, &crop_cfg(dir.path()), workers).unwrap();
    }
    let listing = |d: &std::path::Path| {
        let mut names: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        names
    };
    let names = listing(dirs[0].path());
    assert_eq!(names, listing(dirs[1].path()));
    for n in names {
        assert_eq!(std::fs::read(dirs[0].path().join(&n)).unwrap(), std::fs::read(dirs[1].path().join(&n)).unwrap());
    }
    // applied offsets are grid lookups
    for e in read_jsonl::<CropEntry>(&dirs[0].path().join(MANIFEST_NAME)).unwrap() {
        let f = frames.iter().find(|f| f.frame_id == e.frame_id).unwrap();
        let (dx, dy) = lookup(&grid, f.position()).unwrap();
        assert_eq!(e.applied_offset_m, [dx, dy]);
        assert!((dx * dx + dy * dy).sqrt() <= grid.max_norm() + 1e-12);
    }
}

#[test]
fn manifest_counts_frames_minus_failures() {
    let s = scene(7, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let mut frames = inner_frames(&s, 4);
    let mut outside = frames[0].clone();
    outside.frame_id = "zz-outside".into();
    outside.x_m = -400.0;
    frames.push(outside);
    let out = generate_aligned_crops(&frames, &s.aerial, &constant_grid(&s, 0.0, 0.0), &crop_cfg(dir.path()), 2).unwrap();
    assert_eq!(out.failures.len(), 1);
    let manifest: Vec<CropEntry> = read_jsonl(&dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.len(), frames.len() - out.failures.len());
    assert!(verify_crop_set(&dir.path().join(MANIFEST_NAME)).unwrap().is_clean());
}

#[test]
fn verification_detects_corrupt_and_missing_crops() {
    let s = scene(8, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let frames = inner_frames(&s, 4);
    let out = generate_aligned_crops(&frames, &s.aerial, &constant_grid(&s, 0.0, 0.0), &crop_cfg(dir.path()), 1).unwrap();
    std::fs::remove_file(dir.path().join(&out.entries[0].path)).unwrap();
    std::fs::write(dir.path().join(&out.entries[1].path), b"not a png").unwrap();
    let report = verify_crop_set(&dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(report.checked, 4);
    let kinds: Vec<_> = report.violations.iter().map(|v| (v.frame_id.clone(), v.kind)).collect();
    assert!(kinds.contains(&(out.entries[0].frame_id.clone(), ViolationKind::MissingFile)));
    assert!(kinds.contains(&(out.entries[1].frame_id.clone(), ViolationKind::DecodeFailure)));
    assert_eq!(report.violations.len(), 2);
}

#[test]
fn frames_and_centers_stay_in_metric_frame() {
    let s = scene(5, 0.0);
    let p = Point::new(30.0, 30.0);
    assert!(s.aerial.contains(p) && s.basemap.contains(p));
}
