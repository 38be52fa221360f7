use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use aerialign_core::evaluation::translated_pair;
use aerialign_core::raster::{decode_png, encode_png, extract_crop, render_overlay, shift_view, FrameRecord, Point};
use aerialign_core::registration::{read_estimates, write_estimates, EstimateStatus, ShiftEstimate};
use aerialign_review::{
    effective_labels, export_validated, read_labels, start_review, LabelRequest, ReviewInputs, ReviewSession,
};
use serde_json::{json, Value};

const CROP_M: f64 = 12.0;

fn estimate(i: usize, dx: i32, dy: i32, mi: f64, overlap: f64) -> ShiftEstimate {
    ShiftEstimate {
        frame_id: format!("f{i:03}"),
        dx_px: dx,
        dy_px: dy,
        dx_m: dx as f64 * 0.15,
        dy_m: -(dy as f64) * 0.15,
        mi_score: mi,
        valid_overlap_fraction: overlap,
        status: EstimateStatus::Auto,
    }
}

fn inputs(n: usize) -> ReviewInputs {
    let (basemap, aerial) = translated_pair(11, 200, 0.15, (2, -3), 4.0, 1.0);
    let c = basemap.center();
    let frames = (0..n)
        .map(|i| FrameRecord {
            frame_id: format!("f{i:03}"),
            index: i as u64 + 1,
            x_m: c.x + (i % 5) as f64 * 0.15,
            y_m: c.y - (i % 3) as f64 * 0.15,
            yaw_rad: 0.0,
            timestamp: None,
        })
        .collect();
    let estimates = (0..n)
        .map(|i| {
            let overlap = if i % 4 == 3 { 0.3 } else { 0.9 };
            estimate(i, 2, -3, 0.5 + ((i * 37) % 11) as f64 * 0.01, overlap)
        })
        .collect();
    ReviewInputs {
        estimates,
        frames,
        basemap,
        aerial,
        crop_size_m: CROP_M,
    }
}

fn label(id: &str, verdict: &str) -> LabelRequest {
    LabelRequest {
        frame_id: id.into(),
        verdict: verdict.into(),
        annotator: Some("tester".into()),
        note: None,
    }
}

fn log_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn fresh_log_queues_everything_in_priority_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = inputs(12);
    let s = ReviewSession::open(input.clone(), &dir.path().join("labels.jsonl")).unwrap();
    let q = s.queue();
    assert_eq!(q.len(), 12);
    // low overlap first, then ascending MI
    let by_id: std::collections::HashMap<_, _> = input.estimates.iter().map(|e| (e.frame_id.clone(), e)).collect();
    let keys: Vec<(bool, f64)> = q
        .iter()
        .map(|id| (!by_id[id].needs_priority_review(), by_id[id].mi_score))
        .collect();
    assert!(keys.windows(2).all(|w| (!w[0].0 && w[1].0) || (w[0].0 == w[1].0 && w[0].1 <= w[1].1)));
    assert!(by_id[&q[0]].needs_priority_review());
}

#[test]
fn restart_excludes_exactly_the_labelled_frames() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let input = inputs(10);
    let s = ReviewSession::open(input.clone(), &log).unwrap();
    let labelled = ["f001", "f004", "f007"];
    for id in labelled {
        s.submit(label(id, "accepted")).unwrap();
    }
    drop(s);
    let s = ReviewSession::open(input.clone(), &log).unwrap();
    let all: HashSet<String> = input.estimates.iter().map(|e| e.frame_id.clone()).collect();
    let done: HashSet<String> = labelled.iter().map(|s| s.to_string()).collect();
    let queue: HashSet<String> = s.queue().into_iter().collect();
    assert_eq!(queue, &all - &done);
    assert_eq!(s.progress().labeled, 3);

    for id in all.iter() {
        s.submit(label(id, "rejected")).unwrap();
    }
    assert!(s.queue().is_empty());
    assert!(s.next(&HashSet::new()).is_none());
    assert_eq!(s.frames().len(), 10);
    assert_eq!(s.frame("f002").unwrap().estimate.status, EstimateStatus::Rejected);
}

#[test]
fn supersession_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let s = ReviewSession::open(inputs(3), &log).unwrap();
    s.submit(label("f000", "accepted")).unwrap();
    let ack = s.submit(label("f000", "rejected")).unwrap();
    assert_eq!(ack.progress.rejected, 1);
    assert_eq!(log_lines(&log), 2);
    let labels = read_labels(&log).unwrap();
    assert_eq!(effective_labels(&labels)["f000"], aerialign_review::Verdict::Rejected);

    assert!(s.submit(label("nope", "accepted")).is_err());
    assert!(s.submit(label("f001", "maybe")).is_err());
    assert_eq!(log_lines(&log), 2);
}

#[test]
fn torn_trailing_record_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let s = ReviewSession::open(inputs(3), &log).unwrap();
    s.submit(label("f000", "accepted")).unwrap();
    drop(s);
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(b"{\"frame_id\":\"f001\",\"verd");
    std::fs::write(&log, bytes).unwrap();
    let s = ReviewSession::open(inputs(3), &log).unwrap();
    assert_eq!(s.progress().labeled, 1);
    s.submit(label("f002", "rejected")).unwrap();
    assert_eq!(read_labels(&log).unwrap().len(), 2);
}

#[test]
fn overlay_composition() {
    let dir = tempfile::tempdir().unwrap();
    let input = inputs(2);
    let s = ReviewSession::open(input.clone(), &dir.path().join("labels.jsonl")).unwrap();
    let center = Point::new(input.frames[0].x_m, input.frames[0].y_m);
    let base = extract_crop(&input.basemap, center, (CROP_M, CROP_M), 0.0).unwrap();

    let png = s.overlay_png("f000", 0.0, 0.3).unwrap();
    let px = decode_png(&png, Path::new("overlay.png")).unwrap();
    for (i, g) in base.pixels.data().iter().enumerate() {
        assert_eq!(px.data()[3 * i..3 * i + 3], [*g; 3]);
    }
    assert_eq!(png, s.overlay_png("f000", 0.0, 0.3).unwrap());

    let aerial = shift_view(&input.aerial, center, (CROP_M, CROP_M), (2, -3), 3).unwrap();
    let want = encode_png(&render_overlay(&base, &aerial, 1.0, 0.4).unwrap()).unwrap();
    assert_eq!(s.overlay_png("f000", 1.0, 0.4).unwrap(), want);
    assert!(s.overlay_png("f000", 1.5, 0.4).is_err());
    assert!(s.overlay_png("zzz", 0.5, 0.4).is_err());
}

#[test]
fn export_filters_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let est_path = dir.path().join("estimates.jsonl");
    let input = inputs(6);
    write_estimates(&est_path, &input.estimates).unwrap();
    let s = ReviewSession::open(input.clone(), &log).unwrap();
    for id in ["f000", "f001", "f002", "f003", "f004", "f005"] {
        s.submit(label(id, "rejected")).unwrap();
    }
    let out = dir.path().join("validated.jsonl");
    assert_eq!(export_validated(&log, &est_path, &out).unwrap(), 0);
    assert!(read_estimates(&out).unwrap().is_empty());

    s.submit(label("f002", "accepted")).unwrap();
    s.submit(label("f005", "accepted")).unwrap();
    assert_eq!(export_validated(&log, &est_path, &out).unwrap(), 2);
    let got = read_estimates(&out).unwrap();
    let ids: HashSet<_> = input.estimates.iter().map(|e| e.frame_id.clone()).collect();
    assert!(got.iter().all(|e| ids.contains(&e.frame_id) && e.status == EstimateStatus::Accepted));
}

struct Server {
    rt: tokio::runtime::Runtime,
    handle: Option<aerialign_review::ReviewHandle>,
    base: String,
}

impl Server {
    fn start(input: ReviewInputs, log: &Path) -> Self {
        let rt = tokio::runtime::Runtime::new().unwrap();
        let session = Arc::new(ReviewSession::open(input, log).unwrap());
        let handle = rt.block_on(start_review(session, "127.0.0.1:0", None)).unwrap();
        let base = format!("http://{}", handle.addr);
        Self {
            rt,
            handle: Some(handle),
            base,
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            let _ = self.rt.block_on(h.stop());
        }
    }
}

#[test]
fn http_api_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let srv = Server::start(inputs(5), &log);
    let c = reqwest::blocking::Client::new();
    let get = |p: &str| c.get(format!("{}{p}", srv.base)).send().unwrap();

    let index = get("/");
    assert!(index.status().is_success());
    assert!(index.text().unwrap().contains("/api/queue/next"));

    let frames: Value = get("/api/frames").json().unwrap();
    assert_eq!(frames["frames"].as_array().unwrap().len(), 5);
    assert_eq!(frames["progress"]["remaining"], 5);
    let one: Value = get("/api/frames/f001").json().unwrap();
    assert_eq!(one["frame_id"], "f001");
    assert_eq!(one["status"], "auto");
    assert_eq!(get("/api/frames/zzz").status(), 404);

    let png = get("/api/overlay/f001.png?alpha=0.5&saturation=0.3");
    assert_eq!(png.headers()["content-type"], "image/png");
    assert!(get("/api/overlay/f001.png?alpha=2").status().is_client_error());

    let next: Value = get("/api/queue/next").json().unwrap();
    let head = next["frame"]["frame_id"].as_str().unwrap().to_string();
    let skipped: Value = get(&format!("/api/queue/next?skip={head}")).json().unwrap();
    assert_ne!(skipped["frame"]["frame_id"], json!(head));

    let post = |body: Value| c.post(format!("{}/api/labels", srv.base)).json(&body).send().unwrap();
    let ack = post(json!({"frame_id": head, "verdict": "accepted", "annotator": "t", "note": "ok"}));
    assert!(ack.status().is_success());
    let ack: Value = ack.json().unwrap();
    assert_eq!(ack["progress"]["accepted"], 1);
    assert_eq!(post(json!({"frame_id": "f002", "verdict": "yes"})).status(), 400);
    assert_eq!(post(json!({"frame_id": "zzz", "verdict": "accepted"})).status(), 404);
    assert_eq!(post(json!({"verdict": "accepted"})).status(), 400);

    let progress: Value = get("/api/progress").json().unwrap();
    assert_eq!(progress["labeled"], 1);
    assert_eq!(progress["success_rate_text"], "100.0%");
    assert_eq!(log_lines(&log), 1);
}

#[test]
fn concurrent_labels_are_all_logged_intact() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("labels.jsonl");
    let srv = Server::start(inputs(100), &log);
    let base = srv.base.clone();
    let threads: Vec<_> = (0..100)
        .map(|i| {
            let base = base.clone();
            std::thread::spawn(move || {
                let verdict = if i % 3 == 0 { "rejected" } else { "accepted" };
                let r = reqwest::blocking::Client::new()
                    .post(format!("{base}/api/labels"))
                    .json(&json!({"frame_id": format!("f{i:03}"), "verdict": verdict, "annotator": format!("a{i}")}))
                    .send()
                    .unwrap();
                assert!(r.status().is_success());
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    let labels = read_labels(&log).unwrap();
    assert_eq!(labels.len(), 100);
    assert_eq!(log_lines(&log), 100);
    let ids: HashSet<_> = labels.iter().map(|l| l.frame_id.clone()).collect();
    assert_eq!(ids.len(), 100);
    let progress: Value = reqwest::blocking::get(format!("{base}/api/progress")).unwrap().json().unwrap();
    assert_eq!(progress["labeled"], 100);
    assert_eq!(progress["rejected"], 34);
}
