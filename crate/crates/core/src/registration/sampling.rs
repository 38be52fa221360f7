use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::FrameRecord;

/// Spatial bucket `(floor(x / cell), floor(y / cell))`.
pub fn bucket_of(frame: &FrameRecord, cell_m: f64) -> (i64, i64) {
    ((frame.x_m / cell_m).floor() as i64, (frame.y_m / cell_m).floor() as i64)
}

/// Spatially stratified subset of `frames`.
///
/// Frames are bucketed on a `cell_m` lattice; buckets are visited in a seeded
/// random order, taking one not-yet-chosen frame per bucket per round until
/// `target_n` frames are selected. The result keeps manifest order.
pub fn sample_frames(frames: &[FrameRecord], target_n: usize, cell_m: f64, seed: u64) -> Result<Vec<FrameRecord>> {
    if target_n == 0 {
        return Err(Error::InvalidParameter("target_n must be positive".into()));
    }
    if target_n > frames.len() {
        return Err(Error::InvalidParameter(format!(
            "target_n {target_n} exceeds the {} available frames",
            frames.len()
        )));
    }
    if !(cell_m > 0.0) {
        return Err(Error::InvalidParameter(format!("cell size must be positive, got {cell_m}")));
    }
    let mut buckets: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        buckets.entry(bucket_of(f, cell_m)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<Vec<usize>> = buckets.into_values().collect();
    for q in queues.iter_mut() {
        q.shuffle(&mut rng);
    }
    queues.shuffle(&mut rng);

    let mut chosen = Vec::with_capacity(target_n);
    let mut round = 0;
    while chosen.len() < target_n {
        for q in &queues {
            if let Some(i) = q.get(round) {
                chosen.push(*i);
                if chosen.len() == target_n {
                    break;
                }
            }
        }
        round += 1;
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| frames[i].clone()).collect())
}
