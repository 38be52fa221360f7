use crate::error::{Error, Result};
use crate::imaging::Features;

/// Equal-width bin of a value in `[0, 255]`.
#[inline]
pub fn bin_index(v: f32, bins: usize) -> usize {
    let b = (v.clamp(0.0, 255.0) as f64 * bins as f64 / 256.0) as usize;
    b.min(bins - 1)
}

/// Mutual information in nats of a `bins x bins` joint count table
/// (row = first image). Returns 0 for an empty table.
pub fn mi_from_joint(joint: &[u32], bins: usize) -> f64 {
    let mut row = vec![0u64; bins];
    let mut col = vec![0u64; bins];
    let mut n = 0u64;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b] as u64;
            row[a] += c;
            col[b] += c;
            n += c;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..bins {
        if row[a] == 0 {
            continue;
        }
        let ra = row[a] as f64;
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c * (c * nf / (ra * col[b] as f64)).ln();
        }
    }
    mi / nf
}

/// Mutual information between two feature images over their jointly valid
/// pixels.
pub fn mutual_information(a: &Features, b: &Features, bins: usize) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    let mut joint = vec![0u32; bins * bins];
    let mut n = 0usize;
    for i in 0..a.values.len() {
        if a.valid[i] && b.valid[i] {
            joint[bin_index(a.values[i], bins) * bins + bin_index(b.values[i], bins)] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mi_from_joint(&joint, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn feat(w: usize, h: usize, values: Vec<f32>) -> Features {
        Features {
            width: w,
            height: h,
            valid: vec![true; values.len()],
            values,
        }
    }

    #[test]
    fn constant_images_have_zero_mi() {
        let a = feat(8, 8, vec![40.0; 64]);
        assert_eq!(mutual_information(&a, &a, 32).unwrap(), 0.0);
    }

    #[test]
    fn balanced_halves_give_ln2() {
        let v: Vec<f32> = (0..64).map(|i| if i < 32 { 0.0 } else { 255.0 }).collect();
        let a = feat(8, 8, v);
        let mi = mutual_information(&a, &a, 32).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_is_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut mk = || feat(64, 64, (0..4096).map(|_| rng.random_range(0.0..256.0f32).min(255.0)).collect());
        let a = mk();
        let b = mk();
        let mi = mutual_information(&a, &b, 32).unwrap();
        assert!(mi < 0.15, "{mi}");
        assert!(mi >= -1e-12);
    }

    #[test]
    fn errors() {
        let a = feat(4, 4, vec![0.0; 16]);
        let b = feat(2, 8, vec![0.0; 16]);
        assert!(matches!(mutual_information(&a, &b, 32), Err(Error::DimensionMismatch(_))));
        let mut c = a.clone();
        c.valid = vec![false; 16];
        assert!(matches!(mutual_information(&a, &c, 32), Err(Error::EmptyMask)));
    }

    #[test]
    fn bins_cover_range() {
        assert_eq!(bin_index(0.0, 32), 0);
        assert_eq!(bin_index(7.99, 32), 0);
        assert_eq!(bin_index(8.0, 32), 1);
        assert_eq!(bin_index(255.0, 32), 31);
        assert_eq!(bin_index(300.0, 32), 31);
    }
}
