//! Robust per-channel amplitude scaling.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Regularizer added to the MAD so flat channels map to zeros.
pub const MAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// `(x - median) / (MAD + eps)`.
    #[default]
    Mad,
    None,
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median absolute deviation around the median.
pub fn mad(values: &[f64], center: f64) -> f64 {
    let dev: Vec<f64> = values.iter().map(|x| (x - center).abs()).collect();
    median(&dev)
}

pub fn normalize_channel(samples: &[f32], normalizer: Normalizer) -> Vec<f64> {
    let xs: Vec<f64> = samples.iter().map(|&x| x as f64).collect();
    match normalizer {
        Normalizer::None => xs,
        Normalizer::Mad => {
            if xs.is_empty() {
                return xs;
            }
            let med = median(&xs);
            let scale = mad(&xs, med) + MAD_EPSILON;
            xs.iter().map(|x| (x - med) / scale).collect()
        }
    }
}
