//! Per-feature z-scoring fitted on training rows only.

use serde::{Deserialize, Serialize};

use super::ControllerError;

pub const FEATURE_NAMES: [&str; 2] = ["fok", "jol"];

/// Z-scoring for the `(FOK, JOL)` pair. Inactive features map to 0, which is
/// the training mean after standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub active: [bool; 2],
}

impl Standardizer {
    /// Fit on the rows selected by `indices`. Population std; an active
    /// constant feature is rejected.
    pub fn fit(features: &[[f64; 2]], indices: &[usize], active: [bool; 2]) -> Result<Self, ControllerError> {
        let n = indices.len() as f64;
        let mut mean = [0.0; 2];
        let mut std = [1.0; 2];
        for f in 0..2 {
            if n == 0.0 {
                return Err(ControllerError::ConstantFeature(FEATURE_NAMES[f]));
            }
            let m = indices.iter().map(|&i| features[i][f]).sum::<f64>() / n;
            let var = indices.iter().map(|&i| (features[i][f] - m).powi(2)).sum::<f64>() / n;
            mean[f] = m;
            let s = var.sqrt();
            if active[f] {
                if s <= 1e-12 * m.abs().max(1.0) {
                    return Err(ControllerError::ConstantFeature(FEATURE_NAMES[f]));
                }
                std[f] = s;
            }
        }
        Ok(Standardizer { mean, std, active })
    }

    pub fn transform(&self, x: &[f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for f in 0..2 {
            if self.active[f] {
                out[f] = (x[f] - self.mean[f]) / self.std[f];
            }
        }
        out
    }
}
