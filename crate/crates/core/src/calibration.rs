//! Post-hoc probability calibration: isotonic regression (pool adjacent
//! violators) and Platt sigmoid scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least {min} observations, got {n}")]
    TooFew { n: usize, min: usize },
    #[error("sigmoid calibration needs both classes")]
    DegenerateLabels,
    #[error("score at position {0} is not finite")]
    NonFinite(usize),
}

fn check_inputs(scores: &[f64], labels: &[bool], min: usize) -> Result<(), CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.len() < min {
        return Err(CalibrationError::TooFew { n: scores.len(), min });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFinite(i));
    }
    Ok(())
}

/// Weighted least-squares nondecreasing fit of `targets` in the given order.
pub fn pava(targets: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(targets.len(), weights.len());
    // each block: (weighted sum, total weight, number of inputs)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(targets.len());
    for (&y, &w) in targets.iter().zip(weights) {
        blocks.push((y * w, w, 1));
        while blocks.len() >= 2 {
            let (s1, w1, c1) = blocks[blocks.len() - 1];
            let (s0, w0, c0) = blocks[blocks.len() - 2];
            if s0 / w0 <= s1 / w1 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, w0 + w1, c0 + c1);
        }
    }
    let mut fitted = Vec::with_capacity(targets.len());
    for (s, w, c) in blocks {
        fitted.extend(std::iter::repeat_n(s / w, c));
    }
    fitted
}

/// Step map from score to fitted value. Between breakpoints the value of the
/// left breakpoint applies; outside the fitted range the end values apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicMap {
    pub fn apply(&self, score: f64) -> f64 {
        let idx = self.thresholds.partition_point(|&t| t <= score);
        self.values[idx.saturating_sub(1)]
    }
}

pub fn fit_isotonic(scores: &[f64], labels: &[bool]) -> Result<IsotonicMap, CalibrationError> {
    check_inputs(scores, labels, 2)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // identical scores enter PAVA as one pre-pooled block
    let mut thresholds = Vec::new();
    let mut means = Vec::new();
    let mut weights = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut positives = 0usize;
        let mut count = 0usize;
        while i < order.len() && scores[order[i]] == s {
            positives += usize::from(labels[order[i]]);
            count += 1;
            i += 1;
        }
        thresholds.push(s);
        means.push(positives as f64 / count as f64);
        weights.push(count as f64);
    }
    let values = pava(&means, &weights);
    Ok(IsotonicMap { thresholds, values })
}

/// `P(y = 1 | s) = 1 / (1 + exp(a·s + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub a: f64,
    pub b: f64,
}

impl SigmoidParams {
    pub fn apply(&self, score: f64) -> f64 {
        let z = self.a * score + self.b;
        // evaluated on the side that cannot overflow
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

pub const PLATT_MAX_ITER: usize = 100;
pub const PLATT_GRAD_TOL: f64 = 1e-8;
const PLATT_MIN_STEP: f64 = 1e-10;
const PLATT_HESSIAN_RIDGE: f64 = 1e-12;

/// Negative log-likelihood of `(a, b)` against fixed targets.
pub fn platt_objective(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = s * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Regularized targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn platt_targets(labels: &[bool]) -> Vec<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    labels.iter().map(|&y| if y { hi } else { lo }).collect()
}

/// Newton iteration with backtracking line search on the Platt likelihood.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<SigmoidParams, CalibrationError> {
    check_inputs(scores, labels, 2)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CalibrationError::DegenerateLabels);
    }
    let targets = platt_targets(labels);
    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = platt_objective(scores, &targets, a, b);

    for _ in 0..PLATT_MAX_ITER {
        let (mut h11, mut h22, mut h21) = (PLATT_HESSIAN_RIDGE, PLATT_HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = SigmoidParams { a, b }.apply(s);
            let d2 = p * (1.0 - p);
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.hypot(g2) < PLATT_GRAD_TOL {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= PLATT_MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_objective(scores, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(SigmoidParams { a, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Isotonic,
    Sigmoid,
}

impl HeadKind {
    pub const ALL: [HeadKind; 2] = [HeadKind::Isotonic, HeadKind::Sigmoid];

    pub fn fit(self, scores: &[f64], labels: &[bool]) -> Result<CalibrationHead, CalibrationError> {
        match self {
            HeadKind::Isotonic => fit_isotonic(scores, labels).map(CalibrationHead::Isotonic),
            HeadKind::Sigmoid => fit_platt(scores, labels).map(CalibrationHead::Sigmoid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationHead {
    Isotonic(IsotonicMap),
    Sigmoid(SigmoidParams),
    /// Fixed probability, used when a training part holds a single class.
    Constant {
        p: f64,
    },
}

impl CalibrationHead {
    /// Calibrated probability in `[0, 1]`.
    pub fn apply(&self, score: f64) -> f64 {
        let p = match self {
            CalibrationHead::Isotonic(map) => map.apply(score),
            CalibrationHead::Sigmoid(params) => params.apply(score),
            CalibrationHead::Constant { p } => *p,
        };
        p.clamp(0.0, 1.0)
    }

    pub fn kind(&self) -> Option<HeadKind> {
        match self {
            CalibrationHead::Isotonic(_) => Some(HeadKind::Isotonic),
            CalibrationHead::Sigmoid(_) => Some(HeadKind::Sigmoid),
            CalibrationHead::Constant { .. } => None,
        }
    }
}
