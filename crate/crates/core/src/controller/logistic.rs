//! Penalized logistic regression on two features with an unpenalized
//! intercept.
//!
//! The objective is `R(w) + C·Σ sᵢ·ℓ(yᵢ, w·xᵢ + b)` with per-sample weights
//! `sᵢ`, logistic loss `ℓ`, and `R(w) = ½‖w‖²` (l2) or `‖w‖₁` (l1). The l2
//! problem is solved by damped Newton on `(w, b)`; the l1 problem by cyclic
//! coordinate descent with one-dimensional proximal Newton steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAD_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 200;
const CD_MAX_SWEEPS: usize = 2000;
const CD_STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogisticError {
    #[error("training data must contain both classes")]
    DegenerateLabels,
    #[error("features, labels and weights differ in length")]
    LengthMismatch,
    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: [f64; 2],
    pub b: f64,
}

impl LogisticModel {
    /// Log-odds of the positive class.
    pub fn decision(&self, x: &[f64; 2]) -> f64 {
        self.w[0] * x[0] + self.w[1] * x[1] + self.b
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Data<'a> {
    x: &'a [[f64; 2]],
    y: Vec<f64>,
    s: &'a [f64],
    c: f64,
}

impl Data<'_> {
    fn loss(&self, w: &[f64; 2], b: f64) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .zip(self.s)
            .map(|((xi, &yi), &si)| {
                let z = w[0] * xi[0] + w[1] * xi[1] + b;
                si * (softplus(z) - yi * z)
            })
            .sum::<f64>()
            * self.c
    }
}

fn check(x: &[[f64; 2]], labels: &[bool], weights: &[f64]) -> Result<(), LogisticError> {
    if x.len() != labels.len() || x.len() != weights.len() {
        return Err(LogisticError::LengthMismatch);
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(LogisticError::DegenerateLabels);
    }
    Ok(())
}

pub fn train_logistic(
    x: &[[f64; 2]],
    labels: &[bool],
    weights: &[f64],
    c: f64,
    penalty: Penalty,
) -> Result<LogisticModel, LogisticError> {
    check(x, labels, weights)?;
    let data = Data { x, y: labels.iter().map(|&l| f64::from(u8::from(l))).collect(), s: weights, c };
    match penalty {
        Penalty::L2 => newton_l2(&data),
        Penalty::L1 => coordinate_descent_l1(&data),
    }
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> [f64; 3] {
    // Gaussian elimination with partial pivoting on a 3×3 system
    let mut a = [[0.0; 4]; 3];
    for r in 0..3 {
        a[r][..3].copy_from_slice(&h[r]);
        a[r][3] = g[r];
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for k in col..4 {
                a[r][k] -= f * a[col][k];
            }
        }
    }
    let mut out = [0.0; 3];
    for r in (0..3).rev() {
        let tail: f64 = (r + 1..3).map(|k| a[r][k] * out[k]).sum();
        out[r] = (a[r][3] - tail) / a[r][r];
    }
    out
}

fn newton_l2(d: &Data) -> Result<LogisticModel, LogisticError> {
    let objective = |w: &[f64; 2], b: f64| 0.5 * (w[0] * w[0] + w[1] * w[1]) + d.loss(w, b);
    let mut w = [0.0, 0.0];
    let mut b = 0.0;
    let mut f = objective(&w, b);
    for _ in 0..NEWTON_MAX_ITER {
        let mut g = [w[0], w[1], 0.0];
        let mut h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        for ((xi, &yi), &si) in d.x.iter().zip(&d.y).zip(d.s) {
            let z = w[0] * xi[0] + w[1] * xi[1] + b;
            let p = sigmoid(z);
            let feats = [xi[0], xi[1], 1.0];
            let r = d.c * si * (p - yi);
            let curv = d.c * si * p * (1.0 - p);
            for a in 0..3 {
                g[a] += r * feats[a];
                for bb in 0..3 {
                    h[a][bb] += curv * feats[a] * feats[bb];
                }
            }
        }
        let gnorm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if gnorm < GRAD_TOL {
            return Ok(LogisticModel { w, b });
        }
        // keeps the intercept direction solvable when all curvature vanishes
        h[2][2] += 1e-12;
        let step = solve3(h, g);
        let slope = -(g[0] * step[0] + g[1] * step[1] + g[2] * step[2]);
        let mut t = 1.0;
        loop {
            let nw = [w[0] - t * step[0], w[1] - t * step[1]];
            let nb = b - t * step[2];
            let nf = objective(&nw, nb);
            // near the optimum the decrease is below rounding of f
            let flat = (nf - f).abs() <= 1e-13 * f.abs().max(1.0);
            if nf <= f + 1e-4 * t * slope || flat || t < 1e-12 {
                w = nw;
                b = nb;
                f = nf;
                break;
            }
            t *= 0.5;
        }
    }
    Err(LogisticError::NoConvergence(NEWTON_MAX_ITER))
}

/// Smooth-part gradient and curvature along coordinate `j` (2 = intercept).
fn coordinate_derivatives(d: &Data, w: &[f64; 2], b: f64, j: usize) -> (f64, f64) {
    let mut g = 0.0;
    let mut h = 0.0;
    for ((xi, &yi), &si) in d.x.iter().zip(&d.y).zip(d.s) {
        let p = sigmoid(w[0] * xi[0] + w[1] * xi[1] + b);
        let f = if j == 2 { 1.0 } else { xi[j] };
        g += d.c * si * (p - yi) * f;
        h += d.c * si * p * (1.0 - p) * f * f;
    }
    (g, h.max(1e-12))
}

fn coordinate_descent_l1(d: &Data) -> Result<LogisticModel, LogisticError> {
    let objective = |w: &[f64; 2], b: f64| w[0].abs() + w[1].abs() + d.loss(w, b);
    let mut w = [0.0, 0.0];
    let mut b = 0.0;
    let mut f = objective(&w, b);
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_move: f64 = 0.0;
        for j in 0..3 {
            let (g, h) = coordinate_derivatives(d, &w, b, j);
            let current = if j == 2 { b } else { w[j] };
            // minimizer of g·δ + ½h·δ² (+ |current + δ| for penalized coordinates)
            let delta = if j == 2 {
                -g / h
            } else if g + 1.0 <= h * current {
                -(g + 1.0) / h
            } else if g - 1.0 >= h * current {
                -(g - 1.0) / h
            } else {
                -current
            };
            if delta == 0.0 {
                continue;
            }
            let model_decrease = g * delta + if j == 2 { 0.0 } else { (current + delta).abs() - current.abs() };
            let mut t = 1.0;
            loop {
                let mut nw = w;
                let mut nb = b;
                if j == 2 {
                    nb = b + t * delta;
                } else {
                    nw[j] = current + t * delta;
                }
                let nf = objective(&nw, nb);
                if nf <= f + 1e-4 * t * model_decrease || t < 1e-12 {
                    if nf <= f {
                        w = nw;
                        b = nb;
                        f = nf;
                        max_move = max_move.max((t * delta).abs());
                    }
                    break;
                }
                t *= 0.5;
            }
        }
        if max_move < CD_STEP_TOL {
            return Ok(LogisticModel { w, b });
        }
    }
    Err(LogisticError::NoConvergence(CD_MAX_SWEEPS))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<[f64; 2]>, Vec<bool>) {
        let x: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let t = i as f64 / 39.0 * 4.0 - 2.0;
                [t, ((i * 13) % 7) as f64 / 7.0 - 0.5]
            })
            .collect();
        let labels: Vec<bool> = x.iter().enumerate().map(|(i, v)| v[0] + 0.3 * v[1] > 0.0 || i % 9 == 0).collect();
        (x, labels)
    }

    fn objective(x: &[[f64; 2]], labels: &[bool], s: &[f64], c: f64, pen: Penalty, m: &LogisticModel) -> f64 {
        let d = Data { x, y: labels.iter().map(|&l| f64::from(u8::from(l))).collect(), s, c };
        let r = match pen {
            Penalty::L2 => 0.5 * (m.w[0] * m.w[0] + m.w[1] * m.w[1]),
            Penalty::L1 => m.w[0].abs() + m.w[1].abs(),
        };
        r + d.loss(&m.w, m.b)
    }

    #[test]
    fn solutions_are_local_minima_under_perturbation() {
        let (x, labels) = fixture();
        let s = vec![1.0; x.len()];
        for pen in [Penalty::L1, Penalty::L2] {
            for c in [0.1, 1.0, 10.0] {
                let m = train_logistic(&x, &labels, &s, c, pen).unwrap();
                let base = objective(&x, &labels, &s, c, pen, &m);
                for (dw0, dw1, db) in [
                    (1e-4, 0.0, 0.0),
                    (-1e-4, 0.0, 0.0),
                    (0.0, 1e-4, 0.0),
                    (0.0, -1e-4, 0.0),
                    (0.0, 0.0, 1e-4),
                    (0.0, 0.0, -1e-4),
                ] {
                    let p = LogisticModel { w: [m.w[0] + dw0, m.w[1] + dw1], b: m.b + db };
                    assert!(objective(&x, &labels, &s, c, pen, &p) >= base - 1e-10, "{pen:?} C={c}");
                }
                assert!(m.w[0] > 0.0);
            }
        }
    }

    #[test]
    fn strong_l1_penalty_zeroes_weights() {
        let (x, labels) = fixture();
        let s = vec![1.0; x.len()];
        let m = train_logistic(&x, &labels, &s, 1e-4, Penalty::L1).unwrap();
        assert_eq!(m.w, [0.0, 0.0]);
        // intercept alone matches the base rate
        let rate = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        assert!((sigmoid(m.b) - rate).abs() < 1e-6);
    }

    #[test]
    fn overlapping_weighted_classes_converge() {
        // irrational-ish features so the optimum is not representable exactly
        let x: Vec<[f64; 2]> = (0..60)
            .map(|i| {
                let t = i as f64;
                [(t * 0.618_034).fract() * 2.0 - 1.0, (t * 0.414_214).fract() * 2.0 - 1.0]
            })
            .collect();
        let labels: Vec<bool> = x.iter().enumerate().map(|(i, v)| (v[0] + v[1] > 0.0) ^ (i % 4 == 0)).collect();
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64;
        let s: Vec<f64> = labels.iter().map(|&l| n / (2.0 * if l { pos } else { n - pos })).collect();
        for c in [0.1, 1.0, 10.0, 100.0] {
            assert!(train_logistic(&x, &labels, &s, c, Penalty::L2).is_ok(), "C={c}");
            assert!(train_logistic(&x, &labels, &s, c, Penalty::L1).is_ok(), "C={c}");
        }
    }

    #[test]
    fn null_model_scores_zero() {
        let m = LogisticModel { w: [0.0, 0.0], b: 0.0 };
        assert_eq!(m.decision(&[3.0, -2.0]), 0.0);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let r = train_logistic(&[[0.0, 0.0], [1.0, 0.0]], &[false, false], &[1.0, 1.0], 1.0, Penalty::L2);
        assert_eq!(r, Err(LogisticError::DegenerateLabels));
    }
}
