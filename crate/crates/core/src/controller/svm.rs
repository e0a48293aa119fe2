//! Kernel support vector classifiers trained by sequential minimal
//! optimization.
//!
//! Two duals are solved. The soft-margin C-SVC dual
//!
//! ```text
//! min ½ αᵀQα − eᵀα   s.t.  yᵀα = 0,  0 ≤ αᵢ ≤ Cᵢ
//! ```
//!
//! and the ν-parameterized dual
//!
//! ```text
//! min ½ αᵀQα   s.t.  yᵀα = 0,  eᵀα = ν·ΣCᵢ,  0 ≤ αᵢ ≤ Cᵢ
//! ```
//!
//! with `Qᵢⱼ = yᵢyⱼk(xᵢ, xⱼ)`. Working pairs are chosen by maximal violation
//! for the first index and second-order gain for the second. The iteration
//! stops when the maximal KKT violation gap drops below the tolerance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Curvature substituted for non-positive pair curvature (indefinite kernels).
const TAU: f64 = 1e-12;

pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
    Poly { gamma: f64, degree: u32, coef0: f64 },
    Sigmoid { gamma: f64, coef0: f64 },
}

impl Kernel {
    pub fn eval(&self, u: &[f64; 2], v: &[f64; 2]) -> f64 {
        let dot = u[0] * v[0] + u[1] * v[1];
        match *self {
            Kernel::Linear => dot,
            Kernel::Rbf { gamma } => {
                let d0 = u[0] - v[0];
                let d1 = u[1] - v[1];
                (-gamma * (d0 * d0 + d1 * d1)).exp()
            }
            Kernel::Poly { gamma, degree, coef0 } => (gamma * dot + coef0).powi(degree as i32),
            Kernel::Sigmoid { gamma, coef0 } => (gamma * dot + coef0).tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SvmError {
    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),
    #[error("training data must contain both classes")]
    DegenerateLabels,
    #[error("features and labels differ in length")]
    LengthMismatch,
    #[error("nu must lie in (0, 1), got {0}")]
    InvalidNu(String),
    #[error("nu-SVC solution is degenerate (r = {0})")]
    DegenerateNu(String),
}

/// Solver output in dual form.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Labels as ±1.
    pub y: Vec<f64>,
    pub upper: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

/// A trained classifier: `f(x) = Σ coefᵢ·k(svᵢ, x) − rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support_vectors: Vec<[f64; 2]>,
    pub coef: Vec<f64>,
    pub rho: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64; 2]) -> f64 {
        self.support_vectors.iter().zip(&self.coef).map(|(sv, c)| c * self.kernel.eval(sv, x)).sum::<f64>() - self.rho
    }

    fn from_coefficients(kernel: Kernel, x: &[[f64; 2]], coef: Vec<f64>, rho: f64) -> Self {
        let mut support_vectors = Vec::new();
        let mut kept = Vec::new();
        for (xi, c) in x.iter().zip(coef) {
            if c != 0.0 {
                support_vectors.push(*xi);
                kept.push(c);
            }
        }
        SvmModel { kernel, support_vectors, coef: kept, rho }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoSettings {
    pub tolerance: f64,
    /// Defaults to `10·n²` when unset.
    pub max_iter: Option<usize>,
}

impl Default for SmoSettings {
    fn default() -> Self {
        SmoSettings { tolerance: DEFAULT_TOLERANCE, max_iter: None }
    }
}

struct Problem<'a> {
    q: Vec<f64>,
    qd: Vec<f64>,
    y: &'a [f64],
    upper: &'a [f64],
    n: usize,
}

impl Problem<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.n..(i + 1) * self.n]
    }
}

fn kernel_matrix(x: &[[f64; 2]], y: &[f64], kernel: &Kernel) -> Vec<f64> {
    let n = x.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = y[i] * y[j] * kernel.eval(&x[i], &x[j]);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    q
}

fn signs(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect()
}

struct Solver<'a> {
    p: &'a Problem<'a>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    nu: bool,
}

impl Solver<'_> {
    fn at_upper(&self, i: usize) -> bool {
        self.alpha[i] >= self.p.upper[i]
    }

    fn at_lower(&self, i: usize) -> bool {
        self.alpha[i] <= 0.0
    }

    fn gain(&self, grad_diff: f64, quad: f64) -> f64 {
        let quad = if quad > 0.0 { quad } else { TAU };
        -(grad_diff * grad_diff) / quad
    }

    /// Working pair for the C-SVC dual, or `None` at optimality.
    fn select_c(&self, eps: f64) -> Option<(usize, usize)> {
        let y = self.p.y;
        let g = &self.grad;
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..self.p.n {
            if y[t] > 0.0 {
                if !self.at_upper(t) && -g[t] >= gmax {
                    gmax = -g[t];
                    gmax_idx = Some(t);
                }
            } else if !self.at_lower(t) && g[t] >= gmax {
                gmax = g[t];
                gmax_idx = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut gmin_idx = None;
        let mut best = f64::INFINITY;
        let qi = gmax_idx.map(|i| self.p.row(i));
        for j in 0..self.p.n {
            if y[j] > 0.0 {
                if !self.at_lower(j) {
                    let grad_diff = gmax + g[j];
                    gmax2 = gmax2.max(g[j]);
                    if grad_diff > 0.0 {
                        let i = gmax_idx.unwrap();
                        let quad = self.p.qd[i] + self.p.qd[j] - 2.0 * y[i] * qi.unwrap()[j];
                        let obj = self.gain(grad_diff, quad);
                        if obj <= best {
                            best = obj;
                            gmin_idx = Some(j);
                        }
                    }
                }
            } else if !self.at_upper(j) {
                let grad_diff = gmax - g[j];
                gmax2 = gmax2.max(-g[j]);
                if grad_diff > 0.0 {
                    let i = gmax_idx.unwrap();
                    let quad = self.p.qd[i] + self.p.qd[j] + 2.0 * y[i] * qi.unwrap()[j];
                    let obj = self.gain(grad_diff, quad);
                    if obj <= best {
                        best = obj;
                        gmin_idx = Some(j);
                    }
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        Some((gmax_idx?, gmin_idx?))
    }

    /// Working pair for the ν dual; both indices share a class.
    fn select_nu(&self, eps: f64) -> Option<(usize, usize)> {
        let y = self.p.y;
        let g = &self.grad;
        let (mut gmaxp, mut gmaxn) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let (mut ip, mut in_) = (None, None);
        for t in 0..self.p.n {
            if y[t] > 0.0 {
                if !self.at_upper(t) && -g[t] >= gmaxp {
                    gmaxp = -g[t];
                    ip = Some(t);
                }
            } else if !self.at_lower(t) && g[t] >= gmaxn {
                gmaxn = g[t];
                in_ = Some(t);
            }
        }
        let (mut gmaxp2, mut gmaxn2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut gmin_idx = None;
        let mut best = f64::INFINITY;
        for j in 0..self.p.n {
            if y[j] > 0.0 {
                if !self.at_lower(j) {
                    let grad_diff = gmaxp + g[j];
                    gmaxp2 = gmaxp2.max(g[j]);
                    if grad_diff > 0.0 {
                        let i = ip.unwrap();
                        let quad = self.p.qd[i] + self.p.qd[j] - 2.0 * self.p.row(i)[j];
                        let obj = self.gain(grad_diff, quad);
                        if obj <= best {
                            best = obj;
                            gmin_idx = Some(j);
                        }
                    }
                }
            } else if !self.at_upper(j) {
                let grad_diff = gmaxn - g[j];
                gmaxn2 = gmaxn2.max(-g[j]);
                if grad_diff > 0.0 {
                    let i = in_.unwrap();
                    let quad = self.p.qd[i] + self.p.qd[j] - 2.0 * self.p.row(i)[j];
                    let obj = self.gain(grad_diff, quad);
                    if obj <= best {
                        best = obj;
                        gmin_idx = Some(j);
                    }
                }
            }
        }
        if (gmaxp + gmaxp2).max(gmaxn + gmaxn2) < eps {
            return None;
        }
        let j = gmin_idx?;
        let i = if y[j] > 0.0 { ip? } else { in_? };
        Some((i, j))
    }

    /// Analytic two-variable update followed by the gradient refresh.
    fn update_pair(&mut self, i: usize, j: usize) {
        let p = self.p;
        let (ci, cj) = (p.upper[i], p.upper[j]);
        let qi_j = p.row(i)[j];
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let a = &mut self.alpha;
        let g = &self.grad;
        if p.y[i] != p.y[j] {
            let quad = p.qd[i] + p.qd[j] + 2.0 * qi_j;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > ci - cj {
                if a[i] > ci {
                    a[i] = ci;
                    a[j] = ci - diff;
                }
            } else if a[j] > cj {
                a[j] = cj;
                a[i] = cj + diff;
            }
        } else {
            let quad = p.qd[i] + p.qd[j] - 2.0 * qi_j;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > ci {
                if a[i] > ci {
                    a[i] = ci;
                    a[j] = sum - ci;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > cj {
                if a[j] > cj {
                    a[j] = cj;
                    a[i] = sum - cj;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (self.alpha[i] - old_i, self.alpha[j] - old_j);
        let (ri, rj) = (p.row(i), p.row(j));
        for (k, gk) in self.grad.iter_mut().enumerate() {
            *gk += ri[k] * di + rj[k] * dj;
        }
    }

    fn run(&mut self, eps: f64, max_iter: usize) -> Result<usize, SvmError> {
        let mut iter = 0;
        loop {
            let pair = if self.nu { self.select_nu(eps) } else { self.select_c(eps) };
            let Some((i, j)) = pair else {
                return Ok(iter);
            };
            if iter >= max_iter {
                return Err(SvmError::NoConvergence(max_iter));
            }
            iter += 1;
            self.update_pair(i, j);
        }
    }

    fn rho_c(&self) -> f64 {
        let y = self.p.y;
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for i in 0..self.p.n {
            let yg = y[i] * self.grad[i];
            if self.at_upper(i) {
                if y[i] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(i) {
                if y[i] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        if free > 0 {
            sum_free / free as f64
        } else {
            (ub + lb) / 2.0
        }
    }

    /// `(rho, r)` for the ν dual.
    fn rho_nu(&self) -> (f64, f64) {
        let mut stats = [(f64::INFINITY, f64::NEG_INFINITY, 0usize, 0.0); 2];
        for i in 0..self.p.n {
            let s = &mut stats[usize::from(self.p.y[i] < 0.0)];
            let gi = self.grad[i];
            if self.at_upper(i) {
                s.1 = s.1.max(gi);
            } else if self.at_lower(i) {
                s.0 = s.0.min(gi);
            } else {
                s.2 += 1;
                s.3 += gi;
            }
        }
        let r_of = |(ub, lb, free, sum): (f64, f64, usize, f64)| {
            if free > 0 {
                sum / free as f64
            } else {
                (ub + lb) / 2.0
            }
        };
        let r1 = r_of(stats[0]);
        let r2 = r_of(stats[1]);
        ((r1 - r2) / 2.0, (r1 + r2) / 2.0)
    }
}

fn check(x: &[[f64; 2]], labels: &[bool], weights: &[f64]) -> Result<(), SvmError> {
    if x.len() != labels.len() || x.len() != weights.len() {
        return Err(SvmError::LengthMismatch);
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(SvmError::DegenerateLabels);
    }
    Ok(())
}

fn cap(settings: &SmoSettings, n: usize) -> usize {
    settings.max_iter.unwrap_or(10 * n * n)
}

/// Solve the C-SVC dual with per-sample upper bounds `c·weightsᵢ`.
pub fn solve_c_svc(
    x: &[[f64; 2]],
    labels: &[bool],
    weights: &[f64],
    c: f64,
    kernel: Kernel,
    settings: &SmoSettings,
) -> Result<DualSolution, SvmError> {
    check(x, labels, weights)?;
    let n = x.len();
    let y = signs(labels);
    let upper: Vec<f64> = weights.iter().map(|w| c * w).collect();
    let q = kernel_matrix(x, &y, &kernel);
    let qd = (0..n).map(|i| q[i * n + i]).collect();
    let problem = Problem { q, qd, y: &y, upper: &upper, n };
    let mut solver = Solver { p: &problem, alpha: vec![0.0; n], grad: vec![-1.0; n], nu: false };
    let iterations = solver.run(settings.tolerance, cap(settings, n))?;
    let rho = solver.rho_c();
    let alpha = solver.alpha;
    Ok(DualSolution { alpha, y, upper, rho, iterations })
}

/// Solve the ν dual with per-sample upper bounds `weightsᵢ`; the returned
/// solution is rescaled so that margins sit at ±1.
pub fn solve_nu_svc(
    x: &[[f64; 2]],
    labels: &[bool],
    weights: &[f64],
    nu: f64,
    kernel: Kernel,
    settings: &SmoSettings,
) -> Result<DualSolution, SvmError> {
    check(x, labels, weights)?;
    if !(nu > 0.0 && nu < 1.0) {
        return Err(SvmError::InvalidNu(nu.to_string()));
    }
    let n = x.len();
    let y = signs(labels);
    let upper = weights.to_vec();
    let total: f64 = upper.iter().sum();
    let mut budget = [nu * total / 2.0; 2];
    let mut alpha = vec![0.0; n];
    for i in 0..n {
        let b = &mut budget[usize::from(y[i] < 0.0)];
        alpha[i] = upper[i].min(*b);
        *b -= alpha[i];
    }
    let q = kernel_matrix(x, &y, &kernel);
    let qd = (0..n).map(|i| q[i * n + i]).collect();
    let mut grad = vec![0.0; n];
    for (i, &ai) in alpha.iter().enumerate() {
        if ai != 0.0 {
            for (k, gk) in grad.iter_mut().enumerate() {
                *gk += ai * q[i * n + k];
            }
        }
    }
    let problem = Problem { q, qd, y: &y, upper: &upper, n };
    let mut solver = Solver { p: &problem, alpha, grad, nu: true };
    let iterations = solver.run(settings.tolerance, cap(settings, n))?;
    let (rho, r) = solver.rho_nu();
    if r.is_nan() || r <= 0.0 || !r.is_finite() {
        return Err(SvmError::DegenerateNu(r.to_string()));
    }
    let alpha = solver.alpha.iter().map(|a| a / r).collect();
    let upper = upper.iter().map(|u| u / r).collect();
    Ok(DualSolution { alpha, y, upper, rho: rho / r, iterations })
}

impl DualSolution {
    pub fn into_model(self, kernel: Kernel, x: &[[f64; 2]]) -> SvmModel {
        let coef = self.alpha.iter().zip(&self.y).map(|(a, y)| a * y).collect();
        SvmModel::from_coefficients(kernel, x, coef, self.rho)
    }
}

pub fn train_c_svc(
    x: &[[f64; 2]],
    labels: &[bool],
    weights: &[f64],
    c: f64,
    kernel: Kernel,
    settings: &SmoSettings,
) -> Result<SvmModel, SvmError> {
    Ok(solve_c_svc(x, labels, weights, c, kernel, settings)?.into_model(kernel, x))
}

pub fn train_nu_svc(
    x: &[[f64; 2]],
    labels: &[bool],
    weights: &[f64],
    nu: f64,
    kernel: Kernel,
    settings: &SmoSettings,
) -> Result<SvmModel, SvmError> {
    Ok(solve_nu_svc(x, labels, weights, nu, kernel, settings)?.into_model(kernel, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_weights(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn kernels_match_definitions() {
        let u = [1.0, 2.0];
        let v = [0.5, -1.0];
        assert_eq!(Kernel::Linear.eval(&u, &v), -1.5);
        assert!((Kernel::Rbf { gamma: 0.5 }.eval(&u, &v) - (-0.5f64 * 9.25).exp()).abs() < 1e-15);
        assert_eq!(Kernel::Poly { gamma: 1.0, degree: 2, coef0: 1.0 }.eval(&u, &v), 0.25);
        assert_eq!(Kernel::Sigmoid { gamma: 1.0, coef0: 1.5 }.eval(&u, &v), 0.0);
    }

    #[test]
    fn symmetric_pair_has_zero_midpoint_and_unit_margins() {
        let x = [[-1.0, 0.0], [1.0, 0.0]];
        let labels = [false, true];
        let m = train_c_svc(&x, &labels, &unit_weights(2), 100.0, Kernel::Linear, &SmoSettings::default()).unwrap();
        assert!(m.decision(&[0.0, 0.0]).abs() < 1e-12);
        assert!((m.decision(&x[1]) - 1.0).abs() < 1e-3);
        assert!((m.decision(&x[0]) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let x = [[0.0, 0.0], [1.0, 1.0]];
        let r = train_c_svc(&x, &[true, true], &unit_weights(2), 1.0, Kernel::Linear, &SmoSettings::default());
        assert_eq!(r, Err(SvmError::DegenerateLabels));
        let r = train_nu_svc(&x, &[true, false], &unit_weights(2), 1.0, Kernel::Linear, &SmoSettings::default());
        assert!(matches!(r, Err(SvmError::InvalidNu(_))));
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let x: Vec<[f64; 2]> = (0..12).map(|i| [i as f64 * 0.37 % 1.0, (i * 7 % 5) as f64]).collect();
        let labels: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        let settings = SmoSettings { tolerance: 1e-3, max_iter: Some(1) };
        let r = train_c_svc(&x, &labels, &unit_weights(12), 10.0, Kernel::Rbf { gamma: 1.0 }, &settings);
        assert_eq!(r, Err(SvmError::NoConvergence(1)));
    }
}
