//! Optimality conditions of the hand-written SMO solvers.

use metaharness::controller::search::balanced_weights;
use metaharness::controller::svm::{solve_c_svc, solve_nu_svc, train_c_svc, DualSolution, Kernel, SmoSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize, seed: u64, shift: f64, pos_fraction: f64) -> (Vec<[f64; 2]>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let label = rng.random_bool(pos_fraction);
        let c = if label { shift } else { -shift };
        x.push([c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)]);
        y.push(label);
    }
    (x, y)
}

fn margins(sol: &DualSolution, x: &[[f64; 2]], kernel: Kernel) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let f: f64 =
                (0..x.len()).map(|j| sol.alpha[j] * sol.y[j] * kernel.eval(&x[j], &x[i])).sum::<f64>() - sol.rho;
            sol.y[i] * f
        })
        .collect()
}

fn assert_kkt(sol: &DualSolution, x: &[[f64; 2]], kernel: Kernel, tol: f64) {
    let balance: f64 = sol.alpha.iter().zip(&sol.y).map(|(a, y)| a * y).sum();
    assert!(balance.abs() < 1e-8, "equality constraint violated: {balance}");
    for (i, m) in margins(sol, x, kernel).into_iter().enumerate() {
        let (a, u) = (sol.alpha[i], sol.upper[i]);
        assert!(a >= -1e-12 && a <= u + 1e-12, "alpha out of box at {i}");
        if a <= 1e-12 {
            assert!(m >= 1.0 - tol, "free-of-support point inside margin at {i}: {m}");
        } else if a >= u - 1e-12 {
            assert!(m <= 1.0 + tol, "bounded point outside margin at {i}: {m}");
        } else {
            assert!((m - 1.0).abs() <= tol, "free support vector off margin at {i}: {m}");
        }
    }
}

#[test]
fn c_svc_satisfies_kkt_across_kernels() {
    let (x, y) = blobs(80, 3, 0.6, 0.5);
    let w = balanced_weights(&y);
    let kernels = [Kernel::Linear, Kernel::Rbf { gamma: 0.5 }, Kernel::Poly { gamma: 0.5, degree: 2, coef0: 1.0 }];
    for kernel in kernels {
        for c in [0.1, 1.0, 10.0] {
            let sol = solve_c_svc(&x, &y, &w, c, kernel, &SmoSettings::default()).unwrap();
            assert_kkt(&sol, &x, kernel, 5e-3);
        }
    }
}

#[test]
fn nu_svc_satisfies_kkt_and_nu_bounds() {
    let (x, y) = blobs(100, 5, 0.8, 0.5);
    let ones = vec![1.0; x.len()];
    let kernel = Kernel::Rbf { gamma: 1.0 };
    for nu in [0.3, 0.5, 0.8] {
        let sol = solve_nu_svc(&x, &y, &ones, nu, kernel, &SmoSettings::default()).unwrap();
        assert_kkt(&sol, &x, kernel, 5e-3);
        let n = x.len() as f64;
        let support = sol.alpha.iter().filter(|&&a| a > 1e-12).count() as f64 / n;
        let bounded = sol.alpha.iter().zip(&sol.upper).filter(|(a, u)| **a >= **u - 1e-12).count() as f64 / n;
        assert!(bounded <= nu + 0.02, "margin-error fraction {bounded} exceeds nu {nu}");
        assert!(support >= nu - 0.02, "support-vector fraction {support} below nu {nu}");
    }
}

#[test]
fn rbf_separates_xor() {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..120 {
        let p = [rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64)];
        if p[0].abs() < 0.1 || p[1].abs() < 0.1 {
            continue;
        }
        y.push(p[0] * p[1] > 0.0);
        x.push(p);
    }
    let w = balanced_weights(&y);
    let rbf = train_c_svc(&x, &y, &w, 100.0, Kernel::Rbf { gamma: 2.0 }, &SmoSettings::default()).unwrap();
    let hits = x.iter().zip(&y).filter(|(p, l)| (rbf.decision(p) > 0.0) == **l).count();
    assert_eq!(hits, x.len());
    let linear = train_c_svc(&x, &y, &w, 1.0, Kernel::Linear, &SmoSettings::default()).unwrap();
    let linear_hits = x.iter().zip(&y).filter(|(p, l)| (linear.decision(p) > 0.0) == **l).count();
    assert!((linear_hits as f64) < 0.8 * x.len() as f64);
}

#[test]
fn balanced_weights_protect_the_minority_class() {
    let (x, y) = blobs(200, 9, 0.25, 0.1);
    let n_pos = y.iter().filter(|&&l| l).count();
    let w = balanced_weights(&y);
    let total_pos: f64 = w.iter().zip(&y).filter(|(_, l)| **l).map(|(w, _)| w).sum();
    let total_neg: f64 = w.iter().zip(&y).filter(|(_, l)| !**l).map(|(w, _)| w).sum();
    assert!((total_pos - total_neg).abs() < 1e-9);
    let kernel = Kernel::Linear;
    let weighted = train_c_svc(&x, &y, &w, 1.0, kernel, &SmoSettings::default()).unwrap();
    let unweighted = train_c_svc(&x, &y, &vec![1.0; x.len()], 1.0, kernel, &SmoSettings::default()).unwrap();
    let recall = |m: &metaharness::controller::svm::SvmModel| {
        x.iter().zip(&y).filter(|(p, l)| **l && m.decision(p) > 0.0).count() as f64 / n_pos as f64
    };
    assert!(recall(&weighted) >= recall(&unweighted));
    assert!(recall(&weighted) >= 0.6, "minority recall {}", recall(&weighted));
}
