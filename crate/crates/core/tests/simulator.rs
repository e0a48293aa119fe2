//! Statistical behaviour of the seeded simulator.

mod common;

use metaharness::backend::{Agents, Latent, SimBackend, SimulatorSpec};
use metaharness::evalkit::{run_policy, LogRecord};
use metaharness::harness::{HarnessConfig, Policy};

fn pass1(spec: SimulatorSpec, n: usize, seed: u64) -> Vec<LogRecord> {
    let ps = common::problems("s", n);
    let sim = SimBackend::new(spec, &ps).unwrap();
    run_policy(&ps, Agents::same(&sim), Policy::Pass1, None, &HarnessConfig::default(), seed).unwrap()
}

#[test]
fn accuracy_tracks_latent_p() {
    for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let records = pass1(SimulatorSpec::constant(p), 2000, 8);
        let acc = records.iter().filter(|r| r.grading.as_ref().unwrap().final_correct).count() as f64 / 2000.0;
        assert!((acc - p).abs() < 0.04, "p {p}: accuracy {acc}");
    }
}

#[test]
fn noisy_signals_are_centred_on_their_targets() {
    let spec = SimulatorSpec {
        fok_noise_sd: 0.1,
        jol_noise_sd: 0.1,
        jol_correctness_weight: 0.0,
        ..SimulatorSpec::constant(0.5)
    };
    let records = pass1(spec, 2000, 9);
    let fok: Vec<f64> = records.iter().map(|r| r.trajectory.as_ref().unwrap().fok.fok_score.get()).collect();
    let jol: Vec<f64> =
        records.iter().map(|r| r.trajectory.as_ref().unwrap().attempts[0].jol.jol_score.get()).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    for v in [&fok, &jol] {
        assert!((mean(v) - 0.5).abs() < 0.01);
        assert!((sd(v) - 0.1).abs() < 0.01);
    }
}

#[test]
fn uniform_latent_spreads_fok() {
    let records = pass1(common::oracle_spec(Latent::Uniform { low: 0.0, high: 1.0, seed: 3 }), 1000, 10);
    let low = records.iter().filter(|r| r.trajectory.as_ref().unwrap().fok.fok_score.get() < 0.5).count();
    assert!((400..600).contains(&low), "{low} of 1000 below 0.5");
    for r in &records {
        let t = r.trajectory.as_ref().unwrap();
        let jol = t.attempts[0].jol.jol_score.get();
        assert_eq!(jol == 1.0, r.grading.as_ref().unwrap().attempts[0]);
    }
}

#[test]
fn same_seed_same_log_and_new_seed_new_draws() {
    let spec = SimulatorSpec { fok_noise_sd: 0.2, ..SimulatorSpec::constant(0.5) };
    let a: Vec<String> = pass1(spec.clone(), 50, 1).iter().map(LogRecord::to_line).collect();
    let b: Vec<String> = pass1(spec.clone(), 50, 1).iter().map(LogRecord::to_line).collect();
    let c: Vec<String> = pass1(spec, 50, 2).iter().map(LogRecord::to_line).collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
