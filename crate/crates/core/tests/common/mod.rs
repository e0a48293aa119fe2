//! Fixtures shared by the integration suites.
#![allow(dead_code)]

use std::sync::OnceLock;

use metaharness::backend::{Agents, Latent, SimBackend, SimulatorSpec};
use metaharness::controller::{cross_validated_search, Controller, CvPlan, Signals, DEFAULT_P_STOP};
use metaharness::evalkit::elicit_anchors;
use metaharness::harness::HarnessConfig;
use metaharness::{AnchorTriple, Problem};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` anchors with uniform FOK and JOL and `y ~ Bernoulli(σ(4·(FOK + JOL − 1)))`.
pub fn logistic_anchors(n: usize, seed: u64) -> Vec<AnchorTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let f: f64 = rng.random();
            let j: f64 = rng.random();
            let p = 1.0 / (1.0 + (-4.0 * (f + j - 1.0)).exp());
            AnchorTriple::new(f, j, rng.random_bool(p), format!("a{i}")).unwrap()
        })
        .collect()
}

/// Same signals with the labels permuted.
pub fn shuffle_labels(anchors: &[AnchorTriple], seed: u64) -> Vec<AnchorTriple> {
    let mut labels: Vec<bool> = anchors.iter().map(|a| a.y).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    anchors.iter().zip(labels).map(|(a, y)| AnchorTriple { y, ..a.clone() }).collect()
}

pub fn problems(prefix: &str, n: usize) -> Vec<Problem> {
    (0..n)
        .map(|i| Problem::new(format!("{prefix}{i:04}"), format!("Problem {i}.")).with_gold(format!("gold-{i}")))
        .collect()
}

/// Zero-noise simulator whose JOL is exactly 1 on correct attempts and 0
/// otherwise; wrong attempts on one problem never share an answer.
pub fn oracle_spec(latent: Latent) -> SimulatorSpec {
    SimulatorSpec { latent, distinct_wrong_answers: true, ..SimulatorSpec::constant(0.5) }
}

/// Controller fitted on 100 anchors elicited from the oracle simulator with
/// latent `p ~ Uniform(0, 1)`.
pub fn oracle_controller() -> &'static Controller {
    static CTL: OnceLock<Controller> = OnceLock::new();
    CTL.get_or_init(|| {
        let ps = problems("anchor", 100);
        let sim = SimBackend::new(oracle_spec(Latent::Uniform { low: 0.0, high: 1.0, seed: 17 }), &ps).unwrap();
        let anchors = elicit_anchors(&ps, Agents::same(&sim), &HarnessConfig::default(), 17).unwrap();
        cross_validated_search(&anchors, &CvPlan::new(17), Signals::Joint, "oracle-sim", DEFAULT_P_STOP)
            .unwrap()
            .controller
    })
}
