//! Fitting on a subset never reads rows outside it.

mod common;

use metaharness::controller::search::{fit_calibrated, CvPlan};
use metaharness::controller::{enumerate_search_space, Signals, Standardizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rows_outside_the_training_index_are_invisible() {
    let anchors = common::logistic_anchors(80, 12);
    let features: Vec<[f64; 2]> = anchors.iter().map(|a| [a.fok.get(), a.jol.get()]).collect();
    let labels: Vec<bool> = anchors.iter().map(|a| a.y).collect();
    let groups: Vec<String> = anchors.iter().map(|a| a.group_id.clone()).collect();
    let idx: Vec<usize> = (0..80).filter(|i| i % 4 != 0).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut features2 = features.clone();
    let mut labels2 = labels.clone();
    for i in (0..80).filter(|i| i % 4 == 0) {
        features2[i] = [rng.random(), rng.random()];
        labels2[i] = !labels2[i];
    }

    let s1 = Standardizer::fit(&features, &idx, [true, true]).unwrap();
    let s2 = Standardizer::fit(&features2, &idx, [true, true]).unwrap();
    assert_eq!(s1, s2);

    let plan = CvPlan::new(6);
    let space = enumerate_search_space();
    for config in space.iter().step_by(9) {
        let a = fit_calibrated(&features, &labels, &groups, &idx, config, Signals::Joint, &plan, 2);
        let b = fit_calibrated(&features2, &labels2, &groups, &idx, config, Signals::Joint, &plan, 2);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b, "{config:?}"),
            (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
            (a, b) => panic!("{config:?}: {a:?} vs {b:?}"),
        }
    }
}
