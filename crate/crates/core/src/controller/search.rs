//! Search space, fold plans, and cross-validated model selection.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{train_logistic, LogisticModel, Penalty};
use super::standardize::Standardizer;
use super::svm::{train_c_svc, train_nu_svc, Kernel, SmoSettings, SvmModel};
use super::{Controller, ControllerError, Provenance, Signals};
use crate::calibration::{CalibrationHead, HeadKind};
use crate::metrics::{auroc, ece, DEFAULT_ECE_BINS};
use crate::seed::{derive_indexed, derive_seed, rng_from};
use crate::types::AnchorTriple;

pub const MIN_ANCHORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / (n_features · Var)` over all entries of the standardized
    /// training matrix.
    Scale,
    #[serde(untagged)]
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SvcLinear,
    SvcRbf,
    SvcPoly,
    SvcSigmoid,
    NuSvcRbf,
    Logistic,
}

/// Hyperparameters of one estimator. Each family carries only its own.
/// Poly, sigmoid and ν families use `Gamma::Scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Estimator {
    SvcLinear { c: f64 },
    SvcRbf { c: f64, gamma: Gamma },
    SvcPoly { c: f64, degree: u32, coef0: f64 },
    SvcSigmoid { c: f64, coef0: f64 },
    NuSvcRbf { nu: f64 },
    Logistic { penalty: Penalty, c: f64 },
}

impl Estimator {
    pub fn family(&self) -> Family {
        match self {
            Estimator::SvcLinear { .. } => Family::SvcLinear,
            Estimator::SvcRbf { .. } => Family::SvcRbf,
            Estimator::SvcPoly { .. } => Family::SvcPoly,
            Estimator::SvcSigmoid { .. } => Family::SvcSigmoid,
            Estimator::NuSvcRbf { .. } => Family::NuSvcRbf,
            Estimator::Logistic { .. } => Family::Logistic,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::SvcLinear { c } => write!(f, "svc_linear(C={c})"),
            Estimator::SvcRbf { c, gamma: Gamma::Scale } => write!(f, "svc_rbf(C={c}, gamma=scale)"),
            Estimator::SvcRbf { c, gamma: Gamma::Value(g) } => write!(f, "svc_rbf(C={c}, gamma={g})"),
            Estimator::SvcPoly { c, degree, coef0 } => {
                write!(f, "svc_poly(d={degree}, coef0={coef0}, C={c})")
            }
            Estimator::SvcSigmoid { c, coef0 } => write!(f, "svc_sigmoid(C={c}, coef0={coef0})"),
            Estimator::NuSvcRbf { nu } => write!(f, "nu_svc_rbf(nu={nu})"),
            Estimator::Logistic { penalty, c } => {
                let p = match penalty {
                    Penalty::L1 => "l1",
                    Penalty::L2 => "l2",
                };
                write!(f, "logistic({p}, C={c})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub estimator: Estimator,
    pub calibration_head: HeadKind,
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.calibration_head {
            HeadKind::Isotonic => "isotonic",
            HeadKind::Sigmoid => "sigmoid",
        };
        write!(f, "{} + {head}", self.estimator)
    }
}

/// The 67 estimators in enumeration order.
pub fn estimator_grid() -> Vec<Estimator> {
    let mut out = Vec::with_capacity(67);
    for c in [0.01, 0.1, 1.0, 10.0, 100.0] {
        out.push(Estimator::SvcLinear { c });
    }
    for c in [0.1, 1.0, 10.0, 100.0] {
        for gamma in [Gamma::Scale, Gamma::Value(0.5), Gamma::Value(1.0), Gamma::Value(2.0), Gamma::Value(5.0)] {
            out.push(Estimator::SvcRbf { c, gamma });
        }
    }
    for degree in [2, 3, 4] {
        for coef0 in [0.0, 1.0, 2.0] {
            for c in [0.1, 1.0, 10.0] {
                out.push(Estimator::SvcPoly { c, degree, coef0 });
            }
        }
    }
    for c in [0.1, 1.0, 10.0] {
        for coef0 in [0.0, 1.0] {
            out.push(Estimator::SvcSigmoid { c, coef0 });
        }
    }
    for nu in [0.3, 0.5, 0.7] {
        out.push(Estimator::NuSvcRbf { nu });
    }
    for penalty in [Penalty::L1, Penalty::L2] {
        for c in [0.1, 1.0, 10.0] {
            out.push(Estimator::Logistic { penalty, c });
        }
    }
    out
}

/// All 134 candidates: every estimator crossed with both heads,
/// estimator-major.
pub fn enumerate_search_space() -> Vec<EstimatorConfig> {
    estimator_grid()
        .into_iter()
        .flat_map(|estimator| {
            HeadKind::ALL.into_iter().map(move |calibration_head| EstimatorConfig { estimator, calibration_head })
        })
        .collect()
}

/// Fitted decision function in standardized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedEstimator {
    Svm(SvmModel),
    Logistic(LogisticModel),
    /// Stand-in for a single-class training part.
    Constant {
        score: f64,
    },
}

impl FittedEstimator {
    pub fn decision(&self, x: &[f64; 2]) -> f64 {
        match self {
            FittedEstimator::Svm(m) => m.decision(x),
            FittedEstimator::Logistic(m) => m.decision(x),
            FittedEstimator::Constant { score } => *score,
        }
    }
}

/// `w_c = n / (2·n_c)` for each sample's class.
pub fn balanced_weights(labels: &[bool]) -> Vec<f64> {
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = n - n_pos;
    labels.iter().map(|&l| if l { n / (2.0 * n_pos) } else { n / (2.0 * n_neg) }).collect()
}

/// Resolve `gamma = scale` on a standardized design matrix.
pub fn scale_gamma(x: &[[f64; 2]]) -> f64 {
    let entries = x.len() as f64 * 2.0;
    let mean = x.iter().map(|r| r[0] + r[1]).sum::<f64>() / entries;
    let var = x.iter().map(|r| (r[0] - mean).powi(2) + (r[1] - mean).powi(2)).sum::<f64>() / entries;
    if var > 0.0 {
        1.0 / (2.0 * var)
    } else {
        1.0
    }
}

/// Train one estimator on standardized rows with balanced class weights.
pub fn train_estimator(
    estimator: &Estimator,
    x: &[[f64; 2]],
    labels: &[bool],
) -> Result<FittedEstimator, ControllerError> {
    let weights = balanced_weights(labels);
    let settings = SmoSettings::default();
    let gamma_of = |g: Gamma| match g {
        Gamma::Scale => scale_gamma(x),
        Gamma::Value(v) => v,
    };
    let fitted = match *estimator {
        Estimator::SvcLinear { c } => {
            FittedEstimator::Svm(train_c_svc(x, labels, &weights, c, Kernel::Linear, &settings)?)
        }
        Estimator::SvcRbf { c, gamma } => {
            let kernel = Kernel::Rbf { gamma: gamma_of(gamma) };
            FittedEstimator::Svm(train_c_svc(x, labels, &weights, c, kernel, &settings)?)
        }
        Estimator::SvcPoly { c, degree, coef0 } => {
            let kernel = Kernel::Poly { gamma: gamma_of(Gamma::Scale), degree, coef0 };
            FittedEstimator::Svm(train_c_svc(x, labels, &weights, c, kernel, &settings)?)
        }
        Estimator::SvcSigmoid { c, coef0 } => {
            let kernel = Kernel::Sigmoid { gamma: gamma_of(Gamma::Scale), coef0 };
            FittedEstimator::Svm(train_c_svc(x, labels, &weights, c, kernel, &settings)?)
        }
        Estimator::NuSvcRbf { nu } => {
            let kernel = Kernel::Rbf { gamma: gamma_of(Gamma::Scale) };
            FittedEstimator::Svm(train_nu_svc(x, labels, &weights, nu, kernel, &settings)?)
        }
        Estimator::Logistic { penalty, c } => {
            FittedEstimator::Logistic(train_logistic(x, labels, &weights, c, penalty)?)
        }
    };
    Ok(fitted)
}

/// Standardizer plus estimator, fitted together on one set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub standardizer: Standardizer,
    pub estimator: FittedEstimator,
}

impl Pipeline {
    pub fn decision(&self, x: &[f64; 2]) -> f64 {
        self.estimator.decision(&self.standardizer.transform(x))
    }
}

fn single_class(labels: &[bool], idx: &[usize]) -> Option<bool> {
    let first = labels[*idx.first()?];
    idx.iter().all(|&i| labels[i] == first).then_some(first)
}

pub fn fit_pipeline(
    features: &[[f64; 2]],
    labels: &[bool],
    idx: &[usize],
    estimator: &Estimator,
    signals: Signals,
) -> Result<Pipeline, ControllerError> {
    let standardizer = Standardizer::fit(features, idx, signals.active())?;
    if single_class(labels, idx).is_some() {
        return Ok(Pipeline { standardizer, estimator: FittedEstimator::Constant { score: 0.0 } });
    }
    let x: Vec<[f64; 2]> = idx.iter().map(|&i| standardizer.transform(&features[i])).collect();
    let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
    let estimator = train_estimator(estimator, &x, &y)?;
    Ok(Pipeline { standardizer, estimator })
}

/// Pipeline plus calibration head.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedModel {
    pub pipeline: Pipeline,
    pub head: CalibrationHead,
}

impl CalibratedModel {
    pub fn probability(&self, x: &[f64; 2]) -> f64 {
        self.head.apply(self.pipeline.decision(x))
    }
}

/// Fit standardizer, estimator and calibration head on the rows in `idx`.
///
/// The head is fitted on out-of-fold decision scores from an inner
/// stratified split of `idx`; the returned estimator is refitted on all of
/// `idx`. A single-class part yields a constant probability.
pub fn fit_calibrated(
    features: &[[f64; 2]],
    labels: &[bool],
    groups: &[String],
    idx: &[usize],
    config: &EstimatorConfig,
    signals: Signals,
    plan: &CvPlan,
    seed: u64,
) -> Result<CalibratedModel, ControllerError> {
    let pipeline = fit_pipeline(features, labels, idx, &config.estimator, signals)?;
    if let Some(class) = single_class(labels, idx) {
        let p = if class { 1.0 } else { 0.0 };
        return Ok(CalibratedModel { pipeline, head: CalibrationHead::Constant { p } });
    }
    let inner = split_indices(idx, labels, groups, plan.inner_splits, seed);
    let mut oof = vec![0.0; features.len()];
    for test in &inner {
        let train: Vec<usize> = idx.iter().copied().filter(|i| !test.contains(i)).collect();
        let model = fit_pipeline(features, labels, &train, &config.estimator, signals)?;
        for &i in test {
            oof[i] = model.decision(&features[i]);
        }
    }
    let scores: Vec<f64> = idx.iter().map(|&i| oof[i]).collect();
    let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
    let head = config.calibration_head.fit(&scores, &y)?;
    Ok(CalibratedModel { pipeline, head })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n_splits: usize,
    pub n_repeats: usize,
    pub inner_splits: usize,
    pub seed: u64,
    pub ece_bins: usize,
}

impl CvPlan {
    pub fn new(seed: u64) -> Self {
        CvPlan { n_splits: 5, n_repeats: 3, inner_splits: 3, seed, ece_bins: DEFAULT_ECE_BINS }
    }

    fn repeat_seed(&self, repeat: usize) -> u64 {
        derive_indexed(self.seed, "repeat", repeat as u64)
    }

    /// Seed for the inner split inside one outer fold.
    pub fn fold_seed(&self, repeat: usize, fold: usize) -> u64 {
        derive_indexed(self.repeat_seed(repeat), "fold", fold as u64)
    }

    /// Outer folds for every repeat, in `(repeat, fold)` order.
    pub fn folds(&self, labels: &[bool], groups: &[String]) -> Vec<Fold> {
        let all: Vec<usize> = (0..labels.len()).collect();
        let mut out = Vec::new();
        for repeat in 0..self.n_repeats {
            let tests = split_indices(&all, labels, groups, self.n_splits, self.repeat_seed(repeat));
            for (index, test) in tests.into_iter().enumerate() {
                let mut in_test = vec![false; labels.len()];
                for &i in &test {
                    in_test[i] = true;
                }
                let train = all.iter().copied().filter(|&i| !in_test[i]).collect();
                out.push(Fold { repeat, index, train, test });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub repeat: usize,
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition `idx` into `k` stratified test sets. When some group id repeats,
/// whole groups are assigned together.
pub fn split_indices(idx: &[usize], labels: &[bool], groups: &[String], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_from(seed);
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        by_group.entry(groups[i].as_str()).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    if by_group.len() == idx.len() {
        // every group is a singleton: deal each shuffled class round-robin
        let mut offset = 0;
        for class in [true, false] {
            let mut members: Vec<usize> = idx.iter().copied().filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            for (r, i) in members.into_iter().enumerate() {
                folds[(offset + r) % k].push(i);
            }
            offset = (offset + idx.iter().filter(|&&i| labels[i] == class).count()) % k;
        }
    } else {
        let mut blocks: Vec<Vec<usize>> = by_group.into_values().collect();
        blocks.shuffle(&mut rng);
        blocks.sort_by_key(|b| std::cmp::Reverse(b.len()));
        let total = [
            idx.iter().filter(|&&i| labels[i]).count().max(1) as f64,
            idx.iter().filter(|&&i| !labels[i]).count().max(1) as f64,
        ];
        let mut counts = vec![[0usize; 2]; k];
        for block in blocks {
            let pos = block.iter().filter(|&&i| labels[i]).count();
            let add = [pos, block.len() - pos];
            let mut best = (f64::INFINITY, usize::MAX, 0);
            for f in 0..k {
                let mut cost = 0.0;
                for c in 0..2 {
                    let fracs: Vec<f64> =
                        (0..k).map(|g| (counts[g][c] + if g == f { add[c] } else { 0 }) as f64 / total[c]).collect();
                    let m = fracs.iter().sum::<f64>() / k as f64;
                    cost += (fracs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k as f64).sqrt();
                }
                let size = counts[f][0] + counts[f][1];
                if (cost, size) < (best.0, best.1) {
                    best = (cost, size, f);
                }
            }
            let f = best.2;
            counts[f][0] += add[0];
            counts[f][1] += add[1];
            folds[f].extend(block);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    folds
}

/// Cross-validated score of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub config: EstimatorConfig,
    /// Mean over repeats of the pooled out-of-fold AUROC.
    pub mean_oof_auroc: Option<f64>,
    pub mean_oof_ece: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

struct Dataset {
    features: Vec<[f64; 2]>,
    labels: Vec<bool>,
    groups: Vec<String>,
}

fn oof_probabilities(
    data: &Dataset,
    config: &EstimatorConfig,
    signals: Signals,
    plan: &CvPlan,
    folds: &[Fold],
) -> Result<Vec<Vec<f64>>, ControllerError> {
    let n = data.labels.len();
    let mut per_repeat = vec![vec![f64::NAN; n]; plan.n_repeats];
    for fold in folds {
        let model = fit_calibrated(
            &data.features,
            &data.labels,
            &data.groups,
            &fold.train,
            config,
            signals,
            plan,
            plan.fold_seed(fold.repeat, fold.index),
        )?;
        for &i in &fold.test {
            per_repeat[fold.repeat][i] = model.probability(&data.features[i]);
        }
    }
    Ok(per_repeat)
}

fn summarize_oof(oof: &[Vec<f64>], labels: &[bool], bins: usize) -> Result<(f64, f64), ControllerError> {
    let mut a = 0.0;
    let mut e = 0.0;
    for probs in oof {
        a += auroc(probs, labels)?;
        e += ece(probs, labels, bins)?;
    }
    Ok((a / oof.len() as f64, e / oof.len() as f64))
}

fn evaluate(
    data: &Dataset,
    config: &EstimatorConfig,
    signals: Signals,
    plan: &CvPlan,
    folds: &[Fold],
) -> CandidateResult {
    let outcome = oof_probabilities(data, config, signals, plan, folds)
        .and_then(|oof| summarize_oof(&oof, &data.labels, plan.ece_bins));
    match outcome {
        Ok((a, e)) => {
            CandidateResult { config: *config, mean_oof_auroc: Some(a), mean_oof_ece: Some(e), failure: None }
        }
        Err(err) => CandidateResult {
            config: *config,
            mean_oof_auroc: None,
            mean_oof_ece: None,
            failure: Some(err.to_string()),
        },
    }
}

/// Index of the winner: highest AUROC, then lowest ECE, then earliest.
pub fn select_winner(results: &[CandidateResult]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        let (Some(a), Some(e)) = (r.mean_oof_auroc, r.mean_oof_ece) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((_, ba, be)) => a > ba || (a == ba && e < be),
        };
        if better {
            best = Some((i, a, e));
        }
    }
    best.map(|(i, _, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub controller: Controller,
    pub candidates: Vec<CandidateResult>,
    pub winner: usize,
    /// Winner's calibrated out-of-fold probabilities, one vector per repeat.
    pub winner_oof: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl SearchOutcome {
    pub fn failed_candidates(&self) -> usize {
        self.candidates.iter().filter(|c| c.failure.is_some()).count()
    }
}

fn dataset(anchors: &[AnchorTriple]) -> Dataset {
    Dataset {
        features: anchors.iter().map(|a| [a.fok.get(), a.jol.get()]).collect(),
        labels: anchors.iter().map(|a| a.y).collect(),
        groups: anchors.iter().map(|a| a.group_id.clone()).collect(),
    }
}

/// Evaluate `candidates` under `plan`, pick the winner and refit it on all
/// anchors.
pub fn search_candidates(
    anchors: &[AnchorTriple],
    candidates: &[EstimatorConfig],
    plan: &CvPlan,
    signals: Signals,
    model_id: &str,
    p_stop: f64,
) -> Result<SearchOutcome, ControllerError> {
    if !(p_stop > 0.0 && p_stop < 1.0) {
        return Err(ControllerError::InvalidPStop(p_stop));
    }
    if anchors.len() < MIN_ANCHORS {
        return Err(ControllerError::TooFewAnchors { n: anchors.len(), min: MIN_ANCHORS });
    }
    let data = dataset(anchors);
    if single_class(&data.labels, &(0..data.labels.len()).collect::<Vec<_>>()).is_some() {
        return Err(ControllerError::DegenerateLabels);
    }
    let all: Vec<usize> = (0..anchors.len()).collect();
    Standardizer::fit(&data.features, &all, signals.active())?;

    let folds = plan.folds(&data.labels, &data.groups);
    let results: Vec<CandidateResult> =
        candidates.par_iter().map(|config| evaluate(&data, config, signals, plan, &folds)).collect();
    let winner = select_winner(&results).ok_or(ControllerError::AllCandidatesFailed)?;
    let config = results[winner].config;
    let winner_oof = oof_probabilities(&data, &config, signals, plan, &folds)?;
    let model = fit_calibrated(
        &data.features,
        &data.labels,
        &data.groups,
        &all,
        &config,
        signals,
        plan,
        derive_seed(plan.seed, "final"),
    )?;
    let controller = Controller {
        model_id: model_id.to_string(),
        config,
        signals,
        standardizer: model.pipeline.standardizer,
        estimator: model.pipeline.estimator,
        head: model.head,
        p_stop,
        provenance: Provenance {
            mean_oof_auroc: results[winner].mean_oof_auroc.unwrap_or(f64::NAN),
            mean_oof_ece: results[winner].mean_oof_ece.unwrap_or(f64::NAN),
            seed: plan.seed,
            n_anchors: anchors.len(),
            ece_bins: plan.ece_bins,
            n_splits: plan.n_splits,
            n_repeats: plan.n_repeats,
            candidates_evaluated: results.len(),
            candidates_failed: results.iter().filter(|r| r.failure.is_some()).count(),
        },
    };
    Ok(SearchOutcome { controller, candidates: results, winner, winner_oof, labels: data.labels })
}

/// Full 134-candidate search.
pub fn cross_validated_search(
    anchors: &[AnchorTriple],
    plan: &CvPlan,
    signals: Signals,
    model_id: &str,
    p_stop: f64,
) -> Result<SearchOutcome, ControllerError> {
    search_candidates(anchors, &enumerate_search_space(), plan, signals, model_id, p_stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn search_space_counts() {
        let space = enumerate_search_space();
        assert_eq!(space.len(), 134);
        let mut counts: BTreeMap<Family, usize> = BTreeMap::new();
        for c in &space {
            *counts.entry(c.estimator.family()).or_default() += 1;
        }
        let per_family: Vec<usize> = counts.values().map(|v| v / 2).collect();
        assert_eq!(per_family, vec![5, 20, 27, 6, 3, 6]);
        assert!(space.contains(&EstimatorConfig {
            estimator: Estimator::SvcPoly { c: 1.0, degree: 3, coef0: 1.0 },
            calibration_head: HeadKind::Isotonic,
        }));
        let first = serde_json::to_value(space[0]).unwrap();
        assert!(first["estimator"].get("gamma").is_none());
    }

    #[test]
    fn gamma_serializes_as_keyword_or_number() {
        assert_eq!(serde_json::to_string(&Gamma::Scale).unwrap(), "\"scale\"");
        assert_eq!(serde_json::to_string(&Gamma::Value(0.5)).unwrap(), "0.5");
        assert_eq!(serde_json::from_str::<Gamma>("2.0").unwrap(), Gamma::Value(2.0));
        assert_eq!(serde_json::from_str::<Gamma>("\"scale\"").unwrap(), Gamma::Scale);
    }

    #[test]
    fn balanced_weights_equalize_class_mass() {
        let labels = [true, false, false, false];
        let w = balanced_weights(&labels);
        assert_eq!(w, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn scale_gamma_on_standardized_data_is_half() {
        let x = [[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]];
        assert_eq!(scale_gamma(&x), 0.5);
    }

    #[test]
    fn stratified_folds_partition_and_balance() {
        let labels: Vec<bool> = (0..53).map(|i| i % 3 == 0).collect();
        let groups: Vec<String> = (0..53).map(|i| format!("g{i}")).collect();
        let plan = CvPlan::new(9);
        let folds = plan.folds(&labels, &groups);
        assert_eq!(folds.len(), 15);
        for r in 0..3 {
            let mut seen: Vec<usize> = folds.iter().filter(|f| f.repeat == r).flat_map(|f| f.test.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..53).collect::<Vec<_>>());
        }
        for f in &folds {
            let pos = f.test.iter().filter(|&&i| labels[i]).count();
            assert!((3..=4).contains(&pos), "{pos}");
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        assert_ne!(folds[0].test, folds[5].test);
    }

    #[test]
    fn grouped_folds_keep_groups_together() {
        let labels: Vec<bool> = (0..60).map(|i| (i / 2) % 2 == 0).collect();
        let groups: Vec<String> = (0..60).map(|i| format!("p{}", i / 2)).collect();
        let tests = split_indices(&(0..60).collect::<Vec<_>>(), &labels, &groups, 5, 3);
        for t in &tests {
            for &i in t {
                assert!(t.contains(&(i ^ 1)));
            }
            let pos = t.iter().filter(|&&i| labels[i]).count();
            assert!((4..=8).contains(&pos));
        }
    }
}
