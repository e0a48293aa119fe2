//! The per-model decision function over `(FOK, JOL)`.
//!
//! A [`Controller`] standardizes its input, scores it with the winning
//! estimator, maps the score through the calibration head, and stops when
//! the calibrated probability of correctness reaches `p_stop`.

pub mod logistic;
pub mod search;
pub mod standardize;
pub mod svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationHead};
use crate::metrics::MetricError;
use crate::types::{Decision, Unit};

pub use search::{
    cross_validated_search, enumerate_search_space, CandidateResult, CvPlan, Estimator, EstimatorConfig, Family,
    FittedEstimator, Gamma, SearchOutcome, MIN_ANCHORS,
};
pub use standardize::Standardizer;

pub const DEFAULT_P_STOP: f64 = 0.7;
pub const ARTIFACT_FORMAT: &str = "metaharness-controller";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("need at least {min} anchors, got {n}")]
    TooFewAnchors { n: usize, min: usize },
    #[error("anchors must contain both correct and incorrect labels")]
    DegenerateLabels,
    #[error("feature {0} is constant on the training rows")]
    ConstantFeature(&'static str),
    #[error("every candidate failed to train")]
    AllCandidatesFailed,
    #[error("p_stop must lie in (0, 1), got {0}")]
    InvalidPStop(f64),
    #[error(transparent)]
    Svm(#[from] svm::SvmError),
    #[error(transparent)]
    Logistic(#[from] logistic::LogisticError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("artifact version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt controller artifact: {0}")]
    CorruptArtifact(String),
}

/// Which inputs the controller reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signals {
    #[default]
    Joint,
    FokOnly,
    JolOnly,
}

impl Signals {
    pub fn active(self) -> [bool; 2] {
        match self {
            Signals::Joint => [true, true],
            Signals::FokOnly => [true, false],
            Signals::JolOnly => [false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mean_oof_auroc: f64,
    pub mean_oof_ece: f64,
    pub seed: u64,
    pub n_anchors: usize,
    pub ece_bins: usize,
    pub n_splits: usize,
    pub n_repeats: usize,
    pub candidates_evaluated: usize,
    pub candidates_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub model_id: String,
    pub config: EstimatorConfig,
    pub signals: Signals,
    pub standardizer: Standardizer,
    pub estimator: FittedEstimator,
    pub head: CalibrationHead,
    pub p_stop: f64,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: String,
    version: u32,
    controller: Controller,
}

impl Controller {
    pub fn p_correct(&self, fok: Unit, jol: Unit) -> f64 {
        let z = self.standardizer.transform(&[fok.get(), jol.get()]);
        self.head.apply(self.estimator.decision(&z))
    }

    /// Stop iff the calibrated probability reaches `p_stop`.
    pub fn decide(&self, fok: Unit, jol: Unit) -> Decision {
        let p = self.p_correct(fok, jol);
        Decision { p_correct: Some(p), stop: p >= self.p_stop }
    }

    pub fn with_p_stop(mut self, p_stop: f64) -> Result<Self, ControllerError> {
        if !(p_stop > 0.0 && p_stop < 1.0) {
            return Err(ControllerError::InvalidPStop(p_stop));
        }
        self.p_stop = p_stop;
        Ok(self)
    }

    pub fn save(&self) -> Vec<u8> {
        let artifact =
            Artifact { format: ARTIFACT_FORMAT.to_string(), version: ARTIFACT_VERSION, controller: self.clone() };
        let mut bytes = serde_json::to_vec_pretty(&artifact).expect("controller serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn load(bytes: &[u8]) -> Result<Self, ControllerError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| ControllerError::CorruptArtifact(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(ARTIFACT_FORMAT) {
            return Err(ControllerError::CorruptArtifact("missing format tag".into()));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ControllerError::CorruptArtifact("missing version".into()))?;
        if version != u64::from(ARTIFACT_VERSION) {
            return Err(ControllerError::VersionMismatch { found: version, expected: ARTIFACT_VERSION });
        }
        let artifact: Artifact =
            serde_json::from_value(value).map_err(|e| ControllerError::CorruptArtifact(e.to_string()))?;
        let ctl = artifact.controller;
        if !(ctl.p_stop > 0.0 && ctl.p_stop < 1.0) {
            return Err(ControllerError::CorruptArtifact(format!("p_stop {} outside (0, 1)", ctl.p_stop)));
        }
        Ok(ctl)
    }
}

/// Hand-crafted retry rule: retry iff `(1 − jol)·fok > tau`.
pub fn hand_rule(fok: Unit, jol: Unit, tau: f64) -> bool {
    (1.0 - jol.get()) * fok.get() > tau
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::calibration::SigmoidParams;
    use crate::controller::logistic::LogisticModel;

    fn u(v: f64) -> Unit {
        Unit::new(v).unwrap()
    }

    pub(crate) fn toy_controller(p_stop: f64) -> Controller {
        Controller {
            model_id: "toy".into(),
            config: enumerate_search_space()[0],
            signals: Signals::Joint,
            standardizer: Standardizer { mean: [0.5, 0.5], std: [0.25, 0.25], active: [true, true] },
            estimator: FittedEstimator::Logistic(LogisticModel { w: [0.3, 2.0], b: 0.1 }),
            head: CalibrationHead::Sigmoid(SigmoidParams { a: -1.3, b: 0.05 }),
            p_stop,
            provenance: Provenance {
                mean_oof_auroc: 0.8,
                mean_oof_ece: 0.05,
                seed: 17,
                n_anchors: 100,
                ece_bins: 10,
                n_splits: 5,
                n_repeats: 3,
                candidates_evaluated: 134,
                candidates_failed: 0,
            },
        }
    }

    #[test]
    fn hand_rule_examples() {
        assert!(!hand_rule(u(0.30), u(0.99), 0.01));
        assert!(!hand_rule(u(0.9), u(1.0), 0.0));
        assert!(!hand_rule(u(0.0), u(0.2), 0.0));
        assert!(hand_rule(u(0.9), u(0.2), 0.1));
    }

    #[test]
    fn equality_stops() {
        let ctl = toy_controller(0.5);
        let p = ctl.p_correct(u(0.4), u(0.6));
        let at_boundary = Controller { p_stop: p, ..ctl };
        assert!(at_boundary.decide(u(0.4), u(0.6)).stop);
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let ctl = toy_controller(0.7);
        let loaded = Controller::load(&ctl.save()).unwrap();
        assert_eq!(loaded, ctl);
        for i in 0..=100 {
            for j in 0..=100 {
                let (f, g) = (u(i as f64 / 100.0), u(j as f64 / 100.0));
                let a = ctl.decide(f, g);
                let b = loaded.decide(f, g);
                assert_eq!(a.p_correct.unwrap().to_bits(), b.p_correct.unwrap().to_bits());
                assert_eq!(a.stop, b.stop);
            }
        }
        let text = String::from_utf8(ctl.save()).unwrap();
        assert!(text.contains("\"seed\": 17"));
        assert!(text.contains("svc_linear"));
    }

    #[test]
    fn load_rejects_bad_artifacts() {
        let bytes = toy_controller(0.7).save();
        assert!(matches!(Controller::load(&bytes[..bytes.len() / 2]), Err(ControllerError::CorruptArtifact(_))));
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["version"] = serde_json::json!(2);
        assert_eq!(
            Controller::load(&serde_json::to_vec(&value).unwrap()),
            Err(ControllerError::VersionMismatch { found: 2, expected: 1 })
        );
        assert!(matches!(Controller::load(b"{}"), Err(ControllerError::CorruptArtifact(_))));
    }

    #[test]
    fn decide_is_repeatable() {
        let ctl = toy_controller(0.7);
        let a = ctl.decide(u(0.3), u(0.8));
        let b = ctl.decide(u(0.3), u(0.8));
        assert_eq!(a.p_correct.unwrap().to_bits(), b.p_correct.unwrap().to_bits());
    }
}
