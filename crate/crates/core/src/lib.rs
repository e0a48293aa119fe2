//! Metacognitive control for language-model inference.
//!
//! The crate elicits a pre-solve feeling-of-knowing (FOK) score and a
//! post-solve judgment-of-learning (JOL) score from a solver backend, grades
//! how reliable those signals are on a small anchor set, fits a calibrated
//! per-model stop/retry controller over `(FOK, JOL)`, and runs the retry loop
//! with hybrid answer aggregation at inference time.
//!
//! Module map:
//!
//! * [`types`] shared records (problems, reports, attempts, trajectories)
//! * [`elicitation`] stage prompts, tool schemas and tool-call parsing
//! * [`backend`] HTTP chat backend and the seeded simulator
//! * [`metrics`] AUROC, ECE, bootstrap intervals, confidence bands
//! * [`calibration`] isotonic (PAVA) and Platt sigmoid heads
//! * [`controller`] SVM / logistic search space, cross-validated selection
//! * [`diagnosis`] six-row report card and verdict
//! * [`harness`] the retry loop, aggregation and ablation policies
//! * [`evalkit`] grading, batch runs and evaluation reports

pub mod backend;
pub mod calibration;
pub mod controller;
pub mod diagnosis;
pub mod elicitation;
pub mod evalkit;
pub mod harness;
pub mod metrics;
pub mod seed;
pub mod types;

pub use types::{
    AnchorTriple, Attempt, FinalAnswer, FokReport, Grader, JolReport, Problem, TokenUsage, Trajectory, Unit,
};
