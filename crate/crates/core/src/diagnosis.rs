//! Six-row metacognition report card and the roll-up verdict.
//!
//! Each of FOK, JOL and the fitted joint controller is graded on AUROC and
//! ECE against a fixed rubric. The verdict decides whether downstream control
//! may rely on the model's self-assessments at all.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerError, EstimatorConfig, SearchOutcome, MIN_ANCHORS};
use crate::metrics::{auroc, ece, MetricError};
use crate::types::AnchorTriple;

pub const AUROC_PASS: f64 = 0.60;
pub const AUROC_FAIL_BELOW: f64 = 0.55;
pub const ECE_PASS: f64 = 0.15;
pub const ECE_FAIL_ABOVE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Fok,
    Jol,
    Joint,
}

impl SignalKind {
    pub const ALL: [SignalKind; 3] = [SignalKind::Fok, SignalKind::Jol, SignalKind::Joint];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Auroc,
    Ece,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::Auroc, MetricKind::Ece];
}

/// Ordered worst to best so that `Ord` reads as quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Fail,
    Marginal,
    Pass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CalibratedMetacognition,
    AdequateMetacognition,
    DiscriminativeButMiscalibrated,
    AbsentMetacognitiveSignal,
}

impl Verdict {
    /// Whether a controller fitted on this model may be deployed.
    pub fn is_harnessable(self) -> bool {
        self != Verdict::AbsentMetacognitiveSignal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowGrade {
    pub signal: SignalKind,
    pub metric: MetricKind,
    pub value: f64,
    pub grade: Grade,
}

impl RowGrade {
    pub fn new(signal: SignalKind, metric: MetricKind, value: f64) -> Self {
        RowGrade { signal, metric, value, grade: grade_row(metric, value) }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosisError {
    #[error("a report card needs exactly six rows, got {0}")]
    WrongRowCount(usize),
    #[error("row ({0:?}, {1:?}) is missing or duplicated")]
    MissingRow(SignalKind, MetricKind),
    #[error("need at least {min} anchors, got {n}")]
    TooFewAnchors { n: usize, min: usize },
    #[error("anchors must contain both correct and incorrect labels")]
    DegenerateLabels,
    #[error("search outcome does not match the anchor set")]
    OutcomeMismatch,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Rubric grade for one metric value. Higher AUROC and lower ECE are better.
pub fn grade_row(metric: MetricKind, value: f64) -> Grade {
    debug_assert!(value.is_finite());
    match metric {
        MetricKind::Auroc if value >= AUROC_PASS => Grade::Pass,
        MetricKind::Auroc if value < AUROC_FAIL_BELOW => Grade::Fail,
        MetricKind::Ece if value <= ECE_PASS => Grade::Pass,
        MetricKind::Ece if value > ECE_FAIL_ABOVE => Grade::Fail,
        _ => Grade::Marginal,
    }
}

/// Verdict plus a flag for the mixed case where a raw signal fails
/// discrimination while the joint signal and every calibration row hold up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerdictOutcome {
    pub verdict: Verdict,
    pub warning: bool,
}

fn find(rows: &[RowGrade], signal: SignalKind, metric: MetricKind) -> Result<Grade, DiagnosisError> {
    let mut hits = rows.iter().filter(|r| r.signal == signal && r.metric == metric);
    match (hits.next(), hits.next()) {
        (Some(r), None) => Ok(r.grade),
        _ => Err(DiagnosisError::MissingRow(signal, metric)),
    }
}

/// Roll six graded rows into a verdict. Rules apply in order: all pass,
/// joint AUROC fail, any ECE fail, no fail at all, and the flagged remainder.
pub fn verdict(rows: &[RowGrade]) -> Result<VerdictOutcome, DiagnosisError> {
    if rows.len() != 6 {
        return Err(DiagnosisError::WrongRowCount(rows.len()));
    }
    for signal in SignalKind::ALL {
        for metric in MetricKind::ALL {
            find(rows, signal, metric)?;
        }
    }
    let plain = |verdict| Ok(VerdictOutcome { verdict, warning: false });
    if rows.iter().all(|r| r.grade == Grade::Pass) {
        return plain(Verdict::CalibratedMetacognition);
    }
    if find(rows, SignalKind::Joint, MetricKind::Auroc)? == Grade::Fail {
        return plain(Verdict::AbsentMetacognitiveSignal);
    }
    if rows.iter().any(|r| r.metric == MetricKind::Ece && r.grade == Grade::Fail) {
        return plain(Verdict::DiscriminativeButMiscalibrated);
    }
    if rows.iter().all(|r| r.grade != Grade::Fail) {
        return plain(Verdict::AdequateMetacognition);
    }
    Ok(VerdictOutcome { verdict: Verdict::DiscriminativeButMiscalibrated, warning: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCard {
    pub model_id: String,
    pub rows: Vec<RowGrade>,
    pub verdict: Verdict,
    pub warning: bool,
    pub n_anchors: usize,
    pub ece_bins: usize,
    pub cv_seed: u64,
    pub controller_config: EstimatorConfig,
}

impl ReportCard {
    pub fn row(&self, signal: SignalKind, metric: MetricKind) -> Option<&RowGrade> {
        self.rows.iter().find(|r| r.signal == signal && r.metric == metric)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report card serializes");
        text.push('\n');
        text
    }

    /// Six-row plain-text card.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Fok => "FOK",
            SignalKind::Jol => "JOL",
            SignalKind::Joint => "Joint",
        })
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Auroc => "AUROC",
            MetricKind::Ece => "ECE",
        })
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Pass => "PASS",
            Grade::Marginal => "MARGINAL",
            Grade::Fail => "FAIL",
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::CalibratedMetacognition => "Calibrated metacognition",
            Verdict::AdequateMetacognition => "Adequate metacognition",
            Verdict::DiscriminativeButMiscalibrated => "Discriminative but miscalibrated",
            Verdict::AbsentMetacognitiveSignal => "Absent metacognitive signal",
        })
    }
}

impl fmt::Display for ReportCard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Model: {}", self.model_id)?;
        writeln!(f, "Anchors: {}  ECE bins: {}  CV seed: {}", self.n_anchors, self.ece_bins, self.cv_seed)?;
        writeln!(f, "Controller: {}", self.controller_config)?;
        writeln!(f, "{:<7}{:<7}{:>7}  Grade", "Signal", "Metric", "Value")?;
        for r in &self.rows {
            writeln!(f, "{:<7}{:<7}{:>7.3}  {}", r.signal.to_string(), r.metric.to_string(), r.value, r.grade)?;
        }
        write!(f, "Verdict: {}", self.verdict)?;
        if self.warning {
            write!(f, " (warning: a raw signal fails discrimination)")?;
        }
        writeln!(f)
    }
}

/// Grade raw FOK and JOL against the labels and the winning controller's
/// calibrated out-of-fold predictions, then assign a verdict.
pub fn build_report_card(
    model_id: &str,
    anchors: &[AnchorTriple],
    outcome: &SearchOutcome,
) -> Result<ReportCard, DiagnosisError> {
    if anchors.len() < MIN_ANCHORS {
        return Err(DiagnosisError::TooFewAnchors { n: anchors.len(), min: MIN_ANCHORS });
    }
    let labels: Vec<bool> = anchors.iter().map(|a| a.y).collect();
    if labels.iter().all(|&y| y) || !labels.iter().any(|&y| y) {
        return Err(DiagnosisError::DegenerateLabels);
    }
    if outcome.labels != labels {
        return Err(DiagnosisError::OutcomeMismatch);
    }
    let provenance = &outcome.controller.provenance;
    let bins = provenance.ece_bins;
    let fok: Vec<f64> = anchors.iter().map(|a| a.fok.get()).collect();
    let jol: Vec<f64> = anchors.iter().map(|a| a.jol.get()).collect();
    let rows = vec![
        RowGrade::new(SignalKind::Fok, MetricKind::Auroc, auroc(&fok, &labels)?),
        RowGrade::new(SignalKind::Fok, MetricKind::Ece, ece(&fok, &labels, bins)?),
        RowGrade::new(SignalKind::Jol, MetricKind::Auroc, auroc(&jol, &labels)?),
        RowGrade::new(SignalKind::Jol, MetricKind::Ece, ece(&jol, &labels, bins)?),
        RowGrade::new(SignalKind::Joint, MetricKind::Auroc, provenance.mean_oof_auroc),
        RowGrade::new(SignalKind::Joint, MetricKind::Ece, provenance.mean_oof_ece),
    ];
    let VerdictOutcome { verdict, warning } = verdict(&rows)?;
    Ok(ReportCard {
        model_id: model_id.to_string(),
        rows,
        verdict,
        warning,
        n_anchors: anchors.len(),
        ece_bins: bins,
        cv_seed: provenance.seed,
        controller_config: outcome.controller.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(grades: [Grade; 6]) -> Vec<RowGrade> {
        let mut out = Vec::new();
        let mut it = grades.into_iter();
        for signal in SignalKind::ALL {
            for metric in MetricKind::ALL {
                let grade = it.next().unwrap();
                out.push(RowGrade { signal, metric, value: 0.0, grade });
            }
        }
        out
    }

    #[test]
    fn rubric_examples() {
        assert_eq!(grade_row(MetricKind::Auroc, 0.87), Grade::Pass);
        assert_eq!(grade_row(MetricKind::Ece, 0.41), Grade::Fail);
        assert_eq!(grade_row(MetricKind::Auroc, 0.57), Grade::Marginal);
    }

    #[test]
    fn rubric_boundaries() {
        let auroc: Vec<Grade> = [0.549, 0.55, 0.599, 0.60].iter().map(|&v| grade_row(MetricKind::Auroc, v)).collect();
        assert_eq!(auroc, [Grade::Fail, Grade::Marginal, Grade::Marginal, Grade::Pass]);
        let ece: Vec<Grade> = [0.15, 0.151, 0.25, 0.251].iter().map(|&v| grade_row(MetricKind::Ece, v)).collect();
        assert_eq!(ece, [Grade::Pass, Grade::Marginal, Grade::Marginal, Grade::Fail]);
    }

    #[test]
    fn grading_is_monotone() {
        let mut prev_a = Grade::Fail;
        let mut prev_e = Grade::Pass;
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            let a = grade_row(MetricKind::Auroc, v);
            let e = grade_row(MetricKind::Ece, v);
            assert!(a >= prev_a && e <= prev_e);
            prev_a = a;
            prev_e = e;
        }
    }

    #[test]
    fn verdict_total_over_all_grade_combinations() {
        let grades = [Grade::Fail, Grade::Marginal, Grade::Pass];
        let mut seen = std::collections::HashSet::new();
        for code in 0..729usize {
            let mut g = [Grade::Pass; 6];
            let mut c = code;
            for slot in &mut g {
                *slot = grades[c % 3];
                c /= 3;
            }
            let out = verdict(&rows(g)).unwrap();
            let joint_auroc_fail = g[4] == Grade::Fail;
            let ece_fail = [g[1], g[3], g[5]].contains(&Grade::Fail);
            if out.verdict == Verdict::AbsentMetacognitiveSignal {
                assert!(joint_auroc_fail);
            }
            if out.warning {
                assert!(!joint_auroc_fail && !ece_fail);
                assert!(g[0] == Grade::Fail || g[2] == Grade::Fail);
            }
            seen.insert(out);
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn canonical_fixtures() {
        use Grade::*;
        assert_eq!(verdict(&rows([Pass; 6])).unwrap().verdict, Verdict::CalibratedMetacognition);
        let mut r = rows([Pass; 6]);
        r[2] = RowGrade::new(SignalKind::Jol, MetricKind::Auroc, 0.87);
        r[3] = RowGrade::new(SignalKind::Jol, MetricKind::Ece, 0.41);
        r[5] = RowGrade::new(SignalKind::Joint, MetricKind::Ece, 0.06);
        assert_eq!(
            verdict(&r).unwrap(),
            VerdictOutcome { verdict: Verdict::DiscriminativeButMiscalibrated, warning: false }
        );
        r[4] = RowGrade::new(SignalKind::Joint, MetricKind::Auroc, 0.50);
        assert_eq!(verdict(&r).unwrap().verdict, Verdict::AbsentMetacognitiveSignal);
        assert_eq!(
            verdict(&rows([Pass, Marginal, Marginal, Pass, Pass, Marginal])).unwrap().verdict,
            Verdict::AdequateMetacognition
        );
        assert_eq!(
            verdict(&rows([Fail, Pass, Pass, Pass, Pass, Pass])).unwrap(),
            VerdictOutcome { verdict: Verdict::DiscriminativeButMiscalibrated, warning: true }
        );
    }

    #[test]
    fn row_count_and_coverage_enforced() {
        let r = rows([Grade::Pass; 6]);
        assert_eq!(verdict(&r[..5]), Err(DiagnosisError::WrongRowCount(5)));
        let mut dup = r.clone();
        dup[1] = dup[0];
        assert_eq!(verdict(&dup), Err(DiagnosisError::MissingRow(SignalKind::Fok, MetricKind::Auroc)));
    }
}
