//! Domain records shared across the crate.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::ops::{Add, AddAssign};

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A real number in `[0, 1]`. Construction rejects anything outside the
/// interval, including NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Unit(f64);

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("value {0} is outside the unit interval")]
pub struct OutOfUnitRange(pub f64);

impl Unit {
    pub const ZERO: Unit = Unit(0.0);
    pub const ONE: Unit = Unit(1.0);

    pub fn new(value: f64) -> Result<Self, OutOfUnitRange> {
        if (0.0..=1.0).contains(&value) {
            Ok(Unit(value))
        } else {
            Err(OutOfUnitRange(value))
        }
    }

    /// Clamp into `[0, 1]`; NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Unit(0.0)
        } else {
            Unit(value.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Unit {
    type Error = OutOfUnitRange;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Unit::new(value)
    }
}

impl From<Unit> for f64 {
    fn from(u: Unit) -> f64 {
        u.0
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grader {
    #[default]
    ExactMatch,
    NumericTolerance,
}

/// Opaque binary attachment (an image, usually) forwarded untouched to the
/// backend. Serialized as base64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    #[serde(rename = "base64", with = "b64")]
    pub data: Vec<u8>,
    pub media_type: String,
}

impl Attachment {
    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.data)
    }
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<Attachment>,
    #[serde(default)]
    pub domain_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default)]
    pub grader: Grader,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("problem id is empty")]
    EmptyId,
    #[error("problem {0}: text is empty")]
    EmptyText(String),
    #[error("problem {0}: numeric gold {1:?} does not parse as a finite number")]
    NonNumericGold(String, String),
}

impl Problem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Problem {
            id: id.into(),
            text: text.into(),
            attachment: None,
            domain_tag: String::new(),
            gold: None,
            grader: Grader::ExactMatch,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold = Some(gold.into());
        self
    }

    pub fn with_grader(mut self, grader: Grader) -> Self {
        self.grader = grader;
        self
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.id.is_empty() {
            return Err(ProblemError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(ProblemError::EmptyText(self.id.clone()));
        }
        if self.grader == Grader::NumericTolerance {
            if let Some(gold) = &self.gold {
                if parse_finite(gold).is_none() {
                    return Err(ProblemError::NonNumericGold(self.id.clone(), gold.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProblemSetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ProblemError },
    #[error("line {line}: duplicate problem id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("problem set is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read a line-delimited problem set. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn read_problem_set<R: BufRead>(reader: R) -> Result<Vec<Problem>, ProblemSetError> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(&line)
            .map_err(|e| ProblemSetError::Parse { line: line_no, message: e.to_string() })?;
        problem.validate().map_err(|source| ProblemSetError::Invalid { line: line_no, source })?;
        if !seen.insert(problem.id.clone()) {
            return Err(ProblemSetError::DuplicateId { line: line_no, id: problem.id });
        }
        problems.push(problem);
    }
    if problems.is_empty() {
        return Err(ProblemSetError::Empty);
    }
    Ok(problems)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("answer is empty")]
    EmptyAnswer,
    #[error("answer {0:?} is not a finite number")]
    UnparseableNumeric(String),
}

pub(crate) fn parse_finite(text: &str) -> Option<f64> {
    let value: f64 = text.trim().parse().ok()?;
    value.is_finite().then_some(value)
}

/// Canonical form of an answer for equality comparisons.
///
/// Exact-match answers are trimmed, internal whitespace runs collapse to a
/// single space and the text is case-folded. Numeric answers are parsed and
/// re-rendered in shortest round-trip decimal form (`"0.5000"` -> `"0.5"`).
pub fn normalize_answer(raw: &str, grader: Grader) -> Result<String, AnswerError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(AnswerError::EmptyAnswer);
    }
    match grader {
        Grader::ExactMatch => Ok(trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()),
        Grader::NumericTolerance => {
            let value = parse_finite(trimmed).ok_or_else(|| AnswerError::UnparseableNumeric(trimmed.to_string()))?;
            // -0 and 0 are the same answer
            let value = if value == 0.0 { 0.0 } else { value };
            Ok(format!("{value}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage { input_tokens, output_tokens }
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("{0} must not be empty")]
    EmptyReason(&'static str),
}

/// Pre-solve self-assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FokReport {
    pub domain_label: String,
    pub fok_score: Unit,
    pub fok_reason: String,
}

impl FokReport {
    pub fn new(
        domain_label: impl Into<String>,
        fok_score: Unit,
        fok_reason: impl Into<String>,
    ) -> Result<Self, ReportError> {
        let fok_reason = fok_reason.into();
        if fok_reason.trim().is_empty() {
            return Err(ReportError::EmptyReason("fok_reason"));
        }
        Ok(FokReport { domain_label: domain_label.into(), fok_score, fok_reason })
    }
}

/// Post-solve self-assessment attached to one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JolReport {
    pub jol_score: Unit,
    pub jol_reason: String,
}

impl JolReport {
    pub fn new(jol_score: Unit, jol_reason: impl Into<String>) -> Result<Self, ReportError> {
        let jol_reason = jol_reason.into();
        if jol_reason.trim().is_empty() {
            return Err(ReportError::EmptyReason("jol_reason"));
        }
        Ok(JolReport { jol_score, jol_reason })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 1-based attempt index.
    pub k: usize,
    pub reasoning: String,
    pub answer: String,
    pub jol: JolReport,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The stop rule trusted the last attempt.
    Trusted,
    /// `K_max` attempts were spent without a positive stop decision.
    BudgetExhausted,
    /// A solve stage failed to produce a parsable tool call after every
    /// allowed re-invocation; the trajectory was finalized early.
    ElicitationExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    SingleAttempt,
    Consensus,
    Selected,
    FallbackLast,
    LastAnswer,
    MaxJol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: String,
    pub source: AnswerSource,
    /// 1-based index of the attempt whose answer was copied.
    pub selected_original_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

/// Outcome of the stop rule after one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Calibrated probability that the attempt is correct, for controller
    /// policies. Rule-based and random policies leave it empty.
    pub p_correct: Option<f64>,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregationTrace {
    pub consensus: bool,
    /// `permutation[j]` is the 1-based original index shown at position `j+1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shown_index: Option<usize>,
    pub select_failures: u32,
    pub usage: TokenUsage,
}

/// One problem's full run through the retry loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub seed: u64,
    pub fok: FokReport,
    pub fok_usage: TokenUsage,
    pub attempts: Vec<Attempt>,
    pub decisions: Vec<Decision>,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationTrace>,
    #[serde(rename = "final")]
    pub final_answer: FinalAnswer,
    /// Tool-call parse failures that were retried, across all stages.
    pub elicitation_failures: u32,
}

impl Trajectory {
    pub fn k(&self) -> usize {
        self.attempts.len()
    }

    pub fn total_usage(&self) -> TokenUsage {
        self.fok_usage
            + self.attempts.iter().map(|a| a.usage).sum()
            + self.aggregation.as_ref().map(|a| a.usage).unwrap_or_default()
    }
}

/// Correctness of every attempt and of the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grading {
    pub attempts: Vec<bool>,
    pub final_correct: bool,
}

/// A trajectory plus its grading when gold was available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graded {
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<Grading>,
}

/// One diagnosis observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorTriple {
    pub fok: Unit,
    pub jol: Unit,
    #[serde(with = "binary_label")]
    pub y: bool,
    pub group_id: String,
}

impl AnchorTriple {
    pub fn new(fok: f64, jol: f64, y: bool, group_id: impl Into<String>) -> Result<Self, OutOfUnitRange> {
        Ok(AnchorTriple { fok: Unit::new(fok)?, jol: Unit::new(jol)?, y, group_id: group_id.into() })
    }
}

mod binary_label {
    use super::*;

    pub fn serialize<S: Serializer>(y: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*y))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("  Nam Dinh ", Grader::ExactMatch).unwrap(), "nam dinh");
        assert_eq!(normalize_answer("2R", Grader::ExactMatch).unwrap(), "2r");
        assert_eq!(normalize_answer("0.5000", Grader::NumericTolerance).unwrap(), "0.5");
        assert_eq!(normalize_answer("-0.0", Grader::NumericTolerance).unwrap(), "0");
        assert_eq!(normalize_answer("   ", Grader::ExactMatch), Err(AnswerError::EmptyAnswer));
        assert!(matches!(normalize_answer("two", Grader::NumericTolerance), Err(AnswerError::UnparseableNumeric(_))));
        assert!(normalize_answer("inf", Grader::NumericTolerance).is_err());
    }

    #[test]
    fn numeric_rendering_matches_decimal_roundtrip_oracle() {
        // oracle: parse, then the shortest decimal that parses back to the same double
        for raw in ["0.5000", "1e3", "+2.50", "0.1", "123456.7890"] {
            let v: f64 = raw.trim().parse().unwrap();
            let rendered = normalize_answer(raw, Grader::NumericTolerance).unwrap();
            assert_eq!(rendered.parse::<f64>().unwrap(), v);
            assert!(rendered.len() <= raw.len() + 3);
        }
        assert_eq!(normalize_answer("1e3", Grader::NumericTolerance).unwrap(), "1000");
    }

    #[test]
    fn unit_rejects_out_of_range() {
        assert!(Unit::new(-0.01).is_err());
        assert!(Unit::new(1.0001).is_err());
        assert!(Unit::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<Unit>("1.5").is_err());
        assert_eq!(serde_json::from_str::<Unit>("0.25").unwrap().get(), 0.25);
    }

    #[test]
    fn reports_need_reasons() {
        assert!(FokReport::new("math", Unit::ONE, "").is_err());
        assert!(JolReport::new(Unit::ONE, "  ").is_err());
        assert!(JolReport::new(Unit::ONE, "checked twice").is_ok());
    }

    #[test]
    fn problem_set_parsing() {
        let text = concat!(
            r#"{"id":"a","text":"What is 2+2?","gold":"4"}"#,
            "\n\n",
            r#"{"id":"b","text":"Half?","gold":"0.5","grader":"numeric_tolerance","attachment":{"base64":"AAEC","media_type":"image/png"}}"#,
            "\n"
        );
        let set = read_problem_set(text.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set[1].attachment.as_ref().unwrap().data, vec![0, 1, 2]);

        let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(read_problem_set(dup.as_bytes()), Err(ProblemSetError::DuplicateId { line: 2, .. })));
        let bad_gold = r#"{"id":"a","text":"x","gold":"abc","grader":"numeric_tolerance"}"#;
        assert!(matches!(read_problem_set(bad_gold.as_bytes()), Err(ProblemSetError::Invalid { line: 1, .. })));
        assert!(matches!(read_problem_set("".as_bytes()), Err(ProblemSetError::Empty)));
        assert!(matches!(read_problem_set("{not json".as_bytes()), Err(ProblemSetError::Parse { line: 1, .. })));
    }

    #[test]
    fn anchor_label_is_binary() {
        let t: AnchorTriple = serde_json::from_str(r#"{"fok":0.3,"jol":0.9,"y":1,"group_id":"p"}"#).unwrap();
        assert!(t.y);
        assert!(serde_json::from_str::<AnchorTriple>(r#"{"fok":0.3,"jol":0.9,"y":2,"group_id":"p"}"#).is_err());
        assert!(serde_json::from_str::<AnchorTriple>(r#"{"fok":1.3,"jol":0.9,"y":1,"group_id":"p"}"#).is_err());
    }

    proptest! {
        #[test]
        fn unit_construction_matches_interval(v in -10.0f64..10.0) {
            prop_assert_eq!(Unit::new(v).is_ok(), (0.0..=1.0).contains(&v));
        }

        #[test]
        fn normalize_is_idempotent(raw in "[ a-zA-Z0-9\\.\\t]{1,24}") {
            if let Ok(once) = normalize_answer(&raw, Grader::ExactMatch) {
                prop_assert_eq!(normalize_answer(&once, Grader::ExactMatch).unwrap(), once);
            }
        }

        #[test]
        fn numeric_normalize_is_idempotent(v in -1e12f64..1e12) {
            let once = normalize_answer(&v.to_string(), Grader::NumericTolerance).unwrap();
            prop_assert_eq!(normalize_answer(&once, Grader::NumericTolerance).unwrap(), once);
        }
    }
}
