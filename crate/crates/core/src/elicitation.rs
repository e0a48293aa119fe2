//! Stage requests and tool-call parsing.
//!
//! Every stage is a single declared tool call: `FOK` before solving,
//! `solve_with_JOL` for each attempt, and `select_attempt` for the verifier.
//! Two context rules are enforced here:
//!
//! * retry prompts carry prior `(answer, JOL score, JOL reason)` triples and
//!   never prior reasoning;
//! * selection prompts carry `(reasoning, answer)` pairs in a seeded random
//!   order and never FOK or JOL information.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::seed::rng_from;
use crate::types::{Attachment, Attempt, FokReport, Problem, Unit};

pub const FOK_TOOL: &str = "FOK";
pub const SOLVE_TOOL: &str = "solve_with_JOL";
pub const SELECT_TOOL: &str = "select_attempt";

pub const FOK_SYSTEM_PROMPT: &str = "You are a metacognitive assessment agent.\n\
**FOK (Feeling of Knowing)**: Look at the problem and quickly assess \u{2014} do you feel you know the answer? \
Give a gut-feeling score (0\u{2013}1), a brief domain label, and a short reason explaining your intuition \
(e.g. \"I recognize this type of problem\" or \"the notation is unfamiliar\"). \
Do NOT attempt to solve, compute, or derive anything. \
No calculations, no steps, no partial answers \u{2014} only metacognitive self-assessment. \
Your ENTIRE response must be a single tool call.";

pub const SOLVE_SYSTEM_PROMPT: &str = "You are a careful problem solver who monitors your own reasoning.\n\
Solve the problem step by step, then judge how likely it is that your answer is correct. \
Report everything through the `solve_with_JOL` tool: `reasoning` (your step-by-step solution), \
`answer` (the final answer only), `JOL_score` (0\u{2013}1; 0 = pure guess, 1 = certain it is correct) \
and `JOL_reason` (why this confidence level, specific to this attempt). \
Your ENTIRE response must be a single tool call.";

pub const SELECT_SYSTEM_PROMPT: &str = "You are a meticulous answer judge. You will see a problem (and image, if any) \
along with several candidate solution attempts. Each attempt has its own reasoning and proposed answer.\n\n\
YOUR TASK: select the SINGLE BEST attempt by its index. You are NOT allowed to produce a new answer; \
you are only choosing which existing attempt is most likely correct.\n\n\
Selection criteria (in order of importance):\n\
1. Internal consistency of reasoning \u{2014} does each step follow from the previous?\n\
2. Mathematical / logical validity \u{2014} are computations and deductions correct?\n\
3. Alignment with the problem statement and image (if any).\n\
4. Robustness \u{2014} does the conclusion hold up under scrutiny?\n\n\
DO NOT: invent a new answer not present in any attempt; re-solve the problem from scratch; \
be biased by attempt order \u{2014} the candidates are presented in random order.";

pub const PREVIOUS_ATTEMPTS_HEADER: &str = "## Previous Attempts\n\
The following are your previous attempts at this problem. Each attempt includes the answer, \
confidence (JOL), and the reason for that confidence level. You should try a DIFFERENT approach \
and address the concerns raised in previous JOL reasons.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fok,
    Solve,
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    String,
    UnitInterval,
    BoundedInteger { min: i64, max: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub required_fields: Vec<FieldSpec>,
}

impl ToolSchema {
    fn new(name: &str, description: &str, fields: &[(&str, FieldKind, &str)]) -> Self {
        assert!(!fields.is_empty());
        ToolSchema {
            name: name.to_string(),
            description: description.to_string(),
            required_fields: fields
                .iter()
                .map(|(n, k, d)| FieldSpec { name: n.to_string(), kind: *k, description: d.to_string() })
                .collect(),
        }
    }

    pub fn fok() -> Self {
        ToolSchema::new(
            FOK_TOOL,
            "Report your pre-solve Feeling of Knowing for the problem.",
            &[
                ("domain", FieldKind::String, "A short topic label for the problem."),
                ("FOK_score", FieldKind::UnitInterval, "0 = no idea, 1 = very confident."),
                ("FOK_reason", FieldKind::String, "A short justification of the intuition."),
            ],
        )
    }

    pub fn solve() -> Self {
        ToolSchema::new(
            SOLVE_TOOL,
            "Submit a solution together with your Judgment of Learning.",
            &[
                ("reasoning", FieldKind::String, "Step-by-step chain of thought."),
                ("answer", FieldKind::String, "The final answer string."),
                ("JOL_score", FieldKind::UnitInterval, "0 = pure guess, 1 = certain it is correct."),
                ("JOL_reason", FieldKind::String, "Why this confidence level, specific to this attempt."),
            ],
        )
    }

    pub fn select(n: usize) -> Self {
        ToolSchema::new(
            SELECT_TOOL,
            "Select the single best candidate attempt by its shown index.",
            &[
                (
                    "selected_index",
                    FieldKind::BoundedInteger { min: 1, max: n as i64 },
                    "Index of the single best attempt as shown.",
                ),
                ("justification", FieldKind::String, "2-3 sentences explaining the choice."),
            ],
        )
    }

    /// Upper bound of the first bounded-integer field, if any.
    pub fn select_bound(&self) -> Option<usize> {
        self.required_fields.iter().find_map(|f| match f.kind {
            FieldKind::BoundedInteger { max, .. } => usize::try_from(max).ok(),
            _ => None,
        })
    }

    /// JSON-schema style parameter object.
    pub fn parameters_json(&self) -> Value {
        let mut properties = Map::new();
        for field in &self.required_fields {
            let prop = match field.kind {
                FieldKind::String => json!({"type": "string", "description": field.description}),
                FieldKind::UnitInterval => json!({
                    "type": "number", "minimum": 0, "maximum": 1, "description": field.description
                }),
                FieldKind::BoundedInteger { min, max } => json!({
                    "type": "integer", "minimum": min, "maximum": max, "description": field.description
                }),
            };
            properties.insert(field.name.clone(), prop);
        }
        let required: Vec<&str> = self.required_fields.iter().map(|f| f.name.as_str()).collect();
        json!({"type": "object", "properties": properties, "required": required})
    }

    /// Function declaration in the chat-completions `tools` format.
    pub fn to_json(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters_json(),
            }
        })
    }
}

/// Routing metadata carried alongside a request. It is never rendered into
/// the prompt; the simulator uses it to key its draws.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RequestMeta {
    pub problem_id: String,
    /// 1-based attempt index for solve requests, 0 otherwise.
    pub attempt: usize,
    pub seed: u64,
    /// 0-based elicitation retry index for this stage call.
    #[serde(default)]
    pub retry: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRequest {
    pub stage: Stage,
    pub system_prompt: String,
    pub user_prompt: String,
    pub tool_schema: ToolSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<Attachment>,
    pub meta: RequestMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub answer: String,
    pub jol_score: Unit,
    pub jol_reason: String,
}

/// Compact metacognitive history exposed to a retry. Holds no reasoning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetryHistory {
    pub entries: Vec<HistoryEntry>,
}

impl RetryHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Aggregation context: `(reasoning, answer)` pairs plus the display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggContext {
    /// Candidates in original attempt order.
    pub candidates: Vec<AggCandidate>,
    /// `permutation[j]` = 0-based original index shown at position `j`.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggCandidate {
    pub reasoning: String,
    pub answer: String,
}

impl AggContext {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Map a 1-based shown index back to the 1-based original index.
    pub fn original_index(&self, shown: usize) -> Option<usize> {
        shown.checked_sub(1).and_then(|j| self.permutation.get(j)).map(|o| o + 1)
    }

    /// Inverse permutation: `inverse()[original] = shown position` (0-based).
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (shown, &orig) in self.permutation.iter().enumerate() {
            inv[orig] = shown;
        }
        inv
    }

    /// The candidates in display order.
    pub fn shown(&self) -> impl Iterator<Item = &AggCandidate> {
        self.permutation.iter().map(move |&o| &self.candidates[o])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElicitationError {
    #[error("retry history already holds {history} attempts; budget is {k_max}")]
    BudgetExceeded { history: usize, k_max: usize },
    #[error("aggregation needs at least two attempts, got {0}")]
    TooFewAttempts(usize),
}

fn problem_block(problem: &Problem) -> String {
    format!("## Problem\n\n{}\n", problem.text)
}

pub fn build_fok_request(problem: &Problem) -> StageRequest {
    StageRequest {
        stage: Stage::Fok,
        system_prompt: FOK_SYSTEM_PROMPT.to_string(),
        user_prompt: format!("{}\nGive your Feeling of Knowing. Call `{FOK_TOOL}` now.", problem_block(problem)),
        tool_schema: ToolSchema::fok(),
        attachment: problem.attachment.clone(),
        meta: RequestMeta { problem_id: problem.id.clone(), attempt: 0, seed: 0, retry: 0 },
    }
}

fn solve_preamble(problem: &Problem, fok: &FokReport) -> String {
    format!("{}\nYour FOK score was {}.\nFOK reason: {}\n", problem_block(problem), fok.fok_score, fok.fok_reason)
}

fn finish_solve(problem: &Problem, user_prompt: String, attempt: usize) -> StageRequest {
    StageRequest {
        stage: Stage::Solve,
        system_prompt: SOLVE_SYSTEM_PROMPT.to_string(),
        user_prompt,
        tool_schema: ToolSchema::solve(),
        attachment: problem.attachment.clone(),
        meta: RequestMeta { problem_id: problem.id.clone(), attempt, seed: 0, retry: 0 },
    }
}

/// Solve request for attempt `history.len() + 1`.
pub fn build_solve_request(
    problem: &Problem,
    fok: &FokReport,
    history: &RetryHistory,
    k_max: usize,
) -> Result<StageRequest, ElicitationError> {
    if history.len() >= k_max {
        return Err(ElicitationError::BudgetExceeded { history: history.len(), k_max });
    }
    let mut prompt = solve_preamble(problem, fok);
    if history.is_empty() {
        prompt.push_str(&format!("Now solve the problem and report your JOL. Call `{SOLVE_TOOL}` now."));
    } else {
        prompt.push('\n');
        prompt.push_str(PREVIOUS_ATTEMPTS_HEADER);
        prompt.push_str("\n\n");
        for (i, entry) in history.entries.iter().enumerate() {
            prompt.push_str(&format!(
                "### Attempt #{}\n- **Answer**: {}\n- **JOL Score**: {}\n- **JOL Reason**: {}\n\n",
                i + 1,
                entry.answer,
                entry.jol_score,
                entry.jol_reason
            ));
        }
        prompt.push_str(&format!("Now try again with a different method. Call `{SOLVE_TOOL}` now."));
    }
    Ok(finish_solve(problem, prompt, history.len() + 1))
}

/// Retry request that additionally exposes each prior attempt's reasoning.
/// Only used by the full-reasoning-context ablation.
pub fn build_solve_request_with_reasoning(
    problem: &Problem,
    fok: &FokReport,
    attempts: &[Attempt],
    k_max: usize,
) -> Result<StageRequest, ElicitationError> {
    if attempts.len() >= k_max {
        return Err(ElicitationError::BudgetExceeded { history: attempts.len(), k_max });
    }
    if attempts.is_empty() {
        return build_solve_request(problem, fok, &RetryHistory::default(), k_max);
    }
    let mut prompt = solve_preamble(problem, fok);
    prompt.push('\n');
    prompt.push_str(PREVIOUS_ATTEMPTS_HEADER);
    prompt.push_str("\n\n");
    for (i, a) in attempts.iter().enumerate() {
        prompt.push_str(&format!(
            "### Attempt #{}\n- **Reasoning**:\n{}\n- **Answer**: {}\n- **JOL Score**: {}\n- **JOL Reason**: {}\n\n",
            i + 1,
            a.reasoning,
            a.answer,
            a.jol.jol_score,
            a.jol.jol_reason
        ));
    }
    prompt.push_str(&format!("Now try again with a different method. Call `{SOLVE_TOOL}` now."));
    Ok(finish_solve(problem, prompt, attempts.len() + 1))
}

pub fn build_select_request(problem: &Problem, ctx: &AggContext) -> Result<StageRequest, ElicitationError> {
    let n = ctx.len();
    if n < 2 {
        return Err(ElicitationError::TooFewAttempts(n));
    }
    let mut prompt = problem_block(problem);
    prompt.push_str(&format!("\n## Candidate Attempts ({n} total, shown in random order)\n\n"));
    for (shown, cand) in ctx.shown().enumerate() {
        prompt.push_str(&format!(
            "### Attempt {}\n**Answer:** {}\n**Reasoning:**\n{}\n\n",
            shown + 1,
            cand.answer,
            cand.reasoning
        ));
    }
    prompt.push_str(&format!(
        "Examine the attempts above and call the `{SELECT_TOOL}` tool with the index (1..{n}) of the single best attempt."
    ));
    Ok(StageRequest {
        stage: Stage::Select,
        system_prompt: SELECT_SYSTEM_PROMPT.to_string(),
        user_prompt: prompt,
        tool_schema: ToolSchema::select(n),
        attachment: problem.attachment.clone(),
        meta: RequestMeta { problem_id: problem.id.clone(), attempt: 0, seed: 0, retry: 0 },
    })
}

pub fn make_retry_context(attempts: &[Attempt]) -> RetryHistory {
    RetryHistory {
        entries: attempts
            .iter()
            .map(|a| HistoryEntry {
                answer: a.answer.clone(),
                jol_score: a.jol.jol_score,
                jol_reason: a.jol.jol_reason.clone(),
            })
            .collect(),
    }
}

pub fn make_agg_context(attempts: &[Attempt], rng_seed: u64) -> Result<AggContext, ElicitationError> {
    if attempts.len() < 2 {
        return Err(ElicitationError::TooFewAttempts(attempts.len()));
    }
    let mut permutation: Vec<usize> = (0..attempts.len()).collect();
    permutation.shuffle(&mut rng_from(rng_seed));
    Ok(AggContext {
        candidates: attempts
            .iter()
            .map(|a| AggCandidate { reasoning: a.reasoning.clone(), answer: a.answer.clone() })
            .collect(),
        permutation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Str(String),
    Num(f64),
    Int(i64),
}

/// Validated arguments of one tool call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolArgs {
    fields: BTreeMap<String, FieldValue>,
}

impl ToolArgs {
    pub fn get(&self, name: &str) -> Option<&FieldValue> {
        self.fields.get(name)
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        match self.fields.get(name) {
            Some(FieldValue::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn unit(&self, name: &str) -> Option<Unit> {
        match self.fields.get(name) {
            Some(FieldValue::Num(v)) => Unit::new(*v).ok(),
            _ => None,
        }
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        match self.fields.get(name) {
            Some(FieldValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// Retryable elicitation failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response contains no `{0}` tool call")]
    MissingToolCall(String),
    #[error("tool call is missing field `{0}`")]
    MissingField(String),
    #[error("field `{0}` has the wrong type")]
    WrongType(String),
    #[error("field `{0}` is out of range")]
    OutOfRange(String),
    #[error("tool arguments are not a JSON object: {0}")]
    MalformedArguments(String),
}

/// Locate the named tool call's arguments in a provider payload.
///
/// Accepts the chat-completions shape (`choices[].message.tool_calls[]`,
/// arguments as a JSON string or object) and the content-block shape
/// (`content[]` entries with `type = "tool_use"`). Any free text next to the
/// call is ignored.
fn find_tool_arguments(payload: &Value, tool: &str) -> Result<Map<String, Value>, ParseError> {
    let mut calls: Vec<(&str, &Value)> = Vec::new();
    if let Some(choices) = payload.get("choices").and_then(Value::as_array) {
        for choice in choices {
            let Some(tool_calls) = choice.pointer("/message/tool_calls").and_then(Value::as_array) else {
                continue;
            };
            for call in tool_calls {
                if let (Some(name), Some(args)) =
                    (call.pointer("/function/name").and_then(Value::as_str), call.pointer("/function/arguments"))
                {
                    calls.push((name, args));
                }
            }
        }
    }
    if let Some(blocks) = payload.get("content").and_then(Value::as_array) {
        for block in blocks {
            if block.get("type").and_then(Value::as_str) == Some("tool_use") {
                if let (Some(name), Some(input)) = (block.get("name").and_then(Value::as_str), block.get("input")) {
                    calls.push((name, input));
                }
            }
        }
    }
    let (_, args) = calls
        .into_iter()
        .find(|(name, _)| *name == tool)
        .ok_or_else(|| ParseError::MissingToolCall(tool.to_string()))?;
    match args {
        Value::Object(map) => Ok(map.clone()),
        Value::String(text) => match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(other) => Err(ParseError::MalformedArguments(other.to_string())),
            Err(e) => Err(ParseError::MalformedArguments(e.to_string())),
        },
        other => Err(ParseError::MalformedArguments(other.to_string())),
    }
}

fn as_number(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub fn parse_tool_call(payload: &Value, schema: &ToolSchema) -> Result<ToolArgs, ParseError> {
    let args = find_tool_arguments(payload, &schema.name)?;
    let mut fields = BTreeMap::new();
    for spec in &schema.required_fields {
        let name = &spec.name;
        let raw = match args.get(name) {
            None | Some(Value::Null) => return Err(ParseError::MissingField(name.clone())),
            Some(v) => v,
        };
        let value = match spec.kind {
            FieldKind::String => {
                let text = raw.as_str().ok_or_else(|| ParseError::WrongType(name.clone()))?;
                if text.trim().is_empty() {
                    return Err(ParseError::MissingField(name.clone()));
                }
                FieldValue::Str(text.to_string())
            }
            FieldKind::UnitInterval => {
                let v = as_number(raw).ok_or_else(|| ParseError::WrongType(name.clone()))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(ParseError::OutOfRange(name.clone()));
                }
                FieldValue::Num(v)
            }
            FieldKind::BoundedInteger { min, max } => {
                let v = as_number(raw).ok_or_else(|| ParseError::WrongType(name.clone()))?;
                if v.fract() != 0.0 {
                    return Err(ParseError::WrongType(name.clone()));
                }
                if v < min as f64 || v > max as f64 {
                    return Err(ParseError::OutOfRange(name.clone()));
                }
                FieldValue::Int(v as i64)
            }
        };
        fields.insert(name.clone(), value);
    }
    Ok(ToolArgs { fields })
}

/// Wrap tool arguments in a chat-completions response body.
pub fn tool_call_payload(tool: &str, arguments: &Value, usage: Option<(u64, u64)>) -> Value {
    let mut payload = json!({
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "finish_reason": "tool_calls",
            "message": {
                "role": "assistant",
                "content": null,
                "tool_calls": [{
                    "id": "call_0",
                    "type": "function",
                    "function": {"name": tool, "arguments": arguments.to_string()}
                }]
            }
        }]
    });
    if let Some((prompt, completion)) = usage {
        payload["usage"] = json!({
            "prompt_tokens": prompt,
            "completion_tokens": completion,
            "total_tokens": prompt + completion,
        });
    }
    payload
}
