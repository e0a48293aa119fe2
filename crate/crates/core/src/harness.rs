//! The run-time retry loop and answer aggregation.
//!
//! One FOK elicitation per problem, then solve attempts until the stop rule
//! trusts an attempt or the budget runs out. With two or more attempts the
//! final answer comes from the aggregator, which only ever returns an answer
//! that some attempt produced.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Agents, Backend, BackendError, Invocation};
use crate::controller::{hand_rule, Controller, Signals};
use crate::elicitation::{
    build_fok_request, build_select_request, build_solve_request, build_solve_request_with_reasoning, make_agg_context,
    make_retry_context, parse_tool_call, ElicitationError, RetryHistory, Stage, StageRequest, ToolArgs,
};
use crate::seed::{derive_indexed, derive_seed, rng_from};
use crate::types::{
    normalize_answer, AggregationTrace, AnswerSource, Attempt, Decision, FinalAnswer, FokReport, JolReport, Problem,
    StopReason, TokenUsage, Trajectory, Unit,
};

pub const DEFAULT_K_MAX: usize = 4;
/// Tool-call tries per stage call before the stage counts as exhausted.
pub const ELICITATION_TRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    Hybrid,
    SelectOnly,
    LastAnswer,
    MaxJol,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub k_max: usize,
    pub aggregation: AggregationMode,
    pub elicitation_tries: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            k_max: DEFAULT_K_MAX,
            aggregation: AggregationMode::Hybrid,
            elicitation_tries: ELICITATION_TRIES,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.k_max == 0 {
            return Err(HarnessError::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.elicitation_tries == 0 {
            return Err(HarnessError::InvalidConfig("elicitation_tries must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("backend failure for problem {problem_id} at {stage:?}: {source}")]
    Backend { problem_id: String, stage: Stage, source: BackendError },
    #[error("problem {problem_id}: no valid {stage:?} tool call after {tries} tries")]
    ElicitationExhausted { problem_id: String, stage: Stage, tries: u32 },
    #[error("invalid harness configuration: {0}")]
    InvalidConfig(String),
    #[error("policy {policy} needs a controller fitted on {expected:?} signals, got {found:?}")]
    SignalMismatch { policy: String, expected: Signals, found: Signals },
    #[error("policy {0} needs a controller")]
    MissingController(String),
    #[error(transparent)]
    Elicitation(#[from] ElicitationError),
}

/// How the loop decides, after each attempt, whether to stop.
#[derive(Debug, Clone, Copy)]
pub enum StopRule<'a> {
    Controller(&'a Controller),
    /// Retry iff `(1 − jol)·fok > tau`.
    HandRule {
        tau: f64,
    },
    /// Retry with probability `rate`, independently after each attempt.
    RandomRetry {
        rate: f64,
    },
    /// Always retry; the budget alone ends the loop.
    Never,
}

impl StopRule<'_> {
    fn decide(&self, fok: Unit, jol: Unit, problem_seed: u64, k: usize) -> Decision {
        match self {
            StopRule::Controller(ctl) => ctl.decide(fok, jol),
            StopRule::HandRule { tau } => Decision { p_correct: None, stop: !hand_rule(fok, jol, *tau) },
            StopRule::RandomRetry { rate } => {
                let u: f64 = rng_from(derive_indexed(problem_seed, "random-retry", k as u64)).random();
                Decision { p_correct: None, stop: u >= *rate }
            }
            StopRule::Never => Decision { p_correct: None, stop: false },
        }
    }
}

/// What a retry sees of earlier attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetryContext {
    /// Answers and JOL reports only.
    #[default]
    Compact,
    /// Nothing: every attempt is a fresh start.
    Empty,
    /// Compact history plus the reasoning traces.
    FullReasoning,
}

/// Seed for one problem, independent of scheduling.
pub fn problem_seed(global_seed: u64, problem_id: &str) -> u64 {
    derive_seed(global_seed, &format!("problem/{problem_id}"))
}

struct Caller<'a> {
    problem_id: &'a str,
    tries: u32,
    failures: u32,
}

impl Caller<'_> {
    /// Invoke until the tool call parses and `accept` succeeds. Returns the
    /// accepted value and the usage of every try, or `None` when exhausted.
    fn elicit<T>(
        &mut self,
        backend: &dyn Backend,
        mut request: StageRequest,
        seed: u64,
        mut accept: impl FnMut(&ToolArgs) -> Option<T>,
    ) -> Result<(Option<T>, TokenUsage), HarnessError> {
        let mut usage = TokenUsage::default();
        request.meta.seed = seed;
        for retry in 0..self.tries {
            request.meta.retry = retry;
            let Invocation { payload, usage: u } = backend.invoke(&request).map_err(|source| {
                HarnessError::Backend { problem_id: self.problem_id.to_string(), stage: request.stage, source }
            })?;
            usage += u;
            if let Some(value) = parse_tool_call(&payload, &request.tool_schema).ok().as_ref().and_then(&mut accept) {
                return Ok((Some(value), usage));
            }
            self.failures += 1;
        }
        Ok((None, usage))
    }
}

fn accept_fok(args: &ToolArgs) -> Option<FokReport> {
    FokReport::new(args.str("domain")?, args.unit("FOK_score")?, args.str("FOK_reason")?).ok()
}

fn accept_solve(args: &ToolArgs) -> Option<(String, String, JolReport)> {
    let answer = args.str("answer")?;
    if answer.trim().is_empty() {
        return None;
    }
    let jol = JolReport::new(args.unit("JOL_score")?, args.str("JOL_reason")?).ok()?;
    Some((args.str("reasoning")?.to_string(), answer.to_string(), jol))
}

/// Final answer for the fixed-budget ablations.
pub fn ablation_finalize(attempts: &[Attempt], mode: AggregationMode) -> Result<FinalAnswer, HarnessError> {
    let last = attempts.len().checked_sub(1).ok_or(ElicitationError::TooFewAttempts(0))?;
    let index = match mode {
        AggregationMode::LastAnswer => last,
        AggregationMode::MaxJol => {
            let mut best = 0;
            for (i, a) in attempts.iter().enumerate() {
                if a.jol.jol_score.get() > attempts[best].jol.jol_score.get() {
                    best = i;
                }
            }
            best
        }
        other => return Err(HarnessError::InvalidConfig(format!("{other:?} is not an ablation finalizer"))),
    };
    Ok(FinalAnswer {
        answer: attempts[index].answer.clone(),
        source: if mode == AggregationMode::MaxJol { AnswerSource::MaxJol } else { AnswerSource::LastAnswer },
        selected_original_index: Some(index + 1),
        justification: None,
    })
}

/// Key for consensus counting. Answers the grader cannot normalize fall back
/// to their trimmed text so they still compete as distinct candidates.
fn consensus_key(answer: &str, problem: &Problem) -> String {
    match normalize_answer(answer, problem.grader) {
        Ok(n) => format!("n:{n}"),
        Err(_) => format!("r:{}", answer.trim()),
    }
}

/// Index of the first attempt whose normalized answer is held by a strict
/// majority, if any.
pub fn strict_majority(problem: &Problem, attempts: &[Attempt]) -> Option<usize> {
    let keys: Vec<String> = attempts.iter().map(|a| consensus_key(&a.answer, problem)).collect();
    (0..keys.len()).find(|&i| {
        keys[..i].iter().all(|k| k != &keys[i]) && 2 * keys.iter().filter(|k| *k == &keys[i]).count() > keys.len()
    })
}

/// Aggregation outcome plus the number of failed selection tries.
pub struct Aggregated {
    pub final_answer: FinalAnswer,
    pub trace: AggregationTrace,
}

/// Hybrid aggregation over two or more attempts: strict-majority consensus,
/// then forced index selection by the judge, then the most recent attempt.
pub fn aggregate(
    problem: &Problem,
    attempts: &[Attempt],
    judge: &dyn Backend,
    mode: AggregationMode,
    problem_seed: u64,
    tries: u32,
) -> Result<Aggregated, HarnessError> {
    if attempts.len() < 2 {
        return Err(ElicitationError::TooFewAttempts(attempts.len()).into());
    }
    if matches!(mode, AggregationMode::LastAnswer | AggregationMode::MaxJol) {
        return Ok(Aggregated { final_answer: ablation_finalize(attempts, mode)?, trace: AggregationTrace::default() });
    }
    if mode == AggregationMode::Hybrid {
        if let Some(i) = strict_majority(problem, attempts) {
            return Ok(Aggregated {
                final_answer: FinalAnswer {
                    answer: attempts[i].answer.clone(),
                    source: AnswerSource::Consensus,
                    selected_original_index: Some(i + 1),
                    justification: None,
                },
                trace: AggregationTrace { consensus: true, ..AggregationTrace::default() },
            });
        }
    }
    let ctx = make_agg_context(attempts, derive_seed(problem_seed, "aggregation/permutation"))?;
    let request = build_select_request(problem, &ctx)?;
    let mut caller = Caller { problem_id: &problem.id, tries, failures: 0 };
    let (picked, usage) = caller.elicit(judge, request, problem_seed, |args| {
        let shown = usize::try_from(args.int("selected_index")?).ok()?;
        let original = ctx.original_index(shown)?;
        Some((shown, original, args.str("justification")?.to_string()))
    })?;
    let permutation = Some(ctx.permutation.iter().map(|o| o + 1).collect());
    let (final_answer, shown_index) = match picked {
        Some((shown, original, justification)) => (
            FinalAnswer {
                answer: attempts[original - 1].answer.clone(),
                source: AnswerSource::Selected,
                selected_original_index: Some(original),
                justification: Some(justification),
            },
            Some(shown),
        ),
        None => (
            FinalAnswer {
                answer: attempts[attempts.len() - 1].answer.clone(),
                source: AnswerSource::FallbackLast,
                selected_original_index: Some(attempts.len()),
                justification: None,
            },
            None,
        ),
    };
    Ok(Aggregated {
        final_answer,
        trace: AggregationTrace { consensus: false, permutation, shown_index, select_failures: caller.failures, usage },
    })
}

/// The loop shared by every policy.
pub fn run_loop(
    problem: &Problem,
    agents: Agents<'_>,
    rule: StopRule<'_>,
    context: RetryContext,
    cfg: &HarnessConfig,
    global_seed: u64,
) -> Result<Trajectory, HarnessError> {
    cfg.validate()?;
    let seed = problem_seed(global_seed, &problem.id);
    let mut caller = Caller { problem_id: &problem.id, tries: cfg.elicitation_tries, failures: 0 };
    let (fok, fok_usage) = caller.elicit(agents.solver, build_fok_request(problem), seed, accept_fok)?;
    let fok = fok.ok_or_else(|| HarnessError::ElicitationExhausted {
        problem_id: problem.id.clone(),
        stage: Stage::Fok,
        tries: cfg.elicitation_tries,
    })?;

    let mut attempts: Vec<Attempt> = Vec::new();
    let mut decisions: Vec<Decision> = Vec::new();
    let mut stop_reason = StopReason::BudgetExhausted;
    for k in 1..=cfg.k_max {
        let request = match context {
            RetryContext::Compact => build_solve_request(problem, &fok, &make_retry_context(&attempts), cfg.k_max)?,
            RetryContext::Empty => {
                let mut r = build_solve_request(problem, &fok, &RetryHistory::default(), cfg.k_max)?;
                r.meta.attempt = k;
                r
            }
            RetryContext::FullReasoning => build_solve_request_with_reasoning(problem, &fok, &attempts, cfg.k_max)?,
        };
        let (solved, usage) = caller.elicit(agents.solver, request, seed, accept_solve)?;
        let Some((reasoning, answer, jol)) = solved else {
            if attempts.is_empty() {
                return Err(HarnessError::ElicitationExhausted {
                    problem_id: problem.id.clone(),
                    stage: Stage::Solve,
                    tries: cfg.elicitation_tries,
                });
            }
            stop_reason = StopReason::ElicitationExhausted;
            break;
        };
        let decision = rule.decide(fok.fok_score, jol.jol_score, seed, k);
        attempts.push(Attempt { k, reasoning, answer, jol, usage });
        decisions.push(decision);
        if decision.stop {
            stop_reason = StopReason::Trusted;
            break;
        }
    }

    let (final_answer, aggregation) = if stop_reason == StopReason::ElicitationExhausted {
        let last = attempts.len();
        let fa = FinalAnswer {
            answer: attempts[last - 1].answer.clone(),
            source: AnswerSource::FallbackLast,
            selected_original_index: Some(last),
            justification: None,
        };
        (fa, None)
    } else if attempts.len() == 1 {
        let fa = FinalAnswer {
            answer: attempts[0].answer.clone(),
            source: AnswerSource::SingleAttempt,
            selected_original_index: Some(1),
            justification: None,
        };
        (fa, None)
    } else {
        let agg = aggregate(problem, &attempts, agents.judge, cfg.aggregation, seed, cfg.elicitation_tries)?;
        let trace = match cfg.aggregation {
            AggregationMode::LastAnswer | AggregationMode::MaxJol => None,
            _ => Some(agg.trace),
        };
        (agg.final_answer, trace)
    };
    Ok(Trajectory {
        problem_id: problem.id.clone(),
        seed,
        fok,
        fok_usage,
        attempts,
        decisions,
        stop_reason,
        aggregation,
        final_answer,
        elicitation_failures: caller.failures,
    })
}

/// The controller-gated loop with compact retry context.
pub fn run_problem(
    problem: &Problem,
    agents: Agents<'_>,
    controller: &Controller,
    cfg: &HarnessConfig,
    global_seed: u64,
) -> Result<Trajectory, HarnessError> {
    run_loop(problem, agents, StopRule::Controller(controller), RetryContext::Compact, cfg, global_seed)
}

/// Expected attempts when each attempt is followed by a retry with
/// probability `rate`, truncated at `k_max`.
pub fn expected_k(rate: f64, k_max: usize) -> f64 {
    (0..k_max).map(|i| rate.powi(i as i32)).sum()
}

/// Retry rate whose expected attempt count equals `target_mean_k`.
pub fn random_retry_rate(target_mean_k: f64, k_max: usize) -> Result<f64, HarnessError> {
    if !(target_mean_k >= 1.0 && target_mean_k <= k_max as f64) {
        return Err(HarnessError::InvalidConfig(format!("target mean K {target_mean_k} outside [1, {k_max}]")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_k(mid, k_max) < target_mean_k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Evaluation policies: baselines, the harness and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    /// One attempt, no control.
    Pass1,
    /// Always `k_max` attempts, hybrid aggregation.
    FixedK,
    /// Always `k_max` attempts, final attempt's answer.
    LastAnswer,
    /// Always `k_max` attempts, highest-JOL answer.
    MaxJol,
    Harness,
    JolOnly,
    FokOnly,
    HandRule {
        tau: f64,
    },
    RandomRetry {
        rate: f64,
    },
    NoPriorState,
    FullReasoningContext,
}

impl Policy {
    pub fn needs_controller(&self) -> bool {
        matches!(
            self,
            Policy::Harness | Policy::JolOnly | Policy::FokOnly | Policy::NoPriorState | Policy::FullReasoningContext
        )
    }

    /// Signals the policy's controller must be fitted on.
    pub fn required_signals(&self) -> Option<Signals> {
        match self {
            Policy::JolOnly => Some(Signals::JolOnly),
            Policy::FokOnly => Some(Signals::FokOnly),
            p if p.needs_controller() => Some(Signals::Joint),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Pass1 => f.write_str("pass1"),
            Policy::FixedK => f.write_str("fixed_k"),
            Policy::LastAnswer => f.write_str("last_answer"),
            Policy::MaxJol => f.write_str("max_jol"),
            Policy::Harness => f.write_str("harness"),
            Policy::JolOnly => f.write_str("jol_only"),
            Policy::FokOnly => f.write_str("fok_only"),
            Policy::HandRule { tau } => write!(f, "hand_rule:{tau}"),
            Policy::RandomRetry { rate } => write!(f, "random_retry:{rate}"),
            Policy::NoPriorState => f.write_str("no_prior_state"),
            Policy::FullReasoningContext => f.write_str("full_reasoning_context"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy {0:?}")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || UnknownPolicy(s.to_string());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<f64>().map_err(|_| unknown())?)),
            None => (s, None),
        };
        Ok(match (name, arg) {
            ("pass1", None) => Policy::Pass1,
            ("fixed_k", None) => Policy::FixedK,
            ("last_answer", None) => Policy::LastAnswer,
            ("max_jol", None) => Policy::MaxJol,
            ("harness", None) => Policy::Harness,
            ("jol_only", None) => Policy::JolOnly,
            ("fok_only", None) => Policy::FokOnly,
            ("hand_rule", Some(tau)) if tau.is_finite() => Policy::HandRule { tau },
            ("random_retry", Some(rate)) if (0.0..=1.0).contains(&rate) => Policy::RandomRetry { rate },
            ("no_prior_state", None) => Policy::NoPriorState,
            ("full_reasoning_context", None) => Policy::FullReasoningContext,
            _ => return Err(unknown()),
        })
    }
}

/// Run one problem under `policy`. Controller-driven policies check that the
/// controller was fitted on the signals they read.
pub fn run_ablation_policy(
    problem: &Problem,
    agents: Agents<'_>,
    policy: Policy,
    controller: Option<&Controller>,
    cfg: &HarnessConfig,
    global_seed: u64,
) -> Result<Trajectory, HarnessError> {
    let ctl = || -> Result<&Controller, HarnessError> {
        let ctl = controller.ok_or_else(|| HarnessError::MissingController(policy.to_string()))?;
        let expected = policy.required_signals().unwrap_or(Signals::Joint);
        if ctl.signals != expected {
            return Err(HarnessError::SignalMismatch { policy: policy.to_string(), expected, found: ctl.signals });
        }
        Ok(ctl)
    };
    let fixed = |aggregation| HarnessConfig { aggregation, ..*cfg };
    match policy {
        Policy::Pass1 => {
            let single = HarnessConfig { k_max: 1, ..*cfg };
            run_loop(problem, agents, StopRule::Never, RetryContext::Compact, &single, global_seed)
        }
        Policy::FixedK => run_loop(problem, agents, StopRule::Never, RetryContext::Compact, cfg, global_seed),
        Policy::LastAnswer => run_loop(
            problem,
            agents,
            StopRule::Never,
            RetryContext::Compact,
            &fixed(AggregationMode::LastAnswer),
            global_seed,
        ),
        Policy::MaxJol => run_loop(
            problem,
            agents,
            StopRule::Never,
            RetryContext::Compact,
            &fixed(AggregationMode::MaxJol),
            global_seed,
        ),
        Policy::Harness | Policy::JolOnly | Policy::FokOnly => {
            run_loop(problem, agents, StopRule::Controller(ctl()?), RetryContext::Compact, cfg, global_seed)
        }
        Policy::NoPriorState => {
            run_loop(problem, agents, StopRule::Controller(ctl()?), RetryContext::Empty, cfg, global_seed)
        }
        Policy::FullReasoningContext => {
            run_loop(problem, agents, StopRule::Controller(ctl()?), RetryContext::FullReasoning, cfg, global_seed)
        }
        Policy::HandRule { tau } => {
            run_loop(problem, agents, StopRule::HandRule { tau }, RetryContext::Compact, cfg, global_seed)
        }
        Policy::RandomRetry { rate } => {
            run_loop(problem, agents, StopRule::RandomRetry { rate }, RetryContext::Compact, cfg, global_seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SimBackend, SimulatorSpec};
    use crate::controller::tests::toy_controller;
    use crate::elicitation::{tool_call_payload, PREVIOUS_ATTEMPTS_HEADER};
    use serde_json::json;
    use std::sync::Mutex;

    fn attempt(k: usize, answer: &str, jol: f64) -> Attempt {
        Attempt {
            k,
            reasoning: format!("reasoning {k}"),
            answer: answer.to_string(),
            jol: JolReport::new(Unit::new(jol).unwrap(), "because").unwrap(),
            usage: TokenUsage::new(1, 1),
        }
    }

    /// Replays fixed payloads per stage and records every request.
    struct Script {
        select: Vec<serde_json::Value>,
        seen: Mutex<Vec<StageRequest>>,
    }

    impl Backend for Script {
        fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError> {
            self.seen.lock().unwrap().push(request.clone());
            let i = request.meta.retry as usize;
            Ok(Invocation { payload: self.select[i.min(self.select.len() - 1)].clone(), usage: TokenUsage::new(2, 3) })
        }
    }

    fn select_payload(index: i64) -> serde_json::Value {
        tool_call_payload("select_attempt", &json!({"selected_index": index, "justification": "best"}), None)
    }

    #[test]
    fn ablation_finalizers() {
        let a = [attempt(1, "a", 0.3), attempt(2, "b", 0.9), attempt(3, "c", 0.5)];
        assert_eq!(ablation_finalize(&a, AggregationMode::MaxJol).unwrap().answer, "b");
        let tie = [attempt(1, "x", 0.9), attempt(2, "y", 0.9)];
        assert_eq!(ablation_finalize(&tie, AggregationMode::MaxJol).unwrap().answer, "x");
        let four = [attempt(1, "a", 0.1), attempt(2, "b", 0.1), attempt(3, "c", 0.1), attempt(4, "d", 0.1)];
        let last = ablation_finalize(&four, AggregationMode::LastAnswer).unwrap();
        assert_eq!((last.answer.as_str(), last.selected_original_index), ("d", Some(4)));
    }

    #[test]
    fn consensus_fires_without_selection_call() {
        let p = Problem::new("p", "circuit").with_gold("2R");
        let a = [attempt(1, "2R", 0.2), attempt(2, " 2r ", 0.2), attempt(3, "4R", 0.2)];
        let judge = Script { select: vec![select_payload(1)], seen: Mutex::new(vec![]) };
        let out = aggregate(&p, &a, &judge, AggregationMode::Hybrid, 1, 3).unwrap();
        assert_eq!(out.final_answer.answer, "2R");
        assert_eq!(out.final_answer.source, AnswerSource::Consensus);
        assert!(judge.seen.lock().unwrap().is_empty());
        let split = [attempt(1, "a", 0.2), attempt(2, "a", 0.2), attempt(3, "b", 0.2), attempt(4, "b", 0.2)];
        assert_eq!(strict_majority(&p, &split), None);
    }

    #[test]
    fn selection_maps_through_permutation() {
        let p = Problem::new("p", "q");
        let a = [attempt(1, "w", 0.2), attempt(2, "x", 0.2), attempt(3, "y", 0.2), attempt(4, "z", 0.2)];
        for seed in 0..30u64 {
            let judge = Script { select: vec![select_payload(3)], seen: Mutex::new(vec![]) };
            let out = aggregate(&p, &a, &judge, AggregationMode::Hybrid, seed, 3).unwrap();
            let perm = out.trace.permutation.clone().unwrap();
            assert_eq!(out.final_answer.selected_original_index, Some(perm[2]));
            assert_eq!(out.final_answer.answer, a[perm[2] - 1].answer);
            let prompt = &judge.seen.lock().unwrap()[0].user_prompt;
            assert!(!prompt.contains("JOL") && !prompt.contains("FOK"));
        }
    }

    #[test]
    fn selection_failures_fall_back_to_last() {
        let p = Problem::new("p", "q");
        let a = [attempt(1, "w", 0.2), attempt(2, "x", 0.2)];
        let judge = Script { select: vec![json!({"choices": []})], seen: Mutex::new(vec![]) };
        let out = aggregate(&p, &a, &judge, AggregationMode::Hybrid, 0, 3).unwrap();
        assert_eq!(out.final_answer.source, AnswerSource::FallbackLast);
        assert_eq!(out.final_answer.answer, "x");
        assert_eq!(out.trace.select_failures, 3);
        assert_eq!(out.trace.usage, TokenUsage::new(6, 9));
        let second_try = Script { select: vec![select_payload(9), select_payload(1)], seen: Mutex::new(vec![]) };
        let out = aggregate(&p, &a, &second_try, AggregationMode::SelectOnly, 0, 3).unwrap();
        assert_eq!(out.final_answer.source, AnswerSource::Selected);
        assert_eq!(out.trace.select_failures, 1);
    }

    #[test]
    fn retry_rate_matches_target() {
        assert_eq!(expected_k(0.0, 4), 1.0);
        assert_eq!(expected_k(1.0, 4), 4.0);
        let r = random_retry_rate(2.5, 4).unwrap();
        assert!((expected_k(r, 4) - 2.5).abs() < 1e-12);
        assert!(random_retry_rate(5.0, 4).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for p in [
            Policy::Pass1,
            Policy::FixedK,
            Policy::LastAnswer,
            Policy::MaxJol,
            Policy::Harness,
            Policy::JolOnly,
            Policy::FokOnly,
            Policy::HandRule { tau: 0.25 },
            Policy::RandomRetry { rate: 0.5 },
            Policy::NoPriorState,
            Policy::FullReasoningContext,
        ] {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
        assert!("random_retry:2".parse::<Policy>().is_err());
        assert!("bogus".parse::<Policy>().is_err());
    }

    #[test]
    fn context_modes_shape_retry_prompts() {
        let problem = Problem::new("p", "q").with_gold("g");
        let sim = SimBackend::new(SimulatorSpec::constant(0.0), std::slice::from_ref(&problem)).unwrap();
        let recorder = Recorder { inner: &sim, seen: Mutex::new(vec![]) };
        let agents = Agents::same(&recorder);
        let cfg = HarnessConfig::default();
        let ctl = toy_controller(0.99);
        for (policy, header, reasoning) in [
            (Policy::Harness, true, false),
            (Policy::NoPriorState, false, false),
            (Policy::FullReasoningContext, true, true),
        ] {
            recorder.seen.lock().unwrap().clear();
            let t = run_ablation_policy(&problem, agents, policy, Some(&ctl), &cfg, 5).unwrap();
            assert_eq!(t.k(), 4);
            let seen = recorder.seen.lock().unwrap();
            let retries: Vec<&StageRequest> =
                seen.iter().filter(|r| r.stage == Stage::Solve && r.meta.attempt >= 2).collect();
            assert_eq!(retries.len(), 3);
            for r in retries {
                assert_eq!(r.user_prompt.contains(PREVIOUS_ATTEMPTS_HEADER), header, "{policy}");
                assert_eq!(r.user_prompt.contains(&t.attempts[0].reasoning), reasoning, "{policy}");
            }
        }
    }

    struct Recorder<'a> {
        inner: &'a dyn Backend,
        seen: Mutex<Vec<StageRequest>>,
    }

    impl Backend for Recorder<'_> {
        fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError> {
            self.seen.lock().unwrap().push(request.clone());
            self.inner.invoke(request)
        }
    }

    #[test]
    fn signal_mismatch_rejected() {
        let problem = Problem::new("p", "q");
        let sim = SimBackend::new(SimulatorSpec::constant(0.5), std::slice::from_ref(&problem)).unwrap();
        let ctl = toy_controller(0.7);
        let err = run_ablation_policy(
            &problem,
            Agents::same(&sim),
            Policy::JolOnly,
            Some(&ctl),
            &HarnessConfig::default(),
            1,
        );
        assert!(matches!(err, Err(HarnessError::SignalMismatch { .. })));
        let err =
            run_ablation_policy(&problem, Agents::same(&sim), Policy::Harness, None, &HarnessConfig::default(), 1);
        assert!(matches!(err, Err(HarnessError::MissingController(_))));
    }

    #[test]
    fn malformed_solver_output_exhausts_or_falls_back() {
        let problem = Problem::new("p", "q").with_gold("g");
        let spec = SimulatorSpec { malformed_rate: 1.0, ..SimulatorSpec::constant(0.5) };
        let sim = SimBackend::new(spec, std::slice::from_ref(&problem)).unwrap();
        let err = run_loop(
            &problem,
            Agents::same(&sim),
            StopRule::Never,
            RetryContext::Compact,
            &HarnessConfig::default(),
            1,
        );
        assert!(matches!(err, Err(HarnessError::ElicitationExhausted { stage: Stage::Fok, tries: 3, .. })));
    }

    #[test]
    fn pass1_is_single_attempt_budget() {
        let problem = Problem::new("p", "q").with_gold("g");
        let sim = SimBackend::new(SimulatorSpec::constant(0.5), std::slice::from_ref(&problem)).unwrap();
        let t = run_ablation_policy(&problem, Agents::same(&sim), Policy::Pass1, None, &HarnessConfig::default(), 9)
            .unwrap();
        assert_eq!(t.k(), 1);
        assert_eq!(t.stop_reason, StopReason::BudgetExhausted);
        assert_eq!(t.final_answer.source, AnswerSource::SingleAttempt);
        let fixed =
            run_ablation_policy(&problem, Agents::same(&sim), Policy::FixedK, None, &HarnessConfig::default(), 9)
                .unwrap();
        assert_eq!(fixed.attempts[0], t.attempts[0]);
    }
}
