//! Seeded simulator backend driven by a latent per-problem solve probability.
//!
//! Every draw is keyed by `(request seed, stage, attempt, retry)`, so a
//! trajectory is a pure function of the simulator settings and the caller's
//! seed and does not depend on scheduling.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Invocation};
use crate::elicitation::{tool_call_payload, Stage, StageRequest, FOK_TOOL, SELECT_TOOL, SOLVE_TOOL};
use crate::seed::{derive_seed, rng_from};
use crate::types::{normalize_answer, Grader, Problem, TokenUsage};

/// Where a problem's latent solve probability comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latent {
    Constant {
        p: f64,
    },
    /// `p ~ Uniform(low, high)` per problem, keyed by `(seed, problem id)`.
    Uniform {
        low: f64,
        high: f64,
        seed: u64,
    },
    PerProblem {
        values: BTreeMap<String, f64>,
        default: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSpec {
    pub latent: Latent,
    #[serde(default)]
    pub fok_noise_sd: f64,
    #[serde(default)]
    pub jol_noise_sd: f64,
    #[serde(default)]
    pub fok_bias: f64,
    #[serde(default)]
    pub jol_bias: f64,
    pub distractors: Vec<String>,
    /// Attempts draw correctness independently; otherwise one uniform draw
    /// per problem is shared by every attempt.
    #[serde(default = "yes")]
    pub independent: bool,
    /// Weight of realized correctness in the JOL base; the rest is latent p.
    #[serde(default = "one")]
    pub jol_correctness_weight: f64,
    /// Optional per-attempt override of p; attempt `k` uses entry `k - 1`,
    /// and attempts past the end use the last entry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempt_p: Vec<f64>,
    /// Probability that a response carries no tool call.
    #[serde(default)]
    pub malformed_rate: f64,
    /// Wrong attempts on one problem walk a per-problem shuffle of the
    /// distractor pool, so they repeat only after the pool is used up.
    #[serde(default)]
    pub distinct_wrong_answers: bool,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl SimulatorSpec {
    pub fn constant(p: f64) -> Self {
        SimulatorSpec {
            latent: Latent::Constant { p },
            fok_noise_sd: 0.0,
            jol_noise_sd: 0.0,
            fok_bias: 0.0,
            jol_bias: 0.0,
            distractors: (1..=6).map(|i| format!("distractor-{i}")).collect(),
            independent: true,
            jol_correctness_weight: 1.0,
            attempt_p: Vec::new(),
            malformed_rate: 0.0,
            distinct_wrong_answers: false,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidConfig(m.to_string()));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        match &self.latent {
            Latent::Constant { p } if !unit(*p) => return bad("latent p outside [0, 1]"),
            Latent::Uniform { low, high, .. } if !(unit(*low) && unit(*high) && low <= high) => {
                return bad("uniform latent bounds must satisfy 0 <= low <= high <= 1")
            }
            Latent::PerProblem { values, default } if !unit(*default) || !values.values().all(|&v| unit(v)) => {
                return bad("per-problem latent p outside [0, 1]")
            }
            _ => {}
        }
        if !(self.fok_noise_sd >= 0.0 && self.jol_noise_sd >= 0.0) {
            return bad("noise standard deviations must be nonnegative");
        }
        if !(self.fok_bias.is_finite() && self.jol_bias.is_finite()) {
            return bad("biases must be finite");
        }
        if self.distractors.is_empty() || self.distractors.iter().any(|d| d.trim().is_empty()) {
            return bad("distractor pool must be nonempty with nonempty entries");
        }
        if !unit(self.jol_correctness_weight) || !unit(self.malformed_rate) {
            return bad("jol_correctness_weight and malformed_rate must lie in [0, 1]");
        }
        if !self.attempt_p.iter().all(|&v| unit(v)) {
            return bad("attempt_p entries must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn latent_p(&self, problem_id: &str) -> f64 {
        match &self.latent {
            Latent::Constant { p } => *p,
            Latent::Uniform { low, high, seed } => {
                let u: f64 = rng_from(derive_seed(*seed, problem_id)).random();
                low + (high - low) * u
            }
            Latent::PerProblem { values, default } => values.get(problem_id).copied().unwrap_or(*default),
        }
    }

    fn attempt_p(&self, problem_id: &str, attempt: usize) -> f64 {
        match self.attempt_p.as_slice() {
            [] => self.latent_p(problem_id),
            list => list[attempt.saturating_sub(1).min(list.len() - 1)],
        }
    }
}

#[derive(Debug, Clone)]
struct Key {
    gold: String,
    grader: Grader,
}

/// Simulator over a fixed problem set; the gold answers stay inside.
#[derive(Debug, Clone)]
pub struct SimBackend {
    spec: SimulatorSpec,
    keys: HashMap<String, Key>,
}

impl SimBackend {
    pub fn new(spec: SimulatorSpec, problems: &[Problem]) -> Result<Self, BackendError> {
        spec.validate()?;
        let keys = problems
            .iter()
            .map(|p| {
                let gold = p.gold.clone().unwrap_or_else(|| format!("answer-{}", p.id));
                (p.id.clone(), Key { gold, grader: p.grader })
            })
            .collect();
        Ok(SimBackend { spec, keys })
    }

    pub fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn key(&self, problem_id: &str) -> Result<&Key, BackendError> {
        self.keys
            .get(problem_id)
            .ok_or_else(|| BackendError::InvalidConfig(format!("simulator has no problem {problem_id:?}")))
    }
}

fn noise(rng: &mut impl Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("sd is finite and nonnegative").sample(rng)
    }
}

fn same(a: &str, b: &str, grader: Grader) -> bool {
    match (normalize_answer(a, grader), normalize_answer(b, grader)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Answers listed in a selection prompt, in display order.
fn shown_answers(prompt: &str) -> Vec<&str> {
    prompt.lines().filter_map(|l| l.strip_prefix("**Answer:** ")).collect()
}

fn token_estimate(text: &str) -> u64 {
    text.len() as u64 / 4 + 1
}

impl Backend for SimBackend {
    fn invoke(&self, request: &StageRequest) -> Result<Invocation, BackendError> {
        let meta = &request.meta;
        let key = self.key(&meta.problem_id)?;
        let stage_label = match request.stage {
            Stage::Fok => "fok",
            Stage::Solve => "solve",
            Stage::Select => "select",
        };
        let call_seed = derive_seed(meta.seed, &format!("sim/{stage_label}/{}/{}", meta.attempt, meta.retry));
        let mut rng = rng_from(call_seed);
        let usage_in = token_estimate(&request.system_prompt) + token_estimate(&request.user_prompt);

        if rng.random::<f64>() < self.spec.malformed_rate {
            let payload = json!({
                "object": "chat.completion",
                "choices": [{"index": 0, "finish_reason": "stop", "message": {"role": "assistant", "content": "I will answer in prose instead."}}],
                "usage": {"prompt_tokens": usage_in, "completion_tokens": 8},
            });
            return Ok(Invocation { payload, usage: TokenUsage::new(usage_in, 8) });
        }

        let (tool, args) = match request.stage {
            Stage::Fok => {
                let p = self.spec.latent_p(&meta.problem_id);
                let fok = (p + self.spec.fok_bias + noise(&mut rng, self.spec.fok_noise_sd)).clamp(0.0, 1.0);
                (
                    FOK_TOOL,
                    json!({
                        "domain": "simulated",
                        "FOK_score": fok,
                        "FOK_reason": "Familiarity with this problem family.",
                    }),
                )
            }
            Stage::Solve => {
                let p = self.spec.attempt_p(&meta.problem_id, meta.attempt);
                let u: f64 = if self.spec.independent {
                    rng.random()
                } else {
                    rng_from(derive_seed(meta.seed, "sim/shared")).random()
                };
                let correct = u < p;
                let answer = if correct {
                    key.gold.clone()
                } else {
                    let pool: Vec<&String> =
                        self.spec.distractors.iter().filter(|d| !same(d, &key.gold, key.grader)).collect();
                    if pool.is_empty() {
                        format!("not {}", key.gold)
                    } else if self.spec.distinct_wrong_answers {
                        let mut order: Vec<usize> = (0..pool.len()).collect();
                        order.shuffle(&mut rng_from(derive_seed(meta.seed, "sim/distractors")));
                        pool[order[meta.attempt.saturating_sub(1) % pool.len()]].clone()
                    } else {
                        pool[rng.random_range(0..pool.len())].clone()
                    }
                };
                let w = self.spec.jol_correctness_weight;
                let base = w * f64::from(u8::from(correct)) + (1.0 - w) * p;
                let jol = (base + self.spec.jol_bias + noise(&mut rng, self.spec.jol_noise_sd)).clamp(0.0, 1.0);
                let tag: u32 = rng.random();
                (
                    SOLVE_TOOL,
                    json!({
                        "reasoning": format!("Worked solution for {} attempt {} [trace {tag:08x}].", meta.problem_id, meta.attempt),
                        "answer": answer,
                        "JOL_score": jol,
                        "JOL_reason": format!("Checked the result; confidence {jol:.2}."),
                    }),
                )
            }
            Stage::Select => {
                let shown = shown_answers(&request.user_prompt);
                let n = request.tool_schema.select_bound().unwrap_or(shown.len()).max(1);
                let index = shown
                    .iter()
                    .position(|a| same(a, &key.gold, key.grader))
                    .map(|i| i + 1)
                    .unwrap_or_else(|| rng.random_range(1..=n));
                (
                    SELECT_TOOL,
                    json!({
                        "selected_index": index,
                        "justification": "This attempt's derivation holds up under checking.",
                    }),
                )
            }
        };
        let usage_out = token_estimate(&args.to_string());
        let payload = tool_call_payload(tool, &args, Some((usage_in, usage_out)));
        Ok(Invocation { payload, usage: TokenUsage::new(usage_in, usage_out) })
    }
}

/// Parse simulator settings from JSON text.
pub fn spec_from_json(value: &Value) -> Result<SimulatorSpec, BackendError> {
    let spec: SimulatorSpec =
        serde_json::from_value(value.clone()).map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}
