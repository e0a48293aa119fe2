//! Grading, batch policy runs and evaluation reports.
//!
//! Every reported number is reduced from the trajectory log alone, folding
//! records in problem-id order so that the report never depends on the
//! order in which problems finished.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{usage_cost, Agents, PricingTable};
use crate::controller::Controller;
use crate::harness::{run_ablation_policy, HarnessConfig, HarnessError, Policy};
use crate::metrics::{band_split, bootstrap_ci, jol_dispersion, Band, JolDispersion, MetricError};
use crate::types::{
    normalize_answer, parse_finite, AnchorTriple, Graded, Grader, Grading, Problem, StopReason, Trajectory,
};

pub const ABS_TOL: f64 = 1e-9;
pub const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("problem {0} has no gold answer")]
    MissingGold(String),
    #[error("{0:?} is not a finite number")]
    UnparseableNumeric(String),
    #[error("logs do not cover the same problems: {0}")]
    LogMismatch(String),
    #[error("log line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Whether `answer` matches the problem's gold under its grader.
pub fn grade(problem: &Problem, answer: &str) -> Result<bool, EvalError> {
    let gold = problem.gold.as_deref().ok_or_else(|| EvalError::MissingGold(problem.id.clone()))?;
    match problem.grader {
        Grader::ExactMatch => {
            let g =
                normalize_answer(gold, Grader::ExactMatch).map_err(|_| EvalError::MissingGold(problem.id.clone()))?;
            Ok(normalize_answer(answer, Grader::ExactMatch).is_ok_and(|a| a == g))
        }
        Grader::NumericTolerance => {
            let g = parse_finite(gold).ok_or_else(|| EvalError::UnparseableNumeric(gold.to_string()))?;
            let a = parse_finite(answer).ok_or_else(|| EvalError::UnparseableNumeric(answer.to_string()))?;
            Ok((a - g).abs() <= ABS_TOL.max(REL_TOL * g.abs()))
        }
    }
}

/// Grade every attempt and the final answer. A model answer that is not a
/// number under a numeric grader counts as incorrect.
pub fn grade_trajectory(problem: &Problem, trajectory: &Trajectory) -> Result<Grading, EvalError> {
    let check = |answer: &str| match grade(problem, answer) {
        Err(EvalError::UnparseableNumeric(s)) if s == answer => Ok(false),
        other => other,
    };
    Ok(Grading {
        attempts: trajectory.attempts.iter().map(|a| check(&a.answer)).collect::<Result<_, _>>()?,
        final_correct: check(&trajectory.final_answer.answer)?,
    })
}

/// One line of the trajectory log. Problems aborted for want of a valid
/// tool call carry `error` instead of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub policy: String,
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<Grading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LogRecord {
    pub fn graded(&self) -> Option<Graded> {
        self.trajectory.as_ref().map(|t| Graded { trajectory: t.clone(), grading: self.grading.clone() })
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log record serializes");
        line.push('\n');
        line
    }
}

/// Run and grade one problem. Exhausted elicitation is recorded in the log;
/// backend failures abort the run.
pub fn run_one(
    problem: &Problem,
    agents: Agents<'_>,
    policy: Policy,
    controller: Option<&Controller>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<LogRecord, EvalError> {
    let base = LogRecord {
        policy: policy.to_string(),
        problem_id: problem.id.clone(),
        trajectory: None,
        grading: None,
        error: None,
    };
    match run_ablation_policy(problem, agents, policy, controller, cfg, seed) {
        Ok(t) => {
            let grading = match problem.gold {
                Some(_) => Some(grade_trajectory(problem, &t)?),
                None => None,
            };
            Ok(LogRecord { trajectory: Some(t), grading, ..base })
        }
        Err(e @ HarnessError::ElicitationExhausted { .. }) => Ok(LogRecord { error: Some(e.to_string()), ..base }),
        Err(e) => Err(e.into()),
    }
}

/// Run a policy over all problems in parallel. Records come back in input
/// order regardless of scheduling.
pub fn run_policy(
    problems: &[Problem],
    agents: Agents<'_>,
    policy: Policy,
    controller: Option<&Controller>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<Vec<LogRecord>, EvalError> {
    problems.par_iter().map(|p| run_one(p, agents, policy, controller, cfg, seed)).collect()
}

/// Parse a line-delimited log; blank lines are skipped.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EvalError::MalformedLog { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(&line)
            .map_err(|e| EvalError::MalformedLog { line: line_no, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: Band,
    pub n: usize,
    pub pass1_accuracy_pct: f64,
    pub harness_accuracy_pct: f64,
    pub gain_pct: f64,
    pub harness_mean_attempts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub n: usize,
    /// Problems aborted without a trajectory; they count as incorrect.
    pub n_aborted: usize,
    pub accuracy_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_vs_pass1_pct: Option<f64>,
    pub oracle_at_k_pct: Option<f64>,
    pub mean_attempts: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cost: Option<f64>,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub ci_pct: Option<(f64, f64)>,
    pub early_stop_hit_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<BandRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_rank: Option<usize>,
}

fn sorted_by_id(records: &[LogRecord]) -> Vec<&LogRecord> {
    let mut v: Vec<&LogRecord> = records.iter().collect();
    v.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    v
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Reduce one policy's log. Accuracy metrics need gradings on every
/// completed record and are absent otherwise.
pub fn summarize(
    records: &[LogRecord],
    pricing: Option<&PricingTable>,
    bootstrap_b: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let records = sorted_by_id(records);
    let n = records.len();
    if n == 0 {
        return Err(MetricError::Empty.into());
    }
    let policy = records[0].policy.clone();
    let done: Vec<&Trajectory> = records.iter().filter_map(|r| r.trajectory.as_ref()).collect();
    let n_aborted = n - done.len();
    let graded = records.iter().all(|r| r.trajectory.is_none() || r.grading.is_some());

    let mut attempts = 0.0;
    let mut input = 0.0;
    let mut output = 0.0;
    let mut cost = 0.0;
    for t in &done {
        let usage = t.total_usage();
        attempts += t.k() as f64;
        input += usage.input_tokens as f64;
        output += usage.output_tokens as f64;
        if let Some(p) = pricing {
            cost += usage_cost(usage, p);
        }
    }

    let (accuracy_pct, oracle_at_k_pct, ci_pct, early_stop_hit_rate) = if graded {
        let finals: Vec<bool> = records.iter().map(|r| r.grading.as_ref().is_some_and(|g| g.final_correct)).collect();
        let oracle =
            records.iter().filter(|r| r.grading.as_ref().is_some_and(|g| g.attempts.iter().any(|&c| c))).count();
        let mut stopped = 0usize;
        let mut hits = 0usize;
        for r in &records {
            if let (Some(t), Some(g)) = (&r.trajectory, &r.grading) {
                if t.k() == 1 && t.stop_reason == StopReason::Trusted {
                    stopped += 1;
                    hits += usize::from(g.attempts[0]);
                }
            }
        }
        let correct = finals.iter().filter(|&&c| c).count();
        (
            Some(100.0 * correct as f64 / n as f64),
            Some(100.0 * oracle as f64 / n as f64),
            Some(bootstrap_ci(&finals, bootstrap_b, seed)?),
            (stopped > 0).then(|| hits as f64 / stopped as f64),
        )
    } else {
        (None, None, None, None)
    };

    Ok(EvalReport {
        policy,
        n,
        n_aborted,
        accuracy_pct,
        gain_vs_pass1_pct: None,
        oracle_at_k_pct,
        mean_attempts: mean(attempts, done.len()),
        mean_cost: pricing.map(|_| mean(cost, n)),
        mean_input_tokens: mean(input, done.len()),
        mean_output_tokens: mean(output, done.len()),
        ci_pct,
        early_stop_hit_rate,
        bands: None,
        gain_rank: None,
    })
}

fn id_set(records: &[LogRecord]) -> BTreeSet<&str> {
    records.iter().map(|r| r.problem_id.as_str()).collect()
}

fn check_paired(a: &[LogRecord], b: &[LogRecord]) -> Result<(), EvalError> {
    let (sa, sb) = (id_set(a), id_set(b));
    if sa.len() != a.len() || sb.len() != b.len() {
        return Err(EvalError::LogMismatch("duplicate problem ids".into()));
    }
    if sa != sb {
        let missing = sa.symmetric_difference(&sb).next().copied().unwrap_or_default();
        return Err(EvalError::LogMismatch(format!("problem {missing} is not in both logs")));
    }
    Ok(())
}

/// Per-band pass@1 vs harness accuracy. Bands come from first-attempt JOL in
/// the pass@1 log; problems aborted in either log are dropped from both.
pub fn band_gain_analysis(pass1: &[LogRecord], harness: &[LogRecord]) -> Result<Vec<BandRow>, EvalError> {
    check_paired(pass1, harness)?;
    let h: BTreeMap<&str, &LogRecord> = harness.iter().map(|r| (r.problem_id.as_str(), r)).collect();
    let mut rows = Vec::new();
    for p in sorted_by_id(pass1) {
        let q = h[p.problem_id.as_str()];
        let (Some(pt), Some(qt)) = (&p.trajectory, &q.trajectory) else { continue };
        let (Some(pg), Some(qg)) = (&p.grading, &q.grading) else {
            return Err(EvalError::MissingGold(p.problem_id.clone()));
        };
        rows.push((pt.attempts[0].jol.jol_score.get(), pg.final_correct, qg.final_correct, qt.k()));
    }
    let bands = band_split(&rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
    Ok(Band::ALL
        .iter()
        .map(|&band| {
            let members: Vec<_> = rows.iter().zip(&bands).filter(|(_, b)| **b == band).map(|(r, _)| r).collect();
            let n = members.len();
            let before = mean(members.iter().filter(|r| r.1).count() as f64 * 100.0, n);
            let after = mean(members.iter().filter(|r| r.2).count() as f64 * 100.0, n);
            BandRow {
                band,
                n,
                pass1_accuracy_pct: before,
                harness_accuracy_pct: after,
                gain_pct: after - before,
                harness_mean_attempts: mean(members.iter().map(|r| r.3 as f64).sum(), n),
            }
        })
        .collect())
}

/// Reports for several policies run on the same problems and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub reports: Vec<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<JolDispersion>,
}

/// Summarize each log; when a pass@1 log is present, fill in the gain of
/// every other policy against it, and rank gains when two or more policies
/// have one. Band rows are attached to every controller-gated policy.
pub fn build_bundle(
    logs: &[Vec<LogRecord>],
    pricing: Option<&PricingTable>,
    bootstrap_b: usize,
    seed: u64,
) -> Result<ReportBundle, EvalError> {
    let mut reports = logs.iter().map(|l| summarize(l, pricing, bootstrap_b, seed)).collect::<Result<Vec<_>, _>>()?;
    let pass1 = logs.iter().position(|l| l.first().is_some_and(|r| r.policy == Policy::Pass1.to_string()));
    if let Some(pi) = pass1 {
        let base = reports[pi].accuracy_pct;
        for (i, log) in logs.iter().enumerate() {
            if i == pi {
                continue;
            }
            check_paired(&logs[pi], log)?;
            if let (Some(a), Some(b)) = (reports[i].accuracy_pct, base) {
                reports[i].gain_vs_pass1_pct = Some(a - b);
            }
            let policy: Option<Policy> = reports[i].policy.parse().ok();
            if policy.is_some_and(|p| p.needs_controller()) {
                reports[i].bands = Some(band_gain_analysis(&logs[pi], log)?);
            }
        }
        let mut ranked: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].gain_vs_pass1_pct.is_some()).collect();
        if ranked.len() >= 2 {
            ranked.sort_by(|&a, &b| {
                let (ga, gb) = (reports[a].gain_vs_pass1_pct.unwrap(), reports[b].gain_vs_pass1_pct.unwrap());
                gb.total_cmp(&ga).then(a.cmp(&b))
            });
            for (rank, i) in ranked.into_iter().enumerate() {
                reports[i].gain_rank = Some(rank + 1);
            }
        }
    }
    let multi: Vec<&Trajectory> = logs.iter().flatten().filter_map(|r| r.trajectory.as_ref()).collect();
    let dispersion = jol_dispersion(multi).ok();
    Ok(ReportBundle { reports, dispersion })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Aligned plain-text table, one row per policy.
pub fn render_table(bundle: &ReportBundle) -> String {
    let header = [
        "Policy",
        "N",
        "Acc.",
        "Gain",
        "Oracle Acc.",
        "Avg. Attempts",
        "Avg. Cost/Q",
        "95% CI",
        "Early-stop hit",
        "Rank",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &bundle.reports {
        rows.push(vec![
            r.policy.clone(),
            r.n.to_string(),
            opt(r.accuracy_pct, 1),
            r.gain_vs_pass1_pct.map_or_else(|| "-".to_string(), |g| format!("{g:+.1}")),
            opt(r.oracle_at_k_pct, 1),
            format!("{:.2}", r.mean_attempts),
            opt(r.mean_cost, 4),
            r.ci_pct.map_or_else(|| "-".to_string(), |(lo, hi)| format!("[{lo:.1}, {hi:.1}]")),
            opt(r.early_stop_hit_rate, 3),
            r.gain_rank.map_or_else(|| "-".to_string(), |k| k.to_string()),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    for r in &bundle.reports {
        if let Some(bands) = &r.bands {
            let _ = writeln!(out, "\nConfidence bands for {} (first-attempt JOL under pass1):", r.policy);
            let _ =
                writeln!(out, "{:<8}{:>5}{:>10}{:>10}{:>9}{:>11}", "Band", "N", "Pass@1", "After", "Gain", "Avg. K");
            for b in bands {
                let _ = writeln!(
                    out,
                    "{:<8}{:>5}{:>10.1}{:>10.1}{:>+9.1}{:>11.2}",
                    format!("{:?}", b.band),
                    b.n,
                    b.pass1_accuracy_pct,
                    b.harness_accuracy_pct,
                    b.gain_pct,
                    b.harness_mean_attempts
                );
            }
        }
    }
    if let Some(d) = &bundle.dispersion {
        let _ = writeln!(
            out,
            "\nJOL dispersion: within-problem median std {:.3} over {} multi-attempt trajectories; across-problem std {:.3}; ratio {}",
            d.median_within_std,
            d.n_multi_attempt,
            d.across_std,
            opt(d.ratio(), 2)
        );
    }
    out
}

/// Anchor triples from raw problems: one FOK and one attempt each, labeled
/// by grading that attempt. Aborted problems are skipped.
pub fn elicit_anchors(
    problems: &[Problem],
    agents: Agents<'_>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<Vec<AnchorTriple>, EvalError> {
    let records = run_policy(problems, agents, Policy::Pass1, None, cfg, seed)?;
    let mut anchors = Vec::new();
    for (problem, record) in problems.iter().zip(records) {
        let (Some(t), Some(g)) = (record.trajectory, record.grading) else {
            if problem.gold.is_none() {
                return Err(EvalError::MissingGold(problem.id.clone()));
            }
            continue;
        };
        anchors.push(AnchorTriple {
            fok: t.fok.fok_score,
            jol: t.attempts[0].jol.jol_score,
            y: g.attempts[0],
            group_id: problem.id.clone(),
        });
    }
    Ok(anchors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SimBackend, SimulatorSpec};

    #[test]
    fn grading_examples() {
        let exact = Problem::new("a", "q").with_gold("4");
        assert!(grade(&exact, "4").unwrap());
        let numeric = Problem::new("b", "q").with_gold("0.5").with_grader(Grader::NumericTolerance);
        assert!(grade(&numeric, "0.5000001").unwrap());
        assert!(!grade(&numeric, "0.5001").unwrap());
        assert!(matches!(grade(&numeric, "half"), Err(EvalError::UnparseableNumeric(_))));
        let circuit = Problem::new("c", "q").with_gold("2R");
        assert!(!grade(&circuit, "4R").unwrap());
        assert!(matches!(grade(&Problem::new("d", "q"), "x"), Err(EvalError::MissingGold(_))));
        let zero = Problem::new("e", "q").with_gold("0").with_grader(Grader::NumericTolerance);
        assert!(grade(&zero, "1e-10").unwrap());
        assert!(!grade(&zero, "1e-8").unwrap());
    }

    fn problems(n: usize) -> Vec<Problem> {
        (0..n).map(|i| Problem::new(format!("p{i:03}"), "q").with_gold("g")).collect()
    }

    #[test]
    fn identical_logs_have_zero_band_gain() {
        let ps = problems(30);
        let spec = SimulatorSpec { jol_noise_sd: 0.2, ..SimulatorSpec::constant(0.5) };
        let sim = SimBackend::new(spec, &ps).unwrap();
        let log = run_policy(&ps, Agents::same(&sim), Policy::Pass1, None, &HarnessConfig::default(), 3).unwrap();
        let bands = band_gain_analysis(&log, &log).unwrap();
        assert_eq!(bands.iter().map(|b| b.n).collect::<Vec<_>>(), vec![9, 12, 9]);
        assert!(bands.iter().all(|b| b.gain_pct == 0.0));
        assert!(matches!(band_gain_analysis(&log, &log[1..]), Err(EvalError::LogMismatch(_))));
    }

    #[test]
    fn summary_respects_ordering_invariants() {
        let ps = problems(40);
        let sim = SimBackend::new(SimulatorSpec::constant(0.4), &ps).unwrap();
        let cfg = HarnessConfig::default();
        let mut log = run_policy(&ps, Agents::same(&sim), Policy::FixedK, None, &cfg, 11).unwrap();
        let a = summarize(&log, Some(&PricingTable::new(0.001, 0.002).unwrap()), 200, 1).unwrap();
        log.reverse();
        let b = summarize(&log, Some(&PricingTable::new(0.001, 0.002).unwrap()), 200, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.accuracy_pct.unwrap() <= a.oracle_at_k_pct.unwrap());
        assert_eq!(a.mean_attempts, 4.0);
        assert!(a.mean_cost.unwrap() > 0.0);
    }

    #[test]
    fn log_round_trip_and_line_numbers() {
        let ps = problems(3);
        let sim = SimBackend::new(SimulatorSpec::constant(0.5), &ps).unwrap();
        let log = run_policy(&ps, Agents::same(&sim), Policy::FixedK, None, &HarnessConfig::default(), 2).unwrap();
        let text: String = log.iter().map(LogRecord::to_line).collect();
        assert_eq!(read_log(text.as_bytes()).unwrap(), log);
        let broken = format!("{}\n{{not json\n", log[0].to_line().trim_end());
        assert!(matches!(read_log(broken.as_bytes()), Err(EvalError::MalformedLog { line: 2, .. })));
    }

    #[test]
    fn bundle_pairs_against_pass1() {
        let ps = problems(30);
        let sim = SimBackend::new(SimulatorSpec::constant(0.5), &ps).unwrap();
        let cfg = HarnessConfig::default();
        let p1 = run_policy(&ps, Agents::same(&sim), Policy::Pass1, None, &cfg, 4).unwrap();
        let fk = run_policy(&ps, Agents::same(&sim), Policy::FixedK, None, &cfg, 4).unwrap();
        let ma = run_policy(&ps, Agents::same(&sim), Policy::MaxJol, None, &cfg, 4).unwrap();
        let bundle = build_bundle(&[p1, fk, ma], None, 100, 0).unwrap();
        assert!(bundle.reports[0].gain_vs_pass1_pct.is_none());
        assert!(bundle.reports[1].gain_vs_pass1_pct.is_some());
        let mut ranks: Vec<usize> = bundle.reports.iter().filter_map(|r| r.gain_rank).collect();
        ranks.sort();
        assert_eq!(ranks, vec![1, 2]);
        let table = render_table(&bundle);
        assert!(table.contains("Oracle Acc.") && table.contains("fixed_k"));
    }
}
