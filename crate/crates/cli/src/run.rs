//! `run`: one policy over a problem set, streamed to a trajectory log.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use metaharness::controller::Controller;
use metaharness::evalkit::{build_bundle, render_table, run_one, EvalError, LogRecord, ReportBundle};
use metaharness::harness::Policy;
use metaharness::types::read_problem_set;
use metaharness::Problem;
use rayon::prelude::*;

use crate::backends::{self, DEBUG_LOG};
use crate::error::CliError;
use crate::files::{ensure_dir, open_for_resume, read_log_file, write_atomic, OrderedWriter};
use crate::manifest::{now_ms, RunManifest};
use crate::{pool, resolve, GlobalArgs, RunArgs};

#[derive(Debug)]
pub struct RunOutcome {
    pub log: PathBuf,
    pub report: PathBuf,
    pub bundle: ReportBundle,
    pub manifest: RunManifest,
    /// Problems already in the log when a resumed run started.
    pub resumed: usize,
}

/// File-name stem for a policy; `hand_rule:0.25` becomes `hand_rule-0.25`.
pub fn policy_stem(policy: &Policy) -> String {
    policy.to_string().replace(':', "-")
}

pub fn log_path(out: &Path, policy: &Policy) -> PathBuf {
    out.join(format!("{}.trajectories.jsonl", policy_stem(policy)))
}

pub fn report_path(out: &Path, policy: &Policy) -> PathBuf {
    out.join(format!("{}.report.json", policy_stem(policy)))
}

pub fn manifest_path(out: &Path, policy: &Policy) -> PathBuf {
    out.join(format!("{}.manifest.json", policy_stem(policy)))
}

fn load_problems(path: &Path) -> Result<Vec<Problem>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    read_problem_set(BufReader::new(f)).map_err(|e| match e {
        metaharness::types::ProblemSetError::Io(io) => CliError::io(path.display(), io),
        other => CliError::Parse(format!("{}: {other}", path.display())),
    })
}

fn load_controller(args: &RunArgs) -> Result<Option<Controller>, CliError> {
    let Some(path) = &args.controller else {
        if args.policy.needs_controller() {
            return Err(CliError::Usage(format!("policy {} needs --controller", args.policy)));
        }
        return Ok(None);
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    let ctl = Controller::load(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(Some(match args.p_stop {
        Some(p) => ctl.with_p_stop(p)?,
        None => ctl,
    }))
}

/// Check that an existing log is an in-order prefix of this run.
fn check_prefix(existing: &[LogRecord], problems: &[Problem], policy: &Policy, path: &Path) -> Result<(), CliError> {
    if existing.len() > problems.len() {
        return Err(CliError::Usage(format!("{} holds more records than the problem set", path.display())));
    }
    let name = policy.to_string();
    for (i, (r, p)) in existing.iter().zip(problems).enumerate() {
        if r.policy != name || r.problem_id != p.id {
            return Err(CliError::Usage(format!(
                "{} line {}: record ({}, {}) does not continue this run ({name}, {})",
                path.display(),
                i + 1,
                r.policy,
                r.problem_id,
                p.id
            )));
        }
    }
    Ok(())
}

/// Pass@1 log from an earlier run into the same directory with the same
/// seed, if there is one.
fn paired_pass1(out: &Path, seed: u64, stderr: &mut dyn Write) -> Option<Vec<LogRecord>> {
    let manifest = RunManifest::read(&manifest_path(out, &Policy::Pass1)).ok()?;
    if manifest.seed != seed {
        let _ = writeln!(stderr, "note: pass1 log in {} used seed {}; not paired", out.display(), manifest.seed);
        return None;
    }
    read_log_file(&log_path(out, &Policy::Pass1)).ok()
}

pub fn cmd_run(
    global: &GlobalArgs,
    args: &RunArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<RunOutcome, CliError> {
    let started = now_ms();
    let (mut config, seed, jobs) = resolve(global)?;
    if let Some(k) = args.k_max {
        config.budget.k_max = k;
    }
    if let Some(p) = args.p_stop {
        config.thresholds.p_stop = p;
    }
    config.validate()?;
    let cfg = config.harness();
    let problems = load_problems(&args.problems)?;
    let controller = load_controller(args)?;
    let kind = backends::resolve_kind(args.backend, &config)?;

    let log = log_path(&args.out, &args.policy);
    if log.exists() && !args.resume {
        return Err(CliError::Usage(format!("{} exists; pass --resume to continue it", log.display())));
    }
    ensure_dir(&args.out)?;
    let b = backends::build(kind, &config, &problems, args.debug.then_some(args.out.as_path()))?;
    let (existing, file) = if log.exists() {
        open_for_resume(&log)?
    } else {
        let f =
            OpenOptions::new().create_new(true).append(true).open(&log).map_err(|e| CliError::io(log.display(), e))?;
        (Vec::new(), f)
    };
    check_prefix(&existing, &problems, &args.policy, &log)?;
    let resumed = existing.len();

    let workers = pool(jobs)?;
    let agents = b.agents();
    let todo = &problems[resumed..];
    let abort = AtomicBool::new(false);
    let mut writer = OrderedWriter::new(file, resumed);
    let mut failure: Option<CliError> = None;
    workers.in_place_scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<LogRecord, EvalError>)>();
        let ctl = controller.as_ref();
        let abort = &abort;
        let cfg = &cfg;
        scope.spawn(move |_| {
            todo.par_iter().enumerate().for_each_with(tx, |tx, (i, p)| {
                if abort.load(Ordering::Relaxed) {
                    return;
                }
                let _ = tx.send((resumed + i, run_one(p, agents, args.policy, ctl, cfg, seed)));
            });
        });
        for (index, result) in rx {
            let step = match result {
                Ok(record) => writer.push(index, record.to_line()).map_err(|e| CliError::io(log.display(), e)),
                Err(e) => Err(CliError::from(e)),
            };
            if let Err(e) = step {
                abort.store(true, Ordering::Relaxed);
                failure.get_or_insert(e);
            }
        }
    });
    if let Some(e) = failure {
        let _ = writeln!(
            stderr,
            "{} of {} problems are in {}; rerun with --resume to continue",
            writer.next(),
            problems.len(),
            log.display()
        );
        return Err(e);
    }
    drop(writer);

    let records = read_log_file(&log)?;
    let mut logs = Vec::new();
    if args.policy != Policy::Pass1 {
        if let Some(p1) = paired_pass1(&args.out, seed, stderr) {
            logs.push(p1);
        }
    }
    logs.push(records);
    let pricing = config.pricing.as_ref();
    let bundle = match build_bundle(&logs, pricing, config.report.bootstrap_b, seed) {
        Ok(b) => b,
        Err(EvalError::LogMismatch(m)) if logs.len() > 1 => {
            let _ = writeln!(stderr, "note: pass1 log not paired with this run ({m})");
            build_bundle(&logs[logs.len() - 1..], pricing, config.report.bootstrap_b, seed)?
        }
        Err(e) => return Err(e.into()),
    };

    let report = report_path(&args.out, &args.policy);
    let mut json = serde_json::to_string_pretty(&bundle).expect("report serializes");
    json.push('\n');
    write_atomic(&report, json.as_bytes())?;

    let mut manifest = RunManifest::new("run", global.config.as_deref(), &config, seed, started);
    manifest.input("problems", args.problems.display());
    manifest.input("policy", args.policy);
    manifest.input("backend", format!("{kind:?}").to_lowercase());
    manifest.input("jobs", jobs);
    manifest.input("resumed_records", resumed);
    if let Some(c) = &args.controller {
        manifest.input("controller", c.display());
    }
    if args.debug && kind == crate::BackendKind::Http {
        manifest.artifacts.push(args.out.join(DEBUG_LOG));
    }
    manifest.artifacts.push(log.clone());
    manifest.artifacts.push(report.clone());
    let manifest = manifest.write(&manifest_path(&args.out, &args.policy))?;

    let _ = write!(stdout, "{}", render_table(&bundle));
    Ok(RunOutcome { log, report, bundle, manifest, resumed })
}
