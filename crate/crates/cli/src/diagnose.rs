//! `diagnose`: report card and controller from an anchor set.

use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use metaharness::controller::{cross_validated_search, CvPlan, Signals};
use metaharness::diagnosis::{build_report_card, ReportCard};
use metaharness::evalkit::elicit_anchors;
use metaharness::types::read_problem_set;
use metaharness::{AnchorTriple, Problem};
use serde_json::Value;

use crate::backends::{self, DEBUG_LOG};
use crate::error::CliError;
use crate::files::{ensure_dir, write_atomic};
use crate::manifest::{now_ms, RunManifest};
use crate::{pool, resolve, DiagnoseArgs, GlobalArgs};

pub const CARD_JSON: &str = "report_card.json";
pub const CARD_TEXT: &str = "report_card.txt";
pub const CONTROLLER: &str = "controller.json";
/// Where a fitted controller goes when the verdict withholds it.
pub const CONTROLLER_WITHHELD: &str = "controller.withheld.json";
pub const ELICITED_ANCHORS: &str = "anchors.jsonl";
pub const MANIFEST: &str = "diagnose.manifest.json";

#[derive(Debug)]
pub struct DiagnoseOutcome {
    pub card: ReportCard,
    /// Released controller artifact; absent when withheld.
    pub controller: Option<PathBuf>,
    pub manifest: RunManifest,
}

enum AnchorInput {
    Triples(Vec<AnchorTriple>),
    Problems(Vec<Problem>),
}

fn read_anchor_input(path: &Path) -> Result<AnchorInput, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let located =
        |line: usize, e: &dyn std::fmt::Display| CliError::Parse(format!("{} line {line}: {e}", path.display()));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((first_idx, first)) = lines.next() else {
        return Err(CliError::Parse(format!("{}: no anchors", path.display())));
    };
    let probe: Value = serde_json::from_str(first).map_err(|e| located(first_idx + 1, &e))?;
    if probe.get("fok").is_none() {
        let problems = read_problem_set(Cursor::new(text.as_bytes()))
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        return Ok(AnchorInput::Problems(problems));
    }
    let mut triples = Vec::new();
    for (idx, line) in std::iter::once((first_idx, first)).chain(lines) {
        triples.push(serde_json::from_str::<AnchorTriple>(line).map_err(|e| located(idx + 1, &e))?);
    }
    Ok(AnchorInput::Triples(triples))
}

pub fn cmd_diagnose(
    global: &GlobalArgs,
    args: &DiagnoseArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<DiagnoseOutcome, CliError> {
    let started = now_ms();
    let (mut config, seed, jobs) = resolve(global)?;
    if let Some(p) = args.p_stop {
        config.thresholds.p_stop = p;
    }
    if let Some(k) = args.k_max {
        config.budget.k_max = k;
    }
    config.validate()?;
    let signals = Signals::from(args.signals);
    let workers = pool(jobs)?;

    let mut manifest = RunManifest::new("diagnose", global.config.as_deref(), &config, seed, started);
    manifest.input("anchors", args.anchors.display());
    manifest.input("signals", format!("{signals:?}"));

    let (anchors, elicited, default_model) = match read_anchor_input(&args.anchors)? {
        AnchorInput::Triples(t) => {
            let model = config.backend.as_ref().map_or_else(|| "unspecified".to_string(), |b| b.model.clone());
            (t, false, model)
        }
        AnchorInput::Problems(problems) => {
            let kind = backends::resolve_kind(args.backend, &config)?;
            if args.debug {
                ensure_dir(&args.out)?;
            }
            let b = backends::build(kind, &config, &problems, args.debug.then_some(args.out.as_path()))?;
            let anchors = workers.install(|| elicit_anchors(&problems, b.agents(), &config.harness(), seed))?;
            manifest.input("backend", format!("{kind:?}").to_lowercase());
            (anchors, true, b.model_id.clone())
        }
    };
    let model_id = args.model_id.clone().unwrap_or(default_model);
    manifest.input("model_id", &model_id);

    let plan = CvPlan::new(seed);
    let outcome =
        workers.install(|| cross_validated_search(&anchors, &plan, signals, &model_id, config.thresholds.p_stop))?;
    let card = build_report_card(&model_id, &anchors, &outcome)?;
    manifest.input("verdict", format!("{:?}", card.verdict));

    // Everything is computed; only now does the output directory change.
    ensure_dir(&args.out)?;
    if args.debug && elicited {
        manifest.artifacts.push(args.out.join(DEBUG_LOG));
    }
    if elicited {
        let text: String =
            anchors.iter().map(|a| serde_json::to_string(a).expect("anchor serializes") + "\n").collect();
        let path = args.out.join(ELICITED_ANCHORS);
        write_atomic(&path, text.as_bytes())?;
        manifest.artifacts.push(path);
    }
    for (name, body) in [(CARD_JSON, card.to_json()), (CARD_TEXT, card.to_text())] {
        let path = args.out.join(name);
        write_atomic(&path, body.as_bytes())?;
        manifest.artifacts.push(path);
    }
    let absent = !card.verdict.is_harnessable();
    let gated = absent && !args.force;
    let ctl_path = args.out.join(if gated { CONTROLLER_WITHHELD } else { CONTROLLER });
    write_atomic(&ctl_path, &outcome.controller.save())?;
    manifest.artifacts.push(ctl_path.clone());
    let manifest = manifest.write(&args.out.join(MANIFEST))?;

    let _ = write!(stdout, "{card}");
    if card.warning {
        let _ = writeln!(
            stderr,
            "warning: a raw signal fails discrimination; the controller is usable but one input is weak"
        );
    }
    if gated {
        let _ = writeln!(
            stderr,
            "warning: verdict {} gives no usable metacognitive signal; controller withheld at {} (rerun with --force to release it)",
            card.verdict,
            ctl_path.display()
        );
        return Err(CliError::Gate(format!("diagnosis gate refused model {model_id}: {}", card.verdict)));
    }
    if absent {
        let _ = writeln!(stderr, "warning: verdict {} overridden by --force; controller released", card.verdict);
    }
    Ok(DiagnoseOutcome { card, controller: Some(ctl_path), manifest })
}
