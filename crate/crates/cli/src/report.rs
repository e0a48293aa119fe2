//! `report`: merge trajectory logs into comparison tables.

use std::io::Write;

use metaharness::evalkit::{build_bundle, render_table, ReportBundle};

use crate::error::CliError;
use crate::files::{ensure_dir, read_log_file, write_atomic};
use crate::manifest::{now_ms, RunManifest};
use crate::{resolve, GlobalArgs, ReportArgs};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const MANIFEST: &str = "report.manifest.json";

pub fn cmd_report(global: &GlobalArgs, args: &ReportArgs, stdout: &mut dyn Write) -> Result<ReportBundle, CliError> {
    let started = now_ms();
    let (config, seed, _) = resolve(global)?;
    let logs = args.logs.iter().map(|p| read_log_file(p)).collect::<Result<Vec<_>, _>>()?;
    if let Some((path, _)) = args.logs.iter().zip(&logs).find(|(_, l)| l.is_empty()) {
        return Err(CliError::Parse(format!("{}: log is empty", path.display())));
    }
    let bundle = build_bundle(&logs, config.pricing.as_ref(), config.report.bootstrap_b, seed)?;
    let table = render_table(&bundle);
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut json = serde_json::to_string_pretty(&bundle).expect("report serializes");
        json.push('\n');
        let mut manifest = RunManifest::new("report", global.config.as_deref(), &config, seed, started);
        for (i, p) in args.logs.iter().enumerate() {
            manifest.input(&format!("log{}", i + 1), p.display());
        }
        for (name, body) in [(REPORT_JSON, json.as_str()), (REPORT_TEXT, table.as_str())] {
            let path = out.join(name);
            write_atomic(&path, body.as_bytes())?;
            manifest.artifacts.push(path);
        }
        manifest.write(&out.join(MANIFEST))?;
    }
    let _ = write!(stdout, "{table}");
    Ok(bundle)
}
