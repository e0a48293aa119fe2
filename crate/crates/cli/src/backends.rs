//! Backend selection from flags and configuration.

use std::fs::File;
use std::path::Path;
use std::sync::{Arc, Mutex};

use metaharness::backend::{Agents, Backend, DebugSink, HttpBackend, SimBackend};
use metaharness::Problem;

use crate::config::Config;
use crate::error::CliError;
use crate::BackendKind;

pub const DEBUG_LOG: &str = "debug.jsonl";

pub struct Backends {
    pub kind: BackendKind,
    pub model_id: String,
    solver: Box<dyn Backend>,
    judge: Option<Box<dyn Backend>>,
}

impl Backends {
    pub fn agents(&self) -> Agents<'_> {
        match &self.judge {
            Some(judge) => Agents { solver: self.solver.as_ref(), judge: judge.as_ref() },
            None => Agents::same(self.solver.as_ref()),
        }
    }
}

/// The flag wins; otherwise `http` when the config names an endpoint and
/// `sim` when it describes a simulator.
pub fn resolve_kind(flag: Option<BackendKind>, config: &Config) -> Result<BackendKind, CliError> {
    match (flag, &config.backend, &config.simulator) {
        (Some(k), _, _) => Ok(k),
        (None, Some(_), _) => Ok(BackendKind::Http),
        (None, None, Some(_)) => Ok(BackendKind::Sim),
        (None, None, None) => {
            Err(CliError::Usage("no backend: pass --backend and configure [backend] or [simulator]".into()))
        }
    }
}

/// Build the solver and judge. The simulator needs the problem set because
/// it holds the gold answers. With `debug_dir`, HTTP exchanges are logged
/// there.
pub fn build(
    kind: BackendKind,
    config: &Config,
    problems: &[Problem],
    debug_dir: Option<&Path>,
) -> Result<Backends, CliError> {
    match kind {
        BackendKind::Sim => {
            let spec = config
                .simulator
                .clone()
                .ok_or_else(|| CliError::Usage("--backend sim needs a [simulator] section in the config".into()))?;
            Ok(Backends {
                kind,
                model_id: "simulator".into(),
                solver: Box::new(SimBackend::new(spec, problems)?),
                judge: None,
            })
        }
        BackendKind::Http => {
            let solver_cfg = config
                .backend
                .clone()
                .ok_or_else(|| CliError::Usage("--backend http needs a [backend] section in the config".into()))?;
            let sink: Option<DebugSink> = match debug_dir {
                None => None,
                Some(dir) => {
                    let path = dir.join(DEBUG_LOG);
                    let f = File::create(&path).map_err(|e| CliError::io(path.display(), e))?;
                    Some(Arc::new(Mutex::new(f)))
                }
            };
            let http = |cfg| -> Result<Box<dyn Backend>, CliError> {
                let b = HttpBackend::from_env(cfg)?;
                Ok(match &sink {
                    Some(s) => Box::new(b.with_debug(s.clone())),
                    None => Box::new(b),
                })
            };
            let model_id = solver_cfg.model.clone();
            let solver = http(solver_cfg)?;
            let judge = config.judge.clone().map(http).transpose()?;
            Ok(Backends { kind, model_id, solver, judge })
        }
    }
}
