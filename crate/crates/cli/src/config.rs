//! The single TOML configuration file. Command-line flags override it.

use std::path::Path;

use metaharness::backend::{BackendConfig, PricingTable, SimulatorSpec};
use metaharness::controller::DEFAULT_P_STOP;
use metaharness::harness::{AggregationMode, HarnessConfig, DEFAULT_K_MAX, ELICITATION_TRIES};
use metaharness::metrics::DEFAULT_BOOTSTRAP_B;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Solver endpoint for the `http` backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    /// Aggregation judge; the solver backend is reused when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pricing: Option<PricingTable>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub report: ReportSettings,
    /// Behaviour of the `sim` backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<SimulatorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub k_max: usize,
    pub elicitation_tries: u32,
    pub aggregation: AggregationMode,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { k_max: DEFAULT_K_MAX, elicitation_tries: ELICITATION_TRIES, aggregation: AggregationMode::Hybrid }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub p_stop: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { p_stop: DEFAULT_P_STOP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSettings {
    pub bootstrap_b: usize,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings { bootstrap_b: DEFAULT_BOOTSTRAP_B }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Parse(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p.display(), e))?;
                Config::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(format!("config: {m}")));
        if let Some(b) = &self.backend {
            b.validate()?;
        }
        if let Some(b) = &self.judge {
            b.validate()?;
        }
        if let Some(p) = &self.pricing {
            PricingTable::new(p.per_input_token, p.per_output_token)?;
        }
        if let Some(s) = &self.simulator {
            s.validate()?;
        }
        if !(self.thresholds.p_stop > 0.0 && self.thresholds.p_stop < 1.0) {
            return usage(format!("p_stop must lie in (0, 1), got {}", self.thresholds.p_stop));
        }
        if self.report.bootstrap_b == 0 {
            return usage("bootstrap_b must be positive".into());
        }
        if self.jobs == Some(0) {
            return usage("jobs must be positive".into());
        }
        self.harness().validate()?;
        Ok(())
    }

    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig {
            k_max: self.budget.k_max,
            aggregation: self.budget.aggregation,
            elicitation_tries: self.budget.elicitation_tries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaharness::backend::Latent;

    #[test]
    fn empty_file_yields_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.harness(), HarnessConfig::default());
    }

    #[test]
    fn full_file_round_trips() {
        let text = r#"
seed = 7
jobs = 4

[backend]
endpoint = "https://api.example.com/v1/chat/completions"
model = "solver-large"

[pricing]
per_input_token = 0.000002
per_output_token = 0.000008

[budget]
k_max = 3

[thresholds]
p_stop = 0.8

[simulator]
distractors = ["a", "b"]
jol_noise_sd = 0.05

[simulator.latent]
kind = "uniform"
low = 0.0
high = 1.0
seed = 3
"#;
        let c = Config::parse(text).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.budget.k_max, 3);
        assert_eq!(c.budget.elicitation_tries, ELICITATION_TRIES);
        assert_eq!(c.backend.as_ref().unwrap().api_key_env, "OPENAI_API_KEY");
        let sim = c.simulator.as_ref().unwrap();
        assert_eq!(sim.latent, Latent::Uniform { low: 0.0, high: 1.0, seed: 3 });
        let again = Config::parse(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(Config::parse("sead = 1"), Err(CliError::Parse(_))));
        assert!(matches!(Config::parse("[thresholds]\np_stop = 1.5"), Err(CliError::Usage(_))));
        assert!(matches!(Config::parse("[budget]\nk_max = 0"), Err(CliError::Usage(_))));
    }
}
