//! Scenario files: an initial state, a scheduler, a stop condition, the
//! properties to judge and where to write results.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use linstab_core::checkers::Property;
use linstab_core::sim::{InitialStateSpec, LeaveAt, RunConfig, SchedulerSpec, SearchWorkload, StopCondition};
use linstab_core::ProtocolConfig;
use serde::{Deserialize, Deserializer};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Seeds the generator, the scheduler and the search workload.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    /// Its own `seed` and `protocol` fields are replaced by the scenario's.
    pub initial_state: InitialStateSpec,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    #[serde(default = "default_stop")]
    pub stop: StopCondition,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub leaves: Vec<LeaveAt>,
    #[serde(default)]
    pub workload: Option<SearchWorkload>,
    #[serde(deserialize_with = "properties")]
    pub properties: Vec<Property>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// NDJSON trace.
    pub trace: Option<PathBuf>,
    /// Write a DOT snapshot every this many steps, plus one of the final state.
    pub dot_every: Option<u64>,
    pub dot_dir: Option<PathBuf>,
    /// One CSV row per requested property.
    pub summary: Option<PathBuf>,
}

fn default_stop() -> StopCondition {
    StopCondition::Converged { closure_steps: 1000 }
}

fn default_max_steps() -> u64 {
    100_000
}

fn properties<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Property>, D::Error> {
    let names = Vec::<String>::deserialize(d)?;
    names.iter().map(|n| n.parse().map_err(serde::de::Error::custom)).collect()
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let mut value: serde_json::Value = serde_json::from_str(text).context("not valid JSON")?;
        let version = value.as_object_mut().and_then(|o| o.remove("schema_version"));
        match version.as_ref().and_then(serde_json::Value::as_u64) {
            Some(SCHEMA_VERSION) => {}
            Some(v) => bail!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
            None => bail!("missing schema_version (expected {SCHEMA_VERSION})"),
        }
        let scenario: Scenario = serde_json::from_value(value)?;
        if scenario.outputs.dot_every == Some(0) {
            bail!("outputs.dot_every must be positive");
        }
        if scenario.outputs.dot_every.is_some() != scenario.outputs.dot_dir.is_some() {
            bail!("outputs.dot_every and outputs.dot_dir go together");
        }
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Scenario::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn initial_spec(&self) -> InitialStateSpec {
        InitialStateSpec { seed: self.seed, protocol: self.protocol.protocol, ..self.initial_state.clone() }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            protocol: self.protocol,
            scheduler: self.scheduler.clone(),
            seed: self.seed,
            max_steps: self.max_steps,
            stop: self.stop,
            leaves: self.leaves.clone(),
            workload: self.workload,
            ..RunConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema_version": 1, "initial_state": {"n": 3}, "properties": ["connectivity"]}"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.properties, [Property::Connectivity]);
        assert_eq!(s.stop, default_stop());
        assert!(s.outputs.trace.is_none());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let err = Scenario::parse(&MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap_err();
        assert!(err.to_string().contains("schema_version 2"), "{err}");
        assert!(Scenario::parse(r#"{"initial_state": {"n": 3}, "properties": []}"#).is_err());
    }

    #[test]
    fn unknown_property_is_rejected() {
        let err = Scenario::parse(&MINIMAL.replace("connectivity", "liveness")).unwrap_err();
        assert!(format!("{err:#}").contains("unknown property `liveness`"), "{err:#}");
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(Scenario::parse(&MINIMAL.replace("\"properties\"", "\"colour\": 1, \"properties\"")).is_err());
    }

    #[test]
    fn dot_settings_go_together() {
        let text = MINIMAL.replace("\"properties\"", r#""outputs": {"dot_every": 5}, "properties""#);
        assert!(Scenario::parse(&text).is_err());
    }
}
