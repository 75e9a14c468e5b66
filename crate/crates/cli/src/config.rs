//! Experiment configuration: a TOML file layered over a per-subcommand
//! preset, then `key=value` overrides, then typed validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;
use toml::{Table, Value};

use crate::expr::ExprError;
use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("config is for `{config}` but `{cli}` was requested")]
    Mismatch { config: Subcommand, cli: Subcommand },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("`{key}`: {source}")]
    Expr { key: String, source: ExprError },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Invalid { key: key.into(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    GaugeSuite,
    ItoCheck,
    BpDemo,
    Value,
    Dpp,
    MarkovCompare,
    ViscosityProbe,
    BshjbCheck,
    ComparisonDemo,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::GaugeSuite,
        Subcommand::ItoCheck,
        Subcommand::BpDemo,
        Subcommand::Value,
        Subcommand::Dpp,
        Subcommand::MarkovCompare,
        Subcommand::ViscosityProbe,
        Subcommand::BshjbCheck,
        Subcommand::ComparisonDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::GaugeSuite => "gauge-suite",
            Subcommand::ItoCheck => "ito-check",
            Subcommand::BpDemo => "bp-demo",
            Subcommand::Value => "value",
            Subcommand::Dpp => "dpp",
            Subcommand::MarkovCompare => "markov-compare",
            Subcommand::ViscosityProbe => "viscosity-probe",
            Subcommand::BshjbCheck => "bshjb-check",
            Subcommand::ComparisonDemo => "comparison-demo",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError::invalid("subcommand", format!("unknown subcommand {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub steps: usize,
    pub horizon: f64,
    pub dim: usize,
    pub noise_dim: usize,
}

/// A scalar or one value per coordinate.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

/// Diffusion as `s` (meaning `s I`, square only) or as rows of entries.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(String),
    Rows(Vec<Vec<String>>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ControlSet {
    Scalars(Vec<f64>),
    Vectors(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub preset: Option<String>,
    pub controls: Option<ControlSet>,
    pub drift: Option<OneOrMany<String>>,
    pub diffusion: Option<MatrixSpec>,
    pub generator: Option<String>,
    pub terminal: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSection {
    pub m: u32,
    pub big_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    Argmax,
    Earliest,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpSection {
    pub eps: f64,
    pub delta_base: f64,
    pub selection: SelectionRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsSection {
    pub node_cap: usize,
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridSection,
    pub coefficients: CoefficientSection,
    pub gauge: GaugeSection,
    pub bp: BpSection,
    pub caps: CapsSection,
    /// Subcommand-specific settings, typed by the subcommand itself.
    pub run: Table,
    #[serde(skip)]
    resolved: Table,
}

impl ExperimentConfig {
    /// The merged table the config was built from, as TOML text.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(&self.resolved).unwrap_or_default()
    }

    /// Deserialize the `[run]` table into a subcommand's settings.
    pub fn run_section<T: DeserializeOwned>(&self) -> Result<T, ConfigError> {
        typed(Value::Table(self.run.clone()), "run.")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct CliLayer {
    pub subcommand: Option<Subcommand>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub overrides: Vec<String>,
}

pub fn load(text: &str, cli: &CliLayer) -> Result<ExperimentConfig, ConfigError> {
    let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    let sub: Subcommand = match user.get("subcommand") {
        None => return Err(ConfigError::MissingKey("subcommand")),
        Some(Value::String(s)) => s.parse()?,
        Some(_) => return Err(ConfigError::invalid("subcommand", "expected a string")),
    };
    if let Some(c) = cli.subcommand {
        if c != sub {
            return Err(ConfigError::Mismatch { config: sub, cli: c });
        }
    }
    let mut merged = presets::table(sub);
    merge(&mut merged, user);
    for o in &cli.overrides {
        let (path, value) = parse_override(o)?;
        if path[0] == "subcommand" {
            return Err(ConfigError::invalid("subcommand", "cannot be overridden"));
        }
        set_path(&mut merged, &path, value)?;
    }
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| ConfigError::invalid("seed", "must fit in a signed 64-bit integer"))?;
        merged.insert("seed".into(), Value::Integer(seed));
    }
    if let Some(out) = &cli.out {
        merged.insert("out".into(), Value::String(out.to_string_lossy().into_owned()));
    }
    let mut config: ExperimentConfig = typed(Value::Table(merged.clone()), "")?;
    config.resolved = merged;
    Ok(config)
}

fn typed<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { prefix.trim_end_matches('.').to_string() } else { format!("{prefix}{path}") };
        ConfigError::Invalid { key, message: e.into_inner().to_string() }
    })
}

/// Layer `top` over `base`. Tables merge key by key, except
/// `[coefficients]`, which replaces the preset's table whole so that a
/// preset name and inline expressions never mix by accident.
pub fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) if key != "coefficients" => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Split `a.b.c=value`. The value is read as a TOML value when it parses
/// as one and as a bare string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| ConfigError::BadOverride(s.to_string()))?;
    let key = key.trim();
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    let valid = |seg: &String| !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !path.iter().all(valid) {
        return Err(ConfigError::BadOverride(s.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("override path is never empty");
    let mut cur = table;
    for (i, seg) in parents.iter().enumerate() {
        let entry = cur.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(ConfigError::invalid(path[..=i].join("."), "is not a table")),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(sub: Option<Subcommand>, overrides: &[&str]) -> CliLayer {
        CliLayer { subcommand: sub, overrides: overrides.iter().map(|s| s.to_string()).collect(), ..CliLayer::default() }
    }

    #[test]
    fn empty_file_is_missing_subcommand() {
        assert!(matches!(load("", &CliLayer::default()), Err(ConfigError::MissingKey("subcommand"))));
    }

    #[test]
    fn preset_fills_everything() {
        for sub in Subcommand::ALL {
            let c = load(&format!("subcommand = \"{sub}\""), &cli(Some(sub), &[])).unwrap();
            assert_eq!(c.subcommand, sub);
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = load("subcommand = \"dpp\"\n[grid]\nstepz = 3", &CliLayer::default()).unwrap_err();
        match err {
            ConfigError::Invalid { key, message } => {
                assert_eq!(key, "grid.stepz");
                assert!(message.contains("stepz"), "{message}");
            }
            other => panic!("{other}"),
        }
        let err = load("subcommand = \"dpp\"", &cli(None, &["grid.steps=\"four\""])).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "grid.steps"), "{err}");
    }

    #[test]
    fn overrides_and_cli_layer() {
        let layer = CliLayer {
            seed: Some(9),
            out: Some("elsewhere".into()),
            overrides: vec!["grid.steps=3".into(), "run.delta = 1".into()],
            ..CliLayer::default()
        };
        let c = load("subcommand = \"dpp\"\nseed = 1", &layer).unwrap();
        assert_eq!((c.grid.steps, c.seed), (3, 9));
        assert_eq!(c.out, PathBuf::from("elsewhere"));
        assert_eq!(c.run.get("delta"), Some(&Value::Integer(1)));
    }

    #[test]
    fn mismatch_and_bad_overrides() {
        let text = "subcommand = \"dpp\"";
        assert!(matches!(load(text, &cli(Some(Subcommand::Value), &[])), Err(ConfigError::Mismatch { .. })));
        assert!(matches!(load(text, &cli(None, &["noequals"])), Err(ConfigError::BadOverride(_))));
        assert!(matches!(load(text, &cli(None, &["a..b=1"])), Err(ConfigError::BadOverride(_))));
        assert!(matches!(load(text, &cli(None, &["seed.x=1"])), Err(ConfigError::Invalid { .. })));
        assert!(matches!(load(text, &cli(None, &["subcommand=value"])), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn override_values_fall_back_to_strings() {
        let (path, v) = parse_override("coefficients.terminal=x^2 + m").unwrap();
        assert_eq!(path, vec!["coefficients", "terminal"]);
        assert_eq!(v, Value::String("x^2 + m".into()));
        assert_eq!(parse_override("a=[1, 2]").unwrap().1, Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
    }

    #[test]
    fn coefficients_table_replaces_preset() {
        let text = "subcommand = \"value\"\n[coefficients]\ndrift = \"u\"\n";
        let c = load(text, &CliLayer::default()).unwrap();
        assert_eq!(c.coefficients.preset, None);
        assert_eq!(c.coefficients.drift, Some(OneOrMany::One("u".into())));
    }
}
