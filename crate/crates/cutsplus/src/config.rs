//! Run configuration: one TOML file describing the data source, corruption,
//! model shape, training schedule, and evaluation options.
//!
//! Every field has a default, so the empty document is a valid config. The
//! validator returns a list of diagnostics instead of failing on the first
//! problem; informational entries note applied defaults, error entries name
//! the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Lorenz96Config, MissingConfig, VarConfig};
use crate::trainer::{ModelSettings, TrainConfig};

/// Where the panel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulatorConfig {
    Var(VarConfig),
    Lorenz96(Lorenz96Config),
    Csv(CsvSource),
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig::Var(VarConfig::default())
    }
}

impl SimulatorConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SimulatorConfig::Var(_) => "var",
            SimulatorConfig::Lorenz96(_) => "lorenz96",
            SimulatorConfig::Csv(_) => "csv",
        }
    }

    /// Series count when it is known without running anything.
    pub fn n_series_hint(&self) -> Option<usize> {
        match self {
            SimulatorConfig::Var(c) => Some(c.n_series),
            SimulatorConfig::Lorenz96(c) => Some(c.n_series),
            SimulatorConfig::Csv(_) => None,
        }
    }
}

/// External data on disk. `values` is required; `mask` marks pre-existing
/// gaps (cells equal to `missing_token` in `values` are also treated as
/// missing); `truth` enables evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSource {
    pub values: PathBuf,
    pub mask: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub missing_token: String,
    pub delimiter: char,
}

impl Default for CsvSource {
    fn default() -> Self {
        CsvSource {
            values: PathBuf::new(),
            mask: None,
            truth: None,
            missing_token: "NaN".into(),
            delimiter: ',',
        }
    }
}

/// Evaluation options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Score only off-diagonal cells in the headline number printed by the
    /// CLI. The JSON report always carries both conventions.
    pub exclude_diagonal: bool,
    /// Render `heatmap.svg` next to the report.
    pub heatmap: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            exclude_diagonal: false,
            heatmap: true,
        }
    }
}

/// The complete run description. `seed` drives every stage through derived
/// per-stage seeds; the `seed` fields inside the nested sections are
/// overwritten by that derivation whenever the config is executed as a run,
/// so a run is reproducible from this one value. A non-empty `seeds` list
/// replaces `seed` and fans the pipeline out over one run per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub simulator: SimulatorConfig,
    pub missing: MissingConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Error,
}

/// One finding of the validator: which field, what is wrong (or what
/// default was filled in).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn info(field: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Info,
            field: field.into(),
            message: message.into(),
        }
    }

    fn error(field: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Info => "info",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

/// Parses a config document and reports every problem found. The returned
/// config is usable iff no diagnostic `is_error`.
pub fn parse_config(text: &str) -> (Option<RunConfig>, Vec<Diagnostic>) {
    let mut diagnostics = Vec::new();

    let table: toml::Table = match text.parse() {
        Ok(v) => v,
        Err(e) => {
            diagnostics.push(Diagnostic::error("<document>", format!("not valid TOML: {e}")));
            return (None, diagnostics);
        }
    };
    if !table.contains_key("seed") && !table.contains_key("seeds") {
        diagnostics.push(Diagnostic::info("seed", "not set; default 0 applied"));
    }
    for section in ["simulator", "missing", "model", "train", "eval"] {
        if !table.contains_key(section) {
            diagnostics.push(Diagnostic::info(section, "section absent; defaults applied"));
        }
    }

    let config: RunConfig = match table.try_into() {
        Ok(c) => c,
        Err(e) => {
            diagnostics.push(Diagnostic::error("<document>", format!("does not match the schema: {e}")));
            return (None, diagnostics);
        }
    };
    diagnostics.extend(validate_config(&config));
    (Some(config), diagnostics)
}

/// Semantic checks over a parsed config.
pub fn validate_config(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if !config.seeds.is_empty() && config.seed != 0 {
        out.push(Diagnostic::error(
            "seed",
            "set either `seed` or a non-empty `seeds` list, not both",
        ));
    }
    let mut sorted_seeds = config.seeds.clone();
    sorted_seeds.sort_unstable();
    sorted_seeds.dedup();
    if sorted_seeds.len() != config.seeds.len() {
        out.push(Diagnostic::error(
            "seeds",
            "seed list contains duplicates; artifact directories would collide",
        ));
    }

    match &config.simulator {
        SimulatorConfig::Var(c) => {
            if let Err(e) = c.validate() {
                out.push(Diagnostic::error("simulator", e.to_string()));
            }
        }
        SimulatorConfig::Lorenz96(c) => {
            if let Err(e) = c.validate() {
                out.push(Diagnostic::error("simulator", e.to_string()));
            }
        }
        SimulatorConfig::Csv(c) => {
            if c.values.as_os_str().is_empty() {
                out.push(Diagnostic::error(
                    "simulator.values",
                    "csv source needs a `values` path",
                ));
            }
            if c.missing_token.is_empty() {
                out.push(Diagnostic::error(
                    "simulator.missing_token",
                    "must be a non-empty token",
                ));
            }
        }
    }

    if let Err(e) = config.missing.validate() {
        out.push(Diagnostic::error("missing", e.to_string()));
    }
    if config.model.hidden_dim == 0 || config.model.layers == 0 {
        out.push(Diagnostic::error(
            "model",
            "hidden_dim and layers must be positive",
        ));
    }
    if let Err(e) = config.train.validate() {
        out.push(Diagnostic::error("train", e.to_string()));
    }

    if let Some(n) = config.simulator.n_series_hint() {
        if config.train.initial_groups > n {
            out.push(Diagnostic::error(
                "train.initial_groups",
                format!(
                    "{} groups cannot partition {n} series",
                    config.train.initial_groups
                ),
            ));
        }
    }
    if let SimulatorConfig::Var(c) = &config.simulator {
        if config.train.tau_max < c.tau_max {
            out.push(Diagnostic::info(
                "train.tau_max",
                format!(
                    "window sees {} lags but the simulator uses {}; long-lag edges may be missed",
                    config.train.tau_max, c.tau_max
                ),
            ));
        }
    }
    out
}

/// Reads and parses a config file; `Err` only when the file cannot be read.
pub fn load_config_file(path: &Path) -> Result<(Option<RunConfig>, Vec<Diagnostic>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_config(&text))
}

/// Reads a config and insists it is valid, folding error diagnostics into a
/// single config error. Informational diagnostics are logged.
pub fn load_valid_config(path: &Path) -> Result<RunConfig> {
    let (config, diagnostics) = load_config_file(path)?;
    for d in diagnostics.iter().filter(|d| !d.is_error()) {
        log::info!("{d}");
    }
    let errors: Vec<String> = diagnostics
        .iter()
        .filter(|d| d.is_error())
        .map(|d| d.to_string())
        .collect();
    if errors.is_empty() {
        Ok(config.expect("no error diagnostics implies a parsed config"))
    } else {
        Err(Error::Config(errors.join("; ")))
    }
}

pub fn save_config(config: &RunConfig, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(config)
        .map_err(|e| Error::Other(format!("config serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
