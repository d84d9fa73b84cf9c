//! Experiment configuration.
//!
//! Grammar: a TOML file with three optional top-level keys and one optional
//! block.
//!
//! ```toml
//! experiment = "mutual-info"   # must match the CLI subcommand if present
//! seed = 0
//! out = "mutual_info.csv"
//!
//! [params]                     # experiment-specific keys, all defaulted
//! sigma_points = 24
//! ```
//!
//! CLI flags override file values (`--seed`, `--out`). Unknown keys anywhere
//! are rejected. The fully resolved config (defaults filled in) is what gets
//! hashed into the output metadata and printed by `--print-config`.

use crate::error::LabError;
use crate::experiments;
use crate::table::ResultTable;
use serde::Deserialize;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    MutualInfo,
    DistortionSim,
    RateSurface,
    GradStats,
    Mi2d,
    EntropyCompare,
    LaplaceRd,
    LowerBoundSweep,
}

pub const EXPERIMENT_NAMES: [&str; 8] = [
    "mutual-info",
    "distortion-sim",
    "rate-surface",
    "grad-stats",
    "mi-2d",
    "entropy-compare",
    "laplace-rd",
    "lower-bound-sweep",
];

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::MutualInfo => "mutual-info",
            Experiment::DistortionSim => "distortion-sim",
            Experiment::RateSurface => "rate-surface",
            Experiment::GradStats => "grad-stats",
            Experiment::Mi2d => "mi-2d",
            Experiment::EntropyCompare => "entropy-compare",
            Experiment::LaplaceRd => "laplace-rd",
            Experiment::LowerBoundSweep => "lower-bound-sweep",
        }
    }
}

impl FromStr for Experiment {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, LabError> {
        match s {
            "mutual-info" => Ok(Experiment::MutualInfo),
            "distortion-sim" => Ok(Experiment::DistortionSim),
            "rate-surface" => Ok(Experiment::RateSurface),
            "grad-stats" => Ok(Experiment::GradStats),
            "mi-2d" => Ok(Experiment::Mi2d),
            "entropy-compare" => Ok(Experiment::EntropyCompare),
            "laplace-rd" => Ok(Experiment::LaplaceRd),
            "lower-bound-sweep" => Ok(Experiment::LowerBoundSweep),
            other => Err(LabError::Config(format!(
                "unknown experiment \"{other}\"; expected one of {}",
                EXPERIMENT_NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw file shape. Everything is optional; unknown keys are errors.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    seed: Option<u64>,
    out: Option<String>,
    params: Option<toml::Table>,
}

/// Typed per-experiment parameter block.
#[derive(Debug, Clone)]
pub enum Params {
    MutualInfo(experiments::mutual_info::Params),
    DistortionSim(experiments::distortion_sim::Params),
    RateSurface(experiments::rate_surface::Params),
    GradStats(experiments::grad_stats::Params),
    Mi2d(experiments::mi_2d::Params),
    EntropyCompare(experiments::entropy_compare::Params),
    LaplaceRd(experiments::laplace_rd::Params),
    LowerBoundSweep(experiments::lower_bound_sweep::Params),
}

impl Params {
    fn to_toml_value(&self) -> toml::Value {
        let v = match self {
            Params::MutualInfo(p) => toml::Value::try_from(p),
            Params::DistortionSim(p) => toml::Value::try_from(p),
            Params::RateSurface(p) => toml::Value::try_from(p),
            Params::GradStats(p) => toml::Value::try_from(p),
            Params::Mi2d(p) => toml::Value::try_from(p),
            Params::EntropyCompare(p) => toml::Value::try_from(p),
            Params::LaplaceRd(p) => toml::Value::try_from(p),
            Params::LowerBoundSweep(p) => toml::Value::try_from(p),
        };
        v.expect("params serialize to TOML")
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: String,
    pub params: Params,
}

fn typed_params<P: serde::de::DeserializeOwned + Default>(
    block: Option<toml::Table>,
) -> Result<P, LabError> {
    match block {
        None => Ok(P::default()),
        Some(t) => toml::Value::Table(t)
            .try_into::<P>()
            .map_err(|e| LabError::Config(format!("params: {e}"))),
    }
}

impl ResolvedConfig {
    /// Merge file contents (if any) with CLI overrides and fill defaults.
    pub fn resolve(
        experiment: Experiment,
        config_path: Option<&Path>,
        cli_seed: Option<u64>,
        cli_out: Option<String>,
    ) -> Result<Self, LabError> {
        let file: FileConfig = match config_path {
            None => FileConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    LabError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?
            }
        };
        if let Some(name) = &file.experiment {
            let named = Experiment::from_str(name)?;
            if named != experiment {
                return Err(LabError::Config(format!(
                    "config file is for \"{named}\" but the \"{experiment}\" command was invoked"
                )));
            }
        }
        let params = match experiment {
            Experiment::MutualInfo => Params::MutualInfo(typed_params(file.params)?),
            Experiment::DistortionSim => Params::DistortionSim(typed_params(file.params)?),
            Experiment::RateSurface => Params::RateSurface(typed_params(file.params)?),
            Experiment::GradStats => Params::GradStats(typed_params(file.params)?),
            Experiment::Mi2d => Params::Mi2d(typed_params(file.params)?),
            Experiment::EntropyCompare => Params::EntropyCompare(typed_params(file.params)?),
            Experiment::LaplaceRd => Params::LaplaceRd(typed_params(file.params)?),
            Experiment::LowerBoundSweep => Params::LowerBoundSweep(typed_params(file.params)?),
        };
        let seed = cli_seed.or(file.seed).unwrap_or(0);
        let out = cli_out
            .or(file.out)
            .unwrap_or_else(|| format!("{}.csv", experiment.name().replace('-', "_")));
        Ok(ResolvedConfig {
            experiment,
            seed,
            out,
            params,
        })
    }

    /// Canonical TOML text of the fully resolved config. This is what gets
    /// hashed, stored in metadata, and printed by `--print-config`.
    pub fn to_toml(&self) -> String {
        let mut doc = toml::Table::new();
        doc.insert(
            "experiment".to_string(),
            toml::Value::String(self.experiment.name().to_string()),
        );
        doc.insert("seed".to_string(), toml::Value::Integer(self.seed as i64));
        doc.insert("out".to_string(), toml::Value::String(self.out.clone()));
        doc.insert("params".to_string(), self.params.to_toml_value());
        toml::to_string(&toml::Value::Table(doc)).expect("resolved config serializes")
    }

    pub fn run(&self) -> Result<ResultTable, LabError> {
        let resolved = self.to_toml();
        match &self.params {
            Params::MutualInfo(p) => experiments::mutual_info::run(p, self.seed, &resolved),
            Params::DistortionSim(p) => experiments::distortion_sim::run(p, self.seed, &resolved),
            Params::RateSurface(p) => experiments::rate_surface::run(p, self.seed, &resolved),
            Params::GradStats(p) => experiments::grad_stats::run(p, self.seed, &resolved),
            Params::Mi2d(p) => experiments::mi_2d::run(p, self.seed, &resolved),
            Params::EntropyCompare(p) => experiments::entropy_compare::run(p, self.seed, &resolved),
            Params::LaplaceRd(p) => experiments::laplace_rd::run(p, self.seed, &resolved),
            Params::LowerBoundSweep(p) => {
                experiments::lower_bound_sweep::run(p, self.seed, &resolved)
            }
        }
    }
}
