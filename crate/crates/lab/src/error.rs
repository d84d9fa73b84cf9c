//! Error taxonomy for the experiment driver.
//!
//! Every failure is either a configuration problem (bad file, unknown key,
//! invalid value) or a numerical one (an experiment failed while running).
//! The CLI maps these to exit codes 2 and 3 and prints a machine-readable
//! JSON object on standard error.

use quantlab_core::backward::BackwardError;
use quantlab_core::entropy_model::EntropyModelError;
use quantlab_core::infotheory::InfoError;
use quantlab_core::numerics::NumericsError;
use quantlab_core::sources::SourceError;
use quantlab_core::surrogates::SurrogateError;
use quantlab_core::tinynet::TinynetError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Numerical(_) => "numerical",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            LabError::Config(m) | LabError::Numerical(m) => m,
        }
    }

    /// JSON object for standard error, one line.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.message(),
        })
        .to_string()
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for LabError {
            fn from(e: $t) -> Self {
                LabError::Numerical(e.to_string())
            }
        }
    )*};
}

numerical_from!(
    NumericsError,
    SourceError,
    SurrogateError,
    EntropyModelError,
    BackwardError,
    InfoError,
    TinynetError
);

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Numerical(format!("io: {e}"))
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Numerical(format!("csv: {e}"))
    }
}
