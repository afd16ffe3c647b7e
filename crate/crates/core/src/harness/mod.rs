//! Config-driven experiment runs with deterministic CSV output.
//!
//! ```
//! use scaled_lora::harness::{run, ExperimentConfig, Kind};
//! let cfg = ExperimentConfig::from_toml_str("m = 8\nn = 8\nr = 2\niters = 30", Some(Kind::Decomp)).unwrap();
//! let first = run(&cfg).unwrap();
//! assert_eq!(first, run(&cfg).unwrap());
//! assert_eq!(first[0].iter, 0);
//! ```

pub mod config;
pub mod record;
pub mod rng;
pub mod runner;

use std::path::PathBuf;

pub use config::{ExperimentConfig, Kind, MethodConfig};
pub use record::{from_csv, to_csv, RunRecord, CSV_HEADER};
pub use runner::{compare, run, summarize, width_gamma, write_outputs, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Format(String),

    #[error(transparent)]
    Numeric(#[from] crate::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use crate::Error as E;
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Numeric(E::InvalidArgument(_) | E::Shape { .. } | E::MaskSearch { .. }) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Format(_) | HarnessError::Numeric(_) => 1,
        }
    }
}
