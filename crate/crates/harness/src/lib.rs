//! Experiment harness: CIFAR-100 and synthetic data, the
//! exploration-with-class-discovery protocol, evaluation, multi-seed runs and
//! CSV/JSON export.

pub mod cifar;
pub mod config;
pub mod dataset;
mod error;
pub mod experiment;
pub mod export;
pub mod metrics;
pub mod protocol;
pub mod selfcheck;
pub mod synthetic;

pub use config::{ExperimentConfig, NetworkConfig};
pub use dataset::{Dataset, Split};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentOutcome, PreparedSeed, SeedFailure};
pub use export::{read_results, write_results, Summary};
pub use metrics::{evaluate, ExperimentRecord};
pub use protocol::{build_protocol, Protocol, ProtocolConfig};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "EMOC_DATA_DIR";
