//! Command-line front end for dtchain: scenario runs with reproducible
//! artifacts, parallel parameter sweeps and the design calculators.

pub mod bundled;
pub mod calc;
pub mod error;
pub mod run;
pub mod sweep;

pub use error::{CliError, EXIT_RUNTIME, EXIT_VALIDATION};
pub use run::{run_scenario, verify_manifest, RunOptions, RunReport};
pub use sweep::{run_sweep, SweepReport, SweepSpec};
