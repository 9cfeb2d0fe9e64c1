//! Configuration files, sweeps and acceptance suites.

pub mod acceptance;
pub mod config;
pub mod oracle;
pub mod sweep;

pub use acceptance::{run_acceptance, AcceptanceReport, Tolerances};
pub use config::{parse_config, parse_config_str, ConfigFile, Engines, SweepSpec, SweepVariable};
pub use sweep::{run_sweep, write_irt_csv, write_sweep_csv, SweepTable};
