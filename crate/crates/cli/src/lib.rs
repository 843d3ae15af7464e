//! Command-line front end: synthetic data, GAM fits, strategy runs,
//! comparison reports and lookahead audits, all driven by one TOML config.

pub mod config;
mod data;
mod files;
mod report;
mod run;

use anl_core::{Error, ErrorKind};

pub use config::Config;
pub use data::{cmd_fit_gam, cmd_synth};
pub use files::{find_manifests, write_atomic};
pub use report::{cmd_audit, cmd_report, AuditLine, AuditStatus, ReliabilityCount};
pub use run::{cmd_run, RunArgs};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Global {
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    pub jobs: Option<usize>,
    /// Overwrite existing outputs.
    pub force: bool,
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for a failed command, from the first typed error in the chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    1
}
