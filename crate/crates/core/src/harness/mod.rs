//! Configuration, persistence and the experiment drivers behind the CLI.

pub mod checks;
pub mod commands;
pub mod config;
pub mod store;

pub use checks::{observed_orders, SweepChecks};
pub use commands::{
    cmd_ep, cmd_kdv, cmd_profiles, cmd_report, cmd_sweep, prepared_state, profiles_for, run_ep, run_sweep, SweepReport,
    SweepRow,
};
pub use config::{parse_eps_list, ExperimentConfig, InitialData, OUT_DIR_ENV};
pub use store::Trajectory;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const CHECK: i32 = 4;
}

/// Exit code for an error escaping a command.
pub fn exit_code(err: &crate::LabError) -> i32 {
    use crate::LabError::*;
    match err {
        Config(_) | Parameter(_) => exit::CONFIG,
        _ => exit::NUMERIC,
    }
}
