//! Scenario files and subcommands of the `conc` binary.

pub mod commands;
pub mod scenario;

pub use commands::{run, Command, Context, Status};
pub use scenario::{parse, parse_with_env, Scenario};
