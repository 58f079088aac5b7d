//! Command-line front end: solve catalog problems from TOML configs, export
//! CSV results, benchmark solve time against horizon length and run the
//! validation suite on a single problem.

pub mod bench;
pub mod config;
pub mod output;
pub mod solve;
pub mod validate;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
/// Stall, iteration limit, solver error or a failed validation check.
pub const EXIT_ABORTED: i32 = 2;
