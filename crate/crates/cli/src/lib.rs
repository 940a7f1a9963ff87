//! Library surface of the command-line front end, split out so integration
//! tests can drive the commands without spawning processes.

pub mod config;
pub mod diagnose;
pub mod run;

pub use config::{resolve, FileConfig, ResolvedConfig};
