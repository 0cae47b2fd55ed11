//! Operator surface for the experimentation engine: run simulations, serve
//! live assignments over HTTP, and turn collected datasets into estimate
//! tables, policies, targeting curves, weight sweeps, and coverage tables.
//!
//! Every subcommand is a pure function of (config file, input files, seed)
//! to output files; outputs are written atomically (temp file + rename) so
//! a crashed run never leaves a half-written artifact behind. Errors carry
//! one of three exit codes — 1 usage, 2 data, 3 internal — and are printed
//! as a single JSON line on standard error.

pub mod commands;
pub mod config;
pub mod error;
pub mod help;
pub mod output;
pub mod serve;

pub use error::CliError;
