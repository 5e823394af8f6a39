//! Command-line front end for `strainlab`: experiment configs, the
//! subcommands and parameter sweeps.

pub mod commands;
pub mod config;
pub mod output;
pub mod sweep;
