//! Command-line front-end for `hypodense`: configuration, subcommands, output
//! directories and the verification suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod models;
pub mod output;
pub mod verify;
