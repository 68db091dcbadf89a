//! Files, configuration and the command line around `selcrypt-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod render;
