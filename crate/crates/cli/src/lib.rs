//! Command-line and HTTP front-ends for the `boxcf` engine.

pub mod args;
pub mod render;
pub mod request;
pub mod service;

/// Environment variable holding the default number of search workers.
pub const WORKERS_ENV: &str = "BOXCF_WORKERS";
