//! Operational shell around the `inciplan` library: configuration, the
//! engagement log, the pipeline stages behind the CLI, and the HTTP service.

pub mod cli;
pub mod config;
pub mod log;
pub mod pipeline;
pub mod server;

pub use config::Config;
pub use log::{read_log, EngagementLog, LogError};
pub use server::{EngagementRequest, Server};
