//! Command-line tool and HTTP service for language-queryable feature maps.

pub mod commands;
pub mod schema;
pub mod service;

pub use commands::{run, Cli, CliError, Command};
pub use service::{router, serve, serve_with_shutdown, AppState, ServiceConfig};
