//! HTTP facade over the platform: an append-only event log, snapshots,
//! idempotent writes and bearer-token callers.

pub mod api;
pub mod client;
pub mod error;
pub mod server;
pub mod service;
pub mod settings;
pub mod store;

pub use error::ApiError;
pub use server::{serve, spawn, ServerHandle};
pub use service::{Service, StartupError};
pub use settings::{ServerSettings, ServiceConfig};
