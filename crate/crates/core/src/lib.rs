//! Domain core of the Panvas publishing economy.
//!
//! Each module owns one part of the platform (credits, identities, papers,
//! reviews, engagement, markets, moderation). [`platform::Platform`] composes
//! them into a deterministic state machine driven by [`platform::Command`]s,
//! which is what the HTTP service persists and the simulator replays.

mod b64;
mod seq_map;

pub mod config;
pub mod engagement;
pub mod identity;
pub mod ids;
pub mod ledger;
pub mod moderation;
pub mod paper_store;
pub mod platform;
pub mod prediction_market;
pub mod review_market;
pub mod scores;

pub use config::PlatformConfig;
pub use platform::{Command, EventRecord, Outcome, Platform, PlatformError};
