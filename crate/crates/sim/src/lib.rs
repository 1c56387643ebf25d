//! Seeded agent-economy simulation over the platform, plus offline
//! verification of event logs.

pub mod report;
pub mod runner;
pub mod scenario;
pub mod verify;

pub use report::SimReport;
pub use runner::{platform_config, run_scenario, SimError, SimRun};
pub use scenario::ScenarioConfig;
pub use verify::{verify_log, verify_records, Verification};

use std::io::Write;

/// Writes records as NDJSON, one per line.
pub fn write_ndjson(mut out: impl Write, records: &[panvas_core::EventRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
