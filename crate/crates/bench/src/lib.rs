//! Shared setup for the pipeline benchmarks.

use std::path::PathBuf;

use cbi_core::table::{load_dir, LoadOptions};
use cbi_core::{builtin_registry, Assistant, MetadataCatalog};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Assistant over the bundled fixture tables.
pub fn fixture_assistant() -> Assistant {
    let catalog = MetadataCatalog::shipped();
    let reports = load_dir(&fixtures_dir(), &catalog, &LoadOptions::default()).expect("fixtures load");
    Assistant::new(builtin_registry(), catalog, reports.into_iter().map(|r| r.table).collect())
}
