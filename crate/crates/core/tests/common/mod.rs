#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;

/// Workspace-level fixtures directory.
pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
