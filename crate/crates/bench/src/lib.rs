//! Shared inputs for the benchmarks.

use std::path::PathBuf;

/// Fixture tree of the core crate.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn lexer_lines() -> Vec<String> {
    let text = std::fs::read_to_string(fixtures_dir().join("lexer_lines.txt")).expect("lexer fixture");
    text.lines().map(str::to_string).collect()
}
