//! Locating the public benchmark files, which are fetched manually.

use std::path::{Path, PathBuf};

pub const DATA_DIR_VAR: &str = "PGO_DATA_DIR";

/// `$PGO_DATA_DIR`, else `data/` at the workspace root.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// First `.g2o` file in `dir` whose lowercase stem contains `key`.
pub fn locate_in(dir: &Path, key: &str) -> Option<PathBuf> {
    let key = key.to_ascii_lowercase();
    let mut hits: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x.eq_ignore_ascii_case("g2o"))
                && p.file_stem().is_some_and(|s| s.to_string_lossy().to_ascii_lowercase().contains(&key))
        })
        .collect();
    hits.sort();
    hits.into_iter().next()
}

pub fn locate(key: &str) -> Option<PathBuf> {
    locate_in(&data_dir(), key)
}
