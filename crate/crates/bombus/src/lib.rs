//! File formats, model artifacts, experiment configuration, the command
//! line pipeline and the inference service around `bombus-core`.
//!
//! - [`manifest`]: JSON Lines dataset manifests.
//! - [`imaging`]: PNG/JPEG decoding, standardization and PNG output.
//! - [`artifact`]: model artifact directories with checksums.
//! - [`interchange`]: probability-matrix, truth and count CSV files.
//! - [`config`]: experiment configuration, presets and overrides.
//! - [`report`]: JSON and markdown reports plus plot-ready CSV series.
//! - [`pipeline`]: the subcommands behind the `bombus` binary.
//! - [`serve`]: the HTTP prediction service.

pub mod artifact;
pub mod config;
mod error;
pub mod imaging;
pub mod interchange;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod serve;

pub use error::{Error, Result};

use std::path::Path;

pub(crate) fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write `contents`, creating parent directories.
pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
