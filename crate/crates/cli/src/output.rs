//! File writers. Every artifact carries the config fingerprint: JSON as a
//! field, CSV as a trailing `#` comment, SVG as an XML comment.

use std::fs;
use std::path::Path;

use cuefuse_core::ingest::{canonical_bytes, VideoRecord};
use cuefuse_core::metrics::config_fingerprint;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub fn dataset_digest(records: &[VideoRecord]) -> String {
    hex::encode(Sha256::digest(canonical_bytes(records)))
}

/// Fingerprint of the analysis settings, the dataset content and anything
/// else that shapes the artifact (weight files, command name).
pub fn fingerprint(settings: &Settings, dataset_sha256: &str, extra: serde_json::Value) -> String {
    config_fingerprint(&serde_json::json!({
        "settings": settings,
        "dataset_sha256": dataset_sha256,
        "extra": extra,
    }))
}

pub fn trailer(fingerprint: &str) -> Vec<String> {
    vec![format!("config_fingerprint={fingerprint}")]
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    tracing::info!(path = %path.display(), "wrote");
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn json_string<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes")
}

/// Inserts an XML comment with the fingerprint right after the `<svg ...>` tag.
pub fn stamp_svg(svg: &str, fingerprint: &str) -> String {
    let comment = format!("<!-- config_fingerprint={fingerprint} -->");
    match svg.find("<svg").and_then(|start| svg[start..].find('>').map(|end| start + end + 1)) {
        Some(at) => format!("{}\n{comment}{}", &svg[..at], &svg[at..]),
        None => format!("{comment}\n{svg}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_stamp_lands_inside_the_root() {
        let s = stamp_svg("<svg xmlns=\"x\" width=\"1\">\n<rect/>\n</svg>\n", "abc");
        assert!(s.starts_with("<svg xmlns=\"x\" width=\"1\">\n<!-- config_fingerprint=abc -->"));
        assert!(s.ends_with("</svg>\n"));
    }
}
