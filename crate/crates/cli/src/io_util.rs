//! Output plumbing: atomic writes, lineage headers, and per-stage seeds.

use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// First 16 hex chars of the sha256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-stage sub-seed, derived from the global seed and the stage name.
pub fn derive_seed(global: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// The lineage comment stamped at the top of text artifacts.
pub fn lineage_header(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}\n")
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot rename {} into place", tmp.display()))?;
    Ok(())
}

/// Text artifact with the lineage header prepended.
pub fn write_artifact(path: &Path, config_hash: &str, seed: u64, body: &str) -> Result<()> {
    let mut out = lineage_header(config_hash, seed);
    out.push_str(body);
    write_atomic(path, out.as_bytes())
}

/// Sidecar `<file>.meta` for binary artifacts.
pub fn write_meta_sidecar(path: &Path, config_hash: &str, seed: u64) -> Result<()> {
    let meta_path = path.with_extension(format!(
        "{}.meta",
        path.extension().and_then(|e| e.to_str()).unwrap_or("bin")
    ));
    write_atomic(&meta_path, lineage_header(config_hash, seed).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stage() {
        let a = derive_seed(42, "embeddings");
        let b = derive_seed(42, "silver");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, "embeddings"));
        assert_ne!(a, derive_seed(43, "embeddings"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tsv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert!(!path.with_extension("tmp").exists());
    }
}
