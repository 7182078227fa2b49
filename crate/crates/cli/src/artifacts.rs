//! Stage manifests and artifact hygiene. Every subcommand writes a manifest
//! naming its outputs and a hash of everything it depended on (config
//! fragment, seed, upstream manifests), so `--skip-existing` only skips when
//! a re-run would provably rewrite the same bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tokendance_core::error::{CoreError, Result};

/// FNV-1a over the canonical JSON of whatever the stage depends on.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hash of several dependency strings, order-sensitive.
pub fn inputs_hash(parts: &[&str]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        h ^= fnv1a64(p.as_bytes());
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageManifest {
    pub inputs_hash: String,
    pub outputs: Vec<String>,
    /// Free-form stage summary (losses, accuracies, flags).
    #[serde(default)]
    pub info: serde_json::Value,
}

pub fn write_stage_manifest(
    dir: &Path,
    hash: &str,
    outputs: &[String],
    info: serde_json::Value,
) -> Result<()> {
    let m = StageManifest {
        inputs_hash: hash.to_string(),
        outputs: outputs.to_vec(),
        info,
    };
    let path = dir.join("stage.json");
    let text = serde_json::to_string_pretty(&m)
        .map_err(|e| CoreError::Invalid(format!("stage manifest: {e}")))?;
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
}

pub fn read_stage_manifest(dir: &Path) -> Result<StageManifest> {
    let path = dir.join("stage.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CoreError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| CoreError::format(&path, e.to_string()))
}

/// True when the stage's manifest matches `hash` and every listed output is
/// still on disk.
pub fn stage_is_current(dir: &Path, hash: &str) -> bool {
    match read_stage_manifest(dir) {
        Ok(m) => {
            m.inputs_hash == hash
                && m.outputs.iter().all(|o| dir.join(o).exists())
        }
        Err(_) => false,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

/// `(epoch, loss)` rows with a header; loss formatting is full precision so
/// curves are comparable bitwise across identical runs.
pub fn write_loss_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (e, l) in curve {
        text.push_str(&format!("{e},{l:e}\n"));
    }
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ckpt"))
}

/// A checkpoint that must already exist; the error names the missing path.
pub fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CoreError::MissingArtifact(format!(
            "{} (run `{hint}` first)",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_detection_requires_matching_hash_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("model.ckpt"), b"x").unwrap();
        write_stage_manifest(d, "abc", &["model.ckpt".into()], serde_json::json!({}))
            .unwrap();
        assert!(stage_is_current(d, "abc"));
        assert!(!stage_is_current(d, "other"));
        std::fs::remove_file(d.join("model.ckpt")).unwrap();
        assert!(!stage_is_current(d, "abc"));
    }

    #[test]
    fn hashing_is_stable_and_order_sensitive() {
        assert_eq!(inputs_hash(&["a", "b"]), inputs_hash(&["a", "b"]));
        assert_ne!(inputs_hash(&["a", "b"]), inputs_hash(&["b", "a"]));
        assert_ne!(inputs_hash(&["ab"]), inputs_hash(&["a", "b"]));
    }
}
