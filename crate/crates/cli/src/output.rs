use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use balancelab::datagen::meta_path;
use serde::Serialize;

use crate::Usage;

/// Output directory that refuses to overwrite files unless forced.
pub struct Outputs {
    pub dir: PathBuf,
    pub force: bool,
}

impl Outputs {
    pub fn create(dir: PathBuf, force: bool) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir, force })
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    /// Fail before anything is written if a target (or a dataset sidecar)
    /// already exists.
    pub fn claim(&self, targets: &[PathBuf]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for p in targets {
            for q in [p.clone(), meta_path(p)] {
                if q.exists() {
                    return Err(Usage::new(format!("{} exists (pass --force to overwrite)", q.display())).into());
                }
            }
        }
        Ok(())
    }
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
