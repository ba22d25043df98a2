//! Report directories that appear all at once.
//!
//! Files are written into a hidden staging directory next to the target and
//! the staging directory is renamed into place on success. A failed run
//! leaves the staging directory behind with a `FAILED` file holding the
//! error.

use std::fs;
use std::path::{Path, PathBuf};

use crate::Failure;

pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
}

impl OutputDir {
    pub fn create(target: &Path) -> Result<Self, Failure> {
        if target.exists() {
            let empty = fs::read_dir(target).map(|mut d| d.next().is_none()).unwrap_or(false);
            if !empty {
                return Err(Failure::input(format!(
                    "{}: output directory already exists and is not empty",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| Failure::input(format!("{}: not a directory name", target.display())))?;
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let staging = parent.join(format!(".{}.partial", name.to_string_lossy()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Failure::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Failure::io(&staging, e))?;
        Ok(OutputDir {
            target: target.to_path_buf(),
            staging,
        })
    }

    /// Directory files are written into until [`commit`](Self::commit).
    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        let path = self.staging.join(name);
        fs::write(&path, contents).map_err(|e| Failure::io(&path, e))
    }

    pub fn commit(self) -> Result<PathBuf, Failure> {
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| Failure::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Failure::io(&self.target, e))?;
        Ok(self.target)
    }

    pub fn fail(self, failure: &Failure) {
        // Best effort: the original failure is what gets reported.
        let _ = fs::write(self.staging.join("FAILED"), format!("{}\n", failure.message));
    }
}
