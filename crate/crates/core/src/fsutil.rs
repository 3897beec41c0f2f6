//! Output helpers that never leave partially written files behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Collects several output files in a hidden directory and moves them into
/// their destination only on [`Staging::commit`]. Dropping an uncommitted
/// staging area deletes it.
#[derive(Debug)]
pub struct Staging {
    dir: PathBuf,
    entries: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Staging {
    pub fn new(parent: &Path) -> Result<Self> {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let dir = parent.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            dir,
            entries: Vec::new(),
            committed: false,
        })
    }

    /// Stages `bytes` for `dest`.
    pub fn write(&mut self, dest: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = self.dir.join(format!("{}", self.entries.len()));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        self.entries.push((tmp, dest.to_path_buf()));
        Ok(())
    }

    pub fn commit(mut self) -> Result<()> {
        for (tmp, dest) in &self.entries {
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::rename(tmp, dest).map_err(|e| Error::io(dest, e))?;
        }
        self.committed = true;
        fs::remove_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("out/a.txt");
        {
            let mut st = Staging::new(root.path()).unwrap();
            st.write(&dest, b"x").unwrap();
        }
        assert!(!dest.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_moves_files() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("out/a.txt");
        let mut st = Staging::new(root.path()).unwrap();
        st.write(&dest, b"x").unwrap();
        st.commit().unwrap();
        assert_eq!(fs::read(&dest).unwrap(), b"x");
    }

    #[test]
    fn atomic_write_creates_parent() {
        let root = tempfile::tempdir().unwrap();
        let dest = root.path().join("a/b/c.json");
        atomic_write(&dest, b"{}").unwrap();
        assert_eq!(fs::read(&dest).unwrap(), b"{}");
    }
}
