//! File writes for one command. Files and directories created by a command that
//! fails are removed again; existing files are only replaced by atomic rename.

use std::path::{Path, PathBuf};

use tinylm::io::write_atomic;
use tinylm::table::Table;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Outputs {
    created_files: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_dir(&mut self, dir: &Path) -> Result<(), CliError> {
        let mut missing: Vec<PathBuf> = dir.ancestors().take_while(|a| !a.as_os_str().is_empty() && !a.exists()).map(Path::to_path_buf).collect();
        std::fs::create_dir_all(dir).map_err(|e| CliError::user(format!("{}: {e}", dir.display())))?;
        // Deepest first, so removal in order empties children before parents.
        self.created_dirs.append(&mut missing);
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            self.create_dir(dir)?;
        }
        let fresh = !path.exists();
        write_atomic(path, bytes)?;
        if fresh {
            self.created_files.push(path.to_path_buf());
        }
        Ok(())
    }

    /// Replaces rows of the CSV ledger at `path` that share the first `key_len`
    /// columns with rows of `new`, appending the rest.
    pub fn upsert(&mut self, path: &Path, new: Table, key_len: usize) -> Result<Table, CliError> {
        let merged = match read_table(path)? {
            Some(mut t) => {
                t.upsert(new, key_len)?;
                t
            }
            None => new,
        };
        self.write(path, merged.to_csv().as_bytes())?;
        Ok(merged)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.created_files.iter().rev() {
            if std::fs::remove_file(f).is_ok() {
                log::warn!("removed partial output {}", f.display());
            }
        }
        for d in &self.created_dirs {
            let _ = std::fs::remove_dir(d);
        }
    }
}

pub fn read_table(path: &Path) -> Result<Option<Table>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = tinylm::io::read_to_string(path)?;
    Ok(Some(Table::from_csv(&text)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let kept = dir.path().join("kept.txt");
        std::fs::write(&kept, "old").unwrap();
        {
            let mut o = Outputs::new();
            o.write(&dir.path().join("a/b/new.txt"), b"x").unwrap();
            o.write(&kept, b"new").unwrap();
        }
        assert!(!dir.path().join("a").exists());
        assert_eq!(std::fs::read_to_string(&kept).unwrap(), "new");

        let mut o = Outputs::new();
        o.write(&dir.path().join("c.txt"), b"x").unwrap();
        o.commit();
        assert!(dir.path().join("c.txt").exists());
    }

    #[test]
    fn upsert_never_duplicates_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        let row = |k: &str, v: &str| {
            let mut t = Table::new(["key", "value"]);
            t.push([k, v]);
            t
        };
        let mut o = Outputs::new();
        o.upsert(&path, row("a", "1"), 1).unwrap();
        o.upsert(&path, row("b", "2"), 1).unwrap();
        let t = o.upsert(&path, row("a", "3"), 1).unwrap();
        o.commit();
        assert_eq!(t.rows, vec![vec!["a", "3"], vec!["b", "2"]]);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), t.to_csv());
    }
}
