//! Artifact writing: files are staged under temporary names and renamed into
//! place only after every write has succeeded, so an interrupted run leaves
//! no partial outputs behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

pub struct OutputStage {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl OutputStage {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Usage(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        Ok(Self { dir: dir.to_path_buf(), staged: Vec::new() })
    }

    /// Stage one artifact; nothing is visible under its final name yet.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let temp = self.dir.join(format!(".{name}.tmp-{}", std::process::id()));
        fs::write(&temp, contents).map_err(|e| {
            CliError::Usage(format!("cannot write {}: {e}", temp.display()))
        })?;
        self.staged.push((temp, self.dir.join(name)));
        Ok(())
    }

    /// Atomically move every staged file into place and return their names.
    pub fn commit(mut self) -> Result<Vec<String>, CliError> {
        let mut names = Vec::with_capacity(self.staged.len());
        for (temp, target) in self.staged.drain(..) {
            fs::rename(&temp, &target).map_err(|e| {
                CliError::Usage(format!("cannot move {} into place: {e}", target.display()))
            })?;
            names.push(
                target
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        Ok(names)
    }
}

impl Drop for OutputStage {
    fn drop(&mut self) {
        // commit() drains the list; anything left here is an aborted run
        for (temp, _) in &self.staged {
            let _ = fs::remove_file(temp);
        }
    }
}

/// Quote a CSV field if it contains a delimiter, quote, or newline.
pub fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// Shortest round-trip decimal form; what every CSV number is written as.
pub fn fmt_f64(value: f64) -> String {
    format!("{value}")
}
