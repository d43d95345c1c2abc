//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Collects every file written into one directory.
pub struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

impl Output {
    /// Creates `dir`. An existing non-empty directory is only reused (and
    /// cleared) when it holds a manifest from an earlier run and `overwrite` is set.
    pub fn create(dir: &Path, overwrite: bool) -> Result<Self, CliError> {
        if dir.exists() {
            let nonempty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
            if nonempty {
                if !overwrite || !dir.join(MANIFEST).exists() {
                    return Err(CliError::Usage(format!(
                        "output directory {} is not empty (use --overwrite to replace an earlier run)",
                        dir.display()
                    )));
                }
                fs::remove_dir_all(dir).map_err(io_err(dir))?;
            }
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub subcommand: &'static str,
    pub config_sha256: String,
    /// The normalized configuration, defaults included.
    pub config: String,
    pub seed: u64,
    pub threads: usize,
    pub outcome: Value,
    pub exit_code: i32,
    pub wall_time_s: f64,
    pub summary: Value,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST);
        let mut s = serde_json::to_string_pretty(self).unwrap_or_default();
        s.push('\n');
        fs::write(&path, s).map_err(io_err(&path))
    }
}
