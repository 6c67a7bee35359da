//! Output-directory lifecycle: a lock against concurrent writers plus a run
//! manifest that records everything needed to re-execute the run.
//!
//! Timestamps and wall time live only in the manifest, so every other
//! artifact a command writes is byte-reproducible from seed and config.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::error::{CliError, CliResult};

pub struct RunDir {
    pub dir: PathBuf,
    lock: PathBuf,
    started: Instant,
}

impl RunDir {
    /// Creates the directory if needed and takes its `.lock`; a held lock
    /// (concurrent or crashed run) is a usage error.
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        let lock = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(Self {
                dir: dir.to_path_buf(),
                lock,
                started: Instant::now(),
            }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Usage(format!(
                "output directory {} is locked; another run is writing to it \
                 (or crashed and left {})",
                dir.display(),
                lock.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes `run_manifest.json` with the resolved configuration snapshot.
    pub fn write_manifest(
        &self,
        command: &str,
        seed: Option<u64>,
        config: serde_json::Value,
    ) -> CliResult<()> {
        let manifest = serde_json::json!({
            "command": command,
            "seed": seed,
            "config": config,
            "git_describe": git_describe(),
            "wall_time_seconds": self.started.elapsed().as_secs_f64(),
            "finished_at_unix": SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("run_manifest.json"), text)?;
        Ok(())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}
