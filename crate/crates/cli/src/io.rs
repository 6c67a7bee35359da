//! Input plumbing shared by the commands: existence checks that surface as
//! usage errors, and corpus loading from a manifest or a directory.

use std::fs;
use std::path::{Path, PathBuf};

use motiondiff_core::checkpoint::{load_checkpoint, Checkpoint};
use motiondiff_core::dataset::{load_manifest, load_motion};
use motiondiff_core::motion::MotionSequence;

use crate::error::{CliError, CliResult};

/// Artifacts a run directory may contain besides motion files; skipped when
/// globbing a directory without a manifest.
const NON_MOTION_FILES: [&str; 3] = ["run_manifest.json", "stats.json", "metrics.json"];

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

pub fn load_ckpt(path: &Path, what: &str) -> CliResult<Checkpoint> {
    require_file(path, what)?;
    Ok(load_checkpoint(path)?)
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub path: PathBuf,
    pub motion: MotionSequence,
}

/// Loads motions from a manifest file (`path<TAB>split`, paths relative to
/// the manifest) or from a directory (its `manifest.tsv` when present, else
/// sorted `*.json`). `split` filters entries unless it is `"all"`.
pub fn load_corpus(path: &Path, split: &str) -> CliResult<Vec<CorpusItem>> {
    let entries: Vec<(PathBuf, String)> = if path.is_dir() {
        let manifest = path.join("manifest.tsv");
        if manifest.is_file() {
            manifest_entries(&manifest)?
        } else {
            let mut files: Vec<PathBuf> = fs::read_dir(path)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| {
                    p.extension().is_some_and(|x| x == "json")
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| !NON_MOTION_FILES.contains(&n))
                })
                .collect();
            files.sort();
            files.into_iter().map(|p| (p, "all".to_string())).collect()
        }
    } else if path.is_file() {
        manifest_entries(path)?
    } else {
        return Err(CliError::Usage(format!(
            "data path {} does not exist",
            path.display()
        )));
    };

    let mut out = Vec::new();
    for (p, s) in entries {
        if split != "all" && s != split {
            continue;
        }
        out.push(CorpusItem {
            motion: load_motion(&p)?,
            path: p,
        });
    }
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "no motions under {} for split {split:?}",
            path.display()
        )));
    }
    Ok(out)
}

fn manifest_entries(manifest: &Path) -> CliResult<Vec<(PathBuf, String)>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(load_manifest(manifest)?
        .into_iter()
        .map(|(rel, split)| (base.join(rel), split))
        .collect())
}
