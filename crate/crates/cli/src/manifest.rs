use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Context, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One entry per subcommand that has written into the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: BTreeMap<String, RunEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Paths relative to the output directory, sorted.
    pub files: Vec<String>,
}

fn walk(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            walk(&e, out)?;
        }
    } else if path.exists() {
        out.push(path.to_owned());
    }
    Ok(())
}

/// Expands directories into the files below them.
pub fn list_files(produced: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in produced {
        walk(p, &mut files).context(p.display())?;
    }
    files.sort();
    files.dedup();
    Ok(files)
}

/// Records `command` in `out_dir/manifest.json`, keeping other entries.
pub fn record(cfg: &RunConfig, command: &str, produced: &[PathBuf]) -> Result<PathBuf> {
    let root = &cfg.out_dir;
    let path = root.join(MANIFEST_FILE);
    let mut manifest: Manifest = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    let files = list_files(produced)?
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(root).unwrap_or(f);
            rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
        })
        .collect();
    let versions = BTreeMap::from([
        ("advforge".to_owned(), advforge::VERSION.to_owned()),
        ("advforge-cli".to_owned(), env!("CARGO_PKG_VERSION").to_owned()),
    ]);
    manifest
        .runs
        .insert(command.to_owned(), RunEntry { config_sha256: cfg.hash(), seed: cfg.seed, versions, files });
    let mut json = serde_json::to_string_pretty(&manifest).context("manifest")?;
    json.push('\n');
    std::fs::create_dir_all(root).context(root.display())?;
    std::fs::write(&path, json).context(path.display())?;
    Ok(path)
}
