//! Provenance records and the output directory lock.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cortexalign::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = ".cortexalign.lock";

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut f: File = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Invalid(format!(
                        "{} is in use by another run (delete {} if it is stale)",
                        dir.display(),
                        path.display()
                    ))
                } else {
                    io_err(&path, e)
                }
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Record<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    subcommand: &'a str,
    config_sha256: String,
    config: &'a serde_json::Value,
    seed: Option<u64>,
    artifacts: Vec<Artifact>,
}

/// Writes `<subcommand>.provenance.json` listing every artifact with its hash.
/// Artifact paths are relative to `out` and sorted.
pub fn write_record(
    out: &Path,
    subcommand: &str,
    config: &serde_json::Value,
    seed: Option<u64>,
    artifacts: &[PathBuf],
) -> Result<PathBuf> {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let mut listed = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let bytes = std::fs::read(a).map_err(|e| io_err(a, e))?;
        let rel = a.strip_prefix(out).unwrap_or(a);
        listed.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
    }
    listed.sort_by(|a, b| a.path.cmp(&b.path));
    listed.dedup_by(|a, b| a.path == b.path);
    let record = Record {
        tool: "cortexalign",
        version: env!("CARGO_PKG_VERSION"),
        core_version: cortexalign::VERSION,
        subcommand,
        config_sha256: sha256_hex(&canonical),
        config,
        seed,
        artifacts: listed,
    };
    let path = out.join(format!("{subcommand}.provenance.json"));
    let mut json = serde_json::to_string_pretty(&record).expect("record serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
