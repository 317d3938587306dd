use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

/// Files produced by a job, kept in memory until the job has succeeded so a
/// failed run never leaves partial outputs behind.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Renders CSV through `f` into a named file.
    pub fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> noisescreen::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct FileEntry<'a> {
    file: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct InputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    core_version: &'a str,
    schema_version: u32,
    command: &'a str,
    seed: u64,
    gamma: f64,
    config_sha256: String,
    inputs: Vec<InputEntry>,
    outputs: Vec<FileEntry<'a>>,
}

/// Writes every output and then the manifest, each through a temporary file
/// in the target directory renamed into place. The effective config is saved
/// next to the outputs so the directory alone is enough to re-run the job.
pub fn write_all(dir: &Path, command: &str, cfg: &RunConfig, inputs: &[PathBuf], outputs: &Outputs) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let config_text = cfg.to_toml();
    let mut entries = Vec::new();
    for (name, bytes) in &outputs.files {
        write_atomic(dir, name, bytes)?;
        entries.push(FileEntry {
            file: name,
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }
    write_atomic(dir, CONFIG_COPY, config_text.as_bytes())?;
    let inputs = inputs
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?;
            Ok(InputEntry {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "noisescreen",
        version: env!("CARGO_PKG_VERSION"),
        core_version: noisescreen::VERSION,
        schema_version: cfg.schema_version,
        command,
        seed: cfg.seed()?,
        gamma: cfg.gamma()?,
        config_sha256: sha256_hex(config_text.as_bytes()),
        inputs,
        outputs: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(dir, MANIFEST, &json)
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(format!("cannot create temporary file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target)
        .map_err(|e| CliError::io(format!("cannot write {}: {}", target.display(), e.error)))?;
    Ok(())
}
