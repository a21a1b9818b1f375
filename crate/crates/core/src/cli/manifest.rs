use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of `blob <len>\0<content>`, the object hash git uses for files.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: the command, every resolved option,
/// the seeds, and the content hashes of its inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputFile>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config).expect("options serialize"),
            seeds,
            inputs: Vec::new(),
        }
    }

    /// Hashes `path` as input `role`. A directory gets one digest over the
    /// sorted `<blob hash> <relative path>` lines of the files below it.
    pub fn input(&mut self, role: &str, path: &Path) -> io::Result<()> {
        let with_path = |e: io::Error| io::Error::new(e.kind(), format!("{}: {e}", path.display()));
        let sha256 = if path.is_dir() {
            let mut files = Vec::new();
            collect_files(path, &mut files).map_err(with_path)?;
            files.sort();
            let mut listing = String::new();
            for f in files {
                let rel = f.strip_prefix(path).unwrap_or(&f);
                let bytes = fs::read(&f).map_err(with_path)?;
                listing.push_str(&format!("{} {}\n", blob_hash(&bytes), rel.display()));
            }
            let mut h = Sha256::new();
            h.update(listing.as_bytes());
            hex(&h.finalize())
        } else {
            blob_hash(&fs::read(path).map_err(with_path)?)
        };
        self.inputs.push(InputFile {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}
