//! Run manifests: what was run, on which case, and a digest of every file
//! it wrote.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: &'a [String],
    case: &'a str,
    case_sha256: &'a str,
    seed: u64,
    tol: f64,
    artifacts: Vec<ArtifactEntry>,
}

/// Collects the files of one command and writes `<command>.manifest.json`
/// next to them. Paths are recorded relative to the output directory so
/// that reruns elsewhere compare byte for byte.
pub struct Run {
    pub dir: PathBuf,
    pub command: String,
    pub args: Vec<String>,
    pub case_name: String,
    pub case_sha256: String,
    pub seed: u64,
    pub tol: f64,
    artifacts: Vec<ArtifactEntry>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, args: Vec<String>, case_name: &str, case_sha256: String, seed: u64, tol: f64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            args,
            case_name: case_name.to_string(),
            case_sha256,
            seed,
            tol,
            artifacts: vec![],
        })
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> io::Result<PathBuf> {
        let bytes = bytes.as_ref();
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.record(name, bytes);
        Ok(path)
    }

    /// Registers a file some other writer produced.
    pub fn adopt(&mut self, name: &str) -> io::Result<()> {
        let bytes = fs::read(self.dir.join(name))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(ArtifactEntry { file: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
    }

    pub fn finish(self) -> io::Result<PathBuf> {
        let m = Manifest {
            command: &self.command,
            args: &self.args,
            case: &self.case_name,
            case_sha256: &self.case_sha256,
            seed: self.seed,
            tol: self.tol,
            artifacts: self.artifacts,
        };
        let path = self.dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&m).expect("manifest serialises") + "\n")?;
        Ok(path)
    }
}
