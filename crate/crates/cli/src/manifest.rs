//! Run manifests: what a command was asked to do, what it read and what it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use headprune::io::write_atomic;
use headprune::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name; `replay` parses these again.
    pub argv: Vec<String>,
    /// Resolved settings after applying flags, config file and defaults.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Timing and other values that are not expected to repeat across runs.
    #[serde(default)]
    pub stats: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Collects inputs and outputs while a command runs, then writes the manifest.
pub struct Recorder {
    path: PathBuf,
    manifest: RunManifest,
    written: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, argv: &[String], path: PathBuf) -> Self {
        Self {
            path,
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv: argv.to_vec(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix: now(),
                finished_unix: 0.0,
                stats: Default::default(),
            },
            written: Vec::new(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Value stored in artifacts to point back at this manifest.
    pub fn reference(&self) -> String {
        self.path.display().to_string()
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<(), Error> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn stat(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.manifest.stats.insert(key.to_string(), value.into());
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Error> {
        write_atomic(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    /// Records a file written by library code.
    pub fn wrote(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    pub fn finish(mut self) -> Result<PathBuf, Error> {
        for p in &self.written {
            self.manifest.outputs.push(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            });
        }
        self.manifest.finished_unix = now();
        write_atomic(&self.path, &serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(self.path)
    }
}

/// `<output>.manifest.json` next to the primary output.
pub fn default_path(primary: &Path) -> PathBuf {
    let mut name = primary
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
