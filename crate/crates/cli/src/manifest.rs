use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ladx::checkpoint::{hex, sha256};
use ladx::config::RunConfig;
use ladx::Error;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";

/// Content hash in the style of git object ids: SHA-256 over
/// `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut framed = format!("blob {}\0", bytes.len()).into_bytes();
    framed.extend_from_slice(bytes);
    hex(&sha256(&framed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub hash: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileRecord { path: path.to_path_buf(), hash: content_hash(&bytes), bytes: bytes.len() as u64 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments as given, program name excluded.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub config_digest: String,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub timings_ms: BTreeMap<String, f64>,
    /// Manifest this run was replayed from, if any.
    pub replay_of: Option<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { what: "manifest", path: path.to_path_buf() }.into());
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text).map_err(Error::from)?)
    }
}

/// Bookkeeping for one command: records inputs, outputs and timings and
/// writes the manifest at the end.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    inputs: Vec<FileRecord>,
    outputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    start: Instant,
}

impl Run {
    /// Create the output directory and write the merged config into it.
    pub fn start(cfg: RunConfig, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(CONFIG);
        fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(Run {
            cfg,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            start: Instant::now(),
        })
    }

    /// Check that a prerequisite exists and record its hash.
    pub fn input(&mut self, what: &'static str, path: &Path) -> CliResult<PathBuf> {
        if !path.is_file() {
            return Err(Error::MissingArtifact { what, path: path.to_path_buf() }.into());
        }
        self.inputs.push(FileRecord::of(path)?);
        Ok(path.to_path_buf())
    }

    /// Path of an artifact inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let path = self.out.join(name);
        self.outputs.push(path.clone());
        path
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.output(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> CliResult<T>) -> CliResult<T> {
        let t0 = Instant::now();
        let out = f(self)?;
        self.timings.insert(label.to_string(), t0.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }

    pub fn finish(mut self, command: &str, argv: Vec<String>, replay_of: Option<PathBuf>) -> CliResult<Manifest> {
        self.timings.insert("total".into(), self.start.elapsed().as_secs_f64() * 1e3);
        let outputs = self.outputs.iter().map(|p| FileRecord::of(p)).collect::<CliResult<Vec<_>>>()?;
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        let manifest = Manifest {
            command: command.to_string(),
            argv,
            cwd,
            config_digest: self.cfg.digest(),
            inputs: self.inputs,
            outputs,
            timings_ms: self.timings,
            replay_of,
        };
        let path = self.out.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
