//! Error reporting, staged atomic output and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable inputs or invalid values; exit code 2.
    Usage(String),
    /// Failure during computation or while writing results; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("validation", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() }).to_string()
    }
}

impl From<specsched::Error> for CliError {
    fn from(e: specsched::Error) -> Self {
        if e.is_validation() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Results are staged in memory and only written once the whole command
/// has succeeded, so a failing run leaves no partial files behind.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    pub inputs: Vec<PathBuf>,
}

impl Outputs {
    pub fn add(&mut self, path: &Path, content: impl Into<Vec<u8>>) {
        self.files.push((path.to_path_buf(), content.into()));
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.files.iter().map(|f| f.0.clone()).collect()
    }

    pub fn commit(&self) -> CliResult<()> {
        for (path, bytes) in &self.files {
            write_atomic(path, bytes)?;
        }
        Ok(())
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub tool_version: &'static str,
    pub wall_time_seconds: f64,
}

pub fn manifest_path(explicit: Option<&Path>, outputs: &[PathBuf]) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    outputs.first().map(|p| {
        let mut s = p.clone().into_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}

pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
