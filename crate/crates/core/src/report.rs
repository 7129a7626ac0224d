//! Output directory handling, run metadata and machine-readable errors.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Sole writer of one run's output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    fn claim(&mut self, name: &str) -> Result<PathBuf> {
        if self.written.iter().any(|n| n == name) {
            return Err(Error::Validation(format!("output {name} written twice")));
        }
        self.written.push(name.to_string());
        Ok(self.root.join(name))
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.claim(name)?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        self.write_with(name, |w| writeln!(w, "{text}"))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_with(name, |w| w.write_all(text.as_bytes()))
    }
}

/// Adapter so the `impl Write` CSV writers of the modules accept a trait object.
pub struct DynWrite<'a>(pub &'a mut dyn Write);

impl Write for DynWrite<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunInfo {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub epsilon: f64,
    pub elapsed_seconds: f64,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        Self { error: e.kind().to_string(), message: e.to_string(), exit_code: e.exit_code() }
    }
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error report serializes")
    }
}
