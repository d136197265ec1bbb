//! Output staging: every file of a command is rendered in memory first and
//! then written through a temporary file and an atomic rename, so a failed
//! command leaves no partial outputs behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use oscmix_core::SpectralMatrix;
use serde::Serialize;

use crate::error::CliError;

#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize to JSON");
        text.push('\n');
        self.add(name, text);
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        for (name, contents) in self.files {
            let target = dir.join(&name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io(dir))?;
            tmp.write_all(&contents).map_err(io(&target))?;
            tmp.as_file().sync_all().map_err(io(&target))?;
            tmp.persist(&target).map_err(|e| CliError::Io {
                path: target.clone(),
                source: e.error,
            })?;
            written.push(target);
        }
        Ok(written)
    }
}

/// Long-format `freq,i,j,re,im` over the lower triangle (`i >= j`).
pub fn spectral_csv(matrices: &[SpectralMatrix]) -> String {
    let mut out = String::from("freq,i,j,re,im\n");
    for s in matrices {
        let n = s.values.nrows();
        for i in 0..n {
            for j in 0..=i {
                let v: Complex64 = s.values[[i, j]];
                let _ = writeln!(out, "{},{i},{j},{},{}", s.freq, v.re, v.im);
            }
        }
    }
    out
}

/// Describes what a command wrote; contains no timestamps so reruns are identical.
#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, outputs: &Outputs, details: serde_json::Value) -> Self {
        let mut files = outputs.names();
        files.push("manifest.json".into());
        Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            files,
            details,
        }
    }
}
