//! Output directory handling: CSV tables, JSON documents and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl OutputDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("results serialise");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes a header plus rows; fields are written with `Display`.
    pub fn write_csv<R, F>(&mut self, name: &str, header: &[&str], rows: R) -> Result<(), CliError>
    where
        R: IntoIterator<Item = Vec<F>>,
        F: ToString,
    {
        let path = self.root.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        if !header.is_empty() {
            w.write_record(header).map_err(csv_err)?;
        }
        for row in rows {
            w.write_record(row.iter().map(ToString::to_string)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
        self.write_bytes(name, &bytes)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    workers: usize,
    wall_time_seconds: f64,
    config: &'a std::collections::BTreeMap<String, String>,
    rerun: String,
    outputs: &'a [String],
}

/// Writes `config.txt` (re-runnable) and `manifest.json`.
pub fn finish(out: &mut OutputDir, cfg: &RunConfig, workers: usize, elapsed: Duration) -> Result<(), CliError> {
    out.write_text("config.txt", &cfg.to_text())?;
    let outputs: Vec<String> = out.files().to_vec();
    let manifest = Manifest {
        command: cfg.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed()?,
        workers,
        wall_time_seconds: elapsed.as_secs_f64(),
        config: cfg.entries(),
        rerun: format!("hypodense {} --config config.txt", cfg.command.name()),
        outputs: &outputs,
    };
    out.write_json("manifest.json", &manifest)
}
