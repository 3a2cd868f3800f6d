//! Shared plumbing: output directory, run manifest, panel loading and the
//! mapping from failures to exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Args;
use serde::Serialize;
use sha2::{Digest, Sha256};

use pgg_core::panel::{load_panel, Panel, Schema, ThresholdRule};

pub mod backout;
pub mod evolution;
pub mod glm;
pub mod iv;
pub mod model;
pub mod regime;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pgg_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
    pub tool_version: String,
    pub created_unix: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects outputs, input digests and warnings for one subcommand run.
pub struct Run {
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

impl Run {
    pub fn new(out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).expect("results serialize");
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e: csv::Error| CliError::Io {
            path: name.to_string(),
            msg: e.to_string(),
        };
        w.write_record(header).map_err(wrap)?;
        for r in rows {
            w.write_record(&r).map_err(wrap)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io {
            path: name.to_string(),
            msg: e.to_string(),
        })?;
        self.write(name, &bytes)
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn finish(mut self, subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> CliResult<Vec<String>> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            warnings: self.warnings.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let path = self.out_dir.join("manifest.json");
        let s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, s + "\n").map_err(|e| io_err(&path, e))?;
        Ok(self.warnings)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Panel CSV location and layout.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PanelArgs {
    /// Long-format panel CSV (one row per player-round).
    #[arg(long)]
    pub input: PathBuf,
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Players per group.
    #[arg(long, default_value_t = 5)]
    pub group_size: usize,
    /// Rounds per session.
    #[arg(long, default_value_t = 10)]
    pub rounds: u32,
}

impl PanelArgs {
    pub fn load(&self, run: &mut Run) -> CliResult<Panel> {
        if !self.delimiter.is_ascii() {
            return usage("delimiter must be a single ASCII character");
        }
        run.read_input(&self.input)?;
        let schema = Schema {
            delimiter: self.delimiter as u8,
            group_size: self.group_size,
            rounds: self.rounds,
            ..Schema::default()
        };
        Ok(load_panel(&self.input, &schema)?)
    }
}

pub fn parse_rule(s: &str) -> CliResult<ThresholdRule> {
    ThresholdRule::parse(s).map_or_else(|| usage(format!("bad threshold rule `{s}`")), Ok)
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}
