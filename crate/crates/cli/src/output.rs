//! Serialized writes: every artifact goes through one collector on the main thread.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spdelab::io::write_states_le;
use spdelab::Field;

use crate::config::RunConfig;
use crate::CliError;

pub const ARTIFACT_VERSION: &str = concat!("spdelab ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Header {
    pub artifact: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Header {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Header {
            artifact: ARTIFACT_VERSION.into(),
            command: command.into(),
            config_sha256: config.hash(),
            seed: config.rng.seed,
        }
    }

    fn csv_block(&self) -> String {
        format!(
            "# artifact: {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n",
            self.artifact, self.command, self.config_sha256, self.seed
        )
    }
}

#[derive(Serialize)]
struct JsonDocument<'a, R: Serialize> {
    header: &'a Header,
    config: &'a RunConfig,
    report: &'a R,
}

pub struct Collector {
    dir: PathBuf,
    header: Header,
    config: RunConfig,
    written: Vec<PathBuf>,
}

impl Collector {
    pub fn new(dir: &Path, header: Header, config: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Collector { dir: dir.to_path_buf(), header, config: config.clone(), written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Header comment block, a column line, then one line per row.
    pub fn csv(&mut self, name: &str, columns: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut text = self.header.csv_block();
        text.push_str(&columns.join(","));
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        self.put(name, text.as_bytes())
    }

    /// Writes a CSV body produced elsewhere, prefixed by the header block.
    pub fn csv_raw(&mut self, name: &str, body: &[u8]) -> Result<PathBuf, CliError> {
        let mut bytes = self.header.csv_block().into_bytes();
        bytes.extend_from_slice(body);
        self.put(name, &bytes)
    }

    pub fn json<R: Serialize>(&mut self, name: &str, report: &R) -> Result<PathBuf, CliError> {
        let text = self.json_text(report)?;
        self.put(name, text.as_bytes())
    }

    pub fn json_text<R: Serialize>(&self, report: &R) -> Result<String, CliError> {
        let doc = JsonDocument { header: &self.header, config: &self.config, report };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    /// Raw little-endian f64 rows plus a `<name>.json` sidecar describing the layout.
    pub fn states(&mut self, name: &str, states: &[Field]) -> Result<PathBuf, CliError> {
        let mut bytes = Vec::new();
        write_states_le(&mut bytes, states).map_err(|e| CliError::Io(e.to_string()))?;
        let path = self.put(name, &bytes)?;
        #[derive(Serialize)]
        struct Layout {
            file: String,
            encoding: &'static str,
            rows: usize,
            nodes: usize,
        }
        let layout = Layout {
            file: name.into(),
            encoding: "f64 little-endian, row-major, one row per state",
            rows: states.len(),
            nodes: states.first().map_or(0, |s| s.len()),
        };
        self.json(&format!("{name}.json"), &layout)?;
        Ok(path)
    }
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}
