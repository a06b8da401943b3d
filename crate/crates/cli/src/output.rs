//! Output files, each stamped with the run manifest.

use crate::config::{CommandKind, RunConfig};
use crate::error::CliError;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Identifies the run that produced a file.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: CommandKind,
    pub config_sha256: String,
    pub seed: u64,
}

impl Manifest {
    pub fn new(command: CommandKind, config: &RunConfig) -> Self {
        Self {
            tool: "mdlab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: config.hash(),
            seed: config.seed,
        }
    }

    /// `#`-prefixed header lines for CSV files.
    pub fn csv_header(&self) -> String {
        format!(
            "# tool={} version={}\n# command={}\n# config_sha256={}\n# seed={}\n",
            self.tool,
            self.version,
            serde_json::to_value(self.command).expect("serialisable")
                .as_str()
                .unwrap_or_default(),
            self.config_sha256,
            self.seed
        )
    }
}

pub struct OutputDir {
    root: PathBuf,
    pub written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, manifest: &Manifest, body: &str) -> Result<(), CliError> {
        self.write(name, &format!("{}{body}", manifest.csv_header()))
    }

    /// Writes `{"manifest": ..., <fields of payload>}`.
    pub fn json<T: Serialize>(&mut self, name: &str, manifest: &Manifest, payload: &T) -> Result<(), CliError> {
        let mut value = serde_json::to_value(payload).expect("serialisable");
        let obj = value.as_object_mut().expect("payload is a JSON object");
        let mut out = serde_json::Map::new();
        out.insert("manifest".into(), serde_json::to_value(manifest).expect("serialisable"));
        out.append(obj);
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(out)).expect("serialisable");
        self.write(name, &(text + "\n"))
    }
}
