use std::path::Path;

use elforensics::report::canonical_json;
use elforensics::ElectionDataset;
use serde::Serialize;

use crate::commands::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub election_id: String,
    pub sha256: String,
    pub stations: usize,
}

impl InputDigest {
    pub fn of(path: &Path, dataset: &ElectionDataset) -> Self {
        InputDigest {
            path: path.display().to_string(),
            election_id: dataset.election_id().to_owned(),
            sha256: dataset.source_digest().to_owned(),
            stations: dataset.len(),
        }
    }
}

/// Sidecar recording everything needed to rerun a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: impl Serialize) -> Self {
        RunManifest {
            tool: "elforensics",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config).expect("configs serialize to JSON"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<primary>.manifest.json` next to the primary output.
    pub fn write_beside(&self, primary: &Path) -> Result<(), CliError> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        crate::commands::write_file(Path::new(&name), &canonical_json(self))
    }
}
