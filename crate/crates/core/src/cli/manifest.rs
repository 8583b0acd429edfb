use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{LlcError, Result};
use crate::graph::{SbmParams, EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE};
use crate::supernet::Architecture;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What a command was asked to do, with every input it depends on
/// captured by value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum CommandSpec {
    Search,
    Train {
        architecture: Option<Architecture>,
        baseline: Option<String>,
    },
    Eval {
        architecture: Option<Architecture>,
        baselines: Vec<String>,
    },
    Mad {
        depths: Vec<usize>,
        method: String,
    },
    Oracle {
        cap: usize,
    },
    GenData {
        sbm: SbmParams,
        with_splits: bool,
    },
}

impl CommandSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CommandSpec::Search => "search",
            CommandSpec::Train { .. } => "train",
            CommandSpec::Eval { .. } => "eval",
            CommandSpec::Mad { .. } => "mad",
            CommandSpec::Oracle { .. } => "oracle",
            CommandSpec::GenData { .. } => "gen-data",
        }
    }
}

/// Everything needed to rerun a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: CommandSpec,
    pub config: RunConfig,
    /// SHA-256 over the dataset files, absent for commands without input data.
    pub dataset_fingerprint: Option<String>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| LlcError::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| LlcError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LlcError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            LlcError::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner()))
        })
    }
}

/// Hex SHA-256 over name and content of each dataset file present.
pub fn fingerprint(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE] {
        let path = dir.join(name);
        match std::fs::read(&path) {
            Ok(bytes) => {
                h.update(name.as_bytes());
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(e) if name == SPLITS_FILE && e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(LlcError::io(path, e)),
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
