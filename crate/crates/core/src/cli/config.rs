use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LlcError, Result};
use crate::search::SearchConfig;
use crate::supernet::FusionKind;

/// Fully resolved settings of one command: defaults, then the config file,
/// then command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub search: SearchConfig,
    /// Number of consecutive seeds starting at `search.seed`.
    pub seeds: usize,
    /// Seed of the stratified split used when the dataset has none.
    pub split_seed: u64,
    pub normalize_features: bool,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            seeds: 1,
            split_seed: 0,
            normalize_features: false,
            data: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Keys accepted in config files and, in kebab case, as flags.
pub const KEYS: &[&str] = &[
    "epochs",
    "retrain_epochs",
    "lr_w",
    "lr_alpha",
    "weight_decay_w",
    "lambda_start",
    "lambda_end",
    "seed",
    "seeds",
    "gnn",
    "blocks",
    "hidden",
    "gat_heads",
    "dropout",
    "patience",
    "fusion_subset",
    "split_seed",
    "normalize_features",
    "data",
    "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LlcError::Config(format!("invalid value '{value}' for {key}")))
}

impl RunConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.search.seed + i).collect()
    }

    /// Sets one key; `-` and `_` are interchangeable in key names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        let s = &mut self.search;
        match key.as_str() {
            "epochs" => s.epochs = parse(&key, value)?,
            "retrain_epochs" => s.retrain_epochs = parse(&key, value)?,
            "lr_w" => s.lr_w = parse(&key, value)?,
            "lr_alpha" => s.lr_alpha = parse(&key, value)?,
            "weight_decay_w" | "weight_decay" => s.weight_decay_w = parse(&key, value)?,
            "lambda_start" => s.lambda_start = parse(&key, value)?,
            "lambda_end" => s.lambda_end = parse(&key, value)?,
            "seed" => s.seed = parse(&key, value)?,
            "gnn" | "gnn_kind" => s.gnn_kind = parse(&key, value)?,
            "blocks" | "n_gnn_blocks" => s.n_gnn_blocks = parse(&key, value)?,
            "hidden" | "hidden_dim" => s.hidden_dim = parse(&key, value)?,
            "gat_heads" => s.gat_heads = parse(&key, value)?,
            "dropout" => s.dropout = parse(&key, value)?,
            "patience" => s.patience = parse(&key, value)?,
            "fusion_subset" => s.fusion_subset = parse_fusions(value)?,
            "seeds" => self.seeds = parse(&key, value)?,
            "split_seed" => self.split_seed = parse(&key, value)?,
            "normalize_features" => self.normalize_features = parse(&key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            _ => return Err(LlcError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(LlcError::Config("seeds must be at least 1".into()));
        }
        self.search.validate()
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlcError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| LlcError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(LlcError::Config(format!("line {}: expected key = value", i + 1)));
            };
            self.set(k, v)
                .map_err(|e| LlcError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

pub fn parse_fusions(value: &str) -> Result<Vec<FusionKind>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<FusionKind>().map_err(|e| LlcError::Config(e.to_string())))
        .collect()
}
