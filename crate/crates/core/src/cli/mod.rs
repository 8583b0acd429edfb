//! Command-line front end. Every command resolves its configuration,
//! writes a manifest into the output directory, then runs.

mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{describe, execute, Aggregate, EvalRow};
pub use config::{parse_fusions, RunConfig, KEYS};
pub use manifest::{fingerprint, CommandSpec, RunManifest, MANIFEST_FILE};

use crate::error::{LlcError, Result};
use crate::graph::SbmParams;
use crate::search::Baseline;
use crate::supernet::Architecture;

#[derive(Debug, Parser)]
#[command(name = "llc", version, about = "Search layer-wise connections and fusions for graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search an architecture per seed.
    Search(Common),
    /// Retrain an architecture file or a baseline per seed.
    Train(TrainArgs),
    /// Compare the searched design with the baselines over seeds.
    Eval(EvalArgs),
    /// Sweep depth and record test accuracy and test MAD.
    Mad(MadArgs),
    /// Train every architecture of a small space and rank them.
    Oracle(OracleArgs),
    /// Write a stochastic-block-model dataset.
    GenData(GenDataArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

/// Flags shared by the data-driven commands; each overrides the config
/// file key of the same name.
#[derive(Debug, Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    /// sage or gat.
    #[arg(long)]
    gnn: Option<String>,
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    retrain_epochs: Option<String>,
    #[arg(long)]
    lr_w: Option<String>,
    #[arg(long)]
    lr_alpha: Option<String>,
    #[arg(long)]
    weight_decay_w: Option<String>,
    #[arg(long)]
    lambda_start: Option<String>,
    #[arg(long)]
    lambda_end: Option<String>,
    #[arg(long)]
    gat_heads: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    /// Comma-separated subset of SUM,MEAN,MAX,CONCAT,LSTM,ATT.
    #[arg(long)]
    fusion_subset: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long)]
    normalize_features: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("data", &self.data),
            ("out", &self.out),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("gnn", &self.gnn),
            ("blocks", &self.blocks),
            ("hidden", &self.hidden),
            ("epochs", &self.epochs),
            ("retrain_epochs", &self.retrain_epochs),
            ("lr_w", &self.lr_w),
            ("lr_alpha", &self.lr_alpha),
            ("weight_decay_w", &self.weight_decay_w),
            ("lambda_start", &self.lambda_start),
            ("lambda_end", &self.lambda_end),
            ("gat_heads", &self.gat_heads),
            ("dropout", &self.dropout),
            ("patience", &self.patience),
            ("fusion_subset", &self.fusion_subset),
            ("split_seed", &self.split_seed),
            ("normalize_features", &self.normalize_features),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Architecture JSON written by `search`.
    #[arg(long, conflicts_with = "baseline")]
    arch: Option<PathBuf>,
    /// stack2, stack4, resgcn4, densegcn4, jknet4 (any depth suffix works).
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Fixed architecture for the searched row; searched per seed if absent.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Comma-separated baselines; defaults to the standard five.
    #[arg(long)]
    baselines: Option<String>,
}

#[derive(Debug, Args)]
struct MadArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "2,4,8", value_delimiter = ',')]
    depths: Vec<usize>,
    /// stack, resgcn, densegcn, jknet or llc.
    #[arg(long, default_value = "stack")]
    method: String,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = crate::diagnostics::DEFAULT_CAP)]
    cap: usize,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 4)]
    communities: usize,
    #[arg(long, default_value_t = 100)]
    nodes_per_community: usize,
    #[arg(long, default_value_t = 0.05)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    feature_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a stratified `splits.json`.
    #[arg(long)]
    with_splits: bool,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; defaults to the one recorded in the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_architecture(path: &PathBuf) -> Result<Architecture> {
    let text = std::fs::read_to_string(path).map_err(|e| LlcError::io(path, e))?;
    Architecture::from_json(&text)
        .map_err(|e| LlcError::Config(format!("{}: {}", path.display(), e)))
}

fn manifest_for(common: &Common, command: CommandSpec) -> Result<RunManifest> {
    let config = common.resolve()?;
    let dataset_fingerprint = match &config.data {
        Some(dir) => Some(fingerprint(dir)?),
        None => None,
    };
    Ok(RunManifest {
        command,
        seeds: config.seed_list(),
        out_dir: config.out.clone(),
        dataset_fingerprint,
        config,
    })
}

fn build_manifest(command: Command) -> Result<RunManifest> {
    match command {
        Command::Search(c) => manifest_for(&c, CommandSpec::Search),
        Command::Train(a) => {
            if a.arch.is_none() && a.baseline.is_none() {
                return Err(LlcError::Config("train needs --arch or --baseline".into()));
            }
            if let Some(b) = &a.baseline {
                b.parse::<Baseline>().map_err(|e| LlcError::Config(e.to_string()))?;
            }
            let architecture = a.arch.as_ref().map(read_architecture).transpose()?;
            manifest_for(&a.common, CommandSpec::Train { architecture, baseline: a.baseline })
        }
        Command::Eval(a) => {
            let architecture = a.arch.as_ref().map(read_architecture).transpose()?;
            let baselines: Vec<String> = match &a.baselines {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => Baseline::STANDARD.iter().map(|b| b.to_string()).collect(),
            };
            for b in &baselines {
                b.parse::<Baseline>().map_err(|e| LlcError::Config(e.to_string()))?;
            }
            manifest_for(&a.common, CommandSpec::Eval { architecture, baselines })
        }
        Command::Mad(a) => {
            a.method.parse::<crate::diagnostics::MadMethod>().map_err(|e| LlcError::Config(e.to_string()))?;
            if a.depths.iter().any(|&d| d < 2) {
                return Err(LlcError::Config("depths must be at least 2".into()));
            }
            manifest_for(&a.common, CommandSpec::Mad { depths: a.depths, method: a.method })
        }
        Command::Oracle(a) => manifest_for(&a.common, CommandSpec::Oracle { cap: a.cap }),
        Command::GenData(a) => {
            let config = RunConfig {
                split_seed: a.split_seed,
                out: a.out.clone(),
                ..RunConfig::default()
            };
            Ok(RunManifest {
                command: CommandSpec::GenData {
                    sbm: SbmParams {
                        communities: a.communities,
                        nodes_per_community: a.nodes_per_community,
                        p_in: a.p_in,
                        p_out: a.p_out,
                        feature_dim: a.feature_dim,
                        feature_noise: a.feature_noise,
                        seed: a.seed,
                    },
                    with_splits: a.with_splits,
                },
                seeds: vec![a.seed],
                out_dir: a.out,
                dataset_fingerprint: None,
                config,
            })
        }
        Command::Replay(a) => {
            let mut m = RunManifest::read(&a.manifest)?;
            if let (Some(dir), Some(expected)) = (&m.config.data, &m.dataset_fingerprint) {
                let actual = fingerprint(dir)?;
                if &actual != expected {
                    return Err(LlcError::Format {
                        file: dir.display().to_string(),
                        line: 0,
                        message: format!("dataset fingerprint {actual} differs from manifest {expected}"),
                    });
                }
            }
            if let Some(out) = a.out {
                m.config.out = out.clone();
                m.out_dir = out;
            }
            Ok(m)
        }
    }
}

/// Exit status for an error: 1 configuration, 2 data, 3 numeric.
pub fn exit_code(err: &LlcError) -> i32 {
    match err {
        LlcError::Io { .. } | LlcError::Format { .. } => 2,
        LlcError::Numeric { .. } | LlcError::Diagnostic(_) => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = build_manifest(cli.command).and_then(|m| {
        m.write(&m.out_dir)?;
        execute(&m)
    });
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
