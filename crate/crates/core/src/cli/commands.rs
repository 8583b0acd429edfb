use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::{CommandSpec, RunManifest};
use crate::diagnostics::{mad_depth_sweep, oracle_search, MadMethod};
use crate::error::{LlcError, Result};
use crate::graph::{generate_sbm, load_dataset, split_nodes, write_dataset, write_splits, DataSplit, Graph, SplitRatios};
use crate::parallel::{self, Execution};
use crate::search::{build_baseline, run_search, train_architecture, SearchConfig};
use crate::supernet::Architecture;

/// Mean and population standard deviation of per-seed test accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub seeds: Vec<u64>,
    pub test_accs: Vec<f64>,
}

impl Aggregate {
    pub fn new(seeds: Vec<u64>, test_accs: Vec<f64>) -> Self {
        let n = test_accs.len() as f64;
        let mean = test_accs.iter().sum::<f64>() / n;
        let var = test_accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_test_acc: mean,
            std_test_acc: var.sqrt(),
            seeds,
            test_accs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

/// Compact one-line rendering such as `1<-[0]:SUM 3<-[0,1]:MAX`.
pub fn describe(arch: &Architecture) -> String {
    arch.blocks
        .iter()
        .map(|b| {
            let preds: Vec<String> = b.predecessors.iter().map(|p| p.to_string()).collect();
            format!("{}<-[{}]:{}", b.id, preds.join(","), b.fusion)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(&path, text).map_err(|e| LlcError::io(path, e))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| LlcError::io(path, e))
}

pub(crate) fn load(cfg: &RunConfig) -> Result<(Graph, DataSplit)> {
    let dir = cfg
        .data
        .as_ref()
        .ok_or_else(|| LlcError::Config("no dataset given (use --data DIR)".into()))?;
    let (graph, split) = load_dataset(dir)?;
    let graph = if cfg.normalize_features {
        graph.row_normalized()
    } else {
        graph
    };
    let split = match split {
        Some(s) => s,
        None => split_nodes(&graph, SplitRatios::default(), cfg.split_seed)?,
    };
    Ok((graph, split))
}

fn with_seed(cfg: &SearchConfig, seed: u64) -> SearchConfig {
    SearchConfig {
        seed,
        ..cfg.clone()
    }
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Runs the command recorded in `m`, writing artifacts into `m.out_dir`.
/// Returns the text printed on standard output.
pub fn execute(m: &RunManifest) -> Result<String> {
    let out = &m.out_dir;
    let cfg = &m.config;
    let mut text = String::new();
    match &m.command {
        CommandSpec::GenData { sbm, with_splits } => {
            let graph = generate_sbm(sbm)?;
            write_dataset(&graph, out)?;
            if *with_splits {
                write_splits(&split_nodes(&graph, SplitRatios::default(), cfg.split_seed)?, out)?;
            }
            writeln!(
                text,
                "wrote {} nodes, {} edges, {} classes to {}",
                graph.n_nodes(),
                graph.edges().len(),
                graph.n_classes(),
                out.display()
            )
            .ok();
        }
        CommandSpec::Search => {
            let (graph, split) = load(cfg)?;
            let runs = parallel::map(Execution::Parallel, &m.seeds, |&seed| {
                let (arch, report) = run_search(&graph, &split, &with_seed(&cfg.search, seed))?;
                write_text(out, &format!("architecture_{seed}.json"), &arch.to_json())?;
                write_text(out, &format!("search_report_{seed}.json"), &report.to_json())?;
                Ok(report)
            });
            for r in first_error(runs)? {
                let val = r.epochs.last().map_or(f64::NAN, |e| e.val_acc);
                writeln!(
                    text,
                    "seed {}: val_acc {:.4} test_acc {:.4} arch {}",
                    r.seed,
                    val,
                    r.test_acc,
                    describe(&r.architecture)
                )
                .ok();
            }
        }
        CommandSpec::Train {
            architecture,
            baseline,
        } => {
            let (graph, split) = load(cfg)?;
            let arch = match (architecture, baseline) {
                (Some(a), _) => a.clone(),
                (None, Some(b)) => build_baseline(b, &cfg.search.supernet_spec(&graph))?,
                (None, None) => return Err(LlcError::Config("train needs --arch or --baseline".into())),
            };
            let runs = parallel::map(Execution::Parallel, &m.seeds, |&seed| {
                let model = train_architecture(&arch, &graph, &split, &with_seed(&cfg.search, seed))?;
                write_json(out, &format!("metrics_{seed}.json"), &model.metrics)?;
                Ok(model.metrics)
            });
            let metrics = first_error(runs)?;
            for mt in &metrics {
                writeln!(text, "seed {}: best epoch {} val_acc {:.4} test_acc {:.4}", mt.seed, mt.best_epoch, mt.best_val_acc, mt.test_acc).ok();
            }
            let agg = Aggregate::new(m.seeds.clone(), metrics.iter().map(|mt| mt.test_acc).collect());
            write_json(out, "aggregate.json", &agg)?;
            writeln!(
                text,
                "test accuracy {:.4} ({:.4}) over {} seeds",
                agg.mean_test_acc,
                agg.std_test_acc,
                metrics.len()
            )
            .ok();
        }
        CommandSpec::Eval {
            architecture,
            baselines,
        } => {
            let (graph, split) = load(cfg)?;
            let spec = cfg.search.supernet_spec(&graph);
            let mut rows = Vec::new();
            let llc = parallel::map(Execution::Parallel, &m.seeds, |&seed| {
                let scfg = with_seed(&cfg.search, seed);
                let arch = match architecture {
                    Some(a) => a.clone(),
                    None => {
                        let arch = run_search(&graph, &split, &scfg)?.0;
                        write_text(out, &format!("architecture_{seed}.json"), &arch.to_json())?;
                        arch
                    }
                };
                Ok(train_architecture(&arch, &graph, &split, &scfg)?.metrics.test_acc)
            });
            rows.push(EvalRow {
                method: "llc".into(),
                aggregate: Aggregate::new(m.seeds.clone(), first_error(llc)?),
            });
            for name in baselines {
                let arch = build_baseline(name, &spec)?;
                let accs = parallel::map(Execution::Parallel, &m.seeds, |&seed| {
                    Ok(train_architecture(&arch, &graph, &split, &with_seed(&cfg.search, seed))?.metrics.test_acc)
                });
                rows.push(EvalRow {
                    method: name.clone(),
                    aggregate: Aggregate::new(m.seeds.clone(), first_error(accs)?),
                });
            }
            write_json(out, "eval.json", &rows)?;
            writeln!(text, "{:<12} {:>10} {:>10}", "method", "mean", "std").ok();
            for r in &rows {
                writeln!(text, "{:<12} {:>10.4} {:>10.4}", r.method, r.aggregate.mean_test_acc, r.aggregate.std_test_acc).ok();
            }
        }
        CommandSpec::Mad { depths, method } => {
            let (graph, split) = load(cfg)?;
            let method: MadMethod = method.parse()?;
            let runs = parallel::map(Execution::Parallel, &m.seeds, |&seed| {
                let report = mad_depth_sweep(&graph, &split, method, depths, &with_seed(&cfg.search, seed))?;
                write_text(out, &format!("mad_{seed}.json"), &report.to_json())?;
                write_text(out, &format!("mad_{seed}.csv"), &report.to_csv())?;
                Ok(report)
            });
            for r in first_error(runs)? {
                for row in &r.rows {
                    writeln!(text, "seed {} depth {}: accuracy {:.4} mad {:.4}", r.seed, row.depth, row.accuracy, row.mad).ok();
                }
            }
        }
        CommandSpec::Oracle { cap } => {
            let (graph, split) = load(cfg)?;
            let scfg = with_seed(&cfg.search, m.seeds[0]);
            let spec = scfg.supernet_spec(&graph);
            let result = oracle_search(&spec, &graph, &split, &scfg, *cap, Execution::Parallel)?;
            write_text(out, "oracle.json", &result.to_json())?;
            writeln!(text, "enumerated {} architectures", result.total).ok();
            for (rank, e) in result.ranking.iter().take(5).enumerate() {
                writeln!(
                    text,
                    "#{} val_acc {:.4} test_acc {:.4} arch {}",
                    rank + 1,
                    e.val_acc,
                    e.test_acc,
                    describe(&e.architecture)
                )
                .ok();
            }
        }
    }
    Ok(text)
}
