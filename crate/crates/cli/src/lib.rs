//! The `repospd` command line: graph construction, training, prediction and
//! evaluation over JSON files.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 when inputs cannot be
//! read or processed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use repospd_core::document::{export_dot, parse_graph, serialize_graph, GraphMeta};
use repospd_core::ingest::{load_snapshot, read_changed_paths, Side};
use repospd_core::pipeline::{build_from_dirs, build_samples, graph_change_tokens, read_corpus, BuildConfig};
use repospd_core::repodep::{index_repository, index_to_json};
use repospd_core::slice::SliceConfig;
use repospd_core::trainer::{
    checkpoint_from_json, checkpoint_to_json, classify, evaluate, split_811, train, Prepared, Sample,
    TrainConfig,
};

mod selftest;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "repospd",
    version,
    about = "Repository-level security patch detection"
)]
struct Cli {
    /// Overrides the seed of `train` and of the `selftest` generators; the
    /// other commands are deterministic without one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index the function definitions and call sites of one snapshot.
    Index {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the sliced graph of one patch.
    Build {
        #[command(flatten)]
        patch: PatchArgs,
        #[command(flatten)]
        slice: SliceArgs,
        /// Levels of callees to attach.
        #[arg(long, default_value_t = 1)]
        dep_depth: usize,
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a Graphviz rendering.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Train on a corpus split 8:1:1 and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON training configuration; absent fields take their defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one patch, from a saved graph or from two snapshots.
    #[command(group = clap::ArgGroup::new("input").required(true).args(["graph", "pre"]))]
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, conflicts_with_all = ["pre", "post", "changed"])]
        graph: Option<PathBuf>,
        #[arg(long, requires = "post")]
        pre: Option<PathBuf>,
        #[arg(long, requires = "pre")]
        post: Option<PathBuf>,
        #[arg(long)]
        changed: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on every record of a corpus.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Add metrics per record tag.
        #[arg(long)]
        by_tag: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check graph construction against brute-force oracles on random inputs.
    Selftest {
        /// Random cases per suite.
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

#[derive(Debug, Args)]
struct PatchArgs {
    #[arg(long)]
    pre: PathBuf,
    #[arg(long)]
    post: PathBuf,
    /// File listing the changed paths, one per line; defaults to every file
    /// that differs.
    #[arg(long)]
    changed: Option<PathBuf>,
    /// Patch id recorded in the graph document.
    #[arg(long, default_value = "")]
    id: String,
}

#[derive(Debug, Args)]
struct SliceArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    slice_hops: u64,
    #[arg(long)]
    no_ast_subtrees: bool,
}

impl SliceArgs {
    fn config(&self) -> SliceConfig {
        SliceConfig {
            hops: self.slice_hops as usize,
            include_ast_subtrees: !self.no_ast_subtrees,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("REPOSPD_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn changed_paths(file: Option<&Path>) -> Result<Option<Vec<String>>> {
    Ok(file.map(read_changed_paths).transpose()?)
}

fn load_checkpoint(path: &Path) -> Result<(repospd_core::encoder::Params, TrainConfig)> {
    checkpoint_from_json(&read(path)?).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Graphs for a checkpoint are built with the slicing and sequence length it
/// was trained with.
fn build_config_of(cfg: &TrainConfig) -> BuildConfig {
    BuildConfig {
        slice: cfg.slice,
        max_tokens: cfg.model.max_tokens,
        ..BuildConfig::default()
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { repo, out } => {
            let snap = load_snapshot(&repo, Side::Pre)?;
            let (index, calls) = index_repository(&snap);
            info!("{} functions, {} call sites", index.len(), calls.edges.len());
            let mut text = index_to_json(&index, &calls);
            text.push('\n');
            write(&out, &text)
        }
        Command::Build {
            patch,
            slice,
            dep_depth,
            max_tokens,
            out,
            dot,
        } => {
            let cfg = BuildConfig {
                slice: slice.config(),
                dep_depth,
                max_tokens,
            };
            let changed = changed_paths(patch.changed.as_deref())?;
            let built = build_from_dirs(&patch.pre, &patch.post, changed.as_deref(), &cfg)?;
            let meta = GraphMeta {
                patch_id: patch.id,
                pre_root: patch.pre.display().to_string(),
                post_root: patch.post.display().to_string(),
                slice: cfg.slice,
            };
            info!(
                "{} nodes, {} edges after slicing",
                built.graph.graph.nodes.len(),
                built.graph.graph.edges.len()
            );
            write(&out, &serialize_graph(&built.graph, meta))?;
            if let Some(dot) = dot {
                let mut text = export_dot(&built.graph);
                text.push('\n');
                write(&dot, &text)?;
            }
            Ok(())
        }
        Command::Train { corpus, config, out } => {
            let mut cfg: TrainConfig = serde_json::from_str(&read(&config)?)
                .with_context(|| format!("parsing {}", config.display()))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let (records, base) = read_corpus(&corpus)?;
            if records.is_empty() {
                bail!("corpus {} has no records", corpus.display());
            }
            let samples = build_samples(&records, &base, &build_config_of(&cfg))?;
            let prepared = samples
                .iter()
                .map(|s| s.prepare(&cfg.model))
                .collect::<repospd_core::Result<Vec<Prepared>>>()?;
            let labels: Vec<usize> = prepared.iter().map(|x| x.label).collect();
            let (tr, va, te) = split_811(&labels, cfg.seed);
            let pick = |ids: &[usize]| ids.iter().map(|&i| prepared[i].clone()).collect::<Vec<_>>();
            let (tr, va, te) = (pick(&tr), pick(&va), pick(&te));
            info!("split {} / {} / {}", tr.len(), va.len(), te.len());
            let outcome = train(&tr, &va, &cfg)?;
            write(&out, &checkpoint_to_json(&outcome.params, &cfg))?;
            let score = |part: &[Prepared]| -> Result<Option<serde_json::Value>> {
                if part.is_empty() {
                    return Ok(None);
                }
                Ok(Some(serde_json::to_value(evaluate(
                    &outcome.params,
                    part,
                    false,
                )?)?))
            };
            let summary = json!({
                "split": { "train": tr.len(), "valid": va.len(), "test": te.len() },
                "history": outcome.history,
                "selected_epoch": outcome.selected_epoch,
                "train": score(&tr)?,
                "valid": score(&va)?,
                "test": score(&te)?,
            });
            emit(None, &pretty(&summary))
        }
        Command::Predict {
            ckpt,
            graph,
            pre,
            post,
            changed,
            id,
            out,
        } => {
            let (params, cfg) = load_checkpoint(&ckpt)?;
            let sample = match (graph, pre, post) {
                (Some(path), _, _) => {
                    let (g, meta) = parse_graph(&read(&path)?)
                        .with_context(|| format!("parsing graph {}", path.display()))?;
                    let seq = graph_change_tokens(&g, cfg.model.max_tokens);
                    Sample {
                        id: id.unwrap_or(meta.patch_id),
                        graph: g,
                        seq,
                        label: 0,
                        tag: None,
                    }
                }
                (None, Some(pre), Some(post)) => {
                    let changed = changed_paths(changed.as_deref())?;
                    let built = build_from_dirs(&pre, &post, changed.as_deref(), &build_config_of(&cfg))?;
                    Sample {
                        id: id.unwrap_or_default(),
                        graph: built.graph,
                        seq: built.seq,
                        label: 0,
                        tag: None,
                    }
                }
                _ => unreachable!("clap requires --graph or both --pre and --post"),
            };
            let pred = classify(&params, &sample.prepare(&cfg.model)?)?;
            let result = json!({ "id": sample.id, "p": pred.p, "class": pred.class });
            emit(out.as_deref(), &pretty(&result))
        }
        Command::Eval {
            ckpt,
            corpus,
            by_tag,
            out,
        } => {
            let (params, cfg) = load_checkpoint(&ckpt)?;
            let (records, base) = read_corpus(&corpus)?;
            let samples = build_samples(&records, &base, &build_config_of(&cfg))?;
            let prepared = samples
                .iter()
                .map(|s| s.prepare(&cfg.model))
                .collect::<repospd_core::Result<Vec<Prepared>>>()?;
            let report = evaluate(&params, &prepared, by_tag)?;
            emit(out.as_deref(), &pretty(&report))
        }
        Command::Selftest { cases } => {
            let seed = cli.seed.unwrap_or(0);
            let mut failed = 0;
            for (name, outcome) in selftest::run_all(seed, cases) {
                match outcome {
                    Ok(detail) => println!("ok    {name}: {detail}"),
                    Err(why) => {
                        failed += 1;
                        println!("FAIL  {name}: {why}");
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} self-test suites failed");
            }
            Ok(())
        }
    }
}
