//! From two repository snapshots to model inputs: merged graphs of the
//! changed files, attached callees, slicing, and the change-line sequence.

use std::path::{Path, PathBuf};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfrontend::tokenize;
use crate::cpg::build_file_cpgs;
use crate::document::canonicalize;
use crate::encoder::{extract_change_lines, MarkedToken, Marker};
use crate::error::{Error, Result};
use crate::graph::Version;
use crate::ingest::{load_snapshot, resolve_change_set, RepoSnapshot, Side};
use crate::merge::{merge_file, MergeCpg};
use crate::repodep::{attach_dependencies, parse_repository, resolve_call_sites, RepoCpg, RepoPair};
use crate::slice::{finalize_repocpg, SliceConfig};
use crate::trainer::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub slice: SliceConfig,
    /// Levels of callees to attach; 1 attaches direct callees only.
    pub dep_depth: usize,
    pub max_tokens: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            slice: SliceConfig::default(),
            dep_depth: 1,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraphs {
    /// Merged graphs of the changed files with callees attached.
    pub unsliced: RepoCpg,
    /// The sliced graph fed to the model, in canonical node order.
    pub graph: RepoCpg,
    pub seq: Vec<MarkedToken>,
}

pub fn build_patch(
    pre: &RepoSnapshot,
    post: &RepoSnapshot,
    changed: Option<&[String]>,
    cfg: &BuildConfig,
) -> Result<PatchGraphs> {
    if cfg.slice.hops == 0 {
        return Err(Error::Config("slice hops must be at least 1".into()));
    }
    let cs = resolve_change_set(pre, post, changed)?;
    let seq = extract_change_lines(&cs, cfg.max_tokens);
    let parsed_pre = parse_repository(pre);
    let parsed_post = parse_repository(post);

    let mut base = MergeCpg::default();
    for change in &cs.changes {
        let cpgs = |repo: &crate::repodep::ParsedRepo| {
            repo.asts
                .get(&change.path)
                .map(build_file_cpgs)
                .unwrap_or_default()
        };
        let m = merge_file(&cpgs(&parsed_pre), &cpgs(&parsed_post), change.line_map());
        base.graph.append(&m.graph);
        base.origin.extend(m.origin);
    }
    let attached = vec![false; base.graph.nodes.len()];
    let sites = resolve_call_sites(&base.graph, &attached, &parsed_pre.index, &parsed_post.index);
    debug!(
        "{} changed files, {} resolved call sites",
        cs.changes.len(),
        sites.len()
    );
    let pair = RepoPair {
        pre_snap: pre,
        post_snap: post,
        pre: &parsed_pre,
        post: &parsed_post,
    };
    let unsliced = attach_dependencies(base, sites, &pair, cfg.dep_depth);
    // canonical order, so a graph read back from its document encodes to
    // the same floating-point values
    let graph = canonicalize(&finalize_repocpg(&unsliced, &cfg.slice));
    Ok(PatchGraphs { unsliced, graph, seq })
}

/// Loads both snapshots from disk and builds the patch graphs.
pub fn build_from_dirs(
    pre_root: &Path,
    post_root: &Path,
    changed: Option<&[String]>,
    cfg: &BuildConfig,
) -> Result<PatchGraphs> {
    let pre = load_snapshot(pre_root, Side::Pre)?;
    let post = load_snapshot(post_root, Side::Post)?;
    build_patch(&pre, &post, changed, cfg)
}

/// The change sequence recovered from a saved graph: per file, the code of
/// pre-only statements then post-only statements, each in line order.
///
/// Changed lines without a statement (braces, comments) are not in the graph,
/// so this can be shorter than the sequence `build_patch` extracts.
pub fn graph_change_tokens(g: &RepoCpg, max_tokens: usize) -> Vec<MarkedToken> {
    let mut stmts: Vec<(&str, Marker, u32, &str)> = g
        .graph
        .nodes
        .iter()
        .zip(&g.attached)
        .filter(|(n, &att)| n.stmt && !att)
        .filter_map(|(n, _)| {
            let m = match n.version {
                Some(Version::Pre) => Marker::Pre,
                Some(Version::Post) => Marker::Post,
                _ => return None,
            };
            Some((n.file.as_str(), m, n.line.unwrap_or(0), n.code.as_str()))
        })
        .collect();
    stmts.sort();
    stmts
        .into_iter()
        .flat_map(|(_, marker, _, code)| {
            tokenize(code)
                .into_iter()
                .map(move |t| MarkedToken { marker, text: t.text })
        })
        .take(max_tokens)
        .collect()
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub label: i64,
    pub pre_root: String,
    pub post_root: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changed_paths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Parses JSON lines; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed(format!("corpus line {}: {e}", i + 1)))
        })
        .collect()
}

/// Reads a corpus file; returns its records and the directory their roots
/// are relative to.
pub fn read_corpus(path: &Path) -> Result<(Vec<CorpusRecord>, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_corpus(&text)?, base))
}

/// Builds every record in parallel; results keep the input order.
pub fn build_samples(records: &[CorpusRecord], base: &Path, cfg: &BuildConfig) -> Result<Vec<Sample>> {
    records
        .par_iter()
        .map(|r| {
            crate::trainer::check_label(r.label)?;
            let built = build_from_dirs(
                &base.join(&r.pre_root),
                &base.join(&r.post_root),
                r.changed_paths.as_deref(),
                cfg,
            )?;
            Ok(Sample {
                id: r.id.clone(),
                graph: built.graph,
                seq: built.seq,
                label: r.label,
                tag: r.tag.clone(),
            })
        })
        .collect()
}
