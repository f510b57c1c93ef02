//! Repository-wide function index, call graph, and attachment of callee
//! graphs to the call sites of changed code.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfrontend::{collect_functions, parse_source, Ast, AstKind};
use crate::cpg::build_cpg;
use crate::error::{Error, Result};
use crate::graph::{CpgEdge, EdgeType, Graph, NodeId, NodeKind, Version};
use crate::ingest::{diff_lines, RepoSnapshot, Side};
use crate::merge::{merge_file, MergeCpg};

pub const INDEX_FORMAT: &str = "repospd-index-1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionLocation {
    pub file: String,
    pub name: String,
    /// Position among same-named functions in the file.
    pub ordinal: usize,
    pub params: Vec<String>,
    pub line_span: (u32, u32),
}

impl FunctionLocation {
    fn key(&self) -> (String, String, usize) {
        (self.file.clone(), self.name.clone(), self.ordinal)
    }
}

/// Definitions by name; each list is sorted by file path, then line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionIndex {
    pub by_name: BTreeMap<String, Vec<FunctionLocation>>,
}

fn parent_dir(path: &str) -> &str {
    Path::new(path).parent().and_then(Path::to_str).unwrap_or("")
}

impl FunctionIndex {
    /// Resolves a call from `from_file`: same file first, then same
    /// directory, then path order.
    pub fn resolve(&self, name: &str, from_file: &str) -> Option<&FunctionLocation> {
        let cands = self.by_name.get(name)?;
        let rank = |l: &FunctionLocation| {
            if l.file == from_file {
                0
            } else if parent_dir(&l.file) == parent_dir(from_file) {
                1
            } else {
                2
            }
        };
        let best = cands
            .iter()
            .min_by_key(|l| (rank(l), l.file.as_str(), l.line_span.0))?;
        let tied = cands.iter().filter(|l| rank(l) == rank(best)).count();
        if tied > 1 {
            debug!(
                "`{name}` from {from_file}: {tied} candidates, using {}",
                best.file
            );
        }
        Some(best)
    }

    pub fn len(&self) -> usize {
        self.by_name.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEdge {
    /// `file:function` of the caller.
    pub caller: String,
    pub callee: String,
    /// AST node id of the call in the caller's file.
    pub site: usize,
    pub resolved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub edges: Vec<CallEdge>,
}

/// Every file of a snapshot parsed, with its index and call graph.
#[derive(Debug, Clone)]
pub struct ParsedRepo {
    pub side: Side,
    pub asts: BTreeMap<String, Ast>,
    pub index: FunctionIndex,
    pub calls: CallGraph,
}

pub fn parse_repository(snap: &RepoSnapshot) -> ParsedRepo {
    let asts: BTreeMap<String, Ast> = snap
        .files
        .par_iter()
        .map(|(path, lines)| (path.clone(), parse_source(&lines.join("\n"), path)))
        .collect();
    let mut index = FunctionIndex::default();
    for (path, ast) in &asts {
        let mut ordinals: HashMap<String, usize> = HashMap::new();
        for f in collect_functions(ast) {
            let ord = ordinals.entry(f.name.clone()).or_default();
            index
                .by_name
                .entry(f.name.clone())
                .or_default()
                .push(FunctionLocation {
                    file: path.clone(),
                    name: f.name.clone(),
                    ordinal: *ord,
                    params: f.params.clone(),
                    line_span: f.line_span,
                });
            *ord += 1;
        }
    }
    let mut calls = CallGraph::default();
    for (path, ast) in &asts {
        for f in collect_functions(ast) {
            let mut stack = vec![f.body];
            let mut sites = Vec::new();
            while let Some(id) = stack.pop() {
                let n = ast.node(id);
                if n.kind == AstKind::Call && !n.op.is_empty() {
                    sites.push(id);
                }
                stack.extend(n.children.iter().copied());
            }
            sites.sort_unstable();
            for site in sites {
                let callee = ast.node(site).op.clone();
                calls.edges.push(CallEdge {
                    caller: format!("{path}:{}", f.name),
                    resolved: index.by_name.contains_key(&callee),
                    callee,
                    site,
                });
            }
        }
    }
    ParsedRepo {
        side: snap.side,
        asts,
        index,
        calls,
    }
}

pub fn index_repository(snap: &RepoSnapshot) -> (FunctionIndex, CallGraph) {
    let p = parse_repository(snap);
    (p.index, p.calls)
}

#[derive(Serialize, Deserialize)]
struct IndexDocument {
    format_version: String,
    functions: FunctionIndex,
    calls: CallGraph,
}

pub fn index_to_json(index: &FunctionIndex, calls: &CallGraph) -> String {
    let doc = IndexDocument {
        format_version: INDEX_FORMAT.to_string(),
        functions: index.clone(),
        calls: calls.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("index serializes")
}

pub fn index_from_json(text: &str) -> Result<(FunctionIndex, CallGraph)> {
    let doc: IndexDocument = serde_json::from_str(text)?;
    if doc.format_version != INDEX_FORMAT {
        return Err(Error::FormatVersion {
            expected: INDEX_FORMAT.to_string(),
            found: doc.format_version,
        });
    }
    Ok((doc.functions, doc.calls))
}

/// A merged graph plus attached callee graphs and the CALL edges to them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepoCpg {
    pub graph: Graph,
    /// True for nodes of attached callee graphs.
    pub attached: Vec<bool>,
}

impl RepoCpg {
    pub fn from_merge(m: MergeCpg) -> Self {
        let attached = vec![false; m.graph.nodes.len()];
        Self {
            graph: m.graph,
            attached,
        }
    }

    /// Rebuilds the attachment flags from the graph alone: attached nodes
    /// are those reachable from CALL targets without crossing CALL edges.
    pub fn from_graph(graph: Graph) -> Self {
        let n = graph.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in graph.edges.iter().filter(|e| e.etype != EdgeType::Call) {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        let mut attached = vec![false; n];
        let mut q: VecDeque<NodeId> = graph.edges_of(EdgeType::Call).map(|e| e.dst).collect();
        for &v in &q {
            attached[v] = true;
        }
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if !attached[w] {
                    attached[w] = true;
                    q.push_back(w);
                }
            }
        }
        Self { graph, attached }
    }

    pub fn call_edges(&self) -> impl Iterator<Item = &CpgEdge> {
        self.graph.edges_of(EdgeType::Call)
    }

    /// The graph without attached nodes and CALL edges.
    pub fn without_attachments(&self) -> Graph {
        let keep: Vec<bool> = self.attached.iter().map(|a| !a).collect();
        let (mut g, _) = self.graph.induced(&keep);
        g.edges.retain(|e| e.etype != EdgeType::Call);
        g
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSite {
    pub call_node: NodeId,
    pub callee: String,
    pub version: Version,
    pub pre: Option<FunctionLocation>,
    pub post: Option<FunctionLocation>,
}

/// Owning statement of every node, following AST edges down from
/// statements. Statements own themselves.
pub fn statement_owner(g: &Graph) -> Vec<Option<NodeId>> {
    let mut owner: Vec<Option<NodeId>> = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| n.stmt.then_some(i))
        .collect();
    let mut children = vec![Vec::new(); g.nodes.len()];
    for e in g.edges_of(EdgeType::Ast) {
        children[e.src].push(e.dst);
    }
    let mut stack: Vec<NodeId> = (0..g.nodes.len()).filter(|&i| g.nodes[i].stmt).collect();
    while let Some(v) = stack.pop() {
        for &c in &children[v] {
            if owner[c].is_none() {
                owner[c] = owner[v];
                stack.push(c);
            }
        }
    }
    owner
}

/// Statements that are changed, or common and one CDG/DDG edge away from a
/// changed statement. Attached nodes are ignored.
pub fn change_related_statements(g: &Graph, attached: &[bool]) -> Vec<bool> {
    let changed = |i: NodeId| {
        g.nodes[i].stmt && !attached[i] && matches!(g.nodes[i].version, Some(Version::Pre | Version::Post))
    };
    let mut related: Vec<bool> = (0..g.nodes.len()).map(changed).collect();
    for e in g.edges.iter().filter(|e| e.etype.is_dependence()) {
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            if changed(a) && g.nodes[b].stmt && !attached[b] {
                related[b] = true;
            }
        }
    }
    related
}

fn resolve_node(
    g: &Graph,
    node: NodeId,
    version: Version,
    idx_pre: &FunctionIndex,
    idx_post: &FunctionIndex,
) -> Option<ResolvedSite> {
    let n = &g.nodes[node];
    let callee = n.callee()?.to_string();
    let pre = version
        .pre_side()
        .then(|| idx_pre.resolve(&callee, &n.file).cloned())
        .flatten();
    let post = version
        .post_side()
        .then(|| idx_post.resolve(&callee, &n.file).cloned())
        .flatten();
    (pre.is_some() || post.is_some()).then_some(ResolvedSite {
        call_node: node,
        callee,
        version,
        pre,
        post,
    })
}

/// Resolves the call nodes of change-related statements: pre-side calls
/// against the pre index and post-side calls against the post index.
pub fn resolve_call_sites(
    g: &Graph,
    attached: &[bool],
    idx_pre: &FunctionIndex,
    idx_post: &FunctionIndex,
) -> Vec<ResolvedSite> {
    let related = change_related_statements(g, attached);
    let owner = statement_owner(g);
    (0..g.nodes.len())
        .filter(|&i| !attached[i] && owner[i].is_some_and(|s| related[s]))
        .filter_map(|i| {
            let version = g.nodes[i].version.unwrap_or(Version::Common);
            resolve_node(g, i, version, idx_pre, idx_post)
        })
        .collect()
}

/// Both parsed snapshots of a patch.
pub struct RepoPair<'a> {
    pub pre_snap: &'a RepoSnapshot,
    pub post_snap: &'a RepoSnapshot,
    pub pre: &'a ParsedRepo,
    pub post: &'a ParsedRepo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Projection {
    Pre,
    Post,
    Full,
}

type CalleeKey = (String, String, usize);

struct Attacher<'p, 'a> {
    pair: &'p RepoPair<'a>,
    merged: HashMap<CalleeKey, MergeCpg>,
    line_maps: HashMap<String, Vec<(u32, u32)>>,
    entries: HashMap<(CalleeKey, Projection), NodeId>,
    out: RepoCpg,
}

impl Attacher<'_, '_> {
    fn function_graph(&self, side: Side, key: &CalleeKey) -> Vec<crate::cpg::Cpg> {
        let repo = match side {
            Side::Pre => self.pair.pre,
            Side::Post => self.pair.post,
        };
        let Some(ast) = repo.asts.get(&key.0) else {
            return Vec::new();
        };
        collect_functions(ast)
            .iter()
            .filter(|f| f.name == key.1)
            .nth(key.2)
            .map(|f| vec![build_cpg(ast, f)])
            .unwrap_or_default()
    }

    fn callee_merge(&mut self, key: &CalleeKey) -> &MergeCpg {
        if !self.merged.contains_key(key) {
            let file = key.0.clone();
            let line_map = self
                .line_maps
                .entry(file.clone())
                .or_insert_with(|| {
                    let pre = self.pair.pre_snap.lines(&file).unwrap_or(&[]);
                    let post = self.pair.post_snap.lines(&file).unwrap_or(&[]);
                    diff_lines(pre, post).line_map
                })
                .clone();
            let pre = self.function_graph(Side::Pre, key);
            let post = self.function_graph(Side::Post, key);
            let m = merge_file(&pre, &post, &line_map);
            self.merged.insert(key.clone(), m);
        }
        &self.merged[key]
    }

    /// Attaches a callee once per projection; returns its entry node and,
    /// when newly added, the id range of its nodes.
    fn attach(
        &mut self,
        key: CalleeKey,
        proj: Projection,
    ) -> Option<(NodeId, Projection, Option<std::ops::Range<NodeId>>)> {
        let unchanged = self
            .callee_merge(&key)
            .graph
            .nodes
            .iter()
            .all(|n| n.version == Some(Version::Common));
        let proj = if unchanged { Projection::Full } else { proj };
        if let Some(&entry) = self.entries.get(&(key.clone(), proj)) {
            return Some((entry, proj, None));
        }
        let m = &self.merged[&key];
        let g = match proj {
            Projection::Full => m.graph.clone(),
            Projection::Pre => m.project(Side::Pre).0,
            Projection::Post => m.project(Side::Post).0,
        };
        let entry_local = g.nodes.iter().position(|n| n.kind == NodeKind::Entry)?;
        let off = self.out.graph.append(&g);
        self.out.attached.extend(std::iter::repeat_n(true, g.nodes.len()));
        let entry = off + entry_local;
        self.entries.insert((key, proj), entry);
        Some((entry, proj, Some(off..off + g.nodes.len())))
    }

    fn call_edge(&mut self, from: NodeId, to: NodeId, callee: &str, version: Version) {
        let exists =
            self.out.graph.edges.iter().any(|e| {
                e.etype == EdgeType::Call && e.src == from && e.dst == to && e.version == Some(version)
            });
        if !exists {
            self.out
                .graph
                .add_edge(from, to, EdgeType::Call, Some(callee.to_string()), Some(version));
        }
    }
}

/// Attaches the callee graph of every resolved site with a CALL edge from
/// the call node to the callee's `Entry`. Callees attach once per
/// (function, version); with `depth > 1`, calls inside attached graphs are
/// expanded too.
pub fn attach_dependencies(
    base: MergeCpg,
    sites: Vec<ResolvedSite>,
    pair: &RepoPair<'_>,
    depth: usize,
) -> RepoCpg {
    let mut at = Attacher {
        pair,
        merged: HashMap::new(),
        line_maps: HashMap::new(),
        entries: HashMap::new(),
        out: RepoCpg::from_merge(base),
    };
    let mut queue: VecDeque<(ResolvedSite, usize)> = sites.into_iter().map(|s| (s, 1)).collect();
    while let Some((site, level)) = queue.pop_front() {
        let mut plan = Vec::new();
        match (&site.pre, &site.post, site.version) {
            (Some(a), Some(b), Version::Common) if a.key() == b.key() => {
                plan.push((a.key(), Projection::Full, Version::Common));
            }
            (pre, post, _) => {
                if let Some(a) = pre {
                    plan.push((a.key(), Projection::Pre, Version::Pre));
                }
                if let Some(b) = post {
                    plan.push((b.key(), Projection::Post, Version::Post));
                }
            }
        }
        for (key, proj, edge_version) in plan {
            let Some((entry, proj, fresh)) = at.attach(key, proj) else {
                continue;
            };
            let edge_version = if proj == Projection::Full && site.version == Version::Common {
                Version::Common
            } else {
                edge_version
            };
            at.call_edge(site.call_node, entry, &site.callee, edge_version);
            if let Some(range) = fresh.filter(|_| level < depth) {
                for v in range {
                    let node_version = at.out.graph.nodes[v].version.unwrap_or(Version::Common);
                    let version = match proj {
                        Projection::Full => node_version,
                        Projection::Pre => Version::Pre,
                        Projection::Post => Version::Post,
                    };
                    if let Some(s) =
                        resolve_node(&at.out.graph, v, version, &pair.pre.index, &pair.post.index)
                    {
                        queue.push_back((s, level + 1));
                    }
                }
            }
        }
    }
    at.out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(side: Side, files: &[(&str, &str)]) -> RepoSnapshot {
        RepoSnapshot::from_sources(side, files.iter().copied())
    }

    #[test]
    fn index_and_call_graph() {
        let s = snap(
            Side::Pre,
            &[
                (
                    "a.c",
                    "int f(int x) { return g(x) + f(x - 1) + printf(\"%d\", x); }\n",
                ),
                ("lib/b.c", "int g(int y) { return y; }\nint proto(int);\n"),
            ],
        );
        let (idx, calls) = index_repository(&s);
        assert_eq!(idx.len(), 2);
        let pairs: Vec<_> = calls
            .edges
            .iter()
            .map(|e| (e.caller.as_str(), e.callee.as_str(), e.resolved))
            .collect();
        assert!(pairs.contains(&("a.c:f", "g", true)));
        assert!(pairs.contains(&("a.c:f", "f", true)));
        assert!(pairs.contains(&("a.c:f", "printf", false)));
        let (i2, c2) = index_from_json(&index_to_json(&idx, &calls)).unwrap();
        assert_eq!((i2, c2), (idx, calls));
    }

    #[test]
    fn resolution_priority() {
        let s = snap(
            Side::Pre,
            &[
                ("src/a.c", "int h() { return 1; }\nint f() { return h(); }\n"),
                ("src/b.c", "int h() { return 2; }\nint k() { return 0; }\n"),
                ("aaa/c.c", "int h() { return 3; }\nint k() { return 1; }\n"),
            ],
        );
        let (idx, _) = index_repository(&s);
        assert_eq!(idx.resolve("h", "src/a.c").unwrap().file, "src/a.c");
        // same directory beats the lexicographically smaller `aaa/c.c`
        assert_eq!(idx.resolve("h", "src/z.c").unwrap().file, "src/a.c");
        assert_eq!(idx.resolve("k", "src/z.c").unwrap().file, "src/b.c");
        assert_eq!(idx.resolve("k", "other/x.c").unwrap().file, "aaa/c.c");
        assert!(idx.resolve("printf", "src/a.c").is_none());
    }

    #[test]
    fn wrong_format_version_is_rejected() {
        let text = r#"{"format_version":"x","functions":{"by_name":{}},"calls":{"edges":[]}}"#;
        assert!(matches!(index_from_json(text), Err(Error::FormatVersion { .. })));
    }
}
