//! JSON graph documents and DOT export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CpgEdge, CpgNode, EdgeType, Graph, NodeKind, Version};
use crate::repodep::RepoCpg;
use crate::slice::SliceConfig;

pub const GRAPH_FORMAT: &str = "repocpg-1";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMeta {
    pub patch_id: String,
    pub pre_root: String,
    pub post_root: String,
    pub slice: SliceConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub kind: String,
    pub code: String,
    pub line: Option<u32>,
    pub file: String,
    pub function: String,
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub etype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub version: Option<Version>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub format_version: String,
    pub meta: GraphMeta,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

/// Position of a node within its function: `Entry` first, statements and
/// tokens by line, `Exit` last.
fn rank(n: &CpgNode) -> (u8, u32, usize) {
    match n.kind {
        NodeKind::Entry => (0, 0, 0),
        NodeKind::Exit => (2, 0, 0),
        k => (1, n.line.unwrap_or(0), k.index()),
    }
}

/// Reorders nodes by (file, function, position) with a stable sort and
/// edges lexicographically, so equal graphs print identically.
pub fn canonicalize(g: &RepoCpg) -> RepoCpg {
    let mut order: Vec<usize> = (0..g.graph.nodes.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&g.graph.nodes[a], &g.graph.nodes[b]);
        (&x.file, &x.function, rank(x)).cmp(&(&y.file, &y.function, rank(y)))
    });
    let mut new_id = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }
    let nodes = order.iter().map(|&i| g.graph.nodes[i].clone()).collect();
    let attached = order.iter().map(|&i| g.attached[i]).collect();
    let mut edges: Vec<CpgEdge> = g
        .graph
        .edges
        .iter()
        .map(|e| CpgEdge {
            src: new_id[e.src],
            dst: new_id[e.dst],
            ..e.clone()
        })
        .collect();
    edges.sort();
    edges.dedup();
    RepoCpg {
        graph: Graph { nodes, edges },
        attached,
    }
}

pub fn to_document(g: &RepoCpg, meta: GraphMeta) -> GraphDocument {
    let c = canonicalize(g);
    GraphDocument {
        format_version: GRAPH_FORMAT.into(),
        meta,
        nodes: c
            .graph
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeRecord {
                id,
                kind: n.kind.name().into(),
                code: n.code.clone(),
                line: n.line,
                file: n.file.clone(),
                function: n.function.clone(),
                version: n.version,
            })
            .collect(),
        edges: c
            .graph
            .edges
            .iter()
            .map(|e| EdgeRecord {
                src: e.src,
                dst: e.dst,
                etype: e.etype.name().into(),
                label: e.label.clone(),
                version: e.version,
            })
            .collect(),
    }
}

pub fn serialize_graph(g: &RepoCpg, meta: GraphMeta) -> String {
    let mut s = serde_json::to_string_pretty(&to_document(g, meta)).expect("document serializes");
    s.push('\n');
    s
}

/// Rebuilds the graph; statement and attachment flags are recovered from
/// the edge structure.
pub fn from_document(doc: GraphDocument) -> Result<(RepoCpg, GraphMeta)> {
    if doc.format_version != GRAPH_FORMAT {
        return Err(Error::FormatVersion {
            expected: GRAPH_FORMAT.into(),
            found: doc.format_version,
        });
    }
    let mut slot = vec![None; doc.nodes.len()];
    let mut g = Graph::default();
    for (i, r) in doc.nodes.iter().enumerate() {
        if r.id >= slot.len() || slot[r.id].is_some() {
            return Err(Error::Malformed(format!(
                "node id {} is duplicated or out of range",
                r.id
            )));
        }
        slot[r.id] = Some(i);
        let kind = NodeKind::from_name(&r.kind)
            .ok_or_else(|| Error::Malformed(format!("unknown node kind `{}`", r.kind)))?;
        g.add_node(CpgNode {
            kind,
            code: r.code.clone(),
            line: r.line,
            file: r.file.clone(),
            function: r.function.clone(),
            version: r.version,
            stmt: false,
        });
    }
    for r in &doc.edges {
        let end = |id: usize| {
            slot.get(id)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Malformed(format!("edge endpoint {id} is not a node")))
        };
        let (src, dst) = (end(r.src)?, end(r.dst)?);
        let etype = EdgeType::from_name(&r.etype)
            .ok_or_else(|| Error::Malformed(format!("unknown edge type `{}`", r.etype)))?;
        if src == dst && etype != EdgeType::Cfg {
            return Err(Error::Malformed(format!(
                "{} self-edge on node {}",
                r.etype, r.src
            )));
        }
        g.edges.push(CpgEdge {
            src,
            dst,
            etype,
            label: r.label.clone(),
            version: r.version,
        });
    }
    g.infer_statements();
    Ok((RepoCpg::from_graph(g), doc.meta))
}

pub fn parse_graph(text: &str) -> Result<(RepoCpg, GraphMeta)> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let found = probe.get("format_version").and_then(|v| v.as_str()).unwrap_or("");
    if found != GRAPH_FORMAT {
        return Err(Error::FormatVersion {
            expected: GRAPH_FORMAT.into(),
            found: found.into(),
        });
    }
    from_document(serde_json::from_value(probe)?)
}

fn version_color(v: Option<Version>) -> &'static str {
    match v {
        Some(Version::Pre) => "red",
        Some(Version::Post) => "green",
        _ => "gray",
    }
}

fn edge_style(t: EdgeType) -> &'static str {
    match t {
        EdgeType::Ast => "dotted",
        EdgeType::Cfg => "solid",
        EdgeType::Cdg => "bold",
        EdgeType::Ddg => "tapered",
        EdgeType::Call => "dashed",
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' | '\\' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Nodes colored by version (pre red, post green, common gray), edges
/// styled by type (CALL dashed, AST dotted, CDG bold).
pub fn export_dot(g: &RepoCpg) -> String {
    if g.graph.is_empty() {
        return "digraph repocpg {}".into();
    }
    let c = canonicalize(g);
    let mut out = String::from("digraph repocpg {\n");
    for (i, n) in c.graph.nodes.iter().enumerate() {
        let label = match n.kind {
            NodeKind::Entry | NodeKind::Exit => format!("{} {}", n.kind.name(), n.function),
            _ => n.code.clone(),
        };
        let shape = if n.stmt || n.kind.is_synthetic() {
            "box"
        } else {
            "ellipse"
        };
        let _ = writeln!(
            out,
            "  n{i} [label={}, shape={shape}, color={}];",
            quote(&label),
            version_color(n.version)
        );
    }
    for e in &c.graph.edges {
        let label = match &e.label {
            Some(l) => format!("{} {l}", e.etype.name()),
            None => e.etype.name().to_string(),
        };
        let _ = writeln!(
            out,
            "  n{} -> n{} [label={}, style={}, color={}];",
            e.src,
            e.dst,
            quote(&label),
            edge_style(e.etype),
            version_color(e.version)
        );
    }
    out.push('}');
    out
}
