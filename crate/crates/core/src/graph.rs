//! Node/edge storage shared by per-function, merged and repository graphs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cfrontend::AstKind;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Version {
    Pre,
    Post,
    Common,
}

impl Version {
    pub fn name(self) -> &'static str {
        match self {
            Version::Pre => "pre",
            Version::Post => "post",
            Version::Common => "common",
        }
    }

    pub fn from_name(s: &str) -> Option<Version> {
        [Version::Pre, Version::Post, Version::Common]
            .into_iter()
            .find(|v| v.name() == s)
    }

    pub fn pre_side(self) -> bool {
        matches!(self, Version::Pre | Version::Common)
    }

    pub fn post_side(self) -> bool {
        matches!(self, Version::Post | Version::Common)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Entry,
    Exit,
    Ast(AstKind),
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Entry => "Entry",
            NodeKind::Exit => "Exit",
            NodeKind::Ast(k) => k.name(),
        }
    }

    pub fn from_name(s: &str) -> Option<NodeKind> {
        match s {
            "Entry" => Some(NodeKind::Entry),
            "Exit" => Some(NodeKind::Exit),
            _ => AstKind::from_name(s).map(NodeKind::Ast),
        }
    }

    pub fn is_synthetic(self) -> bool {
        matches!(self, NodeKind::Entry | NodeKind::Exit)
    }

    /// Dense index used for kind embeddings.
    pub fn index(self) -> usize {
        match self {
            NodeKind::Entry => 0,
            NodeKind::Exit => 1,
            NodeKind::Ast(k) => 2 + AstKind::ALL.iter().position(|&a| a == k).unwrap_or(0),
        }
    }

    pub const COUNT: usize = 2 + AstKind::ALL.len();
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EdgeType {
    Ast,
    Cfg,
    Cdg,
    Ddg,
    Call,
}

impl EdgeType {
    pub const ALL: [EdgeType; 5] = [
        EdgeType::Ast,
        EdgeType::Cfg,
        EdgeType::Cdg,
        EdgeType::Ddg,
        EdgeType::Call,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Ast => "AST",
            EdgeType::Cfg => "CFG",
            EdgeType::Cdg => "CDG",
            EdgeType::Ddg => "DDG",
            EdgeType::Call => "CALL",
        }
    }

    pub fn from_name(s: &str) -> Option<EdgeType> {
        EdgeType::ALL.into_iter().find(|e| e.name() == s)
    }

    pub fn is_dependence(self) -> bool {
        matches!(self, EdgeType::Cdg | EdgeType::Ddg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CpgNode {
    pub kind: NodeKind,
    /// Normalized source text; empty for `Entry`/`Exit`.
    pub code: String,
    pub line: Option<u32>,
    pub file: String,
    pub function: String,
    pub version: Option<Version>,
    /// Statement node (as opposed to a token node of a statement's AST).
    pub stmt: bool,
}

impl CpgNode {
    /// Callee name of a `Call` node, read from its code.
    pub fn callee(&self) -> Option<&str> {
        if self.kind != NodeKind::Ast(AstKind::Call) {
            return None;
        }
        let name = self.code.split(" (").next()?;
        let ident = !name.is_empty()
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            && !name.starts_with(|c: char| c.is_ascii_digit());
        ident.then_some(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CpgEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub etype: EdgeType,
    /// Variable name on DDG edges, callee name on CALL edges.
    pub label: Option<String>,
    pub version: Option<Version>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    pub nodes: Vec<CpgNode>,
    pub edges: Vec<CpgEdge>,
}

impl Graph {
    pub fn add_node(&mut self, node: CpgNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn add_edge(
        &mut self,
        src: NodeId,
        dst: NodeId,
        etype: EdgeType,
        label: Option<String>,
        version: Option<Version>,
    ) {
        // an empty loop body is the only source of a self-edge
        debug_assert!(
            src != dst || etype == EdgeType::Cfg,
            "self-edge of type {etype:?}"
        );
        self.edges.push(CpgEdge {
            src,
            dst,
            etype,
            label,
            version,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges_of(&self, etype: EdgeType) -> impl Iterator<Item = &CpgEdge> {
        self.edges.iter().filter(move |e| e.etype == etype)
    }

    /// Marks statement nodes as those with no incoming AST edge.
    pub fn infer_statements(&mut self) {
        let mut has_parent = vec![false; self.nodes.len()];
        for e in self.edges_of(EdgeType::Ast) {
            has_parent[e.dst] = true;
        }
        for (n, p) in self.nodes.iter_mut().zip(has_parent) {
            n.stmt = !p && !n.kind.is_synthetic();
        }
    }

    /// Subgraph induced by `keep`, with ids compacted in ascending order.
    /// Returns the graph and the old→new id map.
    pub fn induced(&self, keep: &[bool]) -> (Graph, Vec<Option<NodeId>>) {
        let mut map = vec![None; self.nodes.len()];
        let mut g = Graph::default();
        for (i, n) in self.nodes.iter().enumerate() {
            if keep[i] {
                map[i] = Some(g.add_node(n.clone()));
            }
        }
        for e in &self.edges {
            if let (Some(s), Some(d)) = (map[e.src], map[e.dst]) {
                g.edges.push(CpgEdge {
                    src: s,
                    dst: d,
                    ..e.clone()
                });
            }
        }
        (g, map)
    }

    /// Appends `other`, returning the offset added to its node ids.
    pub fn append(&mut self, other: &Graph) -> NodeId {
        let off = self.nodes.len();
        self.nodes.extend(other.nodes.iter().cloned());
        self.edges.extend(other.edges.iter().map(|e| CpgEdge {
            src: e.src + off,
            dst: e.dst + off,
            ..e.clone()
        }));
        off
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in AstKind::ALL
            .map(NodeKind::Ast)
            .into_iter()
            .chain([NodeKind::Entry, NodeKind::Exit])
        {
            assert_eq!(NodeKind::from_name(k.name()), Some(k));
            assert!(k.index() < NodeKind::COUNT);
        }
        for e in EdgeType::ALL {
            assert_eq!(EdgeType::from_name(e.name()), Some(e));
        }
        for v in [Version::Pre, Version::Post, Version::Common] {
            assert_eq!(Version::from_name(v.name()), Some(v));
        }
    }

    #[test]
    fn callee_from_code() {
        let mut n = CpgNode {
            kind: NodeKind::Ast(AstKind::Call),
            code: "get_refs ( & key )".into(),
            line: Some(1),
            file: "a.c".into(),
            function: "f".into(),
            version: None,
            stmt: false,
        };
        assert_eq!(n.callee(), Some("get_refs"));
        n.code = "s -> cb ( x )".into();
        assert_eq!(n.callee(), None);
    }
}
