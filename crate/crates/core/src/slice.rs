//! Deleted-based and added-based slicing of a repository graph over control
//! and data dependence, and their union.

use std::collections::{BTreeSet, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::graph::{CpgEdge, EdgeType, Graph, NodeId, Version};
use crate::repodep::{statement_owner, RepoCpg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    /// Undirected CDG/DDG steps from a changed statement; at least 1.
    pub hops: usize,
    pub include_ast_subtrees: bool,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            hops: 1,
            include_ast_subtrees: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Deleted,
    Added,
}

impl Direction {
    /// The version a slice in this direction never contains.
    pub fn excluded(self) -> Version {
        match self {
            Direction::Deleted => Version::Post,
            Direction::Added => Version::Pre,
        }
    }

    pub fn seed_version(self) -> Version {
        match self {
            Direction::Deleted => Version::Pre,
            Direction::Added => Version::Post,
        }
    }

    pub fn allows(self, v: Option<Version>) -> bool {
        v != Some(self.excluded())
    }
}

/// Changed statements outside attached callee graphs: `pre` ones (deleted)
/// and `post` ones (added).
pub fn change_node_set(g: &RepoCpg) -> (BTreeSet<NodeId>, BTreeSet<NodeId>) {
    let mut deleted = BTreeSet::new();
    let mut added = BTreeSet::new();
    for (i, n) in g.graph.nodes.iter().enumerate() {
        if !n.stmt || g.attached[i] {
            continue;
        }
        match n.version {
            Some(Version::Pre) => {
                deleted.insert(i);
            }
            Some(Version::Post) => {
                added.insert(i);
            }
            _ => {}
        }
    }
    (deleted, added)
}

fn seeds(g: &RepoCpg, dir: Direction) -> BTreeSet<NodeId> {
    let (d, a) = change_node_set(g);
    match dir {
        Direction::Deleted => d,
        Direction::Added => a,
    }
}

fn edge_allowed(g: &Graph, e: &CpgEdge, dir: Direction) -> bool {
    dir.allows(e.version) && dir.allows(g.nodes[e.src].version) && dir.allows(g.nodes[e.dst].version)
}

/// Nodes retained by one slice, as a membership vector.
pub fn slice(g: &RepoCpg, dir: Direction, cfg: &SliceConfig) -> Vec<bool> {
    let graph = &g.graph;
    let n = graph.nodes.len();
    let mut keep = vec![false; n];
    let seeds = seeds(g, dir);
    if seeds.is_empty() {
        return keep;
    }

    let mut dep = vec![Vec::new(); n];
    let mut ast_children = vec![Vec::new(); n];
    let mut calls = vec![Vec::new(); n];
    let mut intra = vec![Vec::new(); n];
    for e in graph.edges.iter().filter(|e| edge_allowed(graph, e, dir)) {
        match e.etype {
            EdgeType::Cdg | EdgeType::Ddg => {
                dep[e.src].push(e.dst);
                dep[e.dst].push(e.src);
            }
            EdgeType::Call => calls[e.src].push(e.dst),
            EdgeType::Ast => ast_children[e.src].push(e.dst),
            EdgeType::Cfg => {}
        }
        if e.etype != EdgeType::Call {
            intra[e.src].push(e.dst);
            intra[e.dst].push(e.src);
        }
    }

    // Statements within `hops` dependence steps.
    let mut dist = vec![usize::MAX; n];
    let mut q = VecDeque::new();
    for &s in &seeds {
        dist[s] = 0;
        q.push_back(s);
    }
    while let Some(v) = q.pop_front() {
        keep[v] = true;
        if dist[v] == cfg.hops {
            continue;
        }
        for &w in &dep[v] {
            let ok = graph.nodes[w].stmt && !g.attached[w];
            if ok && dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }

    // Token nodes of retained statements, and callee graphs behind their
    // call nodes. Attached graphs may themselves contain CALL edges.
    let owner = statement_owner(graph);
    let mut stack: Vec<NodeId> = (0..n).filter(|&v| keep[v]).collect();
    let mut expanded = vec![false; n];
    let mut in_component = vec![false; n];
    while let Some(stmt) = stack.pop() {
        if std::mem::replace(&mut expanded[stmt], true) {
            continue;
        }
        // Token subtree in preorder with parent links, so the path to a
        // call node can be kept even without full subtrees.
        let mut parent = vec![];
        let mut walk = vec![(stmt, None)];
        while let Some((v, p)) = walk.pop() {
            parent.push((v, p));
            for &c in &ast_children[v] {
                if owner[c] == Some(stmt) {
                    walk.push((c, Some(parent.len() - 1)));
                }
            }
        }
        for i in 0..parent.len() {
            let (v, _) = parent[i];
            if cfg.include_ast_subtrees {
                keep[v] = true;
            }
            if calls[v].is_empty() {
                continue;
            }
            let mut j = Some(i);
            while let Some(k) = j {
                keep[parent[k].0] = true;
                j = parent[k].1;
            }
            for &entry in &calls[v] {
                // the whole attached component behind the entry
                let mut comp = vec![entry];
                while let Some(x) = comp.pop() {
                    if std::mem::replace(&mut in_component[x], true) {
                        continue;
                    }
                    keep[x] = true;
                    if graph.nodes[x].stmt {
                        stack.push(x);
                    }
                    comp.extend(intra[x].iter().copied().filter(|&y| g.attached[y]));
                }
            }
        }
    }
    for (v, k) in keep.iter_mut().enumerate() {
        if !dir.allows(graph.nodes[v].version) {
            *k = false;
        }
    }
    keep
}

/// Union of the deleted and added slices with induced edges; `Entry`/`Exit`
/// nodes left without edges are dropped.
pub fn finalize_repocpg(g: &RepoCpg, cfg: &SliceConfig) -> RepoCpg {
    let del = slice(g, Direction::Deleted, cfg);
    let add = slice(g, Direction::Added, cfg);
    let mut keep: Vec<bool> = del.iter().zip(&add).map(|(a, b)| *a || *b).collect();
    let mut degree = vec![0usize; keep.len()];
    for e in &g.graph.edges {
        if keep[e.src] && keep[e.dst] {
            degree[e.src] += 1;
            degree[e.dst] += 1;
        }
    }
    for (i, n) in g.graph.nodes.iter().enumerate() {
        if n.kind.is_synthetic() && degree[i] == 0 {
            keep[i] = false;
        }
    }
    let (graph, map) = g.graph.induced(&keep);
    let mut attached = vec![false; graph.nodes.len()];
    for (old, new) in map.iter().enumerate() {
        if let Some(new) = new {
            attached[*new] = g.attached[old];
        }
    }
    if graph.is_empty() {
        warn!("sliced graph is empty: the patch changes no parsed statement");
    }
    RepoCpg { graph, attached }
}
