//! Slow reference implementations used to cross-check the analyses.
//! Deliberately naive; they share no code with the production algorithms.

use std::collections::{BTreeSet, HashSet};

use crate::cfrontend::Access;
use crate::cpg::FlowGraph;
use crate::graph::{EdgeType, Graph, Version};
use crate::ingest::Side;
use crate::merge::MergeCpg;
use crate::repodep::RepoCpg;
use crate::slice::{Direction, SliceConfig};

/// Post-dominator sets by intersecting the node sets of every simple path
/// from each node to the exit.
pub fn path_postdominators(flow: &FlowGraph) -> Vec<BTreeSet<usize>> {
    fn walk(
        flow: &FlowGraph,
        v: usize,
        on_path: &mut Vec<bool>,
        path: &mut Vec<usize>,
        acc: &mut Option<BTreeSet<usize>>,
    ) {
        if v == flow.exit {
            let here: BTreeSet<usize> = path.iter().copied().collect();
            *acc = Some(match acc.take() {
                None => here,
                Some(prev) => prev.intersection(&here).copied().collect(),
            });
            return;
        }
        for &s in &flow.succs[v] {
            if !on_path[s] {
                on_path[s] = true;
                path.push(s);
                walk(flow, s, on_path, path, acc);
                path.pop();
                on_path[s] = false;
            }
        }
    }

    (0..flow.len())
        .map(|x| {
            let mut on_path = vec![false; flow.len()];
            on_path[x] = true;
            let mut acc = None;
            walk(flow, x, &mut on_path, &mut vec![x], &mut acc);
            // A node with no path to the exit is post-dominated by everything.
            acc.unwrap_or_else(|| (0..flow.len()).collect())
        })
        .collect()
}

/// `(a, b)` such that `b` post-dominates some successor of `a` and does not
/// strictly post-dominate `a`.
pub fn path_control_dependence(flow: &FlowGraph) -> BTreeSet<(usize, usize)> {
    let pdom = path_postdominators(flow);
    let mut out = BTreeSet::new();
    for a in 0..flow.len() {
        for b in 0..flow.len() {
            let strict = b != a && pdom[a].contains(&b);
            if !strict && flow.succs[a].iter().any(|&s| pdom[s].contains(&b)) {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Reaching definitions by round-robin iteration over sets of
/// `(def node, variable)` until nothing changes.
pub fn naive_data_dependence(flow: &FlowGraph, access: &[Access]) -> BTreeSet<(usize, usize, String)> {
    let n = flow.len();
    let mut preds = vec![Vec::new(); n];
    for a in 0..n {
        for &b in &flow.succs[a] {
            preds[b].push(a);
        }
    }
    let mut reach_in: Vec<HashSet<(usize, String)>> = vec![HashSet::new(); n];
    let mut reach_out: Vec<HashSet<(usize, String)>> = vec![HashSet::new(); n];
    loop {
        let mut changed = false;
        for v in 0..n {
            let input: HashSet<(usize, String)> = preds[v]
                .iter()
                .flat_map(|&p| reach_out[p].iter().cloned())
                .collect();
            let mut output: HashSet<(usize, String)> = input
                .iter()
                .filter(|(_, var)| !access[v].defs.contains(var))
                .cloned()
                .collect();
            for var in &access[v].defs {
                output.insert((v, var.clone()));
            }
            if input != reach_in[v] || output != reach_out[v] {
                changed = true;
                reach_in[v] = input;
                reach_out[v] = output;
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = BTreeSet::new();
    for u in 0..n {
        for (d, var) in &reach_in[u] {
            if access[u].uses.contains(var) {
                out.insert((*d, u, var.clone()));
            }
        }
    }
    out
}

/// Checks that the `side` part of a merged graph is isomorphic to
/// `original`, using the recorded origins as the witness bijection. Node
/// kinds, codes and functions, and edge types and labels must agree.
pub fn check_projection(m: &MergeCpg, side: Side, original: &Graph) -> Result<(), String> {
    let on_side = |v: Option<Version>| match side {
        Side::Pre => v.is_some_and(Version::pre_side),
        Side::Post => v.is_some_and(Version::post_side),
    };
    let mut to_orig = vec![None; m.graph.nodes.len()];
    let mut hit = vec![false; original.nodes.len()];
    for (i, n) in m.graph.nodes.iter().enumerate() {
        let (p, q) = m.origin[i];
        let expected = match (p, q) {
            (Some(_), Some(_)) => Version::Common,
            (Some(_), None) => Version::Pre,
            (None, Some(_)) => Version::Post,
            (None, None) => return Err(format!("node {i} has no origin")),
        };
        if n.version != Some(expected) {
            return Err(format!(
                "node {i} labelled {:?}, expected {expected:?}",
                n.version
            ));
        }
        if !on_side(n.version) {
            continue;
        }
        let o = match side {
            Side::Pre => p,
            Side::Post => q,
        }
        .ok_or_else(|| format!("node {i} lacks a {side:?} origin"))?;
        let orig = original
            .nodes
            .get(o)
            .ok_or_else(|| format!("origin {o} out of range"))?;
        if std::mem::replace(&mut hit[o], true) {
            return Err(format!("origin {o} used twice"));
        }
        if (orig.kind, &orig.code, &orig.function) != (n.kind, &n.code, &n.function) {
            return Err(format!("node {i} differs from origin {o}"));
        }
        to_orig[i] = Some(o);
    }
    if let Some(o) = hit.iter().position(|h| !h) {
        return Err(format!("original node {o} missing from projection"));
    }
    let mut got: Vec<_> = Vec::new();
    for e in m.graph.edges.iter().filter(|e| on_side(e.version)) {
        let (Some(s), Some(d)) = (to_orig[e.src], to_orig[e.dst]) else {
            return Err(format!("edge {}->{} leaves the projection", e.src, e.dst));
        };
        got.push((s, d, e.etype, e.label.clone()));
    }
    let mut want: Vec<_> = original
        .edges
        .iter()
        .map(|e| (e.src, e.dst, e.etype, e.label.clone()))
        .collect();
    got.sort();
    want.sort();
    if got != want {
        return Err(format!("edge sets differ: {} vs {}", got.len(), want.len()));
    }
    Ok(())
}

/// Justifies every node of a slice from scratch. A retained node must
/// carry an allowed version and be one of: a seed; a statement within
/// `hops` undirected CDG/DDG steps of a seed; a token whose statement is
/// retained; or a node of a callee graph entered by a CALL edge from a
/// retained node.
pub fn check_slice(g: &RepoCpg, dir: Direction, cfg: &SliceConfig, keep: &[bool]) -> Result<(), String> {
    let graph = &g.graph;
    let n = graph.nodes.len();
    let banned = match dir {
        Direction::Deleted => Version::Post,
        Direction::Added => Version::Pre,
    };
    let seed_version = match dir {
        Direction::Deleted => Version::Pre,
        Direction::Added => Version::Post,
    };
    let ok_edge = |src: usize, dst: usize, v: Option<Version>| {
        v != Some(banned)
            && graph.nodes[src].version != Some(banned)
            && graph.nodes[dst].version != Some(banned)
    };
    let is_base_stmt = |v: usize| graph.nodes[v].stmt && !g.attached[v];

    // Statements reachable from a seed within r steps, by repeated expansion.
    let mut near: HashSet<usize> = (0..n)
        .filter(|&v| is_base_stmt(v) && graph.nodes[v].version == Some(seed_version))
        .collect();
    for _ in 0..cfg.hops {
        let mut grown = near.clone();
        for e in &graph.edges {
            if !matches!(e.etype, EdgeType::Cdg | EdgeType::Ddg) || !ok_edge(e.src, e.dst, e.version) {
                continue;
            }
            for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
                if near.contains(&a) && is_base_stmt(b) {
                    grown.insert(b);
                }
            }
        }
        near = grown;
    }

    let mut parent = vec![None; n];
    for e in graph.edges.iter().filter(|e| e.etype == EdgeType::Ast) {
        parent[e.dst] = Some(e.src);
    }
    let statement_of = |mut v: usize| {
        while !graph.nodes[v].stmt {
            v = parent[v]?;
        }
        Some(v)
    };

    // Callee nodes reachable from a CALL edge whose source is retained.
    let mut entered: HashSet<usize> = HashSet::new();
    let mut stack: Vec<usize> = graph
        .edges
        .iter()
        .filter(|e| e.etype == EdgeType::Call && keep[e.src] && ok_edge(e.src, e.dst, e.version))
        .map(|e| e.dst)
        .collect();
    while let Some(v) = stack.pop() {
        if !entered.insert(v) {
            continue;
        }
        for e in graph.edges.iter().filter(|e| e.etype != EdgeType::Call) {
            for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
                if a == v && g.attached[b] && ok_edge(e.src, e.dst, e.version) {
                    stack.push(b);
                }
            }
        }
    }

    for v in (0..n).filter(|&v| keep[v]) {
        let node = &graph.nodes[v];
        if node.version == Some(banned) {
            return Err(format!("node {v} has excluded version {banned:?}"));
        }
        let justified = if g.attached[v] {
            entered.contains(&v)
        } else if node.stmt {
            near.contains(&v)
        } else {
            statement_of(v).is_some_and(|s| keep[s] && near.contains(&s))
        };
        if !justified {
            return Err(format!("node {v} (`{}`) is not justified", node.code));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn postdominators_of_a_diamond() {
        let mut f = FlowGraph::new(5, 0, 4);
        for (a, b) in [(0, 1), (1, 2), (1, 3), (2, 4), (3, 4)] {
            f.add_edge(a, b);
        }
        let p = path_postdominators(&f);
        assert_eq!(p[1], BTreeSet::from([1, 4]));
        assert_eq!(p[0], BTreeSet::from([0, 1, 4]));
        assert_eq!(path_control_dependence(&f), BTreeSet::from([(1, 2), (1, 3)]));
    }
}
