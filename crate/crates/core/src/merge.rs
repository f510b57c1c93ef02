//! Fusing pre-patch and post-patch graphs into one graph whose nodes and
//! edges are labelled `pre`, `post` or `common`.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::cpg::Cpg;
use crate::graph::{CpgEdge, EdgeType, Graph, NodeId, NodeKind, Version};
use crate::ingest::Side;

/// Partial bijection between pre-graph and post-graph node ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeMatch {
    pub pairs: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeCpg {
    pub graph: Graph,
    /// For every merged node, its pre-graph and post-graph ids.
    pub origin: Vec<(Option<NodeId>, Option<NodeId>)>,
}

/// All function graphs of one file side by side.
pub fn file_graph(cpgs: &[Cpg]) -> Graph {
    let mut g = Graph::default();
    for c in cpgs {
        g.append(&c.graph);
    }
    g
}

fn ast_children(g: &Graph) -> Vec<Vec<NodeId>> {
    let mut ch = vec![Vec::new(); g.nodes.len()];
    for e in g.edges_of(EdgeType::Ast) {
        ch[e.src].push(e.dst);
    }
    for c in &mut ch {
        c.sort_unstable();
    }
    ch
}

/// Synthetic node key: function name, kind, and ordinal among the file's
/// functions of that name.
fn synthetic_keys(g: &Graph) -> HashMap<(String, NodeKind, usize), NodeId> {
    let mut seen: HashMap<(String, NodeKind), usize> = HashMap::new();
    let mut out = HashMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if n.kind.is_synthetic() {
            let k = seen.entry((n.function.clone(), n.kind)).or_default();
            out.insert((n.function.clone(), n.kind, *k), i);
            *k += 1;
        }
    }
    out
}

/// Statement nodes match when their lines correspond under `line_map` and
/// kind, code and function agree; token nodes match when their parents do
/// and they sit at the same child position; `Entry`/`Exit` match by role.
pub fn match_nodes(pre: &Graph, post: &Graph, line_map: &[(u32, u32)]) -> NodeMatch {
    let to_post: HashMap<u32, u32> = line_map.iter().copied().collect();
    let mut by_line: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for (i, n) in post.nodes.iter().enumerate() {
        if n.stmt {
            if let Some(l) = n.line {
                by_line.entry(l).or_default().push(i);
            }
        }
    }
    let mut used = vec![false; post.nodes.len()];
    let mut pairs = Vec::new();

    let post_synth = synthetic_keys(post);
    for (key, p) in synthetic_keys(pre) {
        if let Some(&q) = post_synth.get(&key) {
            used[q] = true;
            pairs.push((p, q));
        }
    }

    let pre_children = ast_children(pre);
    let post_children = ast_children(post);
    for (p, n) in pre.nodes.iter().enumerate() {
        if !n.stmt {
            continue;
        }
        let Some(target) = n.line.and_then(|l| to_post.get(&l)) else {
            continue;
        };
        let Some(cands) = by_line.get(target) else {
            continue;
        };
        let found = cands.iter().copied().find(|&q| {
            let m = &post.nodes[q];
            !used[q] && m.kind == n.kind && m.code == n.code && m.function == n.function
        });
        if let Some(q) = found {
            let mut stack = vec![(p, q)];
            while let Some((a, b)) = stack.pop() {
                used[b] = true;
                pairs.push((a, b));
                let (ca, cb) = (&pre_children[a], &post_children[b]);
                if ca.len() != cb.len() {
                    continue;
                }
                for (&x, &y) in ca.iter().zip(cb) {
                    let (nx, ny) = (&pre.nodes[x], &post.nodes[y]);
                    if nx.kind == ny.kind && nx.code == ny.code && !used[y] {
                        stack.push((x, y));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    NodeMatch { pairs }
}

type EdgeKey = (NodeId, NodeId, EdgeType, Option<String>);

pub fn merge_graphs(pre: &Graph, post: &Graph, m: &NodeMatch) -> MergeCpg {
    let pre_to_post: HashMap<NodeId, NodeId> = m.pairs.iter().copied().collect();
    let mut post_to_merged = vec![None; post.nodes.len()];
    let mut out = MergeCpg::default();

    for (p, n) in pre.nodes.iter().enumerate() {
        let mut node = n.clone();
        let q = pre_to_post.get(&p).copied();
        node.version = Some(if q.is_some() {
            Version::Common
        } else {
            Version::Pre
        });
        let id = out.graph.add_node(node);
        out.origin.push((Some(p), q));
        if let Some(q) = q {
            post_to_merged[q] = Some(id);
        }
    }
    for (q, n) in post.nodes.iter().enumerate() {
        if post_to_merged[q].is_none() {
            let mut node = n.clone();
            node.version = Some(Version::Post);
            post_to_merged[q] = Some(out.graph.add_node(node));
            out.origin.push((None, Some(q)));
        }
    }
    let post_id = |q: NodeId| post_to_merged[q].expect("every post node is placed");

    let post_edges: HashSet<EdgeKey> = post
        .edges
        .iter()
        .map(|e| (post_id(e.src), post_id(e.dst), e.etype, e.label.clone()))
        .collect();
    let mut common: HashSet<EdgeKey> = HashSet::new();
    let is_common = |v: NodeId, g: &Graph| g.nodes[v].version == Some(Version::Common);
    for e in &pre.edges {
        let key = (e.src, e.dst, e.etype, e.label.clone());
        let version =
            if is_common(e.src, &out.graph) && is_common(e.dst, &out.graph) && post_edges.contains(&key) {
                common.insert(key);
                Version::Common
            } else {
                Version::Pre
            };
        out.graph.edges.push(CpgEdge {
            version: Some(version),
            ..e.clone()
        });
    }
    for e in &post.edges {
        let key = (post_id(e.src), post_id(e.dst), e.etype, e.label.clone());
        if !common.contains(&key) {
            out.graph.edges.push(CpgEdge {
                src: key.0,
                dst: key.1,
                etype: e.etype,
                label: e.label.clone(),
                version: Some(Version::Post),
            });
        }
    }
    out
}

impl MergeCpg {
    /// The `{pre, common}` or `{post, common}` part, with ids compacted.
    /// Returns the graph and, for each of its nodes, the merged id.
    pub fn project(&self, side: Side) -> (Graph, Vec<NodeId>) {
        let keep_version = |v: Option<Version>| match (side, v) {
            (Side::Pre, Some(v)) => v.pre_side(),
            (Side::Post, Some(v)) => v.post_side(),
            (_, None) => true,
        };
        let keep: Vec<bool> = self.graph.nodes.iter().map(|n| keep_version(n.version)).collect();
        let (mut g, map) = self.graph.induced(&keep);
        g.edges.retain(|e| keep_version(e.version));
        let ids = (0..self.graph.nodes.len())
            .filter(|&i| map[i].is_some())
            .collect();
        (g, ids)
    }
}

/// Merges the function graphs of one file pair. `line_map` comes from the
/// file's diff; a missing side is an empty graph.
pub fn merge_file(pre: &[Cpg], post: &[Cpg], line_map: &[(u32, u32)]) -> MergeCpg {
    let (pg, qg) = (file_graph(pre), file_graph(post));
    let m = match_nodes(&pg, &qg, line_map);
    merge_graphs(&pg, &qg, &m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfrontend::parse_source;
    use crate::cpg::build_file_cpgs;
    use crate::ingest::diff_lines;
    use crate::oracle::check_projection;

    fn merged(pre: &str, post: &str) -> (MergeCpg, Graph, Graph) {
        let a = build_file_cpgs(&parse_source(pre, "a.c"));
        let b = build_file_cpgs(&parse_source(post, "a.c"));
        let d = diff_lines(
            &crate::ingest::split_lines(pre),
            &crate::ingest::split_lines(post),
        );
        (merge_file(&a, &b, &d.line_map), file_graph(&a), file_graph(&b))
    }

    fn version_of(m: &MergeCpg, code: &str) -> Vec<Version> {
        m.graph
            .nodes
            .iter()
            .filter(|n| n.stmt && n.code == code)
            .filter_map(|n| n.version)
            .collect()
    }

    #[test]
    fn unchanged_file_is_all_common() {
        let src = "int f(int x) {\n  int y = x;\n  if (y) return 1;\n  return 0;\n}\n";
        let (m, pre, _) = merged(src, src);
        assert_eq!(m.graph.nodes.len(), pre.nodes.len());
        assert!(m.graph.nodes.iter().all(|n| n.version == Some(Version::Common)));
        assert!(m.graph.edges.iter().all(|e| e.version == Some(Version::Common)));
    }

    #[test]
    fn deleted_and_added_statements() {
        let pre = "void f() {\n  x = 1;\n  g(x);\n  h(x);\n}\n";
        let post = "void f() {\n  x = 1;\n  if (x) return;\n  h(x);\n}\n";
        let (m, pre_g, post_g) = merged(pre, post);
        assert_eq!(version_of(&m, "x = 1 ;"), vec![Version::Common]);
        assert_eq!(version_of(&m, "g ( x ) ;"), vec![Version::Pre]);
        assert_eq!(version_of(&m, "if ( x )"), vec![Version::Post]);
        let matched = m
            .origin
            .iter()
            .filter(|(a, b)| a.is_some() && b.is_some())
            .count();
        assert_eq!(
            m.graph.nodes.len(),
            pre_g.nodes.len() + post_g.nodes.len() - matched
        );
        check_projection(&m, Side::Pre, &pre_g).unwrap();
        check_projection(&m, Side::Post, &post_g).unwrap();
        // A new guard makes a control edge that exists only post-patch.
        assert!(m.graph.edges.iter().any(|e| e.etype == EdgeType::Cfg
            && e.version == Some(Version::Post)
            && m.graph.nodes[e.src].code == "x = 1 ;"));
    }

    #[test]
    fn mapped_lines_with_different_code_do_not_match() {
        let (m, _, _) = merged("void f() {\n  x = 1;\n}\n", "void f() {\n  x = 2;\n}\n");
        assert_eq!(version_of(&m, "x = 1 ;"), vec![Version::Pre]);
        assert_eq!(version_of(&m, "x = 2 ;"), vec![Version::Post]);
        let (m, _, _) = merged("void f() {\n  x = 1;\n}\n", "void f() {\n  x  =  1 ;\n}\n");
        assert_eq!(version_of(&m, "x = 1 ;"), vec![Version::Pre, Version::Post]);
    }

    #[test]
    fn duplicate_statements_resolve_by_position() {
        let pre = "void f() {\n  a();\n  a();\n}\n";
        let post = "void f() {\n  a();\n  b();\n  a();\n}\n";
        let (m, pre_g, post_g) = merged(pre, post);
        assert_eq!(version_of(&m, "a ( ) ;"), vec![Version::Common, Version::Common]);
        check_projection(&m, Side::Pre, &pre_g).unwrap();
        check_projection(&m, Side::Post, &post_g).unwrap();
    }
}
