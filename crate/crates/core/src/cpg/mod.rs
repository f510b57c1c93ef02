//! Per-function code property graphs: statement CFG, control dependence
//! from post-dominators, data dependence from reaching definitions, and
//! AST edges from each statement to its expression tokens.

mod dependence;
mod flow;

pub use dependence::{control_dependence, data_dependence, immediate_postdominators, postdominators};
pub use flow::{build_cfg, statements_preorder, FlowGraph, StatementFlow};

use crate::cfrontend::{collect_functions, statement_access, Access, Ast, AstId, FunctionDef};
use crate::graph::{CpgNode, EdgeType, Graph, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpg {
    pub graph: Graph,
    pub entry: NodeId,
    pub exit: NodeId,
    pub function: String,
    pub file: String,
}

/// Def/use sets per flow node; `Entry` and `Exit` are empty.
pub fn flow_access(ast: &Ast, sf: &StatementFlow) -> Vec<Access> {
    let mut acc = vec![Access::default(); sf.flow.len()];
    for (i, &s) in sf.stmts.iter().enumerate() {
        acc[i + 1] = statement_access(ast, s);
    }
    acc
}

pub fn build_cpg(ast: &Ast, f: &FunctionDef) -> Cpg {
    let sf = build_cfg(ast, f);
    let mut g = Graph::default();
    let synthetic = |kind| CpgNode {
        kind,
        code: String::new(),
        line: None,
        file: f.file.clone(),
        function: f.name.clone(),
        version: None,
        stmt: false,
    };

    let entry = g.add_node(synthetic(NodeKind::Entry));
    let mut flow_node = vec![entry; sf.flow.len()];
    let mut ast_edges = Vec::new();
    for (i, &s) in sf.stmts.iter().enumerate() {
        let id = add_ast_node(&mut g, ast, f, s, true);
        flow_node[i + 1] = id;
        for &c in ast.header_children(s) {
            add_subtree(&mut g, ast, f, c, id, &mut ast_edges);
        }
    }
    let exit = g.add_node(synthetic(NodeKind::Exit));
    flow_node[sf.flow.exit] = exit;

    for (p, c) in ast_edges {
        g.add_edge(p, c, EdgeType::Ast, None, None);
    }
    for (a, b) in sf.flow.edges() {
        g.add_edge(flow_node[a], flow_node[b], EdgeType::Cfg, None, None);
    }
    for (a, b) in control_dependence(&sf.flow) {
        if a != b {
            g.add_edge(flow_node[a], flow_node[b], EdgeType::Cdg, None, None);
        }
    }
    for (d, u, var) in data_dependence(&sf.flow, &flow_access(ast, &sf)) {
        if d != u {
            g.add_edge(flow_node[d], flow_node[u], EdgeType::Ddg, Some(var), None);
        }
    }
    Cpg {
        graph: g,
        entry,
        exit,
        function: f.name.clone(),
        file: f.file.clone(),
    }
}

fn add_ast_node(g: &mut Graph, ast: &Ast, f: &FunctionDef, id: AstId, stmt: bool) -> NodeId {
    let n = ast.node(id);
    g.add_node(CpgNode {
        kind: NodeKind::Ast(n.kind),
        code: n.code.clone(),
        line: Some(n.line_span.0),
        file: f.file.clone(),
        function: f.name.clone(),
        version: None,
        stmt,
    })
}

fn add_subtree(
    g: &mut Graph,
    ast: &Ast,
    f: &FunctionDef,
    id: AstId,
    parent: NodeId,
    edges: &mut Vec<(NodeId, NodeId)>,
) {
    let me = add_ast_node(g, ast, f, id, false);
    edges.push((parent, me));
    for &c in &ast.node(id).children {
        add_subtree(g, ast, f, c, me, edges);
    }
}

/// One graph per function body in the file, in source order.
pub fn build_file_cpgs(ast: &Ast) -> Vec<Cpg> {
    collect_functions(ast).iter().map(|f| build_cpg(ast, f)).collect()
}
