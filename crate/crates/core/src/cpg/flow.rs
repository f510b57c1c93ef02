use std::collections::VecDeque;

use crate::cfrontend::{Ast, AstId, AstKind, FunctionDef};

/// A control-flow graph over dense node indices with one entry and one exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowGraph {
    pub succs: Vec<Vec<usize>>,
    pub entry: usize,
    pub exit: usize,
}

impl FlowGraph {
    pub fn new(len: usize, entry: usize, exit: usize) -> Self {
        Self {
            succs: vec![Vec::new(); len],
            entry,
            exit,
        }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    /// Adds `a → b` unless already present.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        if !self.succs[a].contains(&b) {
            self.succs[a].push(b);
        }
    }

    pub fn preds(&self) -> Vec<Vec<usize>> {
        let mut p = vec![Vec::new(); self.len()];
        for (a, ss) in self.succs.iter().enumerate() {
            for &b in ss {
                p[b].push(a);
            }
        }
        p
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .succs
            .iter()
            .enumerate()
            .flat_map(|(a, ss)| ss.iter().map(move |&b| (a, b)))
            .collect();
        out.sort_unstable();
        out
    }

    fn reach(&self, from: usize, adj: &[Vec<usize>]) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut q = VecDeque::from([from]);
        seen[from] = true;
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
        seen
    }

    /// Adds `entry → v` for the first unreachable node until all are
    /// reachable, then `v → exit` for the last node that cannot reach the
    /// exit until all can.
    pub fn ensure_connected(&mut self) {
        loop {
            let seen = self.reach(self.entry, &self.succs);
            match (0..self.len()).find(|&v| !seen[v]) {
                Some(v) => self.add_edge(self.entry, v),
                None => break,
            }
        }
        loop {
            let back = self.reach(self.exit, &self.preds());
            match (0..self.len()).rev().find(|&v| !back[v]) {
                Some(v) => self.add_edge(v, self.exit),
                None => break,
            }
        }
    }
}

/// Statement-level CFG of one function. Flow index 0 is `Entry`,
/// `1..=stmts.len()` are the statements in preorder, and the last is `Exit`.
#[derive(Debug, Clone)]
pub struct StatementFlow {
    pub stmts: Vec<AstId>,
    pub flow: FlowGraph,
}

impl StatementFlow {
    pub fn flow_index(&self, i: usize) -> Option<AstId> {
        (1..=self.stmts.len()).contains(&i).then(|| self.stmts[i - 1])
    }
}

/// Statements under `block` in preorder, descending into nested bodies.
pub fn statements_preorder(ast: &Ast, block: AstId) -> Vec<AstId> {
    fn walk(ast: &Ast, id: AstId, out: &mut Vec<AstId>) {
        if ast.kind(id) != AstKind::Block {
            out.push(id);
        }
        for &c in ast.nested_statements(id) {
            walk(ast, c, out);
        }
    }
    let mut out = Vec::new();
    walk(ast, block, &mut out);
    out
}

struct Loop {
    header: usize,
    breaks: Vec<usize>,
}

struct Builder<'a> {
    ast: &'a Ast,
    index: std::collections::HashMap<AstId, usize>,
    flow: FlowGraph,
    loops: Vec<Loop>,
}

impl Builder<'_> {
    fn connect(&mut self, preds: &[usize], to: usize) {
        for &p in preds {
            self.flow.add_edge(p, to);
        }
    }

    fn seq(&mut self, stmts: &[AstId], mut preds: Vec<usize>) -> Vec<usize> {
        for &s in stmts {
            preds = self.stmt(s, preds);
        }
        preds
    }

    fn stmt(&mut self, s: AstId, preds: Vec<usize>) -> Vec<usize> {
        let kind = self.ast.kind(s);
        if kind == AstKind::Block {
            let children = self.ast.node(s).children.clone();
            return self.seq(&children, preds);
        }
        let me = self.index[&s];
        self.connect(&preds, me);
        let nested: Vec<AstId> = self.ast.nested_statements(s).to_vec();
        match kind {
            AstKind::If => {
                let mut out = self.stmt(nested[0], vec![me]);
                match nested.get(1) {
                    Some(&e) => out.extend(self.stmt(e, vec![me])),
                    None => out.push(me),
                }
                out.sort_unstable();
                out.dedup();
                out
            }
            AstKind::While | AstKind::For => {
                self.loops.push(Loop {
                    header: me,
                    breaks: Vec::new(),
                });
                let body_out = self.stmt(nested[0], vec![me]);
                self.connect(&body_out, me);
                let lp = self.loops.pop().expect("pushed above");
                let mut out = vec![me];
                out.extend(lp.breaks);
                out
            }
            AstKind::Return => {
                self.flow.add_edge(me, self.flow.exit);
                Vec::new()
            }
            AstKind::Break => {
                match self.loops.last_mut() {
                    Some(lp) => lp.breaks.push(me),
                    None => self.flow.add_edge(me, self.flow.exit),
                }
                Vec::new()
            }
            AstKind::Continue => {
                let to = self.loops.last().map_or(self.flow.exit, |lp| lp.header);
                self.flow.add_edge(me, to);
                Vec::new()
            }
            _ => vec![me],
        }
    }
}

pub fn build_cfg(ast: &Ast, f: &FunctionDef) -> StatementFlow {
    let stmts = statements_preorder(ast, f.body);
    let n = stmts.len();
    let index = stmts.iter().enumerate().map(|(i, &s)| (s, i + 1)).collect();
    let mut b = Builder {
        ast,
        index,
        flow: FlowGraph::new(n + 2, 0, n + 1),
        loops: Vec::new(),
    };
    let out = b.stmt(f.body, vec![0]);
    let exit = b.flow.exit;
    b.connect(&out, exit);
    let mut flow = b.flow;
    flow.ensure_connected();
    StatementFlow { stmts, flow }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfrontend::{collect_functions, parse_source};

    fn cfg_of(body: &str) -> (Vec<String>, Vec<(String, String)>) {
        let ast = parse_source(&format!("void f() {{ {body} }}"), "t.c");
        let f = &collect_functions(&ast)[0];
        let sf = build_cfg(&ast, f);
        let name = |i: usize| match sf.flow_index(i) {
            Some(s) => ast.node(s).code.clone(),
            None if i == 0 => "ENTRY".to_string(),
            None => "EXIT".to_string(),
        };
        let names = (0..sf.flow.len()).map(name).collect();
        let edges = sf
            .flow
            .edges()
            .into_iter()
            .map(|(a, b)| (name(a), name(b)))
            .collect();
        (names, edges)
    }

    fn e(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn straight_line() {
        let (_, edges) = cfg_of("s1(); s2();");
        assert_eq!(
            edges,
            vec![
                e("ENTRY", "s1 ( ) ;"),
                e("s1 ( ) ;", "s2 ( ) ;"),
                e("s2 ( ) ;", "EXIT")
            ]
        );
    }

    #[test]
    fn diamond() {
        let (_, mut edges) = cfg_of("if (c) a(); else b(); j();");
        edges.sort();
        let mut want = vec![
            e("ENTRY", "if ( c )"),
            e("if ( c )", "a ( ) ;"),
            e("if ( c )", "b ( ) ;"),
            e("a ( ) ;", "j ( ) ;"),
            e("b ( ) ;", "j ( ) ;"),
            e("j ( ) ;", "EXIT"),
        ];
        want.sort();
        assert_eq!(edges, want);
    }

    #[test]
    fn loop_with_break_and_continue() {
        let (_, mut edges) = cfg_of("while (c) { if (d) break; if (e) continue; b(); } z();");
        edges.sort();
        let mut want = vec![
            e("ENTRY", "while ( c )"),
            e("while ( c )", "if ( d )"),
            e("if ( d )", "break ;"),
            e("if ( d )", "if ( e )"),
            e("if ( e )", "continue ;"),
            e("if ( e )", "b ( ) ;"),
            e("continue ;", "while ( c )"),
            e("b ( ) ;", "while ( c )"),
            e("while ( c )", "z ( ) ;"),
            e("break ;", "z ( ) ;"),
            e("z ( ) ;", "EXIT"),
        ];
        want.sort();
        assert_eq!(edges, want);
    }

    #[test]
    fn unreachable_code_gets_entry_fallback() {
        let (_, edges) = cfg_of("return; dead();");
        assert!(edges.contains(&e("ENTRY", "dead ( ) ;")));
        assert!(edges.contains(&e("dead ( ) ;", "EXIT")));
    }

    #[test]
    fn empty_body() {
        let (names, edges) = cfg_of("");
        assert_eq!(names.len(), 2);
        assert_eq!(edges, vec![e("ENTRY", "EXIT")]);
    }
}
