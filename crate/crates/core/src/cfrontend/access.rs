use std::collections::BTreeSet;

use super::ast::{Ast, AstId, AstKind};

/// Variables written and read by one statement, tracked at the base
/// identifier: `buf[i] = x` defines `buf` and uses `i` and `x`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Access {
    pub defs: BTreeSet<String>,
    pub uses: BTreeSet<String>,
}

/// Def/use sets of a statement node, looking only at its own header (never
/// into nested statements). Opaque statements only use.
pub fn statement_access(ast: &Ast, stmt: AstId) -> Access {
    let mut acc = Access::default();
    let node = ast.node(stmt);
    match node.kind {
        AstKind::OpaqueStmt => collect_idents(ast, stmt, &mut acc.uses),
        AstKind::Decl => {
            for &c in &node.children {
                let child = ast.node(c);
                if child.kind == AstKind::Assign {
                    acc.lvalue(ast, child.children[0], false);
                    acc.expr(ast, child.children[1]);
                } else {
                    acc.lvalue(ast, c, false);
                }
            }
        }
        AstKind::Assign => acc.expr(ast, stmt),
        AstKind::For => {
            // Declarations in a `for` header are flattened to their
            // declarators, so a bare identifier there is a definition.
            for &c in ast.header_children(stmt) {
                if ast.kind(c) == AstKind::Ident && is_for_init(ast, stmt, c) {
                    acc.lvalue(ast, c, false);
                } else {
                    acc.expr(ast, c);
                }
            }
        }
        _ => {
            for &c in ast.header_children(stmt) {
                acc.expr(ast, c);
            }
        }
    }
    acc
}

fn is_for_init(ast: &Ast, stmt: AstId, child: AstId) -> bool {
    let code = &ast.node(stmt).code;
    let decl_header = code
        .strip_prefix("for ( ")
        .and_then(|rest| rest.split_whitespace().next())
        .is_some_and(|first| super::lexer::KEYWORDS.contains(&first));
    decl_header && ast.node(stmt).children.first() == Some(&child)
}

fn collect_idents(ast: &Ast, id: AstId, out: &mut BTreeSet<String>) {
    let n = ast.node(id);
    if n.kind == AstKind::Ident {
        out.insert(n.op.clone());
    }
    for &c in &n.children {
        collect_idents(ast, c, out);
    }
}

impl Access {
    fn expr(&mut self, ast: &Ast, id: AstId) {
        let n = ast.node(id);
        match (n.kind, n.op.as_str()) {
            (AstKind::Ident, name) => {
                self.uses.insert(name.to_owned());
            }
            (AstKind::Literal, _) => {}
            (AstKind::Assign, op) => {
                self.lvalue(ast, n.children[0], op != "=");
                self.expr(ast, n.children[1]);
            }
            (AstKind::UnaryOp, "++" | "--" | "p++" | "p--") => {
                self.lvalue(ast, n.children[0], true);
            }
            (AstKind::Call, _) => {
                let callee = n.children[0];
                if ast.kind(callee) != AstKind::Ident {
                    self.expr(ast, callee);
                }
                for &a in &n.children[1..] {
                    self.expr(ast, a);
                }
            }
            (AstKind::BinOp, "." | "->") => self.expr(ast, n.children[0]),
            _ => {
                for &c in &n.children {
                    self.expr(ast, c);
                }
            }
        }
    }

    fn lvalue(&mut self, ast: &Ast, id: AstId, also_use: bool) {
        let n = ast.node(id);
        match (n.kind, n.op.as_str()) {
            (AstKind::Ident, name) => {
                self.defs.insert(name.to_owned());
                if also_use {
                    self.uses.insert(name.to_owned());
                }
            }
            (AstKind::BinOp, "[]" | "+" | "-") => {
                self.lvalue(ast, n.children[0], also_use);
                self.expr(ast, n.children[1]);
            }
            (AstKind::BinOp, "." | "->") | (AstKind::UnaryOp, "*" | "&" | "cast") => {
                self.lvalue(ast, n.children[0], also_use)
            }
            _ => self.expr(ast, id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfrontend::{collect_functions, parse_source};

    fn access_of(body: &str) -> Vec<(Vec<String>, Vec<String>)> {
        let ast = parse_source(&format!("void f() {{\n{body}\n}}"), "t.c");
        let f = &collect_functions(&ast)[0];
        ast.node(f.body)
            .children
            .iter()
            .map(|&s| {
                let a = statement_access(&ast, s);
                (a.defs.into_iter().collect(), a.uses.into_iter().collect())
            })
            .collect()
    }

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn base_identifier_tracking() {
        let got = access_of("buf[i] = x;\np->len += n;\nint a = b + c, *q;\ni++;\n");
        assert_eq!(got[0], (v(&["buf"]), v(&["i", "x"])));
        assert_eq!(got[1], (v(&["p"]), v(&["n", "p"])));
        assert_eq!(got[2], (v(&["a", "q"]), v(&["b", "c"])));
        assert_eq!(got[3], (v(&["i"]), v(&["i"])));
    }

    #[test]
    fn calls_fields_and_opaque() {
        let got = access_of("use(a, s.f);\nswitch (k) { case 1: z = 2; }\n");
        assert_eq!(got[0], (v(&[]), v(&["a", "s"])));
        assert_eq!(got[1], (v(&[]), v(&["k", "z"])));
    }

    #[test]
    fn control_headers_only() {
        let got = access_of(
            "if (x > 0) { y = 1; }\nfor (int i = 0; i < n; i++) s += i;\nwhile ((c = next()) != 0) n++;\n",
        );
        assert_eq!(got[0], (v(&[]), v(&["x"])));
        assert_eq!(got[1], (v(&["i"]), v(&["i", "n"])));
        assert_eq!(got[2], (v(&["c"]), v(&[])));
    }
}
