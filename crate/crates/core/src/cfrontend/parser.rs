//! Total recursive-descent parser for a C subset.
//!
//! Recognized statements: declarations, assignments, expression statements,
//! `if`/`else`, `while`, `for`, `return`, `break`, `continue` and blocks.
//! Any other statement-level token run becomes an `OpaqueStmt`, and an
//! expression that cannot be parsed turns its statement opaque, so the parser
//! never fails on real-world input.

use log::debug;

use super::ast::{Ast, AstId, AstKind, AstNode, FunctionDef};
use super::lexer::{tokenize, Token, TokenKind};

const TYPE_START: &[&str] = &[
    "int",
    "char",
    "short",
    "long",
    "unsigned",
    "signed",
    "float",
    "double",
    "void",
    "struct",
    "union",
    "enum",
    "const",
    "volatile",
    "static",
    "extern",
    "register",
    "auto",
    "_Bool",
    "inline",
    "restrict",
    "_Atomic",
    "_Thread_local",
    "_Noreturn",
    "_Complex",
    "_Alignas",
];

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

pub fn parse_source(src: &str, file: &str) -> Ast {
    parse_unit(&tokenize(src), file)
}

pub fn parse_unit(tokens: &[Token], file: &str) -> Ast {
    let mut p = Parser {
        toks: tokens,
        pos: 0,
        nodes: Vec::new(),
        warnings: Vec::new(),
    };
    let root = p.translation_unit();
    for w in &p.warnings {
        debug!("{file}: {w}");
    }
    Ast {
        file: file.to_owned(),
        nodes: p.nodes,
        root,
        warnings: p.warnings,
    }
}

/// Every top-level function that has a body, in source order.
pub fn collect_functions(ast: &Ast) -> Vec<FunctionDef> {
    ast.node(ast.root)
        .children
        .iter()
        .filter(|&&c| ast.kind(c) == AstKind::FunctionDef)
        .map(|&c| {
            let n = ast.node(c);
            let params = ast
                .node(n.children[0])
                .children
                .iter()
                .map(|&p| ast.node(p).op.clone())
                .collect();
            FunctionDef {
                name: n.op.clone(),
                params,
                node: c,
                body: n.children[1],
                file: ast.file.clone(),
                line_span: n.line_span,
            }
        })
        .collect()
}

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    nodes: Vec<AstNode>,
    warnings: Vec<String>,
}

impl<'t> Parser<'t> {
    fn tok(&self, i: usize) -> Option<&'t Token> {
        self.toks.get(i)
    }

    fn punct_at(&self, i: usize, p: &str) -> bool {
        self.tok(i).is_some_and(|t| t.is_punct(p))
    }

    fn keyword_at(&self, i: usize, k: &str) -> bool {
        self.tok(i).is_some_and(|t| t.is_keyword(k))
    }

    fn is_type_start(&self, i: usize) -> bool {
        self.tok(i)
            .is_some_and(|t| t.kind == TokenKind::Keyword && TYPE_START.contains(&t.text.as_str()))
    }

    fn code(&self, lo: usize, hi: usize) -> String {
        self.toks[lo..hi.min(self.toks.len())]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn push(
        &mut self,
        kind: AstKind,
        children: Vec<AstId>,
        range: (usize, usize),
        op: impl Into<String>,
    ) -> AstId {
        let (lo, hi) = range;
        let mut span: Option<(u32, u32)> = None;
        let mut widen = |a: u32, b: u32| {
            span = Some(match span {
                None => (a, b),
                Some((x, y)) => (x.min(a), y.max(b)),
            })
        };
        for t in &self.toks[lo.min(self.toks.len())..hi.min(self.toks.len())] {
            widen(t.line, t.line);
        }
        for &c in &children {
            let (a, b) = self.nodes[c].line_span;
            widen(a, b);
        }
        let line_span = span.unwrap_or_else(|| {
            let l = self
                .toks
                .get(lo.min(self.toks.len().saturating_sub(1)))
                .map_or(1, |t| t.line);
            (l, l)
        });
        let id = self.nodes.len();
        let code = self.code(lo, hi);
        self.nodes.push(AstNode {
            id,
            kind,
            children,
            line_span,
            code,
            op: op.into(),
        });
        id
    }

    /// Index of the bracket closing the one at `open`, counting only that
    /// bracket pair.
    fn find_close(&self, open: usize, limit: usize) -> Option<usize> {
        let (o, c) = match self.tok(open)?.text.as_str() {
            "(" => ("(", ")"),
            "[" => ("[", "]"),
            "{" => ("{", "}"),
            _ => return None,
        };
        let mut depth = 0usize;
        for i in open..limit.min(self.toks.len()) {
            let t = &self.toks[i];
            if t.is_punct(o) {
                depth += 1;
            } else if t.is_punct(c) {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
        }
        None
    }

    fn opaque(&mut self, lo: usize, hi: usize) -> AstId {
        let leaves = self.leaves(lo, hi);
        self.push(AstKind::OpaqueStmt, leaves, (lo, hi), "")
    }

    fn leaves(&mut self, lo: usize, hi: usize) -> Vec<AstId> {
        (lo..hi)
            .filter_map(|i| {
                let t = &self.toks[i];
                let kind = match t.kind {
                    TokenKind::Identifier => AstKind::Ident,
                    TokenKind::Number | TokenKind::String => AstKind::Literal,
                    _ => return None,
                };
                Some(self.push(kind, Vec::new(), (i, i + 1), t.text.clone()))
            })
            .collect()
    }

    /// Leaves wrapped in a `UnaryOp` placeholder, for expressions that must
    /// keep a child slot (conditions, call arguments) but do not parse.
    fn flattened(&mut self, lo: usize, hi: usize) -> AstId {
        let leaves = self.leaves(lo, hi);
        self.push(AstKind::UnaryOp, leaves, (lo, hi), "...")
    }

    // ---- top level -------------------------------------------------------

    fn translation_unit(&mut self) -> AstId {
        let n = self.toks.len();
        let mut items = Vec::new();
        while self.pos < n {
            let t = &self.toks[self.pos];
            if t.kind == TokenKind::Other {
                items.push(self.opaque(self.pos, self.pos + 1));
                self.pos += 1;
                continue;
            }
            if t.is_punct(";") {
                self.pos += 1;
                continue;
            }
            if t.is_punct("}") {
                self.warnings
                    .push(format!("line {}: unbalanced `}}` at top level", t.line));
                self.pos += 1;
                continue;
            }

            let start = self.pos;
            let mut depth = 0usize;
            let mut j = start;
            let mut brace = None;
            while j < n {
                let t = &self.toks[j];
                if t.kind == TokenKind::Other && depth == 0 && j > start {
                    break;
                }
                if t.is_punct("(") || t.is_punct("[") {
                    depth += 1;
                } else if t.is_punct(")") || t.is_punct("]") {
                    depth = depth.saturating_sub(1);
                } else if depth == 0 && t.is_punct(";") {
                    j += 1;
                    break;
                } else if depth == 0 && t.is_punct("{") {
                    brace = Some(j);
                    break;
                }
                j += 1;
            }

            match brace {
                Some(b) if self.is_function_header(start, b) => {
                    let f = self.function(start, b);
                    items.push(f);
                }
                Some(b) => {
                    // struct/union/enum bodies and initializers
                    let mut k = match self.find_close(b, n) {
                        Some(c) => c + 1,
                        None => n,
                    };
                    let mut d = 0usize;
                    while k < n {
                        let t = &self.toks[k];
                        if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
                            d += 1;
                        } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
                            d = d.saturating_sub(1);
                        } else if d == 0 && t.is_punct(";") {
                            k += 1;
                            break;
                        }
                        k += 1;
                    }
                    items.push(self.opaque(start, k));
                    self.pos = k;
                }
                None => {
                    items.push(self.opaque(start, j));
                    self.pos = j;
                }
            }
        }
        self.push(AstKind::TranslationUnit, items, (0, 0), "")
    }

    fn is_function_header(&self, lo: usize, hi: usize) -> bool {
        if hi <= lo || self.keyword_at(lo, "typedef") {
            return false;
        }
        let mut depth = 0usize;
        let mut first_paren = None;
        for i in lo..hi {
            let t = &self.toks[i];
            if t.is_punct("(") {
                if depth == 0 && first_paren.is_none() {
                    first_paren = Some(i);
                }
                depth += 1;
            } else if t.is_punct(")") {
                depth = depth.saturating_sub(1);
            } else if depth == 0 && t.is_punct("=") {
                return false;
            }
        }
        let Some(p) = first_paren else {
            return false;
        };
        let last = &self.toks[hi - 1];
        p > lo && self.toks[p - 1].is_ident() && (last.is_punct(")") || last.is_ident())
    }

    fn function(&mut self, lo: usize, brace: usize) -> AstId {
        let p = (lo..brace)
            .find(|&i| self.punct_at(i, "("))
            .expect("checked by is_function_header");
        let name = self.toks[p - 1].text.clone();
        let close = self.find_close(p, brace).unwrap_or(brace);

        let mut params = Vec::new();
        let mut chunk_start = p + 1;
        let mut depth = 0usize;
        for i in p + 1..=close {
            let t = &self.toks[i];
            let end_of_chunk = i == close || (depth == 0 && t.is_punct(","));
            if t.is_punct("(") || t.is_punct("[") {
                depth += 1;
            } else if (t.is_punct(")") || t.is_punct("]")) && i != close {
                depth = depth.saturating_sub(1);
            }
            if end_of_chunk {
                if let Some(idx) = self.declarator_name(chunk_start, i) {
                    let text = self.toks[idx].text.clone();
                    params.push(self.push(AstKind::Ident, Vec::new(), (idx, idx + 1), text));
                }
                chunk_start = i + 1;
            }
        }
        let param_list = self.push(AstKind::ParamList, params, (p, close + 1), "");

        self.pos = brace;
        let body = self.block();
        self.push(AstKind::FunctionDef, vec![param_list, body], (lo, brace), name)
    }

    // ---- statements -------------------------------------------------------

    fn block(&mut self) -> AstId {
        debug_assert!(self.punct_at(self.pos, "{"));
        let open = self.pos;
        self.pos += 1;
        let mut stmts = Vec::new();
        loop {
            let Some(t) = self.tok(self.pos) else {
                let line = self.toks[open].line;
                self.warnings
                    .push(format!("line {line}: block not closed before end of file"));
                break;
            };
            if t.is_punct("}") {
                self.pos += 1;
                break;
            }
            if let Some(s) = self.statement() {
                stmts.push(s);
            }
        }
        let node = self.push(AstKind::Block, stmts, (open, open + 1), "");
        // Blocks carry no code of their own; only the span matters.
        self.nodes[node].code.clear();
        if let Some(last) = self.tok(self.pos.saturating_sub(1)) {
            let span = &mut self.nodes[node].line_span;
            span.1 = span.1.max(last.line);
        }
        node
    }

    /// A statement where one is syntactically required; an empty statement
    /// or a missing one becomes an empty block.
    fn sub_statement(&mut self) -> AstId {
        match self.tok(self.pos) {
            Some(t) if t.is_punct(";") => {
                let i = self.pos;
                self.pos += 1;
                let b = self.push(AstKind::Block, Vec::new(), (i, i + 1), "");
                self.nodes[b].code.clear();
                b
            }
            Some(t) if !t.is_punct("}") => match self.statement() {
                Some(s) => s,
                None => self.empty_block(),
            },
            _ => self.empty_block(),
        }
    }

    fn empty_block(&mut self) -> AstId {
        let at = self.pos.min(self.toks.len());
        let b = self.push(AstKind::Block, Vec::new(), (at, at), "");
        self.nodes[b].code.clear();
        b
    }

    fn statement(&mut self) -> Option<AstId> {
        let lo = self.pos;
        let t = self.tok(lo)?;
        match (t.kind, t.text.as_str()) {
            (TokenKind::Punctuator, "{") => Some(self.block()),
            (TokenKind::Punctuator, ";") => {
                self.pos += 1;
                None
            }
            (TokenKind::Other, _) => {
                self.pos += 1;
                Some(self.opaque(lo, lo + 1))
            }
            (TokenKind::Keyword, "if") => Some(self.if_statement()),
            (TokenKind::Keyword, "while") => Some(self.while_statement()),
            (TokenKind::Keyword, "for") => Some(self.for_statement()),
            (TokenKind::Keyword, "return") => Some(self.return_statement()),
            (TokenKind::Keyword, "break") | (TokenKind::Keyword, "continue") => {
                let kind = if t.text == "break" {
                    AstKind::Break
                } else {
                    AstKind::Continue
                };
                self.pos += 1;
                if self.punct_at(self.pos, ";") {
                    self.pos += 1;
                }
                Some(self.push(kind, Vec::new(), (lo, self.pos), ""))
            }
            (TokenKind::Keyword, "case") | (TokenKind::Keyword, "default") => {
                let mut j = lo;
                while j < self.toks.len() && !self.punct_at(j, ":") && !self.punct_at(j, "}") {
                    j += 1;
                }
                if self.punct_at(j, ":") {
                    j += 1;
                }
                self.pos = j.max(lo + 1);
                Some(self.opaque(lo, self.pos))
            }
            (TokenKind::Keyword, "else") => {
                self.warnings
                    .push(format!("line {}: `else` without `if`", t.line));
                self.pos += 1;
                Some(self.opaque(lo, lo + 1))
            }
            (TokenKind::Keyword, "switch" | "do" | "goto" | "typedef" | "_Static_assert") => {
                let end = self.scan_opaque(lo);
                self.pos = end;
                Some(self.opaque(lo, end))
            }
            (TokenKind::Identifier, "asm" | "__asm__" | "__asm") => {
                let end = self.scan_opaque(lo);
                self.pos = end;
                Some(self.opaque(lo, end))
            }
            (TokenKind::Identifier, _) if self.punct_at(lo + 1, ":") && !self.punct_at(lo + 2, ":") => {
                self.pos = lo + 2;
                Some(self.opaque(lo, lo + 2))
            }
            _ => Some(self.simple_statement()),
        }
    }

    /// Consumes an unrecognized construct: through the next top-level `;`,
    /// or through a balanced `{...}` (continuing into a trailing `while`).
    fn scan_opaque(&self, lo: usize) -> usize {
        let n = self.toks.len();
        let mut depth = 0usize;
        let mut j = lo;
        while j < n {
            let t = &self.toks[j];
            if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
                depth += 1;
            } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
                if depth == 0 {
                    return j.max(lo + 1);
                }
                depth -= 1;
                if depth == 0 && t.is_punct("}") {
                    if self.keyword_at(j + 1, "while") {
                        j += 1;
                        continue;
                    }
                    if self.punct_at(j + 1, ";") {
                        return j + 2;
                    }
                    return j + 1;
                }
            } else if depth == 0 && t.is_punct(";") {
                return j + 1;
            }
            j += 1;
        }
        n
    }

    /// Finds the end of a simple statement starting at `lo`. Returns the end
    /// of its expression tokens and the position after its terminator.
    fn scan_simple(&self, lo: usize) -> (usize, usize) {
        let n = self.toks.len();
        let (mut depth, mut brace) = (0usize, 0usize);
        let mut j = lo;
        while j < n {
            let t = &self.toks[j];
            if t.kind == TokenKind::Other && depth == 0 && brace == 0 && j > lo {
                return (j, j);
            }
            match t.text.as_str() {
                "(" | "[" if t.kind == TokenKind::Punctuator => depth += 1,
                ")" | "]" if t.kind == TokenKind::Punctuator => depth = depth.saturating_sub(1),
                "{" if t.kind == TokenKind::Punctuator => {
                    // `list_for_each(pos, head) {` and similar macro loops
                    if depth == 0
                        && brace == 0
                        && j > lo
                        && self.punct_at(j - 1, ")")
                        && self.toks[lo].is_ident()
                    {
                        return (j, j);
                    }
                    brace += 1;
                }
                "}" if t.kind == TokenKind::Punctuator => {
                    if brace == 0 {
                        return (j, j);
                    }
                    brace -= 1;
                }
                ";" if t.kind == TokenKind::Punctuator && depth == 0 && brace == 0 => {
                    return (j, j + 1);
                }
                _ => {}
            }
            j += 1;
        }
        (n, n)
    }

    fn simple_statement(&mut self) -> AstId {
        let lo = self.pos;
        let (end, next) = self.scan_simple(lo);
        if end == lo {
            // Stray token such as `)`; consume it so parsing progresses.
            let next = next.max(lo + 1);
            self.pos = next;
            return self.opaque(lo, next);
        }
        self.pos = next;
        if next == end && self.punct_at(end, "{") {
            // macro loop header; the block that follows parses on its own
            return self.opaque(lo, end);
        }
        let parsed = if self.is_decl_start(lo, end) {
            self.declarators(lo, end)
                .map(|ds| self.push(AstKind::Decl, ds, (lo, next), ""))
        } else if let Some(k) = self.top_level_assign(lo, end) {
            let op = self.toks[k].text.clone();
            let mark = self.nodes.len();
            match (self.expr(lo, k), self.expr(k + 1, end)) {
                (Some(l), Some(r)) => Some(self.push(AstKind::Assign, vec![l, r], (lo, next), op)),
                _ => {
                    self.nodes.truncate(mark);
                    None
                }
            }
        } else {
            self.expr(lo, end)
                .map(|e| self.push(AstKind::ExprStmt, vec![e], (lo, next), ""))
        };
        parsed.unwrap_or_else(|| self.opaque(lo, next))
    }

    fn top_level_assign(&self, lo: usize, hi: usize) -> Option<usize> {
        let mut depth = 0usize;
        for i in lo..hi {
            let t = &self.toks[i];
            if t.kind != TokenKind::Punctuator {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth = depth.saturating_sub(1),
                "?" if depth == 0 => return None,
                op if depth == 0 && ASSIGN_OPS.contains(&op) => return Some(i),
                _ => {}
            }
        }
        None
    }

    fn is_decl_start(&self, lo: usize, hi: usize) -> bool {
        if self.is_type_start(lo) {
            return true;
        }
        if !self.tok(lo).is_some_and(Token::is_ident) || lo + 1 >= hi {
            return false;
        }
        // `size_t n ...`
        if self.toks[lo + 1].is_ident() {
            return true;
        }
        // `foo_t *p = ...`
        let mut i = lo + 1;
        while i < hi && self.punct_at(i, "*") {
            i += 1;
        }
        i > lo + 1
            && i < hi
            && self.toks[i].is_ident()
            && (i + 1 == hi || ["=", ",", "["].iter().any(|p| self.punct_at(i + 1, p)))
    }

    /// The declared name in a declarator token range.
    fn declarator_name(&self, lo: usize, hi: usize) -> Option<usize> {
        let mut depth = 0usize;
        let mut last = None;
        for i in lo..hi {
            let t = &self.toks[i];
            if t.is_punct("(") && self.punct_at(i + 1, "*") {
                // function pointer: `(*name)(...)`
                if let Some(j) = (i + 2..hi).find(|&j| self.toks[j].is_ident()) {
                    return Some(j);
                }
            }
            if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
                depth += 1;
            } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
                depth = depth.saturating_sub(1);
            } else if depth == 0 && t.is_ident() {
                last = Some(i);
            }
        }
        last
    }

    fn split_top_level(&self, lo: usize, hi: usize, sep: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut depth = 0usize;
        let mut start = lo;
        for i in lo..hi {
            let t = &self.toks[i];
            if t.kind != TokenKind::Punctuator {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth = depth.saturating_sub(1),
                s if s == sep && depth == 0 => {
                    out.push((start, i));
                    start = i + 1;
                }
                _ => {}
            }
        }
        out.push((start, hi));
        out
    }

    /// Declarators of a declaration, each an lvalue-shaped expression or an
    /// `Assign` of one to its initializer.
    fn declarators(&mut self, lo: usize, hi: usize) -> Option<Vec<AstId>> {
        let mark = self.nodes.len();
        let mut out = Vec::new();
        for (ci, (clo, chi)) in self.split_top_level(lo, hi, ",").into_iter().enumerate() {
            let eq = (clo..chi).find(|&i| self.punct_at(i, "=") && self.depth_zero(clo, i));
            let decl_hi = eq.unwrap_or(chi);
            let Some(name) = self.declarator_name(clo, decl_hi) else {
                self.nodes.truncate(mark);
                return None;
            };
            let start = if ci == 0 {
                let mut s = name;
                while s > clo
                    && (self.punct_at(s - 1, "*") || (self.punct_at(s - 1, "(") && self.punct_at(s, "*")))
                {
                    s -= 1;
                }
                s
            } else {
                clo
            };
            let declarator = match self.expr(start, decl_hi) {
                Some(d) => d,
                None => {
                    let text = self.toks[name].text.clone();
                    self.push(AstKind::Ident, Vec::new(), (name, name + 1), text)
                }
            };
            let node = match eq {
                Some(e) => {
                    let init = match self.expr(e + 1, chi) {
                        Some(i) => i,
                        None => self.flattened(e + 1, chi),
                    };
                    self.push(AstKind::Assign, vec![declarator, init], (start, chi), "=")
                }
                None => declarator,
            };
            out.push(node);
        }
        Some(out)
    }

    fn depth_zero(&self, lo: usize, at: usize) -> bool {
        let mut depth = 0i32;
        for i in lo..at {
            let t = &self.toks[i];
            if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
                depth += 1;
            } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
                depth -= 1;
            }
        }
        depth == 0
    }

    /// Parses `( ... )` at `self.pos`; returns the expression and the index
    /// of the closing paren, or `None` when there is no parenthesized header.
    fn paren_header(&mut self) -> Option<(AstId, usize)> {
        if !self.punct_at(self.pos, "(") {
            return None;
        }
        let close = self.find_close(self.pos, self.toks.len())?;
        let cond = match self.expr(self.pos + 1, close) {
            Some(c) => c,
            None => self.flattened(self.pos + 1, close),
        };
        Some((cond, close))
    }

    fn if_statement(&mut self) -> AstId {
        let lo = self.pos;
        self.pos += 1;
        let Some((cond, close)) = self.paren_header() else {
            let end = self.scan_opaque(lo);
            self.pos = end;
            return self.opaque(lo, end);
        };
        self.pos = close + 1;
        let then = self.sub_statement();
        let mut children = vec![cond, then];
        if self.keyword_at(self.pos, "else") {
            self.pos += 1;
            children.push(self.sub_statement());
        }
        self.push(AstKind::If, children, (lo, close + 1), "")
    }

    fn while_statement(&mut self) -> AstId {
        let lo = self.pos;
        self.pos += 1;
        let Some((cond, close)) = self.paren_header() else {
            let end = self.scan_opaque(lo);
            self.pos = end;
            return self.opaque(lo, end);
        };
        self.pos = close + 1;
        let body = self.sub_statement();
        self.push(AstKind::While, vec![cond, body], (lo, close + 1), "")
    }

    fn for_statement(&mut self) -> AstId {
        let lo = self.pos;
        self.pos += 1;
        let open = self.pos;
        let close = match self.punct_at(open, "(") {
            true => self.find_close(open, self.toks.len()),
            false => None,
        };
        let Some(close) = close else {
            let end = self.scan_opaque(lo);
            self.pos = end;
            return self.opaque(lo, end);
        };
        let parts = self.split_top_level(open + 1, close, ";");
        let mut header = Vec::new();
        if parts.len() == 3 {
            let (ilo, ihi) = parts[0];
            if ilo < ihi {
                if self.is_decl_start(ilo, ihi) {
                    match self.declarators(ilo, ihi) {
                        Some(ds) => header.extend(ds),
                        None => header.push(self.flattened(ilo, ihi)),
                    }
                } else {
                    header.push(self.expr(ilo, ihi).unwrap_or_else(|| self.flattened(ilo, ihi)));
                }
            }
            for &(plo, phi) in &parts[1..] {
                if plo < phi {
                    header.push(self.expr(plo, phi).unwrap_or_else(|| self.flattened(plo, phi)));
                }
            }
        } else {
            header.push(self.flattened(open + 1, close));
        }
        self.pos = close + 1;
        let body = self.sub_statement();
        header.push(body);
        self.push(AstKind::For, header, (lo, close + 1), "")
    }

    fn return_statement(&mut self) -> AstId {
        let lo = self.pos;
        let (end, next) = self.scan_simple(lo + 1);
        self.pos = next.max(lo + 1);
        if end <= lo + 1 {
            return self.push(AstKind::Return, Vec::new(), (lo, self.pos), "");
        }
        match self.expr(lo + 1, end) {
            Some(e) => self.push(AstKind::Return, vec![e], (lo, self.pos), ""),
            None => self.opaque(lo, self.pos),
        }
    }

    // ---- expressions ------------------------------------------------------

    /// Parses exactly the tokens `lo..hi` as an expression. On failure the
    /// node arena is rolled back.
    fn expr(&mut self, lo: usize, hi: usize) -> Option<AstId> {
        if lo >= hi {
            return None;
        }
        let mark = self.nodes.len();
        let mut c = ExprCursor { i: lo, hi };
        let result = self.comma(&mut c).filter(|_| c.i == hi);
        if result.is_none() {
            self.nodes.truncate(mark);
        }
        result
    }

    fn at(&self, c: &ExprCursor) -> Option<&'t Token> {
        if c.i < c.hi {
            self.toks.get(c.i)
        } else {
            None
        }
    }

    fn at_punct(&self, c: &ExprCursor, p: &str) -> bool {
        self.at(c).is_some_and(|t| t.is_punct(p))
    }

    fn comma(&mut self, c: &mut ExprCursor) -> Option<AstId> {
        let start = c.i;
        let mut left = self.assignment(c)?;
        while self.at_punct(c, ",") {
            c.i += 1;
            let right = self.assignment(c)?;
            left = self.push(AstKind::BinOp, vec![left, right], (start, c.i), ",");
        }
        Some(left)
    }

    fn assignment(&mut self, c: &mut ExprCursor) -> Option<AstId> {
        let start = c.i;
        let lhs = self.conditional(c)?;
        if let Some(t) = self.at(c) {
            if t.kind == TokenKind::Punctuator && ASSIGN_OPS.contains(&t.text.as_str()) {
                let op = t.text.clone();
                c.i += 1;
                let rhs = self.assignment(c)?;
                return Some(self.push(AstKind::Assign, vec![lhs, rhs], (start, c.i), op));
            }
        }
        Some(lhs)
    }

    fn conditional(&mut self, c: &mut ExprCursor) -> Option<AstId> {
        let start = c.i;
        let cond = self.binary(c, 1)?;
        if !self.at_punct(c, "?") {
            return Some(cond);
        }
        c.i += 1;
        let then = self.comma(c)?;
        if !self.at_punct(c, ":") {
            return None;
        }
        c.i += 1;
        let other = self.conditional(c)?;
        Some(self.push(AstKind::BinOp, vec![cond, then, other], (start, c.i), "?:"))
    }

    fn binary(&mut self, c: &mut ExprCursor, min_prec: u8) -> Option<AstId> {
        let start = c.i;
        let mut left = self.unary(c)?;
        while let Some(t) = self.at(c) {
            if t.kind != TokenKind::Punctuator {
                break;
            }
            let Some(prec) = binary_precedence(&t.text) else {
                break;
            };
            if prec < min_prec {
                break;
            }
            let op = t.text.clone();
            c.i += 1;
            let right = self.binary(c, prec + 1)?;
            left = self.push(AstKind::BinOp, vec![left, right], (start, c.i), op);
        }
        Some(left)
    }

    fn is_cast(&self, c: &ExprCursor) -> Option<usize> {
        if !self.at_punct(c, "(") {
            return None;
        }
        let close = self.find_close(c.i, c.hi)?;
        if self.is_type_start(c.i + 1) {
            return Some(close);
        }
        // `(size_t)x`, `(foo_t *)p`
        let inner_ok =
            self.tok(c.i + 1).is_some_and(Token::is_ident) && (c.i + 2..close).all(|k| self.punct_at(k, "*"));
        let followed = close + 1 < c.hi
            && self.tok(close + 1).is_some_and(|t| {
                matches!(
                    t.kind,
                    TokenKind::Identifier | TokenKind::Number | TokenKind::String
                ) || t.is_punct("(")
            });
        (inner_ok && followed).then_some(close)
    }

    fn unary(&mut self, c: &mut ExprCursor) -> Option<AstId> {
        let start = c.i;
        let t = self.at(c)?;
        if t.kind == TokenKind::Punctuator
            && matches!(t.text.as_str(), "-" | "+" | "!" | "~" | "*" | "&" | "++" | "--")
        {
            let op = t.text.clone();
            c.i += 1;
            let operand = self.unary(c)?;
            return Some(self.push(AstKind::UnaryOp, vec![operand], (start, c.i), op));
        }
        if t.is_keyword("sizeof") || t.is_keyword("_Alignof") {
            let op = t.text.clone();
            c.i += 1;
            let operand = if self.at_punct(c, "(") && self.is_type_start(c.i + 1) {
                let close = self.find_close(c.i, c.hi)?;
                let leaf = self.push(
                    AstKind::Literal,
                    Vec::new(),
                    (c.i + 1, close),
                    self.code(c.i + 1, close),
                );
                c.i = close + 1;
                leaf
            } else {
                self.unary(c)?
            };
            return Some(self.push(AstKind::UnaryOp, vec![operand], (start, c.i), op));
        }
        if let Some(close) = self.is_cast(c) {
            c.i = close + 1;
            let operand = self.unary(c)?;
            return Some(self.push(AstKind::UnaryOp, vec![operand], (start, c.i), "cast"));
        }
        self.postfix(c)
    }

    fn postfix(&mut self, c: &mut ExprCursor) -> Option<AstId> {
        let start = c.i;
        let mut e = self.primary(c)?;
        while let Some(t) = self.at(c) {
            if t.kind != TokenKind::Punctuator {
                break;
            }
            match t.text.as_str() {
                "(" => {
                    let close = self.find_close(c.i, c.hi)?;
                    let mut children = vec![e];
                    if close > c.i + 1 {
                        for (alo, ahi) in self.split_top_level(c.i + 1, close, ",") {
                            let arg = match self.sub_expr(alo, ahi) {
                                Some(a) => a,
                                None if alo < ahi => self.flattened(alo, ahi),
                                None => return None,
                            };
                            children.push(arg);
                        }
                    }
                    let callee = &self.nodes[e];
                    let name = if callee.kind == AstKind::Ident {
                        callee.op.clone()
                    } else {
                        String::new()
                    };
                    c.i = close + 1;
                    e = self.push(AstKind::Call, children, (start, c.i), name);
                }
                "[" => {
                    let close = self.find_close(c.i, c.hi)?;
                    let idx = self.sub_expr(c.i + 1, close)?;
                    c.i = close + 1;
                    e = self.push(AstKind::BinOp, vec![e, idx], (start, c.i), "[]");
                }
                "." | "->" => {
                    let op = t.text.clone();
                    let field = self.tok(c.i + 1).filter(|f| f.is_ident() && c.i + 1 < c.hi)?;
                    let fname = field.text.clone();
                    let f = self.push(AstKind::Ident, Vec::new(), (c.i + 1, c.i + 2), fname);
                    c.i += 2;
                    e = self.push(AstKind::BinOp, vec![e, f], (start, c.i), op);
                }
                "++" | "--" => {
                    let op = format!("p{}", t.text);
                    c.i += 1;
                    e = self.push(AstKind::UnaryOp, vec![e], (start, c.i), op);
                }
                _ => break,
            }
        }
        Some(e)
    }

    /// A nested expression over an exact sub-range, without disturbing the
    /// enclosing cursor.
    fn sub_expr(&mut self, lo: usize, hi: usize) -> Option<AstId> {
        self.expr(lo, hi)
    }

    fn primary(&mut self, c: &mut ExprCursor) -> Option<AstId> {
        let start = c.i;
        let t = self.at(c)?;
        match t.kind {
            TokenKind::Identifier => {
                c.i += 1;
                Some(self.push(AstKind::Ident, Vec::new(), (start, c.i), t.text.clone()))
            }
            TokenKind::Number => {
                c.i += 1;
                Some(self.push(AstKind::Literal, Vec::new(), (start, c.i), t.text.clone()))
            }
            TokenKind::String => {
                // adjacent literals concatenate
                while self.at(c).is_some_and(|t| t.kind == TokenKind::String) {
                    c.i += 1;
                }
                let text = self.code(start, c.i);
                Some(self.push(AstKind::Literal, Vec::new(), (start, c.i), text))
            }
            TokenKind::Keyword if TYPE_START.contains(&t.text.as_str()) => {
                // A type name in argument position, as in `va_arg(ap, int)`.
                while let Some(t) = self.at(c) {
                    let tagged = c.i > start
                        && self.tok(c.i - 1).is_some_and(|p| {
                            p.is_keyword("struct") || p.is_keyword("union") || p.is_keyword("enum")
                        });
                    if (t.kind == TokenKind::Keyword && TYPE_START.contains(&t.text.as_str()))
                        || (tagged && t.is_ident())
                        || (c.i > start && t.is_punct("*"))
                    {
                        c.i += 1;
                    } else {
                        break;
                    }
                }
                let text = self.code(start, c.i);
                Some(self.push(AstKind::Literal, Vec::new(), (start, c.i), text))
            }
            TokenKind::Punctuator if t.text == "(" => {
                let close = self.find_close(c.i, c.hi)?;
                let inner = self.sub_expr(c.i + 1, close)?;
                c.i = close + 1;
                Some(inner)
            }
            TokenKind::Punctuator if t.text == "{" => {
                let close = self.find_close(c.i, c.hi)?;
                let mut elems = Vec::new();
                if close > c.i + 1 {
                    for (elo, ehi) in self.split_top_level(c.i + 1, close, ",") {
                        if elo == ehi {
                            continue; // trailing comma
                        }
                        // skip designators: `.field =` or `[idx] =`
                        let vlo = match (elo..ehi).find(|&k| self.punct_at(k, "=") && self.depth_zero(elo, k))
                        {
                            Some(k) if self.punct_at(elo, ".") || self.punct_at(elo, "[") => k + 1,
                            _ => elo,
                        };
                        let v = match self.sub_expr(vlo, ehi) {
                            Some(v) => v,
                            None => self.flattened(vlo, ehi),
                        };
                        elems.push(v);
                    }
                }
                c.i = close + 1;
                Some(self.push(AstKind::UnaryOp, elems, (start, c.i), "{}"))
            }
            _ => None,
        }
    }
}

struct ExprCursor {
    i: usize,
    hi: usize,
}
