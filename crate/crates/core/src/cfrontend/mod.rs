//! C front end: tokenizer, total parser and statement-level def/use sets.

mod access;
mod ast;
mod lexer;
mod parser;

pub use access::{statement_access, Access};
pub use ast::{Ast, AstId, AstKind, AstNode, FunctionDef};
pub use lexer::{tokenize, Token, TokenKind, KEYWORDS};
pub use parser::{collect_functions, parse_source, parse_unit};

/// True for kinds that form statement nodes in the graphs.
pub fn is_statement_kind(kind: AstKind) -> bool {
    matches!(
        kind,
        AstKind::Decl
            | AstKind::ExprStmt
            | AstKind::Assign
            | AstKind::If
            | AstKind::While
            | AstKind::For
            | AstKind::Return
            | AstKind::Break
            | AstKind::Continue
            | AstKind::OpaqueStmt
    )
}
