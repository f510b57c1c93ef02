use serde::{Deserialize, Serialize};

pub type AstId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AstKind {
    TranslationUnit,
    FunctionDef,
    ParamList,
    Block,
    Decl,
    ExprStmt,
    Assign,
    Call,
    If,
    While,
    For,
    Return,
    Break,
    Continue,
    OpaqueStmt,
    Ident,
    Literal,
    BinOp,
    UnaryOp,
}

impl AstKind {
    pub const ALL: [AstKind; 19] = [
        AstKind::TranslationUnit,
        AstKind::FunctionDef,
        AstKind::ParamList,
        AstKind::Block,
        AstKind::Decl,
        AstKind::ExprStmt,
        AstKind::Assign,
        AstKind::Call,
        AstKind::If,
        AstKind::While,
        AstKind::For,
        AstKind::Return,
        AstKind::Break,
        AstKind::Continue,
        AstKind::OpaqueStmt,
        AstKind::Ident,
        AstKind::Literal,
        AstKind::BinOp,
        AstKind::UnaryOp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AstKind::TranslationUnit => "TranslationUnit",
            AstKind::FunctionDef => "FunctionDef",
            AstKind::ParamList => "ParamList",
            AstKind::Block => "Block",
            AstKind::Decl => "Decl",
            AstKind::ExprStmt => "ExprStmt",
            AstKind::Assign => "Assign",
            AstKind::Call => "Call",
            AstKind::If => "If",
            AstKind::While => "While",
            AstKind::For => "For",
            AstKind::Return => "Return",
            AstKind::Break => "Break",
            AstKind::Continue => "Continue",
            AstKind::OpaqueStmt => "OpaqueStmt",
            AstKind::Ident => "Ident",
            AstKind::Literal => "Literal",
            AstKind::BinOp => "BinOp",
            AstKind::UnaryOp => "UnaryOp",
        }
    }

    pub fn from_name(name: &str) -> Option<AstKind> {
        AstKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: AstId,
    pub kind: AstKind,
    pub children: Vec<AstId>,
    pub line_span: (u32, u32),
    /// Source tokens of the node joined by single spaces. For control
    /// statements this is the header only (`if ( c )`), not the body.
    pub code: String,
    /// Operator, callee or identifier name, depending on the kind.
    pub op: String,
}

/// A parsed file: an arena of nodes rooted at a `TranslationUnit`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ast {
    pub file: String,
    pub nodes: Vec<AstNode>,
    pub root: AstId,
    pub warnings: Vec<String>,
}

impl Ast {
    pub fn node(&self, id: AstId) -> &AstNode {
        &self.nodes[id]
    }

    pub fn kind(&self, id: AstId) -> AstKind {
        self.nodes[id].kind
    }

    /// Expression children that belong to a statement's own header, i.e.
    /// everything except nested statements.
    pub fn header_children(&self, stmt: AstId) -> &[AstId] {
        let n = &self.nodes[stmt];
        match n.kind {
            AstKind::If | AstKind::While => &n.children[..1.min(n.children.len())],
            AstKind::For => &n.children[..n.children.len().saturating_sub(1)],
            _ => &n.children,
        }
    }

    /// Nested statements directly under a statement or block.
    pub fn nested_statements(&self, stmt: AstId) -> &[AstId] {
        let n = &self.nodes[stmt];
        match n.kind {
            AstKind::Block => &n.children,
            AstKind::If | AstKind::While => &n.children[1.min(n.children.len())..],
            AstKind::For => &n.children[n.children.len().saturating_sub(1)..],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
    /// The `FunctionDef` AST node.
    pub node: AstId,
    /// The body `Block`.
    pub body: AstId,
    pub file: String,
    pub line_span: (u32, u32),
}
