use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    String,
    Punctuator,
    /// Preprocessor directives and unrecognized characters.
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub line: u32,
    pub col: u32,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuator && self.text == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == k
    }

    pub fn is_ident(&self) -> bool {
        self.kind == TokenKind::Identifier
    }
}

pub const KEYWORDS: &[&str] = &[
    "auto",
    "break",
    "case",
    "char",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "register",
    "restrict",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "_Alignas",
    "_Alignof",
    "_Atomic",
    "_Bool",
    "_Complex",
    "_Generic",
    "_Imaginary",
    "_Noreturn",
    "_Static_assert",
    "_Thread_local",
];

// Longest first so that maximal munch falls out of a linear scan.
const PUNCTUATORS: &[&str] = &[
    ">>=", "<<=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "*=", "/=", "%=",
    "+=", "-=", "&=", "^=", "|=", "##", "[", "]", "(", ")", "{", "}", ".", "&", "*", "+", "-", "~", "!", "/",
    "%", "<", ">", "^", "|", "?", ":", ";", "=", ",", "#",
];

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
}

impl Cursor {
    fn new(src: &str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(i, c)| self.peek(i) == Some(c))
    }

    /// True when only whitespace precedes the cursor on its line.
    fn at_line_start(&self) -> bool {
        let mut i = self.pos;
        while i > 0 {
            match self.chars[i - 1] {
                '\n' => return true,
                ' ' | '\t' | '\r' | '\x0c' => i -= 1,
                _ => return false,
            }
        }
        true
    }
}

/// Splits C source into tokens. Never fails: anything unrecognized becomes
/// an [`TokenKind::Other`] token and unterminated literals stop at the line end.
pub fn tokenize(src: &str) -> Vec<Token> {
    let mut cur = Cursor::new(src);
    let mut out = Vec::new();
    while let Some(c) = cur.peek(0) {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if cur.starts_with("//") {
            while let Some(c) = cur.peek(0) {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            continue;
        }
        if cur.starts_with("/*") {
            cur.bump();
            cur.bump();
            while cur.peek(0).is_some() && !cur.starts_with("*/") {
                cur.bump();
            }
            cur.bump();
            cur.bump();
            continue;
        }

        let (line, col) = (cur.line, cur.col);
        let start = cur.pos;
        let kind = if c == '#' && cur.at_line_start() {
            lex_directive(&mut cur);
            TokenKind::Other
        } else if c.is_ascii_alphabetic() || c == '_' {
            while matches!(cur.peek(0), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                cur.bump();
            }
            let word: String = cur.chars[start..cur.pos].iter().collect();
            if matches!(word.as_str(), "L" | "u" | "U" | "u8")
                && matches!(cur.peek(0), Some('"') | Some('\''))
            {
                let q = cur.bump().unwrap();
                lex_quoted(&mut cur, q);
                TokenKind::String
            } else if KEYWORDS.contains(&word.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit() || (c == '.' && matches!(cur.peek(1), Some(d) if d.is_ascii_digit())) {
            lex_number(&mut cur);
            TokenKind::Number
        } else if c == '"' || c == '\'' {
            cur.bump();
            lex_quoted(&mut cur, c);
            TokenKind::String
        } else if let Some(p) = PUNCTUATORS.iter().find(|p| cur.starts_with(p)) {
            for _ in 0..p.len() {
                cur.bump();
            }
            TokenKind::Punctuator
        } else {
            cur.bump();
            TokenKind::Other
        };

        let raw: String = cur.chars[start..cur.pos].iter().collect();
        let text = if kind == TokenKind::Other {
            normalize_directive(&raw)
        } else {
            raw
        };
        out.push(Token {
            kind,
            text,
            line,
            col,
        });
    }
    out
}

fn lex_directive(cur: &mut Cursor) {
    while let Some(c) = cur.peek(0) {
        if c == '\\' && matches!(cur.peek(1), Some('\n')) {
            cur.bump();
            cur.bump();
            continue;
        }
        if c == '\\' && cur.peek(1) == Some('\r') && cur.peek(2) == Some('\n') {
            cur.bump();
            cur.bump();
            cur.bump();
            continue;
        }
        if c == '\n' {
            break;
        }
        cur.bump();
    }
}

fn normalize_directive(raw: &str) -> String {
    raw.replace("\\\r\n", " ")
        .replace("\\\n", " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn lex_number(cur: &mut Cursor) {
    let hex = cur.peek(0) == Some('0') && matches!(cur.peek(1), Some('x') | Some('X'));
    while let Some(c) = cur.peek(0) {
        if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
            let exp = if hex {
                matches!(c, 'p' | 'P')
            } else {
                matches!(c, 'e' | 'E')
            };
            cur.bump();
            if exp && matches!(cur.peek(0), Some('+') | Some('-')) {
                cur.bump();
            }
        } else {
            break;
        }
    }
}

fn lex_quoted(cur: &mut Cursor, quote: char) {
    while let Some(c) = cur.peek(0) {
        if c == '\n' {
            // Unterminated literal; stop at the line end.
            return;
        }
        cur.bump();
        if c == '\\' {
            cur.bump();
        } else if c == quote {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_texts(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src).into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn simple_declaration() {
        use TokenKind::*;
        assert_eq!(
            kinds_texts("int a = 1;"),
            vec![
                (Keyword, "int".into()),
                (Identifier, "a".into()),
                (Punctuator, "=".into()),
                (Number, "1".into()),
                (Punctuator, ";".into()),
            ]
        );
    }

    #[test]
    fn comments_are_elided() {
        assert_eq!(kinds_texts("/*x*/ y"), vec![(TokenKind::Identifier, "y".into())]);
        assert_eq!(kinds_texts("a // tail\nb").len(), 2);
    }

    #[test]
    fn preprocessor_line_is_one_token() {
        let toks = tokenize("#include <stdio.h>\nint x;");
        assert_eq!(toks[0].kind, TokenKind::Other);
        assert_eq!(toks[0].text, "#include <stdio.h>");
        assert_eq!(toks[1].line, 2);

        let toks = tokenize("#define M(a) \\\n  (a + 1)\nM(2);");
        assert_eq!(toks[0].text, "#define M(a) (a + 1)");
        assert_eq!(toks[1].line, 3);
    }

    #[test]
    fn literals_stay_atomic() {
        let toks = tokenize(r#"s = "a \"b\" ; c"; ch = ';'; w = L"x";"#);
        let strings: Vec<_> = toks
            .iter()
            .filter(|t| t.kind == TokenKind::String)
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(strings, vec![r#""a \"b\" ; c""#, "';'", "L\"x\""]);
    }

    #[test]
    fn maximal_munch_and_positions() {
        let toks = tokenize("a>>=b->c\n  x...");
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["a", ">>=", "b", "->", "c", "x", "..."]);
        assert_eq!((toks[5].line, toks[5].col), (2, 3));
        let nums = tokenize("0x1fUL 1.5e-3 .5");
        assert!(nums.iter().all(|t| t.kind == TokenKind::Number));
        assert_eq!(nums.len(), 3);
    }

    #[test]
    fn total_on_garbage() {
        let toks = tokenize("@ `\u{1F600} \"unterminated\n'x");
        assert!(!toks.is_empty());
    }
}
