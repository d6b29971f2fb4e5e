//! C expression parser that folds everything outside the equation grammar
//! into macro-variable atoms.

use std::collections::{BTreeMap, HashMap};

use super::expr::{fold_constants, BinaryOp, Expr, UnaryOp};
use super::lexer::{Token, TokenKind};
use super::VerifyError;

/// Decompiler helpers that behave like casts or bit-field reads.
const ATOM_CALLS: &[&str] = &[
    "LOBYTE", "HIBYTE", "LOWORD", "HIWORD", "LODWORD", "HIDWORD", "BYTE1", "BYTE2", "BYTE3",
    "BYTE4", "BYTE5", "BYTE6", "BYTE7", "WORD1", "WORD2", "WORD3", "SLOBYTE", "SHIBYTE",
    "SLOWORD", "SHIWORD", "SLODWORD", "SHIDWORD", "SBYTE1", "SBYTE2", "SBYTE3", "SWORD1",
];

const TYPE_NAMES: &[&str] = &[
    "_BYTE", "_WORD", "_DWORD", "_QWORD", "_OWORD", "_BOOL1", "_BOOL2", "_BOOL4", "_BOOL8",
    "BYTE", "WORD", "DWORD", "QWORD", "BOOL",
];

const TYPE_KEYWORDS: &[&str] = &[
    "int", "char", "short", "long", "unsigned", "signed", "void", "float", "double", "const",
    "volatile", "struct", "union", "enum", "bool", "_Bool", "__int8", "__int16", "__int32",
    "__int64", "__int128",
];

fn is_type_word(t: &Token) -> bool {
    match t.kind {
        TokenKind::Keyword => TYPE_KEYWORDS.contains(&t.lexeme.as_str()),
        TokenKind::Identifier => {
            TYPE_NAMES.contains(&t.lexeme.as_str()) || t.lexeme.ends_with("_t")
        }
        _ => false,
    }
}

/// Surface syntax node covering tokens `lo..hi`.
#[derive(Debug, Clone)]
struct Surface {
    kind: SKind,
    lo: usize,
    hi: usize,
}

#[derive(Debug, Clone)]
enum SKind {
    Int(u64),
    Ident(String),
    Literal(String),
    Paren(Box<Surface>),
    Cast(Box<Surface>),
    Unary(&'static str, Box<Surface>),
    Binary(BinaryOp, Box<Surface>, Box<Surface>),
    Call(Box<Surface>, Vec<Surface>),
    /// Member access, indexing, postfix/prefix increments, sizeof, ternary,
    /// assignment, comma: anything that always becomes an atom.
    Opaque,
}

/// Assignment operators recognized at statement level.
pub const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="];

struct P<'t> {
    toks: &'t [Token],
    pos: usize,
    strict: bool,
}

type PResult<T> = Result<T, VerifyError>;

impl<'t> P<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.toks.get(self.pos)
    }

    fn at(&self, i: usize) -> Option<&'t Token> {
        self.toks.get(i)
    }

    fn err(&self, what: &str) -> VerifyError {
        VerifyError::Parse(format!(
            "{what} at token {} in `{}`",
            self.pos,
            super::lexer::render_tokens(self.toks)
        ))
    }

    fn unsupported(&self, op: &str) -> PResult<Surface> {
        Err(VerifyError::UnsupportedOperator(op.to_string()))
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        match self.peek() {
            Some(t) if t.is_punct(p) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(&format!("expected `{p}`"))),
        }
    }

    /// comma-expression
    fn expr(&mut self) -> PResult<Surface> {
        let lo = self.pos;
        let first = self.assign()?;
        if self.peek().is_some_and(|t| t.is_punct(",")) {
            if self.strict {
                return self.unsupported(",");
            }
            while self.peek().is_some_and(|t| t.is_punct(",")) {
                self.pos += 1;
                self.assign()?;
            }
            return Ok(Surface {
                kind: SKind::Opaque,
                lo,
                hi: self.pos,
            });
        }
        Ok(first)
    }

    fn assign(&mut self) -> PResult<Surface> {
        let lo = self.pos;
        let lhs = self.ternary()?;
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Operator && ASSIGN_OPS.contains(&t.lexeme.as_str()) {
                if self.strict {
                    return self.unsupported(&t.lexeme.clone());
                }
                self.pos += 1;
                self.assign()?;
                return Ok(Surface {
                    kind: SKind::Opaque,
                    lo,
                    hi: self.pos,
                });
            }
        }
        Ok(lhs)
    }

    fn ternary(&mut self) -> PResult<Surface> {
        let lo = self.pos;
        let cond = self.binary(1)?;
        if self.peek().is_some_and(|t| t.is_op("?")) {
            if self.strict {
                return self.unsupported("?:");
            }
            self.pos += 1;
            self.expr()?;
            match self.peek() {
                Some(t) if t.is_op(":") => self.pos += 1,
                _ => return Err(self.err("expected `:`")),
            }
            self.ternary()?;
            return Ok(Surface {
                kind: SKind::Opaque,
                lo,
                hi: self.pos,
            });
        }
        Ok(cond)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Surface> {
        let lo = self.pos;
        let mut lhs = self.unary()?;
        loop {
            let Some(t) = self.peek() else { break };
            if t.kind != TokenKind::Operator {
                break;
            }
            let Some(op) = BinaryOp::from_symbol(&t.lexeme) else {
                break;
            };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(prec + 1)?;
            lhs = Surface {
                kind: SKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                lo,
                hi: self.pos,
            };
        }
        Ok(lhs)
    }

    fn looks_like_cast(&self) -> Option<usize> {
        // `(` type-words `*`* `)` followed by an operand start
        let mut i = self.pos + 1;
        let mut saw_type = false;
        while let Some(t) = self.at(i) {
            if is_type_word(t) {
                saw_type = true;
                i += 1;
            } else if saw_type && t.kind == TokenKind::Identifier {
                // `struct foo`, `unsigned foo_t`
                if self.at(i - 1).is_some_and(|p| {
                    p.is_keyword("struct") || p.is_keyword("union") || p.is_keyword("enum")
                }) {
                    i += 1;
                } else {
                    return None;
                }
            } else if t.kind == TokenKind::Identifier
                && !saw_type
                && self.at(i + 1).is_some_and(|n| n.is_op("*"))
            {
                // `(SSL *)`
                saw_type = true;
                i += 1;
            } else {
                break;
            }
        }
        if !saw_type {
            return None;
        }
        while self.at(i).is_some_and(|t| t.is_op("*")) {
            i += 1;
        }
        if !self.at(i).is_some_and(|t| t.is_punct(")")) {
            return None;
        }
        let next = self.at(i + 1)?;
        let starts_operand = matches!(
            next.kind,
            TokenKind::Identifier
                | TokenKind::IntLiteral
                | TokenKind::FloatLiteral
                | TokenKind::CharLiteral
                | TokenKind::StringLiteral
        ) || next.is_punct("(")
            || next.is_keyword("sizeof")
            || (next.kind == TokenKind::Operator
                && matches!(next.lexeme.as_str(), "*" | "&" | "!" | "~" | "-" | "+" | "++" | "--"));
        starts_operand.then_some(i + 1)
    }

    fn unary(&mut self) -> PResult<Surface> {
        let lo = self.pos;
        let Some(t) = self.peek() else {
            return Err(self.err("unexpected end of expression"));
        };
        if t.kind == TokenKind::Operator {
            let op: Option<&'static str> = match t.lexeme.as_str() {
                "!" => Some("!"),
                "~" => Some("~"),
                "-" => Some("-"),
                "+" => Some("+"),
                "*" => Some("*"),
                "&" => Some("&"),
                "++" => Some("++"),
                "--" => Some("--"),
                _ => None,
            };
            if let Some(op) = op {
                if self.strict && matches!(op, "*" | "&" | "++" | "--") {
                    return self.unsupported(op);
                }
                self.pos += 1;
                let inner = self.unary()?;
                return Ok(Surface {
                    kind: SKind::Unary(op, Box::new(inner)),
                    lo,
                    hi: self.pos,
                });
            }
        }
        if t.is_keyword("sizeof") {
            if self.strict {
                return self.unsupported("sizeof");
            }
            self.pos += 1;
            if self.peek().is_some_and(|t| t.is_punct("(")) {
                self.skip_group()?;
            } else {
                self.unary()?;
            }
            return Ok(Surface {
                kind: SKind::Opaque,
                lo,
                hi: self.pos,
            });
        }
        if t.is_punct("(") {
            if let Some(after) = self.looks_like_cast() {
                if self.strict {
                    return self.unsupported("cast");
                }
                self.pos = after;
                let inner = self.unary()?;
                return Ok(Surface {
                    kind: SKind::Cast(Box::new(inner)),
                    lo,
                    hi: self.pos,
                });
            }
        }
        self.postfix()
    }

    fn skip_group(&mut self) -> PResult<()> {
        let mut depth = 0i64;
        while let Some(t) = self.peek() {
            self.pos += 1;
            if t.is_punct("(") || t.is_punct("[") {
                depth += 1;
            } else if t.is_punct(")") || t.is_punct("]") {
                depth -= 1;
                if depth == 0 {
                    return Ok(());
                }
            }
        }
        Err(self.err("unbalanced parentheses"))
    }

    fn postfix(&mut self) -> PResult<Surface> {
        let lo = self.pos;
        let mut node = self.primary()?;
        loop {
            let Some(t) = self.peek() else { break };
            if t.is_punct("(") {
                self.pos += 1;
                let mut args = Vec::new();
                if !self.peek().is_some_and(|t| t.is_punct(")")) {
                    loop {
                        args.push(self.assign()?);
                        if self.peek().is_some_and(|t| t.is_punct(",")) {
                            self.pos += 1;
                            continue;
                        }
                        break;
                    }
                }
                self.expect_punct(")")?;
                if self.strict {
                    return self.unsupported("call");
                }
                node = Surface {
                    kind: SKind::Call(Box::new(node), args),
                    lo,
                    hi: self.pos,
                };
            } else if t.is_punct("[") {
                if self.strict {
                    return self.unsupported("[]");
                }
                self.pos += 1;
                self.expr()?;
                self.expect_punct("]")?;
                node = Surface {
                    kind: SKind::Opaque,
                    lo,
                    hi: self.pos,
                };
            } else if t.is_op("->") || t.is_op(".") {
                if self.strict {
                    return self.unsupported(&t.lexeme.clone());
                }
                self.pos += 1;
                match self.peek() {
                    Some(n) if n.is_word() => self.pos += 1,
                    _ => return Err(self.err("expected member name")),
                }
                node = Surface {
                    kind: SKind::Opaque,
                    lo,
                    hi: self.pos,
                };
            } else if t.is_op("++") || t.is_op("--") {
                if self.strict {
                    return self.unsupported(&t.lexeme.clone());
                }
                self.pos += 1;
                node = Surface {
                    kind: SKind::Opaque,
                    lo,
                    hi: self.pos,
                };
            } else {
                break;
            }
        }
        Ok(node)
    }

    fn primary(&mut self) -> PResult<Surface> {
        let lo = self.pos;
        let Some(t) = self.peek() else {
            return Err(self.err("unexpected end of expression"));
        };
        self.pos += 1;
        let kind = match t.kind {
            TokenKind::IntLiteral | TokenKind::CharLiteral => SKind::Int(t.value.unwrap_or(0)),
            TokenKind::FloatLiteral | TokenKind::StringLiteral => {
                if self.strict {
                    return self.unsupported("literal");
                }
                // adjacent string literals concatenate
                let mut text = t.lexeme.clone();
                while self
                    .peek()
                    .is_some_and(|n| n.kind == TokenKind::StringLiteral && t.kind == n.kind)
                {
                    text.push(' ');
                    text.push_str(&self.peek().unwrap().lexeme);
                    self.pos += 1;
                }
                SKind::Literal(text)
            }
            TokenKind::Identifier => SKind::Ident(t.lexeme.clone()),
            TokenKind::Keyword if t.lexeme == "true" || t.lexeme == "false" => {
                SKind::Ident(t.lexeme.clone())
            }
            TokenKind::Punctuation if t.lexeme == "(" => {
                let inner = self.expr()?;
                self.expect_punct(")")?;
                SKind::Paren(Box::new(inner))
            }
            _ => {
                self.pos -= 1;
                return Err(self.err(&format!("unexpected `{}`", t.lexeme)));
            }
        };
        Ok(Surface {
            kind,
            lo,
            hi: self.pos,
        })
    }
}

/// Per-statement variable numbering: identical atom text reuses its index.
#[derive(Debug, Default, Clone)]
pub struct VarContext {
    index: HashMap<String, u32>,
    pub origin: BTreeMap<u32, String>,
    /// Read `xN` identifiers as variable N instead of numbering atoms.
    canonical: bool,
}

impl VarContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Context for re-reading canonical text, where `xN` already names a variable.
    pub fn canonical() -> Self {
        VarContext {
            canonical: true,
            ..Self::default()
        }
    }

    pub fn var_for(&mut self, text: String) -> Expr {
        if let Some(&n) = self.index.get(&text) {
            return Expr::Var(n);
        }
        if self.canonical {
            if let Some(n) = text
                .strip_prefix('x')
                .filter(|d| !d.is_empty() && !d.starts_with('0'))
                .and_then(|d| d.parse::<u32>().ok())
            {
                self.index.insert(text.clone(), n);
                self.origin.insert(n, text);
                return Expr::Var(n);
            }
        }
        let n = self.origin.keys().next_back().map_or(0, |m| *m) + 1;
        self.index.insert(text.clone(), n);
        self.origin.insert(n, text);
        Expr::Var(n)
    }
}

pub(crate) struct Normalizer<'t, 'c> {
    toks: &'t [Token],
    ctx: &'c mut VarContext,
}

impl Normalizer<'_, '_> {
    fn atom(&mut self, s: &Surface) -> Expr {
        let text = self.toks[s.lo..s.hi]
            .iter()
            .map(|t| t.lexeme.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        self.ctx.var_for(text)
    }

    fn norm(&mut self, s: &Surface) -> Expr {
        match &s.kind {
            SKind::Int(v) => Expr::Const(*v),
            SKind::Literal(text) => Expr::Literal(text.clone()),
            SKind::Ident(name) => match name.as_str() {
                "NULL" | "nullptr" | "false" => Expr::Const(0),
                "true" => Expr::Const(1),
                _ => self.atom(s),
            },
            SKind::Paren(inner) | SKind::Cast(inner) => self.norm(inner),
            SKind::Unary(op, inner) => match *op {
                "!" => Expr::unary(UnaryOp::Not, self.norm(inner)),
                "~" => Expr::unary(UnaryOp::BitNot, self.norm(inner)),
                "-" => Expr::unary(UnaryOp::Neg, self.norm(inner)),
                "+" => self.norm(inner),
                _ => self.atom(s),
            },
            SKind::Binary(op, a, b) => {
                let a = self.norm(a);
                let b = self.norm(b);
                if let Some(folded) = fold_constants(*op, &a, &b) {
                    return folded;
                }
                if op.is_comparison() && is_constant(&a) && !is_constant(&b)
                {
                    return Expr::binary(op.flipped(), b, a);
                }
                Expr::binary(*op, a, b)
            }
            SKind::Call(callee, args) => match &callee.kind {
                SKind::Ident(name) if !ATOM_CALLS.contains(&name.as_str()) => Expr::Call {
                    name: name.clone(),
                    args: args.iter().map(|a| self.norm(a)).collect(),
                },
                _ => self.atom(s),
            },
            SKind::Opaque => self.atom(s),
        }
    }
}

fn is_constant(e: &Expr) -> bool {
    match e {
        Expr::Const(_) => true,
        Expr::Unary(_, inner) => is_constant(inner),
        _ => false,
    }
}

/// Parses a full expression from `toks` and normalizes it in `ctx`.
pub fn normalize_expression(toks: &[Token], ctx: &mut VarContext) -> Result<Expr, VerifyError> {
    let toks: Vec<Token> = toks
        .iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .cloned()
        .collect();
    if toks.is_empty() {
        return Err(VerifyError::Parse("empty expression".into()));
    }
    let mut p = P {
        toks: &toks,
        pos: 0,
        strict: false,
    };
    let s = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing tokens"));
    }
    Ok(Normalizer { toks: &toks, ctx }.norm(&s))
}

/// Parses an expression restricted to the equation grammar: identifiers,
/// integer constants, parentheses, `! ~ -` and the binary operators.
pub fn parse_strict(text: &str, ctx: &mut VarContext) -> Result<Expr, VerifyError> {
    let toks: Vec<Token> = super::lexer::lex_line(text)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect();
    if toks.is_empty() {
        return Err(VerifyError::Parse("empty expression".into()));
    }
    for t in &toks {
        let allowed = match t.kind {
            TokenKind::Identifier | TokenKind::IntLiteral | TokenKind::CharLiteral => true,
            TokenKind::Punctuation => t.lexeme == "(" || t.lexeme == ")",
            TokenKind::Operator => {
                BinaryOp::from_symbol(&t.lexeme).is_some()
                    || matches!(t.lexeme.as_str(), "!" | "~")
            }
            _ => false,
        };
        if !allowed {
            return Err(VerifyError::UnsupportedOperator(t.lexeme.clone()));
        }
    }
    let mut p = P {
        toks: &toks,
        pos: 0,
        strict: true,
    };
    let s = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing tokens"));
    }
    Ok(Normalizer { toks: &toks, ctx }.norm(&s))
}
