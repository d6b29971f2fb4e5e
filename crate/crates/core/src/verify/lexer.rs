//! Character-at-a-time lexer for C and decompiler-style pseudocode.
//!
//! The lexer is a small finite state machine driven one character at a time.
//! It is total: every input character ends up in some token, and characters
//! it does not recognize become single-character punctuation tokens.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    IntLiteral,
    FloatLiteral,
    StringLiteral,
    CharLiteral,
    Operator,
    Punctuation,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    /// Character offset of the first character within the line.
    pub column: usize,
    /// Canonical numeric value for integer and character literals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u64>,
}

impl Token {
    pub fn is(&self, kind: TokenKind, lexeme: &str) -> bool {
        self.kind == kind && self.lexeme == lexeme
    }

    pub fn is_op(&self, lexeme: &str) -> bool {
        self.kind == TokenKind::Operator && self.lexeme == lexeme
    }

    pub fn is_punct(&self, lexeme: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.lexeme == lexeme
    }

    pub fn is_keyword(&self, lexeme: &str) -> bool {
        self.kind == TokenKind::Keyword && self.lexeme == lexeme
    }

    /// Identifier-like: plain identifiers and keywords.
    pub fn is_word(&self) -> bool {
        matches!(self.kind, TokenKind::Identifier | TokenKind::Keyword)
    }

    /// Same kind, lexeme and value; the column is ignored.
    pub fn same_token(&self, other: &Token) -> bool {
        self.kind == other.kind && self.lexeme == other.lexeme && self.value == other.value
    }
}

pub const KEYWORDS: &[&str] = &[
    "auto", "bool", "break", "case", "char", "const", "continue", "default", "do", "double",
    "else", "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Bool", "__int8", "__int16", "__int32",
    "__int64", "__int128", "__fastcall", "__cdecl", "__stdcall", "__thiscall", "__usercall",
];

/// Multi-character operators, longest first within each prefix family.
const OPERATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "::", "+", "-", "*", "/", "%", "<", ">", "=", "!",
    "~", "&", "|", "^", "?", ":", ".",
];

const PUNCTUATION: &[char] = &['(', ')', '{', '}', '[', ']', ';', ','];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

/// Carried between lines so block comments may span several lines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexState {
    pub in_block_comment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    Ident,
    Number,
    /// Number just consumed an exponent marker; a sign may follow.
    NumberExp,
    Str,
    StrEscape,
    Char,
    CharEscape,
    Operator,
    LineComment,
    BlockComment,
    BlockCommentStar,
}

/// Lex one line starting outside any comment.
pub fn lex_line(text: &str) -> Vec<Token> {
    let mut state = LexState::default();
    lex_line_with_state(text, &mut state)
}

/// Lex one line, continuing (and updating) the block-comment state.
pub fn lex_line_with_state(text: &str, carry: &mut LexState) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut state = if carry.in_block_comment {
        State::BlockComment
    } else {
        State::Start
    };
    let mut buf = String::new();
    let mut start = 0usize;
    let mut i = 0usize;

    while i <= chars.len() {
        let c = chars.get(i).copied();
        match state {
            State::Start => {
                let Some(ch) = c else { break };
                start = i;
                buf.clear();
                if ch.is_whitespace() {
                } else if ch.is_ascii_alphabetic() || ch == '_' || ch == '$' {
                    buf.push(ch);
                    state = State::Ident;
                } else if ch.is_ascii_digit()
                    || (ch == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
                {
                    buf.push(ch);
                    state = State::Number;
                } else if ch == '"' {
                    buf.push(ch);
                    state = State::Str;
                } else if ch == '\'' {
                    buf.push(ch);
                    state = State::Char;
                } else if ch == '/' && chars.get(i + 1) == Some(&'/') {
                    buf.push_str("//");
                    i += 1;
                    state = State::LineComment;
                } else if ch == '/' && chars.get(i + 1) == Some(&'*') {
                    buf.push_str("/*");
                    i += 1;
                    state = State::BlockComment;
                } else if PUNCTUATION.contains(&ch) {
                    push(&mut tokens, TokenKind::Punctuation, ch.to_string(), start);
                } else if OPERATORS.iter().any(|op| op.starts_with(ch)) {
                    buf.push(ch);
                    state = State::Operator;
                } else {
                    push(&mut tokens, TokenKind::Punctuation, ch.to_string(), start);
                }
                i += 1;
            }
            State::Ident => match c {
                Some(ch) if ch.is_ascii_alphanumeric() || ch == '_' || ch == '$' => {
                    buf.push(ch);
                    i += 1;
                }
                _ => {
                    let kind = if is_keyword(&buf) {
                        TokenKind::Keyword
                    } else {
                        TokenKind::Identifier
                    };
                    push(&mut tokens, kind, std::mem::take(&mut buf), start);
                    state = State::Start;
                }
            },
            State::Number | State::NumberExp => match c {
                Some(ch) if state == State::NumberExp && (ch == '+' || ch == '-') => {
                    buf.push(ch);
                    state = State::Number;
                    i += 1;
                }
                Some(ch) if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' => {
                    buf.push(ch);
                    state = if matches!(ch, 'e' | 'E' | 'p' | 'P') {
                        State::NumberExp
                    } else {
                        State::Number
                    };
                    i += 1;
                }
                _ => {
                    push_number(&mut tokens, std::mem::take(&mut buf), start);
                    state = State::Start;
                }
            },
            State::Str | State::Char => {
                let quote = if state == State::Str { '"' } else { '\'' };
                match c {
                    None => {
                        finish_quoted(&mut tokens, state, std::mem::take(&mut buf), start);
                        break;
                    }
                    Some('\\') => {
                        buf.push('\\');
                        state = if state == State::Str {
                            State::StrEscape
                        } else {
                            State::CharEscape
                        };
                        i += 1;
                    }
                    Some(ch) if ch == quote => {
                        buf.push(ch);
                        finish_quoted(&mut tokens, state, std::mem::take(&mut buf), start);
                        state = State::Start;
                        i += 1;
                    }
                    Some(ch) => {
                        buf.push(ch);
                        i += 1;
                    }
                }
            }
            State::StrEscape | State::CharEscape => {
                let back = if state == State::StrEscape {
                    State::Str
                } else {
                    State::Char
                };
                match c {
                    None => {
                        finish_quoted(&mut tokens, back, std::mem::take(&mut buf), start);
                        break;
                    }
                    Some(ch) => {
                        buf.push(ch);
                        state = back;
                        i += 1;
                    }
                }
            }
            State::Operator => {
                let extended = c.map(|ch| {
                    let mut probe = buf.clone();
                    probe.push(ch);
                    probe
                });
                match extended {
                    Some(probe) if OPERATORS.iter().any(|op| op.starts_with(probe.as_str())) => {
                        buf = probe;
                        i += 1;
                    }
                    _ => {
                        flush_operator(&mut tokens, &mut buf, start);
                        state = State::Start;
                    }
                }
            }
            State::LineComment => match c {
                Some(ch) => {
                    buf.push(ch);
                    i += 1;
                }
                None => {
                    push(&mut tokens, TokenKind::Comment, std::mem::take(&mut buf), start);
                    break;
                }
            },
            State::BlockComment | State::BlockCommentStar => match c {
                None => {
                    if !buf.is_empty() {
                        push(&mut tokens, TokenKind::Comment, std::mem::take(&mut buf), start);
                    }
                    carry.in_block_comment = true;
                    return tokens;
                }
                Some(ch) => {
                    buf.push(ch);
                    i += 1;
                    if state == State::BlockCommentStar && ch == '/' {
                        push(&mut tokens, TokenKind::Comment, std::mem::take(&mut buf), start);
                        state = State::Start;
                    } else {
                        state = if ch == '*' {
                            State::BlockCommentStar
                        } else {
                            State::BlockComment
                        };
                    }
                }
            },
        }
    }
    carry.in_block_comment = false;
    tokens
}

fn push(tokens: &mut Vec<Token>, kind: TokenKind, lexeme: String, column: usize) {
    tokens.push(Token {
        kind,
        lexeme,
        column,
        value: None,
    });
}

/// A partially-built operator such as `..` is not itself an operator; emit
/// the longest operator prefix and re-split the rest.
fn flush_operator(tokens: &mut Vec<Token>, buf: &mut String, start: usize) {
    let mut rest = std::mem::take(buf);
    let mut col = start;
    while !rest.is_empty() {
        let op = OPERATORS
            .iter()
            .filter(|op| rest.starts_with(**op))
            .max_by_key(|op| op.len())
            .map(|op| op.to_string())
            .unwrap_or_else(|| rest[..1].to_string());
        let len = op.chars().count();
        push(tokens, TokenKind::Operator, op.clone(), col);
        col += len;
        rest = rest[op.len()..].to_string();
    }
}

fn finish_quoted(tokens: &mut Vec<Token>, state: State, lexeme: String, start: usize) {
    if matches!(state, State::Str | State::StrEscape) {
        push(tokens, TokenKind::StringLiteral, lexeme, start);
    } else {
        let value = char_literal_value(&lexeme);
        tokens.push(Token {
            kind: TokenKind::CharLiteral,
            lexeme,
            column: start,
            value,
        });
    }
}

fn push_number(tokens: &mut Vec<Token>, lexeme: String, start: usize) {
    match parse_int_literal(&lexeme) {
        Some(v) => tokens.push(Token {
            kind: TokenKind::IntLiteral,
            lexeme,
            column: start,
            value: Some(v),
        }),
        None => push(tokens, TokenKind::FloatLiteral, lexeme, start),
    }
}

/// Parse a C integer literal (decimal, hex, octal, binary) with any of the
/// usual suffixes (`u`, `l`, `ll`, `i64`, ...). Values wrap at 64 bits.
pub fn parse_int_literal(lexeme: &str) -> Option<u64> {
    let lower = lexeme.to_ascii_lowercase();
    let (digits, radix) = if let Some(rest) = lower.strip_prefix("0x") {
        (rest, 16)
    } else if let Some(rest) = lower.strip_prefix("0b") {
        (rest, 2)
    } else if lower.len() > 1 && lower.starts_with('0') {
        (&lower[1..], 8)
    } else {
        (lower.as_str(), 10)
    };
    let body = strip_int_suffix(digits);
    if body.is_empty() {
        // a bare "0" with a suffix, e.g. "0u"
        return if radix == 8 && strip_int_suffix(digits).is_empty() {
            Some(0)
        } else {
            None
        };
    }
    let mut value: u64 = 0;
    for ch in body.chars() {
        let d = ch.to_digit(radix)?;
        value = value.wrapping_mul(radix as u64).wrapping_add(d as u64);
    }
    Some(value)
}

fn strip_int_suffix(s: &str) -> &str {
    for suffix in ["ui64", "i64", "ui32", "i32", "ui16", "i16", "ui8", "i8"] {
        if let Some(body) = s.strip_suffix(suffix) {
            return body;
        }
    }
    s.trim_end_matches(['u', 'l'])
}

fn char_literal_value(lexeme: &str) -> Option<u64> {
    let inner = lexeme.strip_prefix('\'')?.strip_suffix('\'')?;
    let mut chars = inner.chars();
    let first = chars.next()?;
    if first != '\\' {
        return if chars.next().is_none() {
            Some(first as u64)
        } else {
            None
        };
    }
    let rest: String = chars.collect();
    let simple = match rest.as_str() {
        "n" => Some(10),
        "t" => Some(9),
        "r" => Some(13),
        "0" => Some(0),
        "\\" => Some(92),
        "'" => Some(39),
        "\"" => Some(34),
        "a" => Some(7),
        "b" => Some(8),
        "f" => Some(12),
        "v" => Some(11),
        _ => None,
    };
    if simple.is_some() {
        return simple;
    }
    if let Some(hex) = rest.strip_prefix('x') {
        return u64::from_str_radix(hex, 16).ok();
    }
    u64::from_str_radix(&rest, 8).ok()
}

/// Join lexemes with single spaces.
pub fn render_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.lexeme.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Number of non-comment tokens on a line.
pub fn count_tokens(text: &str) -> usize {
    lex_line(text)
        .iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(tokens: &[Token]) -> Vec<(TokenKind, &str)> {
        tokens.iter().map(|t| (t.kind, t.lexeme.as_str())).collect()
    }

    #[test]
    fn if_header() {
        let toks = lex_line("if (x > 0)");
        assert_eq!(
            kinds(&toks),
            vec![
                (TokenKind::Keyword, "if"),
                (TokenKind::Punctuation, "("),
                (TokenKind::Identifier, "x"),
                (TokenKind::Operator, ">"),
                (TokenKind::IntLiteral, "0"),
                (TokenKind::Punctuation, ")"),
            ]
        );
        assert_eq!(toks[4].value, Some(0));
    }

    #[test]
    fn empty_line() {
        assert!(lex_line("").is_empty());
        assert!(lex_line("   \t ").is_empty());
    }

    #[test]
    fn hex_literal_keeps_radix() {
        let toks = lex_line("y = a+0x10;");
        let lit = toks.iter().find(|t| t.kind == TokenKind::IntLiteral).unwrap();
        assert_eq!(lit.lexeme, "0x10");
        assert_eq!(lit.value, Some(16));
        assert_eq!(toks.len(), 6);
    }

    #[test]
    fn decompiler_line() {
        let toks = lex_line("v3 = *(_DWORD *)(a1 + 8) ^ 0x303u;");
        assert_eq!(toks.last().unwrap().lexeme, ";");
        let lit = toks.iter().find(|t| t.lexeme == "0x303u").unwrap();
        assert_eq!(lit.value, Some(771));
        assert!(toks.iter().any(|t| t.is(TokenKind::Identifier, "_DWORD")));
    }

    #[test]
    fn literal_suffixes_and_radixes() {
        assert_eq!(parse_int_literal("0xFFFFFFFFLL"), Some(0xFFFF_FFFF));
        assert_eq!(parse_int_literal("010"), Some(8));
        assert_eq!(parse_int_literal("0"), Some(0));
        assert_eq!(parse_int_literal("0u"), Some(0));
        assert_eq!(parse_int_literal("18LL"), Some(18));
        assert_eq!(parse_int_literal("0b101"), Some(5));
        assert_eq!(parse_int_literal("5i64"), Some(5));
        assert_eq!(parse_int_literal("1.5"), None);
    }

    #[test]
    fn maximal_munch_operators() {
        let toks = lex_line("a->b <<= c++ + --d != e...");
        let ops: Vec<&str> = toks
            .iter()
            .filter(|t| t.kind == TokenKind::Operator)
            .map(|t| t.lexeme.as_str())
            .collect();
        assert_eq!(ops, vec!["->", "<<=", "++", "+", "--", "!=", "..."]);
    }

    #[test]
    fn dotdot_splits_into_two_dots() {
        let toks = lex_line("a..b");
        assert_eq!(
            kinds(&toks),
            vec![
                (TokenKind::Identifier, "a"),
                (TokenKind::Operator, "."),
                (TokenKind::Operator, "."),
                (TokenKind::Identifier, "b"),
            ]
        );
    }

    #[test]
    fn comments_become_trailing_tokens() {
        let toks = lex_line("x = 1; // note");
        assert_eq!(toks.last().unwrap().kind, TokenKind::Comment);
        assert_eq!(toks.last().unwrap().lexeme, "// note");
        let toks = lex_line("x /* mid */ = 2;");
        assert_eq!(toks[1].kind, TokenKind::Comment);
        assert_eq!(toks.len(), 5);
    }

    #[test]
    fn block_comment_spans_lines() {
        let mut st = LexState::default();
        let a = lex_line_with_state("x = 1; /* start", &mut st);
        assert!(st.in_block_comment);
        assert_eq!(a.last().unwrap().kind, TokenKind::Comment);
        let b = lex_line_with_state("still comment */ y = 2;", &mut st);
        assert!(!st.in_block_comment);
        assert_eq!(b[0].kind, TokenKind::Comment);
        assert_eq!(b[1].lexeme, "y");
    }

    #[test]
    fn strings_and_chars() {
        let toks = lex_line(r#"printf("a \"b\" %d", '\n', 'A');"#);
        assert_eq!(toks[2].kind, TokenKind::StringLiteral);
        assert_eq!(toks[2].lexeme, r#""a \"b\" %d""#);
        assert_eq!(toks[4].value, Some(10));
        assert_eq!(toks[6].value, Some(65));
    }

    #[test]
    fn unterminated_string_runs_to_end() {
        let toks = lex_line("s = \"abc");
        assert_eq!(toks.last().unwrap().kind, TokenKind::StringLiteral);
        assert_eq!(toks.last().unwrap().lexeme, "\"abc");
    }

    #[test]
    fn unknown_characters_are_punctuation() {
        let toks = lex_line("a @ b # c \\");
        assert!(toks.iter().any(|t| t.is_punct("@")));
        assert!(toks.iter().any(|t| t.is_punct("#")));
        assert!(toks.iter().any(|t| t.is_punct("\\")));
    }

    #[test]
    fn float_exponent_sign() {
        let toks = lex_line("d = 1.5e-3 + 2;");
        assert_eq!(toks[2].kind, TokenKind::FloatLiteral);
        assert_eq!(toks[2].lexeme, "1.5e-3");
    }

    #[test]
    fn columns_are_char_offsets() {
        let toks = lex_line("  ab = c");
        assert_eq!(toks[0].column, 2);
        assert_eq!(toks[1].column, 5);
        assert_eq!(toks[2].column, 7);
    }
}
