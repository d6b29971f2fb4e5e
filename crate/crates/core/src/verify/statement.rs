//! Statement extraction and normalization into the four equation classes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::expr::{BinaryOp, Expr};
use super::lexer::{lex_line, lex_line_with_state, render_tokens, LexState, Token, TokenKind};
use super::parse::{normalize_expression, VarContext, ASSIGN_OPS};
use super::VerifyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    Conditional,
    Assignment,
    Return,
    FunctionCall,
}

impl StatementKind {
    pub const ALL: [StatementKind; 4] = [
        StatementKind::Conditional,
        StatementKind::Assignment,
        StatementKind::Return,
        StatementKind::FunctionCall,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StatementKind::Conditional => "conditional",
            StatementKind::Assignment => "assignment",
            StatementKind::Return => "return",
            StatementKind::FunctionCall => "function_call",
        }
    }
}

impl fmt::Display for StatementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Raw statement pieces before normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitBody {
    Condition(Vec<Token>),
    Assign {
        target: Vec<Token>,
        op: String,
        value: Option<Vec<Token>>,
    },
    Return(Option<Vec<Token>>),
    Call(Vec<Token>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatementUnit {
    pub kind: StatementKind,
    pub body: UnitBody,
    /// Line number of the first line of the statement, as supplied by the caller.
    pub source_line: usize,
}

impl StatementUnit {
    pub fn text(&self) -> String {
        match &self.body {
            UnitBody::Condition(t) | UnitBody::Call(t) => render_tokens(t),
            UnitBody::Assign { target, op, value } => match value {
                Some(v) => format!("{} {} {}", render_tokens(target), op, render_tokens(v)),
                None => format!("{} {}", render_tokens(target), op),
            },
            UnitBody::Return(Some(t)) => format!("return {}", render_tokens(t)),
            UnitBody::Return(None) => "return".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum EquationBody {
    Condition { expr: Expr },
    Assign { target: Expr, value: Expr },
    Return { value: Option<Expr> },
    Call { expr: Expr },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedEquation {
    pub kind: StatementKind,
    pub body: EquationBody,
    /// Original text of each macro variable.
    pub var_origin: BTreeMap<u32, String>,
    pub canonical: String,
    pub source_line: usize,
}

impl NormalizedEquation {
    pub fn key(&self) -> (StatementKind, &str) {
        (self.kind, self.canonical.as_str())
    }

    /// Expression compared by the solver for conditionals.
    pub fn condition(&self) -> Option<&Expr> {
        match &self.body {
            EquationBody::Condition { expr } => Some(expr),
            _ => None,
        }
    }

    pub fn var_count(&self) -> usize {
        self.var_origin.len()
    }
}

fn canonical_text(body: &EquationBody) -> String {
    match body {
        EquationBody::Condition { expr } | EquationBody::Call { expr } => expr.render(),
        EquationBody::Assign { target, value } => format!("{} = {}", target.render(), value.render()),
        EquationBody::Return { value: Some(v) } => format!("return {}", v.render()),
        EquationBody::Return { value: None } => "return".to_string(),
    }
}

fn build(
    kind: StatementKind,
    body: EquationBody,
    ctx: VarContext,
    source_line: usize,
) -> NormalizedEquation {
    NormalizedEquation {
        kind,
        canonical: canonical_text(&body),
        body,
        var_origin: ctx.origin,
        source_line,
    }
}

pub fn normalize_statement(unit: &StatementUnit) -> Result<NormalizedEquation, VerifyError> {
    normalize_in(unit, VarContext::new())
}

fn normalize_in(unit: &StatementUnit, mut ctx: VarContext) -> Result<NormalizedEquation, VerifyError> {
    let body = match &unit.body {
        UnitBody::Condition(t) => EquationBody::Condition {
            expr: normalize_expression(t, &mut ctx)?,
        },
        UnitBody::Call(t) => EquationBody::Call {
            expr: normalize_expression(t, &mut ctx)?,
        },
        UnitBody::Return(t) => EquationBody::Return {
            value: t
                .as_ref()
                .map(|t| normalize_expression(t, &mut ctx))
                .transpose()?,
        },
        UnitBody::Assign { target, op, value } => {
            let target = normalize_expression(target, &mut ctx)?;
            let value = match (op.as_str(), value) {
                ("++", _) => Expr::binary(BinaryOp::Add, target.clone(), Expr::Const(1)),
                ("--", _) => Expr::binary(BinaryOp::Sub, target.clone(), Expr::Const(1)),
                ("=", Some(v)) => normalize_expression(v, &mut ctx)?,
                (compound, Some(v)) => {
                    let sym = compound.trim_end_matches('=');
                    let bop = BinaryOp::from_symbol(sym)
                        .ok_or_else(|| VerifyError::UnsupportedOperator(compound.to_string()))?;
                    let rhs = normalize_expression(v, &mut ctx)?;
                    super::expr::fold_constants(bop, &target, &rhs)
                        .unwrap_or_else(|| Expr::binary(bop, target.clone(), rhs))
                }
                (other, None) => return Err(VerifyError::Parse(format!("assignment `{other}` without value"))),
            };
            EquationBody::Assign { target, value }
        }
    };
    Ok(build(unit.kind, body, ctx, unit.source_line))
}

/// Re-reads a canonical form; `parse_canonical(k, &e.canonical)` reproduces `e.canonical`.
pub fn parse_canonical(kind: StatementKind, text: &str) -> Result<NormalizedEquation, VerifyError> {
    let toks: Vec<Token> = lex_line(text)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect();
    let body = match kind {
        StatementKind::Conditional => UnitBody::Condition(toks),
        StatementKind::FunctionCall => UnitBody::Call(toks),
        StatementKind::Return => {
            if !toks.first().is_some_and(|t| t.is_keyword("return")) {
                return Err(VerifyError::Parse(format!("not a return: `{text}`")));
            }
            let rest = toks[1..].to_vec();
            UnitBody::Return((!rest.is_empty()).then_some(rest))
        }
        StatementKind::Assignment => {
            let at = top_level_position(&toks, |t| t.is_op("="))
                .ok_or_else(|| VerifyError::Parse(format!("not an assignment: `{text}`")))?;
            UnitBody::Assign {
                target: toks[..at].to_vec(),
                op: "=".into(),
                value: Some(toks[at + 1..].to_vec()),
            }
        }
    };
    let unit = StatementUnit {
        kind,
        body,
        source_line: 0,
    };
    normalize_in(&unit, VarContext::canonical())
}

fn depth_delta(t: &Token) -> i32 {
    if t.kind != TokenKind::Punctuation {
        return 0;
    }
    match t.lexeme.as_str() {
        "(" | "[" => 1,
        ")" | "]" => -1,
        _ => 0,
    }
}

fn top_level_position(toks: &[Token], pred: impl Fn(&Token) -> bool) -> Option<usize> {
    let mut depth = 0;
    for (i, t) in toks.iter().enumerate() {
        if depth == 0 && pred(t) {
            return Some(i);
        }
        depth += depth_delta(t);
    }
    None
}

fn split_top_level<'a>(toks: &'a [Token], sep: &str) -> Vec<&'a [Token]> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, t) in toks.iter().enumerate() {
        if depth == 0 && t.is_punct(sep) {
            out.push(&toks[start..i]);
            start = i + 1;
        }
        depth += depth_delta(t);
    }
    out.push(&toks[start..]);
    out
}

fn matching_paren(toks: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0;
    for (i, t) in toks.iter().enumerate().skip(open) {
        depth += depth_delta(t);
        if depth == 0 {
            return Some(i);
        }
    }
    None
}

fn paren_balance(toks: &[Token]) -> i32 {
    toks.iter().map(depth_delta).sum()
}

fn wants_continuation(toks: &[Token]) -> bool {
    if paren_balance(toks) > 0 {
        return true;
    }
    match toks.last() {
        Some(t) if t.kind == TokenKind::Operator => {
            !matches!(t.lexeme.as_str(), "++" | "--" | ":")
        }
        Some(t) => t.is_punct(","),
        None => false,
    }
}

const DECL_WORDS: &[&str] = &[
    "int", "char", "short", "long", "unsigned", "signed", "void", "float", "double", "const",
    "volatile", "static", "register", "struct", "union", "enum", "bool", "_Bool", "__int8",
    "__int16", "__int32", "__int64", "__int128", "extern", "auto", "inline",
];

fn is_decl_start(toks: &[Token]) -> bool {
    let Some(first) = toks.first() else {
        return false;
    };
    if first.kind == TokenKind::Keyword && DECL_WORDS.contains(&first.lexeme.as_str()) {
        return true;
    }
    // `Type name ...`, `Type *name ...`
    if first.kind == TokenKind::Identifier {
        let mut i = 1;
        while toks.get(i).is_some_and(|t| t.is_op("*")) {
            i += 1;
        }
        return toks.get(i).is_some_and(|t| t.kind == TokenKind::Identifier)
            && toks
                .get(i + 1)
                .is_none_or(|t| t.is_op("=") || t.is_punct(",") || t.is_punct("["));
    }
    false
}

/// Drops type words and pointer stars in front of a declarator name.
fn strip_declarator(toks: &[Token]) -> &[Token] {
    let name_at = toks
        .iter()
        .rposition(|t| t.kind == TokenKind::Identifier)
        .unwrap_or(0);
    &toks[name_at..]
}

struct Extractor {
    out: Vec<StatementUnit>,
}

impl Extractor {
    fn push(&mut self, kind: StatementKind, body: UnitBody, line: usize) {
        self.out.push(StatementUnit {
            kind,
            body,
            source_line: line,
        });
    }

    fn group(&mut self, mut toks: &[Token], line: usize) {
        while !toks.is_empty() {
            let t = &toks[0];
            if t.is_punct("{") || t.is_punct("}") || t.is_punct(";") || t.is_keyword("else") || t.is_keyword("do") {
                toks = &toks[1..];
                continue;
            }
            if t.is_keyword("case") || t.is_keyword("default") {
                match toks.iter().position(|t| t.is_op(":")) {
                    Some(p) => toks = &toks[p + 1..],
                    None => return,
                }
                continue;
            }
            if t.kind == TokenKind::Identifier && toks.get(1).is_some_and(|n| n.is_op(":")) {
                toks = &toks[2..];
                continue;
            }
            if t.is_keyword("if") || t.is_keyword("while") || t.is_keyword("switch") || t.is_keyword("for") {
                let Some(close) = toks
                    .get(1)
                    .filter(|n| n.is_punct("("))
                    .and_then(|_| matching_paren(toks, 1))
                else {
                    return;
                };
                let inner = &toks[2..close];
                if t.is_keyword("for") {
                    let parts = split_top_level(inner, ";");
                    if let [init, cond, step] = parts.as_slice() {
                        self.simple_list(init, line);
                        if !cond.is_empty() {
                            self.push(StatementKind::Conditional, UnitBody::Condition(cond.to_vec()), line);
                        }
                        self.simple_list(step, line);
                    }
                } else if !t.is_keyword("switch") && !inner.is_empty() {
                    self.push(StatementKind::Conditional, UnitBody::Condition(inner.to_vec()), line);
                }
                toks = &toks[close + 1..];
                continue;
            }
            let end = top_level_position(toks, |t| t.is_punct(";") || t.is_punct("{") || t.is_punct("}"))
                .unwrap_or(toks.len());
            self.simple(&toks[..end], line);
            toks = &toks[end..];
        }
    }

    fn simple_list(&mut self, toks: &[Token], line: usize) {
        for part in split_top_level(toks, ",") {
            self.simple(part, line);
        }
    }

    fn simple(&mut self, toks: &[Token], line: usize) {
        let Some(first) = toks.first() else { return };
        if first.is_keyword("return") {
            let rest = &toks[1..];
            self.push(
                StatementKind::Return,
                UnitBody::Return((!rest.is_empty()).then(|| rest.to_vec())),
                line,
            );
            return;
        }
        if first.is_keyword("goto")
            || first.is_keyword("break")
            || first.is_keyword("continue")
            || first.is_keyword("typedef")
            || first.kind == TokenKind::Punctuation && first.lexeme == "#"
        {
            return;
        }
        if is_decl_start(toks) {
            for part in split_top_level(toks, ",") {
                if let Some(eq) = top_level_position(part, |t| t.is_op("=")) {
                    let target = strip_declarator(&part[..eq]);
                    if first_is_decl_keyword(target) {
                        continue;
                    }
                    self.push(
                        StatementKind::Assignment,
                        UnitBody::Assign {
                            target: target.to_vec(),
                            op: "=".into(),
                            value: Some(part[eq + 1..].to_vec()),
                        },
                        line,
                    );
                }
            }
            return;
        }
        if let Some(at) = top_level_position(toks, |t| {
            t.kind == TokenKind::Operator && ASSIGN_OPS.contains(&t.lexeme.as_str())
        }) {
            if at > 0 && at + 1 < toks.len() {
                self.push(
                    StatementKind::Assignment,
                    UnitBody::Assign {
                        target: toks[..at].to_vec(),
                        op: toks[at].lexeme.clone(),
                        value: Some(toks[at + 1..].to_vec()),
                    },
                    line,
                );
            }
            return;
        }
        let last = toks.len() - 1;
        if toks.len() > 1 && (toks[last].is_op("++") || toks[last].is_op("--")) {
            self.push(
                StatementKind::Assignment,
                UnitBody::Assign {
                    target: toks[..last].to_vec(),
                    op: toks[last].lexeme.clone(),
                    value: None,
                },
                line,
            );
            return;
        }
        if toks.len() > 1 && (first.is_op("++") || first.is_op("--")) {
            self.push(
                StatementKind::Assignment,
                UnitBody::Assign {
                    target: toks[1..].to_vec(),
                    op: first.lexeme.clone(),
                    value: None,
                },
                line,
            );
            return;
        }
        if toks[last].is_punct(")") && toks.iter().any(|t| t.kind == TokenKind::Identifier) {
            // a call, possibly behind a `(void)` cast
            let mut start = 0;
            if first.is_punct("(") {
                if let Some(close) = matching_paren(toks, 0) {
                    if toks[1..close].iter().all(|t| t.is_word() || t.is_op("*")) {
                        start = close + 1;
                    }
                }
            }
            let body = &toks[start..];
            if body.len() >= 3 && body[0].kind == TokenKind::Identifier && body[1].is_punct("(")
                && matching_paren(body, 1) == Some(body.len() - 1)
            {
                self.push(StatementKind::FunctionCall, UnitBody::Call(body.to_vec()), line);
            }
        }
    }
}

fn first_is_decl_keyword(toks: &[Token]) -> bool {
    toks.is_empty()
        || toks[0].kind == TokenKind::Keyword && DECL_WORDS.contains(&toks[0].lexeme.as_str())
}

/// Splits numbered lines into statement units. Lines are joined while
/// parentheses stay open or the line ends in a binary operator or comma.
pub fn extract_statements<'a>(lines: impl IntoIterator<Item = (usize, &'a str)>) -> Vec<StatementUnit> {
    let mut ex = Extractor { out: Vec::new() };
    let mut state = LexState::default();
    let mut pending: Vec<Token> = Vec::new();
    let mut pending_line = 0;
    for (line, text) in lines {
        if text.trim_start().starts_with('#') {
            continue;
        }
        let toks: Vec<Token> = lex_line_with_state(text, &mut state)
            .into_iter()
            .filter(|t| t.kind != TokenKind::Comment)
            .collect();
        if toks.is_empty() {
            continue;
        }
        if pending.is_empty() {
            pending_line = line;
        }
        pending.extend(toks);
        if wants_continuation(&pending) && pending.len() < 4096 {
            continue;
        }
        ex.group(&pending, pending_line);
        pending.clear();
    }
    if !pending.is_empty() {
        ex.group(&pending, pending_line);
    }
    ex.out
}

/// Extracts and normalizes every statement; statements the parser cannot
/// read are skipped.
pub fn equations_from_lines<'a>(
    lines: impl IntoIterator<Item = (usize, &'a str)>,
) -> Vec<NormalizedEquation> {
    extract_statements(lines)
        .iter()
        .filter_map(|u| match normalize_statement(u) {
            Ok(eq) => Some(eq),
            Err(e) => {
                log::debug!("skipping statement `{}` at line {}: {e}", u.text(), u.source_line);
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eqs(src: &str) -> Vec<(StatementKind, String)> {
        equations_from_lines(src.lines().enumerate().map(|(i, l)| (i + 1, l)))
            .into_iter()
            .map(|e| (e.kind, e.canonical))
            .collect()
    }

    use StatementKind::*;

    #[test]
    fn four_classes() {
        let got = eqs(
            "if (s->version >= TLS1_2_VERSION) {\n  n = foo(s, 2);\n  return -1;\n}\nbar(x);\n",
        );
        assert_eq!(
            got,
            vec![
                (Conditional, "x1 >= x2".to_string()),
                (Assignment, "x1 = foo(x2, 2)".to_string()),
                (Return, "return -1".to_string()),
                (FunctionCall, "bar(x1)".to_string()),
            ]
        );
    }

    #[test]
    fn pseudocode_shapes() {
        let got = eqs(
            "  int v3; // eax\n  v3 = *(_DWORD *)(a1 + 4);\n  if ( v3 ^ 0x303 )\n    goto LABEL_5;\nLABEL_5:\n  return 0LL;\n",
        );
        assert_eq!(
            got,
            vec![
                (Assignment, "x1 = x2".to_string()),
                (Conditional, "x1 ^ 771".to_string()),
                (Return, "return 0".to_string()),
            ]
        );
    }

    #[test]
    fn compound_and_increment() {
        let got = eqs("len += 4;\ni++;\n--j;\nint k = 3, m;\nchar *p = NULL;\n");
        assert_eq!(
            got,
            vec![
                (Assignment, "x1 = x1 + 4".to_string()),
                (Assignment, "x1 = x1 + 1".to_string()),
                (Assignment, "x1 = x1 - 1".to_string()),
                (Assignment, "x1 = 3".to_string()),
                (Assignment, "x1 = 0".to_string()),
            ]
        );
    }

    #[test]
    fn multi_line_condition_is_joined() {
        let src = "if (a &&\n    b > 3)\n  return;\n";
        let units = extract_statements(src.lines().enumerate().map(|(i, l)| (i + 1, l)));
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].source_line, 1);
        assert_eq!(units[1].source_line, 3);
    }

    #[test]
    fn for_loop_parts() {
        let got = eqs("for (i = 0; i < n; i++) {\n");
        assert_eq!(
            got,
            vec![
                (Assignment, "x1 = 0".to_string()),
                (Conditional, "x1 < x2".to_string()),
                (Assignment, "x1 = x1 + 1".to_string()),
            ]
        );
    }

    #[test]
    fn else_if_and_while() {
        let got = eqs("} else if (!p) {\nwhile (n-- > 0)\n} while (x != 0);\n");
        assert_eq!(
            got,
            vec![
                (Conditional, "!x1".to_string()),
                (Conditional, "x1 > 0".to_string()),
                (Conditional, "x1 != 0".to_string()),
            ]
        );
    }

    #[test]
    fn void_cast_call() {
        assert_eq!(eqs("(void)memset(buf, 0, 16);"), vec![(FunctionCall, "memset(x1, 0, 16)".to_string())]);
    }

    #[test]
    fn canonical_round_trip_examples() {
        for (k, text) in [
            (Conditional, "!(x1 ^ 771)"),
            (Conditional, "x1 - (x2 - x3) < -1"),
            (Assignment, "x2 = x1 + 1"),
            (Return, "return"),
            (Return, "return -1"),
            (FunctionCall, "strncpy(x1, x2, 64)"),
            (FunctionCall, "f(x1, \"s\")"),
        ] {
            let eq = parse_canonical(k, text).unwrap();
            assert_eq!(eq.canonical, text);
        }
    }
}
