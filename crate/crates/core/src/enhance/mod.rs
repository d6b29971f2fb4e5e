//! Patch slice enhancement: data-flow, control-flow and macro context.

pub mod macros;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::source::{AnnotatedFunction, Node, NodeKind, VersionTag};
use crate::verify::lexer::{lex_line, Token, TokenKind};
use crate::verify::parse::ASSIGN_OPS;
pub use macros::{
    is_macro_candidate, resolve_macros, substitute, MacroDef, MacroIndex, MacroResolution,
    MacroSubstitution,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnhanceError {
    #[error("function `{0}` has no patch lines")]
    NoPatchLines(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSet {
    pub defined: BTreeSet<String>,
    pub used: BTreeSet<String>,
}

impl VariableSet {
    pub fn all(&self) -> BTreeSet<&str> {
        self.defined
            .iter()
            .chain(self.used.iter())
            .map(String::as_str)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.defined.is_empty() && self.used.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOrigin {
    Patch,
    Dataflow,
    Controlflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceLine {
    pub line: usize,
    /// Text after macro substitution.
    pub text: String,
    pub origin: LineOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedSlice {
    pub version: VersionTag,
    pub lines: Vec<SliceLine>,
    /// Macro name to replacement text.
    pub macro_substitutions: BTreeMap<String, String>,
    #[serde(default)]
    pub resolution: MacroResolution,
}

impl EnhancedSlice {
    pub fn line_numbers(&self) -> BTreeSet<usize> {
        self.lines.iter().map(|l| l.line).collect()
    }

    pub fn contains(&self, line: usize) -> bool {
        self.lines.binary_search_by_key(&line, |l| l.line).is_ok()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.lines.iter().map(|l| l.text.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&l.text);
            s.push('\n');
        }
        s
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn code_tokens(text: &str) -> Vec<Token> {
    lex_line(text)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .collect()
}

fn is_variable_token(toks: &[Token], i: usize) -> bool {
    let t = &toks[i];
    if t.kind != TokenKind::Identifier || is_macro_candidate(&t.lexeme) || t.lexeme == "NULL" {
        return false;
    }
    // function name in call position
    !toks.get(i + 1).is_some_and(|n| n.is_punct("("))
}

const TYPE_KEYWORDS: &[&str] = &[
    "int", "char", "short", "long", "unsigned", "signed", "void", "float", "double", "const",
    "volatile", "static", "register", "struct", "union", "enum", "bool", "_Bool", "__int8",
    "__int16", "__int32", "__int64", "extern",
];

fn starts_declaration(toks: &[Token]) -> bool {
    match toks.first() {
        Some(t) if t.kind == TokenKind::Keyword => TYPE_KEYWORDS.contains(&t.lexeme.as_str()),
        Some(t) if t.kind == TokenKind::Identifier => {
            let mut i = 1;
            while toks.get(i).is_some_and(|t| t.is_op("*")) {
                i += 1;
            }
            toks.get(i).is_some_and(|n| n.kind == TokenKind::Identifier)
                && toks
                    .get(i + 1)
                    .is_none_or(|n| n.is_op("=") || n.is_punct(";") || n.is_punct(",") || n.is_punct("["))
        }
        _ => false,
    }
}

fn collect_statement(toks: &[Token], vars: &mut VariableSet) {
    if toks.is_empty() {
        return;
    }
    let mut depth = 0i32;
    let mut assign_at = None;
    for (i, t) in toks.iter().enumerate() {
        if t.is_punct("(") || t.is_punct("[") {
            depth += 1;
        } else if t.is_punct(")") || t.is_punct("]") {
            depth -= 1;
        } else if depth == 0
            && t.kind == TokenKind::Operator
            && ASSIGN_OPS.contains(&t.lexeme.as_str())
        {
            assign_at = Some(i);
            break;
        }
    }
    let decl = starts_declaration(toks);
    let (lhs_end, rhs_start) = match assign_at {
        Some(i) => (i, i + 1),
        None => {
            let incdec = toks.iter().any(|t| t.is_op("++") || t.is_op("--"));
            if decl || incdec {
                (toks.len(), toks.len())
            } else {
                (0, 0)
            }
        }
    };
    let lhs = &toks[..lhs_end];
    if decl {
        // only the declarator name is defined; the type words are not variables
        if let Some(i) = (0..lhs.len()).rev().find(|&i| is_variable_token(lhs, i)) {
            if i > 0 {
                vars.defined.insert(lhs[i].lexeme.clone());
            }
        }
    } else {
        for i in 0..lhs.len() {
            if is_variable_token(lhs, i) {
                vars.defined.insert(lhs[i].lexeme.clone());
            }
        }
    }
    let rhs = &toks[rhs_start.min(toks.len())..];
    for i in 0..rhs.len() {
        if is_variable_token(rhs, i) {
            vars.used.insert(rhs[i].lexeme.clone());
        }
    }
    if assign_at.is_none() && !decl && lhs_end == 0 {
        for i in 0..toks.len() {
            if is_variable_token(toks, i) {
                vars.used.insert(toks[i].lexeme.clone());
            }
        }
    }
}

/// Identifiers defined and used on the patch lines, with field chains flattened.
pub fn collect_patch_variables(func: &AnnotatedFunction) -> Result<VariableSet, EnhanceError> {
    let patch = func.patch_lines();
    if patch.is_empty() {
        return Err(EnhanceError::NoPatchLines(func.name.clone()));
    }
    let mut vars = VariableSet::default();
    for l in patch {
        let toks = code_tokens(func.text(l));
        // strip control headers down to their conditions
        let mut rest: &[Token] = &toks;
        while let Some(first) = rest.first() {
            if first.is_keyword("if") || first.is_keyword("while") || first.is_keyword("switch") || first.is_keyword("for") {
                let mut depth = 0;
                let mut close = rest.len();
                for (i, t) in rest.iter().enumerate().skip(1) {
                    if t.is_punct("(") {
                        depth += 1;
                    } else if t.is_punct(")") {
                        depth -= 1;
                        if depth == 0 {
                            close = i;
                            break;
                        }
                    }
                }
                let inner = &rest[2.min(rest.len())..close.min(rest.len())];
                for part in inner.split(|t| t.is_punct(";")) {
                    collect_statement(part, &mut vars);
                }
                rest = &rest[(close + 1).min(rest.len())..];
            } else if first.is_keyword("else") || first.is_keyword("do") || first.is_punct("{") || first.is_punct("}") {
                rest = &rest[1..];
            } else if first.is_keyword("return") {
                rest = &rest[1..];
            } else {
                break;
            }
        }
        for stmt in rest.split(|t| t.is_punct(";") || t.is_punct("{") || t.is_punct("}")) {
            let stmt: &[Token] = match stmt.first() {
                Some(t) if t.is_keyword("return") => &stmt[1..],
                _ => stmt,
            };
            collect_statement(stmt, &mut vars);
        }
    }
    Ok(vars)
}

/// Non-patch lines that mention any patch variable.
pub fn dataflow_slice(func: &AnnotatedFunction, vars: &VariableSet) -> BTreeSet<usize> {
    let all = vars.all();
    if all.is_empty() {
        return BTreeSet::new();
    }
    func.lines
        .iter()
        .filter(|l| !l.is_patch_line && !l.text.trim_start().starts_with('#'))
        .filter(|l| {
            code_tokens(&l.text)
                .iter()
                .any(|t| t.kind == TokenKind::Identifier && all.contains(t.lexeme.as_str()))
        })
        .map(|l| l.index)
        .collect()
}

fn first_statement(node: &Node) -> Option<usize> {
    node.children
        .iter()
        .find(|c| c.kind != NodeKind::Else)
        .map(|c| c.span.start)
}

/// Entry, first-statement and exit lines of every control structure around
/// each patch line, plus the else branch of an enclosing if.
pub fn controlflow_slice(func: &AnnotatedFunction) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let root = &func.syntax;
    for p in func.patch_lines() {
        let path = root.path_to_line(p);
        for (depth, node) in path.iter().enumerate().skip(1) {
            if !node.kind.is_control() {
                continue;
            }
            out.insert(node.span.start);
            if let Some(f) = first_statement(node) {
                out.insert(f);
            }
            let parent = path[depth - 1];
            if let Some(pos) = parent.children.iter().position(|c| std::ptr::eq(c, *node)) {
                if let Some(next) = parent.children.get(pos + 1) {
                    if next.kind != NodeKind::Else {
                        out.insert(next.span.start);
                    }
                }
            }
            if node.kind == NodeKind::If {
                let in_else = path.get(depth + 1).is_some_and(|c| c.kind == NodeKind::Else);
                if !in_else {
                    if let Some(els) = node.children.iter().find(|c| c.kind == NodeKind::Else) {
                        out.insert(els.span.start);
                        if let Some(f) = first_statement(els) {
                            out.insert(f);
                        }
                    }
                }
            }
            if node.kind == NodeKind::Else && depth >= 2 {
                // statement after the whole if-else
                let iff = path[depth - 1];
                let grand = path[depth - 2];
                if let Some(pos) = grand.children.iter().position(|c| std::ptr::eq(c, iff)) {
                    if let Some(next) = grand.children.get(pos + 1) {
                        out.insert(next.span.start);
                    }
                }
            }
        }
    }
    let span = func.span();
    out.retain(|l| span.contains(*l) && !func.line(*l).is_some_and(|sl| sl.is_patch_line));
    out
}

/// Patch lines plus the two context sets, with macro text substituted.
/// A line in both context sets is recorded as data flow.
pub fn build_enhanced_slice(
    func: &AnnotatedFunction,
    df: &BTreeSet<usize>,
    cf: &BTreeSet<usize>,
    macros: &MacroResolution,
) -> EnhancedSlice {
    let mut origin: BTreeMap<usize, LineOrigin> = BTreeMap::new();
    for l in func.patch_lines() {
        origin.insert(l, LineOrigin::Patch);
    }
    for &l in df {
        origin.entry(l).or_insert(LineOrigin::Dataflow);
    }
    for &l in cf {
        origin.entry(l).or_insert(LineOrigin::Controlflow);
    }
    let span = func.span();
    let lines = origin
        .into_iter()
        .filter(|(l, _)| span.contains(*l))
        .map(|(line, origin)| SliceLine {
            line,
            text: substitute(func.text(line), macros),
            origin,
        })
        .collect();
    EnhancedSlice {
        version: func.version,
        lines,
        macro_substitutions: macros
            .substitutions
            .iter()
            .map(|(k, v)| (k.clone(), v.value.clone()))
            .collect(),
        resolution: macros.clone(),
    }
}

/// Runs all three analyses and assembles the slice.
pub fn enhance(func: &AnnotatedFunction, index: &MacroIndex) -> Result<EnhancedSlice, EnhanceError> {
    let vars = collect_patch_variables(func)?;
    let df = dataflow_slice(func, &vars);
    let cf = controlflow_slice(func);
    let mut lines: BTreeSet<usize> = func.patch_lines().into_iter().collect();
    lines.extend(&df);
    lines.extend(&cf);
    let macros = resolve_macros(func, &lines, index);
    Ok(build_enhanced_slice(func, &df, &cf, &macros))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn func(src: &str, patch: &[usize]) -> AnnotatedFunction {
        let mut f = AnnotatedFunction::from_lines("f", VersionTag::Patched, src);
        for l in &mut f.lines {
            l.is_patch_line = patch.contains(&l.index);
        }
        f
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn assignment_variables() {
        let v = collect_patch_variables(&func("x = a + b;", &[1])).unwrap();
        assert_eq!(v.defined, set(&["x"]));
        assert_eq!(v.used, set(&["a", "b"]));
    }

    #[test]
    fn field_chains_flatten() {
        let v = collect_patch_variables(&func("if (s->session->sess_cert == NULL)", &[1])).unwrap();
        assert!(v.defined.is_empty());
        assert_eq!(v.used, set(&["s", "session", "sess_cert"]));
    }

    #[test]
    fn return_constant_is_empty() {
        let v = collect_patch_variables(&func("return 0;", &[1])).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn calls_macros_and_declarations() {
        let v = collect_patch_variables(&func("unsigned int n = foo(p, MAX_LEN);", &[1])).unwrap();
        assert_eq!(v.defined, set(&["n"]));
        assert_eq!(v.used, set(&["p"]));
        let v = collect_patch_variables(&func("len++;", &[1])).unwrap();
        assert_eq!(v.defined, set(&["len"]));
    }

    #[test]
    fn no_patch_lines_is_an_error() {
        assert!(matches!(
            collect_patch_variables(&func("x = 1;", &[])),
            Err(EnhanceError::NoPatchLines(_))
        ));
    }

    const TEN: &str = "\
int f(int a, int b)
{
    int t = a;
    int u = 0;
    u = b + 1;
    if (t > u)
        t = u;
    g(t);
    return u;
}";

    #[test]
    fn dataflow_lines_by_hand() {
        // patch on line 7 uses t and u
        let f = func(TEN, &[7]);
        let v = collect_patch_variables(&f).unwrap();
        let df = dataflow_slice(&f, &v);
        let want: BTreeSet<usize> = [3, 4, 5, 6, 8, 9].into();
        assert_eq!(df, want);
    }

    #[test]
    fn dataflow_with_empty_vars() {
        let f = func(TEN, &[9]);
        assert!(dataflow_slice(&f, &VariableSet::default()).is_empty());
    }

    const CF: &str = "\
int f(int c)
{
    int r = 0;
    if (c) {
        r = 1;
        r += 2;
    } else {
        r = 3;
    }
    next(r);
    return r;
}";

    #[test]
    fn control_lines_for_then_branch() {
        let f = func(CF, &[6]);
        let cf = controlflow_slice(&f);
        // if header, first statement, else header, else first statement, statement after
        let want: BTreeSet<usize> = [4, 5, 7, 8, 10].into();
        assert_eq!(cf, want);
    }

    #[test]
    fn control_lines_for_else_branch() {
        let f = func(CF, &[8]);
        let cf = controlflow_slice(&f);
        let want: BTreeSet<usize> = [4, 5, 7, 10].into();
        assert_eq!(cf, want);
    }

    #[test]
    fn top_level_patch_has_no_control_lines() {
        let f = func(CF, &[3]);
        assert!(controlflow_slice(&f).is_empty());
    }

    #[test]
    fn patch_on_header_takes_body_and_exit() {
        let f = func("int f(int c)\n{\n    if (c > 3)\n        return 0;\n    go();\n}", &[3]);
        let cf = controlflow_slice(&f);
        let want: BTreeSet<usize> = [4, 5].into();
        assert_eq!(cf, want);
    }

    #[test]
    fn slice_origins_first_wins() {
        let f = func(CF, &[6]);
        let df: BTreeSet<usize> = [5, 10].into();
        let cf: BTreeSet<usize> = [4, 5].into();
        let s = build_enhanced_slice(&f, &df, &cf, &MacroResolution::default());
        let got: Vec<(usize, LineOrigin)> = s.lines.iter().map(|l| (l.line, l.origin)).collect();
        assert_eq!(
            got,
            vec![
                (4, LineOrigin::Controlflow),
                (5, LineOrigin::Dataflow),
                (6, LineOrigin::Patch),
                (10, LineOrigin::Dataflow)
            ]
        );
    }

    #[test]
    fn identity_when_no_context() {
        let f = func(CF, &[6]);
        let s = build_enhanced_slice(&f, &BTreeSet::new(), &BTreeSet::new(), &MacroResolution::default());
        assert_eq!(s.line_numbers(), [6].into());
        assert_eq!(s.lines[0].origin, LineOrigin::Patch);
    }
}
