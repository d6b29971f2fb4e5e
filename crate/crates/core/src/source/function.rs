use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::diff::{LineTag, PatchDiff};
use super::syntax::{parse_function_lines, LineSpan, Node};
use super::SourceError;
use crate::verify::lexer::{lex_line_with_state, LexState, TokenKind};

/// Suffix appended to patch lines when a function is rendered for a prompt.
pub const PATCH_MARKER: &str = "//patch_code";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VersionTag {
    PrePatch,
    Patched,
}

impl VersionTag {
    pub fn other(self) -> VersionTag {
        match self {
            VersionTag::PrePatch => VersionTag::Patched,
            VersionTag::Patched => VersionTag::PrePatch,
        }
    }

    /// Diff lines that belong to this version.
    pub fn diff_tag(self) -> LineTag {
        match self {
            VersionTag::PrePatch => LineTag::Deleted,
            VersionTag::Patched => LineTag::Added,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VersionTag::PrePatch => "pre-patch",
            VersionTag::Patched => "patched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLine {
    /// 1-based, relative to the function's first line.
    pub index: usize,
    pub text: String,
    pub is_patch_line: bool,
}

/// One function's source with per-line patch markers and a syntax tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedFunction {
    pub name: String,
    pub version: VersionTag,
    /// Line number of the function's first line in the original file.
    pub file_start_line: usize,
    pub lines: Vec<SourceLine>,
    pub syntax: Node,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl AnnotatedFunction {
    /// Builds a function directly from its lines (no surrounding file).
    pub fn from_lines(name: &str, version: VersionTag, text: &str) -> Self {
        let raw: Vec<&str> = text.lines().collect();
        let parsed = parse_function_lines(&raw);
        AnnotatedFunction {
            name: name.to_string(),
            version,
            file_start_line: 1,
            lines: raw
                .iter()
                .enumerate()
                .map(|(i, t)| SourceLine {
                    index: i + 1,
                    text: t.to_string(),
                    is_patch_line: false,
                })
                .collect(),
            syntax: parsed.root,
            path: None,
        }
    }

    pub fn span(&self) -> LineSpan {
        LineSpan::new(1, self.lines.len().max(1))
    }

    pub fn line(&self, index: usize) -> Option<&SourceLine> {
        index.checked_sub(1).and_then(|i| self.lines.get(i))
    }

    pub fn text(&self, index: usize) -> &str {
        self.line(index).map(|l| l.text.as_str()).unwrap_or("")
    }

    pub fn patch_lines(&self) -> Vec<usize> {
        self.lines
            .iter()
            .filter(|l| l.is_patch_line)
            .map(|l| l.index)
            .collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.lines.iter().map(|l| l.text.as_str()).collect()
    }

    /// Function text with `//patch_code` appended to patch lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&l.text);
            if l.is_patch_line {
                out.push(' ');
                out.push_str(PATCH_MARKER);
            }
            out.push('\n');
        }
        out
    }

    /// Same function with `replace` applied to every line's text. The syntax
    /// tree is kept: substitutions never change line structure.
    pub fn map_text(&self, mut replace: impl FnMut(&str) -> String) -> Self {
        let mut out = self.clone();
        for l in &mut out.lines {
            l.text = replace(&l.text);
        }
        out
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Locates the definition of `name` in `source_text` and returns it with all
/// patch markers cleared.
pub fn extract_function(
    source_text: &str,
    name: &str,
    version: VersionTag,
) -> Result<AnnotatedFunction, SourceError> {
    let file_lines: Vec<&str> = source_text.lines().collect();

    // Flatten tokens with their 0-based line numbers; skip preprocessor lines.
    let mut toks = Vec::new();
    let mut state = LexState::default();
    for (i, line) in file_lines.iter().enumerate() {
        if !state.in_block_comment && line.trim_start().starts_with('#') {
            toks.push((i, None));
            continue;
        }
        for t in lex_line_with_state(line, &mut state) {
            if t.kind != TokenKind::Comment {
                toks.push((i, Some(t)));
            }
        }
    }

    let mut depth = 0i64;
    let mut stmt_start: Option<usize> = None;
    let mut k = 0usize;
    while k < toks.len() {
        let (line, tok) = &toks[k];
        let Some(tok) = tok else {
            stmt_start = None;
            k += 1;
            continue;
        };
        if depth == 0 && stmt_start.is_none() {
            stmt_start = Some(*line);
        }
        if tok.is_punct("{") {
            depth += 1;
        } else if tok.is_punct("}") {
            depth -= 1;
            if depth == 0 {
                stmt_start = None;
            }
        } else if depth == 0 && tok.is_punct(";") {
            stmt_start = None;
        } else if depth == 0
            && tok.kind == TokenKind::Identifier
            && tok.lexeme == name
            && toks
                .get(k + 1)
                .and_then(|(_, t)| t.as_ref())
                .is_some_and(|t| t.is_punct("("))
        {
            // skip the parameter list
            let mut j = k + 1;
            let mut pd = 0i64;
            while j < toks.len() {
                if let Some(t) = &toks[j].1 {
                    if t.is_punct("(") {
                        pd += 1;
                    } else if t.is_punct(")") {
                        pd -= 1;
                        if pd == 0 {
                            break;
                        }
                    }
                }
                j += 1;
            }
            // a definition has `{` before any `;`
            let mut m = j + 1;
            let mut open = None;
            while m < toks.len() {
                match &toks[m].1 {
                    Some(t) if t.is_punct("{") => {
                        open = Some(m);
                        break;
                    }
                    Some(t) if t.is_punct(";") && pd == 0 => {
                        // K&R parameter declarations end in ';' too; only
                        // stop when a plain prototype is evident.
                        if m == j + 1 {
                            break;
                        }
                    }
                    Some(t) if t.is_punct("}") => break,
                    None => break,
                    _ => {}
                }
                m += 1;
            }
            if let Some(open) = open {
                let mut bd = 0i64;
                let mut close = None;
                for (n, (_, t)) in toks.iter().enumerate().skip(open) {
                    if let Some(t) = t {
                        if t.is_punct("{") {
                            bd += 1;
                        } else if t.is_punct("}") {
                            bd -= 1;
                            if bd == 0 {
                                close = Some(n);
                                break;
                            }
                        }
                    }
                }
                let Some(close) = close else {
                    return Err(SourceError::UnbalancedBraces(name.to_string()));
                };
                let first = stmt_start.unwrap_or(*line);
                let last = toks[close].0;
                let text = file_lines[first..=last].join("\n");
                let mut f = AnnotatedFunction::from_lines(name, version, &text);
                f.file_start_line = first + 1;
                return Ok(f);
            }
        }
        k += 1;
    }
    Err(SourceError::FunctionNotFound(name.to_string()))
}

/// Marks the diff lines that belong to `func.version` (added lines for the
/// patched version, deleted lines for the pre-patch version).
///
/// Lines are matched by whitespace-collapsed text; duplicates resolve to the
/// occurrence nearest the line number implied by the hunk header.
pub fn annotate_patch_lines(
    func: &AnnotatedFunction,
    diff: &PatchDiff,
) -> Result<AnnotatedFunction, SourceError> {
    let mut out = func.clone();
    for l in &mut out.lines {
        l.is_patch_line = false;
    }
    let tag = func.version.diff_tag();
    let collapsed: Vec<String> = out.lines.iter().map(|l| collapse_ws(&l.text)).collect();
    let mut claimed: HashSet<usize> = HashSet::new();
    for hunk in &diff.hunks {
        for (file_line, text) in hunk.numbered(tag) {
            let want = collapse_ws(text);
            if want.is_empty() {
                continue;
            }
            let expected = file_line as i64 - func.file_start_line as i64 + 1;
            let best = collapsed
                .iter()
                .enumerate()
                .filter(|(i, c)| **c == want && !claimed.contains(&(i + 1)))
                .map(|(i, _)| i + 1)
                .min_by_key(|idx| ((*idx as i64 - expected).abs(), *idx));
            match best {
                Some(idx) => {
                    claimed.insert(idx);
                    out.lines[idx - 1].is_patch_line = true;
                }
                None => return Err(SourceError::PatchLineNotFound(text.trim().to_string())),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::diff::parse_unified_diff;
    use crate::source::syntax::NodeKind;

    #[test]
    fn tiny_function() {
        let f = extract_function("int f(void){return 0;}", "f", VersionTag::Patched).unwrap();
        assert_eq!(f.lines.len(), 1);
        assert_eq!(f.syntax.children.len(), 1);
        assert_eq!(f.syntax.children[0].kind, NodeKind::Return);
        assert!(f.patch_lines().is_empty());
    }

    #[test]
    fn missing_function() {
        let err = extract_function("int f(void){return 0;}", "g", VersionTag::Patched).unwrap_err();
        assert_eq!(err, SourceError::FunctionNotFound("g".into()));
    }

    #[test]
    fn unbalanced_function() {
        let err = extract_function("int f(void){ if (x) { return 0;}", "f", VersionTag::Patched)
            .unwrap_err();
        assert_eq!(err, SourceError::UnbalancedBraces("f".into()));
    }

    #[test]
    fn skips_prototypes_and_calls() {
        let src = "\
#include <stdio.h>
int g(int x);
static int h(void) { return g(1); }

/* the one we want */
int
g(int x)
{
    return x + 1;
}
";
        let f = extract_function(src, "g", VersionTag::PrePatch).unwrap();
        assert_eq!(f.file_start_line, 6);
        assert_eq!(f.lines[0].text, "int");
        assert_eq!(f.lines.len(), 5);
    }

    const PATCHED: &str = "\
long ssl_get_algorithm2(SSL *s)
{
\tlong alg2 = s->s3->tmp.new_cipher->algorithm2;
\tif (s->method->version == TLS1_2_VERSION &&
\t    alg2 == (SSL_HANDSHAKE_MAC_DEFAULT|TLS1_PRF))
\t\treturn SSL_HANDSHAKE_MAC_SHA256 | TLS1_PRF_SHA256;
\treturn alg2;
}";

    const DIFF: &str = "\
--- a/ssl/s3_lib.c
+++ b/ssl/s3_lib.c
@@ -1,5 +1,5 @@
 long ssl_get_algorithm2(SSL *s)
 {
 \tlong alg2 = s->s3->tmp.new_cipher->algorithm2;
-\tif (s->version >= TLS1_2_VERSION &&
+\tif (s->method->version == TLS1_2_VERSION &&
 \t    alg2 == (SSL_HANDSHAKE_MAC_DEFAULT|TLS1_PRF))
";

    #[test]
    fn marks_added_line() {
        let f = extract_function(PATCHED, "ssl_get_algorithm2", VersionTag::Patched).unwrap();
        let d = parse_unified_diff(DIFF).unwrap();
        let a = annotate_patch_lines(&f, &d).unwrap();
        assert_eq!(a.patch_lines(), vec![4]);
        assert!(a
            .render()
            .contains("TLS1_2_VERSION && //patch_code\n"));
        // idempotent
        let b = annotate_patch_lines(&a, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_added_line() {
        let f = AnnotatedFunction::from_lines("f", VersionTag::Patched, "int f() {\n return 0;\n}");
        let d = parse_unified_diff("@@ -1,1 +1,2 @@\n int f() {\n+  x = 1;\n").unwrap();
        let err = annotate_patch_lines(&f, &d).unwrap_err();
        assert_eq!(err, SourceError::PatchLineNotFound("x = 1;".into()));
    }

    #[test]
    fn duplicate_lines_resolve_near_hunk_position() {
        let f = AnnotatedFunction::from_lines(
            "f",
            VersionTag::Patched,
            "int f() {\n  free(p);\n  a();\n  b();\n  c();\n  free(p);\n}",
        );
        let d = parse_unified_diff("@@ -5,1 +5,2 @@\n   c();\n+  free(p);\n").unwrap();
        let a = annotate_patch_lines(&f, &d).unwrap();
        assert_eq!(a.patch_lines(), vec![6]);
    }

    #[test]
    fn prepatch_marks_deleted_lines() {
        let f = AnnotatedFunction::from_lines(
            "f",
            VersionTag::PrePatch,
            "int f(int t) {\n  if (t == 22)\n    skip = 1;\n  return 0;\n}",
        );
        let d = parse_unified_diff(
            "@@ -1,4 +1,2 @@\n int f(int t) {\n-  if (t == 22)\n-    skip = 1;\n   return 0;\n",
        )
        .unwrap();
        let a = annotate_patch_lines(&f, &d).unwrap();
        assert_eq!(a.patch_lines(), vec![2, 3]);
    }
}
