//! Pseudocode ingestion, structural segmentation and source truncation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::source::syntax::parse_function_lines;
use crate::source::{AnnotatedFunction, LineSpan, Node, PATCH_MARKER};
use crate::verify::lexer::{lex_line_with_state, LexState, TokenKind};

pub const DEFAULT_TOKEN_LIMIT: usize = 3000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("pseudocode input is empty")]
    EmptyInput,
    #[error("function `{0}` has no patch line to anchor on")]
    AnchorMissing(String),
}

/// Per-line token counts; block comments spanning lines are tracked.
pub fn line_token_counts<S: AsRef<str>>(lines: &[S]) -> Vec<usize> {
    let mut state = LexState::default();
    lines
        .iter()
        .map(|l| {
            lex_line_with_state(l.as_ref(), &mut state)
                .iter()
                .filter(|t| t.kind != TokenKind::Comment)
                .count()
        })
        .collect()
}

/// Decompiled target function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoFunction {
    pub name: String,
    /// Line `i` of the function is `lines[i - 1]`.
    pub lines: Vec<String>,
    pub syntax: Node,
    /// Structure came from brace counting only.
    pub fallback: bool,
}

impl PseudoFunction {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn span(&self) -> LineSpan {
        LineSpan::new(1, self.lines.len().max(1))
    }

    pub fn text(&self, line: usize) -> &str {
        line.checked_sub(1)
            .and_then(|i| self.lines.get(i))
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn token_counts(&self) -> Vec<usize> {
        line_token_counts(&self.lines)
    }

    /// Numbered listing of a line range.
    pub fn render_span(&self, span: LineSpan) -> String {
        let mut out = String::new();
        for l in span.lines() {
            if l > self.lines.len() {
                break;
            }
            out.push_str(&format!("{l}: {}\n", self.text(l)));
        }
        out
    }
}

fn signature_name(lines: &[&str]) -> Option<String> {
    for l in lines.iter().take(8) {
        let toks = crate::verify::lexer::lex_line(l);
        if let Some(i) = toks.iter().position(|t| t.is_punct("(")) {
            if let Some(t) = toks[..i].iter().rev().find(|t| t.kind == TokenKind::Identifier) {
                return Some(t.lexeme.clone());
            }
        }
        if l.contains('{') {
            break;
        }
    }
    None
}

/// Parses one function's pseudocode. Leading and trailing blank lines are
/// dropped so line 1 is the signature.
pub fn parse_pseudocode(text: &str) -> Result<PseudoFunction, IngestError> {
    let all: Vec<&str> = text.lines().collect();
    let Some(first) = all.iter().position(|l| !l.trim().is_empty()) else {
        return Err(IngestError::EmptyInput);
    };
    let last = all.iter().rposition(|l| !l.trim().is_empty()).unwrap_or(first);
    let raw = &all[first..=last];
    let parsed = parse_function_lines(raw);
    Ok(PseudoFunction {
        name: signature_name(raw).unwrap_or_else(|| "pseudo".to_string()),
        lines: raw.iter().map(|s| s.to_string()).collect(),
        syntax: parsed.root,
        fallback: parsed.fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoSegment {
    pub parent: String,
    pub span: LineSpan,
    pub token_count: usize,
    /// A single indivisible unit larger than the limit.
    pub over_limit: bool,
}

fn span_tokens(counts: &[usize], span: LineSpan) -> usize {
    span.lines().map(|l| counts.get(l - 1).copied().unwrap_or(0)).sum()
}

/// Splits `node` into consecutive structural units of at most `limit` tokens
/// where possible. Lines not covered by a child form runs of their own.
fn units(node: &Node, counts: &[usize], limit: usize, out: &mut Vec<LineSpan>) {
    if node.children.is_empty() || span_tokens(counts, node.span) <= limit {
        out.push(node.span);
        return;
    }
    let gap = |from: usize, to: usize, out: &mut Vec<LineSpan>| {
        if from > to {
            return;
        }
        let run = LineSpan::new(from, to);
        if span_tokens(counts, run) <= limit {
            out.push(run);
        } else {
            out.extend(run.lines().map(|l| LineSpan::new(l, l)));
        }
    };
    let mut next = node.span.start;
    for c in &node.children {
        gap(next, c.span.start.saturating_sub(1), out);
        units(c, counts, limit, out);
        next = c.span.end + 1;
    }
    gap(next, node.span.end, out);
}

/// Disjoint segments covering the whole function, cut only between
/// structural units and packed greedily up to `limit` tokens.
pub fn segment_pseudocode(func: &PseudoFunction, token_limit: usize) -> Vec<PseudoSegment> {
    let limit = token_limit.max(1);
    let counts = func.token_counts();
    let mut parts = Vec::new();
    units(&func.syntax, &counts, limit, &mut parts);
    let mut segs: Vec<PseudoSegment> = Vec::new();
    let mut cur: Option<(LineSpan, usize)> = None;
    for p in parts {
        let t = span_tokens(&counts, p);
        cur = match cur {
            Some((span, n)) if n + t <= limit => Some((LineSpan::new(span.start, p.end), n + t)),
            Some((span, n)) => {
                segs.push(segment(func, span, n, limit));
                Some((p, t))
            }
            None => Some((p, t)),
        };
    }
    if let Some((span, n)) = cur {
        segs.push(segment(func, span, n, limit));
    }
    segs
}

fn segment(func: &PseudoFunction, span: LineSpan, tokens: usize, limit: usize) -> PseudoSegment {
    PseudoSegment {
        parent: func.name.clone(),
        span,
        token_count: tokens,
        over_limit: tokens > limit,
    }
}

/// Annotated source window around the first patch line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedSource {
    pub span: LineSpan,
    pub anchor: usize,
    /// Numbered lines with `//patch_code` on marked lines.
    pub rendered_text: String,
    pub token_count: usize,
    /// Lines carrying the marker.
    pub marked: BTreeSet<usize>,
    /// Mandatory structure alone exceeded the limit.
    pub over_limit: bool,
}

impl TruncatedSource {
    pub fn has_marker(&self) -> bool {
        self.rendered_text.contains(PATCH_MARKER)
    }
}

/// Largest node around `line` that does not overlap `span`; the line alone
/// when every enclosing node overlaps.
fn next_unit(root: &Node, line: usize, span: LineSpan) -> LineSpan {
    root.path_to_line(line)
        .into_iter()
        .find(|n| n.span.end < span.start || n.span.start > span.end)
        .map(|n| n.span)
        .unwrap_or(LineSpan::new(line, line))
}

fn initial_span(func: &AnnotatedFunction, anchor: usize) -> LineSpan {
    let path = func.syntax.path_to_line(anchor);
    let mut span = match path.last() {
        Some(n) if n.children.is_empty() && path.len() > 1 => n.span,
        _ => LineSpan::new(anchor, anchor),
    };
    for n in path.iter().skip(1) {
        if n.kind == crate::source::NodeKind::Loop {
            span = LineSpan::new(span.start.min(n.span.start), span.end.max(n.span.end));
        }
    }
    span
}

/// Expands from the first patch line, alternating up and down one node at
/// a time, until the next step would exceed `token_limit`.
pub fn truncate_source(func: &AnnotatedFunction, token_limit: usize) -> Result<TruncatedSource, IngestError> {
    let marked: BTreeSet<usize> = func.patch_lines().into_iter().collect();
    truncate_marked(func, &marked, &BTreeMap::new(), token_limit)
}

/// Like [`truncate_source`], but marks every line of `marked` and renders
/// the replacement texts given in `texts`.
pub fn truncate_marked(
    func: &AnnotatedFunction,
    marked: &BTreeSet<usize>,
    texts: &BTreeMap<usize, String>,
    token_limit: usize,
) -> Result<TruncatedSource, IngestError> {
    let anchor = func
        .patch_lines()
        .first()
        .copied()
        .ok_or_else(|| IngestError::AnchorMissing(func.name.clone()))?;
    let line_texts: Vec<&str> = (1..=func.lines.len())
        .map(|l| texts.get(&l).map(String::as_str).unwrap_or(func.text(l)))
        .collect();
    let counts = line_token_counts(&line_texts);
    let total = func.lines.len();
    let mut span = initial_span(func, anchor);
    let mut tokens = span_tokens(&counts, span);
    let over_limit = tokens > token_limit;
    let (mut up_open, mut down_open) = (true, true);
    let mut up_turn = true;
    while up_open || down_open {
        let going_up = if up_open && down_open { up_turn } else { up_open };
        up_turn = !up_turn;
        let edge = if going_up { span.start.checked_sub(1).filter(|&l| l >= 1) } else { Some(span.end + 1).filter(|&l| l <= total) };
        let Some(line) = edge else {
            if going_up {
                up_open = false;
            } else {
                down_open = false;
            }
            continue;
        };
        let unit = next_unit(&func.syntax, line, span);
        let add = span_tokens(&counts, unit);
        if tokens + add > token_limit {
            if going_up {
                up_open = false;
            } else {
                down_open = false;
            }
            continue;
        }
        tokens += add;
        span = LineSpan::new(span.start.min(unit.start), span.end.max(unit.end));
    }
    let mut rendered = String::new();
    for l in span.lines() {
        rendered.push_str(&format!("{l}: {}", line_texts[l - 1]));
        if marked.contains(&l) {
            rendered.push(' ');
            rendered.push_str(PATCH_MARKER);
        }
        rendered.push('\n');
    }
    Ok(TruncatedSource {
        span,
        anchor,
        rendered_text: rendered,
        token_count: tokens,
        marked: marked.iter().copied().filter(|l| span.contains(*l)).collect(),
        over_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{NodeKind, VersionTag};

    fn annotated(src: &str, patch: &[usize]) -> AnnotatedFunction {
        let mut f = AnnotatedFunction::from_lines("f", VersionTag::Patched, src);
        for l in &mut f.lines {
            l.is_patch_line = patch.contains(&l.index);
        }
        f
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_pseudocode(" \n\n"), Err(IngestError::EmptyInput));
    }

    #[test]
    fn pseudo_tree_and_name() {
        let p = parse_pseudocode(
            "__int64 __fastcall sub_401000(__int64 a1)\n{\n  int v3;\n\n  v3 = *(_DWORD *)(a1 + 8);\n  if ( v3 > 1 )\n    return 0LL;\n  return v3;\n}\n",
        )
        .unwrap();
        assert_eq!(p.name, "sub_401000");
        assert!(!p.fallback);
        assert!(p.syntax.check_nesting());
        let path = p.syntax.path_to_line(5);
        let deepest = path.last().unwrap();
        assert!(!deepest.kind.is_control());
        assert_eq!(deepest.span, LineSpan::new(5, 5));
    }

    #[test]
    fn unbalanced_braces_fall_back() {
        let p = parse_pseudocode("int f()\n{\n  if ( a ) {\n  b = 1;\n").unwrap();
        assert!(p.fallback);
        let segs = segment_pseudocode(&p, 3);
        let covered: usize = segs.iter().map(|s| s.span.len()).sum();
        assert_eq!(covered, p.len());
    }

    #[test]
    fn small_function_is_one_segment() {
        let p = parse_pseudocode("int f(int a)\n{\n  return a + 1;\n}").unwrap();
        let segs = segment_pseudocode(&p, 4000);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].span, p.span());
    }

    fn three_blocks() -> String {
        let mut s = String::from("void g()\n{\n");
        for b in 0..3 {
            s.push_str(&format!("  if ( v{b} )\n  {{\n"));
            for i in 0..4 {
                s.push_str(&format!("    a{i} = b{i} + c{i};\n"));
            }
            s.push_str("  }\n");
        }
        s.push_str("}\n");
        s
    }

    #[test]
    fn three_blocks_split_at_block_boundaries() {
        let p = parse_pseudocode(&three_blocks()).unwrap();
        let counts = p.token_counts();
        let block = span_tokens(&counts, p.syntax.children[0].span);
        // each block is about 60% of the limit
        let limit = block * 10 / 6;
        let segs = segment_pseudocode(&p, limit);
        assert_eq!(segs.len(), 3);
        let starts: Vec<usize> = p.syntax.children.iter().map(|c| c.span.start).collect();
        for s in &segs[1..] {
            assert!(starts.contains(&s.span.start), "{:?}", s.span);
        }
        for w in segs.windows(2) {
            assert_eq!(w[0].span.end + 1, w[1].span.start);
        }
        assert!(segs.iter().all(|s| s.token_count <= limit && !s.over_limit));
    }

    #[test]
    fn oversize_statement_is_flagged() {
        let p = parse_pseudocode("void h()\n{\n  x = a + b + c + d + e + f + g;\n}").unwrap();
        let segs = segment_pseudocode(&p, 5);
        assert!(segs.iter().any(|s| s.over_limit && s.span == LineSpan::new(3, 3)));
    }

    #[test]
    fn truncation_covers_small_function() {
        let f = annotated("int f(int a)\n{\n  a = a + 1;\n  return a;\n}", &[3]);
        let t = truncate_source(&f, 1000).unwrap();
        assert_eq!(t.span, LineSpan::new(1, 5));
        assert!(t.rendered_text.contains("3:   a = a + 1; //patch_code\n"));
    }

    #[test]
    fn anchor_missing() {
        let f = annotated("int f()\n{\n}", &[]);
        assert!(matches!(truncate_source(&f, 10), Err(IngestError::AnchorMissing(_))));
    }

    fn loop_fixture() -> String {
        let mut s = String::from("int f(int n)\n{\n  int s = 0;\n  int k = 1;\n  for (i = 0; i < n; i++) {\n");
        for j in 0..28 {
            s.push_str(&format!("    s = s + {j};\n"));
        }
        s.push_str("  }\n  return s;\n}\n");
        s
    }

    #[test]
    fn loop_fitting_exactly_is_the_span() {
        let src = loop_fixture();
        let f = annotated(&src, &[10]);
        let lp = f.syntax.children.iter().find(|c| c.kind == NodeKind::Loop).unwrap().span;
        assert_eq!(lp.len(), 30);
        let texts = f.texts();
        let limit = span_tokens(&line_token_counts(&texts), lp);
        let t = truncate_source(&f, limit).unwrap();
        assert_eq!(t.span, lp);
        assert!(!t.over_limit);
    }

    #[test]
    fn tight_limit_keeps_loop_and_flags() {
        let f = annotated(&loop_fixture(), &[10]);
        let t = truncate_source(&f, 20).unwrap();
        let lp = f.syntax.children.iter().find(|c| c.kind == NodeKind::Loop).unwrap().span;
        assert_eq!(t.span, lp);
        assert!(t.over_limit);
    }

    #[test]
    fn expansion_starts_upward() {
        let f = annotated("void f()\n{\n  a = 1;\n  b = 2;\n  c = 3;\n}", &[4]);
        // anchor 4 tokens, one more statement fits
        let t = truncate_source(&f, 8).unwrap();
        assert_eq!(t.span, LineSpan::new(3, 4));
    }
}
