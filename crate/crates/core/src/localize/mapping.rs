//! Line mappings, response parsing and the token-LCS heuristic matcher.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::LocalizeError;
use crate::source::LineSpan;
use crate::verify::lexer::{lex_line, parse_int_literal, TokenKind};
use crate::source::PATCH_MARKER;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPair {
    pub source_line: usize,
    pub pseudo_lines: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineMapping {
    /// Query lines with at least one match, ascending.
    pub pairs: Vec<MappingPair>,
    pub unmatched_source_lines: Vec<usize>,
}

impl LineMapping {
    pub fn coverage(&self) -> usize {
        self.pairs.len()
    }

    pub fn pseudo_lines(&self) -> BTreeSet<usize> {
        self.pairs
            .iter()
            .flat_map(|p| p.pseudo_lines.iter().copied())
            .collect()
    }

    pub fn query_lines(&self) -> BTreeSet<usize> {
        self.pairs
            .iter()
            .map(|p| p.source_line)
            .chain(self.unmatched_source_lines.iter().copied())
            .collect()
    }

    fn from_map(map: BTreeMap<usize, BTreeSet<usize>>, query: &[usize]) -> LineMapping {
        let mut out = LineMapping::default();
        for &q in query.iter().collect::<BTreeSet<_>>() {
            match map.get(&q) {
                Some(p) if !p.is_empty() => out.pairs.push(MappingPair {
                    source_line: q,
                    pseudo_lines: p.iter().copied().collect(),
                }),
                _ => out.unmatched_source_lines.push(q),
            }
        }
        out
    }
}

/// `{"<query line>": [lines...]}` with unmatched lines as empty lists.
pub fn serialize_mapping(m: &LineMapping) -> String {
    let mut obj = serde_json::Map::new();
    let mut all: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for p in &m.pairs {
        all.insert(p.source_line, p.pseudo_lines.clone());
    }
    for &u in &m.unmatched_source_lines {
        all.entry(u).or_default();
    }
    for (k, v) in all {
        obj.insert(k.to_string(), Value::from(v));
    }
    Value::Object(obj).to_string()
}

fn as_line(v: &Value) -> Option<Vec<usize>> {
    match v {
        Value::Number(n) => n.as_u64().map(|n| vec![n as usize]),
        Value::String(s) => {
            let s = s.trim();
            if let Some((a, b)) = s.split_once('-') {
                let (a, b) = (a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?);
                (a <= b && b - a < 10_000).then(|| (a..=b).collect())
            } else {
                s.parse().ok().map(|n| vec![n])
            }
        }
        _ => None,
    }
}

fn as_lines(v: &Value) -> Option<Vec<usize>> {
    match v {
        Value::Null => Some(Vec::new()),
        Value::Array(items) => {
            let mut out = Vec::new();
            for i in items {
                out.extend(as_line(i)?);
            }
            Some(out)
        }
        other => as_line(other),
    }
}

fn mapping_object(v: &Value) -> Option<BTreeMap<usize, BTreeSet<usize>>> {
    let obj = v.as_object()?;
    if let Some(inner) = obj.get("mapping") {
        return mapping_object(inner);
    }
    if obj.is_empty() {
        return Some(BTreeMap::new());
    }
    let mut map = BTreeMap::new();
    for (k, v) in obj {
        let key: usize = k.trim().parse().ok()?;
        map.insert(key, as_lines(v)?.into_iter().collect());
    }
    Some(map)
}

/// Every JSON object that parses at some `{` of `raw`, in order of position.
pub fn json_objects(raw: &str) -> impl Iterator<Item = Value> + '_ {
    raw.char_indices().filter(|(_, c)| *c == '{').filter_map(move |(i, _)| {
        let mut it = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match it.next() {
            Some(Ok(v @ Value::Object(_))) => Some(v),
            _ => None,
        }
    })
}

/// Extracts the first mapping object from `raw`, tolerating prose and code
/// fences around it. Keys outside `query` are dropped; values must lie in
/// `span`.
pub fn parse_localization_response(
    raw: &str,
    query: &[usize],
    span: LineSpan,
) -> Result<LineMapping, LocalizeError> {
    let map = json_objects(raw)
        .find_map(|v| mapping_object(&v))
        .ok_or_else(|| LocalizeError::UnparseableResponse(snippet(raw)))?;
    let wanted: BTreeSet<usize> = query.iter().copied().collect();
    let mut kept = BTreeMap::new();
    for (k, v) in map {
        if !wanted.contains(&k) {
            continue;
        }
        if let Some(bad) = v.iter().find(|l| !span.contains(**l)) {
            return Err(LocalizeError::OutOfRangeLines {
                line: *bad,
                start: span.start,
                end: span.end,
            });
        }
        kept.insert(k, v);
    }
    Ok(LineMapping::from_map(kept, query))
}

fn snippet(raw: &str) -> String {
    let s: String = raw.chars().take(80).collect();
    if raw.chars().count() > 80 {
        format!("{s}...")
    } else {
        s
    }
}

/// Tokens used for similarity: comments and braces dropped, integer
/// literals replaced by their decimal value.
pub fn similarity_tokens(text: &str) -> Vec<String> {
    let text = text.trim_end();
    let text = text.strip_suffix(PATCH_MARKER).unwrap_or(text);
    lex_line(text)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Comment)
        .filter(|t| !(t.is_punct("{") || t.is_punct("}") || t.is_punct(";")))
        .map(|t| match t.kind {
            TokenKind::IntLiteral => parse_int_literal(&t.lexeme)
                .map(|v| v.to_string())
                .unwrap_or(t.lexeme),
            _ => t.lexeme,
        })
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2 * LCS / (|a| + |b|)` over similarity tokens.
pub fn lcs_ratio(a: &str, b: &str) -> f64 {
    ratio_tokens(&similarity_tokens(a), &similarity_tokens(b))
}

fn ratio_tokens(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    2.0 * lcs_len(a, b) as f64 / (a.len() + b.len()) as f64
}

pub const HEURISTIC_THRESHOLD: f64 = 0.5;

/// Maps each query line (1-based position in `slice_lines`) to the best
/// scoring line of `seg_lines` (1-based). Below the threshold the query
/// line is unmatched; ties go to the lowest line.
pub fn heuristic_localize(slice_lines: &[&str], seg_lines: &[&str]) -> LineMapping {
    let q: Vec<(usize, &str)> = slice_lines.iter().enumerate().map(|(i, t)| (i + 1, *t)).collect();
    let s: Vec<(usize, &str)> = seg_lines.iter().enumerate().map(|(i, t)| (i + 1, *t)).collect();
    heuristic_localize_numbered(&q, &s)
}

/// Same as [`heuristic_localize`] with explicit line numbers on both sides.
pub fn heuristic_localize_numbered(query: &[(usize, &str)], corpus: &[(usize, &str)]) -> LineMapping {
    let corpus_toks: Vec<(usize, Vec<String>)> = corpus
        .iter()
        .map(|(n, t)| (*n, similarity_tokens(t)))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let mut map = BTreeMap::new();
    for (qn, qt) in query {
        let qtoks = similarity_tokens(qt);
        if qtoks.is_empty() {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (cn, ct) in &corpus_toks {
            let r = ratio_tokens(&qtoks, ct);
            if best.is_none_or(|(b, bn)| r > b || (r == b && *cn < bn)) {
                best = Some((r, *cn));
            }
        }
        if let Some((r, cn)) = best {
            if r >= HEURISTIC_THRESHOLD {
                map.insert(*qn, BTreeSet::from([cn]));
            }
        }
    }
    let lines: Vec<usize> = query.iter().map(|(n, _)| *n).collect();
    LineMapping::from_map(map, &lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(a: usize, b: usize) -> LineSpan {
        LineSpan::new(a, b)
    }

    #[test]
    fn plain_object() {
        let m = parse_localization_response("{\"1\": [12,13]}", &[1], span(1, 50)).unwrap();
        assert_eq!(m.pairs, vec![MappingPair { source_line: 1, pseudo_lines: vec![12, 13] }]);
        assert!(m.unmatched_source_lines.is_empty());
    }

    #[test]
    fn chatty_fenced_response() {
        let raw = "Sure! Here is what I found {roughly}.\n```json\n{\n  \"4\": [\"20\"],\n  \"5\": []\n}\n```\nHope it helps.";
        let m = parse_localization_response(raw, &[4, 5], span(1, 50)).unwrap();
        assert_eq!(m.pairs, vec![MappingPair { source_line: 4, pseudo_lines: vec![20] }]);
        assert_eq!(m.unmatched_source_lines, vec![5]);
    }

    #[test]
    fn wrapped_and_ranges() {
        let m = parse_localization_response("{\"mapping\": {\"2\": \"7-9\"}}", &[2], span(1, 10)).unwrap();
        assert_eq!(m.pairs[0].pseudo_lines, vec![7, 8, 9]);
    }

    #[test]
    fn out_of_range() {
        let e = parse_localization_response("{\"1\": [999]}", &[1], span(1, 50)).unwrap_err();
        assert!(matches!(e, LocalizeError::OutOfRangeLines { line: 999, .. }));
    }

    #[test]
    fn unparseable() {
        let e = parse_localization_response("no idea, sorry", &[1], span(1, 5)).unwrap_err();
        assert!(matches!(e, LocalizeError::UnparseableResponse(_)));
        let e = parse_localization_response("{\"line\": \"x\"}", &[1], span(1, 5)).unwrap_err();
        assert!(matches!(e, LocalizeError::UnparseableResponse(_)));
    }

    #[test]
    fn round_trip() {
        let m = LineMapping {
            pairs: vec![
                MappingPair { source_line: 2, pseudo_lines: vec![5] },
                MappingPair { source_line: 3, pseudo_lines: vec![6, 7] },
            ],
            unmatched_source_lines: vec![9],
        };
        let back = parse_localization_response(&serialize_mapping(&m), &[2, 3, 9], span(1, 10)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn identity_ratio() {
        let m = heuristic_localize(&["x = y + 1;"], &["q = 2;", "x = y + 1;"]);
        assert_eq!(m.pairs[0].pseudo_lines, vec![2]);
        assert_eq!(lcs_ratio("x = y + 1;", "x = y + 1;"), 1.0);
    }

    #[test]
    fn constant_canonicalization_helps() {
        // tokens: [if ( x == 771 )] vs [if ( v3 == 771 )], LCS 5 of 6 + 6
        let r = lcs_ratio("if (x == 0x303)", "if ( v3 == 771 )");
        assert!((r - 10.0 / 12.0).abs() < 1e-12);
        let m = heuristic_localize(&["if (x == 0x303)"], &["if ( v3 == 771 )"]);
        assert_eq!(m.coverage(), 1);
    }

    #[test]
    fn unrelated_is_unmatched() {
        let m = heuristic_localize(&["free(buf);"], &["v2 = a1 + 8;", "return 0LL;"]);
        assert_eq!(m.coverage(), 0);
        assert_eq!(m.unmatched_source_lines, vec![1]);
    }

    #[test]
    fn tie_goes_low() {
        let m = heuristic_localize(&["a = 1;"], &["b = 2;", "a = 1;", "a = 1;"]);
        assert_eq!(m.pairs[0].pseudo_lines, vec![2]);
    }
}
