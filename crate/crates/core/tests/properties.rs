use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use patchprobe_core::enhance::{enhance, MacroIndex};
use patchprobe_core::ingest::{line_token_counts, parse_pseudocode, segment_pseudocode, truncate_source};
use patchprobe_core::localize::{parse_localization_response, serialize_mapping, LineMapping, MappingPair};
use patchprobe_core::source::{AnnotatedFunction, LineSpan, Node, NodeKind};
use patchprobe_core::verify::equations::EquationSet;
use patchprobe_core::verify::parse::{parse_strict, VarContext};
use patchprobe_core::verify::statement::parse_canonical;
use patchprobe_core::verify::{
    check_equivalence, check_expressions, equations_from_lines, is_trivial, render_tokens, Backend, EquivConfig,
    EquivVerdict, StatementKind,
};
use patchprobe_core::{
    classify_patch, compute_metrics, lex_line, parse_unified_diff, GroundTruth, PatchKind, VerdictValue, VersionTag,
};
use proptest::prelude::*;

fn atom() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("a".to_string()),
        Just("b".to_string()),
        Just("s->len".to_string()),
        Just("buf[2]".to_string()),
        (0u64..2000).prop_map(|n| n.to_string()),
        (0u64..0x10000).prop_map(|n| format!("{n:#x}")),
    ]
}

fn cond_expr() -> impl Strategy<Value = String> {
    let ops = prop::sample::select(vec![
        "==", "!=", "<", "<=", ">", ">=", "+", "-", "*", "&", "|", "^", "<<", ">>", "&&", "||",
    ]);
    atom().prop_recursive(3, 16, 2, move |inner| {
        prop_oneof![
            (inner.clone(), ops.clone(), inner.clone()).prop_map(|(a, o, b)| format!("{a} {o} {b}")),
            inner.clone().prop_map(|a| format!("!({a})")),
            inner.prop_map(|a| format!("({a})")),
        ]
    })
}

fn small_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![Just("x1".to_string()), Just("x2".to_string()), (0u64..8).prop_map(|n| n.to_string())];
    let ops = prop::sample::select(vec![
        "==", "!=", "<", "<=", ">", ">=", "+", "-", "*", "/", "%", "&", "|", "^", "<<", ">>", "&&", "||",
    ]);
    leaf.prop_recursive(3, 12, 2, move |inner| {
        prop_oneof![
            (inner.clone(), ops.clone(), inner.clone()).prop_map(|(a, o, b)| format!("({a} {o} {b})")),
            (prop::sample::select(vec!["!", "~", "-"]), inner).prop_map(|(u, a)| format!("{u}({a})")),
        ]
    })
}

fn statement() -> impl Strategy<Value = String> {
    prop_oneof![
        (atom(), cond_expr()).prop_map(|(a, e)| format!("{} = {e};", a.replace(|c: char| c.is_ascii_digit(), "v"))),
        cond_expr().prop_map(|e| format!("use_value({e});")),
        cond_expr().prop_map(|e| format!("return {e};")),
        Just("count++;".to_string()),
        Just("free(buf);".to_string()),
    ]
}

#[derive(Debug, Clone)]
enum Block {
    Stmt(String),
    If(String, Vec<Block>),
    For(Vec<Block>),
}

fn block() -> impl Strategy<Value = Block> {
    statement().prop_map(Block::Stmt).prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            (cond_expr(), prop::collection::vec(inner.clone(), 1..4)).prop_map(|(c, b)| Block::If(c, b)),
            prop::collection::vec(inner, 1..4).prop_map(Block::For),
        ]
    })
}

fn render_blocks(blocks: &[Block], depth: usize, out: &mut Vec<String>) {
    let pad = "    ".repeat(depth);
    for b in blocks {
        match b {
            Block::Stmt(s) => out.push(format!("{pad}{s}")),
            Block::If(c, body) => {
                out.push(format!("{pad}if ({c}) {{"));
                render_blocks(body, depth + 1, out);
                out.push(format!("{pad}}}"));
            }
            Block::For(body) => {
                out.push(format!("{pad}for (i = 0; i < n; i++) {{"));
                render_blocks(body, depth + 1, out);
                out.push(format!("{pad}}}"));
            }
        }
    }
}

fn function_text() -> impl Strategy<Value = String> {
    prop::collection::vec(block(), 1..8).prop_map(|blocks| {
        let mut lines = vec!["int target(int a, int b, int n)".to_string(), "{".to_string(), "    int i;".to_string()];
        render_blocks(&blocks, 1, &mut lines);
        lines.push("}".to_string());
        lines.join("\n")
    })
}

fn node_tokens(n: &Node, counts: &[usize]) -> usize {
    n.span.lines().map(|l| counts[l - 1]).sum()
}

fn all_nodes(n: &Node) -> Vec<&Node> {
    let mut out = vec![n];
    for c in &n.children {
        out.extend(all_nodes(c));
    }
    out
}

fn equiv(a: &str, b: &str, width: u32, backend: Backend) -> EquivVerdict {
    let (mut lc, mut rc) = (VarContext::canonical(), VarContext::canonical());
    let le = parse_strict(a, &mut lc).unwrap();
    let re = parse_strict(b, &mut rc).unwrap();
    let cfg = EquivConfig { width, timeout: Duration::from_secs(30), backend };
    check_expressions(&le, &lc.origin, &re, &rc.origin, &cfg).verdict
}

fn cond_equation(text: &str) -> Option<patchprobe_core::NormalizedEquation> {
    parse_canonical(StatementKind::Conditional, text).ok()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn lexer_round_trip_on_arbitrary_lines(line in "[ -~]{0,60}") {
        let first = lex_line(&line);
        let again = lex_line(&render_tokens(&first));
        prop_assert_eq!(first.len(), again.len(), "`{}`", line);
        for (a, b) in first.iter().zip(&again) {
            prop_assert!(a.same_token(b), "`{}`: {:?} vs {:?}", line, a, b);
        }
    }

    #[test]
    fn hex_and_decimal_constants_normalize_alike(n in 0u64..0xFFFF_FFFF, var in "[a-z]{1,6}") {
        prop_assume!(!patchprobe_core::verify::lexer::is_keyword(&var));
        let hex = cond_equation(&format!("{var} == {n:#x}")).unwrap();
        let dec = cond_equation(&format!("{var} == {n}")).unwrap();
        prop_assert_eq!(hex.canonical, dec.canonical);
    }

    #[test]
    fn renormalizing_canonical_text_is_identity(e in cond_expr()) {
        if let Some(eq) = cond_equation(&e) {
            let again = cond_equation(&eq.canonical).unwrap();
            prop_assert_eq!(&again.canonical, &eq.canonical);
            if !eq.var_origin.is_empty() {
                prop_assert!(eq.canonical.contains("x1"));
            }
        }
    }

    #[test]
    fn equivalence_is_reflexive_and_symmetric(a in cond_expr(), b in cond_expr()) {
        let (Some(ea), Some(eb)) = (cond_equation(&a), cond_equation(&b)) else { return Ok(()) };
        let cfg = EquivConfig::with_width(8);
        prop_assert_eq!(check_equivalence(&ea, &ea, &cfg).verdict, EquivVerdict::Equal);
        let ab = check_equivalence(&ea, &eb, &cfg).verdict;
        let ba = check_equivalence(&eb, &ea, &cfg).verdict;
        prop_assert_eq!(ab, ba, "`{}` vs `{}`", a, b);
    }

    #[test]
    fn solver_agrees_with_exhaustive(a in small_expr(), b in small_expr(), width in 4u32..=8) {
        let s = equiv(&a, &b, width, Backend::Builtin);
        let x = equiv(&a, &b, width, Backend::Exhaustive { max_bits: 24 });
        prop_assert_eq!(s, x, "`{}` vs `{}` at width {}", a, b, width);
    }

    #[test]
    fn mapping_serialization_round_trips(
        raw in prop::collection::btree_map(1usize..60, prop::collection::btree_set(1usize..80, 0..4), 1..12)
    ) {
        let mut m = LineMapping::default();
        for (q, lines) in &raw {
            if lines.is_empty() {
                m.unmatched_source_lines.push(*q);
            } else {
                m.pairs.push(MappingPair { source_line: *q, pseudo_lines: lines.iter().copied().collect() });
            }
        }
        let query: Vec<usize> = raw.keys().copied().collect();
        let parsed = parse_localization_response(&serialize_mapping(&m), &query, LineSpan::new(1, 80)).unwrap();
        prop_assert_eq!(parsed, m);
    }

    #[test]
    fn metrics_partition_and_range(pairs in prop::collection::vec((any::<bool>(), 0u8..3), 1..40)) {
        let pairs: Vec<(GroundTruth, VerdictValue)> = pairs
            .into_iter()
            .map(|(t, v)| {
                let t = if t { GroundTruth::Patched } else { GroundTruth::Vulnerable };
                let v = [VerdictValue::Patched, VerdictValue::Vulnerable, VerdictValue::Unknown][v as usize];
                (t, v)
            })
            .collect();
        let m = compute_metrics(&pairs);
        prop_assert_eq!(m.tp + m.fp + m.fn_ + m.tn, pairs.len());
        for v in [m.precision, m.recall, m.f1].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(m.precision.is_some(), m.tp + m.fp > 0);
        prop_assert_eq!(m.recall.is_some(), m.tp + m.fn_ > 0);
    }

    #[test]
    fn segments_partition_the_function(text in function_text(), limit in 5usize..120) {
        let pseudo = parse_pseudocode(&text).unwrap();
        let segs = segment_pseudocode(&pseudo, limit);
        let mut covered = Vec::new();
        for s in &segs {
            covered.extend(s.span.lines());
            prop_assert!(s.token_count <= limit || s.over_limit);
        }
        let expected: Vec<usize> = (1..=pseudo.len()).collect();
        prop_assert_eq!(covered, expected);
        // a node that fits the limit is never split
        let counts = line_token_counts(&pseudo.lines);
        for n in all_nodes(&pseudo.syntax) {
            if node_tokens(n, &counts) <= limit {
                prop_assert!(segs.iter().any(|s| s.span.contains_span(&n.span)), "{:?} split", n.span);
            }
        }
    }

    #[test]
    fn truncation_keeps_anchor_and_loops(text in function_text(), pick in any::<prop::sample::Index>(), limit in 5usize..200) {
        let mut func = AnnotatedFunction::from_lines("target", VersionTag::Patched, &text);
        let body: Vec<usize> = (3..func.lines.len()).collect();
        let anchor = body[pick.index(body.len())];
        func.lines[anchor - 1].is_patch_line = true;
        let t = truncate_source(&func, limit).unwrap();
        prop_assert!(t.span.contains(anchor));
        prop_assert!(t.has_marker());
        prop_assert!(t.token_count <= limit || t.over_limit);
        for n in func.syntax.path_to_line(anchor) {
            if n.kind == NodeKind::Loop {
                prop_assert!(t.span.contains_span(&n.span));
            }
        }
    }

    #[test]
    fn enhanced_slice_is_monotone_and_local(text in function_text(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..4)) {
        let mut func = AnnotatedFunction::from_lines("target", VersionTag::Patched, &text);
        let body: Vec<usize> = (3..func.lines.len()).collect();
        let marked: BTreeSet<usize> = picks.iter().map(|p| body[p.index(body.len())]).collect();
        for &l in &marked {
            func.lines[l - 1].is_patch_line = true;
        }
        let index = MacroIndex::default();
        let a = enhance(&func, &index).unwrap();
        let b = enhance(&func, &index).unwrap();
        prop_assert_eq!(&a, &b);
        let lines = a.line_numbers();
        prop_assert!(marked.is_subset(&lines));
        prop_assert!(lines.iter().all(|l| func.span().contains(*l)));
    }

    #[test]
    fn classification_follows_line_counts(added in 0usize..4, deleted in 0usize..4, blank_added in 0usize..2) {
        prop_assume!(added + deleted + blank_added > 0);
        let mut body = vec![" ctx();".to_string()];
        body.extend((0..deleted).map(|i| format!("-old_{i}();")));
        body.extend((0..added).map(|i| format!("+new_{i}();")));
        body.extend((0..blank_added).map(|_| "+".to_string()));
        body.push(" done();".to_string());
        let old_n = 2 + deleted;
        let new_n = 2 + added + blank_added;
        let text = format!("--- a/f.c\n+++ b/f.c\n@@ -1,{old_n} +1,{new_n} @@\n{}\n", body.join("\n"));
        let kind = parse_unified_diff(&text).and_then(|d| classify_patch(&d));
        match (added, deleted) {
            (0, 0) => prop_assert!(kind.is_err()),
            (_, 0) => prop_assert_eq!(kind.unwrap(), PatchKind::AddOnly),
            (0, _) => prop_assert_eq!(kind.unwrap(), PatchKind::DeleteOnly),
            _ => prop_assert_eq!(kind.unwrap(), PatchKind::Edit),
        }
        let diff = parse_unified_diff(&text).unwrap();
        prop_assert_eq!(parse_unified_diff(&diff.to_unified()).unwrap(), diff);
    }

    #[test]
    fn unique_equations_skip_denylist_and_self(a in prop::collection::vec(statement(), 1..8), b in prop::collection::vec(statement(), 1..8)) {
        let eqs = |v: &Vec<String>| EquationSet::new(equations_from_lines(v.iter().enumerate().map(|(i, s)| (i + 1, s.as_str()))));
        let (ea, eb) = (eqs(&a), eqs(&b));
        prop_assert!(patchprobe_core::unique_equations(&ea, &ea).is_empty());
        let keys: BTreeMap<_, _> = eb.iter().map(|e| ((e.kind, e.canonical.clone()), ())).collect();
        for u in patchprobe_core::unique_equations(&ea, &eb) {
            prop_assert!(!is_trivial(&u));
            prop_assert!(!keys.contains_key(&(u.kind, u.canonical.clone())));
        }
    }
}
