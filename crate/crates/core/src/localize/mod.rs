//! Mapping enhanced source slices onto pseudocode through a provider.

pub mod mapping;
pub mod prompt;
pub mod provider;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::enhance::EnhancedSlice;
use crate::ingest::{line_token_counts, segment_pseudocode, truncate_marked, IngestError, PseudoFunction, PseudoSegment, TruncatedSource};
use crate::source::{AnnotatedFunction, LineSpan, PatchKind, VersionTag, PATCH_MARKER};
pub use mapping::{heuristic_localize, parse_localization_response, serialize_mapping, LineMapping, MappingPair};
pub use prompt::{Prompt, TemplateId, MAPPING_SCHEMA};
pub use provider::{
    make_provider, prompt_hash, AuditEntry, AuditProvider, HeuristicProvider, Provider, ProviderConfig,
    ProviderMode, RecordingProvider, RemoteProvider, ReplayProvider,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LocalizeError {
    #[error("prompt needs about {tokens} tokens, budget is {budget}")]
    OversizePrompt { tokens: usize, budget: usize },
    #[error("source block carries no patch marker")]
    MissingMarker,
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("no replay response for prompt {0}")]
    ReplayMiss(String),
    #[error("response has no mapping object: {0}")]
    UnparseableResponse(String),
    #[error("line {line} outside {start}..={end}")]
    OutOfRangeLines { line: usize, start: usize, end: usize },
    #[error("every segment failed: {0}")]
    AllSegmentsFailed(String),
    #[error("reverse matching needs an add-only or delete-only patch, got {0:?} for {1:?}")]
    NotReversible(PatchKind, VersionTag),
    #[error("enhanced slice is empty")]
    EmptySlice,
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedLine {
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub version: VersionTag,
    pub mapping: LineMapping,
    /// Mapped pseudocode lines, ascending.
    pub pseudo_slice: Vec<NumberedLine>,
    pub provenance: Provenance,
    /// Source lines the mapping refers to.
    pub source_lines: Vec<NumberedLine>,
    /// Pseudocode segment the mapping was taken from.
    pub segment: Option<LineSpan>,
    pub provider: String,
    pub schema: String,
}

impl LocalizationResult {
    pub fn pseudo_line_numbers(&self) -> BTreeSet<usize> {
        self.pseudo_slice.iter().map(|l| l.line).collect()
    }

    /// Compact JSON used inside the verification prompt.
    pub fn prompt_json(&self) -> String {
        let src: BTreeMap<usize, &str> = self.source_lines.iter().map(|l| (l.line, l.text.as_str())).collect();
        let pseudo: BTreeMap<usize, &str> = self.pseudo_slice.iter().map(|l| (l.line, l.text.as_str())).collect();
        let matches: Vec<_> = self
            .mapping
            .pairs
            .iter()
            .map(|p| {
                json!({
                    "source_line": p.source_line,
                    "source": src.get(&p.source_line).map(|s| s.trim()).unwrap_or(""),
                    "pseudo_lines": p.pseudo_lines,
                    "pseudo": p.pseudo_lines.iter().map(|l| pseudo.get(l).map(|s| s.trim()).unwrap_or("")).collect::<Vec<_>>(),
                })
            })
            .collect();
        let unmatched: Vec<_> = self
            .mapping
            .unmatched_source_lines
            .iter()
            .map(|l| json!({"source_line": l, "source": src.get(l).map(|s| s.trim()).unwrap_or("")}))
            .collect();
        json!({
            "version": self.version.label(),
            "provenance": self.provenance,
            "matches": matches,
            "unmatched": unmatched,
        })
        .to_string()
    }
}

fn prompt_tokens(text: &str, cfg: &ProviderConfig) -> usize {
    let lines: Vec<&str> = text.lines().collect();
    let n: usize = line_token_counts(&lines).iter().sum();
    (n as f64 * cfg.token_safety_factor).ceil() as usize
}

fn check_budget(p: Prompt, cfg: &ProviderConfig) -> Result<Prompt, LocalizeError> {
    let tokens = prompt_tokens(&p.rendered_text, cfg);
    if tokens > cfg.context_tokens {
        return Err(LocalizeError::OversizePrompt { tokens, budget: cfg.context_tokens });
    }
    Ok(p)
}

fn fill(id: TemplateId, pairs: [(&str, String); 3]) -> Prompt {
    let values: BTreeMap<String, String> = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    prompt::render(id, &values).expect("all placeholders supplied")
}

pub fn build_localization_prompt(
    src: &TruncatedSource,
    func: &PseudoFunction,
    seg: &PseudoSegment,
    cfg: &ProviderConfig,
) -> Result<Prompt, LocalizeError> {
    if !src.has_marker() {
        return Err(LocalizeError::MissingMarker);
    }
    let p = fill(
        TemplateId::Localization,
        [
            ("json_format_sample", prompt::MAPPING_SAMPLE.to_string()),
            ("source_code", src.rendered_text.clone()),
            ("pseudo_code", func.render_span(seg.span)),
        ],
    );
    check_budget(p, cfg)
}

fn render_marked(lines: &[String], span: LineSpan, marked: &BTreeSet<usize>) -> String {
    let mut out = String::new();
    for l in span.lines() {
        let Some(t) = lines.get(l - 1) else { break };
        out.push_str(&format!("{l}: {t}"));
        if marked.contains(&l) {
            out.push(' ');
            out.push_str(PATCH_MARKER);
        }
        out.push('\n');
    }
    out
}

fn with_reminder(p: &Prompt, reminder: &str) -> Prompt {
    let mut q = p.clone();
    q.rendered_text.push_str(reminder);
    q
}

/// Asks until the response parses or retries run out. Transport-level
/// failures end the loop at once.
fn ask_mapping(
    prompt: &Prompt,
    provider: &dyn Provider,
    cfg: &ProviderConfig,
    query: &[usize],
    span: LineSpan,
) -> Result<LineMapping, LocalizeError> {
    let mut last = LocalizeError::UnparseableResponse(String::new());
    for attempt in 0..=cfg.max_retries {
        let p = if attempt == 0 { prompt.clone() } else { with_reminder(prompt, prompt::RETRY_REMINDER) };
        let raw = provider.complete(&p)?;
        match parse_localization_response(&raw, query, span) {
            Ok(m) => return Ok(m),
            Err(e @ (LocalizeError::UnparseableResponse(_) | LocalizeError::OutOfRangeLines { .. })) => {
                log::debug!("re-asking after bad response: {e}");
                last = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

fn pick_best(cands: Vec<(LineSpan, LineMapping)>) -> Option<(LineSpan, LineMapping)> {
    cands
        .into_iter()
        .min_by_key(|(span, m)| (std::cmp::Reverse(m.coverage()), span.start))
}

/// Treats a source function as a searchable listing.
fn as_listing(func: &AnnotatedFunction) -> PseudoFunction {
    PseudoFunction {
        name: func.name.clone(),
        lines: func.lines.iter().map(|l| l.text.clone()).collect(),
        syntax: func.syntax.clone(),
        fallback: false,
    }
}

/// Finds the pseudocode counterpart of `slice` (drawn from `source`).
pub fn localize(
    slice: &EnhancedSlice,
    source: &AnnotatedFunction,
    func: &PseudoFunction,
    provider: &dyn Provider,
    cfg: &ProviderConfig,
    token_limit: usize,
) -> Result<LocalizationResult, LocalizeError> {
    if slice.is_empty() {
        return Err(LocalizeError::EmptySlice);
    }
    let marked = slice.line_numbers();
    let texts: BTreeMap<usize, String> = slice.lines.iter().map(|l| (l.line, l.text.clone())).collect();
    let src = truncate_marked(source, &marked, &texts, token_limit)?;
    let query: Vec<usize> = src.marked.iter().copied().collect();
    let mut cands = Vec::new();
    let mut failures = Vec::new();
    for seg in segment_pseudocode(func, token_limit) {
        let outcome = build_localization_prompt(&src, func, &seg, cfg)
            .and_then(|p| ask_mapping(&p, provider, cfg, &query, seg.span));
        match outcome {
            Ok(m) => cands.push((seg.span, m)),
            Err(e @ (LocalizeError::TransportError(_) | LocalizeError::RateLimited(_) | LocalizeError::ReplayMiss(_))) => {
                return Err(e)
            }
            Err(e) => failures.push(format!("{}..={}: {e}", seg.span.start, seg.span.end)),
        }
    }
    let (span, mapping) = pick_best(cands).ok_or_else(|| LocalizeError::AllSegmentsFailed(failures.join("; ")))?;
    let source_lines = query
        .iter()
        .map(|&l| NumberedLine { line: l, text: texts.get(&l).cloned().unwrap_or_else(|| source.text(l).to_string()) })
        .collect();
    Ok(assemble(slice.version, mapping, func, Provenance::Forward, source_lines, span, provider))
}

fn assemble(
    version: VersionTag,
    mapping: LineMapping,
    func: &PseudoFunction,
    provenance: Provenance,
    source_lines: Vec<NumberedLine>,
    span: LineSpan,
    provider: &dyn Provider,
) -> LocalizationResult {
    let pseudo_slice = mapping
        .pseudo_lines()
        .into_iter()
        .filter(|l| *l >= 1 && *l <= func.len())
        .map(|l| NumberedLine { line: l, text: func.text(l).to_string() })
        .collect();
    LocalizationResult {
        version,
        mapping,
        pseudo_slice,
        provenance,
        source_lines,
        segment: Some(span),
        provider: provider.name().to_string(),
        schema: MAPPING_SCHEMA.to_string(),
    }
}

pub fn build_reverse_prompt(
    pseudo_block: String,
    source: &PseudoFunction,
    seg: &PseudoSegment,
    cfg: &ProviderConfig,
) -> Result<Prompt, LocalizeError> {
    let p = fill(
        TemplateId::ReverseLocalization,
        [
            ("json_format_sample", prompt::MAPPING_SAMPLE.to_string()),
            ("source_code", source.render_span(seg.span)),
            ("pseudo_code", pseudo_block),
        ],
    );
    check_budget(p, cfg)
}

/// Matches the pseudocode slice of `found` back against the other version's
/// source, giving the complementary result.
pub fn reverse_match(
    found: &LocalizationResult,
    kind: PatchKind,
    pseudo: &PseudoFunction,
    other: &AnnotatedFunction,
    provider: &dyn Provider,
    cfg: &ProviderConfig,
    token_limit: usize,
) -> Result<LocalizationResult, LocalizeError> {
    let ok = matches!(
        (kind, found.version),
        (PatchKind::AddOnly, VersionTag::Patched) | (PatchKind::DeleteOnly, VersionTag::PrePatch)
    );
    if !ok {
        return Err(LocalizeError::NotReversible(kind, found.version));
    }
    let query: Vec<usize> = found.pseudo_slice.iter().map(|l| l.line).collect();
    let empty = |span| LocalizationResult {
        version: other.version,
        mapping: LineMapping::default(),
        pseudo_slice: Vec::new(),
        provenance: Provenance::Reverse,
        source_lines: Vec::new(),
        segment: span,
        provider: provider.name().to_string(),
        schema: MAPPING_SCHEMA.to_string(),
    };
    if query.is_empty() {
        return Ok(empty(None));
    }
    let marked: BTreeSet<usize> = query.iter().copied().collect();
    let window = found.segment.unwrap_or_else(|| pseudo.span());
    let pseudo_block = render_marked(&pseudo.lines, window, &marked);
    let listing = as_listing(other);
    let mut cands = Vec::new();
    let mut failures = Vec::new();
    for seg in segment_pseudocode(&listing, token_limit) {
        let outcome = build_reverse_prompt(pseudo_block.clone(), &listing, &seg, cfg)
            .and_then(|p| ask_mapping(&p, provider, cfg, &query, seg.span));
        match outcome {
            Ok(m) => cands.push((seg.span, m)),
            Err(e @ (LocalizeError::TransportError(_) | LocalizeError::RateLimited(_) | LocalizeError::ReplayMiss(_))) => {
                return Err(e)
            }
            Err(e) => failures.push(format!("{}..={}: {e}", seg.span.start, seg.span.end)),
        }
    }
    let (_, back) = pick_best(cands).ok_or_else(|| LocalizeError::AllSegmentsFailed(failures.join("; ")))?;
    // invert pseudo -> source into source -> pseudo
    let mut inv: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for p in &back.pairs {
        for &s in &p.pseudo_lines {
            inv.entry(s).or_default().insert(p.source_line);
        }
    }
    let mapping = LineMapping {
        pairs: inv
            .iter()
            .map(|(s, ps)| MappingPair { source_line: *s, pseudo_lines: ps.iter().copied().collect() })
            .collect(),
        unmatched_source_lines: Vec::new(),
    };
    let source_lines = inv
        .keys()
        .map(|&l| NumberedLine { line: l, text: other.text(l).to_string() })
        .collect();
    let mut r = assemble(other.version, mapping, pseudo, Provenance::Reverse, source_lines, window, provider);
    r.segment = Some(window);
    Ok(r)
}
