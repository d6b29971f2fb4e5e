//! Final verdict: unique-equation matching with a provider fallback.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::equations::{unique_equations, EquationSet};
use super::equiv::{check_equivalence, EquivConfig, EquivResult};
use super::statement::{equations_from_lines, NormalizedEquation, StatementKind};
use super::VerifyError;
use crate::localize::mapping::json_objects;
use crate::localize::prompt::{self, Prompt, TemplateId};
use crate::localize::{LocalizationResult, Provider, ProviderConfig};
use crate::source::{AnnotatedFunction, VersionTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictValue {
    Patched,
    Vulnerable,
    Unknown,
}

impl fmt::Display for VerdictValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictValue::Patched => "patched",
            VerdictValue::Vulnerable => "vulnerable",
            VerdictValue::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Solver,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evidence {
    /// A unique equation of one version matched a target equation.
    Equivalence {
        side: VersionTag,
        kind: StatementKind,
        unique: String,
        unique_line: usize,
        unique_origin: BTreeMap<u32, String>,
        target: String,
        target_line: usize,
        target_origin: BTreeMap<u32, String>,
        result: EquivResult,
    },
    Reasoning {
        provider: String,
        answer: String,
        text: String,
    },
}

impl Evidence {
    pub fn equivalence(&self) -> Option<&EquivResult> {
        match self {
            Evidence::Equivalence { result, .. } => Some(result),
            Evidence::Reasoning { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: VerdictValue,
    pub basis: Basis,
    pub evidence: Vec<Evidence>,
    /// Unique equation counts (patched, pre-patch).
    pub unique_counts: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Equations of a whole function body.
pub fn function_equations(func: &AnnotatedFunction) -> EquationSet {
    EquationSet::new(equations_from_lines(
        func.lines.iter().map(|l| (l.index, l.text.as_str())),
    ))
}

/// Equations read from the pseudocode slices of both results.
pub fn target_equations(results: &[&LocalizationResult]) -> Vec<NormalizedEquation> {
    let mut lines: BTreeMap<usize, &str> = BTreeMap::new();
    for r in results {
        for l in &r.pseudo_slice {
            lines.insert(l.line, l.text.as_str());
        }
    }
    let mut seen = BTreeSet::new();
    equations_from_lines(lines.into_iter())
        .into_iter()
        .filter(|e| seen.insert((e.kind, e.canonical.clone(), e.source_line)))
        .collect()
}

fn matches(side: VersionTag, unique: &[NormalizedEquation], target: &[NormalizedEquation], cfg: &EquivConfig) -> Vec<Evidence> {
    let mut out = Vec::new();
    for u in unique {
        for t in target {
            if u.kind != t.kind {
                continue;
            }
            let r = check_equivalence(u, t, cfg);
            if r.verdict.is_match() {
                out.push(Evidence::Equivalence {
                    side,
                    kind: u.kind,
                    unique: u.canonical.clone(),
                    unique_line: u.source_line,
                    unique_origin: u.var_origin.clone(),
                    target: t.canonical.clone(),
                    target_line: t.source_line,
                    target_origin: t.var_origin.clone(),
                    result: r,
                });
            }
        }
    }
    out
}

pub fn build_verification_prompt(
    diff_label: &str,
    patch_match: &LocalizationResult,
    vul_match: &LocalizationResult,
) -> Prompt {
    let values: BTreeMap<String, String> = [
        ("patch_diff_label", diff_label.to_string()),
        ("patch_result_json", patch_match.prompt_json()),
        ("vul_result_json", vul_match.prompt_json()),
        ("json_format_sample", prompt::VERIFICATION_SAMPLE.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    prompt::render(TemplateId::Verification, &values).expect("all placeholders supplied")
}

/// Reads `{"version": "patched" | "pre-patch"}` from a response.
pub fn parse_version_answer(raw: &str) -> Option<VersionTag> {
    json_objects(raw).find_map(|v| {
        let s = v.get("version").and_then(Value::as_str)?.trim().to_ascii_lowercase();
        match s.as_str() {
            "patched" => Some(VersionTag::Patched),
            "pre-patch" => Some(VersionTag::PrePatch),
            _ => None,
        }
    })
}

fn reasoning(
    diff_label: &str,
    patch_match: &LocalizationResult,
    vul_match: &LocalizationResult,
    provider: &dyn Provider,
    cfg: &ProviderConfig,
) -> Result<(VersionTag, String), VerifyError> {
    let base = build_verification_prompt(diff_label, patch_match, vul_match);
    let mut last = String::from("no response");
    for attempt in 0..=cfg.max_retries {
        let mut p = base.clone();
        if attempt > 0 {
            p.rendered_text.push_str(prompt::VERIFICATION_RETRY_REMINDER);
        }
        match provider.complete(&p) {
            Ok(raw) => match parse_version_answer(&raw) {
                Some(v) => return Ok((v, raw)),
                None => last = format!("unusable answer: {}", raw.chars().take(120).collect::<String>()),
            },
            Err(e) => return Err(VerifyError::ProviderExhausted(e.to_string())),
        }
    }
    Err(VerifyError::ProviderExhausted(last))
}

/// Decides which version the target pseudocode embodies.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    vul_func: &AnnotatedFunction,
    patch_func: &AnnotatedFunction,
    vul_match: &LocalizationResult,
    patch_match: &LocalizationResult,
    diff_label: &str,
    provider: &dyn Provider,
    provider_cfg: &ProviderConfig,
    equiv_cfg: &EquivConfig,
) -> Verdict {
    if vul_match.version != VersionTag::PrePatch || patch_match.version != VersionTag::Patched {
        return Verdict {
            value: VerdictValue::Unknown,
            basis: Basis::Reasoning,
            evidence: Vec::new(),
            unique_counts: (0, 0),
            diagnostic: Some("localization results carry the wrong version tags".into()),
        };
    }
    let pre = function_equations(vul_func);
    let post = function_equations(patch_func);
    let u_patch = unique_equations(&post, &pre);
    let u_vul = unique_equations(&pre, &post);
    let target = target_equations(&[patch_match, vul_match]);
    let hits_patch = matches(VersionTag::Patched, &u_patch, &target, equiv_cfg);
    let hits_vul = matches(VersionTag::PrePatch, &u_vul, &target, equiv_cfg);
    let counts = (u_patch.len(), u_vul.len());
    match (hits_patch.is_empty(), hits_vul.is_empty()) {
        (false, true) => {
            return Verdict { value: VerdictValue::Patched, basis: Basis::Solver, evidence: hits_patch, unique_counts: counts, diagnostic: None }
        }
        (true, false) => {
            return Verdict { value: VerdictValue::Vulnerable, basis: Basis::Solver, evidence: hits_vul, unique_counts: counts, diagnostic: None }
        }
        _ => {}
    }
    let why = if hits_patch.is_empty() { "no unique equation matched" } else { "unique equations of both versions matched" };
    let mut evidence: Vec<Evidence> = hits_patch.into_iter().chain(hits_vul).collect();
    match reasoning(diff_label, patch_match, vul_match, provider, provider_cfg) {
        Ok((version, raw)) => {
            evidence.push(Evidence::Reasoning {
                provider: provider.name().to_string(),
                answer: version.label().to_string(),
                text: raw,
            });
            Verdict {
                value: match version {
                    VersionTag::Patched => VerdictValue::Patched,
                    VersionTag::PrePatch => VerdictValue::Vulnerable,
                },
                basis: Basis::Reasoning,
                evidence,
                unique_counts: counts,
                diagnostic: Some(why.to_string()),
            }
        }
        Err(e) => Verdict {
            value: VerdictValue::Unknown,
            basis: Basis::Reasoning,
            evidence,
            unique_counts: counts,
            diagnostic: Some(format!("{why}; {e}")),
        },
    }
}
