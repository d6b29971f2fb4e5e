//! Prompt templates and placeholder filling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Localization,
    /// Pseudocode lines are the query, source is searched.
    ReverseLocalization,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_id: TemplateId,
    pub rendered_text: String,
    pub placeholders_filled: BTreeMap<String, String>,
}

impl Prompt {
    pub fn placeholder(&self, name: &str) -> Option<&str> {
        self.placeholders_filled.get(name).map(String::as_str)
    }
}

pub const LOCALIZATION_TEMPLATE: &str = "\
Suppose you are a software reverse engineer with strong code analysis skills. \
You have the source code of a function and the pseudo code obtained through binary decompilation. \
Lines in the source code that end with \"//patch_code\" are patch codes. \
Can you identify the patch codes in the pseudo code that corresponds to the patch code? \
Must only output your findings as a JSON dictionary.

- Output format: <json_format_sample>

- Source code: <source_code>

- Pseudocode: <pseudo_code>
";

pub const REVERSE_LOCALIZATION_TEMPLATE: &str = "\
Suppose you are a software reverse engineer with strong code analysis skills. \
You have the pseudo code of a function obtained through binary decompilation and the source code of a function. \
Lines in the pseudo code that end with \"//patch_code\" were matched to a patch. \
Can you identify the lines in the source code that correspond to those pseudo code lines? \
Must only output your findings as a JSON dictionary.

- Output format: <json_format_sample>

- Pseudocode: <pseudo_code>

- Source code: <source_code>
";

pub const VERIFICATION_TEMPLATE: &str = "\
You are a software reverse engineer analyzing decompiled pseudo code. \
Your task is to determine whether the code is patched or pre-patch version by analyzing the reliability of matching results. \
Must only output your findings as a JSON dictionary.

- INPUT:
1. Diff File: <patch_diff_label>
2. patched version matches: <patch_result_json>
3. pre-patch version matches: <vul_result_json>

- ANALYSIS REQUIREMENTS: Evaluate each match in patched and pre-patch: Semantic correctness, Logic consistency, Context compatibility, Potential false matches. \
Compare quality of matches: Which version has more reliable matches, Which matches might be incorrect, Overall semantic alignment

- RULES: Only one result (patched version or pre-patch version) corresponds to the correct version. \
Better semantic match determines the version

- Output format: <json_format_sample>
";

/// Schema tag for the line mapping object; recorded in reports.
pub const MAPPING_SCHEMA: &str = "line-map/1";

pub const MAPPING_SAMPLE: &str =
    "{\"<query line number>\": [<matching line numbers>], \"<query line number>\": []}";

pub const VERIFICATION_SAMPLE: &str =
    "{\"version\": \"patched\" | \"pre-patch\", \"reason\": \"<short justification>\"}";

pub const RETRY_REMINDER: &str = "\n\nOutput only the mapping object.";

pub const VERIFICATION_RETRY_REMINDER: &str =
    "\n\nOutput only the JSON object with a \"version\" field set to \"patched\" or \"pre-patch\".";

impl TemplateId {
    pub fn template(self) -> &'static str {
        match self {
            TemplateId::Localization => LOCALIZATION_TEMPLATE,
            TemplateId::ReverseLocalization => REVERSE_LOCALIZATION_TEMPLATE,
            TemplateId::Verification => VERIFICATION_TEMPLATE,
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::Localization | TemplateId::ReverseLocalization => {
                &["json_format_sample", "source_code", "pseudo_code"]
            }
            TemplateId::Verification => &[
                "patch_diff_label",
                "patch_result_json",
                "vul_result_json",
                "json_format_sample",
            ],
        }
    }
}

/// Fills every placeholder of `id` in one pass, so filled content that
/// itself looks like a placeholder is never re-expanded.
pub fn render(id: TemplateId, values: &BTreeMap<String, String>) -> Result<Prompt, String> {
    let names = id.placeholders();
    for n in names {
        if !values.contains_key(*n) {
            return Err(format!("missing value for <{n}>"));
        }
    }
    let tpl = id.template();
    let mut out = String::with_capacity(tpl.len() + values.values().map(String::len).sum::<usize>());
    let mut rest = tpl;
    'scan: while let Some(at) = rest.find('<') {
        for n in names {
            let marker = format!("<{n}>");
            if rest[at..].starts_with(&marker) {
                out.push_str(&rest[..at]);
                let v = &values[*n];
                if v.contains('\n') {
                    out.push('\n');
                }
                out.push_str(v);
                rest = &rest[at + marker.len()..];
                continue 'scan;
            }
        }
        out.push_str(&rest[..=at]);
        rest = &rest[at + 1..];
    }
    out.push_str(rest);
    Ok(Prompt {
        template_id: id,
        rendered_text: out,
        placeholders_filled: names
            .iter()
            .map(|n| (n.to_string(), values[*n].clone()))
            .collect(),
    })
}
