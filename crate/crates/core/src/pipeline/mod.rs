//! Case and corpus orchestration, reports and metrics.

pub mod config;
pub mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhance::{enhance, resolve_macros, substitute, EnhanceError, EnhancedSlice, MacroIndex};
use crate::ingest::{parse_pseudocode, IngestError};
use crate::localize::{
    localize, make_provider, reverse_match, AuditProvider, LocalizationResult, LocalizeError, Provider,
    MAPPING_SCHEMA,
};
use crate::source::{
    annotate_patch_lines, classify_patch, extract_function, parse_unified_diff, AnnotatedFunction, PatchKind,
    SourceError, VersionTag,
};
use crate::verify::{decide, Verdict, VerdictValue};
pub use config::{Config, SolverSettings};
pub use metrics::{compute_metrics, GroundTruth, Metrics};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed manifest: {0}")]
    ManifestMalformed(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

pub const DIFF_FILE: &str = "patch.diff";
pub const VUL_FILE: &str = "func_vul.c";
pub const PATCH_FILE: &str = "func_patch.c";
pub const PSEUDO_FILE: &str = "target_pseudo.c";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInput {
    pub case_id: String,
    pub diff_path: PathBuf,
    pub vul_source_path: PathBuf,
    pub patch_source_path: PathBuf,
    pub pseudo_path: PathBuf,
    pub function_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    /// Tree searched for macro definitions; the case directory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
struct Meta {
    case_id: Option<String>,
    function_name: String,
    #[serde(default)]
    ground_truth: Option<GroundTruth>,
    #[serde(default)]
    project_root: Option<PathBuf>,
}

impl CaseInput {
    /// Loads `meta.json` from a case directory laid out with the standard
    /// file names.
    pub fn from_dir(dir: &Path) -> Result<CaseInput, PipelineError> {
        let meta_path = dir.join(META_FILE);
        let meta: Meta = serde_json::from_str(&read(&meta_path)?)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", meta_path.display())))?;
        let case_id = meta.case_id.unwrap_or_else(|| {
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "case".into())
        });
        Ok(CaseInput {
            case_id,
            diff_path: dir.join(DIFF_FILE),
            vul_source_path: dir.join(VUL_FILE),
            patch_source_path: dir.join(PATCH_FILE),
            pseudo_path: dir.join(PSEUDO_FILE),
            function_name: meta.function_name,
            ground_truth: meta.ground_truth,
            project_root: meta.project_root.map(|p| if p.is_relative() { dir.join(p) } else { p }),
        })
    }

    fn case_dir(&self) -> PathBuf {
        self.diff_path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ManifestEntry {
    Dir(PathBuf),
    DirWithTruth {
        case_dir: PathBuf,
        #[serde(default)]
        ground_truth: Option<GroundTruth>,
    },
    Full(CaseInput),
}

/// Reads a manifest: a JSON array whose entries are case directory paths,
/// `{"case_dir", "ground_truth"}` objects, or full case descriptors. Paths
/// are relative to the manifest. Entries whose directory cannot be loaded
/// are returned as errors so the run can report them.
pub fn load_manifest(path: &Path) -> Result<Vec<Result<CaseInput, (String, PipelineError)>>, PipelineError> {
    let text = read(path).map_err(|e| PipelineError::ManifestMalformed(e.to_string()))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| PipelineError::ManifestMalformed(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(PipelineError::ManifestMalformed(format!("{}: no cases", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let abs = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for e in entries {
        let loaded = match e {
            ManifestEntry::Dir(d) => {
                let d = abs(&d);
                CaseInput::from_dir(&d).map_err(|err| (dir_id(&d), err))
            }
            ManifestEntry::DirWithTruth { case_dir, ground_truth } => {
                let d = abs(&case_dir);
                CaseInput::from_dir(&d)
                    .map(|mut c| {
                        c.ground_truth = ground_truth.or(c.ground_truth);
                        c
                    })
                    .map_err(|err| (dir_id(&d), err))
            }
            ManifestEntry::Full(mut c) => {
                for p in [&mut c.diff_path, &mut c.vul_source_path, &mut c.patch_source_path, &mut c.pseudo_path] {
                    *p = abs(p);
                }
                c.project_root = c.project_root.map(|p| abs(&p));
                Ok(c)
            }
        };
        let id = match &loaded {
            Ok(c) => c.case_id.clone(),
            Err((id, _)) => id.clone(),
        };
        if !ids.insert(id.clone()) {
            return Err(PipelineError::ManifestMalformed(format!("duplicate case id `{id}`")));
        }
        if let Ok(c) = &loaded {
            if c.ground_truth.is_none() {
                return Err(PipelineError::ManifestMalformed(format!("case `{id}` has no ground_truth")));
            }
        }
        out.push(loaded);
    }
    Ok(out)
}

fn dir_id(d: &Path) -> String {
    d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| d.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    /// Diff parsing, enhancement and source-side preparation.
    pub offline_ms: f64,
    /// Pseudocode ingestion, localization and verification.
    pub online_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderUsage {
    pub provider: String,
    pub prompts: usize,
    pub responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    pub verdict: Option<Verdict>,
    pub patch_kind: Option<PatchKind>,
    pub slices: Vec<EnhancedSlice>,
    /// Pre-patch result first, then patched.
    pub localization: Vec<LocalizationResult>,
    pub macro_substitutions: BTreeMap<String, String>,
    pub unresolved_macros: Vec<String>,
    pub provider_usage: ProviderUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<PhaseTiming>,
    pub error: Option<String>,
}

impl CaseReport {
    fn failed(case_id: &str, truth: Option<GroundTruth>, err: String) -> CaseReport {
        CaseReport {
            case_id: case_id.to_string(),
            ground_truth: truth,
            verdict: None,
            patch_kind: None,
            slices: Vec::new(),
            localization: Vec::new(),
            macro_substitutions: BTreeMap::new(),
            unresolved_macros: Vec::new(),
            provider_usage: ProviderUsage::default(),
            timing: None,
            error: Some(err),
        }
    }

    pub fn verdict_value(&self) -> Option<VerdictValue> {
        self.verdict.as_ref().map(|v| v.value)
    }

    /// Verdict agrees with the ground truth; Unknown never does.
    pub fn correct(&self) -> Option<bool> {
        let truth = self.ground_truth?;
        let v = self.verdict_value()?;
        Some(matches!(
            (truth, v),
            (GroundTruth::Patched, VerdictValue::Patched) | (GroundTruth::Vulnerable, VerdictValue::Vulnerable)
        ))
    }

    pub fn strip_timing(&mut self) {
        self.timing = None;
    }
}

fn read_function(path: &Path, name: &str, version: VersionTag, root: &Path) -> Result<AnnotatedFunction, PipelineError> {
    let mut f = extract_function(&read(path)?, name, version)?;
    f.path = Some(path.strip_prefix(root).unwrap_or(path).to_path_buf());
    Ok(f)
}

/// Same function with every resolvable macro replaced on every line.
fn substituted(func: &AnnotatedFunction, index: &MacroIndex) -> AnnotatedFunction {
    let all: BTreeSet<usize> = func.lines.iter().map(|l| l.index).collect();
    let res = resolve_macros(func, &all, index);
    func.map_text(|t| substitute(t, &res))
}

struct Prepared {
    kind: PatchKind,
    diff_text: String,
    vul: AnnotatedFunction,
    patch: AnnotatedFunction,
    slices: Vec<EnhancedSlice>,
}

fn prepare(input: &CaseInput, cfg: &Config) -> Result<Prepared, PipelineError> {
    let diff_text = read(&input.diff_path)?;
    let diff = parse_unified_diff(&diff_text)?;
    let kind = classify_patch(&diff)?;
    let root = input.project_root.clone().unwrap_or_else(|| input.case_dir());
    let vul = read_function(&input.vul_source_path, &input.function_name, VersionTag::PrePatch, &root)?;
    let patch = read_function(&input.patch_source_path, &input.function_name, VersionTag::Patched, &root)?;
    let vul = annotate_patch_lines(&vul, &diff)?;
    let patch = annotate_patch_lines(&patch, &diff)?;
    let index = MacroIndex::build(&root, &cfg.macro_globs)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", root.display())))?;
    let mut slices = Vec::new();
    for f in [&vul, &patch] {
        if !f.patch_lines().is_empty() {
            slices.push(enhance(f, &index)?);
        }
    }
    Ok(Prepared {
        kind,
        diff_text,
        vul: substituted(&vul, &index),
        patch: substituted(&patch, &index),
        slices,
    })
}

fn slice_for(slices: &[EnhancedSlice], v: VersionTag) -> Option<&EnhancedSlice> {
    slices.iter().find(|s| s.version == v)
}

fn localize_both(p: &Prepared, pseudo_text: &str, cfg: &Config, provider: &dyn Provider) -> Result<(LocalizationResult, LocalizationResult), PipelineError> {
    let pseudo = parse_pseudocode(pseudo_text)?;
    let lim = cfg.token_limit;
    let pc = &cfg.provider;
    let fwd = |v: VersionTag| -> Result<LocalizationResult, PipelineError> {
        let func = if v == VersionTag::Patched { &p.patch } else { &p.vul };
        let slice = slice_for(&p.slices, v).ok_or(EnhanceError::NoPatchLines(func.name.clone()))?;
        Ok(localize(slice, func, &pseudo, provider, pc, lim)?)
    };
    Ok(match p.kind {
        PatchKind::Edit => (fwd(VersionTag::PrePatch)?, fwd(VersionTag::Patched)?),
        PatchKind::AddOnly => {
            let f = fwd(VersionTag::Patched)?;
            let r = reverse_match(&f, p.kind, &pseudo, &p.vul, provider, pc, lim)?;
            (r, f)
        }
        PatchKind::DeleteOnly => {
            let f = fwd(VersionTag::PrePatch)?;
            let r = reverse_match(&f, p.kind, &pseudo, &p.patch, provider, pc, lim)?;
            (f, r)
        }
    })
}

/// Runs one case. Failures are reported in the `error` field.
pub fn run_case(input: &CaseInput, cfg: &Config, provider: &dyn Provider) -> CaseReport {
    let audit = AuditProvider::new(provider);
    let t0 = Instant::now();
    let prepared = prepare(input, cfg);
    let offline_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut report = match &prepared {
        Ok(p) => {
            let mut subs = BTreeMap::new();
            let mut unresolved = BTreeSet::new();
            for s in &p.slices {
                subs.extend(s.macro_substitutions.clone());
                unresolved.extend(s.resolution.unresolved.iter().cloned());
            }
            CaseReport {
                patch_kind: Some(p.kind),
                slices: p.slices.clone(),
                macro_substitutions: subs,
                unresolved_macros: unresolved.into_iter().collect(),
                ..CaseReport::failed(&input.case_id, input.ground_truth, String::new())
            }
        }
        Err(e) => CaseReport::failed(&input.case_id, input.ground_truth, format!("case {}: {e}", input.case_id)),
    };
    let t1 = Instant::now();
    if let Ok(p) = &prepared {
        let online = read(&input.pseudo_path).and_then(|text| localize_both(p, &text, cfg, &audit));
        match online {
            Ok((vul_res, patch_res)) => {
                let verdict = decide(
                    &p.vul,
                    &p.patch,
                    &vul_res,
                    &patch_res,
                    &p.diff_text,
                    &audit,
                    &cfg.provider,
                    &cfg.solver.equiv_config(),
                );
                report.verdict = Some(verdict);
                report.localization = vec![vul_res, patch_res];
                report.error = None;
            }
            Err(e) => report.error = Some(format!("case {}: {e}", input.case_id)),
        }
    }
    report.timing = Some(PhaseTiming { offline_ms, online_ms: t1.elapsed().as_secs_f64() * 1e3 });
    report.provider_usage = ProviderUsage {
        provider: provider.name().to_string(),
        prompts: audit.prompts(),
        responses: audit.responses(),
    };
    if let Some(dir) = &cfg.audit_dir {
        let path = dir.join(format!("{}.audit.json", input.case_id));
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_string_pretty(&audit.entries()).unwrap_or_default()));
        if let Err(e) = written {
            log::warn!("cannot write audit file {}: {e}", path.display());
        }
    }
    report
}

/// Builds the configured provider and runs one case.
pub fn run_case_with_config(input: &CaseInput, cfg: &Config) -> Result<CaseReport, PipelineError> {
    cfg.validate()?;
    let provider = make_provider(&cfg.provider).map_err(PipelineError::Config)?;
    Ok(run_case(input, cfg, provider.as_ref()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub total: usize,
    pub scored: usize,
    pub errors: usize,
    pub unknown: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSchema {
    pub mapping_schema: String,
    /// Phase that localization time is charged to.
    pub localization_phase: String,
}

impl Default for ReportSchema {
    fn default() -> Self {
        ReportSchema { mapping_schema: MAPPING_SCHEMA.to_string(), localization_phase: "online".to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema: ReportSchema,
    pub cases: Vec<CaseReport>,
    pub metrics: Metrics,
    pub tallies: Tallies,
}

impl CorpusReport {
    pub fn from_cases(cases: Vec<CaseReport>) -> CorpusReport {
        let pairs: Vec<(GroundTruth, VerdictValue)> = cases
            .iter()
            .filter(|c| c.error.is_none())
            .filter_map(|c| Some((c.ground_truth?, c.verdict_value()?)))
            .collect();
        let metrics = compute_metrics(&pairs);
        let tallies = Tallies {
            total: cases.len(),
            scored: pairs.len(),
            errors: cases.iter().filter(|c| c.error.is_some()).count(),
            unknown: metrics.unknown,
            correct: cases.iter().filter(|c| c.correct() == Some(true)).count(),
        };
        CorpusReport { schema: ReportSchema::default(), cases, metrics, tallies }
    }

    pub fn strip_timing(&mut self) {
        self.cases.iter_mut().for_each(CaseReport::strip_timing);
    }

    /// Pretty JSON with timing removed, for comparisons across runs.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.strip_timing();
        serde_json::to_string_pretty(&c).expect("report serializes")
    }
}

/// Runs every manifest case on a bounded worker pool.
pub fn run_corpus(manifest: &Path, cfg: &Config) -> Result<CorpusReport, PipelineError> {
    cfg.validate()?;
    let provider = make_provider(&cfg.provider).map_err(PipelineError::Config)?;
    run_corpus_with(manifest, cfg, provider.as_ref())
}

pub fn run_corpus_with(manifest: &Path, cfg: &Config, provider: &dyn Provider) -> Result<CorpusReport, PipelineError> {
    let entries = load_manifest(manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let cases: Vec<CaseReport> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| match e {
                Ok(input) => run_case(input, cfg, provider),
                Err((id, err)) => CaseReport::failed(id, None, format!("case {id}: {err}")),
            })
            .collect()
    });
    if let Some(dir) = &cfg.report_dir {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
        for c in &cases {
            let path = dir.join(format!("{}.json", c.case_id));
            std::fs::write(&path, serde_json::to_string_pretty(c).expect("report serializes"))
                .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(CorpusReport::from_cases(cases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localize::HeuristicProvider;

    const VUL: &str = "#define TLS1_2_VERSION 0x0303\n\nint tls_check(SSL *s)\n{\n    int ok = 0;\n    if (s->version >= TLS1_2_VERSION) {\n        ok = use_sigalgs(s);\n    }\n    return ok;\n}\n";
    const PATCH: &str = "#define TLS1_2_VERSION 0x0303\n\nint tls_check(SSL *s)\n{\n    int ok = 0;\n    if (s->version == TLS1_2_VERSION) {\n        ok = use_sigalgs(s);\n    }\n    return ok;\n}\n";
    const DIFF: &str = "--- a/t.c\n+++ b/t.c\n@@ -5,3 +5,3 @@ int tls_check(SSL *s)\n     int ok = 0;\n-    if (s->version >= TLS1_2_VERSION) {\n+    if (s->version == TLS1_2_VERSION) {\n         ok = use_sigalgs(s);\n";

    fn write_case(dir: &Path, pseudo: Option<&str>, truth: &str) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join(DIFF_FILE), DIFF).unwrap();
        std::fs::write(dir.join(VUL_FILE), VUL).unwrap();
        std::fs::write(dir.join(PATCH_FILE), PATCH).unwrap();
        if let Some(p) = pseudo {
            std::fs::write(dir.join(PSEUDO_FILE), p).unwrap();
        }
        std::fs::write(dir.join(META_FILE), format!("{{\"function_name\": \"tls_check\", \"ground_truth\": \"{truth}\"}}")).unwrap();
    }

    const PSEUDO_PATCHED: &str = "__int64 __fastcall tls_check(SSL *s)\n{\n  unsigned int ok;\n\n  ok = 0;\n  if ( !(s->version ^ 771) )\n    ok = use_sigalgs(s);\n  return ok;\n}\n";

    #[test]
    fn motivating_case_patched() {
        let dir = tempfile::tempdir().unwrap();
        write_case(dir.path(), Some(PSEUDO_PATCHED), "patched");
        let input = CaseInput::from_dir(dir.path()).unwrap();
        let r = run_case(&input, &Config::default(), &HeuristicProvider);
        assert_eq!(r.error, None);
        assert_eq!(r.patch_kind, Some(PatchKind::Edit));
        assert_eq!(r.verdict_value(), Some(VerdictValue::Patched));
        assert_eq!(r.macro_substitutions.get("TLS1_2_VERSION").map(String::as_str), Some("0x0303"));
        assert_eq!(r.localization.len(), 2);
        assert!(r.timing.unwrap().offline_ms >= 0.0);
    }

    #[test]
    fn missing_pseudo_is_a_case_error() {
        let dir = tempfile::tempdir().unwrap();
        write_case(dir.path(), None, "patched");
        let input = CaseInput::from_dir(dir.path()).unwrap();
        let r = run_case(&input, &Config::default(), &HeuristicProvider);
        assert!(r.error.unwrap().contains(PSEUDO_FILE));
        assert_eq!(r.verdict, None);
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.json");
        std::fs::write(&m, "[]").unwrap();
        assert!(matches!(load_manifest(&m), Err(PipelineError::ManifestMalformed(_))));
        std::fs::write(&m, "{\"cases\": 1}").unwrap();
        assert!(matches!(load_manifest(&m), Err(PipelineError::ManifestMalformed(_))));
    }

    #[test]
    fn corpus_continues_past_failures() {
        let dir = tempfile::tempdir().unwrap();
        write_case(&dir.path().join("a"), Some(PSEUDO_PATCHED), "patched");
        write_case(&dir.path().join("b"), None, "patched");
        let m = dir.path().join("manifest.json");
        std::fs::write(&m, "[\"a\", {\"case_dir\": \"b\", \"ground_truth\": \"patched\"}]").unwrap();
        let cfg = Config { workers: Some(2), ..Config::default() };
        let r = run_corpus_with(&m, &cfg, &HeuristicProvider).unwrap();
        assert_eq!(r.tallies.total, 2);
        assert_eq!(r.tallies.errors, 1);
        assert_eq!(r.metrics.tp, 1);
        assert!(!r.canonical_json().contains("offline_ms"));
    }
}
