//! Patch presence testing on decompiled pseudocode.
//!
//! A case is a patch diff, the affected function before and after the fix,
//! and the decompiled pseudocode of a target function. The pipeline
//! enhances the patch into source slices, locates their counterparts in the
//! pseudocode and decides which version the target embodies.

pub mod enhance;
pub mod ingest;
pub mod localize;
pub mod pipeline;
pub mod source;
pub mod verify;

pub use enhance::{
    build_enhanced_slice, collect_patch_variables, controlflow_slice, dataflow_slice, resolve_macros,
    EnhanceError, EnhancedSlice, LineOrigin, MacroIndex, MacroResolution, VariableSet,
};
pub use ingest::{
    parse_pseudocode, segment_pseudocode, truncate_source, IngestError, PseudoFunction, PseudoSegment,
    TruncatedSource, DEFAULT_TOKEN_LIMIT,
};
pub use localize::{
    build_localization_prompt, heuristic_localize, localize, parse_localization_response, reverse_match,
    LineMapping, LocalizationResult, LocalizeError, Prompt, Provenance, Provider, ProviderConfig, ProviderMode,
    TemplateId,
};
pub use pipeline::{
    compute_metrics, run_case, run_corpus, CaseInput, CaseReport, Config, CorpusReport, GroundTruth, Metrics,
    PipelineError,
};
pub use source::{
    annotate_patch_lines, classify_patch, extract_function, parse_unified_diff, AnnotatedFunction, LineSpan,
    PatchDiff, PatchKind, SourceError, VersionTag,
};
pub use verify::{
    bounded_equivalence_oracle, build_verification_prompt, check_equivalence, decide, lex_line, normalize_statement,
    unique_equations, Basis, EquivConfig, EquivResult, EquivVerdict, NormalizedEquation, StatementKind, Token,
    Verdict, VerdictValue, VerifyError,
};
