//! Unified diffs and syntax-aware function representations.

pub mod diff;
pub mod function;
pub mod syntax;

pub use diff::{classify_patch, parse_unified_diff, DiffLine, Hunk, LineTag, PatchDiff, PatchKind};
pub use function::{
    annotate_patch_lines, extract_function, AnnotatedFunction, SourceLine, VersionTag,
    PATCH_MARKER,
};
pub use syntax::{LineSpan, Node, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    #[error("malformed diff: {0}")]
    MalformedDiff(String),
    #[error("diff touches more than one file")]
    MultiFileDiff,
    #[error("patch has no added or deleted non-whitespace lines")]
    EmptyPatch,
    #[error("function `{0}` not found")]
    FunctionNotFound(String),
    #[error("function `{0}` has unbalanced braces")]
    UnbalancedBraces(String),
    #[error("patch line not found in function: `{0}`")]
    PatchLineNotFound(String),
}
