//! Statement normalization and equivalence checking.

pub mod decide;
pub mod equations;
pub mod equiv;
pub mod expr;
pub mod lexer;
pub mod parse;
pub mod statement;

pub use decide::{
    build_verification_prompt, decide, function_equations, parse_version_answer, target_equations,
    Basis, Evidence, Verdict, VerdictValue,
};
pub use equiv::{
    bounded_equivalence_oracle, check_equivalence, check_expressions, Backend, EquivConfig,
    EquivMethod, EquivResult, EquivVerdict,
};
pub use equations::{is_trivial, unique_equations, EquationSet};
pub use expr::{Assignment, BinaryOp, Expr, Semantics, UnaryOp};
pub use lexer::{lex_line, render_tokens, Token, TokenKind};
pub use statement::{
    equations_from_lines, extract_statements, normalize_statement, parse_canonical,
    EquationBody, NormalizedEquation, StatementKind, StatementUnit,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported operator `{0}`")]
    UnsupportedOperator(String),
    #[error("bit width {0} out of range 1..=64")]
    WidthOutOfRange(u32),
    #[error("{0} variables exceed the oracle limit of 2")]
    TooManyVariables(usize),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("provider gave no usable answer: {0}")]
    ProviderExhausted(String),
}
