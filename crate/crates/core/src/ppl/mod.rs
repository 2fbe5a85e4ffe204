//! MedPPL: the small probabilistic language synthesized models are written in.
//!
//! A model binds helper functions with `var`, states observations with
//! `condition(...)` and ends with `return {query1: ..., ...}`. Programs are
//! parsed into an immutable [`Program`], checked with [`validate`], then run
//! forward ([`run_once`]), by rejection ([`rejection_sample`]) or, when all
//! choices are discrete, exactly ([`enumerate`]).

mod ast;
mod edit;
mod enumerate;
mod error;
mod interp;
mod lexer;
mod parser;
mod program;
mod render;
mod sample;
mod validate;
mod value;

pub use ast::{BinaryOp, Expr, ExprKind, FunctionLit, Ident, NodeId, Primitive, Span, Stmt, StmtKind, UnaryOp};
pub use edit::{apply_edit, Edit, EditKind, EditPayload, EditTarget};
pub use enumerate::{enumerate, enumerate_with_cap, ExactDistribution, DEFAULT_PATH_CAP};
pub use error::{EditError, EnumerateError, ParseError, ParseErrorKind, RuntimeError};
pub use parser::{parse, parse_expression};
pub use program::{NamedFunction, Program};
pub use render::render_expr;
pub use sample::{rejection_sample, rejection_sample_with_id, run_once, Budget, Outcome, OutcomeStatus, SampleSet};
pub use validate::{validate, Diagnostic, DiagnosticKind};
pub use value::Value;
