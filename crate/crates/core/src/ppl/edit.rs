//! Point edits on model source.
//!
//! Edits are applied to the source text and the result is re-parsed and
//! validated, so comments and layout outside the edited region survive and
//! an edit chain can be replayed from the root source exactly.

use serde::{Deserialize, Serialize};

use super::ast::Span;
use super::error::EditError;
use super::parser::{parse, parse_expression};
use super::program::Program;
use super::render::render_number;
use super::validate::{validate, Diagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    ReplaceCondition,
    AddCondition,
    RemoveCondition,
    ReplaceNumericLiteral,
}

/// What an edit points at: a 0-based condition index or a source span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EditTarget {
    Index(usize),
    Span(Span),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EditPayload {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<EditTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<EditPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Edit {
    pub fn replace_condition(index: usize, text: impl Into<String>) -> Self {
        Self::build(EditKind::ReplaceCondition, Some(EditTarget::Index(index)), Some(EditPayload::Text(text.into())))
    }

    pub fn add_condition(text: impl Into<String>) -> Self {
        Self::build(EditKind::AddCondition, None, Some(EditPayload::Text(text.into())))
    }

    pub fn remove_condition(index: usize) -> Self {
        Self::build(EditKind::RemoveCondition, Some(EditTarget::Index(index)), None)
    }

    pub fn replace_numeric_literal(span: Span, value: f64) -> Self {
        Self::build(
            EditKind::ReplaceNumericLiteral,
            Some(EditTarget::Span(span)),
            Some(EditPayload::Number(value)),
        )
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    fn build(kind: EditKind, target: Option<EditTarget>, payload: Option<EditPayload>) -> Self {
        Self {
            kind,
            target,
            payload,
            note: None,
        }
    }

    fn index(&self) -> Result<usize, EditError> {
        match self.target {
            Some(EditTarget::Index(i)) => Ok(i),
            _ => Err(EditError::Malformed(format!(
                "{:?} needs a condition index as its target",
                self.kind
            ))),
        }
    }

    fn text(&self) -> Result<&str, EditError> {
        match &self.payload {
            Some(EditPayload::Text(t)) if !t.trim().is_empty() => Ok(t.trim()),
            _ => Err(EditError::Malformed(format!(
                "{:?} needs expression text as its payload",
                self.kind
            ))),
        }
    }
}

/// Applies `edit` to `program`, returning the edited program. The input is
/// untouched; on any failure nothing is produced.
pub fn apply_edit(program: &Program, edit: &Edit) -> Result<Program, EditError> {
    let source = program.source();
    let new_source = match edit.kind {
        EditKind::ReplaceCondition => {
            let index = edit.index()?;
            let text = checked_expression(edit.text()?)?;
            let expr = *program
                .conditions()
                .get(index)
                .ok_or_else(|| missing_condition(program, index))?;
            splice(source, program.span(expr.id), &text)
        }
        EditKind::AddCondition => {
            if edit.target.is_some() {
                return Err(EditError::Malformed("add_condition takes no target".into()));
            }
            let text = checked_expression(edit.text()?)?;
            let ret = program.return_span();
            let line_start = source[..ret.start].rfind('\n').map_or(0, |i| i + 1);
            let indent = &source[line_start..ret.start];
            let insertion = if indent.chars().all(char::is_whitespace) {
                format!("condition({text});\n{indent}")
            } else {
                format!("condition({text}); ")
            };
            splice(source, Span::new(ret.start, ret.start), &insertion)
        }
        EditKind::RemoveCondition => {
            let index = edit.index()?;
            let (stmt, _) = program
                .condition_statements()
                .nth(index)
                .ok_or_else(|| missing_condition(program, index))?;
            let span = widen_to_line(source, program.span(stmt.id));
            splice(source, span, "")
        }
        EditKind::ReplaceNumericLiteral => {
            let Some(EditTarget::Span(span)) = edit.target else {
                return Err(EditError::Malformed(
                    "replace_numeric_literal needs a source span as its target".into(),
                ));
            };
            let Some(EditPayload::Number(value)) = edit.payload else {
                return Err(EditError::Malformed(
                    "replace_numeric_literal needs a number as its payload".into(),
                ));
            };
            if !value.is_finite() {
                return Err(EditError::Malformed("replacement number must be finite".into()));
            }
            if !program.numeric_literals().iter().any(|(s, _)| *s == span) {
                return Err(EditError::EditTargetMissing(format!(
                    "no numeric literal at bytes {}..{}",
                    span.start, span.end
                )));
            }
            let text = if value < 0.0 || (value == 0.0 && value.is_sign_negative()) {
                format!("({})", render_number(value))
            } else {
                render_number(value)
            };
            splice(source, span, &text)
        }
    };
    let edited = parse(&new_source).map_err(|e| EditError::EditProducesInvalidProgram {
        diagnostics: vec![Diagnostic::from(&e)],
    })?;
    let diagnostics = validate(&edited);
    if !diagnostics.is_empty() {
        return Err(EditError::EditProducesInvalidProgram { diagnostics });
    }
    Ok(edited)
}

/// Rejects payloads that are not a single expression before touching the
/// source, so a payload like `x); var y = (1` cannot smuggle statements in.
fn checked_expression(text: &str) -> Result<String, EditError> {
    parse_expression(text).map_err(|e| EditError::EditProducesInvalidProgram {
        diagnostics: vec![Diagnostic::from(&e)],
    })?;
    Ok(text.trim_end_matches(';').trim_end().to_string())
}

fn missing_condition(program: &Program, index: usize) -> EditError {
    EditError::EditTargetMissing(format!(
        "condition {index} (the model has {} condition(s))",
        program.conditions().len()
    ))
}

fn splice(source: &str, span: Span, text: &str) -> String {
    let mut out = String::with_capacity(source.len() + text.len());
    out.push_str(&source[..span.start]);
    out.push_str(text);
    out.push_str(&source[span.end..]);
    out
}

/// Extends a statement span to its whole line when nothing else shares it.
fn widen_to_line(source: &str, span: Span) -> Span {
    let line_start = source[..span.start].rfind('\n').map_or(0, |i| i + 1);
    let line_end = source[span.end..].find('\n').map_or(source.len(), |i| span.end + i);
    let before_blank = source[line_start..span.start].trim().is_empty();
    let after_blank = source[span.end..line_end].trim().is_empty();
    if before_blank && after_blank {
        let end = if line_end < source.len() { line_end + 1 } else { line_end };
        Span::new(line_start, end)
    } else {
        span
    }
}
