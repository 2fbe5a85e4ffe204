//! Reading structured results out of completion text.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::prompts::*;
use crate::ppl::{parse_expression, BinaryOp, Expr, ExprKind, Primitive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    /// Expression inside each `condition(...)`, in order.
    pub condition_statements: Vec<String>,
    pub query_expressions: Vec<String>,
    /// Every name the statements call or mention, which the model must define.
    pub required_functions: BTreeSet<String>,
    /// Comment lines the translation left, e.g. notes on skipped sentences.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub lm_score: f64,
}

impl Translation {
    /// The statement block as it appears in later prompts.
    pub fn render(&self) -> String {
        let mut s = String::from("// CONDITIONS\n");
        for c in &self.condition_statements {
            s.push_str(&format!("condition({c})\n"));
        }
        s.push_str("\n// QUERIES\n");
        for q in &self.query_expressions {
            s.push_str(q);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub variable: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub prose: String,
    pub concept_trace: Vec<TraceEntry>,
    pub lm_score: f64,
}

impl Sketch {
    /// The scratchpad block as it appears in later prompts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        if !self.prose.is_empty() {
            s.push_str(&self.prose);
            s.push_str("\n\n");
        }
        s.push_str(START_TRACE);
        s.push('\n');
        for e in &self.concept_trace {
            s.push_str(&format!("- {}\n", e.variable));
            if !e.depends_on.is_empty() {
                s.push_str(&format!("  - depends on: {}\n", e.depends_on.join(", ")));
            }
        }
        s.push_str(END_TRACE);
        s
    }
}

/// Text before `end`, after an optional echoed `start`.
fn between<'a>(text: &'a str, start: &str, end: &str) -> (&'a str, bool) {
    let body = match text.find(start) {
        Some(i) => &text[i + start.len()..],
        None => text,
    };
    match body.find(end) {
        Some(i) => (&body[..i], true),
        None => (body, false),
    }
}

/// Drops a surrounding Markdown code fence if the whole block is fenced.
fn strip_fence(block: &str) -> &str {
    let trimmed = block.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        if let Some(inner) = rest.strip_suffix("```") {
            return match inner.find('\n') {
                Some(i) => &inner[i + 1..],
                None => "",
            };
        }
    }
    block
}

fn names_in(expr: &Expr, out: &mut BTreeSet<String>) {
    expr.walk(&mut |e| {
        if let ExprKind::Ident(name) = &e.kind {
            if Primitive::from_name(name).is_none() {
                out.insert(name.to_string());
            }
        }
    });
}

/// Whether an expression could be boolean; rules out literals and arithmetic.
fn maybe_boolean(expr: &Expr) -> bool {
    match &expr.kind {
        ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::List(_) | ExprKind::Record(_) | ExprKind::Function(_) => false,
        ExprKind::Binary(op, _, _) => !matches!(
            op,
            BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem
        ),
        ExprKind::Unary(crate::ppl::UnaryOp::Neg, _) => false,
        _ => true,
    }
}

/// Parses a translation completion. At least `n_queries` query expressions
/// are required.
pub fn parse_translation(text: &str, n_queries: usize) -> Result<Translation, String> {
    let (block, _) = between(text, START_TRANSLATION, END_TRANSLATION);
    let block = strip_fence(block);
    #[derive(PartialEq)]
    enum Section {
        None,
        Conditions,
        Queries,
    }
    let mut section = Section::None;
    let mut conditions = Vec::new();
    let mut queries = Vec::new();
    let mut notes = Vec::new();
    let mut required = BTreeSet::new();
    for raw in block.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix("//") {
            let comment = comment.trim();
            match comment.to_ascii_uppercase().as_str() {
                "CONDITIONS" => section = Section::Conditions,
                "QUERIES" => section = Section::Queries,
                _ => notes.push(comment.to_string()),
            }
            continue;
        }
        let line = line.trim_end_matches(';').trim_end();
        match section {
            Section::Conditions => {
                let inner = line
                    .strip_prefix("condition")
                    .map(str::trim_start)
                    .and_then(|l| l.strip_prefix('('))
                    .and_then(|l| l.strip_suffix(')'))
                    .ok_or_else(|| format!("not a condition statement: {line}"))?;
                let expr = parse_expression(inner).map_err(|e| format!("condition `{inner}`: {e}"))?;
                if !maybe_boolean(&expr) {
                    return Err(format!("condition `{inner}` is not boolean"));
                }
                names_in(&expr, &mut required);
                conditions.push(inner.trim().to_string());
            }
            Section::Queries => {
                let expr = parse_expression(line).map_err(|e| format!("query `{line}`: {e}"))?;
                names_in(&expr, &mut required);
                queries.push(line.to_string());
            }
            Section::None => return Err(format!("statement outside CONDITIONS/QUERIES: {line}")),
        }
    }
    if queries.len() < n_queries {
        return Err(format!(
            "{} query expression(s) for {n_queries} question(s)",
            queries.len()
        ));
    }
    Ok(Translation {
        condition_statements: conditions,
        query_expressions: queries,
        required_functions: required,
        notes,
        lm_score: 0.0,
    })
}

fn trace_name(s: &str) -> Option<String> {
    let s = s.trim().trim_matches('`');
    let ok = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.starts_with(|c: char| c.is_ascii_digit());
    ok.then(|| s.to_string())
}

/// Parses a sketch completion and checks it against the translation it
/// builds on: every required function must be a trace variable and every
/// dependency must be declared in the trace.
pub fn parse_sketch(text: &str, translation: &Translation) -> Result<Sketch, String> {
    let (scratch, _) = between(text, START_SCRATCHPAD, END_SCRATCHPAD);
    let Some(start) = scratch.find(START_TRACE) else {
        return Err("no concept trace".into());
    };
    let prose = scratch[..start].trim().to_string();
    let after = &scratch[start + START_TRACE.len()..];
    let trace_text = match after.find(END_TRACE) {
        Some(i) => &after[..i],
        None => return Err("concept trace is not closed".into()),
    };
    let trace_text = strip_fence(trace_text);
    let mut trace: Vec<TraceEntry> = Vec::new();
    for raw in trace_text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let item = line
            .strip_prefix('-')
            .map(str::trim)
            .ok_or_else(|| format!("unexpected trace line: {line}"))?;
        if let Some(deps) = item.strip_prefix("depends on:") {
            let entry = trace
                .last_mut()
                .ok_or_else(|| "dependency listed before any variable".to_string())?;
            for d in deps.split(',') {
                let name = trace_name(d).ok_or_else(|| format!("bad dependency name: {d}"))?;
                entry.depends_on.push(name);
            }
        } else {
            let variable = trace_name(item).ok_or_else(|| format!("bad variable name: {item}"))?;
            trace.push(TraceEntry {
                variable,
                depends_on: Vec::new(),
            });
        }
    }
    let declared: BTreeSet<&str> = trace.iter().map(|e| e.variable.as_str()).collect();
    for e in &trace {
        for d in &e.depends_on {
            if !declared.contains(d.as_str()) {
                return Err(format!("`{}` depends on undeclared `{d}`", e.variable));
            }
        }
    }
    for f in &translation.required_functions {
        if !declared.contains(f.as_str()) {
            return Err(format!("required function `{f}` is missing from the concept trace"));
        }
    }
    Ok(Sketch {
        prose,
        concept_trace: trace,
        lm_score: 0.0,
    })
}

/// The model source between the model delimiters, verbatim apart from a
/// surrounding code fence. `None` when the closing delimiter is missing.
pub fn extract_model(text: &str) -> Option<String> {
    let (body, closed) = between(text, START_MODEL, END_MODEL);
    if !closed {
        return None;
    }
    let body = strip_fence(body);
    let body = body.trim_matches('\n');
    Some(format!("{body}\n"))
}

/// The number on the last `SCORE:` line, clamped to [0, 1]; 0 if absent.
pub fn parse_score(text: &str) -> f64 {
    text.lines()
        .rev()
        .find_map(|line| {
            let i = line.to_ascii_uppercase().find("SCORE:")?;
            let rest = line[i + 6..].trim();
            let number: String = rest
                .chars()
                .take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-' || *c == '+' || *c == 'e' || *c == 'E')
                .collect();
            number.parse::<f64>().ok().filter(|x| x.is_finite())
        })
        .map(|x| x.clamp(0.0, 1.0))
        .unwrap_or(0.0)
}

/// Uncomments `//`-commented lines whose remainder is exactly one
/// top-level `condition(...)` statement. Everything else is left alone, so
/// applying it twice changes nothing more.
pub fn patch_conditions(source: &str) -> String {
    let mut out = String::with_capacity(source.len());
    for line in source.split_inclusive('\n') {
        let (content, newline) = match line.strip_suffix('\n') {
            Some(c) => (c, "\n"),
            None => (line, ""),
        };
        let (content, cr) = match content.strip_suffix('\r') {
            Some(c) => (c, "\r"),
            None => (content, ""),
        };
        let indent_len = content.len() - content.trim_start().len();
        let (indent, rest) = content.split_at(indent_len);
        let patched = rest
            .strip_prefix("//")
            .map(|c| c.trim())
            .filter(|c| is_condition_statement(c));
        match patched {
            Some(stmt) => {
                out.push_str(indent);
                out.push_str(stmt);
            }
            None => out.push_str(content),
        }
        out.push_str(cr);
        out.push_str(newline);
    }
    out
}

fn is_condition_statement(text: &str) -> bool {
    let stmt = text.trim_end_matches(';').trim_end();
    let Some(inner) = stmt
        .strip_prefix("condition")
        .map(str::trim_start)
        .and_then(|s| s.strip_prefix('('))
        .and_then(|s| s.strip_suffix(')'))
    else {
        return false;
    };
    // the whole line must be one call, so `condition(a) || (b)` is rejected
    // by requiring the inner text to parse as a single expression
    parse_expression(inner).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translation_block() {
        let text = "// CONDITIONS\ncondition(has_chest_pain('sean'))\ncondition(feels_lightheaded('sean'));\n\n// QUERIES\nis_having_heart_attack('sean')\nwhat_ailment('sean')\n<END_LANGUAGE_TO_WEBPPL_CODE>\ntrailing chatter";
        let t = parse_translation(text, 2).unwrap();
        assert_eq!(t.condition_statements, ["has_chest_pain('sean')", "feels_lightheaded('sean')"]);
        assert_eq!(t.query_expressions.len(), 2);
        assert_eq!(
            t.required_functions.iter().map(String::as_str).collect::<Vec<_>>(),
            ["feels_lightheaded", "has_chest_pain", "is_having_heart_attack", "what_ailment"]
        );
        assert!(t.render().contains("condition(has_chest_pain('sean'))\n"));
        assert!(parse_translation(text, 3).is_err());
    }

    #[test]
    fn exemplar_translation_block() {
        let t = parse_translation(EXEMPLAR_TRANSLATION, 1).unwrap();
        assert_eq!(t.condition_statements.len(), 2);
        assert_eq!(t.query_expressions.len(), 2);
        assert_eq!(t.condition_statements[0], "has_dysentry('marie') && has_extreme_fatigue('marie')");
    }

    #[test]
    fn translation_rejects_junk() {
        assert!(parse_translation("// CONDITIONS\ncondition(1 + 2)\n// QUERIES\nf('a')", 1).is_err());
        assert!(parse_translation("// CONDITIONS\nhas_x('a')\n// QUERIES\nf('a')", 1).is_err());
        assert!(parse_translation("// CONDITIONS\ncondition(has_x('a'\n// QUERIES\nf('a')", 1).is_err());
    }

    #[test]
    fn sketch_trace() {
        let t = parse_translation(EXEMPLAR_TRANSLATION, 1).unwrap();
        let s = parse_sketch(EXEMPLAR_SCRATCHPAD, &t).unwrap();
        assert_eq!(s.concept_trace.len(), 6);
        assert_eq!(s.concept_trace[1].depends_on, ["recent_international_travel"]);
        assert!(s.prose.starts_with("Patients may have"));
        let reparsed = parse_sketch(&s.render(), &t).unwrap();
        assert_eq!(reparsed.concept_trace, s.concept_trace);

        let bad = EXEMPLAR_SCRATCHPAD.replace("depends on: fatigue_level", "depends on: fatigue_score");
        assert!(parse_sketch(&bad, &t).unwrap_err().contains("fatigue_score"));
        let missing = EXEMPLAR_SCRATCHPAD.replace("- has_ulcerative_colitis\n  - depends on: has_ailment\n", "");
        assert!(parse_sketch(&missing, &t).unwrap_err().contains("has_ulcerative_colitis"));
    }

    #[test]
    fn model_delimiters() {
        assert_eq!(
            extract_model("return {query1: true}\n<END_WEBPPL_MODEL>").as_deref(),
            Some("return {query1: true}\n")
        );
        assert_eq!(
            extract_model("<START_WEBPPL_MODEL>\n```js\nreturn {query1: true}\n```\n<END_WEBPPL_MODEL>").as_deref(),
            Some("return {query1: true}\n")
        );
        assert_eq!(extract_model("return {query1: true}"), None);
    }

    #[test]
    fn scores() {
        assert_eq!(parse_score("Looks fine.\nSCORE: 0.8"), 0.8);
        assert_eq!(parse_score("score: 0.4 overall\nSCORE: 0.9\n"), 0.9);
        assert_eq!(parse_score("Score: 1.5"), 1.0);
        assert_eq!(parse_score("no number here"), 0.0);
        assert_eq!(parse_score("SCORE: high"), 0.0);
    }

    #[test]
    fn patch_examples() {
        assert_eq!(
            patch_conditions("// condition(has_chest_pain('sean'))"),
            "condition(has_chest_pain('sean'))"
        );
        assert_eq!(
            patch_conditions("  //condition(a('x') && b('x'));\r\n"),
            "  condition(a('x') && b('x'));\r\n"
        );
        for unchanged in [
            "condition(has_chest_pain('sean'))\n",
            "// note: condition worsens\n",
            "// condition(a) is needed here\n",
            "// conditions(a('x'))\n",
            "var x = 1 // condition(a('x'))\n",
        ] {
            assert_eq!(patch_conditions(unchanged), unchanged);
        }
    }
}
