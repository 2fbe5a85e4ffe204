use std::fmt::Write;

use super::ast::*;
use super::program::Program;

pub(crate) fn render_program(program: &Program) -> String {
    let mut out = String::new();
    let indent = if program.is_wrapped() {
        out.push_str("var model = function() {\n");
        1
    } else {
        0
    };
    for stmt in program.body() {
        render_stmt(&mut out, stmt, indent);
    }
    pad(&mut out, indent);
    out.push_str("return {\n");
    let n = program.queries().len();
    for (i, (key, expr)) in program.queries().iter().enumerate() {
        pad(&mut out, indent + 1);
        let _ = write!(out, "{}: {}", render_key(key), render_expr(expr));
        out.push_str(if i + 1 < n { ",\n" } else { "\n" });
    }
    pad(&mut out, indent);
    out.push_str("}\n");
    if program.is_wrapped() {
        out.push_str("}\n");
    }
    out
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

fn render_stmt(out: &mut String, stmt: &Stmt, indent: usize) {
    pad(out, indent);
    match &stmt.kind {
        StmtKind::Var(name, init) => {
            let _ = writeln!(out, "var {name} = {}", render_expr_at(init, indent));
        }
        StmtKind::Return(value) => {
            let _ = writeln!(out, "return {}", render_expr_at(value, indent));
        }
        StmtKind::Condition(cond) => {
            let _ = writeln!(out, "condition({})", render_expr_at(cond, indent));
        }
        StmtKind::If {
            branches,
            otherwise,
        } => {
            for (i, (cond, block)) in branches.iter().enumerate() {
                if i > 0 {
                    out.push_str(" else ");
                }
                let _ = writeln!(out, "if ({}) {{", render_expr_at(cond, indent));
                for s in block {
                    render_stmt(out, s, indent + 1);
                }
                pad(out, indent);
                out.push('}');
            }
            if let Some(block) = otherwise {
                out.push_str(" else {\n");
                for s in block {
                    render_stmt(out, s, indent + 1);
                }
                pad(out, indent);
                out.push('}');
            }
            out.push('\n');
        }
    }
}

pub fn render_expr(expr: &Expr) -> String {
    render_expr_at(expr, 0)
}

fn render_expr_at(expr: &Expr, indent: usize) -> String {
    let mut out = String::new();
    write_expr(&mut out, expr, indent, 0);
    out
}

pub(crate) fn render_number(n: f64) -> String {
    // Display for f64 is the shortest string that parses back to the same value.
    format!("{n}")
}

pub(crate) fn render_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for ch in s.chars() {
        match ch {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn render_key(key: &str) -> String {
    let is_ident = key
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == '$')
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$');
    if is_ident {
        key.to_string()
    } else {
        render_string(key)
    }
}

/// Binding strength used to decide parenthesization. Conditional binds
/// loosest, then binary operators by precedence, then unary, then atoms.
fn strength(expr: &Expr) -> u8 {
    match &expr.kind {
        ExprKind::Conditional(..) => 0,
        ExprKind::Binary(op, ..) => op.precedence(),
        ExprKind::Unary(..) => 10,
        ExprKind::Function(_) => 0,
        _ => 20,
    }
}

fn write_child(out: &mut String, expr: &Expr, indent: usize, min: u8) {
    if strength(expr) < min {
        out.push('(');
        write_expr(out, expr, indent, 0);
        out.push(')');
    } else {
        write_expr(out, expr, indent, min);
    }
}

fn write_expr(out: &mut String, expr: &Expr, indent: usize, _min: u8) {
    match &expr.kind {
        ExprKind::Number(n) => out.push_str(&render_number(*n)),
        ExprKind::Str(s) => out.push_str(&render_string(s)),
        ExprKind::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        ExprKind::Ident(name) => out.push_str(name),
        ExprKind::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_child(out, item, indent, 0);
            }
            out.push(']');
        }
        ExprKind::Record(fields) => {
            out.push('{');
            for (i, (key, value)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{}: ", render_key(key));
                write_child(out, value, indent, 0);
            }
            out.push('}');
        }
        ExprKind::Unary(op, operand) => {
            out.push(match op {
                UnaryOp::Not => '!',
                UnaryOp::Neg => '-',
            });
            // `--x` and `!-x` are avoided for readability and JS compatibility
            write_child(out, operand, indent, 11);
        }
        ExprKind::Binary(op, left, right) => {
            let prec = op.precedence();
            write_child(out, left, indent, prec);
            let _ = write!(out, " {} ", op.symbol());
            write_child(out, right, indent, prec + 1);
        }
        ExprKind::Conditional(cond, then, otherwise) => {
            write_child(out, cond, indent, 1);
            out.push_str(" ? ");
            write_child(out, then, indent, 0);
            out.push_str(" : ");
            write_child(out, otherwise, indent, 0);
        }
        ExprKind::Call(callee, args) => {
            write_child(out, callee, indent, 20);
            out.push('(');
            for (i, arg) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_child(out, arg, indent, 0);
            }
            out.push(')');
        }
        ExprKind::Includes(list, item) => {
            write_child(out, list, indent, 20);
            out.push_str(".includes(");
            write_child(out, item, indent, 0);
            out.push(')');
        }
        ExprKind::Function(func) => {
            out.push_str("function(");
            for (i, p) in func.params.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(p);
            }
            out.push_str(") {\n");
            for stmt in &func.body {
                render_stmt(out, stmt, indent + 1);
            }
            pad(out, indent);
            out.push('}');
        }
    }
}
