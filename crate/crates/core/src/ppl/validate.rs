//! Static checks run before a program is executed.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::program::Program;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    SyntaxError,
    UnknownIdentifier,
    UnsupportedConstruct,
    ArityMismatch,
    LengthMismatch,
    CategoricalShape,
    ConditionNotBoolean,
    ReservedName,
    MissingQuery,
    ProbabilityOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
    pub span: Option<Span>,
}

impl Diagnostic {
    pub fn new(kind: DiagnosticKind, message: impl Into<String>, span: Option<Span>) -> Self {
        Self {
            kind,
            message: message.into(),
            span,
        }
    }
}

impl From<&super::error::ParseError> for Diagnostic {
    fn from(e: &super::error::ParseError) -> Self {
        use super::error::ParseErrorKind;
        let kind = match e.kind {
            ParseErrorKind::Syntax { .. } => DiagnosticKind::SyntaxError,
            ParseErrorKind::UnknownIdentifier { .. } => DiagnosticKind::UnknownIdentifier,
            ParseErrorKind::UnsupportedConstruct { .. } => DiagnosticKind::UnsupportedConstruct,
        };
        Diagnostic::new(kind, e.to_string(), Some(e.span))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Bool,
    Num,
    Str,
    List,
    Record,
    Func,
    Unknown,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Bool => "boolean",
            Ty::Num => "number",
            Ty::Str => "string",
            Ty::List => "list",
            Ty::Record => "record",
            Ty::Func => "function",
            Ty::Unknown => "unknown",
        }
    }
}

/// Returns every problem found; an empty list means the program is valid.
pub fn validate(program: &Program) -> Vec<Diagnostic> {
    let mut v = Validator::new(program);
    v.check_names();
    v.check_calls();
    v.check_conditions();
    v.diagnostics
}

struct Validator<'a> {
    program: &'a Program,
    diagnostics: Vec<Diagnostic>,
    /// Model-level bindings by name.
    top: HashMap<&'a str, &'a Expr>,
    /// Function literal bodies by the name of the model-level var they are bound to.
    functions: HashMap<&'a str, &'a FunctionLit>,
}

impl<'a> Validator<'a> {
    fn new(program: &'a Program) -> Self {
        let mut top = HashMap::new();
        let mut functions = HashMap::new();
        for stmt in program.body() {
            if let StmtKind::Var(name, init) = &stmt.kind {
                top.insert(&**name, init);
                match &init.kind {
                    ExprKind::Function(f) => {
                        functions.insert(&**name, &**f);
                    }
                    ExprKind::Call(callee, args)
                        if matches!(&callee.kind, ExprKind::Ident(n) if &**n == "mem") =>
                    {
                        if let Some(Expr {
                            kind: ExprKind::Function(f),
                            ..
                        }) = args.first()
                        {
                            functions.insert(&**name, &**f);
                        }
                    }
                    _ => {}
                }
            }
        }
        Self {
            program,
            diagnostics: Vec::new(),
            top,
            functions,
        }
    }

    fn push(&mut self, kind: DiagnosticKind, message: String, node: Option<NodeId>) {
        let span = node.map(|id| self.program.span(id));
        self.diagnostics.push(Diagnostic::new(kind, message, span));
    }

    fn check_names(&mut self) {
        let mut scopes: Vec<HashSet<&str>> = vec![self.top.keys().copied().collect()];
        for stmt in self.program.body() {
            if let StmtKind::Var(name, _) = &stmt.kind {
                if Primitive::from_name(name).is_some() {
                    self.push(
                        DiagnosticKind::ReservedName,
                        format!("`{name}` is a built-in and cannot be redefined"),
                        Some(stmt.id),
                    );
                }
            }
        }
        let program = self.program;
        let mut out = Vec::new();
        names_in_stmts(program.body(), &mut scopes, &mut out);
        for (_, e) in program.queries() {
            names_in_expr(e, &mut scopes, &mut out);
        }
        for (name, id) in out {
            self.push(
                DiagnosticKind::UnknownIdentifier,
                format!("`{name}` is not defined"),
                Some(id),
            );
        }
    }

    fn check_calls(&mut self) {
        let program = self.program;
        let mut calls = Vec::new();
        program.walk_exprs(&mut |e| {
            if let ExprKind::Call(callee, args) = &e.kind {
                if let ExprKind::Ident(name) = &callee.kind {
                    calls.push((e, &**name, args));
                }
            }
        });
        for (call, name, args) in calls {
            if self.top.contains_key(name) {
                // user definitions shadow nothing built in (reported separately)
                if let Some(f) = self.functions.get(name) {
                    if f.params.len() != args.len() {
                        self.push(
                            DiagnosticKind::ArityMismatch,
                            format!(
                                "`{name}` takes {} argument(s) but is called with {}",
                                f.params.len(),
                                args.len()
                            ),
                            Some(call.id),
                        );
                    }
                }
                continue;
            }
            let Some(prim) = Primitive::from_name(name) else {
                continue;
            };
            let expected = match prim {
                Primitive::Gaussian => 2,
                _ => 1,
            };
            if args.len() != expected {
                self.push(
                    DiagnosticKind::ArityMismatch,
                    format!("`{name}` takes {expected} argument(s) but is called with {}", args.len()),
                    Some(call.id),
                );
                continue;
            }
            match prim {
                Primitive::Flip => {
                    if let Some(p) = literal_number(&args[0]) {
                        if !(0.0..=1.0).contains(&p) {
                            self.push(
                                DiagnosticKind::ProbabilityOutOfRange,
                                format!("flip probability {p} is outside [0, 1]"),
                                Some(args[0].id),
                            );
                        }
                    }
                }
                Primitive::Categorical => self.check_categorical(call, &args[0]),
                Primitive::Mem => {
                    let ty = self.infer(&args[0], &mut HashSet::new(), None);
                    if ty != Ty::Func && ty != Ty::Unknown {
                        self.push(
                            DiagnosticKind::ArityMismatch,
                            format!("`mem` expects a function, got a {}", ty.name()),
                            Some(call.id),
                        );
                    }
                }
                Primitive::Gaussian | Primitive::Condition => {}
            }
        }
    }

    fn check_categorical(&mut self, call: &Expr, arg: &'a Expr) {
        let ExprKind::Record(fields) = &arg.kind else {
            self.push(
                DiagnosticKind::CategoricalShape,
                "`categorical` expects a record {ps: [...], vs: [...]}".into(),
                Some(call.id),
            );
            return;
        };
        let get = |key: &str| fields.iter().find(|(k, _)| &**k == key).map(|(_, e)| e);
        let (Some(ps), Some(vs)) = (get("ps"), get("vs")) else {
            self.push(
                DiagnosticKind::CategoricalShape,
                "`categorical` needs both `ps` and `vs` fields".into(),
                Some(call.id),
            );
            return;
        };
        if let (Some(np), Some(nv)) = (self.list_len(ps), self.list_len(vs)) {
            if np != nv {
                self.push(
                    DiagnosticKind::LengthMismatch,
                    format!("`categorical` has {np} weights in `ps` but {nv} values in `vs`"),
                    Some(call.id),
                );
            }
        }
    }

    /// Length of a list literal, or of a variable bound once to a list
    /// literal in an enclosing function or the model body.
    fn list_len(&self, expr: &Expr) -> Option<usize> {
        match &expr.kind {
            ExprKind::List(items) => Some(items.len()),
            ExprKind::Ident(name) => {
                let mut found = Vec::new();
                self.program.walk_exprs(&mut |e| {
                    if let ExprKind::Function(f) = &e.kind {
                        collect_list_bindings(&f.body, name, &mut found);
                    }
                });
                collect_list_bindings(self.program.body(), name, &mut found);
                match found.as_slice() {
                    [n] => Some(*n),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    fn check_conditions(&mut self) {
        let program = self.program;
        for cond in program.conditions() {
            let ty = self.infer(cond, &mut HashSet::new(), None);
            if ty != Ty::Bool && ty != Ty::Unknown {
                self.push(
                    DiagnosticKind::ConditionNotBoolean,
                    format!("condition argument is a {}, not a boolean", ty.name()),
                    Some(cond.id),
                );
            }
        }
    }

    /// Best-effort static type. `visiting` guards recursion through user
    /// functions; `locals` are var bindings of the function being inferred.
    fn infer(
        &self,
        expr: &'a Expr,
        visiting: &mut HashSet<&'a str>,
        locals: Option<&HashMap<&'a str, &'a Expr>>,
    ) -> Ty {
        match &expr.kind {
            ExprKind::Number(_) => Ty::Num,
            ExprKind::Str(_) => Ty::Str,
            ExprKind::Bool(_) => Ty::Bool,
            ExprKind::List(_) => Ty::List,
            ExprKind::Record(_) => Ty::Record,
            ExprKind::Function(_) => Ty::Func,
            ExprKind::Includes(..) => Ty::Bool,
            ExprKind::Unary(UnaryOp::Not, _) => Ty::Bool,
            ExprKind::Unary(UnaryOp::Neg, _) => Ty::Num,
            ExprKind::Binary(op, l, r) => {
                if op.is_comparison() {
                    return Ty::Bool;
                }
                let lt = self.infer(l, visiting, locals);
                let rt = self.infer(r, visiting, locals);
                match op {
                    BinaryOp::And | BinaryOp::Or => {
                        if lt == rt {
                            lt
                        } else {
                            Ty::Unknown
                        }
                    }
                    BinaryOp::Add if lt == Ty::Str && rt == Ty::Str => Ty::Str,
                    _ => Ty::Num,
                }
            }
            ExprKind::Conditional(_, t, e) => {
                let tt = self.infer(t, visiting, locals);
                if tt == self.infer(e, visiting, locals) {
                    tt
                } else {
                    Ty::Unknown
                }
            }
            ExprKind::Ident(name) => {
                if let Some(init) = locals.and_then(|l| l.get(&**name)) {
                    return self.infer(init, visiting, None);
                }
                match self.top.get(&**name) {
                    Some(init) if !visiting.contains(&**name) => {
                        visiting.insert(name);
                        let t = self.infer(init, visiting, None);
                        visiting.remove(&**name);
                        t
                    }
                    _ => Ty::Unknown,
                }
            }
            ExprKind::Call(callee, _) => {
                let ExprKind::Ident(name) = &callee.kind else {
                    return Ty::Unknown;
                };
                if let Some(f) = self.functions.get(&**name) {
                    if visiting.contains(&**name) {
                        return Ty::Unknown;
                    }
                    visiting.insert(name);
                    let t = self.return_type(f, visiting);
                    visiting.remove(&**name);
                    return t;
                }
                if self.top.contains_key(&**name) {
                    return Ty::Unknown;
                }
                match Primitive::from_name(name) {
                    Some(Primitive::Flip) => Ty::Bool,
                    Some(Primitive::Gaussian) => Ty::Num,
                    Some(Primitive::Mem) => Ty::Func,
                    _ => Ty::Unknown,
                }
            }
        }
    }

    fn return_type(&self, f: &'a FunctionLit, visiting: &mut HashSet<&'a str>) -> Ty {
        let mut locals = HashMap::new();
        collect_locals(&f.body, &mut locals);
        let mut returns = Vec::new();
        collect_returns(&f.body, &mut returns);
        let mut ty = None;
        for r in returns {
            let t = self.infer(r, visiting, Some(&locals));
            match ty {
                None => ty = Some(t),
                Some(prev) if prev == t => {}
                Some(_) => return Ty::Unknown,
            }
        }
        ty.unwrap_or(Ty::Unknown)
    }
}

fn literal_number(e: &Expr) -> Option<f64> {
    match &e.kind {
        ExprKind::Number(n) => Some(*n),
        ExprKind::Unary(UnaryOp::Neg, inner) => literal_number(inner).map(|n| -n),
        _ => None,
    }
}

fn collect_list_bindings(stmts: &[Stmt], name: &str, out: &mut Vec<usize>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(n, init) if &**n == name => {
                if let ExprKind::List(items) = &init.kind {
                    out.push(items.len());
                } else {
                    // rebinding to a non-literal makes the length unknown
                    out.push(usize::MAX);
                    out.push(usize::MAX);
                }
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, b) in branches {
                    collect_list_bindings(b, name, out);
                }
                if let Some(b) = otherwise {
                    collect_list_bindings(b, name, out);
                }
            }
            _ => {}
        }
    }
}

fn collect_locals<'a>(stmts: &'a [Stmt], out: &mut HashMap<&'a str, &'a Expr>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(n, init) => {
                out.insert(n, init);
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, b) in branches {
                    collect_locals(b, out);
                }
                if let Some(b) = otherwise {
                    collect_locals(b, out);
                }
            }
            _ => {}
        }
    }
}

fn collect_returns<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Expr>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Return(e) => out.push(e),
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, b) in branches {
                    collect_returns(b, out);
                }
                if let Some(b) = otherwise {
                    collect_returns(b, out);
                }
            }
            _ => {}
        }
    }
}

fn hoisted<'a>(stmts: &'a [Stmt], out: &mut HashSet<&'a str>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(n, _) => {
                out.insert(n);
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, b) in branches {
                    hoisted(b, out);
                }
                if let Some(b) = otherwise {
                    hoisted(b, out);
                }
            }
            _ => {}
        }
    }
}

fn names_in_stmts<'a>(stmts: &'a [Stmt], scopes: &mut Vec<HashSet<&'a str>>, out: &mut Vec<(&'a str, NodeId)>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(_, e) | StmtKind::Return(e) | StmtKind::Condition(e) => {
                names_in_expr(e, scopes, out)
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (c, b) in branches {
                    names_in_expr(c, scopes, out);
                    names_in_stmts(b, scopes, out);
                }
                if let Some(b) = otherwise {
                    names_in_stmts(b, scopes, out);
                }
            }
        }
    }
}

fn names_in_expr<'a>(expr: &'a Expr, scopes: &mut Vec<HashSet<&'a str>>, out: &mut Vec<(&'a str, NodeId)>) {
    match &expr.kind {
        ExprKind::Ident(name) => {
            if Primitive::from_name(name).is_none() && !scopes.iter().any(|s| s.contains(&**name)) {
                out.push((name, expr.id));
            }
        }
        ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::Bool(_) => {}
        ExprKind::List(items) => items.iter().for_each(|e| names_in_expr(e, scopes, out)),
        ExprKind::Record(fields) => fields.iter().for_each(|(_, e)| names_in_expr(e, scopes, out)),
        ExprKind::Unary(_, e) => names_in_expr(e, scopes, out),
        ExprKind::Binary(_, l, r) | ExprKind::Includes(l, r) => {
            names_in_expr(l, scopes, out);
            names_in_expr(r, scopes, out);
        }
        ExprKind::Conditional(c, t, e) => {
            names_in_expr(c, scopes, out);
            names_in_expr(t, scopes, out);
            names_in_expr(e, scopes, out);
        }
        ExprKind::Call(callee, args) => {
            names_in_expr(callee, scopes, out);
            args.iter().for_each(|e| names_in_expr(e, scopes, out));
        }
        ExprKind::Function(f) => {
            let mut scope: HashSet<&str> = f.params.iter().map(|p| &**p).collect();
            hoisted(&f.body, &mut scope);
            scopes.push(scope);
            names_in_stmts(&f.body, scopes, out);
            scopes.pop();
        }
    }
}
