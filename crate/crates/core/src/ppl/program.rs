use std::collections::{BTreeSet, HashMap};

use super::ast::*;

/// A parsed MedPPL model.
///
/// The model body is kept as the ordered statement list it was written as,
/// because execution is top-to-bottom; `definitions()` and `conditions()`
/// are views over it. The source text is retained so point edits can be
/// applied to it and re-parsed.
#[derive(Debug, Clone)]
pub struct Program {
    source: String,
    wrapped: bool,
    body: Vec<Stmt>,
    queries: Vec<(Ident, Expr)>,
    return_span: Span,
    spans: Vec<Span>,
    comments: Vec<Span>,
}

/// Structural equality: source text, spans and comments are ignored.
impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.wrapped == other.wrapped && self.body == other.body && self.queries == other.queries
    }
}

/// A `var name = function(...) {...}` or `var name = mem(function ...)`
/// binding in the model body.
#[derive(Debug, Clone, Copy)]
pub struct NamedFunction<'a> {
    pub name: &'a str,
    pub params: &'a [Ident],
    pub body: &'a [Stmt],
    pub memoized: bool,
}

impl Program {
    pub(crate) fn from_parts(
        source: String,
        wrapped: bool,
        body: Vec<Stmt>,
        queries: Vec<(Ident, Expr)>,
        return_span: Span,
        spans: Vec<Span>,
        comments: Vec<Span>,
    ) -> Self {
        Self {
            source,
            wrapped,
            body,
            queries,
            return_span,
            spans,
            comments,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Whether the source used the `var model = function() {...}` wrapper.
    pub fn is_wrapped(&self) -> bool {
        self.wrapped
    }

    pub fn body(&self) -> &[Stmt] {
        &self.body
    }

    pub fn queries(&self) -> &[(Ident, Expr)] {
        &self.queries
    }

    pub fn query_names(&self) -> impl Iterator<Item = &str> {
        self.queries.iter().map(|(name, _)| &**name)
    }

    pub fn span(&self, id: NodeId) -> Span {
        self.spans[id as usize]
    }

    pub fn span_index(&self) -> &[Span] {
        &self.spans
    }

    pub fn comments(&self) -> &[Span] {
        &self.comments
    }

    pub(crate) fn return_span(&self) -> Span {
        self.return_span
    }

    pub fn definitions(&self) -> Vec<NamedFunction<'_>> {
        self.body
            .iter()
            .filter_map(|stmt| {
                let StmtKind::Var(name, init) = &stmt.kind else {
                    return None;
                };
                let (func, memoized) = match &init.kind {
                    ExprKind::Function(f) => (f, false),
                    ExprKind::Call(callee, args)
                        if matches!(&callee.kind, ExprKind::Ident(n) if &**n == "mem")
                            && args.len() == 1 =>
                    {
                        match &args[0].kind {
                            ExprKind::Function(f) => (f, true),
                            _ => return None,
                        }
                    }
                    _ => return None,
                };
                Some(NamedFunction {
                    name,
                    params: &func.params,
                    body: &func.body,
                    memoized,
                })
            })
            .collect()
    }

    pub fn conditions(&self) -> Vec<&Expr> {
        self.condition_statements().map(|(_, e)| e).collect()
    }

    pub(crate) fn condition_statements(&self) -> impl Iterator<Item = (&Stmt, &Expr)> {
        self.body.iter().filter_map(|stmt| match &stmt.kind {
            StmtKind::Condition(e) => Some((stmt, e)),
            _ => None,
        })
    }

    /// Source text of the expression inside the `index`-th condition.
    pub fn condition_text(&self, index: usize) -> Option<&str> {
        let expr = *self.conditions().get(index)?;
        let span = self.span(expr.id);
        Some(&self.source[span.start..span.end])
    }

    /// Every expression in the program, in pre-order.
    pub fn walk_exprs<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        walk_stmts(&self.body, f);
        for (_, e) in &self.queries {
            e.walk(f);
        }
    }

    pub fn uses_gaussian(&self) -> bool {
        let mut found = false;
        self.walk_exprs(&mut |e| {
            if let ExprKind::Ident(name) = &e.kind {
                if &**name == "gaussian" {
                    found = true;
                }
            }
        });
        found
    }

    /// Numeric literals with their source spans, in source order.
    pub fn numeric_literals(&self) -> Vec<(Span, f64)> {
        let mut out = Vec::new();
        self.walk_exprs(&mut |e| {
            if let ExprKind::Number(n) = e.kind {
                out.push((self.span(e.id), n));
            }
        });
        out.sort_by_key(|(span, _)| span.start);
        out
    }

    /// String values a `categorical` call in this program can return, found
    /// statically from list literals passed as `vs`, directly or through a
    /// variable bound to a list literal. Used to fix the category vocabulary
    /// of a model independently of which values a sample run happened to hit.
    pub fn declared_categories(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut bindings: HashMap<&str, &Expr> = HashMap::new();
        collect_list_bindings(&self.body, &mut bindings);
        self.walk_exprs(&mut |e| {
            let ExprKind::Call(callee, args) = &e.kind else {
                return;
            };
            if !matches!(&callee.kind, ExprKind::Ident(n) if &**n == "categorical") {
                return;
            }
            let Some(ExprKind::Record(fields)) = args.first().map(|a| &a.kind) else {
                return;
            };
            let Some((_, vs)) = fields.iter().find(|(k, _)| &**k == "vs") else {
                return;
            };
            let list = match &vs.kind {
                ExprKind::Ident(name) => bindings.get(&**name).copied(),
                ExprKind::List(_) => Some(vs),
                _ => None,
            };
            if let Some(Expr {
                kind: ExprKind::List(items),
                ..
            }) = list
            {
                for item in items {
                    if let ExprKind::Str(s) = &item.kind {
                        out.insert(s.to_string());
                    }
                }
            }
        });
        out
    }

    /// Canonical source text for this program.
    pub fn render(&self) -> String {
        super::render::render_program(self)
    }
}

fn collect_list_bindings<'a>(stmts: &'a [Stmt], out: &mut HashMap<&'a str, &'a Expr>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(name, init) => {
                if matches!(init.kind, ExprKind::List(_)) {
                    out.insert(name, init);
                }
                init.walk(&mut |e| {
                    if let ExprKind::Function(f) = &e.kind {
                        collect_list_bindings_shallow(&f.body, out);
                    }
                });
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, block) in branches {
                    collect_list_bindings(block, out);
                }
                if let Some(block) = otherwise {
                    collect_list_bindings(block, out);
                }
            }
            _ => {}
        }
    }
}

fn collect_list_bindings_shallow<'a>(stmts: &'a [Stmt], out: &mut HashMap<&'a str, &'a Expr>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(name, init) if matches!(init.kind, ExprKind::List(_)) => {
                out.insert(name, init);
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, block) in branches {
                    collect_list_bindings_shallow(block, out);
                }
                if let Some(block) = otherwise {
                    collect_list_bindings_shallow(block, out);
                }
            }
            _ => {}
        }
    }
}
