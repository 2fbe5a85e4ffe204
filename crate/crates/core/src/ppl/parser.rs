//! Recursive-descent parser for MedPPL source.

use std::collections::HashSet;
use std::sync::Arc;

use super::ast::*;
use super::error::{ParseError, ParseErrorKind};
use super::lexer::{line_col, tokenize, Tok, Token};
use super::program::Program;

/// Top-level calls that configure inference in synthesized source. They are
/// accepted and dropped; sample counts come from the caller.
const INFERENCE_DIRECTIVES: &[&str] = &["Infer", "viz"];

pub fn parse(source: &str) -> Result<Program, ParseError> {
    let lexed = tokenize(source)?;
    let mut p = Parser::new(source, lexed.tokens);
    let wrapped = p.at_model_wrapper();
    let (body, queries, return_span) = if wrapped {
        p.bump(); // var
        p.bump(); // model
        p.bump(); // =
        p.bump(); // function
        p.expect(Tok::LParen, "`(`")?;
        p.expect(Tok::RParen, "`)` (the model function takes no parameters)")?;
        p.expect(Tok::LBrace, "`{`")?;
        let parsed = p.model_body(&Tok::RBrace)?;
        p.expect(Tok::RBrace, "`}` closing the model function")?;
        p.eat(&Tok::Semi);
        p.directives()?;
        parsed
    } else {
        let parsed = p.model_body(&Tok::Eof)?;
        p.expect(Tok::Eof, "end of input")?;
        parsed
    };
    let program = Program::from_parts(
        source.to_string(),
        wrapped,
        body,
        queries,
        return_span,
        p.spans,
        lexed.comments,
    );
    resolve_names(&program)?;
    Ok(program)
}

/// Parses a standalone expression, as used for condition edits and
/// translated condition statements. Names are not resolved.
pub fn parse_expression(source: &str) -> Result<Expr, ParseError> {
    let lexed = tokenize(source)?;
    let mut p = Parser::new(source, lexed.tokens);
    let expr = p.expr()?;
    p.eat(&Tok::Semi);
    p.expect(Tok::Eof, "end of expression")?;
    Ok(expr)
}

struct Parser<'s> {
    source: &'s str,
    tokens: Vec<Token>,
    pos: usize,
    spans: Vec<Span>,
    prev_end: usize,
}

impl<'s> Parser<'s> {
    fn new(source: &'s str, tokens: Vec<Token>) -> Self {
        Self {
            source,
            tokens,
            pos: 0,
            spans: Vec::new(),
            prev_end: 0,
        }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn start(&self) -> usize {
        self.tokens[self.pos].span.start
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        self.prev_end = tok.span.end;
        tok
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.syntax(expected))
        }
    }

    fn error_at(&self, offset: usize, kind: ParseErrorKind, message: String) -> ParseError {
        let (line, column) = line_col(self.source, offset);
        ParseError {
            kind,
            message,
            line,
            column,
            span: self.tokens[self.pos].span,
        }
    }

    fn syntax(&self, expected: &str) -> ParseError {
        let found = self.peek().describe();
        self.error_at(
            self.start(),
            ParseErrorKind::Syntax {
                expected: expected.to_string(),
            },
            format!("expected {expected}, found {found}"),
        )
    }

    fn unsupported(&self, construct: &str) -> ParseError {
        self.error_at(
            self.start(),
            ParseErrorKind::UnsupportedConstruct {
                construct: construct.to_string(),
            },
            format!("{construct} is not part of MedPPL"),
        )
    }

    fn node(&mut self, start: usize) -> NodeId {
        let id = self.spans.len() as NodeId;
        self.spans.push(Span::new(start, self.prev_end.max(start)));
        id
    }

    fn at_model_wrapper(&self) -> bool {
        matches!(self.peek_at(0), Tok::Var)
            && matches!(self.peek_at(1), Tok::Ident(name) if name == "model")
            && matches!(self.peek_at(2), Tok::Assign)
            && matches!(self.peek_at(3), Tok::Function)
    }

    fn model_body(&mut self, terminator: &Tok) -> Result<ModelBody, ParseError> {
        let mut body = Vec::new();
        loop {
            while self.eat(&Tok::Semi) {}
            let start = self.start();
            match self.peek().clone() {
                Tok::Var => {
                    let stmt = self.var_stmt()?;
                    body.push(stmt);
                }
                Tok::Ident(name) if name == "condition" && *self.peek_at(1) == Tok::LParen => {
                    self.bump();
                    self.bump();
                    let cond = self.expr()?;
                    if *self.peek() == Tok::Comma {
                        return Err(self.syntax("`)` (condition takes one argument)"));
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    self.eat(&Tok::Semi);
                    let id = self.node(start);
                    body.push(Stmt {
                        id,
                        kind: StmtKind::Condition(cond),
                    });
                }
                Tok::Return => {
                    self.bump();
                    if *self.peek() != Tok::LBrace {
                        return Err(self.syntax("a record of queries after `return`"));
                    }
                    let record = self.expr()?;
                    self.eat(&Tok::Semi);
                    let span = Span::new(start, self.prev_end);
                    let ExprKind::Record(fields) = record.kind else {
                        unreachable!("checked for `{{`")
                    };
                    if fields.is_empty() {
                        return Err(self.error_at(
                            start,
                            ParseErrorKind::Syntax {
                                expected: "at least one query".into(),
                            },
                            "the returned query record is empty".into(),
                        ));
                    }
                    while self.eat(&Tok::Semi) {}
                    if self.peek() != terminator {
                        return Err(self.syntax("end of model after the returned query record"));
                    }
                    return Ok((body, fields, span));
                }
                Tok::If => return Err(self.unsupported("`if` at the top level of the model")),
                tok if tok == *terminator => {
                    return Err(self.syntax("`return { ... }` ending the model"));
                }
                Tok::Eof => return Err(self.syntax("`return { ... }` ending the model")),
                _ => return Err(self.unsupported("expression statement")),
            }
        }
    }

    fn var_stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.start();
        self.expect(Tok::Var, "`var`")?;
        let name = match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                name
            }
            _ => return Err(self.syntax("variable name")),
        };
        self.expect(Tok::Assign, "`=`")?;
        let init = self.expr()?;
        if *self.peek() == Tok::Assign {
            return Err(self.unsupported("chained assignment"));
        }
        self.eat(&Tok::Semi);
        let id = self.node(start);
        Ok(Stmt {
            id,
            kind: StmtKind::Var(Arc::from(name), init),
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.eat(&Tok::LBrace) {
            let mut stmts = Vec::new();
            loop {
                while self.eat(&Tok::Semi) {}
                if self.eat(&Tok::RBrace) {
                    return Ok(stmts);
                }
                stmts.push(self.function_stmt()?);
            }
        } else {
            Ok(vec![self.function_stmt()?])
        }
    }

    fn function_stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.start();
        match self.peek().clone() {
            Tok::Var => self.var_stmt(),
            Tok::Return => {
                self.bump();
                let value = self.expr()?;
                self.eat(&Tok::Semi);
                let id = self.node(start);
                Ok(Stmt {
                    id,
                    kind: StmtKind::Return(value),
                })
            }
            Tok::If => {
                let mut branches = Vec::new();
                let mut otherwise = None;
                loop {
                    self.expect(Tok::If, "`if`")?;
                    self.expect(Tok::LParen, "`(`")?;
                    let cond = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    let block = self.block()?;
                    branches.push((cond, block));
                    if !self.eat(&Tok::Else) {
                        break;
                    }
                    if *self.peek() == Tok::If {
                        continue;
                    }
                    otherwise = Some(self.block()?);
                    break;
                }
                let id = self.node(start);
                Ok(Stmt {
                    id,
                    kind: StmtKind::If {
                        branches,
                        otherwise,
                    },
                })
            }
            Tok::Ident(name) if name == "condition" => {
                Err(self.unsupported("`condition` inside a function"))
            }
            Tok::Eof => Err(self.syntax("`}`")),
            _ => Err(self.unsupported("expression statement")),
        }
    }

    /// Skips `Infer(...)`, `var x = Infer(...)` and `viz(...)` lines after
    /// the model function.
    fn directives(&mut self) -> Result<(), ParseError> {
        loop {
            while self.eat(&Tok::Semi) {}
            match self.peek().clone() {
                Tok::Eof => return Ok(()),
                Tok::Var => {
                    if !matches!(self.peek_at(1), Tok::Ident(_))
                        || *self.peek_at(2) != Tok::Assign
                        || !matches!(self.peek_at(3), Tok::Ident(name) if name == "Infer")
                    {
                        return Err(self.unsupported("top-level statement outside the model"));
                    }
                    self.bump();
                    self.bump();
                    self.bump();
                    self.bump();
                    self.skip_call_args()?;
                }
                Tok::Ident(name) if INFERENCE_DIRECTIVES.contains(&name.as_str()) => {
                    self.bump();
                    while self.eat(&Tok::Dot) {
                        match self.peek() {
                            Tok::Ident(_) => {
                                self.bump();
                            }
                            _ => return Err(self.syntax("method name")),
                        }
                    }
                    self.skip_call_args()?;
                }
                _ => return Err(self.unsupported("top-level statement outside the model")),
            }
            self.eat(&Tok::Semi);
        }
    }

    fn skip_call_args(&mut self) -> Result<(), ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut depth = 1usize;
        while depth > 0 {
            match self.peek() {
                Tok::Eof => return Err(self.syntax("`)`")),
                Tok::LParen => depth += 1,
                Tok::RParen => depth -= 1,
                _ => {}
            }
            self.bump();
        }
        Ok(())
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        let start = self.start();
        let cond = self.binary(1)?;
        if self.eat(&Tok::Question) {
            let then = self.expr()?;
            self.expect(Tok::Colon, "`:` in conditional expression")?;
            let otherwise = self.expr()?;
            let id = self.node(start);
            return Ok(Expr {
                id,
                kind: ExprKind::Conditional(Box::new(cond), Box::new(then), Box::new(otherwise)),
            });
        }
        Ok(cond)
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        Some(match self.peek() {
            Tok::OrOr => BinaryOp::Or,
            Tok::AndAnd => BinaryOp::And,
            Tok::EqEq => BinaryOp::Eq,
            Tok::NotEq => BinaryOp::NotEq,
            Tok::Lt => BinaryOp::Lt,
            Tok::LtEq => BinaryOp::LtEq,
            Tok::Gt => BinaryOp::Gt,
            Tok::GtEq => BinaryOp::GtEq,
            Tok::Plus => BinaryOp::Add,
            Tok::Minus => BinaryOp::Sub,
            Tok::Star => BinaryOp::Mul,
            Tok::Slash => BinaryOp::Div,
            Tok::Percent => BinaryOp::Rem,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let start = self.start();
        let mut left = self.unary()?;
        while let Some(op) = self.binary_op() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let right = self.binary(prec + 1)?;
            let id = self.node(start);
            left = Expr {
                id,
                kind: ExprKind::Binary(op, Box::new(left), Box::new(right)),
            };
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let start = self.start();
        let op = match self.peek() {
            Tok::Bang => UnaryOp::Not,
            Tok::Minus => UnaryOp::Neg,
            Tok::Plus => return Err(self.unsupported("unary `+`")),
            _ => return self.postfix(),
        };
        self.bump();
        let operand = self.unary()?;
        let id = self.node(start);
        Ok(Expr {
            id,
            kind: ExprKind::Unary(op, Box::new(operand)),
        })
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let start = self.start();
        let mut expr = self.primary()?;
        loop {
            match self.peek() {
                Tok::LParen => {
                    self.bump();
                    let args = self.comma_list(Tok::RParen)?;
                    let id = self.node(start);
                    expr = Expr {
                        id,
                        kind: ExprKind::Call(Box::new(expr), args),
                    };
                }
                Tok::Dot => {
                    self.bump();
                    let method = match self.peek().clone() {
                        Tok::Ident(name) => name,
                        _ => return Err(self.syntax("property name")),
                    };
                    if method != "includes" {
                        return Err(self.unsupported(&format!("property access `.{method}`")));
                    }
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    let item = self.expr()?;
                    self.expect(Tok::RParen, "`)` (includes takes one argument)")?;
                    let id = self.node(start);
                    expr = Expr {
                        id,
                        kind: ExprKind::Includes(Box::new(expr), Box::new(item)),
                    };
                }
                Tok::LBracket => return Err(self.unsupported("indexing with `[...]`")),
                Tok::Assign => return Err(self.unsupported("assignment")),
                _ => return Ok(expr),
            }
        }
    }

    fn comma_list(&mut self, close: Tok) -> Result<Vec<Expr>, ParseError> {
        let mut items = Vec::new();
        loop {
            if self.eat(&close) {
                return Ok(items);
            }
            items.push(self.expr()?);
            if !self.eat(&Tok::Comma) {
                let expected = format!("`,` or `{}`", close.text());
                self.expect(close, &expected)?;
                return Ok(items);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.start();
        let kind = match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                ExprKind::Number(n)
            }
            Tok::Str(s) => {
                self.bump();
                ExprKind::Str(Arc::from(s))
            }
            Tok::True => {
                self.bump();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.bump();
                ExprKind::Bool(false)
            }
            Tok::Ident(name) => {
                self.bump();
                ExprKind::Ident(Arc::from(name))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(inner);
            }
            Tok::LBracket => {
                self.bump();
                ExprKind::List(self.comma_list(Tok::RBracket)?)
            }
            Tok::LBrace => {
                self.bump();
                let mut fields: Vec<(Ident, Expr)> = Vec::new();
                loop {
                    if self.eat(&Tok::RBrace) {
                        break;
                    }
                    let key = match self.peek().clone() {
                        Tok::Ident(k) | Tok::Str(k) => k,
                        _ => return Err(self.syntax("record key")),
                    };
                    if fields.iter().any(|(k, _)| **k == *key) {
                        return Err(self.syntax(&format!("a key other than duplicate `{key}`")));
                    }
                    self.bump();
                    self.expect(Tok::Colon, "`:` after record key")?;
                    let value = self.expr()?;
                    fields.push((Arc::from(key), value));
                    if !self.eat(&Tok::Comma) {
                        self.expect(Tok::RBrace, "`,` or `}`")?;
                        break;
                    }
                }
                ExprKind::Record(fields)
            }
            Tok::Function => {
                self.bump();
                if matches!(self.peek(), Tok::Ident(_)) {
                    return Err(self.unsupported("named function expression"));
                }
                self.expect(Tok::LParen, "`(`")?;
                let mut params = Vec::new();
                loop {
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    match self.peek().clone() {
                        Tok::Ident(p) => {
                            self.bump();
                            params.push(Arc::from(p));
                        }
                        _ => return Err(self.syntax("parameter name")),
                    }
                    if !self.eat(&Tok::Comma) {
                        self.expect(Tok::RParen, "`,` or `)`")?;
                        break;
                    }
                }
                if *self.peek() != Tok::LBrace {
                    return Err(self.syntax("`{` starting the function body"));
                }
                let body = self.block()?;
                ExprKind::Function(Box::new(FunctionLit { params, body }))
            }
            _ => return Err(self.syntax("an expression")),
        };
        let id = self.node(start);
        Ok(Expr { id, kind })
    }
}

type ModelBody = (Vec<Stmt>, Vec<(Ident, Expr)>, Span);

fn hoisted_vars<'a>(stmts: &'a [Stmt], out: &mut HashSet<&'a str>) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(name, _) => {
                out.insert(name);
            }
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (_, block) in branches {
                    hoisted_vars(block, out);
                }
                if let Some(block) = otherwise {
                    hoisted_vars(block, out);
                }
            }
            _ => {}
        }
    }
}

struct Resolver<'a> {
    program: &'a Program,
    scopes: Vec<HashSet<&'a str>>,
}

impl<'a> Resolver<'a> {
    fn known(&self, name: &str) -> bool {
        Primitive::from_name(name).is_some() || self.scopes.iter().any(|s| s.contains(name))
    }

    fn expr(&mut self, expr: &'a Expr) -> Result<(), ParseError> {
        match &expr.kind {
            ExprKind::Ident(name) => {
                if !self.known(name) {
                    let span = self.program.span(expr.id);
                    let (line, column) = line_col(self.program.source(), span.start);
                    return Err(ParseError {
                        kind: ParseErrorKind::UnknownIdentifier {
                            name: name.to_string(),
                        },
                        message: format!("`{name}` is not defined"),
                        line,
                        column,
                        span,
                    });
                }
                Ok(())
            }
            ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::Bool(_) => Ok(()),
            ExprKind::List(items) => items.iter().try_for_each(|e| self.expr(e)),
            ExprKind::Record(fields) => fields.iter().try_for_each(|(_, e)| self.expr(e)),
            ExprKind::Unary(_, e) => self.expr(e),
            ExprKind::Binary(_, l, r) | ExprKind::Includes(l, r) => {
                self.expr(l)?;
                self.expr(r)
            }
            ExprKind::Conditional(c, t, e) => {
                self.expr(c)?;
                self.expr(t)?;
                self.expr(e)
            }
            ExprKind::Call(callee, args) => {
                self.expr(callee)?;
                args.iter().try_for_each(|e| self.expr(e))
            }
            ExprKind::Function(func) => {
                let mut scope: HashSet<&str> = func.params.iter().map(|p| &**p).collect();
                hoisted_vars(&func.body, &mut scope);
                self.scopes.push(scope);
                let result = self.stmts(&func.body);
                self.scopes.pop();
                result
            }
        }
    }

    fn stmts(&mut self, stmts: &'a [Stmt]) -> Result<(), ParseError> {
        for stmt in stmts {
            match &stmt.kind {
                StmtKind::Var(_, e) | StmtKind::Return(e) | StmtKind::Condition(e) => {
                    self.expr(e)?
                }
                StmtKind::If {
                    branches,
                    otherwise,
                } => {
                    for (cond, block) in branches {
                        self.expr(cond)?;
                        self.stmts(block)?;
                    }
                    if let Some(block) = otherwise {
                        self.stmts(block)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn resolve_names(program: &Program) -> Result<(), ParseError> {
    let mut top = HashSet::new();
    hoisted_vars(program.body(), &mut top);
    let mut resolver = Resolver {
        program,
        scopes: vec![top],
    };
    resolver.stmts(program.body())?;
    for (_, e) in program.queries() {
        resolver.expr(e)?;
    }
    Ok(())
}
