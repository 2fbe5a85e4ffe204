//! Syntax tree for MedPPL programs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub type Ident = Arc<str>;

/// Identifies a node within one parsed program. Ids are assigned in parse
/// order, so two parses of structurally identical source agree on them.
pub type NodeId = u32;

/// Half-open byte range into the program source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinaryOp {
    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::NotEq => 3,
            BinaryOp::Lt | BinaryOp::LtEq | BinaryOp::Gt | BinaryOp::GtEq => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => 6,
        }
    }

    pub(crate) fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "||",
            BinaryOp::And => "&&",
            BinaryOp::Eq => "==",
            BinaryOp::NotEq => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
        }
    }

    pub(crate) fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq
                | BinaryOp::NotEq
                | BinaryOp::Lt
                | BinaryOp::LtEq
                | BinaryOp::Gt
                | BinaryOp::GtEq
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub id: NodeId,
    pub kind: ExprKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Str(Arc<str>),
    Bool(bool),
    Ident(Ident),
    List(Vec<Expr>),
    Record(Vec<(Ident, Expr)>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Conditional(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>),
    /// `list.includes(item)`
    Includes(Box<Expr>, Box<Expr>),
    Function(Box<FunctionLit>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionLit {
    pub params: Vec<Ident>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub id: NodeId,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Var(Ident, Expr),
    /// `if / else if / else` chain.
    If {
        branches: Vec<(Expr, Vec<Stmt>)>,
        otherwise: Option<Vec<Stmt>>,
    },
    Return(Expr),
    /// Only legal at the top level of the model body.
    Condition(Expr),
}

impl Expr {
    /// The callee name when this is a call through a plain identifier.
    pub fn callee_name(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Call(callee, _) => match &callee.kind {
                ExprKind::Ident(name) => Some(name),
                _ => None,
            },
            _ => None,
        }
    }

    /// Pre-order traversal over this expression and every nested
    /// expression, including those inside function literal bodies.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::Bool(_) | ExprKind::Ident(_) => {}
            ExprKind::List(items) => items.iter().for_each(|e| e.walk(f)),
            ExprKind::Record(fields) => fields.iter().for_each(|(_, e)| e.walk(f)),
            ExprKind::Unary(_, e) => e.walk(f),
            ExprKind::Binary(_, l, r) | ExprKind::Includes(l, r) => {
                l.walk(f);
                r.walk(f);
            }
            ExprKind::Conditional(c, t, e) => {
                c.walk(f);
                t.walk(f);
                e.walk(f);
            }
            ExprKind::Call(callee, args) => {
                callee.walk(f);
                args.iter().for_each(|e| e.walk(f));
            }
            ExprKind::Function(func) => walk_stmts(&func.body, f),
        }
    }
}

pub(crate) fn walk_stmts<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    for stmt in stmts {
        match &stmt.kind {
            StmtKind::Var(_, e) | StmtKind::Return(e) | StmtKind::Condition(e) => e.walk(f),
            StmtKind::If {
                branches,
                otherwise,
            } => {
                for (cond, block) in branches {
                    cond.walk(f);
                    walk_stmts(block, f);
                }
                if let Some(block) = otherwise {
                    walk_stmts(block, f);
                }
            }
        }
    }
}

/// Names handled by the runtime rather than by user definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Flip,
    Categorical,
    Gaussian,
    Mem,
    Condition,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::Flip,
        Primitive::Categorical,
        Primitive::Gaussian,
        Primitive::Mem,
        Primitive::Condition,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "flip" => Primitive::Flip,
            "categorical" => Primitive::Categorical,
            "gaussian" => Primitive::Gaussian,
            "mem" => Primitive::Mem,
            "condition" => Primitive::Condition,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Flip => "flip",
            Primitive::Categorical => "categorical",
            Primitive::Gaussian => "gaussian",
            Primitive::Mem => "mem",
            Primitive::Condition => "condition",
        }
    }
}
