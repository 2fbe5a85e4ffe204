//! Tree-walking evaluator shared by sampling and exact enumeration.
//!
//! Random primitives delegate to a [`Chooser`]: a seeded sampler draws
//! values, the enumerator replays and extends a trail of branch choices.

use std::collections::HashMap;
use std::fmt::Write;
use std::rc::Rc;
use std::sync::Arc;

use indexmap::IndexMap;

use super::ast::*;
use super::error::RuntimeError;
use super::program::Program;
use super::value::Value;

/// Why an execution stopped before producing a sample.
#[derive(Debug)]
pub(crate) enum Halt {
    Reject,
    Error(RuntimeError),
    Continuous,
}

impl From<RuntimeError> for Halt {
    fn from(e: RuntimeError) -> Self {
        Halt::Error(e)
    }
}

type Eval<T> = Result<T, Halt>;

fn fail<T>(message: impl Into<String>) -> Eval<T> {
    Err(Halt::Error(RuntimeError::new(message)))
}

/// Source of random choices. Arguments are validated before the call.
pub(crate) trait Chooser {
    fn flip(&mut self, p: f64) -> Eval<bool>;
    /// `weights` are finite, non-negative and have a positive sum.
    fn categorical(&mut self, weights: &[f64]) -> Eval<usize>;
    fn gaussian(&mut self, mu: f64, sigma: f64) -> Eval<f64>;
}

type FrameId = u32;

#[derive(Clone)]
enum Val<'p> {
    Bool(bool),
    Num(f64),
    Str(Arc<str>),
    List(Rc<Vec<Val<'p>>>),
    Record(Rc<Vec<(&'p str, Val<'p>)>>),
    Closure(&'p FunctionLit, FrameId),
    Memo(u32),
    Prim(Primitive),
}

impl Val<'_> {
    fn type_name(&self) -> &'static str {
        match self {
            Val::Bool(_) => "boolean",
            Val::Num(_) => "number",
            Val::Str(_) => "string",
            Val::List(_) => "list",
            Val::Record(_) => "record",
            Val::Closure(..) | Val::Memo(_) | Val::Prim(_) => "function",
        }
    }

    fn truthy(&self) -> bool {
        match self {
            Val::Bool(b) => *b,
            Val::Num(n) => *n != 0.0,
            Val::Str(s) => !s.is_empty(),
            _ => true,
        }
    }

    fn to_value(&self) -> Result<Value, RuntimeError> {
        Ok(match self {
            Val::Bool(b) => Value::Bool(*b),
            Val::Num(n) => Value::Num(*n),
            Val::Str(s) => Value::Str(s.to_string()),
            Val::List(items) => Value::List(
                items
                    .iter()
                    .map(Val::to_value)
                    .collect::<Result<_, _>>()?,
            ),
            Val::Record(fields) => Value::Record(
                fields
                    .iter()
                    .map(|(k, v)| Ok((k.to_string(), v.to_value()?)))
                    .collect::<Result<_, RuntimeError>>()?,
            ),
            Val::Closure(..) | Val::Memo(_) | Val::Prim(_) => {
                return Err(RuntimeError::new("a query returned a function"))
            }
        })
    }

    fn write_key(&self, out: &mut String) {
        match self {
            Val::Bool(b) => out.push(if *b { 'T' } else { 'F' }),
            Val::Num(n) => {
                let _ = write!(out, "n{:x}", n.to_bits());
            }
            Val::Str(s) => {
                let _ = write!(out, "s{}:{}", s.len(), s);
            }
            Val::List(items) => {
                out.push('[');
                for item in items.iter() {
                    item.write_key(out);
                    out.push(',');
                }
                out.push(']');
            }
            Val::Record(fields) => {
                out.push('{');
                for (k, v) in fields.iter() {
                    let _ = write!(out, "{}:{}=", k.len(), k);
                    v.write_key(out);
                    out.push(',');
                }
                out.push('}');
            }
            Val::Closure(f, frame) => {
                let _ = write!(out, "c{:p}/{frame}", *f as *const FunctionLit);
            }
            Val::Memo(id) => {
                let _ = write!(out, "m{id}");
            }
            Val::Prim(p) => {
                let _ = write!(out, "p{}", p.name());
            }
        }
    }
}

fn vals_equal(a: &Val<'_>, b: &Val<'_>) -> bool {
    match (a, b) {
        (Val::Bool(x), Val::Bool(y)) => x == y,
        (Val::Num(x), Val::Num(y)) => x == y,
        (Val::Str(x), Val::Str(y)) => x == y,
        (Val::List(x), Val::List(y)) => {
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(a, b)| vals_equal(a, b))
        }
        (Val::Record(x), Val::Record(y)) => {
            x.len() == y.len()
                && x
                    .iter()
                    .zip(y.iter())
                    .all(|((ka, va), (kb, vb))| ka == kb && vals_equal(va, vb))
        }
        (Val::Closure(f, a), Val::Closure(g, b)) => std::ptr::eq(*f, *g) && a == b,
        (Val::Memo(a), Val::Memo(b)) => a == b,
        (Val::Prim(a), Val::Prim(b)) => a == b,
        _ => false,
    }
}

struct Frame<'p> {
    vars: Vec<(&'p str, Val<'p>)>,
    parent: Option<FrameId>,
}

struct MemoTable<'p> {
    func: Val<'p>,
    cache: HashMap<String, Val<'p>>,
}

/// Result of one complete execution that was not halted.
pub(crate) type Sample = IndexMap<String, Value>;

/// Reusable execution state for one program. `run` resets it, so a single
/// machine can execute many proposals without reallocating.
pub(crate) struct Machine<'p> {
    program: &'p Program,
    frames: Vec<Frame<'p>>,
    memos: Vec<MemoTable<'p>>,
    choices: u64,
    depth: usize,
}

const MAX_CALL_DEPTH: usize = 512;

impl<'p> Machine<'p> {
    pub(crate) fn new(program: &'p Program) -> Self {
        Self {
            program,
            frames: Vec::new(),
            memos: Vec::new(),
            choices: 0,
            depth: 0,
        }
    }

    /// Random primitive invocations during the last run.
    pub(crate) fn choices(&self) -> u64 {
        self.choices
    }

    pub(crate) fn run<C: Chooser>(&mut self, chooser: &mut C) -> Eval<Sample> {
        self.frames.clear();
        self.memos.clear();
        self.choices = 0;
        self.depth = 0;
        self.frames.push(Frame {
            vars: Vec::new(),
            parent: None,
        });
        let program = self.program;
        for stmt in program.body() {
            match &stmt.kind {
                StmtKind::Var(name, init) => {
                    let v = self.eval(init, 0, chooser)?;
                    self.bind(0, name, v);
                }
                StmtKind::Condition(cond) => match self.eval(cond, 0, chooser)? {
                    Val::Bool(true) => {}
                    Val::Bool(false) => return Err(Halt::Reject),
                    other => {
                        return fail(format!(
                            "condition expects a boolean, got a {}",
                            other.type_name()
                        ))
                    }
                },
                StmtKind::Return(_) | StmtKind::If { .. } => {
                    return fail("unexpected statement at model top level")
                }
            }
        }
        let mut sample = IndexMap::with_capacity(program.queries().len());
        for (name, expr) in program.queries() {
            let v = self.eval(expr, 0, chooser)?;
            sample.insert(name.to_string(), v.to_value()?);
        }
        Ok(sample)
    }

    fn bind(&mut self, frame: FrameId, name: &'p str, value: Val<'p>) {
        let vars = &mut self.frames[frame as usize].vars;
        if let Some(slot) = vars.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = value;
        } else {
            vars.push((name, value));
        }
    }

    fn lookup(&self, mut frame: FrameId, name: &str) -> Eval<Val<'p>> {
        loop {
            let f = &self.frames[frame as usize];
            if let Some((_, v)) = f.vars.iter().rev().find(|(n, _)| *n == name) {
                return Ok(v.clone());
            }
            match f.parent {
                Some(p) => frame = p,
                None => break,
            }
        }
        match Primitive::from_name(name) {
            Some(p) => Ok(Val::Prim(p)),
            None => fail(format!("`{name}` is used before it is defined")),
        }
    }

    fn exec_block<C: Chooser>(
        &mut self,
        stmts: &'p [Stmt],
        frame: FrameId,
        chooser: &mut C,
    ) -> Eval<Option<Val<'p>>> {
        for stmt in stmts {
            match &stmt.kind {
                StmtKind::Var(name, init) => {
                    let v = self.eval(init, frame, chooser)?;
                    self.bind(frame, name, v);
                }
                StmtKind::Return(e) => return Ok(Some(self.eval(e, frame, chooser)?)),
                StmtKind::If {
                    branches,
                    otherwise,
                } => {
                    let mut taken = None;
                    for (cond, block) in branches {
                        if self.eval(cond, frame, chooser)?.truthy() {
                            taken = Some(block);
                            break;
                        }
                    }
                    let block = taken.or(otherwise.as_ref());
                    if let Some(block) = block {
                        if let Some(v) = self.exec_block(block, frame, chooser)? {
                            return Ok(Some(v));
                        }
                    }
                }
                StmtKind::Condition(_) => return fail("`condition` inside a function"),
            }
        }
        Ok(None)
    }

    fn eval<C: Chooser>(&mut self, expr: &'p Expr, frame: FrameId, chooser: &mut C) -> Eval<Val<'p>> {
        match &expr.kind {
            ExprKind::Number(n) => Ok(Val::Num(*n)),
            ExprKind::Str(s) => Ok(Val::Str(s.clone())),
            ExprKind::Bool(b) => Ok(Val::Bool(*b)),
            ExprKind::Ident(name) => self.lookup(frame, name),
            ExprKind::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(self.eval(item, frame, chooser)?);
                }
                Ok(Val::List(Rc::new(out)))
            }
            ExprKind::Record(fields) => {
                let mut out = Vec::with_capacity(fields.len());
                for (k, e) in fields {
                    out.push((&**k, self.eval(e, frame, chooser)?));
                }
                Ok(Val::Record(Rc::new(out)))
            }
            ExprKind::Unary(op, operand) => {
                let v = self.eval(operand, frame, chooser)?;
                match op {
                    UnaryOp::Not => Ok(Val::Bool(!v.truthy())),
                    UnaryOp::Neg => match v {
                        Val::Num(n) => Ok(Val::Num(-n)),
                        other => fail(format!("cannot negate a {}", other.type_name())),
                    },
                }
            }
            ExprKind::Binary(op, l, r) => self.binary(*op, l, r, frame, chooser),
            ExprKind::Conditional(c, t, e) => {
                if self.eval(c, frame, chooser)?.truthy() {
                    self.eval(t, frame, chooser)
                } else {
                    self.eval(e, frame, chooser)
                }
            }
            ExprKind::Includes(list, item) => {
                let list = self.eval(list, frame, chooser)?;
                let item = self.eval(item, frame, chooser)?;
                match list {
                    Val::List(items) => Ok(Val::Bool(items.iter().any(|v| vals_equal(v, &item)))),
                    other => fail(format!("`.includes` needs a list, got a {}", other.type_name())),
                }
            }
            ExprKind::Function(func) => Ok(Val::Closure(func, frame)),
            ExprKind::Call(callee, args) => {
                let f = self.eval(callee, frame, chooser)?;
                let mut argv = Vec::with_capacity(args.len());
                for a in args {
                    argv.push(self.eval(a, frame, chooser)?);
                }
                self.call(f, argv, chooser)
            }
        }
    }

    fn binary<C: Chooser>(
        &mut self,
        op: BinaryOp,
        l: &'p Expr,
        r: &'p Expr,
        frame: FrameId,
        chooser: &mut C,
    ) -> Eval<Val<'p>> {
        let left = self.eval(l, frame, chooser)?;
        match op {
            BinaryOp::And => {
                return if left.truthy() {
                    self.eval(r, frame, chooser)
                } else {
                    Ok(left)
                }
            }
            BinaryOp::Or => {
                return if left.truthy() {
                    Ok(left)
                } else {
                    self.eval(r, frame, chooser)
                }
            }
            _ => {}
        }
        let right = self.eval(r, frame, chooser)?;
        let num = |v: f64| -> Eval<Val<'p>> {
            if v.is_finite() {
                Ok(Val::Num(v))
            } else {
                fail(format!("arithmetic produced a non-finite number ({} {} ...)", op.symbol(), v))
            }
        };
        match (op, &left, &right) {
            (BinaryOp::Eq, a, b) => Ok(Val::Bool(vals_equal(a, b))),
            (BinaryOp::NotEq, a, b) => Ok(Val::Bool(!vals_equal(a, b))),
            (BinaryOp::Lt, Val::Num(a), Val::Num(b)) => Ok(Val::Bool(a < b)),
            (BinaryOp::LtEq, Val::Num(a), Val::Num(b)) => Ok(Val::Bool(a <= b)),
            (BinaryOp::Gt, Val::Num(a), Val::Num(b)) => Ok(Val::Bool(a > b)),
            (BinaryOp::GtEq, Val::Num(a), Val::Num(b)) => Ok(Val::Bool(a >= b)),
            (BinaryOp::Lt, Val::Str(a), Val::Str(b)) => Ok(Val::Bool(a < b)),
            (BinaryOp::LtEq, Val::Str(a), Val::Str(b)) => Ok(Val::Bool(a <= b)),
            (BinaryOp::Gt, Val::Str(a), Val::Str(b)) => Ok(Val::Bool(a > b)),
            (BinaryOp::GtEq, Val::Str(a), Val::Str(b)) => Ok(Val::Bool(a >= b)),
            (BinaryOp::Add, Val::Num(a), Val::Num(b)) => num(a + b),
            (BinaryOp::Sub, Val::Num(a), Val::Num(b)) => num(a - b),
            (BinaryOp::Mul, Val::Num(a), Val::Num(b)) => num(a * b),
            (BinaryOp::Div, Val::Num(_), Val::Num(b)) if *b == 0.0 => fail("division by zero"),
            (BinaryOp::Div, Val::Num(a), Val::Num(b)) => num(a / b),
            (BinaryOp::Rem, Val::Num(_), Val::Num(b)) if *b == 0.0 => fail("remainder by zero"),
            (BinaryOp::Rem, Val::Num(a), Val::Num(b)) => num(a % b),
            (BinaryOp::Add, Val::Str(a), Val::Str(b)) => {
                Ok(Val::Str(Arc::from(format!("{a}{b}"))))
            }
            (op, a, b) => fail(format!(
                "operator `{}` does not apply to {} and {}",
                op.symbol(),
                a.type_name(),
                b.type_name()
            )),
        }
    }

    fn call<C: Chooser>(&mut self, f: Val<'p>, args: Vec<Val<'p>>, chooser: &mut C) -> Eval<Val<'p>> {
        match f {
            Val::Prim(p) => self.primitive(p, args, chooser),
            Val::Closure(func, captured) => {
                if args.len() != func.params.len() {
                    return fail(format!(
                        "function expects {} argument(s), got {}",
                        func.params.len(),
                        args.len()
                    ));
                }
                if self.depth >= MAX_CALL_DEPTH {
                    return fail("maximum call depth exceeded");
                }
                let id = self.frames.len() as FrameId;
                self.frames.push(Frame {
                    vars: func.params.iter().map(|p| &**p).zip(args).collect(),
                    parent: Some(captured),
                });
                self.depth += 1;
                let result = self.exec_block(&func.body, id, chooser);
                self.depth -= 1;
                match result? {
                    Some(v) => Ok(v),
                    None => fail("function finished without returning a value"),
                }
            }
            Val::Memo(id) => {
                let mut key = String::new();
                for a in &args {
                    a.write_key(&mut key);
                    key.push('|');
                }
                if let Some(v) = self.memos[id as usize].cache.get(&key) {
                    return Ok(v.clone());
                }
                let inner = self.memos[id as usize].func.clone();
                let v = self.call(inner, args, chooser)?;
                self.memos[id as usize].cache.insert(key, v.clone());
                Ok(v)
            }
            other => fail(format!("cannot call a {}", other.type_name())),
        }
    }

    fn primitive<C: Chooser>(&mut self, p: Primitive, args: Vec<Val<'p>>, chooser: &mut C) -> Eval<Val<'p>> {
        let arity = match p {
            Primitive::Gaussian => 2,
            _ => 1,
        };
        if args.len() != arity {
            return fail(format!("`{}` expects {arity} argument(s), got {}", p.name(), args.len()));
        }
        match p {
            Primitive::Flip => {
                let prob = match args[0] {
                    Val::Num(x) if (0.0..=1.0).contains(&x) => x,
                    Val::Num(x) => return fail(format!("flip probability {x} is outside [0, 1]")),
                    ref other => {
                        return fail(format!("flip expects a number, got a {}", other.type_name()))
                    }
                };
                self.choices += 1;
                Ok(Val::Bool(chooser.flip(prob)?))
            }
            Primitive::Gaussian => {
                let (Val::Num(mu), Val::Num(sigma)) = (&args[0], &args[1]) else {
                    return fail("gaussian expects two numbers");
                };
                if *sigma <= 0.0 {
                    return fail(format!("gaussian standard deviation {sigma} is not positive"));
                }
                self.choices += 1;
                let x = chooser.gaussian(*mu, *sigma)?;
                if !x.is_finite() {
                    return fail("gaussian draw is not finite");
                }
                Ok(Val::Num(x))
            }
            Primitive::Categorical => {
                let Val::Record(fields) = &args[0] else {
                    return fail("categorical expects a record {ps: [...], vs: [...]}");
                };
                let get = |key: &str| fields.iter().find(|(k, _)| *k == key).map(|(_, v)| v);
                let (Some(Val::List(ps)), Some(Val::List(vs))) = (get("ps"), get("vs")) else {
                    return fail("categorical expects list fields `ps` and `vs`");
                };
                if ps.len() != vs.len() {
                    return fail(format!(
                        "categorical has {} weights but {} values",
                        ps.len(),
                        vs.len()
                    ));
                }
                let mut weights = Vec::with_capacity(ps.len());
                for w in ps.iter() {
                    match w {
                        Val::Num(x) if *x >= 0.0 => weights.push(*x),
                        Val::Num(x) => return fail(format!("categorical weight {x} is negative")),
                        other => {
                            return fail(format!(
                                "categorical weight is a {}, not a number",
                                other.type_name()
                            ))
                        }
                    }
                }
                let total: f64 = weights.iter().sum();
                if !(total > 0.0 && total.is_finite()) {
                    return fail("categorical weights do not have a positive finite sum");
                }
                self.choices += 1;
                let i = chooser.categorical(&weights)?;
                Ok(vs[i].clone())
            }
            Primitive::Mem => {
                let func = args.into_iter().next().expect("arity checked");
                if !matches!(func, Val::Closure(..) | Val::Memo(_)) {
                    return fail(format!("mem expects a function, got a {}", func.type_name()));
                }
                let id = self.memos.len() as u32;
                self.memos.push(MemoTable {
                    func,
                    cache: HashMap::new(),
                });
                Ok(Val::Memo(id))
            }
            Primitive::Condition => fail("`condition` can only be used as a statement"),
        }
    }
}
