//! A small arithmetic expression language for drift, diffusion, Lyapunov
//! and comparison functions.
//!
//! Expressions are parsed against a [`Scope`] that declares the time
//! variable, the state coordinates and any named constants; identifiers not
//! declared there are rejected at parse time. Evaluation never returns NaN:
//! out-of-domain arguments and overflow are reported as [`ExprError`]s.
//!
//! ```
//! use residence_core::expr::{Expr, Scope};
//!
//! let scope = Scope::state(1);
//! let e = Expr::parse("x1^2 + 3", &scope).unwrap();
//! assert_eq!(e.eval(0.0, &[2.0]).unwrap(), 7.0);
//! ```

mod diff;
mod lexer;
mod parser;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quad::{self, QuadOptions};

pub use diff::{grad_hess, Derivatives, Step};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: expected one of [{}], found {found}", expected.join(", "))]
    Syntax {
        offset: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), got {got} (byte {offset})")]
    FunctionArity {
        name: &'static str,
        expected: usize,
        got: usize,
        offset: usize,
    },
    #[error("expression uses {expected} state coordinate(s) but {got} were supplied")]
    Arity { expected: usize, got: usize },
    #[error("domain error: {op} undefined at {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("non-finite result from {op}")]
    NonFinite { op: &'static str },
    #[error("integral did not converge (estimate {estimate}, error {error})")]
    Quadrature { estimate: f64, error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Expression tree. `Bound(d)` refers to the integration variable of the
/// `d`-th enclosing `integral(...)`, counted from the outermost.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Time,
    State(usize),
    Const { name: Arc<str>, value: f64 },
    Bound(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
    Integral {
        var: Arc<str>,
        lo: Box<Node>,
        hi: Box<Node>,
        body: Box<Node>,
    },
}

/// Names visible to the parser.
#[derive(Debug, Clone, PartialEq)]
pub struct Scope {
    time: Option<Arc<str>>,
    states: Vec<Arc<str>>,
    constants: BTreeMap<String, f64>,
}

impl Scope {
    /// `t` plus state coordinates `x1..xn`.
    pub fn state(n: usize) -> Self {
        Self {
            time: Some(Arc::from("t")),
            states: (1..=n).map(|i| Arc::from(format!("x{i}").as_str())).collect(),
            constants: BTreeMap::new(),
        }
    }

    /// A single real argument named `var`, no time variable (for μ(s), θ(s)).
    pub fn scalar(var: &str) -> Self {
        Self {
            time: None,
            states: vec![Arc::from(var)],
            constants: BTreeMap::new(),
        }
    }

    /// Only the time variable `t` (for ν(t), γ(t), α(t)).
    pub fn time_only() -> Self {
        Self {
            time: Some(Arc::from("t")),
            states: Vec::new(),
            constants: BTreeMap::new(),
        }
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn with_constants<'a, I>(mut self, consts: I) -> Self
    where
        I: IntoIterator<Item = (&'a String, &'a f64)>,
    {
        for (k, v) in consts {
            self.constants.insert(k.clone(), *v);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    fn time_name(&self) -> Option<&str> {
        self.time.as_deref()
    }

    fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| &**s == name)
    }

    fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }
}

/// A parsed expression. Immutable and `Send + Sync`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    names: Arc<[Arc<str>]>,
    time_name: Option<Arc<str>>,
    arity: usize,
    uses_time: bool,
}

impl Expr {
    pub fn parse(source: &str, scope: &Scope) -> Result<Self, ExprError> {
        let root = parser::Parser::new(source, scope)?.parse_all()?;
        Ok(Self::from_node(root, scope))
    }

    pub fn from_node(root: Node, scope: &Scope) -> Self {
        let mut arity = 0;
        let mut uses_time = false;
        visit(&root, &mut |n| match n {
            Node::State(i) => arity = arity.max(i + 1),
            Node::Time => uses_time = true,
            _ => {}
        });
        Self {
            root,
            names: scope.states.clone().into(),
            time_name: scope.time.clone(),
            arity,
            uses_time,
        }
    }

    /// Constant expression with no variables.
    pub fn constant(value: f64) -> Self {
        Self::from_node(Node::Num(value), &Scope::time_only())
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Number of leading state coordinates referenced.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn uses_time(&self) -> bool {
        self.uses_time
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        if x.len() < self.arity {
            return Err(ExprError::Arity {
                expected: self.arity,
                got: x.len(),
            });
        }
        let mut bound = Vec::new();
        eval_node(&self.root, t, x, &mut bound)
    }

    /// Evaluates a one-argument expression built with [`Scope::scalar`].
    pub fn eval_scalar(&self, s: f64) -> Result<f64, ExprError> {
        self.eval(0.0, &[s])
    }

    /// Evaluates an expression built with [`Scope::time_only`].
    pub fn eval_time(&self, t: f64) -> Result<f64, ExprError> {
        self.eval(t, &[])
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut bound = Vec::new();
        write_node(&self.root, self, &mut bound, f)
    }
}

fn visit(n: &Node, f: &mut impl FnMut(&Node)) {
    f(n);
    match n {
        Node::Neg(a) => visit(a, f),
        Node::Binary(_, a, b) => {
            visit(a, f);
            visit(b, f);
        }
        Node::Call(_, args) => args.iter().for_each(|a| visit(a, f)),
        Node::Integral { lo, hi, body, .. } => {
            visit(lo, f);
            visit(hi, f);
            visit(body, f);
        }
        _ => {}
    }
}

fn write_node(
    n: &Node,
    e: &Expr,
    bound: &mut Vec<Arc<str>>,
    f: &mut fmt::Formatter<'_>,
) -> fmt::Result {
    match n {
        Node::Num(v) if *v < 0.0 => write!(f, "({v})"),
        Node::Num(v) => write!(f, "{v}"),
        Node::Time => write!(f, "{}", e.time_name.as_deref().unwrap_or("t")),
        Node::State(i) => match e.names.get(*i) {
            Some(name) => write!(f, "{name}"),
            None => write!(f, "x{}", i + 1),
        },
        Node::Const { name, .. } => write!(f, "{name}"),
        Node::Bound(d) => write!(f, "{}", bound[*d]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, e, bound, f)?;
            write!(f, ")")
        }
        Node::Binary(op, a, b) => {
            write!(f, "(")?;
            write_node(a, e, bound, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, e, bound, f)?;
            write!(f, ")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    write!(f, ", ")?;
                }
                write_node(a, e, bound, f)?;
            }
            write!(f, ")")
        }
        Node::Integral { var, lo, hi, body } => {
            write!(f, "integral({var}, ")?;
            write_node(lo, e, bound, f)?;
            write!(f, ", ")?;
            write_node(hi, e, bound, f)?;
            write!(f, ", ")?;
            bound.push(var.clone());
            let r = write_node(body, e, bound, f);
            bound.pop();
            r?;
            write!(f, ")")
        }
    }
}

#[inline]
fn finite(v: f64, op: &'static str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite { op })
    }
}

fn power(base: f64, exp: f64) -> Result<f64, ExprError> {
    if exp.fract() == 0.0 && exp.abs() <= 1024.0 {
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::Domain { op: "^", arg: base });
        }
        return finite(base.powi(exp as i32), "^");
    }
    if base < 0.0 {
        return Err(ExprError::Domain { op: "^", arg: base });
    }
    if base == 0.0 && exp < 0.0 {
        return Err(ExprError::Domain { op: "^", arg: base });
    }
    finite(base.powf(exp), "^")
}

fn eval_node(n: &Node, t: f64, x: &[f64], bound: &mut Vec<f64>) -> Result<f64, ExprError> {
    match n {
        Node::Num(v) => Ok(*v),
        Node::Time => Ok(t),
        Node::State(i) => Ok(x[*i]),
        Node::Const { value, .. } => Ok(*value),
        Node::Bound(d) => Ok(bound[*d]),
        Node::Neg(a) => Ok(-eval_node(a, t, x, bound)?),
        Node::Binary(op, a, b) => {
            let l = eval_node(a, t, x, bound)?;
            let r = eval_node(b, t, x, bound)?;
            match op {
                BinOp::Add => finite(l + r, "+"),
                BinOp::Sub => finite(l - r, "-"),
                BinOp::Mul => finite(l * r, "*"),
                BinOp::Div => {
                    if r == 0.0 {
                        Err(ExprError::Domain { op: "/", arg: r })
                    } else {
                        finite(l / r, "/")
                    }
                }
                BinOp::Pow => power(l, r),
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], t, x, bound)?;
            match func {
                Func::Sin => Ok(a.sin()),
                Func::Cos => Ok(a.cos()),
                Func::Exp => finite(a.exp(), "exp"),
                Func::Log => {
                    if a <= 0.0 {
                        Err(ExprError::Domain { op: "log", arg: a })
                    } else {
                        Ok(a.ln())
                    }
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        Err(ExprError::Domain { op: "sqrt", arg: a })
                    } else {
                        Ok(a.sqrt())
                    }
                }
                Func::Abs => Ok(a.abs()),
                Func::Min => Ok(a.min(eval_node(&args[1], t, x, bound)?)),
                Func::Max => Ok(a.max(eval_node(&args[1], t, x, bound)?)),
                Func::Pow => power(a, eval_node(&args[1], t, x, bound)?),
            }
        }
        Node::Integral { lo, hi, body, .. } => {
            let lo = eval_node(lo, t, x, bound)?;
            let hi = eval_node(hi, t, x, bound)?;
            let depth = bound.len();
            bound.push(0.0);
            let opts = QuadOptions {
                abs_tol: 1e-15,
                rel_tol: 1e-13,
                max_intervals: 2000,
            };
            let r = quad::integrate(
                |s| {
                    bound[depth] = s;
                    eval_node(body, t, x, bound)
                },
                lo,
                hi,
                opts,
            );
            bound.truncate(depth);
            let r = r?;
            if !r.converged && r.abs_error > 1e-9 * r.value.abs().max(1.0) {
                return Err(ExprError::Quadrature {
                    estimate: r.value,
                    error: r.abs_error,
                });
            }
            finite(r.value, "integral")
        }
    }
}
