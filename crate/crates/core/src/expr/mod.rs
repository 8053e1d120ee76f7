//! Scalar cost expressions over agent actions.
//!
//! Costs are written in a small infix language (`+ - * / ^`, unary minus,
//! `exp`, `log`) over action variables named `x<coalition>_<agent>`. The
//! tree can be evaluated, differentiated symbolically and queried for the
//! variables it mentions. Dependence is syntactic: `x1_1 - x1_1` still
//! depends on `x1_1`.

mod derive;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use parser::parse;

/// Identifies the scalar action of agent `agent` in coalition `coalition`.
/// Both indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId {
    pub coalition: usize,
    pub agent: usize,
}

impl ActionId {
    pub fn new(coalition: usize, agent: usize) -> Self {
        Self { coalition, agent }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}_{}", self.coalition, self.agent)
    }
}

impl FromStr for ActionId {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parser::parse_action_token(s).ok_or_else(|| ExprError::MalformedVariable {
            token: s.to_string(),
            offset: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("malformed variable `{token}` at byte {offset} (expected x<coalition>_<agent>)")]
    MalformedVariable { token: String, offset: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no value supplied for {0}")]
    MissingVariable(ActionId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(ActionId),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a literal exponent.
    Pow(Box<Expr>, f64),
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

fn domain(msg: impl Into<String>) -> ExprError {
    ExprError::Domain(msg.into())
}

fn finite(v: f64, what: &str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(domain(format!("non-finite value in {what}")))
    }
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(coalition: usize, agent: usize) -> Self {
        Expr::Var(ActionId::new(coalition, agent))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    /// Evaluates the tree, resolving variables through `lookup`.
    pub fn eval_with<F>(&self, lookup: &F) -> Result<f64, ExprError>
    where
        F: Fn(ActionId) -> Option<f64>,
    {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(id) => lookup(*id).ok_or(ExprError::MissingVariable(*id)),
            Expr::Neg(a) => Ok(-a.eval_with(lookup)?),
            Expr::Exp(a) => finite(a.eval_with(lookup)?.exp(), "exp"),
            Expr::Log(a) => {
                let v = a.eval_with(lookup)?;
                if v <= 0.0 {
                    Err(domain(format!("log of non-positive value {v}")))
                } else {
                    Ok(v.ln())
                }
            }
            Expr::Add(a, b) => finite(a.eval_with(lookup)? + b.eval_with(lookup)?, "addition"),
            Expr::Sub(a, b) => finite(a.eval_with(lookup)? - b.eval_with(lookup)?, "subtraction"),
            Expr::Mul(a, b) => finite(a.eval_with(lookup)? * b.eval_with(lookup)?, "product"),
            Expr::Div(a, b) => {
                let num = a.eval_with(lookup)?;
                let den = b.eval_with(lookup)?;
                if den == 0.0 {
                    Err(domain("division by zero"))
                } else {
                    finite(num / den, "quotient")
                }
            }
            Expr::Pow(a, e) => {
                let base = a.eval_with(lookup)?;
                let v = if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                    if base == 0.0 && *e < 0.0 {
                        return Err(domain("zero raised to a negative power"));
                    }
                    base.powi(*e as i32)
                } else {
                    if base < 0.0 {
                        return Err(domain(format!("negative base {base} with fractional exponent")));
                    }
                    base.powf(*e)
                };
                finite(v, "power")
            }
        }
    }

    /// Evaluates against an explicit assignment.
    pub fn evaluate(&self, assignment: &BTreeMap<ActionId, f64>) -> Result<f64, ExprError> {
        self.eval_with(&|id| assignment.get(&id).copied())
    }

    /// Pushes the value of every top-level additive term onto `out`, so the
    /// caller can sum terms from several expressions without intermediate
    /// rounding. The sum of the pushed values equals [`Expr::eval_with`].
    pub fn eval_terms<F>(&self, lookup: &F, out: &mut Vec<f64>) -> Result<(), ExprError>
    where
        F: Fn(ActionId) -> Option<f64>,
    {
        self.push_terms(lookup, 1.0, out)
    }

    fn push_terms<F>(&self, lookup: &F, sign: f64, out: &mut Vec<f64>) -> Result<(), ExprError>
    where
        F: Fn(ActionId) -> Option<f64>,
    {
        match self {
            Expr::Add(a, b) => {
                a.push_terms(lookup, sign, out)?;
                b.push_terms(lookup, sign, out)
            }
            Expr::Sub(a, b) => {
                a.push_terms(lookup, sign, out)?;
                b.push_terms(lookup, -sign, out)
            }
            Expr::Neg(a) => a.push_terms(lookup, -sign, out),
            other => {
                out.push(sign * other.eval_with(lookup)?);
                Ok(())
            }
        }
    }

    pub fn free_variables(&self) -> BTreeSet<ActionId> {
        let mut vars = BTreeSet::new();
        self.collect_vars(&mut vars);
        vars
    }

    fn collect_vars(&self, vars: &mut BTreeSet<ActionId>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(id) => {
                vars.insert(*id);
            }
            Expr::Neg(a) | Expr::Exp(a) | Expr::Log(a) | Expr::Pow(a, _) => a.collect_vars(vars),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(vars);
                b.collect_vars(vars);
            }
        }
    }

    pub fn depends_on(&self, v: ActionId) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(id) => *id == v,
            Expr::Neg(a) | Expr::Exp(a) | Expr::Log(a) | Expr::Pow(a, _) => a.depends_on(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    pub fn differentiate(&self, v: ActionId) -> Expr {
        derive::derivative(self, v)
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Exp(a) | Expr::Log(a) | Expr::Pow(a, _) => 1 + a.size(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    // right operands: a leading minus is always bracketed
    fn write_operand(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if let Expr::Neg(_) = self {
            write!(f, "(")?;
            self.write_at(f, 0)?;
            return write!(f, ")");
        }
        self.write_at(f, min_prec)
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "(")?;
            self.write_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "(-{})", -c),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(id) => write!(f, "{id}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.write_at(f, 3)
            }
            Expr::Exp(a) => {
                write!(f, "exp(")?;
                a.write_at(f, 0)?;
                write!(f, ")")
            }
            Expr::Log(a) => {
                write!(f, "log(")?;
                a.write_at(f, 0)?;
                write!(f, ")")
            }
            Expr::Add(a, b) => {
                a.write_at(f, 1)?;
                write!(f, " + ")?;
                b.write_operand(f, 2)
            }
            Expr::Sub(a, b) => {
                a.write_at(f, 1)?;
                write!(f, " - ")?;
                b.write_operand(f, 2)
            }
            Expr::Mul(a, b) => {
                a.write_at(f, 2)?;
                write!(f, "*")?;
                b.write_operand(f, 3)
            }
            Expr::Div(a, b) => {
                a.write_at(f, 2)?;
                write!(f, "/")?;
                b.write_operand(f, 3)
            }
            Expr::Pow(a, e) => {
                a.write_at(f, 5)?;
                if *e < 0.0 {
                    write!(f, "^(-{})", -e)
                } else {
                    write!(f, "^{e}")
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

// Constructors applying the 0/1 identities and folding literal arithmetic.

pub(crate) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (a, b) if a.is_zero() => b,
        (a, b) if b.is_zero() => a,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (a, b) if b.is_zero() => a,
        (a, b) if a.is_zero() => neg(b),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (a, _) if a.is_zero() => Expr::Const(0.0),
        (_, b) if b.is_zero() => Expr::Const(0.0),
        (a, b) if a.is_one() => b,
        (a, b) if b.is_one() => a,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, _) if a.is_zero() => Expr::Const(0.0),
        (a, b) if b.is_one() => a,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub(crate) fn pow(a: Expr, e: f64) -> Expr {
    if e == 0.0 {
        Expr::Const(1.0)
    } else if e == 1.0 {
        a
    } else {
        Expr::Pow(Box::new(a), e)
    }
}
