//! A small arithmetic expression language with symbolic differentiation.
//!
//! Grammar: `+ - * / ^`, parentheses, numeric literals, the constant `pi`, named variables and
//! the functions `sin cos exp log sqrt psqrt`. `psqrt` is the square root clamped below at
//! [`POLE_EPS`](crate::geometry::POLE_EPS), used by the disk weight near its poles.

use crate::error::{Error, Result};
use crate::geometry::{MAX_DIM, POLE_EPS};
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Psqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "psqrt" => Func::Psqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Psqrt => "psqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Psqrt => v.max(0.0).sqrt().max(POLE_EPS),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

use Node::*;

fn c(v: f64) -> Node {
    Const(v)
}

fn neg(a: Node) -> Node {
    match a {
        Const(v) => Const(-v),
        Neg(inner) => *inner,
        a => Neg(Box::new(a)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (a, b) {
        (Const(x), Const(y)) => Const(x + y),
        (Const(z), b) if z == 0.0 => b,
        (a, Const(z)) if z == 0.0 => a,
        (a, b) => Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (a, b) {
        (Const(x), Const(y)) => Const(x - y),
        (a, Const(z)) if z == 0.0 => a,
        (Const(z), b) if z == 0.0 => neg(b),
        (a, b) => Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (a, b) {
        (Const(x), Const(y)) => Const(x * y),
        (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
        (Const(o), b) if o == 1.0 => b,
        (a, Const(o)) if o == 1.0 => a,
        (a, b) => Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a, b) {
        (Const(x), Const(y)) => Const(x / y),
        (Const(z), _) if z == 0.0 => Const(0.0),
        (a, Const(o)) if o == 1.0 => a,
        (a, b) => Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Node, b: Node) -> Node {
    match (a, b) {
        (Const(x), Const(y)) => Const(x.powf(y)),
        (_, Const(z)) if z == 0.0 => Const(1.0),
        (a, Const(o)) if o == 1.0 => a,
        (a, b) => Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Node) -> Node {
    match a {
        Const(v) => Const(f.apply(v)),
        a => Call(f, Box::new(a)),
    }
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Const(v) => *v,
            Var(i) => x[*i],
            Neg(a) => -a.eval(x),
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Div(a, b) => a.eval(x) / b.eval(x),
            Pow(a, b) => {
                let base = a.eval(x);
                match **b {
                    Const(e) if e.fract() == 0.0 && e.abs() <= 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(x)),
                }
            }
            Call(f, a) => f.apply(a.eval(x)),
        }
    }

    fn diff(&self, v: usize) -> Node {
        match self {
            Const(_) => c(0.0),
            Var(i) => c(if *i == v { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(v)),
            Add(a, b) => add(a.diff(v), b.diff(v)),
            Sub(a, b) => sub(a.diff(v), b.diff(v)),
            Mul(a, b) => add(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v))),
            Div(a, b) => {
                div(sub(mul(a.diff(v), (**b).clone()), mul((**a).clone(), b.diff(v))), pow((**b).clone(), c(2.0)))
            }
            Pow(a, b) => {
                if let Const(e) = **b {
                    mul(mul(c(e), pow((**a).clone(), c(e - 1.0))), a.diff(v))
                } else {
                    let lhs = mul(b.diff(v), call(Func::Log, (**a).clone()));
                    let rhs = div(mul((**b).clone(), a.diff(v)), (**a).clone());
                    mul(self.clone(), add(lhs, rhs))
                }
            }
            Call(f, a) => {
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Exp => call(Func::Exp, inner),
                    Func::Log => div(c(1.0), inner),
                    Func::Sqrt => div(c(0.5), call(Func::Sqrt, inner)),
                    Func::Psqrt => div(c(0.5), call(Func::Psqrt, inner)),
                };
                mul(outer, a.diff(v))
            }
        }
    }

    fn fmt_with(&self, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(v) => write!(f, "{v}"),
            Var(i) => write!(f, "{}", vars[*i]),
            Neg(a) => {
                write!(f, "(-")?;
                a.fmt_with(vars, f)?;
                write!(f, ")")
            }
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => {
                let op = match self {
                    Add(..) => "+",
                    Sub(..) => "-",
                    Mul(..) => "*",
                    Div(..) => "/",
                    _ => "^",
                };
                write!(f, "(")?;
                a.fmt_with(vars, f)?;
                write!(f, " {op} ")?;
                b.fmt_with(vars, f)?;
                write!(f, ")")
            }
            Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_with(vars, f)?;
                write!(f, ")")
            }
        }
    }
}

/// A parsed expression over a fixed list of variable names.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    vars: Vec<String>,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, vars, src };
        let root = p.expr()?;
        if p.pos < p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr { vars: vars.iter().map(|s| s.to_string()).collect(), root })
    }

    pub fn constant(v: f64, vars: &[&str]) -> Expr {
        Expr { vars: vars.iter().map(|s| s.to_string()).collect(), root: c(v) }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        Expr { vars: self.vars.clone(), root: self.root.diff(var) }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.root, Const(_))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt_with(&self.vars, f)
    }
}

/// An expression together with a cache of its partial derivatives.
pub struct SmoothFn {
    expr: Expr,
    cache: RwLock<HashMap<[u8; MAX_DIM], Arc<Expr>>>,
}

impl SmoothFn {
    pub fn new(expr: Expr) -> SmoothFn {
        SmoothFn { expr, cache: RwLock::new(HashMap::new()) }
    }

    pub fn parse(src: &str, vars: &[&str]) -> Result<SmoothFn> {
        Ok(SmoothFn::new(Expr::parse(src, vars)?))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    /// Evaluates the mixed partial derivative with orders `orders[i]` in variable `i`.
    pub fn eval_partial(&self, orders: &[u8; MAX_DIM], x: &[f64]) -> f64 {
        if orders.iter().all(|&o| o == 0) {
            return self.expr.eval(x);
        }
        if let Some(e) = self.cache.read().unwrap().get(orders) {
            return e.eval(x);
        }
        let mut e = self.expr.clone();
        for (var, &o) in orders.iter().enumerate() {
            for _ in 0..o {
                e = e.derivative(var);
            }
        }
        let v = e.eval(x);
        self.cache.write().unwrap().insert(*orders, Arc::new(e));
        v
    }
}

impl Clone for SmoothFn {
    fn clone(&self) -> Self {
        SmoothFn::new(self.expr.clone())
    }
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SmoothFn({})", self.expr)
    }
}

impl PartialEq for SmoothFn {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v =
                text.parse::<f64>().map_err(|_| Error::Expr(format!("bad number '{text}' at column {}", start + 1)))?;
            out.push((Tok::Num(v), start));
        } else if ch.is_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start));
        } else if "+-*/^()".contains(ch) || ch == '\u{2212}' {
            out.push((Tok::Op(if ch == '\u{2212}' { '-' } else { ch }), i));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{ch}' at column {}", i + 1)));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [&'a str],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> Error {
        let col = self.tokens.get(self.pos).map(|t| t.1 + 1).unwrap_or(self.src.chars().count() + 1);
        Error::Expr(format!("{msg} at column {col} in '{}'", self.src))
    }

    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { add(lhs, rhs) } else { sub(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { mul(lhs, rhs) } else { div(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(neg(self.unary()?))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(pow(base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let Some((tok, _)) = self.tokens.get(self.pos).cloned() else {
            return Err(self.error("unexpected end of expression"));
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(c(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if let Some(f) = Func::from_name(&name) {
                    if self.peek_op() != Some('(') {
                        return Err(self.error(&format!("expected '(' after {name}")));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek_op() != Some(')') {
                        return Err(self.error("expected ')'"));
                    }
                    self.pos += 1;
                    Ok(call(f, arg))
                } else if name == "pi" {
                    Ok(c(std::f64::consts::PI))
                } else if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    Ok(Var(i))
                } else {
                    self.pos -= 1;
                    Err(self.error(&format!("unknown variable '{name}' (known: {:?})", self.vars)))
                }
            }
            Tok::Op(o) => Err(self.error(&format!("unexpected '{o}'"))),
        }
    }
}
