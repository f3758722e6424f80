//! Scalar coordinate expressions: parsing and jet evaluation.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | name | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-r^2` is `-(r^2)`. There is no
//! implicit multiplication. `pi` is a built-in constant unless a coordinate
//! or parameter of the same name shadows it.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::jets::{Jet, JetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

/// Expression tree. Coordinates are referenced by index into the owning
/// chart's coordinate list, parameters by name.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Const(f64),
    Coord(usize),
    Param(String),
    Add(Box<ExprAst>, Box<ExprAst>),
    Sub(Box<ExprAst>, Box<ExprAst>),
    Mul(Box<ExprAst>, Box<ExprAst>),
    Div(Box<ExprAst>, Box<ExprAst>),
    Neg(Box<ExprAst>),
    Pow(Box<ExprAst>, Box<ExprAst>),
    Call(Func, Box<ExprAst>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("parameter `{0}` has no bound value")]
    UnboundParameter(String),
    #[error("domain error in {node} at point {point:?}")]
    Domain { node: String, point: Vec<f64> },
    #[error("non-finite result in {node} at point {point:?}")]
    NonFinite { node: String, point: Vec<f64> },
    #[error(transparent)]
    Jet(#[from] JetError),
}

impl fmt::Display for ExprAst {
    /// Prefix form, e.g. `sub(1, div(mul(2, M), x0))`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprAst::Const(v) => write!(f, "{v}"),
            ExprAst::Coord(i) => write!(f, "x{i}"),
            ExprAst::Param(p) => write!(f, "{p}"),
            ExprAst::Add(a, b) => write!(f, "add({a}, {b})"),
            ExprAst::Sub(a, b) => write!(f, "sub({a}, {b})"),
            ExprAst::Mul(a, b) => write!(f, "mul({a}, {b})"),
            ExprAst::Div(a, b) => write!(f, "div({a}, {b})"),
            ExprAst::Neg(a) => write!(f, "neg({a})"),
            ExprAst::Pow(a, b) => write!(f, "pow({a}, {b})"),
            ExprAst::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            // "2M" is not a number and not a valid name
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                return Err(ExprError::UnknownIdentifier {
                    name: text[start..i].to_string(),
                    offset: start,
                });
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

/// Names are resolved after the whole input parses, so syntax errors are
/// reported ahead of unknown identifiers.
#[derive(Debug)]
enum Raw {
    Num(f64),
    Name(String, usize),
    Bin(char, Box<Raw>, Box<Raw>),
    Neg(Box<Raw>),
    Call(Func, Box<Raw>),
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, what: &str) -> Result<T, ExprError> {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
        };
        Err(ExprError::Syntax {
            offset: self.offset(),
            message: format!("expected {what}, found {found}"),
        })
    }

    fn expr(&mut self) -> Result<Raw, ExprError> {
        let mut lhs = self.term()?;
        while let Tok::Op(op @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            lhs = Raw::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Raw, ExprError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(op @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            lhs = Raw::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Raw, ExprError> {
        match *self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Raw::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Raw, ExprError> {
        let base = self.primary()?;
        if let Tok::Op('^') = *self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Raw::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Raw, ExprError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Raw::Num(v))
            }
            Tok::Ident(name) => {
                let (_, off) = self.bump();
                if let Some(func) = Func::from_name(&name) {
                    if *self.peek() == Tok::LParen {
                        self.bump();
                        let arg = self.expr()?;
                        if *self.peek() != Tok::RParen {
                            return self.error("`)`");
                        }
                        self.bump();
                        return Ok(Raw::Call(func, Box::new(arg)));
                    }
                }
                Ok(Raw::Name(name, off))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.error("`)`");
                }
                self.bump();
                Ok(e)
            }
            _ => self.error("a number, name or `(`"),
        }
    }
}

fn resolve(raw: Raw, coords: &[String], params: &[String]) -> Result<ExprAst, ExprError> {
    let rec = |r: Box<Raw>| resolve(*r, coords, params).map(Box::new);
    Ok(match raw {
        Raw::Num(v) => ExprAst::Const(v),
        Raw::Name(name, offset) => {
            if let Some(i) = coords.iter().position(|c| *c == name) {
                ExprAst::Coord(i)
            } else if params.contains(&name) {
                ExprAst::Param(name)
            } else if name == "pi" {
                ExprAst::Const(std::f64::consts::PI)
            } else {
                return Err(ExprError::UnknownIdentifier { name, offset });
            }
        }
        Raw::Bin(op, a, b) => {
            let (a, b) = (rec(a)?, rec(b)?);
            match op {
                '+' => ExprAst::Add(a, b),
                '-' => ExprAst::Sub(a, b),
                '*' => ExprAst::Mul(a, b),
                '/' => ExprAst::Div(a, b),
                _ => ExprAst::Pow(a, b),
            }
        }
        Raw::Neg(a) => ExprAst::Neg(rec(a)?),
        Raw::Call(f, a) => ExprAst::Call(f, rec(a)?),
    })
}

/// Parses `text` with the given coordinate and parameter names in scope.
pub fn parse_expression(
    text: &str,
    coords: &[String],
    params: &[String],
) -> Result<ExprAst, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let raw = p.expr()?;
    if *p.peek() != Tok::End {
        return p.error("an operator or end of input");
    }
    resolve(raw, coords, params)
}

/// Parameter bindings and the expansion point.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub point: &'a [f64],
    pub params: &'a BTreeMap<String, f64>,
}

impl ExprAst {
    pub fn constant(v: f64) -> Self {
        ExprAst::Const(v)
    }

    /// Largest coordinate index referenced, if any.
    pub fn max_coord(&self) -> Option<usize> {
        match self {
            ExprAst::Coord(i) => Some(*i),
            ExprAst::Const(_) | ExprAst::Param(_) => None,
            ExprAst::Neg(a) | ExprAst::Call(_, a) => a.max_coord(),
            ExprAst::Add(a, b)
            | ExprAst::Sub(a, b)
            | ExprAst::Mul(a, b)
            | ExprAst::Div(a, b)
            | ExprAst::Pow(a, b) => a.max_coord().max(b.max_coord()),
        }
    }

    pub fn params(&self, out: &mut Vec<String>) {
        match self {
            ExprAst::Param(p) => {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
            ExprAst::Const(_) | ExprAst::Coord(_) => {}
            ExprAst::Neg(a) | ExprAst::Call(_, a) => a.params(out),
            ExprAst::Add(a, b)
            | ExprAst::Sub(a, b)
            | ExprAst::Mul(a, b)
            | ExprAst::Div(a, b)
            | ExprAst::Pow(a, b) => {
                a.params(out);
                b.params(out);
            }
        }
    }

    /// Replaces coordinate `k` by the constant `value` and renumbers the
    /// coordinates above `k` down by one.
    pub fn substitute_coordinate(&self, k: usize, value: f64) -> ExprAst {
        let rec = |e: &ExprAst| Box::new(e.substitute_coordinate(k, value));
        match self {
            ExprAst::Coord(i) if *i == k => ExprAst::Const(value),
            ExprAst::Coord(i) if *i > k => ExprAst::Coord(i - 1),
            ExprAst::Coord(_) | ExprAst::Const(_) | ExprAst::Param(_) => self.clone(),
            ExprAst::Add(a, b) => ExprAst::Add(rec(a), rec(b)),
            ExprAst::Sub(a, b) => ExprAst::Sub(rec(a), rec(b)),
            ExprAst::Mul(a, b) => ExprAst::Mul(rec(a), rec(b)),
            ExprAst::Div(a, b) => ExprAst::Div(rec(a), rec(b)),
            ExprAst::Pow(a, b) => ExprAst::Pow(rec(a), rec(b)),
            ExprAst::Neg(a) => ExprAst::Neg(rec(a)),
            ExprAst::Call(f, a) => ExprAst::Call(*f, rec(a)),
        }
    }

    /// Value only.
    pub fn eval(&self, ctx: &EvalContext<'_>) -> Result<f64, ExprError> {
        eval_jet(self, ctx, 0).map(|j| j.value())
    }
}

/// Taylor coefficients of `ast` at `ctx.point` through `order`.
pub fn eval_jet(ast: &ExprAst, ctx: &EvalContext<'_>, order: u8) -> Result<Jet, ExprError> {
    if order > crate::jets::MAX_ORDER {
        return Err(JetError::OrderTooHigh(order).into());
    }
    let j = eval_node(ast, ctx, order)?;
    if !j.is_finite() {
        return Err(ExprError::NonFinite {
            node: ast.to_string(),
            point: ctx.point.to_vec(),
        });
    }
    Ok(j)
}

fn domain(node: &ExprAst, ctx: &EvalContext<'_>) -> ExprError {
    ExprError::Domain {
        node: node.to_string(),
        point: ctx.point.to_vec(),
    }
}

fn integer_exponent(e: &ExprAst) -> Option<i32> {
    match e {
        ExprAst::Const(v) if v.fract() == 0.0 && v.abs() <= 64.0 => Some(*v as i32),
        ExprAst::Neg(inner) => integer_exponent(inner).map(|k| -k),
        _ => None,
    }
}

fn eval_node(node: &ExprAst, ctx: &EvalContext<'_>, order: u8) -> Result<Jet, ExprError> {
    let n = ctx.point.len();
    let j = match node {
        ExprAst::Const(v) => Jet::constant(n, order, *v),
        ExprAst::Coord(i) => Jet::seed(*i, ctx.point, order)?,
        ExprAst::Param(p) => {
            let v = ctx
                .params
                .get(p)
                .ok_or_else(|| ExprError::UnboundParameter(p.clone()))?;
            Jet::constant(n, order, *v)
        }
        ExprAst::Add(a, b) => eval_node(a, ctx, order)?.try_add(&eval_node(b, ctx, order)?)?,
        ExprAst::Sub(a, b) => eval_node(a, ctx, order)?.try_sub(&eval_node(b, ctx, order)?)?,
        ExprAst::Mul(a, b) => eval_node(a, ctx, order)?.try_mul(&eval_node(b, ctx, order)?)?,
        ExprAst::Div(a, b) => {
            let den = eval_node(b, ctx, order)?;
            if den.value() == 0.0 {
                return Err(domain(node, ctx));
            }
            eval_node(a, ctx, order)?.try_div(&den)?
        }
        ExprAst::Neg(a) => -eval_node(a, ctx, order)?,
        ExprAst::Pow(a, b) => {
            let base = eval_node(a, ctx, order)?;
            if let Some(k) = integer_exponent(b) {
                if k < 0 && base.value() == 0.0 {
                    return Err(domain(node, ctx));
                }
                base.powi(k)?
            } else {
                if base.value() <= 0.0 {
                    return Err(domain(node, ctx));
                }
                let exp = eval_node(b, ctx, order)?;
                exp.try_mul(&base.ln())?.exp()
            }
        }
        ExprAst::Call(f, a) => {
            let u = eval_node(a, ctx, order)?;
            let x = u.value();
            match f {
                Func::Sin => u.sin(),
                Func::Cos => u.cos(),
                Func::Tan => {
                    if x.cos() == 0.0 {
                        return Err(domain(node, ctx));
                    }
                    u.tan()
                }
                Func::Exp => u.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(domain(node, ctx));
                    }
                    u.ln()
                }
                Func::Sqrt => {
                    if x < 0.0 || (x == 0.0 && order > 0) {
                        return Err(domain(node, ctx));
                    }
                    u.sqrt()
                }
            }
        }
    };
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn schw() -> (Vec<String>, Vec<String>) {
        (names(&["t", "r", "th", "ph"]), names(&["M"]))
    }

    #[test]
    fn precedence_examples() {
        let (c, p) = schw();
        let e = parse_expression("1 - 2*M/r", &c, &p).unwrap();
        assert_eq!(e.to_string(), "sub(1, div(mul(2, M), x1))");
        let e = parse_expression("r^2*sin(th)^2", &c, &p).unwrap();
        assert_eq!(e.to_string(), "mul(pow(x1, 2), pow(sin(x2), 2))");
        let e = parse_expression("-r^2", &c, &p).unwrap();
        assert_eq!(e.to_string(), "neg(pow(x1, 2))");
        let e = parse_expression("t - r - th", &c, &p).unwrap();
        assert_eq!(e.to_string(), "sub(sub(x0, x1), x2)");
        let e = parse_expression("(t - r) / 2 / M", &c, &p).unwrap();
        assert_eq!(e.to_string(), "div(div(sub(x0, x1), 2), M)");
    }

    #[test]
    fn dangling_operator_reports_end_offset() {
        let (c, p) = schw();
        let err = parse_expression("1 - 2*Q/", &c, &p).unwrap_err();
        assert_eq!(
            err,
            ExprError::Syntax {
                offset: 8,
                message: "expected a number, name or `(`, found end of input".into()
            }
        );
    }

    #[test]
    fn unknown_names_and_implicit_products() {
        let (c, p) = schw();
        assert_eq!(
            parse_expression("1 - 2*Q", &c, &p).unwrap_err(),
            ExprError::UnknownIdentifier {
                name: "Q".into(),
                offset: 6
            }
        );
        assert!(matches!(
            parse_expression("1 - 2M/r", &c, &p).unwrap_err(),
            ExprError::UnknownIdentifier { name, offset: 4 } if name == "2M"
        ));
        assert!(parse_expression("   ", &c, &p).is_err());
        assert!(parse_expression("(r", &c, &p).is_err());
        assert!(parse_expression("r r", &c, &p).is_err());
        assert!(parse_expression("r $ 2", &c, &p).is_err());
    }

    #[test]
    fn polynomial_jet() {
        let c = names(&["r"]);
        let e = parse_expression("r*r", &c, &[]).unwrap();
        let params = BTreeMap::new();
        let j = eval_jet(&e, &EvalContext { point: &[2.0], params: &params }, 3).unwrap();
        assert_eq!((j.value(), j.d1(0), j.d2(0, 0), j.d3(0, 0, 0)), (4.0, 4.0, 2.0, 0.0));
    }

    #[test]
    fn sine_jet() {
        let c = names(&["th"]);
        let e = parse_expression("sin(th)", &c, &[]).unwrap();
        let params = BTreeMap::new();
        let pt = [std::f64::consts::FRAC_PI_2];
        let j = eval_jet(&e, &EvalContext { point: &pt, params: &params }, 3).unwrap();
        assert_relative_eq!(j.value(), 1.0);
        assert!(j.d1(0).abs() < 1e-15);
        assert_relative_eq!(j.d2(0, 0), -1.0);
        assert!(j.d3(0, 0, 0).abs() < 1e-15);
    }

    #[test]
    fn lapse_function_against_finite_differences() {
        let c = names(&["r"]);
        let p = names(&["M"]);
        let e = parse_expression("1-2*M/r", &c, &p).unwrap();
        let params: BTreeMap<_, _> = [("M".to_string(), 1.0)].into();
        let f = |r: f64| e.eval(&EvalContext { point: &[r], params: &params }).unwrap();
        let h = 1e-4;
        let fd1 = (f(4.0 + h) - f(4.0 - h)) / (2.0 * h);
        let fd2 = (f(4.0 + h) - 2.0 * f(4.0) + f(4.0 - h)) / (h * h);
        let j = eval_jet(&e, &EvalContext { point: &[4.0], params: &params }, 3).unwrap();
        assert_relative_eq!(j.value(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(j.d1(0), fd1, max_relative = 1e-8);
        assert_relative_eq!(j.d1(0), 0.125, max_relative = 1e-15);
        assert_relative_eq!(j.d2(0, 0), fd2, max_relative = 1e-6);
        assert_relative_eq!(j.d2(0, 0), -0.0625, max_relative = 1e-15);
    }

    #[test]
    fn domain_errors() {
        let c = names(&["x"]);
        let params = BTreeMap::new();
        let ctx = EvalContext { point: &[0.0], params: &params };
        for text in ["1/x", "log(x)", "sqrt(x)", "x^-1", "x^0.5"] {
            let e = parse_expression(text, &c, &[]).unwrap();
            assert!(
                matches!(eval_jet(&e, &ctx, 2), Err(ExprError::Domain { .. })),
                "{text}"
            );
        }
        let e = parse_expression("exp(x)", &c, &[]).unwrap();
        let big = EvalContext { point: &[1000.0], params: &params };
        assert!(matches!(eval_jet(&e, &big, 1), Err(ExprError::NonFinite { .. })));
        let e = parse_expression("x*M", &c, &names(&["M"])).unwrap();
        assert_eq!(
            eval_jet(&e, &ctx, 1).unwrap_err(),
            ExprError::UnboundParameter("M".into())
        );
    }

    #[test]
    fn negative_base_integer_power() {
        let c = names(&["x"]);
        let params = BTreeMap::new();
        let e = parse_expression("x^3", &c, &[]).unwrap();
        let j = eval_jet(&e, &EvalContext { point: &[-2.0], params: &params }, 3).unwrap();
        assert_eq!((j.value(), j.d1(0), j.d2(0, 0), j.d3(0, 0, 0)), (-8.0, 12.0, -12.0, 6.0));
    }

    #[test]
    fn substitution_renumbers() {
        let c = names(&["a", "b", "c"]);
        let e = parse_expression("a*b + c", &c, &[]).unwrap();
        let s = e.substitute_coordinate(1, 2.0);
        assert_eq!(s.to_string(), "add(mul(x0, 2), x1)");
        assert_eq!(s.max_coord(), Some(1));
    }

    #[test]
    fn pi_constant_and_shadowing() {
        let params = BTreeMap::new();
        let e = parse_expression("pi/3", &[], &[]).unwrap();
        assert_relative_eq!(
            e.eval(&EvalContext { point: &[], params: &params }).unwrap(),
            std::f64::consts::FRAC_PI_3
        );
        let e = parse_expression("pi", &names(&["pi"]), &[]).unwrap();
        assert_eq!(e, ExprAst::Coord(0));
    }
}
