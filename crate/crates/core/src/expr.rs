//! Closed-form expression trees with interval evaluation and exact symbolic
//! derivatives.
//!
//! Map branches are stored as expressions in one variable `x` plus named
//! parameters, so first and second derivatives are obtained symbolically and
//! evaluated in interval arithmetic. The grammar accepted by [`Expr::parse`]:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | atom ('^' exponent)?
//! atom   := number | name | name '(' expr ')' | '(' expr ')'
//! exponent := integer | '(' integer '/' integer ')'
//! ```
//!
//! Functions: `exp`, `log`, `cbrt`. Fractional exponents with denominator 3
//! use signed cube-root semantics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::interval::IntervalScalar;

pub type Params = BTreeMap<String, IntervalScalar>;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(IntervalScalar),
    Var,
    Param(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Cbrt(Box<Expr>),
    PowInt(Box<Expr>, i32),
    /// `base^(num/den)` with signed-root semantics for odd denominators.
    PowFrac(Box<Expr>, i32, u32),
}

impl Expr {
    pub fn constant(x: f64) -> Expr {
        Expr::Const(IntervalScalar::point(x))
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn eval(&self, x: IntervalScalar, params: &Params) -> Result<IntervalScalar, Error> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var => x,
            Expr::Param(name) => *params
                .get(name)
                .ok_or_else(|| Error::Parse(format!("unknown parameter {name:?}")))?,
            Expr::Add(a, b) => a.eval(x, params)? + b.eval(x, params)?,
            Expr::Sub(a, b) => a.eval(x, params)? - b.eval(x, params)?,
            Expr::Mul(a, b) => a.eval(x, params)? * b.eval(x, params)?,
            Expr::Div(a, b) => a.eval(x, params)?.checked_div(&b.eval(x, params)?)?,
            Expr::Neg(a) => -a.eval(x, params)?,
            Expr::Exp(a) => a.eval(x, params)?.exp(),
            Expr::Log(a) => a.eval(x, params)?.log()?,
            Expr::Cbrt(a) => a.eval(x, params)?.cbrt(),
            Expr::PowInt(a, n) => a.eval(x, params)?.pow_int(*n)?,
            Expr::PowFrac(a, n, d) => a.eval(x, params)?.pow_frac(*n, *d)?,
        })
    }

    /// Exact symbolic derivative with respect to `x`.
    pub fn deriv(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) | Param(_) => Expr::constant(0.0),
            Var => Expr::constant(1.0),
            Add(a, b) => Add(Box::new(a.deriv()), Box::new(b.deriv())),
            Sub(a, b) => Sub(Box::new(a.deriv()), Box::new(b.deriv())),
            Mul(a, b) => Add(
                Box::new(Mul(Box::new(a.deriv()), b.clone())),
                Box::new(Mul(a.clone(), Box::new(b.deriv()))),
            ),
            Div(a, b) => Div(
                Box::new(Sub(
                    Box::new(Mul(Box::new(a.deriv()), b.clone())),
                    Box::new(Mul(a.clone(), Box::new(b.deriv()))),
                )),
                Box::new(PowInt(b.clone(), 2)),
            ),
            Neg(a) => Neg(Box::new(a.deriv())),
            Exp(a) => Mul(Box::new(Exp(a.clone())), Box::new(a.deriv())),
            Log(a) => Div(Box::new(a.deriv()), a.clone()),
            Cbrt(a) => {
                // d/dx a^(1/3) = (1/3) a^(-2/3) a'
                Mul(
                    Box::new(Mul(
                        Box::new(Expr::constant(1.0 / 3.0)),
                        Box::new(PowFrac(a.clone(), -2, 3)),
                    )),
                    Box::new(a.deriv()),
                )
            }
            PowInt(a, n) => {
                if *n == 0 {
                    return Expr::constant(0.0);
                }
                Mul(
                    Box::new(Mul(
                        Box::new(Expr::constant(*n as f64)),
                        Box::new(PowInt(a.clone(), n - 1)),
                    )),
                    Box::new(a.deriv()),
                )
            }
            PowFrac(a, n, d) => Mul(
                Box::new(Mul(
                    Box::new(Div(
                        Box::new(Expr::constant(*n as f64)),
                        Box::new(Expr::constant(*d as f64)),
                    )),
                    Box::new(PowFrac(a.clone(), n - *d as i32, *d)),
                )),
                Box::new(a.deriv()),
            ),
        }
    }

    pub fn parse(src: &str) -> Result<Expr, Error> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(Error::Parse(format!(
                "trailing input at byte {} of {src:?}",
                p.pos
            )));
        }
        Ok(e)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.lo() == c.hi() {
                    write!(f, "{}", c.lo())
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var => write!(f, "x"),
            Expr::Param(p) => write!(f, "{p}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Log(a) => write!(f, "log({a})"),
            Expr::Cbrt(a) => write!(f, "cbrt({a})"),
            Expr::PowInt(a, n) => write!(f, "{a}^{n}"),
            Expr::PowFrac(a, n, d) => write!(f, "{a}^({n}/{d})"),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }


    fn expect(&mut self, c: u8) -> Result<(), Error> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "expected {:?} at byte {}",
                c as char, self.pos
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr, Error> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, Error> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    acc = Expr::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, Error> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let atom = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            return self.exponent(atom);
        }
        Ok(atom)
    }

    fn exponent(&mut self, base: Expr) -> Result<Expr, Error> {
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let num = self.integer()?;
            self.expect(b'/')?;
            let den = self.integer()?;
            self.expect(b')')?;
            if den <= 0 {
                return Err(Error::Parse("exponent denominator must be positive".into()));
            }
            Ok(Expr::PowFrac(Box::new(base), num as i32, den as u32))
        } else {
            let n = self.integer()?;
            Ok(Expr::PowInt(Box::new(base), n as i32))
        }
    }

    fn integer(&mut self) -> Result<i64, Error> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self
            .src
            .get(self.pos)
            .map(|c| c.is_ascii_digit())
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse(format!("expected integer at byte {start}")))
    }

    fn atom(&mut self) -> Result<Expr, Error> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.name();
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    let arg = Box::new(self.expr()?);
                    self.expect(b')')?;
                    match name.as_str() {
                        "exp" => Ok(Expr::Exp(arg)),
                        "log" => Ok(Expr::Log(arg)),
                        "cbrt" => Ok(Expr::Cbrt(arg)),
                        _ => Err(Error::Parse(format!("unknown function {name:?}"))),
                    }
                } else if name == "x" {
                    Ok(Expr::Var)
                } else {
                    Ok(Expr::Param(name))
                }
            }
            other => Err(Error::Parse(format!(
                "unexpected token {other:?} at byte {}",
                self.pos
            ))),
        }
    }

    fn name(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .map(|c| c.is_ascii_alphanumeric() || *c == b'_')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<Expr, Error> {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .map(|c| c.is_ascii_digit() || *c == b'.')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        // Exponent suffix like 1e-3.
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let mut j = self.pos + 1;
            if matches!(self.src.get(j), Some(b'+') | Some(b'-')) {
                j += 1;
            }
            if self.src.get(j).map(|c| c.is_ascii_digit()).unwrap_or(false) {
                self.pos = j;
                while self
                    .src
                    .get(self.pos)
                    .map(|c| c.is_ascii_digit())
                    .unwrap_or(false)
                {
                    self.pos += 1;
                }
            }
        }
        let lit = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        Ok(Expr::Const(IntervalScalar::from_decimal(lit)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(e: &Expr, x: f64) -> IntervalScalar {
        e.eval(IntervalScalar::point(x), &Params::new()).unwrap()
    }

    #[test]
    fn parse_eval_round_trip() {
        let e = Expr::parse("(a + cbrt(x - 0.125)) * exp(-x) + b").unwrap();
        let mut params = Params::new();
        params.insert("a".into(), IntervalScalar::point(0.5));
        params.insert("b".into(), IntervalScalar::point(0.25));
        let v = e.eval(IntervalScalar::point(0.125), &params).unwrap();
        // (0.5 + 0) * e^-0.125 + 0.25
        let expect = 0.5 * (-0.125f64).exp() + 0.25;
        assert!(v.contains(expect));

        // Display form re-parses to the same tree.
        let printed = e.to_string();
        assert_eq!(Expr::parse(&printed).unwrap(), e);
    }

    #[test]
    fn symbolic_derivative_matches_finite_differences() {
        let e = Expr::parse("c * (10*x*exp(-10*x/3))^19 + b").unwrap();
        let mut params = Params::new();
        params.insert("c".into(), IntervalScalar::point(0.121));
        params.insert("b".into(), IntervalScalar::point(0.023));
        let d = e.deriv();
        for &x in &[0.35, 0.4, 0.55, 0.8] {
            let h = 1e-6;
            let fd = (e
                .eval(IntervalScalar::point(x + h), &params)
                .unwrap()
                .midpoint()
                - e.eval(IntervalScalar::point(x - h), &params)
                    .unwrap()
                    .midpoint())
                / (2.0 * h);
            let sym = d.eval(IntervalScalar::point(x), &params).unwrap();
            assert!(
                (sym.midpoint() - fd).abs() <= 1e-4 * (1.0 + sym.midpoint().abs()),
                "x={x}: sym={} fd={fd}",
                sym.midpoint()
            );
        }
    }

    #[test]
    fn fractional_power_derivative_keeps_signed_root_domain() {
        // d/dx cbrt(x - 1/8) = (1/3)(x-1/8)^(-2/3): defined left of 1/8.
        let e = Expr::parse("cbrt(x - 0.125)").unwrap();
        let d = e.deriv();
        let v = eval1(&d, 0.0);
        assert!(v.contains(1.0 / 3.0 * 0.125f64.powf(-2.0 / 3.0)));
        // Straddling the singularity is a domain error, not a panic.
        assert!(d
            .eval(IntervalScalar::new(0.12, 0.13), &Params::new())
            .is_err());
    }

    #[test]
    fn integer_powers_of_negative_bases_parse() {
        let e = Expr::parse("x^3 - x^2").unwrap();
        let v = eval1(&e, -2.0);
        assert!(v.contains(-12.0));
    }
}
