//! Lexer and recursive-descent parser for coefficient expressions.
//!
//! Grammar (usual precedence, `^` binds tightest and takes an integer):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | '+' unary | power
//! power  := atom ('^' INT)?
//! atom   := NUMBER | VAR | '(' expr ')'
//! ```
//!
//! Numbers are integers or decimal literals (converted exactly, `0.1` is
//! `1/10`).  Division is only allowed by nonzero constants.

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::expr::{Expr, Rat};

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Num(Rat),
    Ident(String),
    Sym(char),
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

/// Tokenize a single source line (comments already stripped).
pub fn lex(src: &str, line: usize, col0: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let int_part: String = chars[start..i].iter().collect();
            let mut frac_part = String::new();
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                let fs = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                frac_part = chars[fs..i].iter().collect();
            }
            let mut exp: i64 = 0;
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                let mut sign = 1;
                if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                    if chars[j] == '-' {
                        sign = -1;
                    }
                    j += 1;
                }
                let es = j;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j > es {
                    let digits: String = chars[es..j].iter().collect();
                    exp = sign * digits.parse::<i64>().map_err(|_| Error::Syntax {
                        line,
                        col,
                        msg: "exponent too large".into(),
                    })?;
                    i = j;
                }
            }
            let digits = format!("{int_part}{frac_part}");
            let digits = if digits.is_empty() { "0".to_string() } else { digits };
            let num: BigInt = digits.parse().map_err(|_| Error::Syntax {
                line,
                col,
                msg: format!("bad number `{digits}`"),
            })?;
            let shift = exp - frac_part.len() as i64;
            if shift.abs() > 400 {
                return Err(Error::Syntax { line, col, msg: "number out of range".into() });
            }
            let ten = BigInt::from(10);
            let value = if shift >= 0 {
                Rat::from_integer(num * num_traits::pow(ten, shift as usize))
            } else {
                Rat::new(num, num_traits::pow(ten, (-shift) as usize))
            };
            out.push(Token { tok: Tok::Num(value), line, col });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line, col });
        } else if "+-*/^()[],;:=".contains(c) {
            out.push(Token { tok: Tok::Sym(c), line, col });
            i += 1;
        } else {
            return Err(Error::Syntax { line, col, msg: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

/// Which identifiers denote variables: `prefix1 .. prefix{count}`.
#[derive(Clone, Copy, Debug)]
pub struct VarSpec {
    pub prefix: char,
    pub count: usize,
}

impl VarSpec {
    pub fn x(n: usize) -> Self {
        VarSpec { prefix: 'x', count: n }
    }
    pub fn t(k: usize) -> Self {
        VarSpec { prefix: 't', count: k }
    }
    pub fn none() -> Self {
        VarSpec { prefix: 'x', count: 0 }
    }
}

pub struct Cursor<'a> {
    pub toks: &'a [Token],
    pub pos: usize,
    /// Position reported when input runs out.
    pub end: (usize, usize),
}

impl<'a> Cursor<'a> {
    pub fn new(toks: &'a [Token], end: (usize, usize)) -> Self {
        Cursor { toks, pos: 0, end }
    }

    pub fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    pub fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.col)).unwrap_or(self.end)
    }

    pub fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (line, col) = self.here();
        Err(Error::Syntax { line, col, msg: msg.into() })
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn is_sym(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Sym(s), .. }) if *s == c)
    }

    pub fn eat_sym(&mut self, c: char) -> bool {
        if self.is_sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    pub fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Token { tok: Tok::Ident(s), .. }) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Token { tok: Tok::Ident(s), .. }) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected `{kw}`")),
        }
    }

    pub fn integer(&mut self) -> Result<u64> {
        match self.peek() {
            Some(Token { tok: Tok::Num(r), .. }) if r.is_integer() => {
                let v = r.to_integer();
                let out: u64 = v.try_into().map_err(|_| Error::Syntax {
                    line: self.here().0,
                    col: self.here().1,
                    msg: "integer out of range".into(),
                })?;
                self.pos += 1;
                Ok(out)
            }
            _ => self.err("expected non-negative integer"),
        }
    }

    pub fn expr(&mut self, vars: VarSpec) -> Result<Expr> {
        let mut acc = self.term(vars)?;
        loop {
            if self.eat_sym('+') {
                acc = acc.add(&self.term(vars)?);
            } else if self.eat_sym('-') {
                acc = acc.sub(&self.term(vars)?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self, vars: VarSpec) -> Result<Expr> {
        let mut acc = self.unary(vars)?;
        loop {
            if self.eat_sym('*') {
                acc = acc.mul(&self.unary(vars)?);
            } else if self.is_sym('/') {
                let (line, col) = self.here();
                self.pos += 1;
                let d = self.unary(vars)?;
                match d.as_constant() {
                    Some(c) if !c.is_zero() => acc = acc.scale(&(Rat::one() / c)),
                    Some(_) => return Err(Error::Syntax { line, col, msg: "division by zero".into() }),
                    None => {
                        return Err(Error::Syntax {
                            line,
                            col,
                            msg: "division by a non-constant expression".into(),
                        })
                    }
                }
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self, vars: VarSpec) -> Result<Expr> {
        if self.eat_sym('-') {
            Ok(self.unary(vars)?.neg())
        } else if self.eat_sym('+') {
            self.unary(vars)
        } else {
            self.power(vars)
        }
    }

    fn power(&mut self, vars: VarSpec) -> Result<Expr> {
        let base = self.atom(vars)?;
        if self.eat_sym('^') {
            let k = self.integer()?;
            if k > 64 {
                return self.err("exponent too large");
            }
            Ok(base.pow(k as u32))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self, vars: VarSpec) -> Result<Expr> {
        let Some(t) = self.peek().cloned() else {
            return self.err("unexpected end of expression");
        };
        match t.tok {
            Tok::Num(r) => {
                self.pos += 1;
                Ok(Expr::constant(vars.count, r))
            }
            Tok::Ident(name) => {
                self.pos += 1;
                let idx = name
                    .strip_prefix(vars.prefix)
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&i| i >= 1 && i <= vars.count && !name[1..].starts_with('0'));
                match idx {
                    Some(i) => Ok(Expr::var(vars.count, i - 1)),
                    None => Err(Error::UnknownVariable { line: t.line, col: t.col, name }),
                }
            }
            Tok::Sym('(') => {
                self.pos += 1;
                let e = self.expr(vars)?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Sym(c) => self.err(format!("unexpected `{c}`")),
        }
    }

    /// A constant expression such as `-1/2` or `0.25`.
    pub fn constant(&mut self) -> Result<Rat> {
        let (line, col) = self.here();
        let e = self.expr(VarSpec::none())?;
        e.as_constant().ok_or(Error::Syntax { line, col, msg: "expected a constant".into() })
    }

    /// `( e, e, ... )`
    pub fn expr_tuple(&mut self, vars: VarSpec) -> Result<Vec<Expr>> {
        self.expect_sym('(')?;
        let mut out = vec![self.expr(vars)?];
        while self.eat_sym(',') {
            out.push(self.expr(vars)?);
        }
        self.expect_sym(')')?;
        Ok(out)
    }

    /// `[lo,hi] x [lo,hi] x ...`
    pub fn box_spec(&mut self) -> Result<Vec<(Rat, Rat)>> {
        let mut out = Vec::new();
        loop {
            self.expect_sym('[')?;
            let lo = self.constant()?;
            self.expect_sym(',')?;
            let hi = self.constant()?;
            if hi < lo {
                return self.err("interval upper end below lower end");
            }
            self.expect_sym(']')?;
            out.push((lo, hi));
            match self.peek() {
                Some(Token { tok: Tok::Ident(s), .. }) if s == "x" => self.pos += 1,
                _ => return Ok(out),
            }
        }
    }
}

/// Parse a standalone expression in variables `x1..xn`.
pub fn parse_expr(src: &str, n: usize) -> Result<Expr> {
    parse_expr_with(src, VarSpec::x(n))
}

pub fn parse_expr_with(src: &str, vars: VarSpec) -> Result<Expr> {
    let toks = lex(src, 1, 1)?;
    let mut c = Cursor::new(&toks, (1, src.chars().count() + 1));
    let e = c.expr(vars)?;
    if !c.at_end() {
        return c.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, rat_int};

    #[test]
    fn precedence_and_rationals() {
        let e = parse_expr("x1^2/2 - 3*x2 + 1/3", 2).unwrap();
        let want = Expr::var(2, 0)
            .pow(2)
            .scale(&rat(1, 2))
            .sub(&Expr::var(2, 1).scale(&rat_int(3)))
            .add(&Expr::constant(2, rat(1, 3)));
        assert_eq!(e, want);
    }

    #[test]
    fn decimals_are_exact() {
        assert_eq!(parse_expr("0.1", 1).unwrap().as_constant(), Some(rat(1, 10)));
        assert_eq!(parse_expr("2.5e-1", 1).unwrap().as_constant(), Some(rat(1, 4)));
    }

    #[test]
    fn unary_minus_and_parens() {
        let e = parse_expr("-(x1 - x2)^2", 2).unwrap();
        let d = Expr::var(2, 0).sub(&Expr::var(2, 1));
        assert_eq!(e, d.pow(2).neg());
    }

    #[test]
    fn unknown_variable_reports_position() {
        match parse_expr("x1 + x4", 3) {
            Err(Error::UnknownVariable { col, name, .. }) => {
                assert_eq!(col, 6);
                assert_eq!(name, "x4");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_expr("y", 3), Err(Error::UnknownVariable { .. })));
        assert!(matches!(parse_expr("x0", 3), Err(Error::UnknownVariable { .. })));
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_expr("x1 +", 1), Err(Error::Syntax { col: 5, .. })));
        assert!(matches!(parse_expr("x1 / x1", 1), Err(Error::Syntax { .. })));
        assert!(matches!(parse_expr("x1 $ 2", 1), Err(Error::Syntax { col: 4, .. })));
        assert!(matches!(parse_expr("(x1", 1), Err(Error::Syntax { .. })));
    }
}
