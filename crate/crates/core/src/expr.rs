//! Polynomial expressions with exact rational coefficients.
//!
//! An [`Expr`] is kept in monomial normal form at all times: a sorted map from
//! exponent vectors to nonzero coefficients.  Structural equality therefore
//! decides semantic equality, which is what exact flag ranks need.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

/// Exponent vector; entry `i` is the power of variable `i + 1`.
pub type Monomial = Vec<u32>;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact conversion of a finite float (every f64 is a dyadic rational).
pub fn rat_from_f64(x: f64) -> Rat {
    Rat::from_float(x).expect("finite float")
}

/// Nearest rational with the given power-of-ten denominator.  Used to snap
/// floating sample points before exact chart construction, which keeps the
/// rational arithmetic small.
pub fn rat_snap(x: f64, decimals: u32) -> Rat {
    let scale = 10f64.powi(decimals as i32);
    let num = (x * scale).round();
    Rat::new(
        BigInt::from(num as i64),
        BigInt::from(10i64.pow(decimals)),
    )
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Huge numerators/denominators: divide in floating point after scaling.
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Expr {
    nvars: usize,
    terms: BTreeMap<Monomial, Rat>,
}

impl Expr {
    pub fn zero(nvars: usize) -> Self {
        Expr { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: Rat) -> Self {
        let mut e = Expr::zero(nvars);
        if !c.is_zero() {
            e.terms.insert(vec![0; nvars], c);
        }
        e
    }

    pub fn one(nvars: usize) -> Self {
        Expr::constant(nvars, Rat::one())
    }

    /// The coordinate function `x_{index+1}` (0-based index).
    pub fn var(nvars: usize, index: usize) -> Self {
        assert!(index < nvars, "variable index out of range");
        let mut m = vec![0; nvars];
        m[index] = 1;
        Expr::monomial(m, Rat::one())
    }

    pub fn monomial(exps: Monomial, c: Rat) -> Self {
        let nvars = exps.len();
        let mut e = Expr::zero(nvars);
        if !c.is_zero() {
            e.terms.insert(exps, c);
        }
        e
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Some(c) if the expression is a constant (including zero).
    pub fn as_constant(&self) -> Option<Rat> {
        match self.terms.len() {
            0 => Some(Rat::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.iter().all(|&e| e == 0).then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|m| m.iter().sum()).max().unwrap_or(0)
    }

    /// Largest power of each variable that occurs.
    pub fn max_powers(&self) -> Vec<u32> {
        let mut out = vec![0; self.nvars];
        for m in self.terms.keys() {
            for (o, &e) in out.iter_mut().zip(m) {
                *o = (*o).max(e);
            }
        }
        out
    }

    fn add_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Expr {
        Expr {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }

    pub fn scale(&self, s: &Rat) -> Expr {
        if s.is_zero() {
            return Expr::zero(self.nvars);
        }
        Expr {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        assert_eq!(self.nvars, other.nvars);
        let mut out = Expr::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let m: Monomial = ma.iter().zip(mb).map(|(a, b)| a + b).collect();
                out.add_term(m, ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Expr {
        let mut acc = Expr::one(self.nvars);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Exact partial derivative with respect to variable `index` (0-based).
    pub fn diff(&self, index: usize) -> Expr {
        let mut out = Expr::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m[index];
            if e == 0 {
                continue;
            }
            let mut m2 = m.clone();
            m2[index] = e - 1;
            out.add_term(m2, c * rat_int(e as i64));
        }
        out
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                let mut v = rat_to_f64(c);
                for (xi, &e) in x.iter().zip(m) {
                    if e > 0 {
                        v *= xi.powi(e as i32);
                    }
                }
                v
            })
            .sum()
    }

    pub fn eval_rat(&self, x: &[Rat]) -> Rat {
        let mut acc = Rat::zero();
        for (m, c) in &self.terms {
            let mut v = c.clone();
            for (xi, &e) in x.iter().zip(m) {
                if e > 0 {
                    v *= num_traits::pow(xi.clone(), e as usize);
                }
            }
            acc += v;
        }
        acc
    }

    /// Substitute `vars[i]` for variable `i`.  All substituted expressions must
    /// share one variable count, which becomes the result's.
    pub fn compose(&self, vars: &[Expr]) -> Expr {
        assert_eq!(vars.len(), self.nvars);
        let nv = vars.first().map(|v| v.nvars).unwrap_or(0);
        let maxp = self.max_powers();
        // Power cache per variable.
        let powers: Vec<Vec<Expr>> = vars
            .iter()
            .zip(&maxp)
            .map(|(v, &p)| {
                let mut row = vec![Expr::one(nv)];
                for k in 1..=p as usize {
                    let next = row[k - 1].mul(v);
                    row.push(next);
                }
                row
            })
            .collect();
        let mut out = Expr::zero(nv);
        for (m, c) in &self.terms {
            let mut t = Expr::constant(nv, c.clone());
            for (i, &e) in m.iter().enumerate() {
                if e > 0 {
                    t = t.mul(&powers[i][e as usize]);
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// Re-embed into a space with more variables (new variables appended).
    pub fn extend_vars(&self, nvars: usize) -> Expr {
        assert!(nvars >= self.nvars);
        Expr {
            nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| {
                    let mut m2 = m.clone();
                    m2.resize(nvars, 0);
                    (m2, c.clone())
                })
                .collect(),
        }
    }

    pub fn weighted_degree_of(m: &[u32], w: &[u32]) -> u32 {
        m.iter().zip(w).map(|(e, wi)| e * wi).sum()
    }

    /// Smallest weighted degree of a monomial, `None` for the zero polynomial.
    pub fn weighted_order(&self, w: &[u32]) -> Option<u32> {
        self.terms.keys().map(|m| Expr::weighted_degree_of(m, w)).min()
    }

    /// Keep only monomials of weighted degree exactly `d`.
    pub fn weighted_part(&self, w: &[u32], d: u32) -> Expr {
        Expr {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| Expr::weighted_degree_of(m, w) == d)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Canonical sign: flips so that the leading coefficient is positive.
    /// Returns the normalized expression and whether it was negated.
    pub fn sign_normalized(&self) -> (Expr, bool) {
        match self.terms.iter().next_back() {
            Some((_, c)) if c.is_negative() => (self.neg(), true),
            _ => (self.clone(), false),
        }
    }

    /// Print using a variable prefix (`x` for fields, `t` for stratum maps).
    pub fn display_with(&self, prefix: &str) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut s = String::new();
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if k == 0 {
                if neg {
                    s.push('-');
                }
            } else {
                s.push_str(if neg { " - " } else { " + " });
            }
            let is_const = m.iter().all(|&e| e == 0);
            let mut factors: Vec<String> = Vec::new();
            if !a.is_one() || is_const {
                if a.is_integer() {
                    factors.push(a.numer().to_string());
                } else {
                    factors.push(format!("{}/{}", a.numer(), a.denom()));
                }
            }
            for (i, &e) in m.iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(format!("{prefix}{}", i + 1)),
                    _ => factors.push(format!("{prefix}{}^{e}", i + 1)),
                }
            }
            s.push_str(&factors.join("*"));
        }
        s
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_with("x"))
    }
}

/// Floating-point evaluator for a polynomial, flattened for speed.
#[derive(Clone, Debug, Default)]
pub struct CompiledExpr {
    coefs: Vec<f64>,
    starts: Vec<u32>,
    factors: Vec<(u16, u16)>,
}

impl CompiledExpr {
    pub fn new(e: &Expr) -> Self {
        let mut c = CompiledExpr::default();
        for (m, q) in e.terms() {
            c.coefs.push(rat_to_f64(q));
            c.starts.push(c.factors.len() as u32);
            for (i, &p) in m.iter().enumerate() {
                if p > 0 {
                    c.factors.push((i as u16, p as u16));
                }
            }
        }
        c.starts.push(c.factors.len() as u32);
        c
    }

    pub fn is_zero(&self) -> bool {
        self.coefs.is_empty()
    }

    /// Evaluate against a power table: `pw[var * stride + e] = x_var^e`.
    #[inline]
    pub fn eval_table(&self, pw: &[f64], stride: usize) -> f64 {
        let mut acc = 0.0;
        for (t, &c) in self.coefs.iter().enumerate() {
            let mut v = c;
            let (a, b) = (self.starts[t] as usize, self.starts[t + 1] as usize);
            for &(i, e) in &self.factors[a..b] {
                v *= pw[i as usize * stride + e as usize];
            }
            acc += v;
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (t, &c) in self.coefs.iter().enumerate() {
            let mut v = c;
            let (a, b) = (self.starts[t] as usize, self.starts[t + 1] as usize);
            for &(i, e) in &self.factors[a..b] {
                v *= x[i as usize].powi(e as i32);
            }
            acc += v;
        }
        acc
    }
}

/// Fill a power table for `x` with powers `0..stride`.
#[inline]
pub fn fill_powers(x: &[f64], stride: usize, pw: &mut Vec<f64>) {
    pw.resize(x.len() * stride, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut pw[i * stride..(i + 1) * stride];
        row[0] = 1.0;
        for e in 1..stride {
            row[e] = row[e - 1] * xi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize, i: usize) -> Expr {
        Expr::var(n, i)
    }

    #[test]
    fn power_rule() {
        let e = x(1, 0).pow(2).scale(&rat(1, 2));
        assert_eq!(e.diff(0), x(1, 0));
    }

    #[test]
    fn diff_of_other_variable_is_zero() {
        assert!(x(2, 0).diff(1).is_zero());
    }

    #[test]
    fn product_rule() {
        let e = x(2, 0).mul(&x(2, 1));
        assert_eq!(e.diff(0), x(2, 1));
    }

    #[test]
    fn cancellation_is_structural() {
        let e = x(2, 0).add(&x(2, 1)).sub(&x(2, 1)).sub(&x(2, 0));
        assert!(e.is_zero());
        assert_eq!(e, Expr::zero(2));
    }

    #[test]
    fn compose_and_eval() {
        // (x1 + x2)^2 at x1 = t, x2 = 2t  ->  9 t^2
        let e = x(2, 0).add(&x(2, 1)).pow(2);
        let t = x(1, 0);
        let c = e.compose(&[t.clone(), t.scale(&rat_int(2))]);
        assert_eq!(c, t.pow(2).scale(&rat_int(9)));
        assert_eq!(c.eval_rat(&[rat(1, 3)]), rat_int(1));
    }

    #[test]
    fn display_forms() {
        let e = x(3, 0).pow(2).scale(&rat(1, 2)).sub(&x(3, 1)).add(&Expr::constant(3, rat_int(3)));
        assert_eq!(e.display_with("x"), "1/2*x1^2 - x2 + 3");
        assert_eq!(Expr::zero(2).to_string(), "0");
        assert_eq!(x(2, 1).neg().to_string(), "-x2");
    }

    #[test]
    fn compiled_matches_exact() {
        let e = x(2, 0).pow(3).scale(&rat(-2, 7)).add(&x(2, 1).mul(&x(2, 0)));
        let c = CompiledExpr::new(&e);
        let p = [0.3, -1.7];
        let mut pw = Vec::new();
        fill_powers(&p, 4, &mut pw);
        assert!((c.eval(&p) - e.eval_f64(&p)).abs() < 1e-14);
        assert!((c.eval_table(&pw, 4) - e.eval_f64(&p)).abs() < 1e-14);
    }

    #[test]
    fn weighted_parts() {
        // x2 has weight 2: x1^2 and x2 are both degree 2.
        let e = x(2, 0).pow(2).add(&x(2, 1)).add(&x(2, 0));
        let w = [1, 2];
        assert_eq!(e.weighted_order(&w), Some(1));
        assert_eq!(e.weighted_part(&w, 2), x(2, 0).pow(2).add(&x(2, 1)));
    }

    #[test]
    fn snapping() {
        assert_eq!(rat_snap(0.25, 6), rat(1, 4));
        assert_eq!(rat_from_f64(-0.5), rat(-1, 2));
    }
}
