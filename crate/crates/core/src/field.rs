//! Polynomial vector fields and exact Lie brackets.

use std::fmt;

use crate::expr::{Expr, Rat};

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct VectorField {
    comps: Vec<Expr>,
}

impl VectorField {
    pub fn new(comps: Vec<Expr>) -> Self {
        assert!(!comps.is_empty(), "vector field needs at least one component");
        let n = comps.len();
        assert!(comps.iter().all(|c| c.nvars() == n), "components must live on the same space");
        VectorField { comps }
    }

    pub fn zero(n: usize) -> Self {
        VectorField { comps: vec![Expr::zero(n); n] }
    }

    /// The coordinate field ∂_{index+1}.
    pub fn coordinate(n: usize, index: usize) -> Self {
        let mut comps = vec![Expr::zero(n); n];
        comps[index] = Expr::one(n);
        VectorField { comps }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Expr] {
        &self.comps
    }

    pub fn comp(&self, k: usize) -> &Expr {
        &self.comps[k]
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Expr::is_zero)
    }

    /// Directional derivative X f = Σ_j X^j ∂_j f.
    pub fn apply(&self, f: &Expr) -> Expr {
        let mut out = Expr::zero(self.dim());
        for (j, xj) in self.comps.iter().enumerate() {
            if xj.is_zero() {
                continue;
            }
            let d = f.diff(j);
            if !d.is_zero() {
                out = out.add(&xj.mul(&d));
            }
        }
        out
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField { comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField { comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.sub(b)).collect() }
    }

    pub fn neg(&self) -> VectorField {
        VectorField { comps: self.comps.iter().map(Expr::neg).collect() }
    }

    pub fn scale(&self, s: &Rat) -> VectorField {
        VectorField { comps: self.comps.iter().map(|c| c.scale(s)).collect() }
    }

    pub fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval_f64(x)).collect()
    }

    pub fn eval_rat(&self, x: &[Rat]) -> Vec<Rat> {
        self.comps.iter().map(|c| c.eval_rat(x)).collect()
    }

    /// Leading-coefficient sign normalization, used to deduplicate bracket
    /// values up to sign.
    pub fn sign_normalized(&self) -> (VectorField, bool) {
        for c in self.comps.iter().rev() {
            if !c.is_zero() {
                let (_, flipped) = c.sign_normalized();
                return if flipped { (self.neg(), true) } else { (self.clone(), false) };
            }
        }
        (self.clone(), false)
    }

    pub fn display_with(&self, prefix: &str) -> String {
        let parts: Vec<String> = self.comps.iter().map(|c| c.display_with(prefix)).collect();
        format!("({})", parts.join(", "))
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_with("x"))
    }
}

/// [X,Y]^k = Σ_j (X^j ∂_j Y^k − Y^j ∂_j X^k)
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> VectorField {
    assert_eq!(x.dim(), y.dim(), "bracket of fields on different spaces");
    VectorField {
        comps: (0..x.dim()).map(|k| x.apply(y.comp(k)).sub(&y.apply(x.comp(k)))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_expr;

    fn vf(n: usize, src: &[&str]) -> VectorField {
        VectorField::new(src.iter().map(|s| parse_expr(s, n).unwrap()).collect())
    }

    #[test]
    fn grushin_bracket() {
        let x1 = vf(2, &["1", "0"]);
        let x2 = vf(2, &["0", "x1"]);
        assert_eq!(lie_bracket(&x1, &x2), vf(2, &["0", "1"]));
    }

    #[test]
    fn martinet_brackets() {
        let x1 = vf(3, &["1", "0", "0"]);
        let x2 = vf(3, &["0", "1", "x1^2/2"]);
        let b12 = lie_bracket(&x1, &x2);
        assert_eq!(b12, vf(3, &["0", "0", "x1"]));
        assert_eq!(lie_bracket(&x1, &b12), vf(3, &["0", "0", "1"]));
        assert!(lie_bracket(&x2, &b12).is_zero());
    }

    #[test]
    fn self_bracket_vanishes() {
        let x = vf(2, &["x2^2 - x1", "3*x1*x2"]);
        assert!(lie_bracket(&x, &x).is_zero());
    }
}
