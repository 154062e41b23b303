//! Privileged coordinates, nilpotent approximation and anisotropic dilations.
//!
//! The chart starts from linear coordinates y = A⁻¹(x − p) dual to an
//! adapted frame and adds polynomial corrections
//!
//! ```text
//! z_j = y_j + Σ c_{j,α} y^α      (|α| ≥ 2, weighted degree of α < w_j)
//! ```
//!
//! with the coefficients fixed by the linear conditions (X_I z_j)(p) = 0 for
//! every word I of length < w_j.  Those conditions say that z_j vanishes to
//! nonholonomic order w_j, which is the definition of privileged
//! coordinates.  Everything is exact over the rationals, and the corrected
//! chart is triangular by weight, so its inverse is polynomial too.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{rat_from_f64, rat_int, rat_to_f64, Expr, Monomial, Rat};
use crate::field::VectorField;
use crate::flag::{flag_at_exact, FlagData, DEFAULT_DEPTH};
use crate::frames::{adapted_frames, AdaptedFrame};
use crate::linalg::{inverse_rat, solve_rat};
use crate::structure::SRStructure;

#[derive(Clone, Debug, Serialize)]
pub struct PrivilegedChart {
    #[serde(skip)]
    pub base: Vec<Rat>,
    pub weights: Vec<u32>,
    /// Frame matrix A (columns are the frame vectors at p).
    #[serde(skip)]
    pub a: Vec<Vec<Rat>>,
    /// z as polynomials in x.
    #[serde(skip)]
    pub forward: Vec<Expr>,
    /// x as polynomials in z.
    #[serde(skip)]
    pub inverse: Vec<Expr>,
    /// Whether any nonlinear correction was needed.
    pub corrected: bool,
}

impl PrivilegedChart {
    pub fn to_chart(&self, x: &[f64]) -> Vec<f64> {
        self.forward.iter().map(|e| e.eval_f64(x)).collect()
    }

    pub fn from_chart(&self, z: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|e| e.eval_f64(z)).collect()
    }

    /// |det A|, the Jacobian of z ↦ x at the origin.
    pub fn det_a(&self) -> f64 {
        rat_to_f64(&crate::linalg::det_rat(&self.a).abs())
    }

    /// |det D(z ↦ x)| at z.
    pub fn inverse_jacobian(&self, z: &[f64]) -> f64 {
        let n = z.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.inverse[i].diff(j).eval_f64(z));
        m.determinant().abs()
    }

    pub fn display(&self) -> Vec<String> {
        self.forward.iter().map(|e| e.display_with("x")).collect()
    }
}

/// Nonholonomic derivatives X_I f over all words I of length exactly `len`.
fn word_derivatives(fields: &[VectorField], f: &Expr, len: usize) -> Vec<Expr> {
    let mut cur = vec![f.clone()];
    for _ in 0..len {
        let mut next = Vec::with_capacity(cur.len() * fields.len());
        for g in &cur {
            for x in fields {
                next.push(x.apply(g));
            }
        }
        cur = next;
    }
    cur
}

fn constant_term(e: &Expr) -> Rat {
    let zero = vec![Rat::zero(); e.nvars()];
    e.eval_rat(&zero)
}

/// Monomials with total degree ≥ 2 and weighted degree < `bound`.
fn correction_monomials(w: &[u32], bound: u32) -> Vec<Monomial> {
    fn rec(i: usize, w: &[u32], left: u32, cur: &mut Monomial, out: &mut Vec<Monomial>) {
        if i == w.len() {
            if cur.iter().sum::<u32>() >= 2 {
                out.push(cur.clone());
            }
            return;
        }
        for e in 0..=left / w[i] {
            cur[i] = e;
            rec(i + 1, w, left - e * w[i], cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    if bound > 0 {
        rec(0, w, bound - 1, &mut vec![0; w.len()], &mut out);
    }
    out
}

/// Build privileged coordinates at `p` along an adapted frame.
pub fn privileged_chart(s: &SRStructure, p: &[Rat], frame: &AdaptedFrame) -> Result<PrivilegedChart> {
    let n = s.dim;
    let w = frame.levels.clone();
    let a = frame.matrix_exact();
    let ainv = inverse_rat(&a).ok_or_else(|| Error::ChartDegenerate("frame matrix is singular".into()))?;
    // x = p + A y, as expressions in y.
    let x_of_y: Vec<Expr> = (0..n)
        .map(|i| {
            let mut e = Expr::constant(n, p[i].clone());
            for j in 0..n {
                e = e.add(&Expr::var(n, j).scale(&a[i][j]));
            }
            e
        })
        .collect();
    // Fields in y coordinates: A⁻¹ X(p + A y).
    let fy: Vec<VectorField> = s
        .fields
        .iter()
        .map(|x| {
            let comps: Vec<Expr> = x.comps().iter().map(|c| c.compose(&x_of_y)).collect();
            VectorField::new(
                (0..n)
                    .map(|k| {
                        let mut e = Expr::zero(n);
                        for l in 0..n {
                            if !ainv[k][l].is_zero() {
                                e = e.add(&comps[l].scale(&ainv[k][l]));
                            }
                        }
                        e
                    })
                    .collect(),
            )
        })
        .collect();
    let mut z_of_y: Vec<Expr> = Vec::with_capacity(n);
    let mut corrected = false;
    for j in 0..n {
        let yj = Expr::var(n, j);
        let monos = correction_monomials(&w, w[j]);
        if monos.is_empty() || w[j] <= 2 {
            z_of_y.push(yj);
            continue;
        }
        let basis: Vec<Expr> = monos.iter().map(|m| Expr::monomial(m.clone(), rat_int(1))).collect();
        let mut rows: Vec<Vec<Rat>> = Vec::new();
        let mut rhs: Vec<Rat> = Vec::new();
        for len in 1..w[j] as usize {
            let dy = word_derivatives(&fy, &yj, len);
            let dm: Vec<Vec<Expr>> = basis.iter().map(|b| word_derivatives(&fy, b, len)).collect();
            for (r, d) in dy.iter().enumerate() {
                rows.push(dm.iter().map(|col| constant_term(&col[r])).collect());
                rhs.push(-constant_term(d));
            }
        }
        let c = solve_rat(&rows, &rhs)
            .ok_or_else(|| Error::ChartDegenerate(format!("no polynomial correction makes coordinate {} privileged", j + 1)))?;
        let mut zj = yj;
        for (ci, b) in c.iter().zip(&basis) {
            if !ci.is_zero() {
                corrected = true;
                zj = zj.add(&b.scale(ci));
            }
        }
        z_of_y.push(zj);
    }
    // Forward map z(x).
    let y_of_x: Vec<Expr> = (0..n)
        .map(|k| {
            let mut e = Expr::zero(n);
            for l in 0..n {
                if !ainv[k][l].is_zero() {
                    let xl = Expr::var(n, l).sub(&Expr::constant(n, p[l].clone()));
                    e = e.add(&xl.scale(&ainv[k][l]));
                }
            }
            e
        })
        .collect();
    let forward: Vec<Expr> = z_of_y.iter().map(|z| z.compose(&y_of_x)).collect();
    // Inverse y(z) by increasing weight: y_j = z_j − (z_j(y) − y_j)(y(z)).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| w[j]);
    let mut y_of_z: Vec<Expr> = (0..n).map(|j| Expr::var(n, j)).collect();
    for &j in &order {
        let corr = z_of_y[j].sub(&Expr::var(n, j));
        if !corr.is_zero() {
            y_of_z[j] = Expr::var(n, j).sub(&corr.compose(&y_of_z));
        }
    }
    let inverse: Vec<Expr> = x_of_y.iter().map(|x| x.compose(&y_of_z)).collect();
    Ok(PrivilegedChart { base: p.to_vec(), weights: w, a, forward, inverse, corrected })
}

#[derive(Clone, Debug, Serialize)]
pub struct NilpotentApprox {
    pub point: Vec<f64>,
    #[serde(skip)]
    pub point_exact: Vec<Rat>,
    pub weights: Vec<u32>,
    pub growth: Vec<usize>,
    pub q: u32,
    pub frame: AdaptedFrame,
    pub chart: PrivilegedChart,
    /// Truncated fields in chart coordinates.
    #[serde(skip)]
    pub fields: Vec<VectorField>,
    /// ω(∂_{z_1}, …, ∂_{z_n}) at the base point, i.e. |ω_p(Y_1, …, Y_n)|.
    pub density0: f64,
}

impl NilpotentApprox {
    /// The approximation as a structure on R^n with Lebesgue volume.
    pub fn as_structure(&self) -> SRStructure {
        let dim = self.fields[0].dim();
        let mut s = SRStructure::from_fields(self.fields.clone(), Expr::one(dim), vec![(rat_int(-2), rat_int(2)); dim]);
        s.probe = Some(vec![Rat::zero(); dim]);
        s
    }

    /// Canonical text of the truncated fields and weights.  Equal keys mean
    /// equal nilpotent structures in chart coordinates.
    pub fn key(&self) -> String {
        let f: Vec<String> = self.fields.iter().map(|x| x.to_string()).collect();
        format!("{:?}|{}", self.weights, f.join(";"))
    }

    /// Exact check of homogeneity of degree −1: every component k satisfies
    /// X̂^k(δ_λ z) = λ^{w_k − 1} X̂^k(z) as a polynomial identity in (z, λ).
    pub fn is_homogeneous(&self) -> bool {
        homogeneous_of_degree_minus_one(&self.fields, &self.weights)
    }

    pub fn fields_display(&self) -> Vec<String> {
        self.fields.iter().map(|x| x.to_string()).collect()
    }
}

pub fn homogeneous_of_degree_minus_one(fields: &[VectorField], w: &[u32]) -> bool {
    let n = w.len();
    let lam = Expr::var(n + 1, n);
    let dil: Vec<Expr> = (0..n).map(|i| Expr::var(n + 1, i).mul(&lam.pow(w[i]))).collect();
    fields.iter().all(|x| {
        (0..n).all(|k| {
            let lhs = x.comp(k).compose(&dil);
            let rhs = x.comp(k).extend_vars(n + 1).mul(&lam.pow(w[k] - 1));
            lhs == rhs
        })
    })
}

/// Truncate the structure at `p` in the given privileged chart.
pub fn nilpotentize(s: &SRStructure, p: &[Rat], frame: &AdaptedFrame, chart: &PrivilegedChart, flag: &FlagData) -> Result<NilpotentApprox> {
    let n = s.dim;
    let w = &chart.weights;
    let mut fields = Vec::with_capacity(s.m());
    for x in &s.fields {
        let mut comps = Vec::with_capacity(n);
        for k in 0..n {
            // (X z_k) ∘ x(z)
            let e = x.apply(&chart.forward[k]).compose(&chart.inverse);
            if let Some(ord) = e.weighted_order(w) {
                if ord + 1 < w[k] {
                    return Err(Error::ChartDegenerate(format!(
                        "component {} has a term of weighted degree {} below {}",
                        k + 1,
                        ord,
                        w[k] - 1
                    )));
                }
            }
            comps.push(e.weighted_part(w, w[k] - 1));
        }
        fields.push(VectorField::new(comps));
    }
    let approx_s = SRStructure::from_fields(fields.clone(), Expr::one(n), vec![(rat_int(-1), rat_int(1)); n]);
    let zero = vec![Rat::zero(); n];
    let f0 = flag_at_exact(&approx_s, &zero, DEFAULT_DEPTH)
        .map_err(|e| Error::TruncationNotGenerating(format!("truncated family at 0: {e}")))?;
    if f0.growth != flag.growth {
        return Err(Error::TruncationNotGenerating(format!("growth {:?} at 0, expected {:?}", f0.growth, flag.growth)));
    }
    let density0 = rat_to_f64(&(s.volume.eval_rat(p) * crate::linalg::det_rat(&chart.a)).abs());
    Ok(NilpotentApprox {
        point: p.iter().map(rat_to_f64).collect(),
        point_exact: p.to_vec(),
        weights: w.clone(),
        growth: flag.growth.clone(),
        q: flag.q,
        frame: frame.clone(),
        chart: chart.clone(),
        fields,
        density0,
    })
}

/// Flag, first adapted frame, chart and truncation at an exact point.
pub fn nilpotent_at_exact(s: &SRStructure, p: &[Rat]) -> Result<NilpotentApprox> {
    let flag = flag_at_exact(s, p, DEFAULT_DEPTH)?;
    let frames = adapted_frames(s, p, &flag)?;
    let chart = privileged_chart(s, p, &frames[0])?;
    nilpotentize(s, p, &frames[0], &chart, &flag)
}

/// Same at a float point, converted to a rational without rounding.
pub fn nilpotent_at(s: &SRStructure, p: &[f64]) -> Result<NilpotentApprox> {
    let pr: Vec<Rat> = p.iter().map(|&x| rat_from_f64(x)).collect();
    nilpotent_at_exact(s, &pr)
}

/// δ_λ(x) = (λ^{w_1} x_1, …, λ^{w_n} x_n).
pub fn dilate(x: &[f64], lambda: f64, w: &[u32]) -> Vec<f64> {
    x.iter().zip(w).map(|(v, &wi)| v * lambda.powi(wi as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;
    use crate::structure::{grushin, heisenberg, martinet};

    fn at(s: &SRStructure, p: &[Rat]) -> NilpotentApprox {
        nilpotent_at_exact(s, p).unwrap()
    }

    fn is_identity(c: &PrivilegedChart) -> bool {
        let n = c.forward.len();
        (0..n).all(|i| c.forward[i] == Expr::var(n, i) && c.inverse[i] == Expr::var(n, i))
    }

    #[test]
    fn heisenberg_at_origin_is_itself() {
        let h = heisenberg();
        let z = [rat_int(0), rat_int(0), rat_int(0)];
        let na = at(&h, &z);
        assert!(is_identity(&na.chart));
        assert_eq!(na.fields, h.fields);
        assert_eq!(na.weights, vec![1, 1, 2]);
        assert!(na.is_homogeneous());
    }

    #[test]
    fn grushin_charts() {
        let g = grushin();
        let na = at(&g, &[rat_int(0), rat_int(0)]);
        assert!(is_identity(&na.chart));
        assert_eq!(na.weights, vec![1, 2]);
        assert_eq!(na.fields, g.fields);
        let na = at(&g, &[rat_int(1), rat_int(0)]);
        assert_eq!(na.weights, vec![1, 1]);
        assert_eq!(na.chart.forward[0].to_string(), "x1 - 1");
        assert_eq!(na.chart.forward[1].to_string(), "x2");
        assert_eq!(na.fields_display(), ["(1, 0)", "(0, 1)"]);
    }

    #[test]
    fn martinet_singular_already_homogeneous() {
        let m = martinet();
        let na = at(&m, &[rat_int(0), rat_int(0), rat_int(0)]);
        assert_eq!(na.weights, vec![1, 1, 3]);
        assert!(is_identity(&na.chart));
        assert_eq!(na.fields, m.fields);
        assert!(na.is_homogeneous());
    }

    #[test]
    fn martinet_regular_truncation() {
        let m = martinet();
        for t in [rat(1, 2), rat_int(1), rat(-3, 4)] {
            let na = at(&m, &[t.clone(), rat(1, 3), rat_int(2)]);
            assert_eq!(na.weights, vec![1, 1, 2]);
            assert!(na.is_homogeneous());
            assert_eq!(na.fields_display(), ["(1, 0, 0)", "(0, 1, x1)"]);
            assert!((na.density0 - rat_to_f64(&t).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn correction_needed_for_step_three_off_axis() {
        // Engel-type family: corrections appear for the weight-3 coordinate
        // at a generic point.
        let src = "dim = 4\nfield X1 = (1, 0, 0, 0)\nfield X2 = (0, 1, x1, x1^2/2 + x2)\nbox = [-1,1] x [-1,1] x [-1,1] x [-1,1]\n";
        let s = crate::structure::parse_structure(src).unwrap();
        let na = at(&s, &[rat(1, 2), rat(1, 3), rat_int(0), rat_int(0)]);
        assert!(na.chart.corrected);
        assert!(na.is_homogeneous());
        assert_eq!(na.fields_display(), ["(1, 0, 0, 0)", "(0, 1, x1, 1/2*x1^2)"]);
        assert_eq!(na.q, 7);
        // z_j has nonholonomic order w_j: X_I z_j vanishes at p for |I| < w_j.
        for (j, z) in na.chart.forward.iter().enumerate() {
            for len in 1..na.weights[j] as usize {
                for d in word_derivatives(&s.fields, z, len) {
                    assert!(d.eval_rat(&na.point_exact).is_zero(), "coordinate {j} word length {len}");
                }
            }
        }
        // Round trip of the chart.
        let x = [0.6, 0.2, -0.1, 0.3];
        let back = na.chart.from_chart(&na.chart.to_chart(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dilation_group_law() {
        let w = [1, 1, 2];
        assert_eq!(dilate(&[1.0, 1.0, 1.0], 2.0, &w), vec![2.0, 2.0, 4.0]);
        assert_eq!(dilate(&[0.3, -0.2, 0.7], 1.0, &w), vec![0.3, -0.2, 0.7]);
    }
}
