//! Sub-Riemannian distance estimates and ball membership.
//!
//! Two routes are combined:
//!
//! * a direct method: piecewise-constant controls on K intervals of [0,1],
//!   minimizing energy subject to the endpoint constraint with an SQP
//!   iteration (damped BFGS on the Lagrangian, ℓ1 merit, second-order
//!   correction), from several seeded starts;
//! * a shooting refinement: the multiplier of the best direct solution is
//!   transported to an initial covector, and Newton's method on the
//!   Hamiltonian endpoint map turns the polygonal path into a smooth normal
//!   extremal.
//!
//! Every reported value is the length of an explicit horizontal path, so it
//! is an upper bound up to the integration and endpoint residual, which the
//! error bar accounts for.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flag::{flag_at, DEFAULT_TOL};

use crate::par::par_map;
use crate::rng::SeedTree;
use crate::structure::SRStructure;
use crate::system::{ControlSystem, Workspace};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Budget {
    /// Multi-start count for the direct method.
    pub starts: usize,
    /// Piecewise-constant control intervals.
    pub intervals: usize,
    /// RK4 substeps per interval.
    pub substeps: usize,
    pub max_iter: usize,
    /// Refine the best direct solution by shooting.
    pub polish: bool,
    pub polish_steps: usize,
    /// Also solve on K/2 intervals to estimate discretization error.
    pub richardson: bool,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { starts: 16, intervals: 32, substeps: 1, max_iter: 200, polish: true, polish_steps: 128, richardson: true }
    }
}

impl Budget {
    /// Cheaper settings for bulk Monte Carlo membership queries.
    pub fn bulk() -> Self {
        Budget { starts: 2, intervals: 16, substeps: 1, max_iter: 100, polish: true, polish_steps: 64, richardson: false }
    }

    /// Two starts, eight intervals, no polish: within about 2% above the
    /// true distance, for membership tests at many scales.
    pub fn coarse() -> Self {
        Budget { starts: 2, intervals: 8, substeps: 1, max_iter: 40, polish: false, polish_steps: 0, richardson: false }
    }

    /// Scale the effort by a positive factor (CLI `--budget`).
    pub fn scaled(&self, f: f64) -> Self {
        let mut b = self.clone();
        b.starts = ((b.starts as f64 * f).round() as usize).max(1);
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Trivial,
    Direct,
    Shooting,
    Bound,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub error: f64,
    pub method: Method,
}

/// Per-base-point data used to scale the endpoint residual: the inverse of an
/// adapted frame at the start point and the weights.
#[derive(Clone, Debug)]
pub struct Scaling {
    ainv: DMatrix<f64>,
    weights: Vec<u32>,
}

impl Scaling {
    pub fn at(s: &SRStructure, p: &[f64]) -> Result<Self> {
        let f = flag_at(s, p, DEFAULT_TOL)?;
        let table = s.brackets();
        let mut cols = Vec::new();
        for words in &f.spanning {
            for w in words {
                let b = table.levels[w.len() - 1].iter().find(|b| &b.word == w).expect("word in table");
                cols.push(b.eval_f64(p));
            }
        }
        let a = DMatrix::from_fn(s.dim, s.dim, |i, j| cols[j][i]);
        let ainv = a.try_inverse().ok_or_else(|| Error::StepFailure("singular adapted frame".into()))?;
        Ok(Scaling { ainv, weights: f.weights })
    }

    /// Homogeneous size of a displacement in adapted linear coordinates.
    pub fn homogeneous_norm(&self, d: &[f64]) -> f64 {
        let y = &self.ainv * DVector::from_column_slice(d);
        y.iter().zip(&self.weights).map(|(v, &w)| v.abs().powf(1.0 / w as f64)).fold(0.0, f64::max)
    }

    pub fn max_weight(&self) -> u32 {
        *self.weights.iter().max().unwrap_or(&1)
    }
}

struct Problem<'a> {
    sys: &'a ControlSystem,
    p: &'a [f64],
    q: &'a [f64],
    /// S = D^{-1} A^{-1}, maps endpoint error to scaled residual.
    smat: DMatrix<f64>,
    s: f64,
    k: usize,
    sub: usize,
    weights: Vec<u32>,
}

struct Eval {
    c: DVector<f64>,
    jc: DMatrix<f64>,
    /// Product of all state tangents, ∂x(1)/∂x(0).
    phi: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(sys: &'a ControlSystem, p: &'a [f64], q: &'a [f64], sc: &Scaling, k: usize, sub: usize) -> Self {
        let d: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
        let s = sc.homogeneous_norm(&d).max(1e-300);
        let dinv = DMatrix::from_diagonal(&DVector::from_iterator(
            sys.n,
            sc.weights.iter().map(|&w| 1.0 / s.powi(w as i32)),
        ));
        Problem { sys, p, q, smat: dinv * &sc.ainv, s, k, sub, weights: sc.weights.clone() }
    }

    fn h(&self) -> f64 {
        1.0 / self.k as f64
    }

    fn endpoint(&self, u: &[f64], ws: &mut Workspace) -> Vec<f64> {
        let m = self.sys.m;
        let mut x = self.p.to_vec();
        for k in 0..self.k {
            self.sys.flow_interval(&mut x, &u[k * m..(k + 1) * m], self.h(), self.sub, None, ws);
        }
        x
    }

    fn residual(&self, u: &[f64], ws: &mut Workspace) -> DVector<f64> {
        let x = self.endpoint(u, ws);
        let e = DVector::from_iterator(self.sys.n, x.iter().zip(self.q).map(|(a, b)| a - b));
        &self.smat * e
    }

    fn eval(&self, u: &[f64], ws: &mut Workspace) -> Eval {
        let n = self.sys.n;
        let m = self.sys.m;
        let w = n + m;
        let mut x = self.p.to_vec();
        let mut tans = vec![0.0; self.k * n * w];
        for k in 0..self.k {
            let t = &mut tans[k * n * w..(k + 1) * n * w];
            self.sys.flow_interval(&mut x, &u[k * m..(k + 1) * m], self.h(), self.sub, Some(t), ws);
        }
        let mut jac = DMatrix::zeros(n, self.k * m);
        let mut pm = DMatrix::<f64>::identity(n, n);
        for k in (0..self.k).rev() {
            let t = &tans[k * n * w..(k + 1) * n * w];
            let a = DMatrix::from_fn(n, n, |r, c| t[r * w + c]);
            let b = DMatrix::from_fn(n, m, |r, c| t[r * w + n + c]);
            let jk = &pm * b;
            jac.view_mut((0, k * m), (n, m)).copy_from(&jk);
            pm = &pm * a;
        }
        let e = DVector::from_iterator(n, x.iter().zip(self.q).map(|(a, b)| a - b));
        Eval { c: &self.smat * e, jc: &self.smat * jac, phi: pm }
    }

    fn length(&self, u: &[f64]) -> f64 {
        let m = self.sys.m;
        u.chunks(m).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() * self.h()
    }

    /// Length needed to close a scaled endpoint residual, heuristically.
    fn closing_length(&self, c: &DVector<f64>) -> f64 {
        2.0 * self.s * c.iter().zip(&self.weights).map(|(v, &w)| v.abs().powf(1.0 / w as f64)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
struct DirectResult {
    u: Vec<f64>,
    length: f64,
    resid: f64,
    closing: f64,
    /// Initial covector estimate transported from the multiplier.
    lambda0: Vec<f64>,
}

fn l1(c: &DVector<f64>) -> f64 {
    c.iter().map(|v| v.abs()).sum()
}

/// SQP on one start.  With `stop_below`, returns as soon as a nearly
/// feasible path shorter than the threshold is found.
fn sqp(pr: &Problem, mut u: Vec<f64>, max_iter: usize, stop_below: Option<f64>, ws: &mut Workspace) -> DirectResult {
    let km = u.len();
    let h = pr.h();
    let s2 = pr.s * pr.s;
    let mut bmat = DMatrix::<f64>::identity(km, km) * (h / s2);
    let mut rho: f64 = 1.0;
    let mut ev = pr.eval(&u, ws);
    let grad = |u: &[f64]| DVector::from_iterator(km, u.iter().map(|v| v * h / s2));
    let fval = |u: &[f64]| 0.5 * h / s2 * u.iter().map(|v| v * v).sum::<f64>();
    let mut nu = DVector::<f64>::zeros(pr.sys.n);
    for _it in 0..max_iter {
        let g = grad(&u);
        let cnorm = ev.c.amax();
        if let Some(tau) = stop_below {
            if cnorm < 1e-9 && pr.length(&u) + pr.closing_length(&ev.c) < tau {
                break;
            }
        }
        let chol = match bmat.clone().cholesky() {
            Some(c) => c,
            None => {
                bmat = DMatrix::identity(km, km) * (h / s2);
                bmat.clone().cholesky().unwrap()
            }
        };
        let mg = chol.solve(&g);
        let mj = chol.solve(&ev.jc.transpose());
        let kkt = &ev.jc * &mj;
        let rhs = &ev.jc * &mg - &ev.c;
        let Some(nu_new) = kkt.clone().lu().solve(&rhs) else { break };
        nu = nu_new;
        let d = &mj * &nu - &mg;
        let dmax = d.amax();
        let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        if cnorm < 1e-13 && dmax < 1e-10 * umax {
            break;
        }
        rho = rho.max(nu.amax() * 1.5 + 1e-3);
        let merit = |f: f64, c: &DVector<f64>| f + rho * l1(c);
        let phi0 = merit(fval(&u), &ev.c);
        let dd = g.dot(&d) - rho * l1(&ev.c);
        let mut alpha = 1.0;
        let mut accepted: Option<Vec<f64>> = None;
        for ls in 0..30 {
            let trial: Vec<f64> = u.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
            let ct = pr.residual(&trial, ws);
            if merit(fval(&trial), &ct) <= phi0 + 1e-4 * alpha * dd.min(0.0) {
                accepted = Some(trial);
                break;
            }
            if ls == 0 {
                // Second-order correction against the Maratos effect.
                let jj = &ev.jc * ev.jc.transpose();
                if let Some(y) = jj.lu().solve(&ct) {
                    let corr = ev.jc.transpose() * y;
                    let soc: Vec<f64> = trial.iter().zip(corr.iter()).map(|(a, b)| a - b).collect();
                    let cs = pr.residual(&soc, ws);
                    if merit(fval(&soc), &cs) <= phi0 + 1e-4 * dd.min(0.0) {
                        accepted = Some(soc);
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some(unew) = accepted else {
            // Reset curvature information and try once more from here.
            let reset = DMatrix::identity(km, km) * (h / s2);
            if (&bmat - &reset).amax() < 1e-12 {
                break;
            }
            bmat = reset;
            continue;
        };
        let ev_new = pr.eval(&unew, ws);
        let step = DVector::from_iterator(km, unew.iter().zip(&u).map(|(a, b)| a - b));
        let lg_old = &g - ev.jc.transpose() * &nu;
        let lg_new = grad(&unew) - ev_new.jc.transpose() * &nu;
        let mut y = lg_new - lg_old;
        let bs = &bmat * &step;
        let sbs = step.dot(&bs);
        let sy = step.dot(&y);
        if sbs > 1e-300 {
            if sy < 0.2 * sbs {
                let theta = 0.8 * sbs / (sbs - sy);
                y = &y * theta + &bs * (1.0 - theta);
            }
            let sy = step.dot(&y);
            if sy > 1e-300 {
                bmat += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
            }
        }
        u = unew;
        ev = ev_new;
    }
    // Final feasibility restoration by minimum-norm Newton steps.
    for _ in 0..4 {
        if ev.c.amax() < 1e-14 {
            break;
        }
        let jj = &ev.jc * ev.jc.transpose();
        let Some(y) = jj.lu().solve(&ev.c) else { break };
        let corr = ev.jc.transpose() * y;
        let trial: Vec<f64> = u.iter().zip(corr.iter()).map(|(a, b)| a - b).collect();
        let et = pr.eval(&trial, ws);
        if et.c.amax() < ev.c.amax() {
            u = trial;
            ev = et;
        } else {
            break;
        }
    }
    // Least-squares multiplier and transported covector λ(0) = Φᵀ λ(1).
    let g = grad(&u);
    let jj = &ev.jc * ev.jc.transpose();
    let nu_ls = jj.lu().solve(&(&ev.jc * &g)).unwrap_or(nu);
    let lam1 = pr.smat.transpose() * nu_ls * s2;
    let lam0 = ev.phi.transpose() * lam1;
    DirectResult {
        length: pr.length(&u),
        resid: ev.c.amax(),
        closing: pr.closing_length(&ev.c),
        u,
        lambda0: lam0.iter().cloned().collect(),
    }
}

/// Initial control guess for start `idx`: smooth random Fourier controls of
/// amplitude comparable to the homogeneous size of the displacement.
fn initial_controls(pr: &Problem, idx: usize, seeds: &SeedTree) -> Vec<f64> {
    let m = pr.sys.m;
    let k = pr.k;
    let mut rng = seeds.rng(idx as u64);
    let mut coef = vec![[0.0f64; 5]; m];
    if idx == 0 {
        // Least-squares constant control for the Euclidean displacement.
        let f = pr.sys.fields_at(pr.p);
        let xm = DMatrix::from_fn(pr.sys.n, m, |r, i| f[i][r]);
        let d = DVector::from_iterator(pr.sys.n, pr.q.iter().zip(pr.p).map(|(a, b)| a - b));
        let a = xm.clone().pseudo_inverse(1e-12).map(|pi| pi * d).unwrap_or_else(|_| DVector::zeros(m));
        for i in 0..m {
            coef[i][0] = a[i] + 1e-3 * pr.s * rng.sample::<f64, _>(StandardNormal);
        }
    } else {
        let amp = pr.s * (1.0 + 0.5 * (idx % 3) as f64);
        for row in coef.iter_mut() {
            for c in row.iter_mut() {
                *c = amp * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let mut u = vec![0.0; k * m];
    for kk in 0..k {
        let t = (kk as f64 + 0.5) / k as f64;
        let tau = 2.0 * std::f64::consts::PI * t;
        for i in 0..m {
            let c = &coef[i];
            u[kk * m + i] = c[0] + c[1] * tau.cos() + c[2] * tau.sin() + c[3] * (2.0 * tau).cos() + c[4] * (2.0 * tau).sin();
        }
    }
    u
}

/// Newton on the Hamiltonian endpoint map.  Returns (length, residual) of
/// the refined extremal, or `None` if it fails to converge.
fn shooting_polish(pr: &Problem, lam0: &[f64], steps: usize, ws: &mut Workspace) -> Option<(f64, f64)> {
    let n = pr.sys.n;
    let sys = pr.sys;
    let resid = |lam: &[f64], ws: &mut Workspace| -> Option<DVector<f64>> {
        let y = sys.shoot(pr.p, lam, 1.0, steps, ws, |_| {})?;
        let e = DVector::from_iterator(n, y[..n].iter().zip(pr.q).map(|(a, b)| a - b));
        Some(&pr.smat * e)
    };
    let mut lam = lam0.to_vec();
    let mut r = resid(&lam, ws)?;
    for _ in 0..15 {
        if r.amax() < 1e-12 {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let hstep = 1e-7 * lam[j].abs().max(pr.s.recip().min(1e6)).max(1e-3);
            let mut lp = lam.clone();
            lp[j] += hstep;
            let rp = resid(&lp, ws)?;
            jac.set_column(j, &((rp - &r) / hstep));
        }
        let delta = jac.lu().solve(&r)?;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let trial: Vec<f64> = lam.iter().zip(delta.iter()).map(|(a, b)| a - alpha * b).collect();
            if let Some(rt) = resid(&trial, ws) {
                if rt.amax() < r.amax() {
                    lam = trial;
                    r = rt;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            return None;
        }
    }
    if r.amax() > 1e-10 {
        return None;
    }
    let (h0, _) = sys.hamiltonian(pr.p, &lam, ws);
    let y = sys.shoot(pr.p, &lam, 1.0, steps, ws, |_| {})?;
    let (h1, _) = sys.hamiltonian(&y[..n], &y[n..], ws);
    if (h1 - h0).abs() > 1e-6 * h0.max(1e-300) {
        return None;
    }
    Some(((2.0 * h0).sqrt(), pr.closing_length(&r)))
}

/// One-directional solve p → q.
fn solve_directed(s: &SRStructure, p: &[f64], q: &[f64], budget: &Budget, seed: &SeedTree, stop_below: Option<f64>) -> Result<DistanceEstimate> {
    let sys = s.system();
    let sc = Scaling::at(s, p)?;
    let pr = Problem::new(&sys, p, q, &sc, budget.intervals, budget.substeps);
    let mut ws = Workspace::default();
    let starts = budget.starts.max(1);
    let results: Vec<DirectResult> = if stop_below.is_some() {
        let mut out = Vec::new();
        for i in 0..starts {
            let r = sqp(&pr, initial_controls(&pr, i, seed), budget.max_iter, stop_below, &mut ws);
            let done = r.length + r.closing < stop_below.unwrap() && r.resid < 1e-9;
            out.push(r);
            if done {
                break;
            }
        }
        out
    } else {
        par_map(starts, |i| {
            let mut ws = Workspace::default();
            sqp(&pr, initial_controls(&pr, i, seed), budget.max_iter, None, &mut ws)
        })
    };
    let best = results
        .iter()
        .filter(|r| r.resid < 1e-6)
        .min_by(|a, b| (a.length + a.closing).total_cmp(&(b.length + b.closing)))
        .ok_or(Error::Unreachable)?;
    let mut value = best.length + best.closing;
    let mut method = Method::Direct;
    let mut error = best.closing + 1e-12 * value;
    if let Some(tau) = stop_below {
        if value < tau {
            return Ok(DistanceEstimate { value, lower: None, upper: Some(value), error, method });
        }
    }
    if budget.richardson && budget.intervals >= 4 {
        // Same problem on K/2 intervals, warm-started from pairwise means.
        let half = Problem::new(&sys, p, q, &sc, budget.intervals / 2, budget.substeps);
        let m = sys.m;
        let mut u2 = vec![0.0; half.k * m];
        for k in 0..half.k {
            for i in 0..m {
                u2[k * m + i] = 0.5 * (best.u[2 * k * m + i] + best.u[(2 * k + 1) * m + i]);
            }
        }
        let r2 = sqp(&half, u2, budget.max_iter, None, &mut ws);
        if r2.resid < 1e-6 {
            error += ((r2.length + r2.closing) - value).abs() / 3.0;
        }
    }
    if budget.polish {
        if let Some((len, closing)) = shooting_polish(&pr, &best.lambda0, budget.polish_steps, &mut ws) {
            if len + closing <= value + error {
                value = len + closing;
                error = closing + 1e-7 * value;
                method = Method::Shooting;
            }
        }
    }
    Ok(DistanceEstimate { value, lower: None, upper: Some(value), error, method })
}

/// Largest field operator norm over a grid on the structure box, cached.
pub fn field_bound(s: &SRStructure) -> f64 {
    *s.cache.field_bound.get_or_init(|| s.system().max_field_norm(&box_grid(s)) * 1.05)
}

/// Bounds over a grid on the structure box, with the same 5% margin as
/// [`field_bound`].
#[derive(Clone, Debug)]
pub struct GridBounds {
    /// sup (Σ_i X_i^k(x)²)^{1/2} for each coordinate k: a path of length d
    /// moves x_k by at most d times this.
    pub coords: Vec<f64>,
    /// sup (Σ_i ‖DX_i(x)‖_F²)^{1/2}.
    pub lipschitz: f64,
}

fn box_grid(s: &SRStructure) -> Vec<Vec<f64>> {
    let b = s.bbox_f64();
    let per: usize = if s.dim <= 3 { 9 } else { 4 };
    let total = per.pow(s.dim as u32);
    (0..total)
        .map(|mut idx| {
            b.iter()
                .map(|&(lo, hi)| {
                    let k = idx % per;
                    idx /= per;
                    lo + (hi - lo) * k as f64 / (per - 1) as f64
                })
                .collect()
        })
        .collect()
}

pub fn grid_bounds(s: &SRStructure) -> Arc<GridBounds> {
    s.cache
        .grid_bounds
        .get_or_init(|| {
            let sys = s.system();
            let (n, m) = (sys.n, sys.m);
            let mut ws = Workspace::default();
            let mut coords = vec![0.0f64; n];
            let mut lip: f64 = 0.0;
            for p in box_grid(s) {
                sys.eval(&p, &mut ws, true);
                for (k, c) in coords.iter_mut().enumerate() {
                    *c = c.max((0..m).map(|i| ws.f[i * n + k].powi(2)).sum::<f64>().sqrt());
                }
                lip = lip.max(ws.df.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            Arc::new(GridBounds { coords: coords.iter().map(|c| c * 1.05).collect(), lipschitz: lip * 1.05 })
        })
        .clone()
}

/// Orthonormal basis of the annihilator of span{X_i(p)}, for
/// [`transverse_lower_bound`].
pub fn annihilator(s: &SRStructure, p: &[f64]) -> Vec<Vec<f64>> {
    let n = s.dim;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for f in s.system().fields_at(p) {
        let mut v = f;
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 1e-12 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in basis.iter().chain(&out) {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 1e-9 {
            out.push(v.iter().map(|x| x / nv).collect());
        }
    }
    out
}

/// Second-order lower bound.  For a unit covector ℓ with ℓ(X_i(p)) = 0 and a
/// horizontal path of length d from p, d/dt ℓ(γ − p) = Σ u_i ℓ(X_i(γ) − X_i(p))
/// is at most Λ M t, so |ℓ(q − p)| ≤ Λ M d²/2.  `ann` is
/// [`annihilator`] at p.  Valid for paths inside the box.
pub fn transverse_lower_bound(s: &SRStructure, ann: &[Vec<f64>], p: &[f64], q: &[f64]) -> f64 {
    let proj2: f64 = ann.iter().map(|l| l.iter().zip(p.iter().zip(q)).map(|(a, (x, y))| a * (y - x)).sum::<f64>().powi(2)).sum();
    let lam = grid_bounds(s).lipschitz;
    if lam == 0.0 {
        return if proj2 > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (2.0 * proj2.sqrt() / (lam * field_bound(s))).sqrt()
}

/// Lower bound |p − q| / M from comparing with a Riemannian extension whose
/// unit ball contains the sub-Riemannian one.  Valid for connecting paths
/// that stay inside the box.
pub fn riemannian_lower_bound(s: &SRStructure, p: &[f64], q: &[f64]) -> f64 {
    let d = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    d / field_bound(s)
}

/// Distance estimate, symmetrized by solving in both directions.
pub fn distance(s: &SRStructure, p: &[f64], q: &[f64], budget: &Budget, seed: u64) -> Result<DistanceEstimate> {
    if p == q {
        return Ok(DistanceEstimate { value: 0.0, lower: Some(0.0), upper: Some(0.0), error: 0.0, method: Method::Trivial });
    }
    let tree = SeedTree::new(seed).child("distance");
    let a = solve_directed(s, p, q, budget, &tree.index(0), None);
    let b = solve_directed(s, q, p, budget, &tree.index(1), None);
    let mut best = match (a, b) {
        (Ok(a), Ok(b)) => {
            if b.value < a.value {
                b
            } else {
                a
            }
        }
        (Ok(a), Err(_)) => a,
        (Err(_), Ok(b)) => b,
        (Err(e), Err(_)) => return Err(e),
    };
    let lb = riemannian_lower_bound(s, p, q);
    best.lower = Some(lb.min(best.value));
    Ok(best)
}

/// One-directional distance with a fixed scaling, used by bulk callers that
/// query many points from one centre.
pub fn distance_from(s: &SRStructure, p: &[f64], q: &[f64], budget: &Budget, seed: &SeedTree) -> Result<DistanceEstimate> {
    if p == q {
        return Ok(DistanceEstimate { value: 0.0, lower: Some(0.0), upper: Some(0.0), error: 0.0, method: Method::Trivial });
    }
    solve_directed(s, p, q, budget, seed, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    In,
    Out,
    Band,
}

/// Three-way ball membership test for B(center, ε).
pub fn ball_indicator(s: &SRStructure, center: &[f64], eps: f64, x: &[f64], budget: &Budget, seed: &SeedTree) -> Result<(Membership, Option<DistanceEstimate>)> {
    if x == center {
        return Ok((Membership::In, None));
    }
    // The Riemannian comparison holds only where the field bound was taken.
    if s.in_box(center) && s.in_box(x) && riemannian_lower_bound(s, center, x) >= eps {
        return Ok((Membership::Out, None));
    }
    let d = solve_directed(s, center, x, budget, seed, Some(eps))?;
    let m = if d.value < eps && d.value + d.error < eps {
        Membership::In
    } else if d.value - d.error > eps {
        Membership::Out
    } else {
        Membership::Band
    };
    Ok((m, Some(d)))
}

#[derive(Clone, Debug, Serialize)]
pub struct GeodesicPath {
    pub points: Vec<Vec<f64>>,
    pub covectors: Vec<Vec<f64>>,
    pub length: f64,
    pub energy_drift: f64,
}

/// Integrate the normal extremal with initial covector λ0 on [0, T].
pub fn geodesic_shoot(s: &SRStructure, p: &[f64], covector: &[f64], t_end: f64, steps: usize) -> Result<GeodesicPath> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps ≥ 1 required".into()));
    }
    let sys = s.system();
    let n = sys.n;
    let mut ws = Workspace::default();
    let mut points = Vec::with_capacity(steps + 1);
    let mut covectors = Vec::with_capacity(steps + 1);
    let (h0, _) = sys.hamiltonian(p, covector, &mut ws);
    let mut drift: f64 = 0.0;
    let mut ws2 = Workspace::default();
    let out = sys.shoot(p, covector, t_end, steps, &mut ws, |y| {
        points.push(y[..n].to_vec());
        covectors.push(y[n..].to_vec());
        let (h, _) = sys.hamiltonian(&y[..n], &y[n..], &mut ws2);
        drift = drift.max((h - h0).abs());
    });
    if out.is_none() {
        return Err(Error::StepFailure("non-finite state in Hamiltonian flow".into()));
    }
    let rel = if h0 > 0.0 { drift / h0 } else { drift };
    Ok(GeodesicPath { points, covectors, length: (2.0 * h0).sqrt() * t_end, energy_drift: rel })
}
