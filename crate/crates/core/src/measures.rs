//! Blow-up measure of the nilpotent unit ball, spherical Hausdorff density,
//! small-ball volume ratios, covering dimension, the H/S sandwich and
//! isodiametric ratios.
//!
//! Volumes of balls are computed in dilation-polar coordinates.  With a
//! homogeneous gauge M on the chart and σ drawn from the angular law of the
//! uniform distribution on {M < 1},
//!
//! ```text
//! Leb{N < 1} = Leb{M < 1} · E[ N(σ)^{−Q} ]
//! ```
//!
//! for any δ_λ-homogeneous norm N.  Each sample needs one distance at unit
//! scale, and the estimator has no hit-or-miss noise.  Balls of the original
//! structure are handled the same way after locating, along each dilation
//! ray, the parameter where the ray leaves the ball.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;

use crate::distance::{annihilator, distance_from, geodesic_shoot, grid_bounds, riemannian_lower_bound, transverse_lower_bound, Budget};
use crate::error::{Error, Result};
use crate::expr::{fill_powers, rat_from_f64, CompiledExpr, Rat};
use crate::mc::MCEstimate;
use crate::nilpotent::{dilate, nilpotent_at, NilpotentApprox};
use crate::par::par_map;
use crate::popp::is_singular;
use crate::rng::SeedTree;
use crate::structure::SRStructure;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureOptions {
    /// Number of dilation-ray directions.
    pub directions: usize,
    pub budget: Budget,
    pub seed: u64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions { directions: 256, budget: Budget::bulk(), seed: 1 }
    }
}

/// Γ(k/2) for k ≥ 1.
fn gamma_half(k: u32) -> f64 {
    match k {
        1 => PI.sqrt(),
        2 => 1.0,
        _ => (k as f64 / 2.0 - 1.0) * gamma_half(k - 2),
    }
}

/// The homogeneous gauge M(z) = (Σ |z_k / c_k|^{2/w_k})^{1/2}.
#[derive(Clone, Debug, Serialize)]
pub struct Gauge {
    pub scale: Vec<f64>,
    pub weights: Vec<u32>,
    pub q: u32,
    /// Leb{M < 1}.
    pub volume: f64,
}

impl Gauge {
    pub fn new(scale: Vec<f64>, weights: Vec<u32>) -> Self {
        let q: u32 = weights.iter().sum();
        let mut volume = 1.0 / gamma_half(q + 2);
        for (c, &w) in scale.iter().zip(&weights) {
            volume *= 2.0 * c * gamma_half(w + 2);
        }
        Gauge { scale, weights, q, volume }
    }

    pub fn norm(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|((v, c), &w)| (v / c).abs().powf(2.0 / w as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// A point of {M = 1} with the angular law of the uniform measure on
    /// {M < 1}: |u_k|^{2/w_k} is Dirichlet(w_1/2, …, w_n/2).
    pub fn direction(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let ys: Vec<f64> = self.weights.iter().map(|&w| Gamma::new(w as f64 / 2.0, 1.0).unwrap().sample(rng)).collect();
        let total: f64 = ys.iter().sum();
        ys.iter()
            .zip(&self.weights)
            .zip(&self.scale)
            .map(|((y, &w), c)| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * c * (y / total).powf(w as f64 / 2.0)
            })
            .collect()
    }

    /// Uniform point of {M < r}.
    pub fn uniform(&self, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.direction(rng);
        let u: f64 = rng.random();
        dilate(&s, r * u.powf(1.0 / self.q as f64), &self.weights)
    }
}

/// Coordinate extents of the unit ball of a homogeneous structure, from
/// unit-length normal geodesics out of 0.  Only used to shape the gauge.
pub fn ball_extents(ns: &SRStructure, weights: &[u32], seed: u64) -> Result<Vec<f64>> {
    let n = ns.dim;
    let zero = vec![0.0; n];
    let tree = SeedTree::new(seed).child("extents");
    let shots = 96;
    let paths: Vec<Result<Vec<f64>>> = par_map(shots, |i| {
        let mut rng = tree.rng(i as u64);
        let mut lam: Vec<f64> = weights
            .iter()
            .map(|&w| {
                let g: f64 = StandardNormal.sample(&mut rng);
                if w == 1 {
                    g
                } else {
                    g * (2.0 * PI).powi(w as i32 - 1)
                }
            })
            .collect();
        let fields = ns.system().fields_at(&zero);
        let h: f64 = fields.iter().map(|f| f.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>().powi(2)).sum::<f64>() / 2.0;
        if h <= 1e-300 {
            return Ok(vec![0.0; n]);
        }
        for l in lam.iter_mut() {
            *l /= (2.0 * h).sqrt();
        }
        // Covectors with a large vertical part oscillate too fast for the
        // step count; such shots carry no extent information and are dropped.
        match geodesic_shoot(ns, &zero, &lam, 1.0, 96) {
            Ok(g) if g.energy_drift < 1e-3 => Ok((0..n).map(|k| g.points.iter().map(|p| p[k].abs()).fold(0.0, f64::max)).collect()),
            Ok(_) | Err(Error::StepFailure(_)) => Ok(vec![0.0; n]),
            Err(e) => Err(e),
        }
    });
    let mut ext = vec![0.0f64; n];
    for p in paths {
        for (e, v) in ext.iter_mut().zip(p?) {
            *e = e.max(v);
        }
    }
    Ok(ext.into_iter().map(|e| if e > 1e-9 { e } else { 1.0 }).collect())
}

/// The unit ball of a nilpotent approximation, sampled along dilation rays.
#[derive(Clone, Debug, Serialize)]
pub struct UnitBall {
    pub key: String,
    pub gauge: Gauge,
    #[serde(skip)]
    pub directions: Vec<Vec<f64>>,
    /// d̂(0, σ) for each direction.
    #[serde(skip)]
    pub norms: Vec<f64>,
    /// Leb(B̂(0, 1)).  The standard error includes the distance error bars.
    pub volume: MCEstimate,
}

type BallCache = Mutex<HashMap<String, Arc<UnitBall>>>;

fn ball_cache() -> &'static BallCache {
    static CACHE: OnceLock<BallCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Lebesgue volume of B̂(0, 1), cached by nilpotent structure and options.
pub fn unit_ball(nil: &NilpotentApprox, opt: &MeasureOptions) -> Result<Arc<UnitBall>> {
    let ckey = format!("{}|{}|{}|{:?}", nil.key(), opt.directions, opt.seed, opt.budget);
    if let Some(b) = ball_cache().lock().unwrap().get(&ckey) {
        return Ok(b.clone());
    }
    let ns = nil.as_structure();
    let n = ns.dim;
    let gauge = Gauge::new(ball_extents(&ns, &nil.weights, opt.seed)?, nil.weights.clone());
    let tree = SeedTree::new(opt.seed).child("unit-ball");
    let directions: Vec<Vec<f64>> = (0..opt.directions).map(|i| gauge.direction(&mut tree.rng(i as u64))).collect();
    let zero = vec![0.0; n];
    let dist_tree = tree.child("distance");
    let res: Vec<Result<(f64, f64)>> = par_map(directions.len(), |i| {
        let d = distance_from(&ns, &zero, &directions[i], &opt.budget, &dist_tree.index(i as u64))?;
        Ok((d.value, d.error))
    });
    let res: Vec<(f64, f64)> = res.into_iter().collect::<Result<_>>()?;
    let q = gauge.q as i32;
    let samples: Vec<f64> = res.iter().map(|(v, _)| gauge.volume * v.powi(-q)).collect();
    let bias: f64 = res.iter().map(|(v, e)| gauge.volume * q as f64 * v.powi(-q - 1) * e).sum::<f64>() / res.len() as f64;
    let mut volume = MCEstimate::from_samples(&samples, opt.seed);
    volume.stderr = volume.stderr.hypot(bias);
    let ball = Arc::new(UnitBall { key: nil.key(), gauge, directions, norms: res.iter().map(|r| r.0).collect(), volume });
    ball_cache().lock().unwrap().insert(ckey, ball.clone());
    Ok(ball)
}

/// Hit-or-miss estimate of Leb(B̂(0, r)) over the box of ball extents,
/// independent of the ray estimator.
pub fn unit_ball_volume_hit_or_miss(nil: &NilpotentApprox, radius: f64, samples: usize, opt: &MeasureOptions) -> Result<MCEstimate> {
    let ns = nil.as_structure();
    let n = ns.dim;
    let half: Vec<f64> = ball_extents(&ns, &nil.weights, opt.seed)?
        .iter()
        .zip(&nil.weights)
        .map(|(e, &w)| 1.1 * e * radius.powi(w as i32))
        .collect();
    let outer: f64 = half.iter().map(|h| 2.0 * h).product();
    let tree = SeedTree::new(opt.seed).child("hit-or-miss");
    let zero = vec![0.0; n];
    let hits: Vec<Result<f64>> = par_map(samples, |i| {
        let mut rng = tree.rng(i as u64);
        let z: Vec<f64> = half.iter().map(|h| rng.random_range(-1.0..1.0) * h).collect();
        let d = distance_from(&ns, &zero, &z, &opt.budget, &tree.child("distance").index(i as u64))?;
        Ok(if d.value < radius { outer } else { 0.0 })
    });
    let hits: Vec<f64> = hits.into_iter().collect::<Result<_>>()?;
    Ok(MCEstimate::from_samples(&hits, opt.seed))
}

#[derive(Clone, Debug, Serialize)]
pub struct MuHat {
    pub point: Vec<f64>,
    pub q: u32,
    /// ω(∂_{z_1}, …, ∂_{z_n}) at the base point.
    pub density0: f64,
    pub unit_volume: MCEstimate,
    /// μ̂^p(B̂_p).
    pub value: MCEstimate,
    /// Set at singular points.
    pub formal: bool,
    pub key: String,
}

pub fn mu_hat_ball(s: &SRStructure, p: &[f64], opt: &MeasureOptions) -> Result<MuHat> {
    let nil = nilpotent_at(s, p)?;
    mu_hat_from(s, &nil, opt)
}

fn mu_hat_from(s: &SRStructure, nil: &NilpotentApprox, opt: &MeasureOptions) -> Result<MuHat> {
    let ub = unit_ball(nil, opt)?;
    Ok(MuHat {
        point: nil.point.clone(),
        q: nil.q,
        density0: nil.density0,
        unit_volume: ub.volume.clone(),
        value: ub.volume.scale(nil.density0),
        formal: is_singular(s, &nil.point, 1e-6)?,
        key: ub.key.clone(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SphericalDensity {
    pub point: Vec<f64>,
    pub q: u32,
    /// dS^Q/dμ = 2^Q / μ̂^p(B̂_p).
    pub value: f64,
    pub stderr: f64,
    pub formal: bool,
}

pub fn spherical_density(s: &SRStructure, p: &[f64], opt: &MeasureOptions) -> Result<SphericalDensity> {
    let mu = mu_hat_ball(s, p, opt)?;
    Ok(spherical_from(&mu))
}

fn spherical_from(mu: &MuHat) -> SphericalDensity {
    let c = 2f64.powi(mu.q as i32);
    let m = mu.value.mean;
    SphericalDensity { point: mu.point.clone(), q: mu.q, value: c / m, stderr: c * mu.value.stderr / (m * m), formal: mu.formal }
}

/// Fast evaluation of the inverse chart, its Jacobian determinant and the
/// volume density of the original structure.
pub(crate) struct ChartEval {
    n: usize,
    inverse: Vec<CompiledExpr>,
    jacobian: Vec<CompiledExpr>,
    volume: CompiledExpr,
    stride: usize,
}

impl ChartEval {
    pub(crate) fn new(s: &SRStructure, nil: &NilpotentApprox) -> Self {
        let n = s.dim;
        let inv = &nil.chart.inverse;
        let jacobian = (0..n).flat_map(|i| (0..n).map(move |j| CompiledExpr::new(&inv[i].diff(j)))).collect();
        let degree = inv.iter().map(|e| e.degree()).chain([s.volume.degree()]).max().unwrap_or(1);
        ChartEval {
            n,
            inverse: inv.iter().map(CompiledExpr::new).collect(),
            jacobian,
            volume: CompiledExpr::new(&s.volume),
            stride: degree as usize + 1,
        }
    }

    pub(crate) fn point(&self, z: &[f64]) -> Vec<f64> {
        let mut pw = Vec::new();
        fill_powers(z, self.stride, &mut pw);
        self.inverse.iter().map(|e| e.eval_table(&pw, self.stride)).collect()
    }

    /// (x(z), ω(x(z)) · |det Dx(z)|).
    pub(crate) fn point_and_weight(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let mut pw = Vec::new();
        fill_powers(z, self.stride, &mut pw);
        let x: Vec<f64> = self.inverse.iter().map(|e| e.eval_table(&pw, self.stride)).collect();
        let n = self.n;
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.jacobian[i * n + j].eval_table(&pw, self.stride));
        let mut pwx = Vec::new();
        fill_powers(&x, self.stride, &mut pwx);
        let w = (self.volume.eval_table(&pwx, self.stride) * m.determinant()).abs();
        (x, w)
    }
}

/// Gauss–Legendre nodes and weights mapped to [0, 1].
pub(crate) fn unit_gauss(nodes: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(nodes.try_into().expect("nonzero node count"));
    gl.as_node_weight_pairs().iter().map(|&(x, w)| ((x + 1.0) / 2.0, w / 2.0)).collect()
}

/// Q ∫_0^{u*} f(u) u^{Q−1} du.
pub(crate) fn ray_integral(gl: &[(f64, f64)], q: u32, ustar: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let qf = q as f64;
    gl.iter().map(|&(t, w)| {
        let u = ustar * t;
        w * ustar * qf * u.powi(q as i32 - 1) * f(u)
    }).sum()
}

/// Balls B(p, Rε) of the original structure in blown-up chart coordinates
/// ζ = δ_{1/ε} φ(x), sampled along the rays of the unit ball's directions.
pub struct BallProfile {
    pub point: Vec<f64>,
    pub q: u32,
    pub radius: f64,
    pub eps: Vec<f64>,
    pub nil: NilpotentApprox,
    pub unit: Arc<UnitBall>,
    /// exits[e][i]: the u with d(p, x(δ_{ε u} σ_i)) = Rε.
    pub exits: Vec<Vec<f64>>,
    /// Rays whose root search stopped on the iteration cap.
    pub unconverged: usize,
    pub(crate) chart: ChartEval,
    pub(crate) seed: u64,
}

impl BallProfile {
    /// ζ ↦ x for the given ε.
    pub fn x_of(&self, zeta: &[f64], eps: f64) -> Vec<f64> {
        self.chart.point(&dilate(zeta, eps, &self.nil.weights))
    }
}

/// Relative accuracy to which `ray_exit` places each exit.  A ball volume of
/// homogeneous degree Q is then resolved to about Q times this.
pub const EXIT_TOL: f64 = 1e-4;

/// Dilation parameter where one ray leaves B(p, Rε), by secant iteration on
/// log d against log u starting from the nilpotent guess.
fn ray_exit(s: &SRStructure, p: &[f64], chart: &ChartEval, sigma: &[f64], w: &[u32], eps: f64, radius: f64, guess: f64, budget: &Budget, seed: &SeedTree) -> Result<(f64, bool)> {
    let target = radius * eps;
    let eval = |u: f64, k: u64| -> Result<f64> {
        let x = chart.point(&dilate(sigma, eps * u, w));
        Ok(distance_from(s, p, &x, budget, &seed.index(k))?.value)
    };
    let mut u0 = guess;
    let mut d0 = eval(u0, 0)?;
    let mut slope = 1.0;
    let mut prev: Option<(f64, f64)> = None;
    for k in 1..=12u64 {
        if (d0 / target - 1.0).abs() < EXIT_TOL {
            return Ok((u0, true));
        }
        if let Some((u1, d1)) = prev {
            let sl = (d0 / d1).ln() / (u0 / u1).ln();
            if sl.is_finite() {
                slope = sl.clamp(0.25, 4.0);
            }
        }
        let u = u0 * (target / d0).powf(1.0 / slope);
        let d = eval(u, k)?;
        prev = Some((u0, d0));
        u0 = u;
        d0 = d;
    }
    Ok((u0, (d0 / target - 1.0).abs() < 10.0 * EXIT_TOL))
}

pub fn ball_profile(s: &SRStructure, p: &[f64], eps: &[f64], radius: f64, opt: &MeasureOptions) -> Result<BallProfile> {
    let nil = nilpotent_at(s, p)?;
    let unit = unit_ball(&nil, opt)?;
    let chart = ChartEval::new(s, &nil);
    let tree = SeedTree::new(opt.seed).child("ball-profile");
    let mut exits = Vec::new();
    let mut unconverged = 0;
    for (e, &ep) in eps.iter().enumerate() {
        let t = tree.index(e as u64);
        let res: Vec<Result<(f64, bool)>> = par_map(unit.directions.len(), |i| {
            ray_exit(s, p, &chart, &unit.directions[i], &nil.weights, ep, radius, radius / unit.norms[i], &opt.budget, &t.index(i as u64))
        });
        let mut row = Vec::with_capacity(res.len());
        for r in res {
            let (u, ok) = r?;
            unconverged += !ok as usize;
            row.push(u);
        }
        exits.push(row);
    }
    Ok(BallProfile { point: p.to_vec(), q: nil.q, radius, eps: eps.to_vec(), nil, unit, exits, unconverged, chart, seed: opt.seed })
}

#[derive(Clone, Debug, Serialize)]
pub struct BallRatio {
    pub eps: f64,
    /// μ(B(p, Rε)) / (Rε)^Q.
    pub ratio: MCEstimate,
    pub mu_hat: MCEstimate,
    /// ratio / μ̂^p(B̂_p) − 1, from paired samples.
    pub gap: MCEstimate,
}

/// μ(B(p, Rε)) / (Rε)^Q against μ̂^p(B̂_p) at each ε of the profile.
pub fn ball_ratios(profile: &BallProfile) -> Vec<BallRatio> {
    let gl = unit_gauss(12);
    let q = profile.q;
    let r_q = profile.radius.powi(q as i32);
    let lm = profile.unit.gauge.volume;
    let w = &profile.nil.weights;
    let b: Vec<f64> = profile.unit.norms.iter().map(|nv| lm * profile.nil.density0 * nv.powi(-(q as i32))).collect();
    profile
        .eps
        .iter()
        .zip(&profile.exits)
        .map(|(&ep, row)| {
            let a: Vec<f64> = row
                .iter()
                .zip(&profile.unit.directions)
                .map(|(&ustar, sigma)| {
                    lm / r_q * ray_integral(&gl, q, ustar, |u| profile.chart.point_and_weight(&dilate(sigma, ep * u, w)).1)
                })
                .collect();
            paired(&a, &b, profile.seed, ep)
        })
        .collect()
}

fn paired(a: &[f64], b: &[f64], seed: u64, eps: f64) -> BallRatio {
    let ra = MCEstimate::from_samples(a, seed);
    let rb = MCEstimate::from_samples(b, seed);
    let g = ra.mean / rb.mean;
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - g * y) / rb.mean).collect();
    let mut gap = MCEstimate::from_samples(&resid, seed);
    gap.mean = g - 1.0;
    BallRatio { eps, ratio: ra, mu_hat: rb, gap }
}

/// Sample specification for dimension and sandwich estimates.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SetSpec {
    Box(Vec<(f64, f64)>),
    Segment(Vec<f64>, Vec<f64>),
    /// A declared stratum, optionally restricted to a parameter sub-box.
    Stratum(String, Option<Vec<(f64, f64)>>),
}

impl SetSpec {
    /// Points spread over the set: a scrambled stratified sample in
    /// parameter space.
    pub fn sample(&self, s: &SRStructure, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let tree = SeedTree::new(seed).child("set-sample");
        let mut rng = tree.rng(0);
        let unit = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> { (0..k).map(|_| rng.random::<f64>()).collect() };
        Ok(match self {
            SetSpec::Box(b) => (0..count).map(|_| unit(&mut rng, b.len()).iter().zip(b).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect()).collect(),
            SetSpec::Segment(a, c) => (0..count)
                .map(|i| {
                    let t = (i as f64 + rng.random::<f64>()) / count as f64;
                    a.iter().zip(c).map(|(x, y)| x + t * (y - x)).collect()
                })
                .collect(),
            SetSpec::Stratum(name, sub) => {
                let st = s.stratum(name).ok_or_else(|| Error::InvalidArgument(format!("no stratum named '{name}'")))?;
                let b = sub.clone().unwrap_or_else(|| st.parambox_f64());
                if b.len() != st.k {
                    return Err(Error::DimensionMismatch(format!("stratum '{name}' has {} parameters", st.k)));
                }
                (0..count)
                    .map(|i| {
                        let mut t = unit(&mut rng, st.k);
                        if st.k == 1 {
                            t[0] = (i as f64 + t[0]) / count as f64;
                        }
                        let t: Vec<f64> = t.iter().zip(&b).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
                        st.eval(&t)
                    })
                    .collect()
            }
        })
    }
}

fn shuffled(points: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut v = points.to_vec();
    v.shuffle(&mut SeedTree::new(seed).child("shuffle").rng(0));
    v
}

/// Candidate centres for a point, with lower bounds below ε, smallest first.
fn candidates(s: &SRStructure, centres: &[Centre], x: &[f64], eps: f64) -> Vec<usize> {
    let inside = s.in_box(x);
    let mut cand: Vec<(f64, usize)> = centres
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            if !(inside && c.in_box) {
                return Some((0.0, i));
            }
            let lb = riemannian_lower_bound(s, &c.x, x);
            if lb >= eps {
                return None;
            }
            let lb = lb.max(transverse_lower_bound(s, &c.annihilator, &c.x, x));
            (lb < eps).then_some((lb, i))
        })
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    cand.into_iter().map(|c| c.1).collect()
}

struct Centre {
    x: Vec<f64>,
    annihilator: Vec<Vec<f64>>,
    in_box: bool,
    counted: bool,
}

impl Centre {
    fn new(s: &SRStructure, x: Vec<f64>, counted: bool) -> Self {
        Centre { annihilator: annihilator(s, &x), in_box: s.in_box(&x), x, counted }
    }
}

/// Whether some centre is within ε of x.  Pairs the solver could not connect
/// count as uncovered and are tallied in `unreached`.
fn covered(s: &SRStructure, centres: &[Centre], x: &[f64], eps: f64, budget: &Budget, seed: &SeedTree, unreached: &mut usize) -> Result<bool> {
    for (j, i) in candidates(s, centres, x, eps).into_iter().enumerate() {
        match distance_from(s, &centres[i].x, x, budget, &seed.index(j as u64)) {
            Ok(d) if d.value < eps => return Ok(true),
            Ok(_) => {}
            Err(Error::Unreachable) => *unreached += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(false)
}

/// Greedy maximal ε-net: a point becomes a centre unless some centre is
/// within distance ε.  Centres excluded by the Riemannian or transverse lower
/// bound are skipped, and the rest are tried in order of their bound.
pub fn eps_net(s: &SRStructure, points: &[Vec<f64>], eps: f64, budget: &Budget, seed: &SeedTree) -> Result<Vec<Vec<f64>>> {
    let mut centres: Vec<Centre> = Vec::new();
    for (k, x) in points.iter().enumerate() {
        if !covered(s, &centres, x, eps, budget, &seed.index(k as u64), &mut 0)? {
            centres.push(Centre::new(s, x.clone(), true));
        }
    }
    Ok(centres.into_iter().map(|c| c.x).collect())
}

/// The set of a [`SetSpec`] together with a margin around it that contains
/// every ball of radius `pad` centred in the set.
enum Padded {
    Box { outer: Vec<(f64, f64)>, inner: Vec<(f64, f64)> },
    Segment { a: Vec<f64>, c: Vec<f64>, lo: f64, hi: f64 },
    Stratum { map: Vec<CompiledExpr>, stride: usize, outer: Vec<(f64, f64)>, inner: Vec<(f64, f64)> },
}

impl Padded {
    fn new(s: &SRStructure, set: &SetSpec, pad: f64) -> Result<Self> {
        // A path of length d moves x_k by at most d · L_k.
        let lk = grid_bounds(s).coords.clone();
        Ok(match set {
            SetSpec::Box(b) => {
                if b.len() != s.dim {
                    return Err(Error::DimensionMismatch(format!("box has {} sides, structure dimension is {}", b.len(), s.dim)));
                }
                let outer = b.iter().zip(&lk).map(|(&(lo, hi), l)| (lo - pad * l, hi + pad * l)).collect();
                Padded::Box { outer, inner: b.clone() }
            }
            SetSpec::Segment(a, c) => {
                if a.len() != s.dim || c.len() != s.dim {
                    return Err(Error::DimensionMismatch("segment endpoints must have the structure dimension".into()));
                }
                // a + t(c − a) is within pad of an endpoint only if
                // |t| · |c_k − a_k| ≤ pad · L_k for every k.
                let dt = a.iter().zip(c).zip(&lk).filter(|((x, y), _)| x != y).map(|((x, y), l)| pad * l / (y - x).abs()).fold(f64::INFINITY, f64::min);
                let dt = if dt.is_finite() { dt } else { 0.0 };
                Padded::Segment { a: a.clone(), c: c.clone(), lo: -dt, hi: 1.0 + dt }
            }
            SetSpec::Stratum(name, sub) => {
                let st = s.stratum(name).ok_or_else(|| Error::InvalidArgument(format!("no stratum named '{name}'")))?;
                let inner = sub.clone().unwrap_or_else(|| st.parambox_f64());
                if inner.len() != st.k {
                    return Err(Error::DimensionMismatch(format!("stratum '{name}' has {} parameters", st.k)));
                }
                // For an affine map Δt = J⁺Δx bounds the parameter margin;
                // curved strata get none.
                let affine = st.map.iter().all(|e| e.degree() <= 1);
                let dt: Vec<f64> = if affine && pad > 0.0 {
                    let mid: Vec<f64> = inner.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
                    let jac = st.jacobian(&mid);
                    let j = nalgebra::DMatrix::from_fn(s.dim, st.k, |r, c| jac[r][c]);
                    match j.pseudo_inverse(1e-12) {
                        Ok(pinv) => (0..st.k).map(|r| pad * (0..s.dim).map(|c| pinv[(r, c)].abs() * lk[c]).sum::<f64>()).collect(),
                        Err(_) => vec![0.0; st.k],
                    }
                } else {
                    vec![0.0; st.k]
                };
                let outer = inner.iter().zip(&dt).map(|(&(lo, hi), d)| (lo - d, hi + d)).collect();
                let degree = st.map.iter().map(|e| e.degree()).max().unwrap_or(1);
                Padded::Stratum { map: st.map.iter().map(CompiledExpr::new).collect(), stride: degree as usize + 1, outer, inner }
            }
        })
    }

    /// Uniform draw from the padded set; the flag tells whether it lies in
    /// the set itself.
    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, bool) {
        let inside = |v: &[f64], b: &[(f64, f64)]| v.iter().zip(b).all(|(x, (lo, hi))| x >= lo && x <= hi);
        match self {
            Padded::Box { outer, inner } => {
                let x: Vec<f64> = outer.iter().map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo)).collect();
                let i = inside(&x, inner);
                (x, i)
            }
            Padded::Segment { a, c, lo, hi } => {
                let t = lo + rng.random::<f64>() * (hi - lo);
                (a.iter().zip(c).map(|(x, y)| x + t * (y - x)).collect(), (0.0..=1.0).contains(&t))
            }
            Padded::Stratum { map, stride, outer, inner } => {
                let t: Vec<f64> = outer.iter().map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo)).collect();
                let mut pw = Vec::new();
                fill_powers(&t, *stride, &mut pw);
                (map.iter().map(|e| e.eval_table(&pw, *stride)).collect(), inside(&t, inner))
            }
        }
    }
}

/// Least-squares slope of y on x, with the RMS residual.
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoveringOptions {
    /// Points are drawn until there are this many per net centre, so the net
    /// is equally saturated at every scale.
    pub samples_per_centre: usize,
    pub min_samples: usize,
    pub max_samples: usize,
    /// The net is built over the set enlarged by margin · ε and only centres
    /// in the set are counted, which removes the boundary layer from the
    /// counts.  Zero counts the net of the set itself.
    pub margin: f64,
    pub budget: Budget,
}

impl Default for CoveringOptions {
    fn default() -> Self {
        CoveringOptions { samples_per_centre: 4, min_samples: 16, max_samples: 200_000, margin: 1.0, budget: Budget::coarse() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoveringReport {
    pub scales: Vec<f64>,
    /// Net centres lying in the set, at each scale.
    pub counts: Vec<usize>,
    /// All net centres, margin included.
    pub net_sizes: Vec<usize>,
    pub samples: Vec<usize>,
    /// Scales where `max_samples` stopped the stream early.
    pub truncated: Vec<f64>,
    /// Distance queries the solver could not connect, over all scales.
    pub unreached: usize,
    /// Minus the slope of log N against log ε.
    pub dimension: f64,
    pub intercept: f64,
    pub residual: f64,
}

/// Covering dimension from greedy ε-nets of a stream of random points of the
/// set.
pub fn covering_dimension(s: &SRStructure, set: &SetSpec, scales: &[f64], opt: &CoveringOptions, seed: u64) -> Result<CoveringReport> {
    if scales.len() < 2 || scales.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("at least two positive scales are needed".into()));
    }
    // Bounds are taken over a box reaching past every padded set, so that
    // margin points keep their lower bounds.
    let lk = grid_bounds(s).coords.clone();
    let reach = 2.0 * opt.margin * scales.iter().cloned().fold(0.0, f64::max);
    let wide: Vec<(Rat, Rat)> = s.bbox_f64().iter().zip(&lk).map(|(&(lo, hi), l)| (rat_from_f64(lo - reach * l), rat_from_f64(hi + reach * l))).collect();
    let sb = s.with_box(wide);
    let tree = SeedTree::new(seed).child("covering");
    let nets: Vec<Result<(usize, usize, usize, bool, usize)>> = par_map(scales.len(), |e| {
        let eps = scales[e];
        let padded = Padded::new(s, set, opt.margin * eps)?;
        let draws = tree.child("draws");
        let t = tree.index(e as u64);
        let mut centres: Vec<Centre> = Vec::new();
        let mut i = 0usize;
        let mut unreached = 0usize;
        while i < opt.min_samples || i < opt.samples_per_centre * centres.len() {
            if i >= opt.max_samples {
                break;
            }
            let (x, inside) = padded.draw(&mut draws.rng(i as u64));
            if !covered(&sb, &centres, &x, eps, &opt.budget, &t.index(i as u64), &mut unreached)? {
                centres.push(Centre::new(&sb, x, inside));
            }
            i += 1;
        }
        Ok((centres.iter().filter(|c| c.counted).count(), centres.len(), i, i >= opt.max_samples, unreached))
    });
    let mut rep = CoveringReport { scales: scales.to_vec(), counts: vec![], net_sizes: vec![], samples: vec![], truncated: vec![], unreached: 0, dimension: 0.0, intercept: 0.0, residual: 0.0 };
    for (net, &eps) in nets.into_iter().zip(scales) {
        let (c, size, m, cut, u) = net?;
        rep.unreached += u;
        rep.counts.push(c);
        rep.net_sizes.push(size);
        rep.samples.push(m);
        if cut {
            rep.truncated.push(eps);
        }
    }
    if rep.counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidArgument("a scale left no centre in the set".into()));
    }
    let lx: Vec<f64> = scales.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = rep.counts.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, intercept, residual) = fit_line(&lx, &ly);
    rep.dimension = -slope;
    rep.intercept = intercept;
    rep.residual = residual;
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichRow {
    pub eps: f64,
    /// Σ diam^α over a cover by balls of diameter ≤ ε.
    pub spherical: f64,
    /// Σ diam^α over a cover by cells of diameter ≤ ε.
    pub general: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub alpha: f64,
    pub rows: Vec<SandwichRow>,
    pub holds: bool,
}

/// Compare ball-cover and cell-cover pre-measures against
/// H^α ≤ S^α ≤ 2^α H^α, allowing a factor 2 of estimator slack each way.
///
/// Cells are boxes in linear adapted coordinates at the sample centroid,
/// with side a^{w_k} along the k-th frame vector; their diameter is the
/// largest corner-to-corner distance of a reference cell.
pub fn sandwich_check(s: &SRStructure, points: &[Vec<f64>], alpha: f64, scales: &[f64], budget: &Budget, seed: u64) -> Result<SandwichReport> {
    let n = s.dim;
    let c: Vec<f64> = (0..n).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / points.len() as f64).collect();
    let nil = nilpotent_at(s, &c)?;
    let a = nalgebra::DMatrix::from_fn(n, n, |i, j| crate::expr::rat_to_f64(&nil.chart.a[i][j]));
    let ainv = a.clone().try_inverse().ok_or_else(|| Error::StepFailure("singular frame".into()))?;
    let w = &nil.weights;
    let tree = SeedTree::new(seed).child("sandwich");
    let pts = shuffled(points, seed);
    let cell_diam = |side: f64, t: &SeedTree| -> Result<f64> {
        let corners: Vec<Vec<f64>> = (0..1usize << n)
            .map(|mask| {
                let y: Vec<f64> = (0..n).map(|k| if mask >> k & 1 == 1 { 0.5 } else { -0.5 } * side.powi(w[k] as i32)).collect();
                let x = &a * nalgebra::DVector::from_vec(y);
                c.iter().zip(x.iter()).map(|(u, v)| u + v).collect()
            })
            .collect();
        let mut best: f64 = 0.0;
        for i in 0..corners.len() {
            for j in i + 1..corners.len() {
                let d = distance_from(s, &corners[i], &corners[j], budget, &t.index((i * 64 + j) as u64))?;
                best = best.max(d.value + d.error);
            }
        }
        Ok(best)
    };
    let mut rows = Vec::new();
    for (e, &eps) in scales.iter().enumerate() {
        let t = tree.index(e as u64);
        let net = eps_net(s, &pts, eps / 2.0, budget, &t.child("net"))?;
        let spherical = net.len() as f64 * eps.powf(alpha);
        // Side so that the cell diameter is just below ε.
        let mut side = eps;
        let mut diam = cell_diam(side, &t.child("cell"))?;
        for _ in 0..20 {
            if diam <= eps {
                break;
            }
            side *= 0.9 * (eps / diam).min(1.0);
            diam = cell_diam(side, &t.child("cell"))?;
        }
        let mut cells = std::collections::HashSet::new();
        for p in &pts {
            let d: Vec<f64> = p.iter().zip(&c).map(|(x, y)| x - y).collect();
            let y = &ainv * nalgebra::DVector::from_vec(d);
            let key: Vec<i64> = y.iter().zip(w).map(|(v, &wk)| (v / side.powi(wk as i32)).floor() as i64).collect();
            cells.insert(key);
        }
        let general = cells.len() as f64 * diam.powf(alpha);
        let holds = general / 2.0 <= spherical && spherical <= 2.0 * 2f64.powf(alpha) * general;
        rows.push(SandwichRow { eps, spherical, general, holds });
    }
    let holds = rows.iter().all(|r| r.holds);
    Ok(SandwichReport { alpha, rows, holds })
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoCandidate {
    pub family: String,
    pub params: Vec<f64>,
    /// Leb(A) / Leb(B̂(0, 1)).
    pub volume_ratio: MCEstimate,
    /// Largest sampled distance upper bound over pairs of points of A.
    pub diam_upper: f64,
    /// S^Q(A) / diam(A)^Q at the point estimates.
    pub ratio: f64,
    /// Same with the volume ratio 3 standard errors low and the diameter
    /// upper bound.
    pub certified: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoReport {
    pub q: u32,
    pub unit_volume: MCEstimate,
    pub candidates: Vec<IsoCandidate>,
    pub best: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct IsoOptions {
    pub measure: MeasureOptions,
    /// Uniform samples of the largest cap cylinder.
    pub cap_samples: usize,
    /// Distance pairs per candidate diameter.
    pub diameter_pairs: usize,
    /// Cap radii and heights, relative to the ball's extents.
    pub cap_radii: Vec<f64>,
    pub cap_heights: Vec<f64>,
    pub box_sizes: Vec<f64>,
}

impl Default for IsoOptions {
    fn default() -> Self {
        IsoOptions {
            measure: MeasureOptions::default(),
            cap_samples: 800,
            diameter_pairs: 400,
            cap_radii: vec![0.55, 0.64, 0.72],
            cap_heights: vec![0.9, 1.0],
            box_sizes: vec![0.5, 0.6, 0.7],
        }
    }
}

/// Cylinder over the top-weight directions: |z_H| ≤ ρ on the weight-one
/// coordinates, |z_k| ≤ τ_k elsewhere.
struct Cylinder {
    horizontal: Vec<usize>,
    vertical: Vec<usize>,
    rho: f64,
    tau: Vec<f64>,
}

impl Cylinder {
    fn contains(&self, z: &[f64]) -> bool {
        self.horizontal.iter().map(|&k| z[k] * z[k]).sum::<f64>() <= self.rho * self.rho
            && self.vertical.iter().zip(&self.tau).all(|(&k, t)| z[k].abs() <= *t)
    }

    fn volume(&self) -> f64 {
        let h = self.horizontal.len() as u32;
        let ball = PI.powf(h as f64 / 2.0) / gamma_half(h + 2) * self.rho.powi(h as i32);
        ball * self.tau.iter().map(|t| 2.0 * t).product::<f64>()
    }

    fn uniform(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut z = vec![0.0; n];
        loop {
            let v: Vec<f64> = self.horizontal.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
                for (&k, a) in self.horizontal.iter().zip(v) {
                    z[k] = a * self.rho;
                }
                break;
            }
        }
        for (&k, t) in self.vertical.iter().zip(&self.tau) {
            z[k] = rng.random_range(-1.0..1.0) * t;
        }
        z
    }

    /// A point of the boundary: top or bottom face, or the side.
    fn boundary(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut z = self.uniform(n, rng);
        if rng.random::<bool>() && !self.vertical.is_empty() {
            let i = rng.random_range(0..self.vertical.len());
            z[self.vertical[i]] = if rng.random::<bool>() { self.tau[i] } else { -self.tau[i] };
        } else {
            let r: f64 = self.horizontal.iter().map(|&k| z[k] * z[k]).sum::<f64>().sqrt().max(1e-300);
            for &k in &self.horizontal {
                z[k] *= self.rho / r;
            }
        }
        z
    }
}

/// Best S^Q(A)/diam(A)^Q over a fixed candidate family in a Carnot group:
/// the unit ball, the ball with cylinder caps over the poles, and boxes in
/// the dilation-adapted coordinates.  S^Q is the spherical density times
/// Lebesgue measure, so each ratio is Leb(A)/Leb(B̂) · (2/diam A)^Q.
pub fn isodiametric_search(nil: &NilpotentApprox, opt: &IsoOptions) -> Result<IsoReport> {
    if !nil.is_homogeneous() {
        return Err(Error::InvalidArgument("isodiametric search needs a homogeneous (Carnot) structure".into()));
    }
    let ns = nil.as_structure();
    let n = ns.dim;
    let q = nil.q;
    let mo = &opt.measure;
    let ub = unit_ball(nil, mo)?;
    let v = ub.volume.clone();
    let ext = &ub.gauge.scale;
    let w = &nil.weights;
    let tree = SeedTree::new(mo.seed).child("isodiametric");
    let zero = vec![0.0; n];
    let dist = |a: &[f64], b: &[f64], t: &SeedTree| -> Result<f64> {
        let d = distance_from(&ns, a, b, &mo.budget, t)?;
        Ok(d.value + d.error)
    };
    let qf = q as i32;
    let mut candidates = vec![IsoCandidate {
        family: "ball".into(),
        params: vec![],
        volume_ratio: MCEstimate::exact(1.0),
        diam_upper: 2.0,
        ratio: 1.0,
        certified: 1.0,
    }];
    // Unit sphere points, for diameters.
    let sphere: Vec<Vec<f64>> = ub.directions.iter().zip(&ub.norms).map(|(s, nv)| dilate(s, 1.0 / nv, w)).collect();

    let horizontal: Vec<usize> = (0..n).filter(|&k| w[k] == 1).collect();
    let top = *w.iter().max().unwrap();
    let vertical: Vec<usize> = (0..n).filter(|&k| w[k] == top && top > 1).collect();
    if !vertical.is_empty() && horizontal.len() == n - vertical.len() {
        let rh = horizontal.iter().map(|&k| ext[k]).fold(0.0, f64::max);
        let rmax = rh * opt.cap_radii.iter().cloned().fold(0.0, f64::max);
        let tmax: Vec<f64> = vertical.iter().map(|&k| ext[k] * opt.cap_heights.iter().cloned().fold(0.0, f64::max)).collect();
        let big = Cylinder { horizontal: horizontal.clone(), vertical: vertical.clone(), rho: rmax, tau: tmax };
        let ct = tree.child("caps");
        let pts: Vec<Result<(Vec<f64>, bool)>> = par_map(opt.cap_samples, |i| {
            let z = big.uniform(n, &mut ct.rng(i as u64));
            let d = distance_from(&ns, &zero, &z, &mo.budget, &ct.child("d").index(i as u64))?;
            // Certainly outside the ball.
            Ok((z, d.value - d.error >= 1.0))
        });
        let pts: Vec<(Vec<f64>, bool)> = pts.into_iter().collect::<Result<_>>()?;
        for &rf in &opt.cap_radii {
            for &hf in &opt.cap_heights {
                let cyl = Cylinder {
                    horizontal: horizontal.clone(),
                    vertical: vertical.clone(),
                    rho: rh * rf,
                    tau: vertical.iter().map(|&k| ext[k] * hf).collect(),
                };
                let xs: Vec<f64> = pts.iter().map(|(z, out)| if *out && cyl.contains(z) { big.volume() } else { 0.0 }).collect();
                let extra = MCEstimate::from_samples(&xs, mo.seed);
                // Diameter: pairs with at least one point on the cap boundary
                // outside the ball; pairs inside the ball are within 2.
                let dt = tree.child("cap-diam").index((rf * 1e3) as u64).index((hf * 1e3) as u64);
                let pairs: Vec<Result<f64>> = par_map(opt.diameter_pairs, |i| {
                    let mut rng = dt.rng(i as u64);
                    let a = cyl.boundary(n, &mut rng);
                    let b = if rng.random::<bool>() { cyl.boundary(n, &mut rng) } else { sphere[rng.random_range(0..sphere.len())].clone() };
                    dist(&a, &b, &dt.child("d").index(i as u64))
                });
                let mut diam: f64 = 2.0;
                for p in pairs {
                    diam = diam.max(p?);
                }
                let vr = MCEstimate { mean: 1.0 + extra.mean / v.mean, stderr: (extra.stderr / v.mean).hypot(extra.mean * v.stderr / (v.mean * v.mean)), ..extra.clone() };
                let scale = (2.0 / diam).powi(qf);
                candidates.push(IsoCandidate {
                    family: "ball+caps".into(),
                    params: vec![cyl.rho, cyl.tau[0]],
                    ratio: vr.mean * scale,
                    certified: (vr.mean - 3.0 * vr.stderr) * scale,
                    volume_ratio: vr,
                    diam_upper: diam,
                });
            }
        }
    }
    for &bf in &opt.box_sizes {
        let half: Vec<f64> = ext.iter().map(|e| e * bf.powi(1)).collect();
        let vol: f64 = half.iter().map(|h| 2.0 * h).product();
        let dt = tree.child("box-diam").index((bf * 1e3) as u64);
        let corner = |mask: usize| -> Vec<f64> { (0..n).map(|k| if mask >> k & 1 == 1 { half[k] } else { -half[k] }).collect() };
        let pairs: Vec<Result<f64>> = par_map(opt.diameter_pairs / 4 + (1 << (2 * n)), |i| {
            let corners = 1usize << n;
            if i < corners * corners {
                let (a, b) = (i / corners, i % corners);
                if a >= b {
                    return Ok(0.0);
                }
                return dist(&corner(a), &corner(b), &dt.index(i as u64));
            }
            let mut rng = dt.rng(i as u64);
            let face = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let mut z: Vec<f64> = half.iter().map(|h| rng.random_range(-1.0..1.0) * h).collect();
                let k = rng.random_range(0..n);
                z[k] = if rng.random::<bool>() { half[k] } else { -half[k] };
                z
            };
            let a = face(&mut rng);
            let b = face(&mut rng);
            dist(&a, &b, &dt.index(i as u64))
        });
        let mut diam: f64 = 0.0;
        for p in pairs {
            diam = diam.max(p?);
        }
        let vr = MCEstimate { mean: vol / v.mean, stderr: vol * v.stderr / (v.mean * v.mean), ..v.clone() };
        let scale = (2.0 / diam).powi(qf);
        candidates.push(IsoCandidate {
            family: "box".into(),
            params: half.clone(),
            ratio: vr.mean * scale,
            certified: (vr.mean - 3.0 * vr.stderr) * scale,
            volume_ratio: vr,
            diam_upper: diam,
        });
    }
    let best = (0..candidates.len()).max_by(|&a, &b| candidates[a].certified.total_cmp(&candidates[b].certified)).unwrap();
    Ok(IsoReport { q, unit_volume: v, candidates, best })
}

#[derive(Clone, Debug, Serialize)]
pub struct FedererRow {
    pub eps: f64,
    /// Ratio of the ball B(p, ε/2), whose diameter is at most ε.
    pub ball: MCEstimate,
    /// Best nilpotent candidate carried to p through the chart and scaled
    /// to diameter below ε; `None` when the family has only the ball.
    pub transplanted: Option<MCEstimate>,
    pub diam_upper: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FedererCurve {
    pub point: Vec<f64>,
    pub q: u32,
    pub nilpotent_best: f64,
    pub rows: Vec<FedererRow>,
}

/// Lower-bound curve for the Federer ratio sup S^Q(A)/diam(A)^Q over
/// candidates through p of diameter below ε.  S^Q(A) is taken as
/// spherical_density(p) · μ(A).
pub fn federer_ratio_probe(s: &SRStructure, p: &[f64], eps: &[f64], opt: &IsoOptions) -> Result<FedererCurve> {
    let mo = &opt.measure;
    let halves: Vec<f64> = eps.iter().map(|e| e / 2.0).collect();
    let profile = ball_profile(s, p, &halves, 1.0, mo)?;
    let ratios = ball_ratios(&profile);
    let q = profile.q;
    let nil = &profile.nil;
    let w = &nil.weights;
    let mu = mu_hat_from(s, nil, mo)?;
    let sd = spherical_from(&mu);
    let iso = if nil.is_homogeneous() { Some(isodiametric_search(nil, opt)?) } else { None };
    let best = iso.as_ref().map(|r| r.candidates[r.best].clone());
    let gl = unit_gauss(12);
    let tree = SeedTree::new(mo.seed).child("federer");
    let mut rows = Vec::new();
    for (e, (&ep, br)) in eps.iter().zip(&ratios).enumerate() {
        // S^Q(B)/(2r)^Q = sd · μ(B(p,r))/r^Q / 2^Q.
        let ball = br.ratio.scale(sd.value / 2f64.powi(q as i32));
        let (transplanted, diam_upper) = match &best {
            Some(c) if c.family == "ball+caps" => {
                let cyl_rho = c.params[0];
                let tau = c.params[1];
                let n = s.dim;
                let horizontal: Vec<usize> = (0..n).filter(|&k| w[k] == 1).collect();
                let top = *w.iter().max().unwrap();
                let vertical: Vec<usize> = (0..n).filter(|&k| w[k] == top).collect();
                let cyl = Cylinder { horizontal, vertical: vertical.clone(), rho: cyl_rho, tau: vec![tau; vertical.len()] };
                let lam = ep / c.diam_upper;
                let ns = nil.as_structure();
                let zero = vec![0.0; n];
                let t = tree.index(e as u64);
                // μ(φ⁻¹ δ_λ A)/λ^Q = ∫_A g(δ_λ ζ) dζ: rays for the ball part,
                // uniform samples for the cap part outside it.
                let ball_part: Vec<f64> = profile
                    .unit
                    .directions
                    .iter()
                    .zip(&profile.unit.norms)
                    .map(|(sg, nv)| profile.unit.gauge.volume * ray_integral(&gl, q, 1.0 / nv, |u| profile.chart.point_and_weight(&dilate(sg, lam * u, w)).1))
                    .collect();
                let cap: Vec<Result<f64>> = par_map(opt.cap_samples / 2, |i| {
                    let z = cyl.uniform(n, &mut t.rng(i as u64));
                    let d = distance_from(&ns, &zero, &z, &mo.budget, &t.child("d").index(i as u64))?;
                    Ok(if d.value - d.error >= 1.0 { cyl.volume() * profile.chart.point_and_weight(&dilate(&z, lam, w)).1 } else { 0.0 })
                });
                let cap: Vec<f64> = cap.into_iter().collect::<Result<_>>()?;
                let vol = MCEstimate::from_samples(&ball_part, mo.seed).plus(&MCEstimate::from_samples(&cap, mo.seed));
                // Diameter in the original metric from boundary pairs.
                let sphere: Vec<Vec<f64>> = profile.unit.directions.iter().zip(&profile.unit.norms).map(|(sg, nv)| dilate(sg, 1.0 / nv, w)).collect();
                let dt = t.child("diam");
                let pairs: Vec<Result<f64>> = par_map(opt.diameter_pairs / 2, |i| {
                    let mut rng = dt.rng(i as u64);
                    let a = if rng.random::<bool>() { cyl.boundary(n, &mut rng) } else { sphere[rng.random_range(0..sphere.len())].clone() };
                    let b = if rng.random::<bool>() { cyl.boundary(n, &mut rng) } else { sphere[rng.random_range(0..sphere.len())].clone() };
                    let xa = profile.chart.point(&dilate(&a, lam, w));
                    let xb = profile.chart.point(&dilate(&b, lam, w));
                    let d = distance_from(s, &xa, &xb, &mo.budget, &dt.child("d").index(i as u64))?;
                    Ok(d.value + d.error)
                });
                let mut diam: f64 = 0.0;
                for p in pairs {
                    diam = diam.max(p?);
                }
                let r = vol.scale(sd.value * lam.powi(q as i32) / diam.powi(q as i32));
                (Some(r), Some(diam))
            }
            _ => (None, None),
        };
        rows.push(FedererRow { eps: ep, ball, transplanted, diam_upper });
    }
    Ok(FedererCurve {
        point: p.to_vec(),
        q,
        nilpotent_best: best.map(|c| c.ratio).unwrap_or(1.0),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{euclidean_plane, grushin};

    #[test]
    fn gauge_volume_closed_form() {
        // {x² + y² + |z| < 1} has volume ∫ π(1 − |z|) dz = π.
        let g = Gauge::new(vec![1.0, 1.0, 1.0], vec![1, 1, 2]);
        assert!((g.volume - PI).abs() < 1e-12);
        let g = Gauge::new(vec![2.0, 0.5], vec![1, 1]);
        assert!((g.volume - PI).abs() < 1e-12);
        let g = Gauge::new(vec![1.0, 1.0, 1.0], vec![1, 1, 1]);
        assert!((g.volume - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gauge_directions_lie_on_the_unit_level_set() {
        let g = Gauge::new(vec![1.0, 2.0, 0.3], vec![1, 1, 2]);
        let mut rng = SeedTree::new(5).rng(0);
        for _ in 0..200 {
            let s = g.direction(&mut rng);
            assert!((g.norm(&s) - 1.0).abs() < 1e-12);
            let z = g.uniform(0.7, &mut rng);
            assert!(g.norm(&z) < 0.7);
        }
    }

    #[test]
    fn gauge_angular_law_matches_uniform_volume() {
        // The cube [-1,1]³ with weights (1,1,2) is δ-star-shaped with
        // N(z) = max(|x|, |y|, |z|^{1/2}); its volume is 8.
        let g = Gauge::new(vec![1.0, 1.0, 1.0], vec![1, 1, 2]);
        let tree = SeedTree::new(9);
        let xs: Vec<f64> = (0..20000)
            .map(|i| {
                let s = g.direction(&mut tree.rng(i));
                let nrm = s[0].abs().max(s[1].abs()).max(s[2].abs().sqrt());
                g.volume * nrm.powi(-4)
            })
            .collect();
        let est = MCEstimate::from_samples(&xs, 9);
        assert!(est.within(8.0, 4.0), "{est:?}");
    }

    #[test]
    fn euclidean_unit_disc() {
        let e = euclidean_plane();
        let opt = MeasureOptions { directions: 64, ..Default::default() };
        let mu = mu_hat_ball(&e, &[0.2, -0.1], &opt).unwrap();
        assert_eq!(mu.q, 2);
        assert!(!mu.formal);
        assert!((mu.value.mean - PI).abs() < 1e-3, "{:?}", mu.value);
        let sd = spherical_density(&e, &[0.2, -0.1], &opt).unwrap();
        assert!((sd.value - 4.0 / PI).abs() < 1e-3);
    }

    #[test]
    fn grushin_regular_ball_is_an_ellipse() {
        let g = grushin();
        let opt = MeasureOptions { directions: 64, ..Default::default() };
        for t in [1.0, 0.5] {
            let mu = mu_hat_ball(&g, &[t, 0.3], &opt).unwrap();
            assert!((mu.value.mean / (PI * t) - 1.0).abs() < 1e-3, "{t}: {:?}", mu.value);
        }
        let mu = mu_hat_ball(&g, &[0.0, 0.3], &opt).unwrap();
        assert!(mu.formal);
        assert_eq!(mu.q, 3);
    }

    #[test]
    fn fit_line_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let (s, c, r) = fit_line(&x, &y);
        assert!((s + 3.0).abs() < 1e-12 && (c - 2.0).abs() < 1e-12 && r < 1e-12);
    }
}
