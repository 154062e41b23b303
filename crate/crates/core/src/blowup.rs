//! Measured Gromov–Hausdorff blow-up at a point.
//!
//! All integrals run along the dilation rays of a [`BallProfile`].  In chart
//! coordinates z = φ(x) the ball B(p, Rε) is {δ_v σ : v < ε u*(σ)}, and the
//! pushed-forward measure of the rescaled space is
//!
//! ```text
//! ∫ h dμ_ε = ε^{−Q} ∫_{B(p,Rε)} h(δ_{1/ε} z) w(z) dz
//! ```
//!
//! with w the density of the measure in the chart.  The limit measure is the
//! constant multiple of Lebesgue measure on B̂(0, R), integrated along the
//! same rays up to R / d̂(0, σ).  Both sides share their directions, so the
//! differences are paired samples.

use rand::Rng;
use serde::Serialize;

use crate::distance::{distance_from, Budget};
use crate::error::{Error, Result};
use crate::expr::{fill_powers, rat_from_f64, CompiledExpr, Rat};
use crate::flag::{flag_at_exact, DEFAULT_DEPTH};
use crate::frames::AdaptedFrame;
use crate::mc::MCEstimate;
use crate::measures::{ball_profile, ray_integral, unit_gauss, BallProfile, MeasureOptions, EXIT_TOL};
use crate::nilpotent::{dilate, nilpotentize, privileged_chart};
use crate::par::par_map;
use crate::popp::is_singular;
use crate::rng::SeedTree;
use crate::structure::SRStructure;

/// Half-side of the box [−2, 2]^n where test functions are evaluated.
pub const DICTIONARY_BOX: f64 = 2.0;
pub const DICTIONARY_SIZE: usize = 20;
const SIGMOID_WIDTH: f64 = 0.05;
const THRESHOLDS: [f64; 8] = [0.0, 0.5, -0.5, 0.25, -0.25, 0.75, -0.75, 0.125];

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestFunction {
    /// z^α / 2^{|α|}.
    Monomial { exponents: Vec<u32> },
    /// (1 − (d̂(0, ζ)/R)²)₊.
    Bump { radius: f64 },
    /// Logistic step in coordinate k at `threshold`.
    Sigmoid { coord: usize, threshold: f64 },
}

impl TestFunction {
    /// Value at ζ, already clipped to the dictionary box, with d̂(0, ζ)
    /// before clipping.
    pub fn eval(&self, zeta: &[f64], nhat: f64) -> f64 {
        match self {
            TestFunction::Monomial { exponents } => {
                zeta.iter().zip(exponents).map(|(z, &a)| (z / DICTIONARY_BOX).powi(a as i32)).product()
            }
            TestFunction::Bump { radius } => (1.0 - (nhat / radius).powi(2)).max(0.0),
            TestFunction::Sigmoid { coord, threshold } => 1.0 / (1.0 + (-(zeta[*coord] - threshold) / SIGMOID_WIDTH).exp()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Monomial { exponents } => {
                let parts: Vec<String> = exponents
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a > 0)
                    .map(|(k, &a)| if a == 1 { format!("z{}", k + 1) } else { format!("z{}^{}", k + 1, a) })
                    .collect();
                if parts.is_empty() {
                    "1".into()
                } else {
                    parts.join("*")
                }
            }
            TestFunction::Bump { radius } => format!("bump(R={radius})"),
            TestFunction::Sigmoid { coord, threshold } => format!("step(z{} > {threshold:.4})", coord + 1),
        }
    }
}

/// Monomials of weighted degree at most 2, one radial bump, and smoothed
/// coordinate steps placed inside the limit ball, twenty functions in all.
pub fn dictionary(weights: &[u32], extents: &[f64], radius: f64) -> Vec<TestFunction> {
    let n = weights.len();
    let mut out = vec![TestFunction::Monomial { exponents: vec![0; n] }];
    for k in 0..n {
        if weights[k] <= 2 {
            let mut e = vec![0; n];
            e[k] = 1;
            out.push(TestFunction::Monomial { exponents: e });
        }
    }
    for i in 0..n {
        for j in i..n {
            if weights[i] == 1 && weights[j] == 1 {
                let mut e = vec![0; n];
                e[i] += 1;
                e[j] += 1;
                out.push(TestFunction::Monomial { exponents: e });
            }
        }
    }
    out.push(TestFunction::Bump { radius });
    let mut j = 0;
    while out.len() < DICTIONARY_SIZE {
        let k = j % n;
        let t = THRESHOLDS[(j / n) % THRESHOLDS.len()];
        let c = (t * extents[k] * radius.powi(weights[k] as i32)).clamp(-DICTIONARY_BOX, DICTIONARY_BOX);
        out.push(TestFunction::Sigmoid { coord: k, threshold: c });
        j += 1;
    }
    out.truncate(DICTIONARY_SIZE);
    out
}

fn clip(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.clamp(-DICTIONARY_BOX, DICTIONARY_BOX)).collect()
}

/// One ray's contribution to ε^{−Q} ∫ h(δ_{1/ε} z) w(z) dz for every h, over
/// z = δ_v σ with v < v_max, and with d̂(0, σ) = `norm`.  The factor Leb{M < 1}
/// of the polar decomposition is left to the caller.
pub fn ray_moments(
    dict: &[TestFunction],
    gl: &[(f64, f64)],
    q: u32,
    weights: &[u32],
    sigma: &[f64],
    norm: f64,
    vmax: f64,
    eps: f64,
    w: impl Fn(&[f64]) -> f64,
) -> Vec<f64> {
    let mut acc = vec![0.0; dict.len()];
    let scale = eps.powi(-(q as i32));
    for (k, h) in dict.iter().enumerate() {
        acc[k] = scale
            * ray_integral(gl, q, vmax, |v| {
                let z = dilate(sigma, v, weights);
                let zeta = dilate(&z, 1.0 / eps, weights);
                h.eval(&clip(&zeta), v / eps * norm) * w(&z)
            });
    }
    acc
}

#[derive(Clone, Debug, Serialize)]
pub struct Discrepancy {
    /// max over the dictionary of |∫ h dμ_ε − ∫ h dμ_0|, divided by the
    /// limit mass of B̂(0, R).
    pub value: f64,
    /// Standard error of the maximizing difference, same units.
    pub stderr: f64,
    /// Largest standard error over the dictionary, floored by what the exit
    /// tolerance can resolve.
    pub noise: f64,
    pub worst: String,
    /// Limit mass of B̂(0, R).
    pub scale: f64,
}

fn discrepancy(dict: &[TestFunction], a: &[Vec<f64>], b: &[Vec<f64>], q: u32, seed: u64) -> Discrepancy {
    let mass = MCEstimate::from_samples(&b.iter().map(|r| r[0]).collect::<Vec<_>>(), seed).mean;
    let mut best = (-1.0f64, 0.0f64, 0usize);
    // |h| ≤ 1 on the clipped box and h has weighted degree ≤ 2, so moving every
    // exit by a relative EXIT_TOL moves ∫ h by at most (Q + 2)·EXIT_TOL of the mass.
    let mut noise = (q + 2) as f64 * EXIT_TOL;
    for k in 0..dict.len() {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x[k] - y[k]) / mass).collect();
        let est = MCEstimate::from_samples(&d, seed);
        noise = noise.max(est.stderr);
        if est.mean.abs() > best.0 {
            best = (est.mean.abs(), est.stderr, k);
        }
    }
    Discrepancy { value: best.0, stderr: best.1, noise, worst: dict[best.2].label(), scale: mass }
}

/// Which density the rescaled spaces carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlowupMeasure {
    /// The smooth volume μ.
    Smooth,
    /// The spherical Hausdorff measure, as (dS^Q/dμ) μ.
    Spherical,
}

impl std::str::FromStr for BlowupMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(BlowupMeasure::Smooth),
            "spherical" => Ok(BlowupMeasure::Spherical),
            _ => Err(Error::InvalidArgument(format!("unknown measure '{s}' (smooth|spherical)"))),
        }
    }
}

/// dS^Q/dμ at chart points near p, relative to its value at p.
///
/// dS^Q/dμ(x) = 2^Q / μ̂^x(B̂_x), and μ̂^x(B̂_x) is ω_x(Y_1, …, Y_n) times the
/// Lebesgue volume of the nilpotent unit ball in the chart of the frame Y.
/// Keeping the frame words of p, that volume does not move with x as long
/// as the truncated fields do not, which [`SphericalRatio::new`] checks
/// exactly at a few points.
pub struct SphericalRatio {
    frame: Vec<Vec<CompiledExpr>>,
    volume: CompiledExpr,
    stride: usize,
    density0: f64,
}

impl SphericalRatio {
    pub fn new(s: &SRStructure, profile: &BallProfile, checks: &[Vec<f64>]) -> Result<Self> {
        let nil = &profile.nil;
        let table = s.brackets();
        let mut frame = Vec::new();
        for w in &nil.frame.words {
            let b = table.levels[w.len() - 1]
                .iter()
                .find(|b| &b.word == w)
                .ok_or_else(|| Error::InvalidArgument(format!("frame word {w} is not in the bracket table")))?;
            frame.push(b.signed_field().comps().iter().map(CompiledExpr::new).collect());
        }
        let degree = table
            .levels
            .iter()
            .flatten()
            .flat_map(|b| b.field.comps().iter().map(|c| c.degree()))
            .chain([s.volume.degree()])
            .max()
            .unwrap_or(1);
        let key = nil.key();
        for x in checks {
            let xr: Vec<Rat> = x.iter().map(|&v| rat_from_f64(v)).collect();
            let flag = flag_at_exact(s, &xr, DEFAULT_DEPTH)?;
            let exact: Vec<Vec<Rat>> = nil
                .frame
                .words
                .iter()
                .map(|w| {
                    let b = table.levels[w.len() - 1].iter().find(|b| &b.word == w).expect("found above");
                    b.eval_rat(&xr)
                })
                .collect();
            let fr = AdaptedFrame {
                words: nil.frame.words.clone(),
                levels: nil.frame.levels.clone(),
                vectors: exact.iter().map(|v| v.iter().map(crate::expr::rat_to_f64).collect()).collect(),
                exact,
                total_length: nil.frame.total_length,
            };
            let chart = privileged_chart(s, &xr, &fr)?;
            let other = nilpotentize(s, &xr, &fr, &chart, &flag)?;
            if other.key() != key {
                return Err(Error::InvalidArgument(format!(
                    "the tangent cone at {x:?} differs from the one at {:?} in the frame of p; the spherical density is not transported",
                    nil.point
                )));
            }
        }
        Ok(SphericalRatio { frame, volume: CompiledExpr::new(&s.volume), stride: degree as usize + 1, density0: nil.density0 })
    }

    /// dS^Q/dμ(x) / dS^Q/dμ(p).
    pub fn at(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut pw = Vec::new();
        fill_powers(x, self.stride, &mut pw);
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| self.frame[j][i].eval_table(&pw, self.stride));
        let d = (self.volume.eval_table(&pw, self.stride) * m.determinant()).abs();
        self.density0 / d
    }
}

/// Smooth or spherical discrepancy at each ε of the profile.  At singular
/// points the spherical density is frozen at its value at p, which makes the
/// two coincide; the result is then formal.
pub fn measure_discrepancy(s: &SRStructure, profile: &BallProfile, measure: BlowupMeasure) -> Result<(Vec<Discrepancy>, bool)> {
    let singular = is_singular(s, &profile.point, 1e-6)?;
    let ratio = match measure {
        BlowupMeasure::Spherical if !singular => Some(SphericalRatio::new(s, profile, &check_points(profile))?),
        _ => None,
    };
    let formal = measure == BlowupMeasure::Spherical && singular;
    let nil = &profile.nil;
    let w = &nil.weights;
    let q = profile.q;
    let unit = &profile.unit;
    let dict = dictionary(w, &unit.gauge.scale, profile.radius);
    let gl = unit_gauss(12);
    let lm = unit.gauge.volume;
    let b: Vec<Vec<f64>> = (0..unit.directions.len())
        .map(|i| {
            let sg = &unit.directions[i];
            let m = ray_moments(&dict, &gl, q, w, sg, unit.norms[i], profile.radius / unit.norms[i], 1.0, |_| nil.density0);
            m.into_iter().map(|v| v * lm).collect()
        })
        .collect();
    let mut out = Vec::new();
    for (e, &ep) in profile.eps.iter().enumerate() {
        let a: Vec<Vec<f64>> = par_map(unit.directions.len(), |i| {
            let sg = &unit.directions[i];
            let m = ray_moments(&dict, &gl, q, w, sg, unit.norms[i], ep * profile.exits[e][i], ep, |z| {
                let (x, g) = profile.chart.point_and_weight(z);
                match &ratio {
                    Some(r) => g * r.at(&x),
                    None => g,
                }
            });
            m.into_iter().map(|v| v * lm).collect()
        });
        out.push(discrepancy(&dict, &a, &b, profile.q, profile.seed));
    }
    Ok((out, formal))
}

/// Points on the largest ball where the frame transport is checked.
fn check_points(profile: &BallProfile) -> Vec<Vec<f64>> {
    let Some(e) = (0..profile.eps.len()).max_by(|&i, &j| profile.eps[i].total_cmp(&profile.eps[j])) else {
        return Vec::new();
    };
    let ep = profile.eps[e];
    (0..profile.unit.directions.len().min(4))
        .map(|i| profile.x_of(&dilate(&profile.unit.directions[i], profile.exits[e][i], &profile.nil.weights), ep))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Distortion {
    pub eps: f64,
    /// max over pairs of |d(x, x')/ε − d̂(ζ, ζ')|.
    pub value: f64,
    /// Largest combined error bar of the two distances of a pair.
    pub noise: f64,
    pub pairs: usize,
}

/// Sample cloud of the rescaled ball: points x of B(p, Rε) and their images
/// ζ = δ_{1/ε} φ(x).
#[derive(Clone, Debug, Serialize)]
pub struct Cloud {
    pub eps: f64,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Points of the ball in polar form (direction, fraction of the exit
/// parameter), common to every ε.
fn polar_samples(profile: &BallProfile, count: usize, seed: u64) -> Vec<(usize, f64)> {
    let tree = SeedTree::new(seed).child("blowup-cloud");
    let q = profile.q as f64;
    (0..count)
        .map(|i| {
            let mut rng = tree.rng(i as u64);
            let d = rng.random_range(0..profile.unit.directions.len());
            let t: f64 = rng.random::<f64>().powf(1.0 / q);
            (d, t)
        })
        .collect()
}

pub fn clouds(profile: &BallProfile, count: usize, seed: u64) -> Vec<Cloud> {
    let samples = polar_samples(profile, count, seed);
    let w = &profile.nil.weights;
    profile
        .eps
        .iter()
        .enumerate()
        .map(|(e, &ep)| {
            let post: Vec<Vec<f64>> = samples.iter().map(|&(d, t)| dilate(&profile.unit.directions[d], t * profile.exits[e][d], w)).collect();
            let pre = post.iter().map(|z| profile.x_of(z, ep)).collect();
            Cloud { eps: ep, pre, post }
        })
        .collect()
}

/// Gromov–Hausdorff distortion of f_ε = δ_{1/ε} ∘ φ on `pairs` random pairs
/// of points of B(p, Rε), the same pairs (in polar form) for every ε.
pub fn gh_distortion(s: &SRStructure, profile: &BallProfile, pairs: usize, budget: &Budget, seed: u64) -> Result<Vec<Distortion>> {
    let cl = clouds(profile, 2 * pairs, seed);
    let ns = profile.nil.as_structure();
    let tree = SeedTree::new(seed).child("gh-distortion");
    let mut out = Vec::new();
    for (e, c) in cl.iter().enumerate() {
        let t = tree.index(e as u64);
        let res: Vec<Result<(f64, f64)>> = par_map(pairs, |j| {
            let (a, b) = (2 * j, 2 * j + 1);
            let d = distance_from(s, &c.pre[a], &c.pre[b], budget, &t.child("original").index(j as u64))?;
            let dh = distance_from(&ns, &c.post[a], &c.post[b], budget, &t.child("nilpotent").index(j as u64))?;
            Ok(((d.value / c.eps - dh.value).abs(), d.error / c.eps + dh.error))
        });
        let mut value = 0.0f64;
        let mut noise = 0.0f64;
        for r in res {
            let (v, n) = r?;
            value = value.max(v);
            noise = noise.max(n);
        }
        out.push(Distortion { eps: c.eps, value, noise, pairs });
    }
    Ok(out)
}

/// Share of the μ-mass of B(p, Rε) that lands outside B̂(0, (1 + margin) R)
/// after dilation.
pub fn outside_fraction(profile: &BallProfile, margin: f64) -> Vec<f64> {
    let gl = unit_gauss(12);
    let q = profile.q;
    let w = &profile.nil.weights;
    let unit = &profile.unit;
    profile
        .eps
        .iter()
        .enumerate()
        .map(|(e, &ep)| {
            let mut total = 0.0;
            let mut outside = 0.0;
            for (i, sg) in unit.directions.iter().enumerate() {
                let ustar = profile.exits[e][i];
                let weight = |u: f64| profile.chart.point_and_weight(&dilate(sg, ep * u, w)).1;
                total += ray_integral(&gl, q, ustar, weight);
                let cut = (1.0 + margin) * profile.radius / unit.norms[i];
                if ustar > cut {
                    outside += ray_integral(&gl, q, ustar, weight) - ray_integral(&gl, q, cut, weight);
                }
            }
            if total > 0.0 {
                outside / total
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupOptions {
    pub measure: MeasureOptions,
    /// Point pairs for the distortion.
    pub pairs: usize,
    /// The distortion is a maximum over pairs, so one solve stuck in a local
    /// minimum spoils it; its distances get more starts than the rays.
    pub pair_budget: Budget,
    /// Dilated samples beyond B̂(0, (1 + margin) R) count as outside.
    pub margin: f64,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        BlowupOptions { measure: MeasureOptions::default(), pairs: 24, pair_budget: Budget::default(), margin: 0.2 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupRow {
    pub eps: f64,
    pub distortion: Distortion,
    pub smooth: Discrepancy,
    pub spherical: Discrepancy,
    pub outside: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupExperiment {
    pub point: Vec<f64>,
    pub q: u32,
    pub radius: f64,
    pub singular: bool,
    /// Set when the spherical rows use a frozen density.
    pub spherical_formal: bool,
    pub key: String,
    pub dictionary: Vec<String>,
    pub rows: Vec<BlowupRow>,
    pub unconverged: usize,
}

pub fn blowup_experiment(s: &SRStructure, p: &[f64], radius: f64, eps: &[f64], opt: &BlowupOptions) -> Result<BlowupExperiment> {
    if !(radius > 0.0) || eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("radius and every ε must be positive".into()));
    }
    let profile = ball_profile(s, p, eps, radius, &opt.measure)?;
    let (smooth, _) = measure_discrepancy(s, &profile, BlowupMeasure::Smooth)?;
    let (spherical, formal) = measure_discrepancy(s, &profile, BlowupMeasure::Spherical)?;
    let dist = gh_distortion(s, &profile, opt.pairs, &opt.pair_budget, opt.measure.seed)?;
    let outside = outside_fraction(&profile, opt.margin);
    let rows = dist
        .into_iter()
        .zip(smooth)
        .zip(spherical)
        .zip(outside)
        .map(|(((d, sm), sp), o)| BlowupRow { eps: d.eps, distortion: d, smooth: sm, spherical: sp, outside: o })
        .collect();
    let unit = &profile.unit;
    Ok(BlowupExperiment {
        point: p.to_vec(),
        q: profile.q,
        radius,
        singular: is_singular(s, p, 1e-6)?,
        spherical_formal: formal,
        key: profile.nil.key(),
        dictionary: dictionary(&profile.nil.weights, &unit.gauge.scale, radius).iter().map(|h| h.label()).collect(),
        rows,
        unconverged: profile.unconverged,
    })
}

/// Whether a curve of (value, noise) pairs decreases along the schedule:
/// every step is a strict decrease, or both of its values are within three
/// noise units of zero.
pub fn decreasing_within_noise(curve: &[(f64, f64)]) -> bool {
    curve.windows(2).all(|w| {
        let floor = 3.0 * w[0].1.max(w[1].1);
        w[1].0 < w[0].0 || w[0].0.max(w[1].0) <= floor
    })
}

impl BlowupExperiment {
    pub fn distortion_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.distortion.value, r.distortion.noise)).collect()
    }

    pub fn smooth_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.smooth.value, r.smooth.noise)).collect()
    }

    pub fn spherical_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.spherical.value, r.spherical.noise)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{grushin, heisenberg};

    #[test]
    fn dictionary_has_twenty_distinct_functions() {
        for (w, ext) in [(vec![1, 1, 2], vec![0.5, 0.5, 0.15]), (vec![1, 2], vec![1.0, 0.5]), (vec![1, 1, 3], vec![1.0, 1.0, 0.2])] {
            let d = dictionary(&w, &ext, 1.0);
            assert_eq!(d.len(), DICTIONARY_SIZE);
            for i in 0..d.len() {
                for j in 0..i {
                    assert_ne!(d[i], d[j]);
                }
            }
            let box_corner = vec![DICTIONARY_BOX; w.len()];
            for h in &d {
                assert!(h.eval(&box_corner, 0.0).abs() <= 1.0 + 1e-12);
            }
        }
    }

    // ε^{−Q} ∫ h(δ_{1/ε} z) w(z) dz is unchanged when ε is halved and the
    // measure replaced by 2^{−Q} (δ_{1/2})_* of itself.
    #[test]
    fn rescaling_identity_is_exact() {
        let weights = [1u32, 1, 2];
        let q = 4;
        let dict = dictionary(&weights, &[0.6, 0.6, 0.2], 1.0);
        let gl = unit_gauss(12);
        let w = |z: &[f64]| 1.0 + 0.3 * z[0] - 0.2 * z[1] * z[1] + 0.5 * z[2];
        let sigma = [0.3, -0.4, 0.1];
        for eps in [0.4, 0.2, 0.1] {
            let a = ray_moments(&dict, &gl, q, &weights, &sigma, 1.7, 0.8 * eps, eps, w);
            let b = ray_moments(&dict, &gl, q, &weights, &sigma, 1.7, 0.4 * eps, eps / 2.0, |z: &[f64]| w(&dilate(z, 2.0, &weights)));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} {y}");
            }
        }
    }

    #[test]
    fn monotonicity_with_a_noise_floor() {
        assert!(decreasing_within_noise(&[(0.4, 0.01), (0.2, 0.01), (0.1, 0.01)]));
        assert!(!decreasing_within_noise(&[(0.4, 0.01), (0.5, 0.01), (0.1, 0.01)]));
        assert!(decreasing_within_noise(&[(1e-7, 1e-6), (3e-7, 1e-6), (2e-7, 1e-6)]));
        assert!(!decreasing_within_noise(&[(0.1, 1e-6), (0.1, 1e-6)]));
    }

    fn small_profile(s: &SRStructure, p: &[f64]) -> BallProfile {
        let opt = MeasureOptions { directions: 32, ..MeasureOptions::default() };
        ball_profile(s, p, &[0.1], 1.0, &opt).unwrap()
    }

    // dS²/dμ = 4 / (π |x1|) on the regular Grushin plane.
    #[test]
    fn grushin_spherical_ratio_is_inverse_abscissa() {
        let g = grushin();
        let prof = small_profile(&g, &[1.0, 0.0]);
        let r = SphericalRatio::new(&g, &prof, &check_points(&prof)).unwrap();
        for x in [[0.95, 0.03], [1.08, -0.05], [0.5, 0.7], [-0.25, 0.1]] {
            assert!((r.at(&x) - 1.0 / x[0].abs()).abs() < 1e-12, "{x:?}");
        }
        for c in &clouds(&prof, 64, 3)[0].pre {
            assert!((r.at(c) - 1.0 / c[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn heisenberg_spherical_ratio_is_constant() {
        let h = heisenberg();
        let prof = small_profile(&h, &[0.2, -0.1, 0.3]);
        let r = SphericalRatio::new(&h, &prof, &check_points(&prof)).unwrap();
        for c in &clouds(&prof, 64, 3)[0].pre {
            assert!((r.at(c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clouds_stay_in_the_ball() {
        let g = grushin();
        let prof = small_profile(&g, &[1.0, 0.0]);
        let c = &clouds(&prof, 16, 5)[0];
        let t = SeedTree::new(4);
        for (k, x) in c.pre.iter().enumerate() {
            let d = distance_from(&g, &[1.0, 0.0], x, &Budget::default(), &t.index(k as u64)).unwrap();
            assert!(d.value <= prof.radius * 0.1 * (1.0 + 1e-3), "{x:?} {}", d.value);
        }
    }
}
