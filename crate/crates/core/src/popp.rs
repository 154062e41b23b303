//! Popp's measure: graded inner products, densities on regular points and on
//! equisingular strata, the stratified measures P_1 / P_2, and the weak
//! equivalent ν.
//!
//! The level-i inner product on D^i/D^{i−1} is the image norm of a Euclidean
//! source space under the bracket map.  Two normalizations of the source are
//! offered:
//!
//! * [`BracketNorm::Tensor`]: ⊗^i R^m with e_{i1}⊗…⊗e_{ii} ↦ [X_{i1},[…,X_{ii}]];
//! * [`BracketNorm::Exterior`]: ⊗^{i−2} R^m ⊗ Λ²R^m, the innermost pair taken
//!   antisymmetric with e_a∧e_b (a < b) orthonormal.
//!
//! They differ by the constant 2^{(n_i − n_{i−1})/2} on each level i ≥ 2, so
//! both are canonical.  Exterior is the default: it gives the Lebesgue measure
//! on the Heisenberg group.
//!
//! In an adapted frame Y, with P_i the matrix of the level-i bracket map in
//! the frame's quotient coordinates and B_i = P_i P_iᵀ,
//!
//! ```text
//! dP/dμ = 1 / ( |ω(Y_1, …, Y_n)| · √∏ det B_i ).
//! ```

use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{rat_from_f64, rat_to_f64, Rat};
use crate::field::{lie_bracket, VectorField};
use crate::flag::{flag_at_exact, FlagData, DEFAULT_DEPTH};
use crate::frames::{adapted_frames, frame_volume, nu, AdaptedFrame};
use crate::linalg::{det_rat, inverse_rat, mat_vec_rat, nullspace_rat, rank_rat};
use crate::mc::MCEstimate;
use crate::par::par_map;
use crate::rng::SeedTree;
use crate::structure::{SRStructure, Stratum};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketNorm {
    #[default]
    Exterior,
    Tensor,
}

impl std::str::FromStr for BracketNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exterior" => Ok(BracketNorm::Exterior),
            "tensor" => Ok(BracketNorm::Tensor),
            _ => Err(Error::InvalidArgument(format!("unknown bracket norm '{s}' (exterior|tensor)"))),
        }
    }
}

/// Cap on the number of words per level in the source space.
const MAX_WORDS: usize = 4096;

/// Every word of each length with its symbolic value, cached per structure.
pub fn tensor_words(s: &SRStructure) -> Arc<Vec<Vec<(Vec<usize>, VectorField)>>> {
    s.cache
        .tensor_words
        .get_or_init(|| {
            let mut levels: Vec<Vec<(Vec<usize>, VectorField)>> =
                vec![s.fields.iter().enumerate().map(|(i, f)| (vec![i], f.clone())).collect()];
            while levels.len() < DEFAULT_DEPTH && levels.last().unwrap().len() * s.m() <= MAX_WORDS {
                let prev = levels.last().unwrap();
                let mut next = Vec::with_capacity(prev.len() * s.m());
                for (i, g) in s.fields.iter().enumerate() {
                    for (w, v) in prev {
                        let mut word = vec![i];
                        word.extend_from_slice(w);
                        next.push((word, lie_bracket(g, v)));
                    }
                }
                levels.push(next);
            }
            Arc::new(levels)
        })
        .clone()
}

fn source_words(s: &SRStructure, level: usize, norm: BracketNorm) -> Result<Vec<VectorField>> {
    let all = tensor_words(s);
    let words = all
        .get(level - 1)
        .ok_or_else(|| Error::InvalidArgument(format!("bracket level {level} exceeds the supported word count")))?;
    Ok(words
        .iter()
        .filter(|(w, _)| match norm {
            BracketNorm::Tensor => true,
            BracketNorm::Exterior => w.len() < 2 || w[w.len() - 2] < w[w.len() - 1],
        })
        .map(|(_, v)| v.clone())
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelInnerProduct {
    pub level: u32,
    /// Frame words spanning this level of the quotient.
    pub basis: Vec<String>,
    pub lifted: Vec<Vec<f64>>,
    /// B = P Pᵀ in the frame's quotient coordinates.
    pub b: Vec<Vec<f64>>,
    /// Gram matrix of the induced inner product, B⁻¹.
    pub gram: Vec<Vec<f64>>,
    pub det_b: f64,
    #[serde(skip)]
    pub b_exact: Vec<Vec<Rat>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradedInnerProduct {
    pub point: Vec<f64>,
    pub norm: BracketNorm,
    pub levels: Vec<LevelInnerProduct>,
}

fn to_f64_mat(m: &[Vec<Rat>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(rat_to_f64).collect()).collect()
}

/// The graded inner product at p, expressed in the quotient bases given by
/// the frame's slots at each level.
pub fn graded_ip(s: &SRStructure, p: &[Rat], frame: &AdaptedFrame, norm: BracketNorm) -> Result<GradedInnerProduct> {
    let ainv = inverse_rat(&frame.matrix_exact()).ok_or(Error::SingularQuotient { level: 0 })?;
    let step = *frame.levels.iter().max().unwrap_or(&1);
    let mut levels = Vec::new();
    for level in 1..=step {
        let slots = frame.slots(level);
        let sources = source_words(s, level as usize, norm)?;
        // P: one row per slot, one column per source word.
        let mut pmat: Vec<Vec<Rat>> = vec![Vec::with_capacity(sources.len()); slots.len()];
        for f in &sources {
            let c = mat_vec_rat(&ainv, &f.eval_rat(p));
            if c.iter().zip(&frame.levels).any(|(ci, &l)| l > level && !ci.is_zero()) {
                return Err(Error::SingularQuotient { level: level as usize });
            }
            for (r, &slot) in slots.iter().enumerate() {
                pmat[r].push(c[slot].clone());
            }
        }
        let d = slots.len();
        let b: Vec<Vec<Rat>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| pmat[i].iter().zip(&pmat[j]).fold(Rat::zero(), |acc, (x, y)| acc + x * y))
                    .collect()
            })
            .collect();
        let det_b = det_rat(&b);
        if det_b.is_zero() {
            return Err(Error::SingularQuotient { level: level as usize });
        }
        let gram = inverse_rat(&b).ok_or(Error::SingularQuotient { level: level as usize })?;
        levels.push(LevelInnerProduct {
            level,
            basis: slots.iter().map(|&i| frame.words[i].to_string()).collect(),
            lifted: slots.iter().map(|&i| frame.vectors[i].clone()).collect(),
            b: to_f64_mat(&b),
            gram: to_f64_mat(&gram),
            det_b: rat_to_f64(&det_b),
            b_exact: b,
        });
    }
    Ok(GradedInnerProduct { point: p.iter().map(rat_to_f64).collect(), norm, levels })
}

#[derive(Clone, Debug, Serialize)]
pub struct PoppDensity {
    pub point: Vec<f64>,
    /// dP/dμ at the point.
    pub value: f64,
    pub norm: BracketNorm,
    pub frame: Vec<String>,
    /// |ω(Y_1, …, Y_n)|.
    pub omega_frame: f64,
    pub det_b: Vec<f64>,
    /// Set at singular points, where the value is the formal Popp
    /// construction and carries no measure-theoretic meaning by itself.
    pub experimental: bool,
}

/// dP/dμ at p computed in the given frame.  Only one square root is taken,
/// at the end, so the value is correctly rounded up to that operation.
pub fn popp_density(s: &SRStructure, p: &[Rat], frame: &AdaptedFrame, norm: BracketNorm) -> Result<PoppDensity> {
    let ip = graded_ip(s, p, frame, norm)?;
    let vol = frame_volume(s, p, frame);
    if vol.is_zero() {
        return Err(Error::InvalidArgument("volume form vanishes on the frame".into()));
    }
    let prod = ip.levels.iter().fold(Rat::one(), |acc, l| acc * det_rat(&l.b_exact));
    let denom_sq = &vol * &vol * prod;
    let value = 1.0 / rat_to_f64(&denom_sq).sqrt();
    Ok(PoppDensity {
        point: p.iter().map(rat_to_f64).collect(),
        value,
        norm,
        frame: frame.words.iter().map(|w| w.to_string()).collect(),
        omega_frame: rat_to_f64(&vol),
        det_b: ip.levels.iter().map(|l| l.det_b).collect(),
        experimental: false,
    })
}

/// Whether the growth vector at p differs from the growth at nearby
/// points (a deterministic probe set at radius `r`).
pub fn is_singular(s: &SRStructure, p: &[f64], r: f64) -> Result<bool> {
    let base = crate::flag::flag_at_exact_f64(s, p)?;
    let tree = SeedTree::new(0x5eed).child("singular-probe");
    let mut rng = tree.rng(0);
    for _ in 0..8 {
        let q: Vec<f64> = p.iter().map(|&x| x + r * rng.random_range(-1.0..1.0)).collect();
        if crate::flag::flag_at_exact_f64(s, &q)?.growth != base.growth {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Popp density at a float point (converted exactly) in the first adapted
/// frame; tagged experimental at singular points.
pub fn popp_density_at(s: &SRStructure, p: &[f64], norm: BracketNorm) -> Result<PoppDensity> {
    let pr: Vec<Rat> = p.iter().map(|&x| rat_from_f64(x)).collect();
    let flag = flag_at_exact(s, &pr, DEFAULT_DEPTH)?;
    let frames = adapted_frames(s, &pr, &flag)?;
    let mut d = popp_density(s, &pr, &frames[0], norm)?;
    d.experimental = is_singular(s, p, 1e-6)?;
    Ok(d)
}

/// Densities in every adapted frame at p.
pub fn popp_all_frames(s: &SRStructure, p: &[Rat], norm: BracketNorm) -> Result<Vec<PoppDensity>> {
    let flag = flag_at_exact(s, p, DEFAULT_DEPTH)?;
    adapted_frames(s, p, &flag)?.iter().map(|f| popp_density(s, p, f, norm)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakEquivalence {
    /// Smallest C with 1/C ≤ ν · dP/dμ ≤ C over the points.
    pub c: f64,
    pub min_product: f64,
    pub max_product: f64,
    pub count: usize,
}

/// ν(q) · dP/dμ(q) over the given (regular) points.
pub fn weak_equivalent_check(s: &SRStructure, points: &[Vec<f64>], norm: BracketNorm) -> Result<WeakEquivalence> {
    let prods: Vec<Result<f64>> = par_map(points.len(), |i| {
        let pr: Vec<Rat> = points[i].iter().map(|&x| rat_from_f64(x)).collect();
        let flag = flag_at_exact(s, &pr, DEFAULT_DEPTH)?;
        let frames = adapted_frames(s, &pr, &flag)?;
        let d = popp_density(s, &pr, &frames[0], norm)?;
        Ok(nu(s, &pr, &frames) * d.value)
    });
    let prods: Vec<f64> = prods.into_iter().collect::<Result<_>>()?;
    let min = prods.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = prods.iter().cloned().fold(0.0, f64::max);
    Ok(WeakEquivalence { c: max.max(1.0 / min), min_product: min, max_product: max, count: prods.len() })
}

/// Flag data of a stratum at one parameter value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StratumFlag {
    pub growth: Vec<usize>,
    /// dim(D^i ∩ T N) for each level.
    pub growth_n: Vec<usize>,
    pub q_n: u32,
}

fn stratum_point(st: &Stratum, t: &[Rat]) -> (Vec<Rat>, Vec<Vec<Rat>>) {
    let x: Vec<Rat> = st.map.iter().map(|e| e.eval_rat(t)).collect();
    // Tangent vectors as a list of k columns.
    let cols: Vec<Vec<Rat>> = (0..st.k).map(|j| st.map.iter().map(|e| e.diff(j).eval_rat(t)).collect()).collect();
    (x, cols)
}

fn stratum_flag_from(flag: &FlagData, frame: &AdaptedFrame, tangents: &[Vec<Rat>]) -> Result<StratumFlag> {
    let k = tangents.len();
    if rank_rat(tangents) < k {
        return Err(Error::InvalidStructure("stratum map is not an immersion at a sample point".into()));
    }
    let mut growth_n = Vec::new();
    for level in 1..=flag.step as u32 {
        let mut vecs: Vec<Vec<Rat>> = frame.levels.iter().zip(&frame.exact).filter(|(l, _)| **l <= level).map(|(_, v)| v.clone()).collect();
        let di = vecs.len();
        vecs.extend_from_slice(tangents);
        growth_n.push(di + k - rank_rat(&vecs));
    }
    let mut q_n = 0;
    let mut prev = 0;
    for (i, &g) in growth_n.iter().enumerate() {
        q_n += (i as u32 + 1) * (g - prev) as u32;
        prev = g;
    }
    Ok(StratumFlag { growth: flag.growth.clone(), growth_n, q_n })
}

#[derive(Clone, Debug, Serialize)]
pub struct EquisingularReport {
    pub stratum: String,
    pub flag: StratumFlag,
    pub samples: usize,
}

/// Random interior parameter values (rational, six decimals) plus the
/// centre of the parameter box.
fn interior_samples(st: &Stratum, count: usize, seed: u64) -> Vec<Vec<Rat>> {
    let b = st.parambox_f64();
    let tree = SeedTree::new(seed).child("stratum-samples").child(&st.name);
    let mut rng = tree.rng(0);
    let mut out = vec![st.parambox.iter().map(|(a, c)| (a + c) / Rat::from_integer(2.into())).collect::<Vec<Rat>>()];
    for _ in 1..count.max(1) {
        out.push(
            b.iter()
                .zip(&st.parambox)
                .map(|(&(lo, hi), (a, _))| {
                    let u: u32 = rng.random_range(1..1_000_000);
                    a + Rat::new(u.into(), 1_000_000.into()) * rat_from_f64(hi - lo)
                })
                .collect(),
        );
    }
    out
}

/// Stratum flag at an exact parameter value.
pub fn stratum_flag(s: &SRStructure, st: &Stratum, t: &[Rat]) -> Result<StratumFlag> {
    let (x, tangents) = stratum_point(st, t);
    let flag = flag_at_exact(s, &x, DEFAULT_DEPTH)?;
    let frame = adapted_frames(s, &x, &flag)?.remove(0);
    stratum_flag_from(&flag, &frame, &tangents)
}

/// Check that n_i and dim(D^i ∩ TN) are constant over interior samples.
pub fn equisingular_check(s: &SRStructure, st: &Stratum, samples: usize, seed: u64) -> Result<EquisingularReport> {
    let ts = interior_samples(st, samples, seed);
    let flags: Vec<Result<StratumFlag>> = par_map(ts.len(), |i| stratum_flag(s, st, &ts[i]));
    let mut first: Option<(usize, StratumFlag)> = None;
    for (i, f) in flags.into_iter().enumerate() {
        let f = f?;
        match &first {
            None => first = Some((i, f)),
            Some((j, g)) => {
                if *g != f {
                    let pt = |idx: usize| st.map.iter().map(|e| rat_to_f64(&e.eval_rat(&ts[idx]))).collect::<Vec<f64>>();
                    return Err(Error::NotEquisingular {
                        stratum: st.name.clone(),
                        detail: format!("growth {:?}/{:?} versus {:?}/{:?}", g.growth, g.growth_n, f.growth, f.growth_n),
                        a: pt(*j),
                        b: pt(i),
                    });
                }
            }
        }
    }
    let (_, flag) = first.expect("at least one sample");
    Ok(EquisingularReport { stratum: st.name.clone(), flag, samples: ts.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct StratumDensity {
    pub point: Vec<f64>,
    /// Density of P^N with respect to Lebesgue measure in the parameters.
    pub value: f64,
    pub q_n: u32,
    pub growth_n: Vec<usize>,
}

/// Popp density of the stratum at parameter t, with respect to dt.
///
/// The level-i inner product restricted to (D^i ∩ TN)/(D^{i−1} ∩ TN), which
/// embeds in D^i/D^{i−1}, gives a volume on TN through a basis adapted to
/// the filtration D^i ∩ TN; the parameter basis ∂_t is expressed in it.
pub fn popp_on_stratum(s: &SRStructure, st: &Stratum, t: &[Rat], norm: BracketNorm) -> Result<StratumDensity> {
    let (x, tangents) = stratum_point(st, t);
    let flag = flag_at_exact(s, &x, DEFAULT_DEPTH)?;
    let frame = adapted_frames(s, &x, &flag)?.remove(0);
    let sf = stratum_flag_from(&flag, &frame, &tangents)?;
    let ip = graded_ip(s, &x, &frame, norm)?;
    let ainv = inverse_rat(&frame.matrix_exact()).ok_or(Error::SingularQuotient { level: 0 })?;
    let k = st.k;
    // C = A⁻¹ J: tangent vectors in frame coordinates (n × k, by rows).
    let cj: Vec<Vec<Rat>> = tangents.iter().map(|v| mat_vec_rat(&ainv, v)).collect();
    let n = s.dim;
    let crow: Vec<Vec<Rat>> = (0..n).map(|r| (0..k).map(|c| cj[c][r].clone()).collect()).collect();
    // Filtration-adapted basis of R^k (coefficients a with J a ∈ D^i).
    let mut chosen: Vec<(Vec<Rat>, u32)> = Vec::new();
    for level in 1..=flag.step as u32 {
        let high: Vec<Vec<Rat>> = (0..n).filter(|&r| frame.levels[r] > level).map(|r| crow[r].clone()).collect();
        for v in nullspace_rat(&high, k) {
            let mut trial: Vec<Vec<Rat>> = chosen.iter().map(|c| c.0.clone()).collect();
            trial.push(v.clone());
            if rank_rat(&trial) == trial.len() {
                chosen.push((v, level));
            }
        }
    }
    if chosen.len() != k {
        return Err(Error::SingularQuotient { level: 0 });
    }
    // Product of det(Qᵀ B⁻¹ Q) over levels, Q = quotient coordinates.
    let mut prod = Rat::one();
    for li in &ip.levels {
        let group: Vec<&Vec<Rat>> = chosen.iter().filter(|c| c.1 == li.level).map(|c| &c.0).collect();
        if group.is_empty() {
            continue;
        }
        let slots = frame.slots(li.level);
        let binv = inverse_rat(&li.b_exact).ok_or(Error::SingularQuotient { level: li.level as usize })?;
        let q: Vec<Vec<Rat>> = group
            .iter()
            .map(|a| {
                let full: Vec<Rat> = (0..n).map(|r| crow[r].iter().zip(a.iter()).fold(Rat::zero(), |acc, (c, ai)| acc + c * ai)).collect();
                slots.iter().map(|&sl| full[sl].clone()).collect()
            })
            .collect();
        let g: Vec<Vec<Rat>> = q
            .iter()
            .map(|qa| {
                let bq = mat_vec_rat(&binv, qa);
                q.iter().map(|qb| qb.iter().zip(&bq).fold(Rat::zero(), |acc, (u, v)| acc + u * v)).collect()
            })
            .collect();
        prod *= det_rat(&g);
    }
    let amat: Vec<Vec<Rat>> = (0..k).map(|r| chosen.iter().map(|c| c.0[r].clone()).collect()).collect();
    let det_a = det_rat(&amat).abs();
    let value = rat_to_f64(&(prod / (&det_a * &det_a))).sqrt();
    Ok(StratumDensity { point: x.iter().map(rat_to_f64).collect(), value, q_n: sf.q_n, growth_n: sf.growth_n })
}

/// Options for stratum integration.
#[derive(Clone, Debug, Serialize)]
pub struct IntegrationOptions {
    pub norm: BracketNorm,
    /// Samples in the innermost window.
    pub core_samples: usize,
    /// Samples per shell between consecutive windows.
    pub shell_samples: usize,
    /// Number of halvings of the window margin.
    pub shells: usize,
    pub seed: u64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { norm: BracketNorm::Exterior, core_samples: 256, shell_samples: 24, shells: 48, seed: 1 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StratumIntegral {
    pub name: String,
    pub k: usize,
    pub q_n: u32,
    pub open: bool,
    pub in_p1: bool,
    pub estimate: MCEstimate,
    /// Estimates over the nested windows, innermost first.
    pub windows: Vec<f64>,
    pub divergent: bool,
}

/// ∫ over the stratum (restricted to `region`) of its Popp density, by Monte
/// Carlo over nested windows that shrink the parameter box margin by halves.
///
/// Divergence test: the estimate grows beyond 10× the innermost window while
/// the outermost quarter of the shells still carries at least 5% of the
/// total, i.e. the contributions near the boundary do not decay.
pub fn integrate_stratum(s: &SRStructure, st: &Stratum, region: &[(f64, f64)], opt: &IntegrationOptions, q_n: u32) -> Result<StratumIntegral> {
    let b = st.parambox_f64();
    let k = st.k;
    let width: Vec<f64> = b.iter().map(|(lo, hi)| hi - lo).collect();
    let margin = |j: usize| 0.125 * 0.5f64.powi(j as i32);
    let tree = SeedTree::new(opt.seed).child("stratum-integral").child(&st.name);
    let in_region = |x: &[f64]| x.iter().zip(region).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
    let f = |t: &[f64]| -> Result<f64> {
        let x = st.eval(t);
        if !in_region(&x) {
            return Ok(0.0);
        }
        let tr: Vec<Rat> = t.iter().map(|&v| rat_from_f64(v)).collect();
        Ok(popp_on_stratum(s, st, &tr, opt.norm)?.value)
    };
    // Innermost window.
    let h0 = margin(0);
    let vol0: f64 = width.iter().map(|w| w * (1.0 - 2.0 * h0)).product();
    let core: Vec<Result<f64>> = par_map(opt.core_samples, |i| {
        let mut rng = tree.child("core").rng(i as u64);
        let t: Vec<f64> = b.iter().zip(&width).map(|(&(lo, _), &w)| lo + w * (h0 + (1.0 - 2.0 * h0) * rng.random::<f64>())).collect();
        f(&t).map(|v| v * vol0)
    });
    let core: Vec<f64> = core.into_iter().collect::<Result<_>>()?;
    let mut total = MCEstimate::from_samples(&core, opt.seed);
    let mut windows = vec![total.mean];
    let mut shell_means = Vec::new();
    for j in 1..=opt.shells {
        let (hin, hout) = (margin(j), margin(j - 1));
        // Slabs: coordinate c within [hin, hout] of one face, the others
        // within the window of margin hin.
        let slab_vol = |c: usize| -> f64 {
            (0..k).map(|d| if d == c { width[d] * (hout - hin) } else { width[d] * (1.0 - 2.0 * hin) }).product()
        };
        let vols: Vec<f64> = (0..2 * k).map(|sidx| slab_vol(sidx / 2)).collect();
        let vsum: f64 = vols.iter().sum();
        let shell = tree.child("shell").index(j as u64);
        let vals: Vec<Result<f64>> = par_map(opt.shell_samples, |i| {
            let mut rng = shell.rng(i as u64);
            let mut pick = rng.random::<f64>() * vsum;
            let mut sidx = 0;
            while sidx + 1 < vols.len() && pick > vols[sidx] {
                pick -= vols[sidx];
                sidx += 1;
            }
            let (c, upper) = (sidx / 2, sidx % 2 == 1);
            let u: Vec<f64> = (0..k)
                .map(|d| {
                    let r = rng.random::<f64>();
                    if d == c {
                        let off = hin + (hout - hin) * r;
                        if upper {
                            1.0 - off
                        } else {
                            off
                        }
                    } else {
                        hin + (1.0 - 2.0 * hin) * r
                    }
                })
                .collect();
            // Multiplicity: number of slabs containing the point.
            let mult = (0..k).filter(|&d| (u[d] <= hout && u[d] >= hin) || (u[d] >= 1.0 - hout && u[d] <= 1.0 - hin)).count().max(1);
            let t: Vec<f64> = u.iter().zip(&b).zip(&width).map(|((ui, &(lo, _)), w)| lo + w * ui).collect();
            f(&t).map(|v| v * vsum / mult as f64)
        });
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        let e = MCEstimate::from_samples(&vals, opt.seed);
        shell_means.push(e.mean);
        total = total.plus(&e);
        windows.push(total.mean);
    }
    let last_quarter: f64 = shell_means.iter().rev().take((opt.shells / 4).max(1)).sum();
    let divergent = total.mean > 10.0 * windows[0] && last_quarter >= 0.05 * total.mean;
    let estimate = if divergent { MCEstimate { mean: f64::INFINITY, stderr: f64::NAN, ..total } } else { total };
    Ok(StratumIntegral { name: st.name.clone(), k, q_n, open: st.is_open(s.dim), in_p1: false, estimate, windows, divergent })
}

#[derive(Clone, Debug, Serialize)]
pub struct StratifiedReport {
    pub region: Vec<(f64, f64)>,
    /// max over strata of Q_N.
    pub dim_h: u32,
    pub coverage: f64,
    pub strata: Vec<StratumIntegral>,
    pub p1: MCEstimate,
    pub p2: MCEstimate,
    pub p1_divergent: bool,
    pub p2_divergent: bool,
}

/// Invert an open stratum's map at x (Newton from the box centre) and report
/// whether the preimage lies in the parameter box, with `strict` excluding
/// the boundary.
fn open_stratum_contains(st: &Stratum, x: &[f64], strict: bool) -> bool {
    let b = st.parambox_f64();
    let n = x.len();
    let mut t: Vec<f64> = b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    for _ in 0..30 {
        let fx = st.eval(&t);
        let r: Vec<f64> = fx.iter().zip(x).map(|(a, b)| a - b).collect();
        if r.iter().all(|v| v.abs() < 1e-13) {
            break;
        }
        let j = st.jacobian(&t);
        let jm = nalgebra::DMatrix::from_fn(n, n, |i, k| j[i][k]);
        let Some(d) = jm.lu().solve(&nalgebra::DVector::from_vec(r)) else { return false };
        for (ti, di) in t.iter_mut().zip(d.iter()) {
            *ti -= di;
        }
    }
    if st.eval(&t).iter().zip(x).any(|(a, b)| (a - b).abs() > 1e-9) {
        return false;
    }
    let eps = if strict { 1e-12 } else { -1e-12 };
    t.iter().zip(&b).all(|(v, (lo, hi))| *v >= lo + eps && *v <= hi - eps)
}

/// P_1 and P_2 over a region (a box in ambient coordinates).
pub fn stratified_measures(s: &SRStructure, strata: &[&Stratum], region: &[(f64, f64)], opt: &IntegrationOptions) -> Result<StratifiedReport> {
    // Coverage by the open strata.
    let opens: Vec<&&Stratum> = strata.iter().filter(|st| st.is_open(s.dim)).collect();
    let tree = SeedTree::new(opt.seed).child("coverage");
    let probes = 2000;
    let mut covered = 0usize;
    let mut overlapping = 0usize;
    let mut rng = tree.rng(0);
    for _ in 0..probes {
        let x: Vec<f64> = region.iter().map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
        if opens.iter().any(|st| open_stratum_contains(st, &x, false)) {
            covered += 1;
        }
        if opens.iter().filter(|st| open_stratum_contains(st, &x, true)).count() > 1 {
            overlapping += 1;
        }
    }
    let coverage = covered as f64 / probes as f64;
    if covered < probes || overlapping > 0 {
        return Err(Error::StrataNotPartition { coverage });
    }
    let mut integrals = Vec::new();
    for st in strata {
        let rep = equisingular_check(s, st, 16, opt.seed)?;
        integrals.push(integrate_stratum(s, st, region, opt, rep.flag.q_n)?);
    }
    let dim_h = integrals.iter().map(|i| i.q_n).max().unwrap_or(0);
    let mut p1 = MCEstimate::exact(0.0);
    let mut p2 = MCEstimate::exact(0.0);
    let (mut d1, mut d2) = (false, false);
    for it in integrals.iter_mut() {
        if it.q_n == dim_h {
            it.in_p1 = true;
            p1 = p1.plus(&it.estimate);
            d1 |= it.divergent;
        }
        if it.open {
            p2 = p2.plus(&it.estimate);
            d2 |= it.divergent;
        }
    }
    p1.seed = opt.seed;
    p2.seed = opt.seed;
    Ok(StratifiedReport { region: region.to_vec(), dim_h, coverage, strata: integrals, p1, p2, p1_divergent: d1, p2_divergent: d2 })
}
