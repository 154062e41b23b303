//! Acceptance gate.  Runs every criterion, prints PASS/FAIL for each, and
//! exits non-zero unless the failing set is exactly `EXPECTED_FAILURES`.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srm_core::blowup::{blowup_experiment, decreasing_within_noise, BlowupOptions};
use srm_core::distance::{distance, Budget};
use srm_core::expr::{rat, Expr};
use srm_core::field::{lie_bracket, VectorField};
use srm_core::flag::{classify_grid, flag_at_exact_f64, ClassifyOptions, GridSpec, PointClass};
use srm_core::frames::nu_at;
use srm_core::measures::{
    ball_profile, ball_ratios, covering_dimension, isodiametric_search, CoveringOptions, IsoOptions, MeasureOptions, SetSpec, EXIT_TOL,
};
use srm_core::nilpotent::{dilate, nilpotent_at, nilpotent_at_exact};
use srm_core::popp::{
    equisingular_check, popp_all_frames, popp_density_at, stratified_measures, weak_equivalent_check, BracketNorm,
    IntegrationOptions,
};
use srm_core::structure::{euclidean_plane, grushin, heisenberg, martinet, parse_structure};
use srm_core::{Rat, SRStructure};

/// Criterion 4 asks for a finite P_1 over [-1,1]^2 on Grushin, but the
/// regular part of P_1 there is ∫∫ dx1 dx2 / |x1|, which diverges.
const EXPECTED_FAILURES: [u32; 1] = [4];

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn r(x: f64) -> Rat {
    srm_core::expr::rat_from_f64(x)
}

fn c1_flags() -> Outcome {
    let g = grushin();
    let f = flag_at_exact_f64(&g, &[0.0, 5.0]).map_err(|e| e.to_string())?;
    check!(f.growth == [1, 2] && f.weights == [1, 2] && f.q == 3 && f.step == 2, "Grushin (0,5): {f:?}");
    let f = flag_at_exact_f64(&g, &[0.5, 0.3]).map_err(|e| e.to_string())?;
    check!(f.growth == [2] && f.q == 2, "Grushin (1/2, 0.3): {f:?}");

    let m = martinet();
    let f = flag_at_exact_f64(&m, &[0.0, 1.0, 1.0]).map_err(|e| e.to_string())?;
    check!(f.growth == [2, 2, 3] && f.weights == [1, 1, 3] && f.q == 5, "Martinet (0,1,1): {f:?}");
    let f = flag_at_exact_f64(&m, &[1.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    check!(f.growth == [2, 3] && f.weights == [1, 1, 2] && f.q == 4, "Martinet (1,0,0): {f:?}");

    for (s, grid, name) in [(&g, "21x21", "Grushin"), (&m, "9x9x9", "Martinet")] {
        let spec = GridSpec::parse(grid, s.bbox_f64()).unwrap();
        let pts = classify_grid(s, &spec, &ClassifyOptions::for_grid(&spec, 1)).map_err(|e| e.to_string())?;
        for p in &pts {
            let on_plane = p.point[0] == 0.0;
            let want = if on_plane { PointClass::Singular } else { PointClass::Regular };
            check!(p.class == want, "{name} {:?} classified {}", p.point, p.class);
        }
    }

    let h = heisenberg();
    let spec = GridSpec::parse("9x9x9", h.bbox_f64()).unwrap();
    let pts = classify_grid(&h, &spec, &ClassifyOptions::for_grid(&spec, 1)).map_err(|e| e.to_string())?;
    check!(pts.len() == 729, "{} grid points", pts.len());
    for p in &pts {
        check!(p.growth == [2, 3] && p.q == 4 && p.class == PointClass::Regular, "Heisenberg {:?}: {p:?}", p.point);
    }

    let axis = equisingular_check(&g, g.stratum("axis").unwrap(), 16, 1).map_err(|e| e.to_string())?;
    check!(axis.flag.q_n == 2 && axis.flag.growth_n == [0, 1], "Grushin axis: {axis:?}");
    let plane = equisingular_check(&m, m.stratum("plane").unwrap(), 16, 1).map_err(|e| e.to_string())?;
    check!(plane.flag.q_n == 4 && plane.flag.growth_n == [1, 1, 2], "Martinet plane: {plane:?}");
    Ok("growth, Q, weights, singular sets and Q_N match; Heisenberg 9^3 grid all (2,3), Q=4".into())
}

fn c2_popp() -> Outcome {
    let h = heisenberg();
    let mut worst_h: f64 = 0.0;
    for p in [[0.0, 0.0, 0.0], [0.5, -0.25, 0.75], [-1.0, 1.0, 0.125], [0.3, 0.7, -0.9]] {
        let d = popp_density_at(&h, &p, BracketNorm::Exterior).map_err(|e| e.to_string())?;
        worst_h = worst_h.max((d.value - 1.0).abs());
    }
    check!(worst_h < 1e-9, "Heisenberg |err| {worst_h:e}");

    let g = grushin();
    let mut worst_g: f64 = 0.0;
    for x1 in [1.0, -1.0, 0.5, -0.5, 0.25, -0.25] {
        for x2 in [0.0, 0.5, -0.75] {
            let d = popp_density_at(&g, &[x1, x2], BracketNorm::Exterior).map_err(|e| e.to_string())?;
            let want = 1.0 / f64::abs(x1);
            worst_g = worst_g.max((d.value - want).abs() / want);
        }
    }
    check!(worst_g < 1e-9, "Grushin rel err {worst_g:e}");

    let m = martinet();
    let cases: Vec<(&SRStructure, Vec<f64>)> = vec![
        (&h, vec![0.0, 0.0, 0.0]),
        (&h, vec![0.5, -0.25, 0.75]),
        (&g, vec![0.5, 0.25]),
        (&g, vec![-0.25, 1.0]),
        (&m, vec![1.0, 0.0, 0.0]),
        (&m, vec![-0.5, 0.25, 0.5]),
    ];
    // Redundant third generators give several adapted frames per point.
    let redundant: Vec<SRStructure> = [
        "dim = 3\nfield X1 = (1, 0, -x2/2)\nfield X2 = (0, 1, x1/2)\nfield X3 = (1, 1, (x1 - x2)/2)\n",
        "dim = 2\nfield X1 = (1, 0)\nfield X2 = (0, x1)\nfield X3 = (1, 2*x1)\n",
        "dim = 3\nfield X1 = (1, 0, 0)\nfield X2 = (0, 1, x1^2/2)\nfield X3 = (1, -1, -x1^2/2)\n",
    ]
    .iter()
    .map(|t| parse_structure(t).unwrap())
    .collect();
    let mut cases = cases;
    cases.push((&redundant[0], vec![0.5, -0.25, 0.75]));
    cases.push((&redundant[1], vec![0.5, 0.25]));
    cases.push((&redundant[2], vec![1.0, 0.0, 0.0]));
    cases.push((&redundant[2], vec![-0.5, 0.25, 0.5]));
    let mut spread: f64 = 0.0;
    let mut frames = 0;
    for (s, p) in &cases {
        let pr: Vec<Rat> = p.iter().map(|&x| r(x)).collect();
        for norm in [BracketNorm::Exterior, BracketNorm::Tensor] {
            let ds = popp_all_frames(s, &pr, norm).map_err(|e| e.to_string())?;
            frames += ds.len();
            let lo = ds.iter().map(|d| d.value).fold(f64::INFINITY, f64::min);
            let hi = ds.iter().map(|d| d.value).fold(0.0, f64::max);
            spread = spread.max((hi - lo) / lo);
        }
    }
    check!(spread < 1e-9, "frame spread {spread:e}");
    Ok(format!("Heisenberg |err| {worst_h:.1e}; Grushin rel err {worst_g:.1e}; frame spread {spread:.1e} over {frames} frames"))
}

fn grid(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let dim = lo.len();
    let mut out = Vec::new();
    for i in 0..n.pow(dim as u32) {
        let mut k = i;
        let p = (0..dim)
            .map(|d| {
                let j = k % n;
                k /= n;
                lo[d] + (hi[d] - lo[d]) * j as f64 / (n - 1) as f64
            })
            .collect();
        out.push(p);
    }
    out
}

/// Both half-spaces |x1| ∈ [1/4, 1] of a box symmetric in x1.
fn regular_grid(dim: usize, n: usize) -> Vec<Vec<f64>> {
    let mut lo = vec![-1.0; dim];
    let mut hi = vec![1.0; dim];
    lo[0] = 0.25;
    hi[0] = 1.0;
    let right = grid(&lo, &hi, n);
    let left: Vec<Vec<f64>> = right.iter().map(|p| std::iter::once(-p[0]).chain(p[1..].iter().copied()).collect()).collect();
    right.into_iter().chain(left).collect()
}

fn c3_weak_equivalence() -> Outcome {
    let norm = BracketNorm::Exterior;
    let g = weak_equivalent_check(&grushin(), &regular_grid(2, 7), norm).map_err(|e| e.to_string())?;
    check!(g.c <= 2.0, "Grushin C = {}", g.c);
    let h = weak_equivalent_check(&heisenberg(), &grid(&[-1.0; 3], &[1.0; 3], 5), norm).map_err(|e| e.to_string())?;
    check!(h.c <= 2.0, "Heisenberg C = {}", h.c);
    let m = martinet();
    let coarse = weak_equivalent_check(&m, &regular_grid(3, 4), norm).map_err(|e| e.to_string())?;
    let fine = weak_equivalent_check(&m, &regular_grid(3, 7), norm).map_err(|e| e.to_string())?;
    check!(coarse.c.is_finite() && fine.c.is_finite(), "Martinet C {} / {}", coarse.c, fine.c);
    check!((fine.c / coarse.c - 1.0).abs() <= 0.1, "Martinet C {} → {} under refinement", coarse.c, fine.c);

    let gr = grushin();
    let mut prev: Option<(f64, f64)> = None;
    let mut last = (0.0, 0.0);
    for k in 2..=64 {
        let q = [1.0 / k as f64, 0.0];
        let nu = nu_at(&gr, &q).map_err(|e| e.to_string())?;
        let dp = popp_density_at(&gr, &q, norm).map_err(|e| e.to_string())?.value;
        if let Some((nu0, dp0)) = prev {
            check!(nu < nu0 && dp > dp0, "k = {k}: ν {nu0} → {nu}, dP/dμ {dp0} → {dp}");
        }
        prev = Some((nu, dp));
        last = (nu, dp);
    }
    check!(last.0 * 64.0 <= 1.0 + 1e-9 && last.1 >= 64.0 - 1e-9, "at k = 64: ν {}, dP/dμ {}", last.0, last.1);
    Ok(format!(
        "C: Grushin {:.4}, Heisenberg {:.4}, Martinet {:.4} → {:.4}; k=64: ν {:.4}, dP/dμ {:.1}",
        g.c, h.c, coarse.c, fine.c, last.0, last.1
    ))
}

fn c4_stratified() -> Outcome {
    let g = grushin();
    let strata: Vec<_> = g.strata.iter().collect();
    let opt = IntegrationOptions::default();
    let inner = stratified_measures(&g, &strata, &[(0.25, 1.0), (-1.0, 1.0)], &opt).map_err(|e| e.to_string())?;
    let same = !inner.p1_divergent && !inner.p2_divergent && (inner.p1.mean - inner.p2.mean).abs() <= 3.0 * inner.p1.stderr.hypot(inner.p2.stderr);
    let rep = stratified_measures(&g, &strata, &[(-1.0, 1.0), (-1.0, 1.0)], &opt).map_err(|e| e.to_string())?;
    let axis = rep.strata.iter().find(|s| s.name == "axis").unwrap();
    let regular: Vec<_> = rep.strata.iter().filter(|s| s.name != "axis" && s.in_p1).collect();
    let summary = format!(
        "P_2 divergent: {}; P_1 divergent: {}; axis term {:.4}; regular terms {:?}; inside a regular stratum P_1 = {:.4}, P_2 = {:.4}",
        rep.p2_divergent,
        rep.p1_divergent,
        axis.estimate.mean,
        regular.iter().map(|s| if s.divergent { f64::INFINITY } else { s.estimate.mean }).collect::<Vec<_>>(),
        inner.p1.mean,
        inner.p2.mean
    );
    check!(same, "{summary}");
    check!(rep.p2_divergent, "{summary}");
    check!(!rep.p1_divergent && axis.estimate.mean > 0.0, "{summary}");
    check!(!regular.is_empty() && regular.iter().all(|s| !s.divergent && s.estimate.mean > 0.0), "{summary}");
    Ok(summary)
}

fn c5_density() -> Outcome {
    let opt = MeasureOptions::default();
    let eps = [0.4, 0.2, 0.1];
    let mut notes = Vec::new();
    let cases: [(&str, SRStructure, Vec<f64>, f64); 5] = [
        ("Heisenberg 0", heisenberg(), vec![0.0, 0.0, 0.0], 0.10),
        ("Heisenberg (0.3,-0.2,0.1)", heisenberg(), vec![0.3, -0.2, 0.1], 0.10),
        ("Grushin (1,0)", grushin(), vec![1.0, 0.0], 0.15),
        ("Grushin (1/2,0)", grushin(), vec![0.5, 0.0], 0.15),
        ("Martinet (1,0,0)", martinet(), vec![1.0, 0.0, 0.0], 0.15),
    ];
    for (name, s, p, limit) in &cases {
        let prof = ball_profile(s, p, &eps, 1.0, &opt).map_err(|e| e.to_string())?;
        let rows = ball_ratios(&prof);
        let floor = prof.q as f64 * EXIT_TOL;
        let curve: Vec<(f64, f64)> = rows.iter().map(|r| (r.gap.mean.abs(), r.gap.stderr.max(floor))).collect();
        let last = curve[2].0;
        check!(last < *limit, "{name}: gap {last:.4} at ε = 0.1");
        check!(decreasing_within_noise(&curve), "{name}: gaps {curve:?}");
        if name.starts_with("Grushin") {
            let t = p[0];
            let mu = &rows[0].mu_hat;
            let tol = 3.0 * mu.stderr + prof.q as f64 * EXIT_TOL * PI * t;
            check!((mu.mean - PI * t).abs() <= tol, "{name}: μ̂ {mu:?} vs π·t = {}", PI * t);
        }
        notes.push(format!("{name} {:.4}/{:.4}/{:.4}", curve[0].0, curve[1].0, curve[2].0));
    }
    Ok(format!("relative gaps at ε = 0.4/0.2/0.1: {}", notes.join("; ")))
}

fn c6_blowup() -> Outcome {
    let opt = BlowupOptions::default();
    let eps = [0.4, 0.2, 0.1];
    let mut notes = Vec::new();
    let cases: [(&str, SRStructure, Vec<f64>); 5] = [
        ("Heisenberg 0", heisenberg(), vec![0.0, 0.0, 0.0]),
        ("Grushin (1,0)", grushin(), vec![1.0, 0.0]),
        ("Grushin (0,0)", grushin(), vec![0.0, 0.0]),
        ("Martinet (1,0,0)", martinet(), vec![1.0, 0.0, 0.0]),
        ("Martinet 0", martinet(), vec![0.0, 0.0, 0.0]),
    ];
    for (name, s, p) in &cases {
        let e = blowup_experiment(s, p, 1.0, &eps, &opt).map_err(|e| e.to_string())?;
        for (what, curve) in [("distortion", e.distortion_curve()), ("smooth", e.smooth_curve()), ("spherical", e.spherical_curve())] {
            check!(decreasing_within_noise(&curve), "{name} {what}: {curve:?}");
            if name.starts_with("Heisenberg") {
                check!(curve.iter().all(|(v, n)| *v <= 3.0 * n), "{name} {what} above noise: {curve:?}");
            }
        }
        let d = e.distortion_curve();
        notes.push(format!("{name} {:.3}/{:.3}/{:.3}", d[0].0, d[1].0, d[2].0));
    }
    Ok(format!("distortions: {}", notes.join("; ")))
}

fn c7_isodiametric() -> Outcome {
    let start = Instant::now();
    let opt = IsoOptions::default();
    let nil = nilpotent_at(&heisenberg(), &[0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    let rep = isodiametric_search(&nil, &opt).map_err(|e| e.to_string())?;
    let ball = &rep.candidates[0];
    check!(ball.family == "ball" && ball.ratio == 1.0 && ball.certified == 1.0, "ball candidate {ball:?}");
    let best = rep
        .candidates
        .iter()
        .filter(|c| c.family == "ball+caps")
        .map(|c| c.certified)
        .fold(0.0, f64::max);
    check!(best >= 1.02, "best certified ball∪cap ratio {best}");
    let nil = nilpotent_at(&euclidean_plane(), &[0.0, 0.0]).map_err(|e| e.to_string())?;
    let eu = isodiametric_search(&nil, &opt).map_err(|e| e.to_string())?;
    let worst = eu.candidates.iter().map(|c| c.certified).fold(0.0, f64::max);
    check!(worst <= 1.005, "Euclidean candidate certifies {worst}");
    let t = start.elapsed();
    check!(t <= Duration::from_secs(15 * 60), "took {t:?}");
    Ok(format!("Heisenberg best certified {best:.4}; Euclidean max {worst:.4}; {:.0} s", t.as_secs_f64()))
}

fn c8_dimension() -> Outcome {
    let opt = CoveringOptions::default();
    let seg = covering_dimension(
        &euclidean_plane(),
        &SetSpec::Segment(vec![-0.5, 0.0], vec![0.5, 0.25]),
        &[0.02, 0.01, 0.005, 0.0025],
        &opt,
        3,
    )
    .map_err(|e| e.to_string())?;
    let axis = covering_dimension(&grushin(), &SetSpec::Stratum("axis".into(), None), &[0.4, 0.3, 0.2, 0.15], &opt, 3)
        .map_err(|e| e.to_string())?;
    let hbox = covering_dimension(
        &heisenberg(),
        &SetSpec::Box(vec![(-0.75, 0.75), (-0.75, 0.75), (-0.3, 0.3)]),
        &[0.4, 0.33, 0.27, 0.22],
        &opt,
        3,
    )
    .map_err(|e| e.to_string())?;
    let summary = format!("segment {:.3}; Grushin axis {:.3}; Heisenberg box {:.3}", seg.dimension, axis.dimension, hbox.dimension);
    check!((seg.dimension - 1.0).abs() <= 0.1, "{summary}");
    check!((axis.dimension - 2.0).abs() <= 0.2, "{summary}");
    check!((hbox.dimension - 4.0).abs() <= 0.3, "{summary}");
    Ok(summary)
}

fn random_poly(rng: &mut ChaCha8Rng) -> Expr {
    let terms = rng.random_range(0..5);
    (0..terms).fold(Expr::zero(3), |acc, _| {
        let m: Vec<u32> = (0..3).map(|_| rng.random_range(0..=2)).collect();
        acc.add(&Expr::monomial(m, random_rat(rng)))
    })
}

fn random_rat(rng: &mut ChaCha8Rng) -> Rat {
    rat(rng.random_range(-6..=6), rng.random_range(1..=4))
}

fn random_field(rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::new((0..3).map(|_| random_poly(rng)).collect())
}

fn c9_calculus() -> Outcome {
    const INSTANCES: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..INSTANCES {
        let (x, y, z) = (random_field(&mut rng), random_field(&mut rng), random_field(&mut rng));
        let jac = lie_bracket(&x, &lie_bracket(&y, &z)).add(&lie_bracket(&y, &lie_bracket(&z, &x))).add(&lie_bracket(&z, &lie_bracket(&x, &y)));
        check!(jac.is_zero(), "Jacobi fails on instance {i}");
        let (a, b) = (random_rat(&mut rng), random_rat(&mut rng));
        let lhs = lie_bracket(&x, &y.scale(&a).add(&z.scale(&b)));
        let rhs = lie_bracket(&x, &y).scale(&a).add(&lie_bracket(&x, &z).scale(&b));
        check!(lhs == rhs, "bilinearity fails on instance {i}");
        check!(lie_bracket(&x, &y) == lie_bracket(&y, &x).neg(), "antisymmetry fails on instance {i}");

        let e = random_poly(&mut rng);
        let h = 1e-5;
        for _ in 0..20 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in 0..3 {
                let (mut up, mut dn) = (p.clone(), p.clone());
                up[k] += h;
                dn[k] -= h;
                let fd = (e.eval_f64(&up) - e.eval_f64(&dn)) / (2.0 * h);
                let exact = e.diff(k).eval_f64(&p);
                check!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "∂{k} of {e} at {p:?}: {fd} vs {exact}");
            }
        }
    }

    let structures = [heisenberg(), grushin(), martinet()];
    for i in 0..INSTANCES {
        let s = &structures[i % 3];
        let p: Vec<Rat> = (0..s.dim).map(|_| rat(rng.random_range(-7..=7), 8)).collect();
        let nil = nilpotent_at_exact(s, &p).map_err(|e| e.to_string())?;
        check!(nil.is_homogeneous(), "not homogeneous at {p:?}: {:?}", nil.fields_display());
    }

    let b = Budget::default();
    let mut worst_tri = f64::NEG_INFINITY;
    for i in 0..INSTANCES {
        let s = &structures[i % 3];
        let pt = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..s.dim).map(|_| rng.random_range(-0.5..0.5)).collect() };
        let (p, q, r) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
        let seed = 3 * i as u64;
        let pq = distance(s, &p, &q, &b, seed).map_err(|e| e.to_string())?;
        let qr = distance(s, &q, &r, &b, seed + 1).map_err(|e| e.to_string())?;
        let pr = distance(s, &p, &r, &b, seed + 2).map_err(|e| e.to_string())?;
        let excess = pr.value - pq.value - qr.value - 3.0 * (pq.error + qr.error + pr.error);
        worst_tri = worst_tri.max(excess);
        check!(excess <= 0.0, "triangle inequality fails for {p:?}, {q:?}, {r:?}");
    }

    let mut worst_hom: f64 = 0.0;
    for i in 0..INSTANCES {
        let s = &structures[i % 3];
        let base: Vec<Rat> = (0..s.dim).map(|_| rat(rng.random_range(-7..=7), 8)).collect();
        let nil = nilpotent_at_exact(s, &base).map_err(|e| e.to_string())?;
        let ns = nil.as_structure();
        let w = &nil.weights;
        let x: Vec<f64> = w.iter().map(|&wi| rng.random_range(-0.5..0.5) * 0.5f64.powi(wi as i32)).collect();
        let zero = vec![0.0; s.dim];
        let seed = 2 * i as u64;
        let d = distance(&ns, &zero, &x, &b, seed).map_err(|e| e.to_string())?;
        for lambda in [0.5, 2.0] {
            let dl = distance(&ns, &zero, &dilate(&x, lambda, w), &b, seed + 1).map_err(|e| e.to_string())?;
            let slack = 3.0 * (dl.error + lambda * d.error);
            let off = (dl.value - lambda * d.value).abs();
            worst_hom = worst_hom.max(off / slack.max(f64::MIN_POSITIVE));
            check!(off <= slack, "d̂(0, δ_{lambda} x) = {} vs {lambda}·{} at x = {x:?}", dl.value, d.value);
        }
    }
    Ok(format!(
        "{INSTANCES} instances each; worst triangle excess {worst_tri:.2e}; worst homogeneity deviation {worst_hom:.2} of its slack"
    ))
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_srm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("srm {args:?} exited with {status}"))
    }
}

fn c10_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 3] = [
        &["--seed", "11", "density", "--structure", "grushin.srm", "--point", "1,0", "--eps", "0.4,0.2", "--directions", "64"],
        &["--seed", "11", "--format", "csv", "blowup", "--structure", "grushin.srm", "--point", "1,0", "--eps", "0.4,0.2", "--directions", "64", "--pairs", "6"],
        &["--seed", "11", "dist", "--structure", "heisenberg.srm", "--from", "0,0,0", "--to", "0.2,0.1,0.3"],
    ];
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let a = dir.path().join(format!("{i}a"));
        let b = dir.path().join(format!("{i}b"));
        run_cli(args, &a)?;
        run_cli(args, &b)?;
        for entry in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
            let name = entry.map_err(|e| e.to_string())?.file_name();
            let x = std::fs::read(a.join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(&name)).map_err(|e| e.to_string())?;
            check!(x == y, "{:?} differs between identical runs of {args:?}", name);
            files += 1;
        }
    }
    Ok(format!("{files} output files byte-identical across repeated runs"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "flag oracles", c1_flags),
        (2, "Popp oracles", c2_popp),
        (3, "weak equivalence", c3_weak_equivalence),
        (4, "P_1 / P_2 on Grushin", c4_stratified),
        (5, "small-ball density", c5_density),
        (6, "measured blow-up", c6_blowup),
        (7, "isodiametric evidence", c7_isodiametric),
        (8, "covering dimension", c8_dimension),
        (9, "calculus properties", c9_calculus),
        (10, "reproducibility", c10_reproducibility),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {id:>2} PASS  {name} ({secs:.0} s): {msg}"),
            Err(msg) => {
                println!("criterion {id:>2} FAIL  {name} ({secs:.0} s): {msg}");
                failed.push(id);
            }
        }
    }
    let expected: Vec<u32> = EXPECTED_FAILURES.iter().copied().filter(|id| only.as_ref().is_none_or(|o| o.contains(id))).collect();
    println!("failed: {failed:?}; expected failures: {expected:?}");
    if failed != expected {
        std::process::exit(1);
    }
}
