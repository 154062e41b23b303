mod common;

use std::f64::consts::PI;

use srm_core::measures::{ball_profile, ball_ratios, isodiametric_search, mu_hat_ball, unit_ball, unit_ball_volume_hit_or_miss, IsoOptions, MeasureOptions};
use srm_core::nilpotent::nilpotent_at;
use srm_core::structure::{euclidean_plane, grushin, heisenberg};

#[test]
fn oracle_volume_is_sane() {
    let v = common::heisenberg_unit_ball_volume();
    // Contained in the cylinder r ≤ 1, |x3| ≤ 1/(2π) and containing the
    // double cone over the unit disc with apex height 1/(4π).
    assert!(v < 1.0 && v > 1.0 / 6.0);
    assert!((v - 0.8258).abs() < 1e-3, "{v}");
}

#[test]
fn heisenberg_unit_ball_volume() {
    let h = heisenberg();
    let opt = MeasureOptions::default();
    let mu = mu_hat_ball(&h, &[0.3, -0.2, 0.1], &opt).unwrap();
    let v = common::heisenberg_unit_ball_volume();
    assert_eq!(mu.q, 4);
    assert!((mu.density0 - 1.0).abs() < 1e-12);
    assert!(mu.value.within(v, 3.0) && mu.value.relative_stderr() < 0.03, "{:?} vs {v}", mu.value);
}

#[test]
fn ray_and_hit_or_miss_routes_agree() {
    let h = heisenberg();
    let nil = nilpotent_at(&h, &[0.0, 0.0, 0.0]).unwrap();
    let opt = MeasureOptions::default();
    let ray = unit_ball(&nil, &opt).unwrap().volume.clone();
    let hm = unit_ball_volume_hit_or_miss(&nil, 1.0, 600, &opt).unwrap();
    let se = ray.stderr.hypot(hm.stderr);
    assert!((ray.mean - hm.mean).abs() < 3.0 * se, "{ray:?} vs {hm:?}");
}

#[test]
fn euclidean_small_balls_have_exact_ratio() {
    let e = euclidean_plane();
    let opt = MeasureOptions { directions: 32, ..Default::default() };
    let prof = ball_profile(&e, &[0.1, 0.2], &[0.4, 0.1], 1.0, &opt).unwrap();
    for r in ball_ratios(&prof) {
        assert!((r.ratio.mean - PI).abs() < 1e-3, "{r:?}");
        assert!(r.gap.mean.abs() < 1e-3);
    }
}

#[test]
fn grushin_regular_ratio_approaches_blowup() {
    let g = grushin();
    let opt = MeasureOptions { directions: 64, ..Default::default() };
    let prof = ball_profile(&g, &[1.0, 0.0], &[0.4, 0.2, 0.1], 1.0, &opt).unwrap();
    let rows = ball_ratios(&prof);
    for r in &rows {
        assert!((r.mu_hat.mean - PI).abs() < 1e-3);
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap.mean.abs()).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.05, "{gaps:?}");
}

#[test]
fn isodiametric_heisenberg_beats_the_ball() {
    let h = heisenberg();
    let nil = nilpotent_at(&h, &[0.0, 0.0, 0.0]).unwrap();
    let rep = isodiametric_search(&nil, &IsoOptions::default()).unwrap();
    assert_eq!(rep.candidates[0].ratio, 1.0);
    let best = &rep.candidates[rep.best];
    assert!(best.certified >= 1.02, "{best:?}");
}

#[test]
fn isodiametric_euclidean_ball_is_optimal() {
    let e = euclidean_plane();
    let nil = nilpotent_at(&e, &[0.0, 0.0]).unwrap();
    let rep = isodiametric_search(&nil, &IsoOptions::default()).unwrap();
    assert!(rep.candidates.iter().all(|c| c.certified <= 1.005), "{:?}", rep.candidates);
}
