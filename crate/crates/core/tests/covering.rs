use srm_core::measures::{covering_dimension, CoveringOptions, SetSpec};
use srm_core::structure::{euclidean_plane, grushin};

#[test]
fn euclidean_segment_is_one_dimensional() {
    let e = euclidean_plane();
    let set = SetSpec::Segment(vec![-0.5, 0.0], vec![0.5, 0.25]);
    let rep = covering_dimension(&e, &set, &[0.02, 0.01, 0.005, 0.0025], &CoveringOptions::default(), 3).unwrap();
    eprintln!("{rep:?}");
    assert!((rep.dimension - 1.0).abs() <= 0.1, "{rep:?}");
    assert!(rep.truncated.is_empty());
}

#[test]
fn grushin_axis_has_dimension_two() {
    let g = grushin();
    let set = SetSpec::Stratum("axis".into(), None);
    let t = std::time::Instant::now();
    let rep = covering_dimension(&g, &set, &[0.4, 0.3, 0.2, 0.15], &CoveringOptions::default(), 3).unwrap();
    eprintln!("{rep:?} {:?}", t.elapsed());
    assert!((rep.dimension - 2.0).abs() <= 0.2, "{rep:?}");
}
