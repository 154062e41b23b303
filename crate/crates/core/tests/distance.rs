mod common;

use std::time::Instant;

use srm_core::distance::{distance, Budget};
use srm_core::structure::heisenberg;

#[test]
fn heisenberg_against_closed_form() {
    let h = heisenberg();
    let pts = [
        [1.0, 0.0, 0.0],
        [0.3, -0.2, 0.1],
        [0.0, 0.0, 0.05],
        [0.1, 0.05, -0.2],
        [0.5, 0.5, 0.0],
        [-0.2, 0.1, 0.02],
    ];
    for x in pts {
        let t = Instant::now();
        let d = distance(&h, &[0.0; 3], &x, &Budget::default(), 1).unwrap();
        let want = common::heisenberg_distance(x);
        eprintln!("{x:?}: got {:.8} ± {:.2e} ({:?}) want {:.8}  [{:?}]", d.value, d.error, d.method, want, t.elapsed());
        assert!((d.value - want).abs() <= 1e-3 * want.max(1e-3) + d.error, "{x:?}");
    }
}
