//! Small dense linear algebra: exact rational elimination and float SVD rank.

use nalgebra::DMatrix;
use num_traits::{One, Signed, Zero};

use crate::expr::Rat;

/// Row-reduce in place; returns pivot columns.
fn rref(a: &mut [Vec<Rat>]) -> Vec<usize> {
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        let inv = Rat::one() / a[r][c].clone();
        for v in a[r].iter_mut() {
            *v *= &inv;
        }
        for i in 0..rows {
            if i != r && !a[i][c].is_zero() {
                let f = a[i][c].clone();
                for j in c..cols {
                    let t = &a[r][j] * &f;
                    a[i][j] -= t;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// Exact rank of a list of vectors.
pub fn rank_rat(vectors: &[Vec<Rat>]) -> usize {
    let mut a: Vec<Vec<Rat>> = vectors.to_vec();
    rref(&mut a).len()
}

pub fn det_rat(m: &[Vec<Rat>]) -> Rat {
    let n = m.len();
    let mut a = m.to_vec();
    let mut det = Rat::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&i| !a[i][c].is_zero()) else {
            return Rat::zero();
        };
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        let piv = a[c][c].clone();
        det *= &piv;
        for i in c + 1..n {
            if !a[i][c].is_zero() {
                let f = &a[i][c] / &piv;
                for j in c..n {
                    let t = &a[c][j] * &f;
                    a[i][j] -= t;
                }
            }
        }
    }
    det
}

/// Basis of {x : A x = 0} for A given by rows with `cols` columns.
pub fn nullspace_rat(a: &[Vec<Rat>], cols: usize) -> Vec<Vec<Rat>> {
    let mut m: Vec<Vec<Rat>> = a.to_vec();
    let pivots = rref(&mut m);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut x = vec![Rat::zero(); cols];
            x[f] = Rat::one();
            for (r, &pc) in pivots.iter().enumerate() {
                x[pc] = -m[r][f].clone();
            }
            x
        })
        .collect()
}

/// Solve A x = b (A given by rows) for some solution, free variables set to
/// zero.  `None` if inconsistent.
pub fn solve_rat(a: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    let cols = a.first().map_or(0, Vec::len);
    let mut aug: Vec<Vec<Rat>> = a
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.last() == Some(&cols) {
        return None;
    }
    let mut x = vec![Rat::zero(); cols];
    for (r, &c) in pivots.iter().enumerate() {
        x[c] = aug[r][cols].clone();
    }
    Some(x)
}

/// Inverse of a square matrix given by rows, `None` if singular.
pub fn inverse_rat(m: &[Vec<Rat>]) -> Option<Vec<Vec<Rat>>> {
    let n = m.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut aug: Vec<Vec<Rat>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Rat::one() } else { Rat::zero() }));
            r
        })
        .collect();
    let piv = rref(&mut aug);
    if piv.len() < n || piv[n - 1] != n - 1 {
        return None;
    }
    Some(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn mat_vec_rat(m: &[Vec<Rat>], v: &[Rat]) -> Vec<Rat> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).fold(Rat::zero(), |s, t| s + t)).collect()
}

pub fn abs_rat(r: &Rat) -> Rat {
    r.abs()
}

/// Matrix whose columns are the given vectors.
pub fn columns_f64(vectors: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, vectors.len(), |i, j| vectors[j][i])
}

/// Numerical rank: singular values above `tol` times the largest.
pub fn rank_f64(vectors: &[Vec<f64>], n: usize, tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = columns_f64(vectors, n);
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Numerical rank with an externally supplied scale (used when checking
/// whether new vectors enlarge a span computed relative to a larger matrix).
pub fn rank_f64_scaled(vectors: &[Vec<f64>], n: usize, tol: f64, scale: f64) -> usize {
    if vectors.is_empty() || scale == 0.0 {
        return 0;
    }
    let m = columns_f64(vectors, n);
    m.singular_values().iter().filter(|&&s| s > tol * scale).count()
}

pub fn det_f64(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    columns_f64(vectors, n).determinant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, rat_int};

    fn r(v: &[i64]) -> Vec<Rat> {
        v.iter().map(|&x| rat_int(x)).collect()
    }

    #[test]
    fn exact_rank_and_det() {
        let m = vec![r(&[1, 2, 3]), r(&[2, 4, 6]), r(&[0, 1, 1])];
        assert_eq!(rank_rat(&m), 2);
        assert_eq!(det_rat(&m), rat_int(0));
        let m = vec![r(&[2, 0]), r(&[1, 3])];
        assert_eq!(det_rat(&m), rat_int(6));
        let inv = inverse_rat(&m).unwrap();
        assert_eq!(inv[0][0], rat(1, 2));
        assert_eq!(inv[1][0], rat(-1, 6));
    }

    #[test]
    fn exact_solve() {
        let a = vec![r(&[1, 1, 0]), r(&[0, 1, 1])];
        let x = solve_rat(&a, &r(&[2, 3])).unwrap();
        assert_eq!(mat_vec_rat(&a, &x), r(&[2, 3]));
        let a = vec![r(&[1, 1]), r(&[1, 1])];
        assert!(solve_rat(&a, &r(&[1, 2])).is_none());
    }

    #[test]
    fn exact_nullspace() {
        let a = vec![r(&[1, 2, 3]), r(&[2, 4, 6])];
        let ns = nullspace_rat(&a, 3);
        assert_eq!(ns.len(), 2);
        for v in &ns {
            assert!(mat_vec_rat(&a, v).iter().all(|c| c.is_zero()));
        }
        assert!(nullspace_rat(&[], 2).len() == 2);
    }

    #[test]
    fn float_rank() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1e-12]];
        assert_eq!(rank_f64(&v, 2, 1e-9), 1);
        assert_eq!(rank_f64(&v, 2, 1e-13), 2);
    }
}
