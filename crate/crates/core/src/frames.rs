//! Frames of brackets adapted to the flag, and the weak equivalent ν.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{rat_to_f64, Rat};
use crate::flag::{BracketWord, FlagData};
use crate::linalg::{det_rat, rank_rat};
use crate::structure::SRStructure;

/// Frames beyond this count are not enumerated.
pub const MAX_FRAMES: usize = 512;

#[derive(Clone, Debug, Serialize)]
pub struct AdaptedFrame {
    pub words: Vec<BracketWord>,
    /// Bracket length of each word; equals the weight of its slot.
    pub levels: Vec<u32>,
    #[serde(skip)]
    pub exact: Vec<Vec<Rat>>,
    pub vectors: Vec<Vec<f64>>,
    pub total_length: u32,
}

impl AdaptedFrame {
    /// Matrix with the frame vectors as columns, by rows.
    pub fn matrix_exact(&self) -> Vec<Vec<Rat>> {
        let n = self.exact.len();
        (0..n).map(|i| (0..n).map(|j| self.exact[j][i].clone()).collect()).collect()
    }

    pub fn det_exact(&self) -> Rat {
        det_rat(&self.matrix_exact())
    }

    /// Indices of the frame slots of bracket length `level` (1-based).
    pub fn slots(&self, level: u32) -> Vec<usize> {
        (0..self.levels.len()).filter(|&i| self.levels[i] == level).collect()
    }
}

/// All frames adapted to the flag at `p`, up to permutation within a level
/// and sign (bracket values are sign-normalized in the table, and each level
/// picks an unordered subset).  Independence is decided exactly.
pub fn adapted_frames(s: &SRStructure, p: &[Rat], flag: &FlagData) -> Result<Vec<AdaptedFrame>> {
    let table = s.brackets();
    let mut per_level: Vec<Vec<(BracketWord, Vec<Rat>)>> = Vec::new();
    for level in 0..flag.step {
        let cands = table
            .levels
            .get(level)
            .map(|words| {
                words
                    .iter()
                    .map(|b| (b.word.clone(), b.eval_rat(p)))
                    .filter(|(_, v)| v.iter().any(|c| !c.is_zero()))
                    .collect()
            })
            .unwrap_or_default();
        per_level.push(cands);
    }
    let need: Vec<usize> = flag
        .growth
        .iter()
        .scan(0, |prev, &g| {
            let d = g - *prev;
            *prev = g;
            Some(d)
        })
        .collect();
    let mut out = Vec::new();
    let mut chosen: Vec<(BracketWord, Vec<Rat>, u32)> = Vec::new();
    search(&per_level, &need, 0, &mut chosen, &mut out);
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no adapted frame at {:?} for growth {:?}", flag.point, flag.growth)));
    }
    Ok(out)
}

fn search(
    per_level: &[Vec<(BracketWord, Vec<Rat>)>],
    need: &[usize],
    level: usize,
    chosen: &mut Vec<(BracketWord, Vec<Rat>, u32)>,
    out: &mut Vec<AdaptedFrame>,
) {
    if out.len() >= MAX_FRAMES {
        return;
    }
    if level == need.len() {
        let exact: Vec<Vec<Rat>> = chosen.iter().map(|c| c.1.clone()).collect();
        let levels: Vec<u32> = chosen.iter().map(|c| c.2).collect();
        out.push(AdaptedFrame {
            words: chosen.iter().map(|c| c.0.clone()).collect(),
            vectors: exact.iter().map(|v| v.iter().map(rat_to_f64).collect()).collect(),
            total_length: levels.iter().sum(),
            levels,
            exact,
        });
        return;
    }
    let cands = &per_level[level];
    let k = need[level];
    let base = chosen.len();
    combos(cands.len(), k, &mut |idx: &[usize]| {
        for &i in idx {
            chosen.push((cands[i].0.clone(), cands[i].1.clone(), level as u32 + 1));
        }
        let vecs: Vec<Vec<Rat>> = chosen.iter().map(|c| c.1.clone()).collect();
        if rank_rat(&vecs) == vecs.len() {
            search(per_level, need, level + 1, chosen, out);
        }
        chosen.truncate(base);
    });
}

/// Calls `f` on every k-subset of 0..n in lexicographic order.
fn combos(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// |ω_p(Y_1, …, Y_n)| for one frame, exactly.
pub fn frame_volume(s: &SRStructure, p: &[Rat], frame: &AdaptedFrame) -> Rat {
    (s.volume.eval_rat(p) * frame.det_exact()).abs()
}

/// ν(p): the largest ω-volume over the given frames.  Both orientations of
/// each frame are admissible, so the maximum is over absolute values.
pub fn nu(s: &SRStructure, p: &[Rat], frames: &[AdaptedFrame]) -> f64 {
    frames
        .iter()
        .map(|f| frame_volume(s, p, f))
        .max()
        .map(|r| rat_to_f64(&r))
        .unwrap_or(0.0)
}

/// Convenience: flag, frames and ν at a float point (converted exactly).
pub fn nu_at(s: &SRStructure, p: &[f64]) -> Result<f64> {
    let pr: Vec<Rat> = p.iter().map(|&x| crate::expr::rat_from_f64(x)).collect();
    let flag = crate::flag::flag_at_exact(s, &pr, crate::flag::DEFAULT_DEPTH)?;
    let frames = adapted_frames(s, &pr, &flag)?;
    Ok(nu(s, &pr, &frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat, rat_int};
    use crate::flag::{flag_at_exact, DEFAULT_DEPTH};
    use crate::structure::{grushin, heisenberg, martinet};

    fn frames_at(s: &SRStructure, p: &[Rat]) -> Vec<AdaptedFrame> {
        let f = flag_at_exact(s, p, DEFAULT_DEPTH).unwrap();
        adapted_frames(s, p, &f).unwrap()
    }

    fn names(f: &AdaptedFrame) -> Vec<String> {
        f.words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn grushin_frames() {
        let g = grushin();
        let fr = frames_at(&g, &[rat_int(1), rat_int(0)]);
        assert_eq!(fr.len(), 1);
        assert_eq!(names(&fr[0]), ["X1", "X2"]);
        assert_eq!(fr[0].total_length, 2);
        let fr = frames_at(&g, &[rat_int(0), rat_int(0)]);
        assert_eq!(fr.len(), 1);
        assert_eq!(names(&fr[0]), ["X1", "[X1,X2]"]);
        assert_eq!(fr[0].total_length, 3);
    }

    #[test]
    fn heisenberg_frames_and_nu() {
        let h = heisenberg();
        let p = [rat(1, 3), rat(-2, 5), rat(7, 2)];
        let fr = frames_at(&h, &p);
        assert_eq!(fr.len(), 1);
        assert_eq!(names(&fr[0]), ["X1", "X2", "[X1,X2]"]);
        assert_eq!(nu(&h, &p, &fr), 1.0);
    }

    #[test]
    fn grushin_nu_vanishes_towards_axis() {
        let g = grushin();
        let mut prev = f64::INFINITY;
        for k in 2..=64 {
            let p = [rat(1, k), rat_int(0)];
            let v = nu(&g, &p, &frames_at(&g, &p));
            assert_eq!(v, 1.0 / k as f64);
            assert!(v < prev);
            prev = v;
        }
        let o = [rat_int(0), rat_int(0)];
        assert_eq!(nu(&g, &o, &frames_at(&g, &o)), 1.0);
    }

    #[test]
    fn martinet_regular_frames() {
        let m = martinet();
        let p = [rat(1, 2), rat_int(0), rat_int(0)];
        let fr = frames_at(&m, &p);
        assert_eq!(names(&fr[0]), ["X1", "X2", "[X1,X2]"]);
        assert!(fr.iter().all(|f| f.total_length == 4));
        let o = [rat_int(0), rat_int(0), rat_int(0)];
        let fr = frames_at(&m, &o);
        assert_eq!(names(&fr[0]), ["X1", "X2", "[X1,[X1,X2]]"]);
        assert_eq!(fr[0].total_length, 5);
    }
}
