//! Bracket words, the flag D^1_p ⊂ D^2_p ⊂ …, growth vectors, weights and
//! homogeneous dimension, pointwise and on grids.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{rat_from_f64, CompiledExpr, Rat};
use crate::field::{lie_bracket, VectorField};
use crate::linalg::{rank_f64, rank_rat};
use crate::par::par_map;
use crate::rng::SeedTree;
use crate::structure::SRStructure;

pub const DEFAULT_DEPTH: usize = 6;
pub const DEFAULT_TOL: f64 = 1e-9;

/// A right-nested bracket [X_{i1},[X_{i2},[…,X_{is}]]], stored as its
/// generator indices (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BracketWord(pub Vec<usize>);

impl BracketWord {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fold the word into a vector field by repeated bracketing.
    pub fn evaluate(&self, gens: &[VectorField]) -> VectorField {
        let mut it = self.0.iter().rev();
        let mut acc = gens[*it.next().expect("nonempty word")].clone();
        for &i in it {
            acc = lie_bracket(&gens[i], &acc);
        }
        acc
    }
}

impl fmt::Display for BracketWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.0.len();
        for (k, &i) in self.0.iter().enumerate() {
            if k + 1 < s {
                write!(f, "[X{},", i + 1)?;
            } else {
                write!(f, "X{}", i + 1)?;
            }
        }
        for _ in 1..s {
            f.write_str("]")?;
        }
        Ok(())
    }
}

/// One deduplicated bracket: its word, symbolic value (sign-normalized, so
/// the word evaluates to `sign * field`) and compiled components.
#[derive(Clone, Debug)]
pub struct Bracket {
    pub word: BracketWord,
    pub field: VectorField,
    pub sign: i8,
    compiled: Vec<CompiledExpr>,
}

impl Bracket {
    pub fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.compiled.iter().map(|c| self.sign as f64 * c.eval(x)).collect()
    }

    pub fn eval_rat(&self, x: &[Rat]) -> Vec<Rat> {
        let v = self.field.eval_rat(x);
        if self.sign < 0 {
            v.into_iter().map(|c| -c).collect()
        } else {
            v
        }
    }

    /// The word's value as a field, with sign restored.
    pub fn signed_field(&self) -> VectorField {
        if self.sign < 0 {
            self.field.neg()
        } else {
            self.field.clone()
        }
    }
}

/// All right-nested brackets up to a depth, deduplicated by canonical value
/// up to sign, zeros dropped.  `levels[s-1]` holds the words of length s.
#[derive(Clone, Debug)]
pub struct BracketTable {
    pub levels: Vec<Vec<Bracket>>,
    pub depth: usize,
}

impl BracketTable {
    pub fn new(gens: &[VectorField], depth: usize) -> Self {
        let mut seen: HashSet<VectorField> = HashSet::new();
        let mut levels: Vec<Vec<Bracket>> = Vec::new();
        let make = |word: BracketWord, value: VectorField, seen: &mut HashSet<VectorField>| -> Option<Bracket> {
            if value.is_zero() {
                return None;
            }
            let (canon, flipped) = value.sign_normalized();
            if !seen.insert(canon.clone()) {
                return None;
            }
            let compiled = canon.comps().iter().map(CompiledExpr::new).collect();
            Some(Bracket { word, field: canon, sign: if flipped { -1 } else { 1 }, compiled })
        };
        let first: Vec<Bracket> = gens
            .iter()
            .enumerate()
            .filter_map(|(i, g)| make(BracketWord(vec![i]), g.clone(), &mut seen))
            .collect();
        levels.push(first);
        for _ in 1..depth {
            let prev = levels.last().unwrap();
            if prev.is_empty() {
                break;
            }
            // Candidates in lexicographic word order so the first
            // representative of each value is the smallest word.
            let mut cands = Vec::new();
            for b in prev {
                let value = b.signed_field();
                for (i, g) in gens.iter().enumerate() {
                    let mut w = vec![i];
                    w.extend_from_slice(&b.word.0);
                    cands.push((BracketWord(w), lie_bracket(g, &value)));
                }
            }
            cands.sort_by(|a, b| a.0.cmp(&b.0));
            let next: Vec<Bracket> = cands.into_iter().filter_map(|(w, v)| make(w, v, &mut seen)).collect();
            levels.push(next);
        }
        while levels.len() > 1 && levels.last().unwrap().is_empty() {
            levels.pop();
        }
        BracketTable { levels, depth }
    }

    pub fn words_up_to(&self, len: usize) -> impl Iterator<Item = &Bracket> {
        self.levels.iter().take(len).flatten()
    }
}

/// Bracket words up to `depth` on the given family, with words whose fields
/// coincide up to sign collapsed.
pub fn enumerate_brackets(gens: &[VectorField], depth: usize) -> Vec<BracketWord> {
    BracketTable::new(gens, depth).levels.iter().flatten().map(|b| b.word.clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlagData {
    pub point: Vec<f64>,
    pub step: usize,
    pub growth: Vec<usize>,
    pub weights: Vec<u32>,
    pub q: u32,
    /// Words added at each level to realize the rank increase.
    pub spanning: Vec<Vec<BracketWord>>,
}

impl FlagData {
    fn from_growth(point: Vec<f64>, growth: Vec<usize>, spanning: Vec<Vec<BracketWord>>) -> Self {
        let mut weights = Vec::new();
        let mut prev = 0;
        for (i, &ni) in growth.iter().enumerate() {
            for _ in prev..ni {
                weights.push(i as u32 + 1);
            }
            prev = ni;
        }
        let q = weights.iter().sum();
        FlagData { point, step: growth.len(), growth, weights, q, spanning }
    }

    /// Q from the growth vector directly: Σ i (n_i − n_{i−1}).
    pub fn q_from_growth(&self) -> u32 {
        let mut prev = 0;
        let mut q = 0;
        for (i, &ni) in self.growth.iter().enumerate() {
            q += (i as u32 + 1) * (ni - prev) as u32;
            prev = ni;
        }
        q
    }

    pub fn max_weight(&self) -> u32 {
        *self.weights.last().unwrap_or(&1)
    }
}

/// Flag at p with numerical ranks (singular values above `tol` × largest).
pub fn flag_at(s: &SRStructure, p: &[f64], tol: f64) -> Result<FlagData> {
    flag_at_depth(s, p, tol, DEFAULT_DEPTH)
}

pub fn flag_at_depth(s: &SRStructure, p: &[f64], tol: f64, depth: usize) -> Result<FlagData> {
    let n = s.dim;
    let table = s.brackets();
    let mut all: Vec<Vec<f64>> = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut growth = Vec::new();
    let mut spanning = Vec::new();
    let mut rank = 0;
    for level in 0..depth {
        let mut added = Vec::new();
        if let Some(words) = table.levels.get(level) {
            for b in words {
                all.push(b.eval_f64(p));
            }
            let r = rank_f64(&all, n, tol);
            // Greedy spanning subset for this level.
            if r > rank {
                let scale = crate::linalg::columns_f64(&all, n).singular_values().max();
                for b in words {
                    let mut trial = basis.clone();
                    trial.push(b.eval_f64(p));
                    if crate::linalg::rank_f64_scaled(&trial, n, tol, scale) > basis.len() {
                        basis = trial;
                        added.push(b.word.clone());
                        if basis.len() == r {
                            break;
                        }
                    }
                }
            }
            rank = r;
        }
        growth.push(rank);
        spanning.push(added);
        if rank == n {
            return Ok(FlagData::from_growth(p.to_vec(), growth, spanning));
        }
    }
    Err(Error::NotBracketGenerating { point: p.to_vec(), rank, dim: n, depth })
}

/// Flag at a rational point with exact ranks.
pub fn flag_at_exact(s: &SRStructure, p: &[Rat], depth: usize) -> Result<FlagData> {
    let n = s.dim;
    let table = s.brackets();
    let pf: Vec<f64> = p.iter().map(crate::expr::rat_to_f64).collect();
    let mut all: Vec<Vec<Rat>> = Vec::new();
    let mut growth = Vec::new();
    let mut spanning = Vec::new();
    let mut rank = 0;
    for level in 0..depth {
        let mut added = Vec::new();
        if let Some(words) = table.levels.get(level) {
            for b in words {
                all.push(b.eval_rat(p));
                let r = rank_rat(&all);
                if r > rank {
                    added.push(b.word.clone());
                    rank = r;
                } else {
                    all.pop();
                }
            }
        }
        growth.push(rank);
        spanning.push(added);
        if rank == n {
            return Ok(FlagData::from_growth(pf, growth, spanning));
        }
    }
    Err(Error::NotBracketGenerating { point: pf, rank, dim: n, depth })
}

/// Exact flag at a float point (converted without rounding).
pub fn flag_at_exact_f64(s: &SRStructure, p: &[f64]) -> Result<FlagData> {
    let pr: Vec<Rat> = p.iter().map(|&x| rat_from_f64(x)).collect();
    flag_at_exact(s, &pr, DEFAULT_DEPTH)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointClass {
    Regular,
    Singular,
}

impl fmt::Display for PointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointClass::Regular => "regular",
            PointClass::Singular => "singular",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub index: usize,
    pub point: Vec<f64>,
    pub growth: Vec<usize>,
    pub q: u32,
    pub class: PointClass,
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub counts: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
}

impl GridSpec {
    /// Parse "21x21" against a box.
    pub fn parse(spec: &str, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let counts: Vec<usize> = spec
            .split('x')
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad grid spec `{spec}`"))))
            .collect::<Result<_>>()?;
        if counts.len() != bounds.len() || counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!("grid `{spec}` does not match dimension {}", bounds.len())));
        }
        Ok(GridSpec { counts, bounds })
    }

    pub fn uniform(count: usize, bounds: Vec<(f64, f64)>) -> Self {
        GridSpec { counts: vec![count; bounds.len()], bounds }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid point by linear index, first coordinate varying slowest.
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.counts.len()];
        for d in (0..self.counts.len()).rev() {
            let c = self.counts[d];
            let k = idx % c;
            idx /= c;
            let (lo, hi) = self.bounds[d];
            out[d] = if c == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * k as f64 / (c - 1) as f64 };
        }
        out
    }

    pub fn min_spacing(&self) -> f64 {
        self.counts
            .iter()
            .zip(&self.bounds)
            .filter(|(&c, _)| c > 1)
            .map(|(&c, &(lo, hi))| (hi - lo) / (c - 1) as f64)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct ClassifyOptions {
    pub tol: f64,
    pub probe_radius: f64,
    pub probe_count: usize,
    pub seed: u64,
}

impl ClassifyOptions {
    pub fn for_grid(grid: &GridSpec, seed: u64) -> Self {
        let h = grid.min_spacing();
        ClassifyOptions {
            tol: DEFAULT_TOL,
            probe_radius: if h.is_finite() { 0.25 * h } else { 0.05 },
            probe_count: 8,
            seed,
        }
    }
}

/// Regular iff the growth vector matches that of every probe sample drawn in
/// the probe ball.  Probes are seeded from the grid index.
pub fn classify_grid(s: &SRStructure, grid: &GridSpec, opt: &ClassifyOptions) -> Result<Vec<GridPoint>> {
    let seeds = SeedTree::new(opt.seed).child("classify");
    let results = par_map(grid.len(), |idx| -> Result<GridPoint> {
        let p = grid.point(idx);
        let f = flag_at(s, &p, opt.tol)?;
        let mut rng = seeds.rng(idx as u64);
        let mut regular = true;
        for _ in 0..opt.probe_count {
            // Uniform in the Euclidean ball by rejection.
            let q: Vec<f64> = loop {
                let d: Vec<f64> = (0..p.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                if d.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break p.iter().zip(&d).map(|(a, b)| a + opt.probe_radius * b).collect();
                }
            };
            let fq = flag_at(s, &q, opt.tol)?;
            if fq.growth != f.growth {
                regular = false;
                break;
            }
        }
        Ok(GridPoint {
            index: idx,
            point: p,
            growth: f.growth,
            q: f.q,
            class: if regular { PointClass::Regular } else { PointClass::Singular },
        })
    });
    results.into_iter().collect()
}
