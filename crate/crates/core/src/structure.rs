//! Sub-Riemannian structures given by a polynomial generating family, and the
//! line-oriented `.srm` structure-file format.
//!
//! ```text
//! # Grushin plane
//! dim = 2
//! field X1 = (1, 0)
//! field X2 = (0, x1)
//! volume = 1
//! box = [-1,1] x [-1,1]
//! probe = (1/2, 0)
//! stratum axis : k = 1; map = (0, t1); parambox = [-1,1]
//! ```
//!
//! Stratum maps are written in the parameters `t1..tk`.  `probe` is optional
//! and defaults to the box centre.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::expr::{rat_to_f64, Expr, Rat};
use crate::field::VectorField;
use crate::flag::BracketTable;
use crate::parse::{lex, Cursor, Token, VarSpec};
use crate::system::ControlSystem;

#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub name: String,
    pub k: usize,
    /// Parametrization t ↦ x, one expression per ambient coordinate, in t1..tk.
    pub map: Vec<Expr>,
    pub parambox: Vec<(Rat, Rat)>,
}

impl Stratum {
    pub fn is_open(&self, n: usize) -> bool {
        self.k == n
    }

    pub fn eval(&self, t: &[f64]) -> Vec<f64> {
        self.map.iter().map(|e| e.eval_f64(t)).collect()
    }

    /// Columns DΦ e_1 .. DΦ e_k at parameter t, as an n×k row-major matrix.
    pub fn jacobian(&self, t: &[f64]) -> Vec<Vec<f64>> {
        self.map.iter().map(|e| (0..self.k).map(|j| e.diff(j).eval_f64(t)).collect()).collect()
    }

    pub fn parambox_f64(&self) -> Vec<(f64, f64)> {
        self.parambox.iter().map(|(a, b)| (rat_to_f64(a), rat_to_f64(b))).collect()
    }
}

#[derive(Default, Debug)]
pub(crate) struct Cache {
    pub brackets: OnceLock<Arc<BracketTable>>,
    pub system: OnceLock<Arc<ControlSystem>>,
    pub field_bound: OnceLock<f64>,
    pub grid_bounds: OnceLock<Arc<crate::distance::GridBounds>>,
    /// Every word in the generators (no deduplication), by length.
    pub tensor_words: OnceLock<Arc<Vec<Vec<(Vec<usize>, VectorField)>>>>,
}

#[derive(Clone, Debug)]
pub struct SRStructure {
    pub dim: usize,
    pub names: Vec<String>,
    pub fields: Vec<VectorField>,
    /// Density of ω with respect to dx1∧…∧dxn.
    pub volume: Expr,
    pub bbox: Vec<(Rat, Rat)>,
    pub probe: Option<Vec<Rat>>,
    pub strata: Vec<Stratum>,
    pub(crate) cache: Arc<Cache>,
}

impl PartialEq for SRStructure {
    fn eq(&self, o: &Self) -> bool {
        self.dim == o.dim
            && self.names == o.names
            && self.fields == o.fields
            && self.volume == o.volume
            && self.bbox == o.bbox
            && self.probe == o.probe
            && self.strata == o.strata
    }
}

impl SRStructure {
    /// Build a structure programmatically; no load-time validation is run.
    pub fn from_fields(fields: Vec<VectorField>, volume: Expr, bbox: Vec<(Rat, Rat)>) -> Self {
        let dim = fields[0].dim();
        let names = (1..=fields.len()).map(|i| format!("X{i}")).collect();
        SRStructure {
            dim,
            names,
            fields,
            volume,
            bbox,
            probe: None,
            strata: Vec::new(),
            cache: Arc::default(),
        }
    }

    /// The same structure over another box, with fresh caches.
    pub fn with_box(&self, bbox: Vec<(Rat, Rat)>) -> Self {
        SRStructure { bbox, cache: Arc::default(), ..self.clone() }
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn bbox_f64(&self) -> Vec<(f64, f64)> {
        self.bbox.iter().map(|(a, b)| (rat_to_f64(a), rat_to_f64(b))).collect()
    }

    pub fn probe_point(&self) -> Vec<Rat> {
        match &self.probe {
            Some(p) => p.clone(),
            None => self.bbox.iter().map(|(a, b)| (a + b) / Rat::from_integer(2.into())).collect(),
        }
    }

    pub fn density_at(&self, x: &[f64]) -> f64 {
        self.volume.eval_f64(x)
    }

    pub fn stratum(&self, name: &str) -> Option<&Stratum> {
        self.strata.iter().find(|s| s.name == name)
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        self.bbox_f64().iter().zip(x).all(|(&(a, b), &v)| v >= a - 1e-12 && v <= b + 1e-12)
    }

    /// Lazily built table of deduplicated bracket words.
    pub fn brackets(&self) -> Arc<BracketTable> {
        self.cache
            .brackets
            .get_or_init(|| Arc::new(BracketTable::new(&self.fields, crate::flag::DEFAULT_DEPTH)))
            .clone()
    }

    /// Lazily compiled floating-point control system.
    pub fn system(&self) -> Arc<ControlSystem> {
        self.cache.system.get_or_init(|| Arc::new(ControlSystem::new(&self.fields))).clone()
    }

    /// Load-time checks: density nonvanishing on the box (sampled) and the
    /// family bracket-generating at the probe point.
    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::InvalidStructure("m ≥ 1 required".into()));
        }
        let b = self.bbox_f64();
        let per_axis = 7usize;
        let total = per_axis.pow(self.dim as u32);
        let mut sign = 0.0f64;
        for idx in 0..total {
            let mut r = idx;
            let x: Vec<f64> = b
                .iter()
                .map(|&(lo, hi)| {
                    let k = r % per_axis;
                    r /= per_axis;
                    lo + (hi - lo) * k as f64 / (per_axis - 1) as f64
                })
                .collect();
            let v = self.volume.eval_f64(&x);
            if v == 0.0 || !v.is_finite() || (sign != 0.0 && v.signum() != sign) {
                return Err(Error::InvalidStructure(format!("volume density vanishes or changes sign near {x:?}")));
            }
            sign = v.signum();
        }
        let probe = self.probe_point();
        crate::flag::flag_at_exact(self, &probe, crate::flag::DEFAULT_DEPTH).map_err(|e| match e {
            Error::NotBracketGenerating { .. } => {
                Error::InvalidStructure(format!("family is not bracket-generating at the probe point: {e}"))
            }
            other => other,
        })?;
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parse and validate a structure file.
pub fn parse_structure(text: &str) -> Result<SRStructure> {
    let s = parse_structure_unchecked(text)?;
    s.validate()?;
    Ok(s)
}

/// Parse without the semantic load-time checks.
pub fn parse_structure_unchecked(text: &str) -> Result<SRStructure> {
    let mut dim: Option<usize> = None;
    let mut names = Vec::new();
    let mut fields = Vec::new();
    let mut volume: Option<Expr> = None;
    let mut bbox: Option<Vec<(Rat, Rat)>> = None;
    let mut probe: Option<Vec<Rat>> = None;
    let mut strata = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = strip_comment(raw);
        let toks: Vec<Token> = lex(body, line, 1)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor::new(&toks, (line, body.chars().count() + 1));
        let kw = c.ident()?;
        let need_dim = |c: &Cursor| -> Result<usize> {
            match dim {
                Some(n) => Ok(n),
                None => c.err("`dim` must be declared first"),
            }
        };
        match kw.as_str() {
            "dim" => {
                if dim.is_some() {
                    return c.err("`dim` declared twice");
                }
                c.expect_sym('=')?;
                let n = c.integer()? as usize;
                if n == 0 || n > 8 {
                    return c.err("dim must be between 1 and 8");
                }
                dim = Some(n);
            }
            "field" => {
                let n = need_dim(&c)?;
                let name = c.ident()?;
                c.expect_sym('=')?;
                let (l0, c0) = c.here();
                let comps = c.expr_tuple(VarSpec::x(n))?;
                if comps.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "line {l0}, column {c0}: field `{name}` has {} components but dim = {n}",
                        comps.len()
                    )));
                }
                names.push(name);
                fields.push(VectorField::new(comps));
            }
            "volume" => {
                let n = need_dim(&c)?;
                c.expect_sym('=')?;
                volume = Some(c.expr(VarSpec::x(n))?);
            }
            "box" => {
                let n = need_dim(&c)?;
                c.expect_sym('=')?;
                let (l0, c0) = c.here();
                let b = c.box_spec()?;
                if b.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "line {l0}, column {c0}: box has {} intervals but dim = {n}",
                        b.len()
                    )));
                }
                bbox = Some(b);
            }
            "probe" => {
                let n = need_dim(&c)?;
                c.expect_sym('=')?;
                let (l0, c0) = c.here();
                let comps = c.expr_tuple(VarSpec::none())?;
                if comps.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "line {l0}, column {c0}: probe has {} coordinates but dim = {n}",
                        comps.len()
                    )));
                }
                probe = Some(comps.iter().map(|e| e.as_constant().expect("constant")).collect());
            }
            "stratum" => {
                let n = need_dim(&c)?;
                let name = c.ident()?;
                c.expect_sym(':')?;
                c.expect_keyword("k")?;
                c.expect_sym('=')?;
                let k = c.integer()? as usize;
                if k == 0 || k > n {
                    return c.err("stratum dimension must be between 1 and dim");
                }
                c.expect_sym(';')?;
                c.expect_keyword("map")?;
                c.expect_sym('=')?;
                let (l0, c0) = c.here();
                let map = c.expr_tuple(VarSpec::t(k))?;
                if map.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "line {l0}, column {c0}: stratum map has {} components but dim = {n}",
                        map.len()
                    )));
                }
                c.expect_sym(';')?;
                c.expect_keyword("parambox")?;
                c.expect_sym('=')?;
                let (l1, c1) = c.here();
                let parambox = c.box_spec()?;
                if parambox.len() != k {
                    return Err(Error::DimensionMismatch(format!(
                        "line {l1}, column {c1}: parambox has {} intervals but k = {k}",
                        parambox.len()
                    )));
                }
                strata.push(Stratum { name, k, map, parambox });
            }
            other => {
                return Err(Error::Syntax { line, col: toks[0].col, msg: format!("unknown statement `{other}`") });
            }
        }
        if !c.at_end() {
            return c.err("trailing input");
        }
    }

    let Some(n) = dim else {
        return Err(Error::Syntax { line: 1, col: 1, msg: "missing `dim` declaration".into() });
    };
    if fields.is_empty() {
        return Err(Error::InvalidStructure("m ≥ 1 required".into()));
    }
    let one = Rat::from_integer(1.into());
    let bbox = bbox.unwrap_or_else(|| vec![(-one.clone(), one.clone()); n]);
    Ok(SRStructure {
        dim: n,
        names,
        fields,
        volume: volume.unwrap_or_else(|| Expr::one(n)),
        bbox,
        probe,
        strata,
        cache: Arc::default(),
    })
}

fn fmt_rat(r: &Rat) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn fmt_box(b: &[(Rat, Rat)]) -> String {
    b.iter().map(|(a, c)| format!("[{},{}]", fmt_rat(a), fmt_rat(c))).collect::<Vec<_>>().join(" x ")
}

impl fmt::Display for SRStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dim = {}", self.dim)?;
        for (name, x) in self.names.iter().zip(&self.fields) {
            writeln!(f, "field {name} = {x}")?;
        }
        writeln!(f, "volume = {}", self.volume)?;
        writeln!(f, "box = {}", fmt_box(&self.bbox))?;
        if let Some(p) = &self.probe {
            writeln!(f, "probe = ({})", p.iter().map(fmt_rat).collect::<Vec<_>>().join(", "))?;
        }
        for s in &self.strata {
            let map: Vec<String> = s.map.iter().map(|e| e.display_with("t")).collect();
            writeln!(
                f,
                "stratum {} : k = {}; map = ({}); parambox = {}",
                s.name,
                s.k,
                map.join(", "),
                fmt_box(&s.parambox)
            )?;
        }
        Ok(())
    }
}

pub const HEISENBERG_SRC: &str = include_str!("../data/heisenberg.srm");
pub const GRUSHIN_SRC: &str = include_str!("../data/grushin.srm");
pub const MARTINET_SRC: &str = include_str!("../data/martinet.srm");

/// One of the bundled structures by name.
pub fn bundled(name: &str) -> Option<SRStructure> {
    let src = match name.trim_end_matches(".srm") {
        "heisenberg" => HEISENBERG_SRC,
        "grushin" => GRUSHIN_SRC,
        "martinet" => MARTINET_SRC,
        _ => return None,
    };
    Some(parse_structure(src).expect("bundled structure parses"))
}

pub fn heisenberg() -> SRStructure {
    bundled("heisenberg").unwrap()
}
pub fn grushin() -> SRStructure {
    bundled("grushin").unwrap()
}
pub fn martinet() -> SRStructure {
    bundled("martinet").unwrap()
}

/// The Euclidean plane as a (trivial) Carnot group.
pub fn euclidean_plane() -> SRStructure {
    parse_structure("dim = 2\nfield X1 = (1, 0)\nfield X2 = (0, 1)\n").unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;

    #[test]
    fn grushin_parses() {
        let g = grushin();
        assert_eq!(g.dim, 2);
        assert_eq!(g.m(), 2);
        assert_eq!(g.fields[1].comp(1), &Expr::var(2, 0));
    }

    #[test]
    fn martinet_component_is_canonical() {
        let m = martinet();
        let want = Expr::monomial(vec![2, 0, 0], rat(1, 2));
        assert_eq!(m.fields[1].comp(2), &want);
        assert_eq!(m.fields[1].comp(2).to_string(), "1/2*x1^2");
    }

    #[test]
    fn empty_family_rejected() {
        let e = parse_structure("dim = 2\nbox = [-1,1] x [-1,1]\n").unwrap_err();
        assert!(e.to_string().contains("m ≥ 1 required"), "{e}");
    }

    #[test]
    fn dimension_mismatch() {
        let e = parse_structure("dim = 3\nfield X1 = (1, 0)\n").unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch(_)), "{e:?}");
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_structure("dim = 2\nfield X1 = (1, 0\n").unwrap_err();
        assert!(matches!(e, Error::Syntax { line: 2, .. }), "{e:?}");
        let e = parse_structure("dim = 2\nfield X1 = (1, x3)\n").unwrap_err();
        assert!(matches!(e, Error::UnknownVariable { line: 2, col: 16, .. }), "{e:?}");
    }

    #[test]
    fn not_bracket_generating_rejected() {
        let e = parse_structure("dim = 2\nfield X1 = (1, 0)\n").unwrap_err();
        assert!(matches!(e, Error::InvalidStructure(_)), "{e:?}");
    }

    #[test]
    fn vanishing_density_rejected() {
        let e = parse_structure("dim = 2\nfield X1 = (1,0)\nfield X2 = (0,1)\nvolume = x1\n").unwrap_err();
        assert!(matches!(e, Error::InvalidStructure(_)), "{e:?}");
    }

    #[test]
    fn round_trip_bundled() {
        for s in [heisenberg(), grushin(), martinet()] {
            let printed = s.to_string();
            let back = parse_structure(&printed).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.to_string(), printed);
        }
    }
}
