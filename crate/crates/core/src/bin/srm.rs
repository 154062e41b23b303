use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use srm_core::blowup::{blowup_experiment, BlowupMeasure, BlowupOptions};
use srm_core::distance::{distance, Budget};
use srm_core::flag::{classify_grid, flag_at_exact_f64, ClassifyOptions, GridSpec};
use srm_core::measures::{
    ball_profile, ball_ratios, covering_dimension, federer_ratio_probe, isodiametric_search, mu_hat_ball, sandwich_check,
    CoveringOptions, IsoOptions, MeasureOptions, SetSpec,
};
use srm_core::nilpotent::nilpotent_at;
use srm_core::popp::{
    integrate_stratum, is_singular, popp_density_at, stratified_measures, stratum_flag, weak_equivalent_check, BracketNorm,
    IntegrationOptions,
};
use srm_core::structure::{bundled, parse_structure, GRUSHIN_SRC, HEISENBERG_SRC, MARTINET_SRC};
use srm_core::{Error, Rat, Result, SRStructure};

#[derive(Parser, Serialize)]
#[command(name = "srm", version, about = "Intrinsic measures on polynomial sub-Riemannian structures")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Effort multiplier for the distance solver (multi-start count).
    #[arg(long, global = true, default_value_t = 1.0)]
    budget: f64,
    /// Write the result and a run manifest into this directory instead of
    /// printing to stdout.
    #[arg(long, global = true)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Serialize)]
struct StructureArg {
    /// Structure file, or the name of a bundled one (heisenberg.srm,
    /// grushin.srm, martinet.srm).
    #[arg(long)]
    structure: String,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Parse and check a structure file.
    Validate {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
    },
    /// Flag, growth vector, Q and regular/singular class at a point.
    Flag {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: String,
    },
    /// Classify a grid over the structure's box.
    Scan {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        /// Points per axis, e.g. 21x21.
        #[arg(long)]
        grid: String,
        /// Region [lo,hi] x …; defaults to the structure's box.
        #[arg(long)]
        region: Option<String>,
    },
    /// Privileged chart and nilpotent approximation at a point.
    Nilpotent {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: String,
    },
    /// Sub-Riemannian distance between two points.
    Dist {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Popp density at a point, integrals over strata, or the weak
    /// equivalence constant on a grid.
    Popp {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: Option<String>,
        #[arg(long, default_value = "exterior")]
        norm: String,
        /// Stratum to integrate over, or `all` for the P_1 / P_2 report.
        #[arg(long)]
        stratum: Option<String>,
        /// Region [lo,hi] x … for --stratum.
        #[arg(long)]
        integrate: Option<String>,
        /// Grid (e.g. 9x9) for the weak equivalence constant ν · dP/dμ.
        #[arg(long)]
        weak_equivalence: Option<String>,
    },
    /// μ̂^p(B̂_p), the spherical density, and small-ball ratios.
    Density {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: String,
        /// Radii for μ(B(p, ε)) / ε^Q.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        directions: usize,
    },
    /// Isodiametric candidates in the tangent cone at a point.
    Isodiametric {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 256)]
        directions: usize,
    },
    /// Ratios S^Q(B(p, ε)) / diam^Q along a schedule.
    Federer {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: String,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        directions: usize,
    },
    /// Measured Gromov–Hausdorff blow-up at a point.
    Blowup {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        #[arg(long)]
        point: String,
        #[arg(long, default_value = "smooth")]
        measure: String,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 256)]
        directions: usize,
        #[arg(long, default_value_t = 24)]
        pairs: usize,
    },
    /// Ball covers against cell covers over a sample of a set.
    Sandwich {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        /// box:[lo,hi]x…, segment:a1,a2;b1,b2 or stratum:name
        #[arg(long)]
        set: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_delimiter = ',')]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// Covering dimension of a set from ε-nets.
    Dimension {
        #[command(flatten)]
        #[serde(flatten)]
        s: StructureArg,
        /// box:[lo,hi]x…, segment:a1,a2;b1,b2 or stratum:name
        #[arg(long)]
        set: String,
        #[arg(long, value_delimiter = ',')]
        scales: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Flag { .. } => "flag",
            Command::Scan { .. } => "scan",
            Command::Nilpotent { .. } => "nilpotent",
            Command::Dist { .. } => "dist",
            Command::Popp { .. } => "popp",
            Command::Density { .. } => "density",
            Command::Isodiametric { .. } => "isodiametric",
            Command::Federer { .. } => "federer",
            Command::Blowup { .. } => "blowup",
            Command::Sandwich { .. } => "sandwich",
            Command::Dimension { .. } => "dimension",
        }
    }

    fn structure(&self) -> &str {
        match self {
            Command::Validate { s }
            | Command::Flag { s, .. }
            | Command::Scan { s, .. }
            | Command::Nilpotent { s, .. }
            | Command::Dist { s, .. }
            | Command::Popp { s, .. }
            | Command::Density { s, .. }
            | Command::Isodiametric { s, .. }
            | Command::Federer { s, .. }
            | Command::Blowup { s, .. }
            | Command::Sandwich { s, .. }
            | Command::Dimension { s, .. } => &s.structure,
        }
    }
}

/// A result: the JSON document and, for tabular results, CSV rows.
struct Output {
    json: Value,
    table: Option<(Vec<String>, Vec<Vec<String>>)>,
}

impl Output {
    fn doc(json: Value) -> Self {
        Output { json, table: None }
    }

    fn table(json: Value, header: &[&str], rows: Vec<Vec<String>>) -> Self {
        Output { json, table: Some((header.iter().map(|s| s.to_string()).collect(), rows)) }
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.json).expect("serializable") + "\n",
            Format::Csv => {
                let (header, rows) = self.table.clone().unwrap_or_else(|| flat_row(&self.json));
                let mut out = header.join(",") + "\n";
                for r in rows {
                    out.push_str(&r.join(","));
                    out.push('\n');
                }
                out
            }
        }
    }
}

/// One CSV row of the scalar (and scalar-array) fields of an object.
fn flat_row(v: &Value) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = Vec::new();
    let mut row = Vec::new();
    if let Value::Object(map) = v {
        for (k, x) in map {
            let cell = match x {
                Value::Array(a) if a.iter().all(|e| !e.is_object() && !e.is_array()) => a.iter().map(scalar).collect::<Vec<_>>().join(";"),
                Value::Object(_) | Value::Array(_) => continue,
                other => scalar(other),
            };
            header.push(k.clone());
            row.push(cell);
        }
    }
    (header, vec![row])
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        Value::from(x).to_string()
    } else {
        format!("{x}")
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse_number(t: &str) -> Result<f64> {
    let t = t.trim();
    if let Some((a, b)) = t.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|_| invalid(format!("bad number `{t}`")))?;
        let b: f64 = b.trim().parse().map_err(|_| invalid(format!("bad number `{t}`")))?;
        return Ok(a / b);
    }
    t.parse().map_err(|_| invalid(format!("bad number `{t}`")))
}

fn parse_point(text: &str, dim: usize) -> Result<Vec<f64>> {
    let p: Vec<f64> = text.split(',').map(parse_number).collect::<Result<_>>()?;
    if p.len() != dim {
        return Err(Error::DimensionMismatch(format!("point `{text}` has {} coordinates, structure dimension is {dim}", p.len())));
    }
    Ok(p)
}

/// "[lo,hi] x [lo,hi] x …".
fn parse_region(text: &str, dim: usize) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in text.split('x') {
        let part = part.trim();
        let inner = part
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| invalid(format!("bad interval `{part}` in region `{text}`")))?;
        let (a, b) = inner.split_once(',').ok_or_else(|| invalid(format!("bad interval `{part}`")))?;
        let (a, b) = (parse_number(a)?, parse_number(b)?);
        if !(a < b) {
            return Err(invalid(format!("empty interval `{part}`")));
        }
        out.push((a, b));
    }
    if out.len() != dim {
        return Err(Error::DimensionMismatch(format!("region `{text}` has {} intervals, expected {dim}", out.len())));
    }
    Ok(out)
}

fn parse_set(text: &str, s: &SRStructure) -> Result<SetSpec> {
    let (kind, rest) = text.split_once(':').ok_or_else(|| invalid(format!("set `{text}` needs a kind: box:, segment: or stratum:")))?;
    match kind {
        "box" => Ok(SetSpec::Box(parse_region(rest, s.dim)?)),
        "segment" => {
            let (a, b) = rest.split_once(';').ok_or_else(|| invalid("segment needs two endpoints separated by ';'"))?;
            Ok(SetSpec::Segment(parse_point(a, s.dim)?, parse_point(b, s.dim)?))
        }
        "stratum" => {
            let (name, sub) = match rest.split_once(':') {
                Some((n, r)) => (n, Some(r)),
                None => (rest, None),
            };
            let st = s.stratum(name).ok_or_else(|| invalid(format!("no stratum named '{name}'")))?;
            let sub = sub.map(|r| parse_region(r, st.k)).transpose()?;
            Ok(SetSpec::Stratum(name.to_string(), sub))
        }
        _ => Err(invalid(format!("unknown set kind `{kind}`"))),
    }
}

/// Structure text from a file, falling back to the bundled structures by
/// file name.
fn load_structure(arg: &str) -> Result<(String, SRStructure)> {
    let path = Path::new(arg);
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or(arg);
            match name.trim_end_matches(".srm") {
                "heisenberg" => HEISENBERG_SRC.to_string(),
                "grushin" => GRUSHIN_SRC.to_string(),
                "martinet" => MARTINET_SRC.to_string(),
                _ => return Err(Error::Io { path: arg.to_string(), msg: e.to_string() }),
            }
        }
    };
    let s = if bundled(arg).is_some() && !path.exists() { bundled(arg).expect("checked") } else { parse_structure(&text)? };
    Ok((text, s))
}

fn measure_options(cli: &Cli, directions: usize) -> MeasureOptions {
    MeasureOptions { directions, budget: Budget::bulk().scaled(cli.budget), seed: cli.seed }
}

fn run(cli: &Cli) -> Result<(Output, String)> {
    let (text, s) = load_structure(cli.command.structure())?;
    let out = match &cli.command {
        Command::Validate { .. } => {
            let probe: Vec<f64> = s.probe_point().iter().map(srm_core::expr::rat_to_f64).collect();
            let f = flag_at_exact_f64(&s, &probe)?;
            Output::doc(json!({
                "valid": true,
                "exact": true,
                "dim": s.dim,
                "fields": s.names.iter().zip(&s.fields).map(|(n, x)| format!("{n} = {x}")).collect::<Vec<_>>(),
                "volume": s.volume.to_string(),
                "box": s.bbox_f64(),
                "strata": s.strata.iter().map(|st| json!({"name": st.name, "k": st.k})).collect::<Vec<_>>(),
                "probe": {"point": probe, "growth": f.growth, "Q": f.q},
            }))
        }
        Command::Flag { point, .. } => {
            let p = parse_point(point, s.dim)?;
            let f = flag_at_exact_f64(&s, &p)?;
            let class = if is_singular(&s, &p, 1e-6)? { "singular" } else { "regular" };
            Output::doc(json!({
                "point": p,
                "exact": true,
                "growth": f.growth,
                "weights": f.weights,
                "Q": f.q,
                "step": f.step,
                "class": class,
                "spanning": f.spanning.iter().map(|l| l.iter().map(|w| w.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            }))
        }
        Command::Scan { grid, region, .. } => {
            let bounds = match region {
                Some(r) => parse_region(r, s.dim)?,
                None => s.bbox_f64(),
            };
            let g = GridSpec::parse(grid, bounds)?;
            let pts = classify_grid(&s, &g, &ClassifyOptions::for_grid(&g, cli.seed))?;
            let mut header: Vec<String> = (1..=s.dim).map(|i| format!("x{i}")).collect();
            header.extend(["growth", "Q", "class"].map(String::from));
            let rows = pts
                .iter()
                .map(|gp| {
                    let mut r: Vec<String> = gp.point.iter().map(|v| num(*v)).collect();
                    r.push(gp.growth.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(";"));
                    r.push(gp.q.to_string());
                    r.push(gp.class.to_string());
                    r
                })
                .collect();
            let json = json!({"exact": true, "points": pts});
            Output { json, table: Some((header, rows)) }
        }
        Command::Nilpotent { point, .. } => {
            let p = parse_point(point, s.dim)?;
            let nil = nilpotent_at(&s, &p)?;
            let mut dsl = format!("dim = {}\n", s.dim);
            for (n, x) in s.names.iter().zip(&nil.fields) {
                let _ = writeln!(dsl, "field {n} = {x}");
            }
            Output::doc(json!({
                "point": p,
                "exact": true,
                "weights": nil.weights,
                "growth": nil.growth,
                "Q": nil.q,
                "frame": nil.frame.words.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
                "chart": {"forward": nil.chart.forward.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
                          "inverse": nil.chart.inverse.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
                          "corrected": nil.chart.corrected},
                "fields": nil.fields_display(),
                "homogeneous": nil.is_homogeneous(),
                "density0": nil.density0,
                "structure": dsl,
            }))
        }
        Command::Dist { from, to, .. } => {
            let a = parse_point(from, s.dim)?;
            let b = parse_point(to, s.dim)?;
            let d = distance(&s, &a, &b, &Budget::default().scaled(cli.budget), cli.seed)?;
            Output::doc(json!({"from": a, "to": b, "value": d.value, "lower": d.lower, "upper": d.upper, "stderr": d.error, "method": d.method}))
        }
        Command::Popp { point, norm, stratum, integrate, weak_equivalence, .. } => {
            let norm: BracketNorm = norm.parse()?;
            if let Some(grid) = weak_equivalence {
                let g = GridSpec::parse(grid, s.bbox_f64())?;
                let pts: Vec<Vec<f64>> = (0..g.len()).map(|i| g.point(i)).collect();
                let w = weak_equivalent_check(&s, &pts, norm)?;
                Output::doc(json!({"exact": true, "weak_equivalence": w}))
            } else if let Some(name) = stratum {
                let region = match integrate {
                    Some(r) => parse_region(r, s.dim)?,
                    None => s.bbox_f64(),
                };
                let opt = IntegrationOptions { norm, seed: cli.seed, ..IntegrationOptions::default() };
                if name == "all" {
                    let strata: Vec<_> = s.strata.iter().collect();
                    let rep = stratified_measures(&s, &strata, &region, &opt)?;
                    let rows = rep
                        .strata
                        .iter()
                        .map(|i| vec![i.name.clone(), i.q_n.to_string(), num(i.estimate.mean), num(i.estimate.stderr), i.divergent.to_string(), i.in_p1.to_string()])
                        .collect();
                    Output::table(serde_json::to_value(&rep).expect("serializable"), &["stratum", "Q_N", "value", "stderr", "divergent", "in_p1"], rows)
                } else {
                    let st = s.stratum(name).ok_or_else(|| invalid(format!("no stratum named '{name}'")))?;
                    let mid: Vec<Rat> = st.parambox.iter().map(|(a, b)| (a + b) / Rat::from_integer(2.into())).collect();
                    let q_n = stratum_flag(&s, st, &mid)?.q_n;
                    let it = integrate_stratum(&s, st, &region, &opt, q_n)?;
                    Output::doc(serde_json::to_value(&it).expect("serializable"))
                }
            } else {
                let p = match point {
                    Some(t) => parse_point(t, s.dim)?,
                    None => return Err(invalid("popp needs --point, --stratum or --weak-equivalence")),
                };
                let d = popp_density_at(&s, &p, norm)?;
                Output::doc(json!({
                    "point": p,
                    "density": d.value,
                    "exact": !d.experimental,
                    "experimental": d.experimental,
                    "norm": d.norm,
                    "frame": d.frame,
                    "omega_frame": d.omega_frame,
                    "det_b": d.det_b,
                }))
            }
        }
        Command::Density { point, eps, directions, .. } => {
            let p = parse_point(point, s.dim)?;
            let opt = measure_options(cli, *directions);
            let mu = mu_hat_ball(&s, &p, &opt)?;
            let c = 2f64.powi(mu.q as i32);
            let m = mu.value.mean;
            let mut json = json!({
                "point": p,
                "Q": mu.q,
                "formal": mu.formal,
                "density0": mu.density0,
                "unit_volume": mu.unit_volume,
                "mu_hat": mu.value,
                "spherical": {"value": c / m, "stderr": c * mu.value.stderr / (m * m)},
            });
            let mut rows = Vec::new();
            if !eps.is_empty() {
                let prof = ball_profile(&s, &p, eps, 1.0, &opt)?;
                let ratios = ball_ratios(&prof);
                rows = ratios.iter().map(|r| vec![num(r.eps), num(r.ratio.mean), num(r.ratio.stderr), num(r.gap.mean), num(r.gap.stderr)]).collect();
                json["ratios"] = serde_json::to_value(&ratios).expect("serializable");
                json["unconverged"] = json!(prof.unconverged);
            }
            if rows.is_empty() {
                Output::doc(json)
            } else {
                Output::table(json, &["eps", "value", "stderr", "gap", "gap_stderr"], rows)
            }
        }
        Command::Isodiametric { point, directions, .. } => {
            let p = parse_point(point, s.dim)?;
            let nil = nilpotent_at(&s, &p)?;
            let opt = IsoOptions { measure: measure_options(cli, *directions), ..IsoOptions::default() };
            let rep = isodiametric_search(&nil, &opt)?;
            let rows = rep
                .candidates
                .iter()
                .map(|c| {
                    let params = c.params.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";");
                    vec![c.family.clone(), params, num(c.ratio), num(c.certified), num(c.volume_ratio.stderr)]
                })
                .collect();
            Output::table(serde_json::to_value(&rep).expect("serializable"), &["family", "params", "value", "certified", "stderr"], rows)
        }
        Command::Federer { point, eps, directions, .. } => {
            let p = parse_point(point, s.dim)?;
            let opt = IsoOptions { measure: measure_options(cli, *directions), ..IsoOptions::default() };
            let curve = federer_ratio_probe(&s, &p, eps, &opt)?;
            let rows = curve.rows.iter().map(|r| vec![num(r.eps), num(r.ball.mean), num(r.ball.stderr)]).collect();
            Output::table(serde_json::to_value(&curve).expect("serializable"), &["eps", "value", "stderr"], rows)
        }
        Command::Blowup { point, measure, radius, eps, directions, pairs, .. } => {
            let p = parse_point(point, s.dim)?;
            let which: BlowupMeasure = measure.parse()?;
            let opt = BlowupOptions {
                measure: measure_options(cli, *directions),
                pairs: *pairs,
                pair_budget: Budget::default().scaled(cli.budget),
                ..BlowupOptions::default()
            };
            let e = blowup_experiment(&s, &p, *radius, eps, &opt)?;
            let rows = e
                .rows
                .iter()
                .map(|r| {
                    let d = if which == BlowupMeasure::Smooth { &r.smooth } else { &r.spherical };
                    vec![num(r.eps), num(r.distortion.value), num(d.value), num(d.stderr)]
                })
                .collect();
            let mut json = serde_json::to_value(&e).expect("serializable");
            json["measure"] = json!(which);
            Output::table(json, &["eps", "distortion", "discrepancy", "stderr"], rows)
        }
        Command::Sandwich { set, alpha, scales, points, .. } => {
            let spec = parse_set(set, &s)?;
            let pts = spec.sample(&s, *points, cli.seed)?;
            let rep = sandwich_check(&s, &pts, *alpha, scales, &Budget::coarse().scaled(cli.budget), cli.seed)?;
            let rows = rep.rows.iter().map(|r| vec![num(r.eps), num(r.spherical), num(r.general), r.holds.to_string()]).collect();
            Output::table(serde_json::to_value(&rep).expect("serializable"), &["eps", "spherical", "general", "holds"], rows)
        }
        Command::Dimension { set, scales, .. } => {
            let spec = parse_set(set, &s)?;
            let opt = CoveringOptions { budget: Budget::coarse().scaled(cli.budget), ..CoveringOptions::default() };
            let rep = covering_dimension(&s, &spec, scales, &opt, cli.seed)?;
            let rows = rep.scales.iter().zip(&rep.counts).map(|(e, c)| vec![num(*e), c.to_string()]).collect();
            Output::table(serde_json::to_value(&rep).expect("serializable"), &["eps", "count"], rows)
        }
    };
    Ok((out, text))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_outputs(cli: &Cli, dir: &Path, body: &str, structure_text: &str) -> Result<()> {
    let io = |p: &Path, e: std::io::Error| Error::Io { path: p.display().to_string(), msg: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let name = match cli.format {
        Format::Json => "result.json",
        Format::Csv => "result.csv",
    };
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    let manifest = json!({
        "tool": "srm",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "parameters": cli,
        "seed": cli.seed,
        "budget": cli.budget,
        "structure": {"source": cli.command.structure(), "sha256": sha256_hex(structure_text.as_bytes())},
        "outputs": [{"file": name, "sha256": sha256_hex(body.as_bytes())}],
    });
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    std::fs::write(&mpath, text).map_err(|e| io(&mpath, e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(out, text)| {
        let body = out.render(cli.format);
        match &cli.out {
            Some(dir) => write_outputs(&cli, dir, &body, &text),
            None => {
                print!("{body}");
                Ok(())
            }
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
