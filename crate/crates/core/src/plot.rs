//! Plan artifacts on disk: trajectory and tube CSV files, and 2-D scene SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DVector;

use crate::encode::AgentPlan;
use crate::model::MasModel;
use crate::stl::{Formula, FormulaKind, Polarity, Predicate};
use crate::tighten::Tubes;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Writes `t,agent,z0..,v0..` with N+1 rows per agent. The input columns are
/// empty at t=N; agents with fewer coordinates leave trailing cells empty.
pub fn write_trajectory_csv<W: Write>(out: W, plans: &BTreeMap<usize, AgentPlan>) -> Result<(), ArtifactError> {
    let nz = plans.values().filter_map(|p| p.z.first().map(Vec::len)).max().unwrap_or(0);
    let nv = plans.values().filter_map(|p| p.v.first().map(Vec::len)).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((0..nz).map(|d| format!("z{d}")));
    header.extend((0..nv).map(|d| format!("v{d}")));
    w.write_record(&header)?;
    for (id, plan) in plans {
        for (t, z) in plan.z.iter().enumerate() {
            let mut row = vec![t.to_string(), id.to_string()];
            row.extend((0..nz).map(|d| z.get(d).map_or(String::new(), f64::to_string)));
            let v = plan.v.get(t);
            row.extend((0..nv).map(|d| v.and_then(|v| v.get(d)).map_or(String::new(), f64::to_string)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<BTreeMap<usize, AgentPlan>, ArtifactError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let zcols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('z')).collect();
    let vcols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('v')).collect();
    if header.get(0) != Some("t") || header.get(1) != Some("agent") {
        return Err(ArtifactError::Format {
            line: 1,
            message: "expected header starting with t,agent".into(),
        });
    }
    let mut plans: BTreeMap<usize, AgentPlan> = BTreeMap::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let bad = |message: String| ArtifactError::Format { line, message };
        let int = |i: usize| -> Result<usize, ArtifactError> {
            rec[i].parse().map_err(|_| bad(format!("bad integer `{}`", &rec[i])))
        };
        let cells = |cols: &[usize]| -> Result<Vec<f64>, ArtifactError> {
            cols.iter()
                .filter(|&&i| !rec[i].is_empty())
                .map(|&i| rec[i].parse().map_err(|_| bad(format!("bad number `{}`", &rec[i]))))
                .collect()
        };
        let (t, id) = (int(0)?, int(1)?);
        let plan = plans.entry(id).or_insert(AgentPlan { z: vec![], v: vec![] });
        if t != plan.z.len() {
            return Err(bad(format!("agent {id}: expected t={}, found {t}", plan.z.len())));
        }
        plan.z.push(cells(&zcols)?);
        let v = cells(&vcols)?;
        if !v.is_empty() {
            plan.v.push(v);
        }
    }
    Ok(plans)
}

/// Number of vertices per tube cross-section polygon.
pub const TUBE_VERTICES: usize = 64;

/// Cross-section of z_i(t) ⊕ E_i(t) projected onto `dims`, as support points
/// in evenly spaced directions of the plotting plane.
pub fn tube_polygon(tubes: &Tubes, agent: usize, t: usize, center: &[f64], dims: [usize; 2]) -> Vec<[f64; 2]> {
    let set = &tubes.agent(agent)[t];
    (0..TUBE_VERTICES)
        .map(|k| {
            let th = k as f64 * std::f64::consts::TAU / TUBE_VERTICES as f64;
            let mut a = DVector::zeros(set.dim());
            a[dims[0]] = th.cos();
            a[dims[1]] = th.sin();
            let p = set.support_point(&a);
            [center[dims[0]] + p[dims[0]], center[dims[1]] + p[dims[1]]]
        })
        .collect()
}

/// `t,agent,vertex,x,y` rows for every tube polygon along the plans.
pub fn write_tube_csv<W: Write>(
    out: W,
    tubes: &Tubes,
    plans: &BTreeMap<usize, AgentPlan>,
    dims: [usize; 2],
) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "agent", "vertex", "x", "y"])?;
    for (id, plan) in plans {
        for (t, z) in plan.z.iter().enumerate() {
            for (k, p) in tube_polygon(tubes, *id, t, z, dims).iter().enumerate() {
                w.write_record([t.to_string(), id.to_string(), k.to_string(), p[0].to_string(), p[1].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Half-plane `a·p + b >= 0` in plot coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane {
    pub a: [f64; 2],
    pub b: f64,
}

impl HalfPlane {
    fn eval(&self, p: [f64; 2]) -> f64 {
        self.a[0] * p[0] + self.a[1] * p[1] + self.b
    }
}

/// Sutherland-Hodgman clipping of a convex or concave polygon by a half-plane.
pub fn clip(poly: &[[f64; 2]], h: HalfPlane) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (fp, fq) = (h.eval(p), h.eval(q));
        if fp >= 0.0 {
            out.push(p);
        }
        if (fp >= 0.0) != (fq >= 0.0) {
            let s = fp / (fp - fq);
            out.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
        }
    }
    out
}

pub fn rectangle(ws: [f64; 4]) -> Vec<[f64; 2]> {
    vec![[ws[0], ws[2]], [ws[1], ws[2]], [ws[1], ws[3]], [ws[0], ws[3]]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    /// Conjunction of positive literals: the set the agent has to reach or stay in.
    Goal,
    /// Disjunction of negated literals: the set the agent has to avoid.
    Obstacle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub agent: usize,
    pub kind: RegionKind,
    pub halfplanes: Vec<HalfPlane>,
}

impl Region {
    pub fn polygon(&self, workspace: [f64; 4]) -> Vec<[f64; 2]> {
        self.halfplanes
            .iter()
            .fold(rectangle(workspace), |poly, h| if poly.is_empty() { poly } else { clip(&poly, *h) })
    }
}

fn halfplane(p: &Predicate, dims: [usize; 2]) -> Option<(usize, HalfPlane)> {
    let agents = p.agents();
    if agents.len() != 1 {
        return None;
    }
    let mut a = [0.0; 2];
    for (s, c) in &p.coeffs {
        let slot = dims.iter().position(|&d| d == s.dim)?;
        a[slot] = *c;
    }
    Some((agents[0], HalfPlane { a, b: p.offset }))
}

fn literal_group(fs: &[Formula], polarity: Polarity, dims: [usize; 2]) -> Option<(usize, Vec<HalfPlane>)> {
    let mut agent = None;
    let mut hs = Vec::new();
    for f in fs {
        let FormulaKind::Pred(p) = f.kind() else { return None };
        if p.polarity != polarity {
            return None;
        }
        let (id, h) = halfplane(p, dims)?;
        if agent.is_some_and(|a| a != id) {
            return None;
        }
        agent = Some(id);
        hs.push(h);
    }
    Some((agent?, hs))
}

/// Goal and obstacle regions appearing in an NNF formula, in preorder.
/// Groups touching coordinates outside `dims` or several agents are skipped.
pub fn collect_regions(f: &Formula, dims: [usize; 2]) -> Vec<Region> {
    fn walk(f: &Formula, dims: [usize; 2], out: &mut Vec<Region>) {
        let found = match f.kind() {
            FormulaKind::And(fs) if fs.len() > 1 => literal_group(fs, Polarity::Positive, dims).map(|g| (RegionKind::Goal, g)),
            FormulaKind::Or(fs) if fs.len() > 1 => literal_group(fs, Polarity::Negated, dims).map(|g| (RegionKind::Obstacle, g)),
            _ => None,
        };
        match found {
            Some((kind, (agent, halfplanes))) => {
                let r = Region { agent, kind, halfplanes };
                if !out.contains(&r) {
                    out.push(r);
                }
            }
            None => {
                for c in f.children() {
                    walk(c, dims, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(f, dims, &mut out);
    out
}

/// Everything drawn in one scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub workspace: [f64; 4],
    pub dims: [usize; 2],
    pub original: Vec<Region>,
    pub tightened: Vec<Region>,
    pub plans: BTreeMap<usize, AgentPlan>,
    /// Per agent, one polygon per time step.
    pub tubes: BTreeMap<usize, Vec<Vec<[f64; 2]>>>,
}

/// Workspace default: the union of the agents' state boxes, otherwise the
/// bounding box of the plans padded by 1, otherwise [-5, 5]².
pub fn default_workspace(model: &MasModel, plans: &BTreeMap<usize, AgentPlan>, dims: [usize; 2]) -> [f64; 4] {
    let mut ws = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut widen = |x: f64, y: f64| {
        ws[0] = ws[0].min(x);
        ws[1] = ws[1].max(x);
        ws[2] = ws[2].min(y);
        ws[3] = ws[3].max(y);
    };
    let boxed: Vec<_> = model
        .agents()
        .iter()
        .filter_map(|a| Some((a.state_lo.as_ref()?, a.state_hi.as_ref()?)))
        .filter(|(lo, _)| lo.len() > dims[0].max(dims[1]))
        .collect();
    if !boxed.is_empty() {
        for (lo, hi) in boxed {
            widen(lo[dims[0]], lo[dims[1]]);
            widen(hi[dims[0]], hi[dims[1]]);
        }
    } else {
        for plan in plans.values() {
            for z in &plan.z {
                if z.len() > dims[0].max(dims[1]) {
                    widen(z[dims[0]], z[dims[1]]);
                }
            }
        }
        if ws[0].is_finite() {
            ws = [ws[0] - 1.0, ws[1] + 1.0, ws[2] - 1.0, ws[3] + 1.0];
        }
    }
    if !ws.iter().all(|v| v.is_finite()) || ws[0] >= ws[1] || ws[2] >= ws[3] {
        return [-5.0, 5.0, -5.0, 5.0];
    }
    ws
}

const WIDTH: f64 = 600.0;
const MARGIN: f64 = 20.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

impl Scene {
    fn scale(&self) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.workspace;
        let s = (WIDTH - 2.0 * MARGIN) / (x1 - x0).max(y1 - y0);
        let h = (y1 - y0) * s + 2.0 * MARGIN;
        (s, h)
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let (s, h) = self.scale();
        (MARGIN + (p[0] - self.workspace[0]) * s, h - MARGIN - (p[1] - self.workspace[2]) * s)
    }

    fn points(&self, poly: &[[f64; 2]]) -> String {
        let mut out = String::new();
        for (i, p) in poly.iter().enumerate() {
            let (x, y) = self.px(*p);
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{x:.3},{y:.3}");
        }
        out
    }

    /// Renders the scene; identical scenes give identical bytes.
    pub fn to_svg(&self) -> String {
        let (_, height) = self.scale();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
        );
        let ws = self.points(&rectangle(self.workspace));
        let _ = writeln!(s, r##"<polygon class="workspace" points="{ws}" fill="#ffffff" stroke="#000000" stroke-width="1"/>"##);
        for (class, regions, dash) in [("tightened", &self.tightened, " stroke-dasharray=\"4 3\""), ("original", &self.original, "")] {
            for r in regions {
                let poly = r.polygon(self.workspace);
                if poly.len() < 3 {
                    continue;
                }
                let (kind, fill) = match r.kind {
                    RegionKind::Goal => ("goal", "#2ca02c"),
                    RegionKind::Obstacle => ("obstacle", "#444444"),
                };
                let opacity = if class == "original" { 0.35 } else { 0.1 };
                let _ = writeln!(
                    s,
                    r##"<polygon class="{class} {kind}" data-agent="{}" points="{}" fill="{fill}" fill-opacity="{opacity}" stroke="{fill}"{dash}/>"##,
                    r.agent,
                    self.points(&poly)
                );
            }
        }
        for (k, (id, polys)) in self.tubes.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            for (t, poly) in polys.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<polygon class="tube" data-agent="{id}" data-t="{t}" points="{}" fill="{color}" fill-opacity="0.08" stroke="none"/>"#,
                    self.points(poly)
                );
            }
        }
        for (k, (id, plan)) in self.plans.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<[f64; 2]> = plan.z.iter().map(|z| [z[self.dims[0]], z[self.dims[1]]]).collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<polyline class="trajectory" data-agent="{id}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                self.points(&pts)
            );
            let (x, y) = self.px(pts[0]);
            let _ = writeln!(s, r#"<circle class="start" data-agent="{id}" cx="{x:.3}" cy="{y:.3}" r="3" fill="{color}"/>"#);
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Assembles a scene from the original and tightened specifications.
pub fn build_scene(
    model: &MasModel,
    original: &Formula,
    tightened: &Formula,
    plans: &BTreeMap<usize, AgentPlan>,
    tubes: Option<&Tubes>,
    dims: [usize; 2],
    workspace: Option<[f64; 4]>,
) -> Scene {
    let workspace = workspace.unwrap_or_else(|| default_workspace(model, plans, dims));
    let mut tube_polys = BTreeMap::new();
    if let Some(tubes) = tubes {
        for (id, plan) in plans {
            let polys = plan
                .z
                .iter()
                .enumerate()
                .filter(|(t, _)| *t <= tubes.horizon())
                .map(|(t, z)| tube_polygon(tubes, *id, t, z, dims))
                .collect();
            tube_polys.insert(*id, polys);
        }
    }
    Scene {
        workspace,
        dims,
        original: collect_regions(original, dims),
        tightened: collect_regions(tightened, dims),
        plans: plans.clone(),
        tubes: tube_polys,
    }
}
