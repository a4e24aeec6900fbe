//! Functional series along trajectories and the discrete audits of the
//! a-priori bounds and differential inequalities.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid::{cell_gradient_sq, face_gradient, FaceVectorField, GridSpec};
use crate::model::{pos_pow, InitialData, ModelParams};
use crate::stepper::{Observer, Sample, SimState};

const BASE_COLUMNS: &[&str] = &[
    "t",
    "dt",
    "mass",
    "l2u",
    "grad4",
    "dirichlet_entropy",
    "ulog",
    "vt_l2",
    "inf_v",
    "sup_v",
    "sup_u",
    "sup_gradv",
    "uv_budget",
    "uv_cum",
    "G",
    "gradv4_v4",
    "v_gradu2",
    "u_gradv4",
    "u2v_gradv2",
    "mom3l",
    "mom4l",
    "ulnu",
    "lnu",
    "dmom3l",
    "dulnu",
    "dlnu",
    "dgrad4",
    "v_int",
];

const P_COLUMNS: &[&str] = &["lp", "lp1", "dlp", "lp_aux", "lp_dissip", "up_grad2"];

fn p_tag(p: f64) -> String {
    format!("{p}")
}

/// Column ids for a given p-list, in CSV order.
pub fn column_ids(plist: &[f64]) -> Vec<String> {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for &p in plist {
        for c in P_COLUMNS {
            cols.push(format!("{c}_{}", p_tag(p)));
        }
    }
    cols
}

/// Time series of functionals, one row per sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSeries {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl FunctionalSeries {
    pub fn new(plist: &[f64]) -> Self {
        Self::with_columns(column_ids(plist))
    }

    pub fn with_columns(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if let Some(&t) = self.rows.last().map(|r| &r[0]) {
            if !(row[0] > t) {
                return Err(Error::Schema(format!(
                    "times not increasing: {} after {t}",
                    row[0]
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| Error::MissingSeries(id.to_string()))
    }

    pub fn column(&self, id: &str) -> Result<Vec<f64>> {
        let k = self.index(id)?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Err(Error::Format("empty CSV".into())),
        };
        let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let mut out = Self::with_columns(columns);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != out.columns.len() {
                return Err(Error::Format(format!(
                    "row {} has {} fields, expected {} (truncated file?)",
                    n + 1,
                    cells.len(),
                    out.columns.len()
                )));
            }
            let row = cells
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::Format(format!("row {}: bad number `{c}`", n + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(row)?;
        }
        Ok(out)
    }

    /// Rejects column drift against `expected` with the difference spelled out.
    pub fn expect_columns(&self, expected: &[String]) -> Result<()> {
        if self.columns == expected {
            return Ok(());
        }
        let missing: Vec<&str> = expected
            .iter()
            .filter(|c| !self.columns.contains(c))
            .map(String::as_str)
            .collect();
        let extra: Vec<&str> = self
            .columns
            .iter()
            .filter(|c| !expected.contains(c))
            .map(String::as_str)
            .collect();
        Err(Error::Schema(format!(
            "columns differ: missing [{}], unexpected [{}]",
            missing.join(","),
            extra.join(",")
        )))
    }
}

/// Which Lyapunov-type functional applies for a given `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GCase {
    /// `1 <= l < 2` or `l > 3`
    Outer,
    /// `2 < l < 3`
    Inner,
    /// `l = 2`
    Entropy,
    /// `l = 3`
    Log,
}

impl GCase {
    pub fn for_l(l: f64) -> Result<Self> {
        if l == 2.0 {
            return Ok(Self::Entropy);
        }
        if l == 3.0 {
            return Ok(Self::Log);
        }
        if (l - 2.0).abs() <= 1e-9 || (l - 3.0).abs() <= 1e-9 {
            return Err(Error::AmbiguousCase(l));
        }
        Ok(if l > 2.0 && l < 3.0 {
            Self::Inner
        } else {
            Self::Outer
        })
    }

    /// Coefficient in front of the population part of `G`.
    fn coefficient(self, l: f64, b: f64) -> f64 {
        match self {
            Self::Outer => 4.0 * b / ((l - 3.0) * (l - 2.0)),
            Self::Inner => -4.0 * b / ((3.0 - l) * (l - 2.0)),
            Self::Entropy => 4.0 * b,
            Self::Log => -4.0 * b,
        }
    }
}

/// `G` for the case selected by `l`.
pub fn eval_g(s: &SimState, l: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "b must be positive, got {b}"
        )));
    }
    let case = GCase::for_l(l)?;
    if let Some((i, j, value)) = s.u.first_nonpositive() {
        return Err(Error::Nonpositive {
            field: "u",
            i,
            j,
            value,
        });
    }
    let da = s.grid().cell_area();
    let gv2 = cell_gradient_sq(&s.v);
    let grad4: f64 = gv2
        .values()
        .iter()
        .zip(s.v.values())
        .map(|(g, v)| g * g / (v * v * v))
        .sum::<f64>()
        * da;
    let part: f64 = match case {
        GCase::Outer | GCase::Inner => s.u.values().iter().map(|u| pos_pow(*u, 3.0 - l)).sum(),
        GCase::Entropy => s.u.values().iter().map(|u| u * u.ln()).sum(),
        GCase::Log => s.u.values().iter().map(|u| u.ln()).sum(),
    };
    Ok(case.coefficient(l, b) * part * da + grad4)
}

/// Per-cell `1/2 sum_faces (grad a)_f (grad b)_f`, the polarization of
/// [`cell_gradient_sq`].
fn cell_gradient_dot(a: &FaceVectorField, b: &FaceVectorField) -> Vec<f64> {
    let g = *a.grid();
    let mut out = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let x = a.x(i, j) * b.x(i, j) + a.x(i + 1, j) * b.x(i + 1, j);
            let y = a.y(i, j) * b.y(i, j) + a.y(i, j + 1) * b.y(i, j + 1);
            out[g.idx(i, j)] = 0.5 * (x + y);
        }
    }
    out
}

/// One series row at a sample. Time derivatives are the exact derivatives of
/// the semi-discrete functionals along the step `(next - state)/dt`.
pub fn eval_functionals(
    smp: &Sample<'_>,
    p: &ModelParams,
    plist: &[f64],
    b: f64,
) -> Result<Vec<f64>> {
    let s = smp.state;
    let n = smp.next;
    let dt = smp.dt;
    let l = p.l;
    let g: GridSpec = *s.grid();
    let da = g.cell_area();
    s.u.check_finite()?;
    s.v.check_finite()?;
    if let Some((i, j, value)) = s.u.first_nonpositive() {
        return Err(Error::Nonpositive {
            field: "u",
            i,
            j,
            value,
        });
    }
    if let Some((i, j, value)) = s.v.first_nonpositive() {
        return Err(Error::Nonpositive {
            field: "v",
            i,
            j,
            value,
        });
    }
    let u = s.u.values();
    let v = s.v.values();
    let ut: Vec<f64> =
        n.u.values()
            .iter()
            .zip(u)
            .map(|(a, b)| (a - b) / dt)
            .collect();
    let vt_field = n.v.zip_map(&s.v, |a, b| (a - b) / dt);
    let vt = vt_field.values();
    let gu2 = cell_gradient_sq(&s.u);
    let gv2 = cell_gradient_sq(&s.v);
    let gv_faces = face_gradient(&s.v);
    let dgv = cell_gradient_dot(&gv_faces, &face_gradient(&vt_field));

    let mut acc = BTreeMap::<&str, f64>::new();
    let mut add = |k: &'static str, x: f64| *acc.entry(k).or_insert(0.0) += x;
    let (mut inf_v, mut sup_v, mut sup_u) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..u.len() {
        let (uk, vk, a, c) = (u[k], v[k], gu2.values()[k], gv2.values()[k]);
        let v3 = vk * vk * vk;
        add("mass", uk);
        add("l2u", uk * uk);
        add("grad4", c * c / v3);
        add("dirichlet_entropy", c / vk);
        add("ulog", uk * uk * (uk + E).ln().powi(2));
        add("vt_l2", vt[k] * vt[k]);
        add("uv_budget", uk * vk);
        add("v_int", vk);
        add("gradv4_v4", c * c / (v3 * vk));
        add("v_gradu2", vk * a);
        add("u_gradv4", uk * c * c / v3);
        add("u2v_gradv2", uk * uk * vk * c);
        add("mom3l", pos_pow(uk, 3.0 - l));
        add("mom4l", pos_pow(uk, 4.0 - l));
        add("ulnu", uk * uk.ln());
        add("lnu", uk.ln());
        add("dmom3l", (3.0 - l) * pos_pow(uk, 2.0 - l) * ut[k]);
        add("dulnu", (1.0 + uk.ln()) * ut[k]);
        add("dlnu", ut[k] / uk);
        add(
            "dgrad4",
            4.0 * c * dgv[k] / v3 - 3.0 * c * c * vt[k] / (v3 * vk),
        );
        inf_v = inf_v.min(vk);
        sup_v = sup_v.max(vk);
        sup_u = sup_u.max(uk);
    }
    let get = |k: &str| acc[k] * da;

    let case = GCase::for_l(l)?;
    let population = match case {
        GCase::Outer | GCase::Inner => get("mom3l"),
        GCase::Entropy => get("ulnu"),
        GCase::Log => get("lnu"),
    };
    let big_g = case.coefficient(l, b) * population + get("grad4");

    let mut row = Vec::with_capacity(BASE_COLUMNS.len() + P_COLUMNS.len() * plist.len());
    row.extend_from_slice(&[
        s.t,
        dt,
        get("mass"),
        get("l2u"),
        get("grad4"),
        get("dirichlet_entropy"),
        get("ulog"),
        get("vt_l2"),
        inf_v,
        sup_v,
        sup_u,
        gv2.max().sqrt(),
        get("uv_budget"),
        smp.consumed,
        big_g,
        get("gradv4_v4"),
        get("v_gradu2"),
        get("u_gradv4"),
        get("u2v_gradv2"),
        get("mom3l"),
        get("mom4l"),
        get("ulnu"),
        get("lnu"),
        get("dmom3l"),
        get("dulnu"),
        get("dlnu"),
        get("dgrad4"),
        get("v_int"),
    ]);
    for &pe in plist {
        let w =
            s.u.zip_map(&s.v, |a, b| pos_pow(a, 0.5 * (l + pe - 1.0)) * b.sqrt());
        let dissip = cell_gradient_sq(&w).sum_integral();
        let (mut lp, mut lp1, mut dlp, mut aux, mut upg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..u.len() {
            let uk = u[k];
            let upm1 = pos_pow(uk, pe - 1.0);
            lp += upm1 * uk;
            lp1 += upm1 * uk * uk;
            dlp += pe * upm1 * ut[k];
            aux += pos_pow(uk, 2.0 * (l + pe - 1.0)) * v[k] * v[k];
            upg += pos_pow(uk, pe + l - 3.0) * gu2.values()[k];
        }
        row.extend_from_slice(&[lp * da, lp1 * da, dlp * da, aux * da, dissip, upg * da]);
    }
    Ok(row)
}

/// Appends one series row per sample.
pub struct SeriesRecorder {
    pub params: ModelParams,
    pub plist: Vec<f64>,
    pub b: f64,
    pub series: FunctionalSeries,
}

impl SeriesRecorder {
    pub fn new(params: ModelParams, plist: &[f64], b: f64) -> Self {
        Self {
            params,
            plist: plist.to_vec(),
            b,
            series: FunctionalSeries::new(plist),
        }
    }
}

impl Observer for SeriesRecorder {
    fn observe(&mut self, s: &Sample<'_>) -> Result<()> {
        let row = eval_functionals(s, &self.params, &self.plist, self.b)?;
        self.series.push(row)
    }
}

/// Named constants of a run plus the audit knobs, stored as `key = value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditConsts(pub BTreeMap<String, f64>);

/// Audit knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditSettings {
    pub b: f64,
    pub c_aux: f64,
    pub c_slack: f64,
    pub rel_tol: f64,
    pub band: f64,
    pub plist: Vec<f64>,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            b: 1.0,
            c_aux: 1.0,
            c_slack: 10.0,
            rel_tol: 1e-6,
            band: 0.25,
            plist: vec![2.0, 3.0, 4.0],
        }
    }
}

impl AuditConsts {
    pub fn for_run(init: &InitialData, p: &ModelParams, t_end: f64, s: &AuditSettings) -> Self {
        let g = init.grid();
        let mut m = BTreeMap::new();
        m.insert("m_star".into(), init.u0.map(|x| x + 1.0).sum_integral());
        m.insert("u0_int".into(), init.u0.sum_integral());
        m.insert("v0_sup".into(), init.v0.max());
        m.insert("v0_int".into(), init.v0.sum_integral());
        m.insert("T".into(), t_end);
        m.insert("area".into(), g.area());
        m.insert("h".into(), g.h_max());
        m.insert("l".into(), p.l);
        m.insert("eps".into(), p.eps);
        m.insert("b".into(), s.b);
        m.insert("c_aux".into(), s.c_aux);
        m.insert("c_slack".into(), s.c_slack);
        m.insert("rel_tol".into(), s.rel_tol);
        m.insert("band".into(), s.band);
        Self(m)
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        match self.0.get(key) {
            Some(v) if v.is_finite() => Ok(*v),
            Some(v) => Err(Error::MissingConstant(format!("{key} is not finite ({v})"))),
            None => Err(Error::MissingConstant(key.to_string())),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            s.push_str(&format!("{k} = {}\n", fmt_f64(*v)));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("constants line {}: expected key = value", n + 1))
            })?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("constants line {}: bad number", n + 1)))?;
            m.insert(k.trim().to_string(), v);
        }
        Ok(Self(m))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditVerdict {
    pub id: String,
    /// Signed worst violation; negative means satisfied.
    pub margin: f64,
    pub tolerance: f64,
    pub constants: Vec<(String, f64)>,
    pub pass: bool,
}

impl AuditVerdict {
    fn new(
        id: impl Into<String>,
        margin: f64,
        tolerance: f64,
        constants: Vec<(&str, f64)>,
    ) -> Self {
        Self {
            id: id.into(),
            margin,
            tolerance,
            constants: constants
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            pass: margin <= tolerance,
        }
    }

    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }
}

/// Text report: one block per verdict and an overall line.
pub fn render_report(verdicts: &[AuditVerdict]) -> String {
    let mut s = String::new();
    for v in verdicts {
        s.push_str(&format!("[{}]\n", v.id));
        s.push_str(&format!("margin = {}\n", fmt_f64(v.margin)));
        s.push_str(&format!("tolerance = {}\n", fmt_f64(v.tolerance)));
        for (k, c) in &v.constants {
            s.push_str(&format!("{k} = {}\n", fmt_f64(*c)));
        }
        s.push_str(if v.pass {
            "status = PASS\n\n"
        } else {
            "status = FAIL\n\n"
        });
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    s.push_str(&format!(
        "overall = {} ({passed}/{} passed)\n",
        if passed == verdicts.len() {
            "PASS"
        } else {
            "FAIL"
        },
        verdicts.len()
    ));
    s
}

/// Trapezoidal rule on a sampled function.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(tw, yw)| 0.5 * (tw[1] - tw[0]) * (yw[0] + yw[1]))
        .sum()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// The four static bounds: `sup v`, mass, the space-time `L^2` budget and
/// the consumption budget.
pub fn audit_static_bounds(
    series: &FunctionalSeries,
    c: &AuditConsts,
) -> Result<Vec<AuditVerdict>> {
    let m_star = c.get("m_star")?;
    let v0_sup = c.get("v0_sup")?;
    let v0_int = c.get("v0_int")?;
    let t_end = c.get("T")?;
    let h = c.get("h")?;
    let rel = c.get("rel_tol")?;
    let slack = c.get("c_slack")? * h * h;
    let t = series.times();
    let tol = |x: f64| rel * x + slack;
    let l2_budget = (t_end + 1.0) * m_star;
    let (sup_v, mass, l2_int, uv_int) = if series.is_empty() {
        (
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        )
    } else {
        (
            max_of(&series.column("sup_v")?),
            max_of(&series.column("mass")?),
            trapezoid(&t, &series.column("l2u")?),
            trapezoid(&t, &series.column("uv_budget")?),
        )
    };
    Ok(vec![
        AuditVerdict::new(
            "static.sup_v",
            sup_v - v0_sup,
            tol(v0_sup),
            vec![("v0_sup", v0_sup)],
        ),
        AuditVerdict::new(
            "static.mass",
            mass - m_star,
            tol(m_star),
            vec![("m_star", m_star)],
        ),
        AuditVerdict::new(
            "static.l2u_time",
            l2_int - l2_budget,
            tol(l2_budget),
            vec![("m_star", m_star), ("T", t_end), ("budget", l2_budget)],
        ),
        AuditVerdict::new(
            "static.uv_time",
            uv_int - v0_int,
            tol(v0_int),
            vec![("v0_int", v0_int)],
        ),
    ])
}

/// Rows with a positive step (all of them for a series written by [`SeriesRecorder`]).
fn stepped_rows(series: &FunctionalSeries) -> Result<Vec<usize>> {
    let dt = series.column("dt")?;
    Ok((0..dt.len()).filter(|&k| dt[k] > 0.0).collect())
}

/// `A` of the `L^p` differential inequality.
pub fn lp_constant(p: f64, l: f64, v0_sup: f64) -> f64 {
    let a1 = 0.5 * (p - 1.0) * p / (l + p - 1.0).powi(2);
    let a2 = 0.5 * (p - 1.0) * p * v0_sup.powf(1.5);
    a1.max(a2)
}

/// Checks the `L^p` differential inequality row by row.
pub fn check_lp_differential_inequality(
    series: &FunctionalSeries,
    p: f64,
    c: &AuditConsts,
) -> Result<AuditVerdict> {
    if !(p >= 2.0) {
        return Err(Error::InvalidParameter(format!("p must be >= 2, got {p}")));
    }
    let l = c.get("l")?;
    let v0_sup = c.get("v0_sup")?;
    let h = c.get("h")?;
    let c_slack = c.get("c_slack")?;
    let tag = p_tag(p);
    let col = |name: &str| series.column(&format!("{name}_{tag}"));
    let (lp, lp1, dlp, aux, dissip) = (
        col("lp")?,
        col("lp1")?,
        col("dlp")?,
        col("lp_aux")?,
        col("lp_dissip")?,
    );
    let grad4 = series.column("grad4")?;
    let w4 = series.column("gradv4_v4")?;
    let dt = series.column("dt")?;
    let a = lp_constant(p, l, v0_sup);
    let k = p * (p - 1.0) / (l + p - 1.0).powi(2);
    let (mut margin, mut scale, mut dt_max) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for n in stepped_rows(series)? {
        let hoelder = a * aux[n].sqrt() * (w4[n].sqrt() + grad4[n].sqrt());
        let lhs = dlp[n] + k * dissip[n];
        let rhs = hoelder + p * lp[n] - p * lp1[n];
        margin = margin.max(lhs - rhs);
        scale = scale.max(dlp[n].abs() + k * dissip[n] + hoelder + p * lp[n] + p * lp1[n]);
        dt_max = dt_max.max(dt[n]);
    }
    let slack = c_slack * (h * h + dt_max) * scale;
    Ok(AuditVerdict::new(
        format!("lp_differential.p={tag}"),
        margin,
        slack,
        vec![
            ("A", a),
            ("v0_sup", v0_sup),
            ("scale", scale),
            ("dt_max", dt_max),
        ],
    ))
}

/// Population part of the `G` dissipation inequality, split so that `c_aux`
/// enters linearly: returns per-row `(lhs, rhs_without_c, scale)`.
fn g_rows(series: &FunctionalSeries, l: f64, b: f64) -> Result<Vec<(f64, f64, f64)>> {
    let case = GCase::for_l(l)?;
    let coef = case.coefficient(l, b);
    let dgrad4 = series.column("dgrad4")?;
    let v_gradu2 = series.column("v_gradu2")?;
    let u_gradv4 = series.column("u_gradv4")?;
    let u2v = series.column("u2v_gradv2")?;
    let mut rows = Vec::new();
    let cols = match case {
        GCase::Outer | GCase::Inner => (
            series.column("dmom3l")?,
            series.column("mom3l")?,
            series.column("mom4l")?,
        ),
        GCase::Entropy => (
            series.column("dulnu")?,
            series.column("ulnu")?,
            series.column("l2u")?,
        ),
        GCase::Log => (
            series.column("dlnu")?,
            series.column("lnu")?,
            series.column("mass")?,
        ),
    };
    let mass = series.column("mass")?;
    for n in stepped_rows(series)? {
        let gprime = coef * cols.0[n] + dgrad4[n];
        let mut lhs = gprime + b * v_gradu2[n] + u_gradv4[n];
        let taxis = 4.0 * b * u2v[n];
        let (rhs, extra) = match case {
            GCase::Outer => {
                let k = 4.0 * b / (l - 2.0);
                (
                    taxis - k * cols.1[n] + k * cols.2[n],
                    k.abs() * (cols.1[n].abs() + cols.2[n].abs()),
                )
            }
            GCase::Inner => {
                let k = 4.0 * b / (l - 2.0);
                (taxis + k * cols.1[n], k.abs() * cols.1[n].abs())
            }
            GCase::Entropy => {
                // l2u carries the extra dissipation 4b int u^2 on the left
                lhs += 4.0 * b * cols.2[n];
                let r = 4.0 * b * (E + 1.0) / E * mass[n] + 4.0 * b * cols.1[n] + taxis;
                (
                    r,
                    4.0 * b * (cols.2[n] + (E + 1.0) / E * mass[n] + cols.1[n].abs()),
                )
            }
            GCase::Log => (taxis + 4.0 * b * mass[n], 4.0 * b * mass[n]),
        };
        let scale = (coef * cols.0[n]).abs()
            + dgrad4[n].abs()
            + b * v_gradu2[n]
            + u_gradv4[n]
            + taxis
            + extra;
        rows.push((lhs, rhs, scale));
    }
    Ok(rows)
}

/// Checks the `G` dissipation inequality with the case-matched right-hand
/// side plus `c_aux |Omega| |v0|_inf`; reports the smallest admissible `c_aux`.
pub fn check_g_dissipation(
    series: &FunctionalSeries,
    c: &AuditConsts,
    b: f64,
    c_aux: f64,
) -> Result<AuditVerdict> {
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "b must be positive, got {b}"
        )));
    }
    let l = c.get("l")?;
    let area = c.get("area")?;
    let v0_sup = c.get("v0_sup")?;
    let h = c.get("h")?;
    let c_slack = c.get("c_slack")?;
    let unit = area * v0_sup;
    let dt = series.column("dt")?;
    let dt_max = stepped_rows(series)?
        .into_iter()
        .map(|n| dt[n])
        .fold(0.0, f64::max);
    let (mut margin, mut scale, mut c_fit) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for (lhs, rhs, sc) in g_rows(series, l, b)? {
        margin = margin.max(lhs - rhs - c_aux * unit);
        c_fit = c_fit.max((lhs - rhs) / unit);
        scale = scale.max(sc);
    }
    let slack = c_slack * (h * h + dt_max) * scale;
    Ok(AuditVerdict::new(
        "g_dissipation",
        margin,
        slack,
        vec![
            ("b", b),
            ("c_aux", c_aux),
            ("c_fit", c_fit),
            ("scale", scale),
            ("dt_max", dt_max),
        ],
    ))
}

/// ε-uniformity of `sup_t` of the audited functionals: relative spread
/// `(max - min)/max` across ε against `band`.
pub fn audit_uniform_in_eps(
    runs: &[(f64, &FunctionalSeries)],
    band: f64,
) -> Result<Vec<AuditVerdict>> {
    if runs.len() < 3 {
        return Err(Error::Precondition(format!(
            "uniform-in-eps audit needs at least 3 eps values, got {}",
            runs.len()
        )));
    }
    let t0 = runs[0].1.times();
    for (eps, s) in runs {
        let t = s.times();
        if t.len() != t0.len() || t.iter().zip(&t0).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::GridMismatch(format!(
                "sample times for eps = {eps} differ"
            )));
        }
    }
    let mut ids: Vec<String> = vec!["grad4".into(), "l2u".into()];
    ids.extend(
        runs[0]
            .1
            .columns()
            .iter()
            .filter(|c| {
                c.starts_with("lp_") && !c.starts_with("lp_aux") && !c.starts_with("lp_dissip")
            })
            .cloned(),
    );
    ids.push("ulog".into());
    ids.push("inv_v".into());
    let mut out = Vec::new();
    for id in ids {
        let mut sups = Vec::new();
        for (_, s) in runs {
            let col = if id == "inv_v" {
                s.column("inf_v")?.into_iter().map(|x| 1.0 / x).collect()
            } else {
                s.column(&id)?
            };
            sups.push(max_of(&col));
        }
        let hi = max_of(&sups);
        let lo = sups.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = if sups.iter().all(|x| x.is_finite()) {
            if hi > 0.0 {
                (hi - lo) / hi
            } else {
                0.0
            }
        } else {
            f64::INFINITY
        };
        let mut consts = vec![("sup_min", lo), ("sup_max", hi)];
        let labels: Vec<String> = runs.iter().map(|(e, _)| format!("sup_eps={e}")).collect();
        for (k, lab) in labels.iter().enumerate() {
            consts.push((lab.as_str(), sups[k]));
        }
        out.push(AuditVerdict::new(
            format!("uniform.{id}"),
            spread,
            band,
            consts,
        ));
    }
    Ok(out)
}

/// Full single-run audit: static bounds, `L^p` checks for `p >= 2` in the
/// p-list, and the `G` dissipation check.
pub fn audit_run(
    series: &FunctionalSeries,
    c: &AuditConsts,
    plist: &[f64],
) -> Result<Vec<AuditVerdict>> {
    let mut out = audit_static_bounds(series, c)?;
    for &p in plist.iter().filter(|p| **p >= 2.0) {
        out.push(check_lp_differential_inequality(series, p, c)?);
    }
    out.push(check_g_dissipation(
        series,
        c,
        c.get("b")?,
        c.get("c_aux")?,
    )?);
    Ok(out)
}
