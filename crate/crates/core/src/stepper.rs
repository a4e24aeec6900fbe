//! Semi-implicit time stepping.
//!
//! `u` is advanced explicitly; `v` is advanced implicitly through the
//! M-matrix `I - dt lap_h + dt diag(u)`, solved by Jacobi-preconditioned CG.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::{cell_gradient_sq, GridSpec, ScalarField};
use crate::model::{pos_pow, rhs_u_unchecked, InitialData, ModelParams};

#[derive(Clone, Debug)]
pub struct SimState {
    pub u: ScalarField,
    pub v: ScalarField,
    pub t: f64,
}

impl SimState {
    pub fn new(u: ScalarField, v: ScalarField, t: f64) -> Result<Self> {
        u.grid().ensure_same(v.grid())?;
        Ok(Self { u, v, t })
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub cfl: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub blowup_threshold: f64,
    pub cg_tol: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            cfl: 0.4,
            dt_min: 1e-12,
            dt_max: 1e-2,
            blowup_threshold: 1e8,
            cg_tol: 1e-10,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cfl must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < dt_min <= dt_max, got {} and {}",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.blowup_threshold > 0.0) || !(self.cg_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "blow-up threshold and CG tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Fixed step: `dt_min = dt_max = dt` with the CFL bound ignored.
    pub fn fixed(dt: f64) -> Self {
        Self {
            cfl: 1.0,
            dt_min: dt,
            dt_max: dt,
            ..Self::default()
        }
    }
}

/// Largest explicit step allowed by diffusion, taxis and reaction,
/// scaled by `cfl` and clamped into `[dt_min, dt_max]`.
pub fn stable_dt(s: &SimState, p: &ModelParams, c: &StepControl) -> f64 {
    if c.dt_min == c.dt_max {
        return c.dt_min;
    }
    let g = s.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let u = s.u.values();
    let v = s.v.values();
    let mut a_max = 0.0f64;
    let mut u_max = 0.0f64;
    let mut diff = Vec::with_capacity(u.len());
    for k in 0..u.len() {
        let a = pos_pow(u[k].max(0.0), p.l - 1.0) * v[k];
        a_max = a_max.max(a);
        u_max = u_max.max(u[k]);
        diff.push(a);
    }
    // taxis speed per axis: max over faces of u^(l-1) v |grad v|, the
    // derivative of the taxis flux w.r.t. u up to the factor l
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if i + 1 < g.nx {
                let gv = ((v[k + 1] - v[k]) / hx).abs();
                sx = sx.max(p.l * diff[k].max(diff[k + 1]) * gv);
            }
            if j + 1 < g.ny {
                let gv = ((v[k + g.nx] - v[k]) / hy).abs();
                sy = sy.max(p.l * diff[k].max(diff[k + g.nx]) * gv);
            }
        }
    }
    let mut dt = f64::INFINITY;
    if a_max > 0.0 {
        dt = dt.min(1.0 / (2.0 * a_max * (1.0 / (hx * hx) + 1.0 / (hy * hy))));
    }
    let speed = sx / hx + sy / hy;
    if speed > 0.0 {
        dt = dt.min(1.0 / (2.0 * speed));
    }
    dt = dt.min(1.0 / (2.0 * u_max.max(1.0)));
    (c.cfl * dt).clamp(c.dt_min, c.dt_max)
}

/// Optional source terms added to both equations (manufactured solutions).
/// `su` is evaluated at `t_n`, `sv` at `t_{n+1}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sources<'a> {
    pub su: Option<&'a ScalarField>,
    pub sv: Option<&'a ScalarField>,
}

/// One step of size `dt`.
pub fn step(s: &SimState, dt: f64, p: &ModelParams, c: &StepControl) -> Result<SimState> {
    step_with_sources(s, dt, p, c, Sources::default())
}

pub fn step_with_sources(
    s: &SimState,
    dt: f64,
    p: &ModelParams,
    c: &StepControl,
    src: Sources<'_>,
) -> Result<SimState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let g = *s.grid();
    let t_new = s.t + dt;
    if let Some((i, j, value)) = s.u.first_nonpositive() {
        return Err(Error::PositivityViolation {
            i,
            j,
            value,
            t: s.t,
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
    let ru = rhs_u_unchecked(&s.u, &s.v, p);
    let mut un = s.u.values().to_vec();
    for (k, x) in un.iter_mut().enumerate() {
        *x += dt * ru.values()[k];
        if let Some(su) = src.su {
            *x += dt * su.values()[k];
        }
    }
    let mut max_u = f64::NEG_INFINITY;
    for (k, x) in un.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                i: k % g.nx,
                j: k / g.nx,
                value: *x,
            });
        }
        max_u = max_u.max(*x);
    }
    if let Some(k) = un.iter().position(|x| *x <= 0.0) {
        return Err(Error::PositivityViolation {
            i: k % g.nx,
            j: k / g.nx,
            value: un[k],
            t: t_new,
        });
    }
    if max_u > c.blowup_threshold {
        return Err(Error::BlowupThreshold {
            max_u,
            threshold: c.blowup_threshold,
            t: t_new,
        });
    }

    let mut rhs = s.v.values().to_vec();
    if let Some(sv) = src.sv {
        for (r, x) in rhs.iter_mut().zip(sv.values()) {
            *r += dt * x;
        }
    }
    let vn = solve_v(&g, s.u.values(), &rhs, s.v.values(), dt, c.cg_tol)?;
    if let Some(k) = vn.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::Nonpositive {
            field: "v",
            i: k % g.nx,
            j: k / g.nx,
            value: vn[k],
        });
    }
    Ok(SimState {
        u: ScalarField::from_vec_unchecked(g, un)?,
        v: ScalarField::from_vec_unchecked(g, vn)?,
        t: t_new,
    })
}

/// `y = (I - dt lap_h + dt diag(u)) x`.
fn apply(g: &GridSpec, u: &[f64], dt: f64, x: &[f64], y: &mut [f64]) {
    let (cx, cy) = (dt / (g.hx() * g.hx()), dt / (g.hy() * g.hy()));
    let nx = g.nx;
    for j in 0..g.ny {
        for i in 0..nx {
            let k = j * nx + i;
            let xc = x[k];
            let mut acc = xc + dt * u[k] * xc;
            if i > 0 {
                acc += cx * (xc - x[k - 1]);
            }
            if i + 1 < nx {
                acc += cx * (xc - x[k + 1]);
            }
            if j > 0 {
                acc += cy * (xc - x[k - nx]);
            }
            if j + 1 < g.ny {
                acc += cy * (xc - x[k + nx]);
            }
            y[k] = acc;
        }
    }
}

fn diagonal(g: &GridSpec, u: &[f64], dt: f64) -> Vec<f64> {
    let (cx, cy) = (dt / (g.hx() * g.hx()), dt / (g.hy() * g.hy()));
    let mut d = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let nbx = (i > 0) as u8 + (i + 1 < g.nx) as u8;
            let nby = (j > 0) as u8 + (j + 1 < g.ny) as u8;
            let k = g.idx(i, j);
            d[k] = 1.0 + dt * u[k] + cx * nbx as f64 + cy * nby as f64;
        }
    }
    d
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG on the implicit v-system, started from `guess`.
fn solve_v(
    g: &GridSpec,
    u: &[f64],
    b: &[f64],
    guess: &[f64],
    dt: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = g.len();
    let max_iter = (10.0 * (n as f64).sqrt()).ceil() as usize;
    let diag = diagonal(g, u, dt);
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = guess.to_vec();
    let mut r = vec![0.0; n];
    apply(g, u, dt, &x, &mut r);
    for k in 0..n {
        r[k] = b[k] - r[k];
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut pdir = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::SolverStagnation {
                iterations: it,
                residual: res,
            });
        }
        apply(g, u, dt, &pdir, &mut q);
        let alpha = rz / dot(&pdir, &q);
        for k in 0..n {
            x[k] += alpha * pdir[k];
            r[k] -= alpha * q[k];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            pdir[k] = z[k] + beta * pdir[k];
        }
        it += 1;
    }
    Ok(x)
}

/// What an observer sees at a sample time: the state, the step taken from
/// it (a probe step at the final time) and the exact discrete consumption
/// `sum dt_n int u_n v_(n+1)` accumulated up to `state.t`.
pub struct Sample<'a> {
    pub index: usize,
    pub step: usize,
    pub state: &'a SimState,
    pub next: &'a SimState,
    pub dt: f64,
    pub consumed: f64,
}

pub trait Observer {
    fn observe(&mut self, s: &Sample<'_>) -> Result<()>;
}

impl<F: FnMut(&Sample<'_>) -> Result<()>> Observer for F {
    fn observe(&mut self, s: &Sample<'_>) -> Result<()> {
        self(s)
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: usize,
    pub samples: usize,
    pub final_state: SimState,
    pub consumed: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// `n + 1` equispaced sample times on `[0, t_end]`.
pub fn uniform_times(t_end: f64, n: usize) -> Vec<f64> {
    if n == 0 || t_end == 0.0 {
        return vec![0.0];
    }
    (0..=n)
        .map(|k| {
            if k == n {
                t_end
            } else {
                t_end * k as f64 / n as f64
            }
        })
        .collect()
}

/// Integrates from `u0 + eps`, `v0` to `t_end`, landing exactly on each
/// sample time and notifying every observer there.
pub fn run(
    p: &ModelParams,
    init: &InitialData,
    t_end: f64,
    sample_times: &[f64],
    c: &StepControl,
    observers: &mut [&mut dyn Observer],
) -> Result<RunSummary> {
    c.validate()?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "T must be >= 0, got {t_end}"
        )));
    }
    for w in sample_times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!(
                "sample times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if let (Some(first), Some(last)) = (sample_times.first(), sample_times.last()) {
        if *first < 0.0 || *last > t_end {
            return Err(Error::InvalidParameter(format!(
                "sample times must lie in [0, {t_end}]"
            )));
        }
    }
    let mut s = SimState::new(init.regularized_u0(p.eps), init.v0.clone(), 0.0)?;
    let mut k = 0;
    let mut steps = 0;
    let mut consumed = 0.0;
    let (mut min_dt, mut max_dt) = (f64::INFINITY, 0.0f64);
    loop {
        let sample_now = k < sample_times.len() && sample_times[k] == s.t;
        let done = s.t >= t_end;
        if done && !sample_now {
            break;
        }
        let stop = if sample_now {
            sample_times.get(k + 1).copied().unwrap_or(t_end)
        } else {
            sample_times.get(k).copied().unwrap_or(t_end)
        };
        let mut dt = stable_dt(&s, p, c);
        let mut land = false;
        if !done && s.t + dt >= stop {
            dt = stop - s.t;
            land = true;
        }
        let mut next = step(&s, dt, p, c)?;
        if land {
            next.t = stop;
        }
        if sample_now {
            let sample = Sample {
                index: k,
                step: steps,
                state: &s,
                next: &next,
                dt,
                consumed,
            };
            for o in observers.iter_mut() {
                o.observe(&sample)?;
            }
            k += 1;
        }
        if done {
            break;
        }
        consumed += dt * s.u.zip_map(&next.v, |a, b| a * b).sum_integral();
        min_dt = min_dt.min(dt);
        max_dt = max_dt.max(dt);
        s = next;
        steps += 1;
    }
    Ok(RunSummary {
        steps,
        samples: k,
        final_state: s,
        consumed,
        min_dt,
        max_dt,
    })
}

/// Stores the sampled states in memory.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryRecorder {
    pub times: Vec<f64>,
    pub u: Vec<ScalarField>,
    pub v: Vec<ScalarField>,
}

impl Observer for TrajectoryRecorder {
    fn observe(&mut self, s: &Sample<'_>) -> Result<()> {
        self.times.push(s.state.t);
        self.u.push(s.state.u.clone());
        self.v.push(s.state.v.clone());
        Ok(())
    }
}

/// Writes `u_%06d.dgt` / `v_%06d.dgt` at each sample into `dir`.
pub struct SnapshotWriter {
    pub dir: PathBuf,
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, s: &Sample<'_>) -> Result<()> {
        let name = |f: &str| self.dir.join(format!("{f}_{:06}.dgt", s.index));
        crate::snapshot::save(&name("u"), &s.state.u, s.state.t)?;
        crate::snapshot::save(&name("v"), &s.state.v, s.state.t)?;
        Ok(())
    }
}

/// Largest cell value of `|grad f|`.
pub fn sup_gradient(f: &ScalarField) -> f64 {
    cell_gradient_sq(f).max().sqrt()
}
