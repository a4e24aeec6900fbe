//! Weak-formulation residuals against a bank of test functions, and the
//! ε / mesh convergence study.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audit::{audit_uniform_in_eps, AuditVerdict, FunctionalSeries, SeriesRecorder};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid::{GridSpec, ScalarField};
use crate::model::{InitSpec, InitialData, ModelParams, TaxisScheme};
use crate::stepper::{run, uniform_times, StepControl, TrajectoryRecorder};

/// Spatial factor of a test function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Spatial {
    Constant,
    /// `exp(-|x - c|^2 / r^2)`
    Bump {
        cx: f64,
        cy: f64,
        r: f64,
    },
}

/// Temporal factor, vanishing for `t >= t_cut`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Temporal {
    /// `exp(1 - 1/(1 - (t/t_cut)^2))`
    Smooth { t_cut: f64 },
    /// `(1 - t/t_cut)^2`; its derivative is piecewise linear, so trapezoidal
    /// time quadrature of it is exact when `t_cut` is a sample time.
    Quadratic { t_cut: f64 },
}

impl Temporal {
    pub fn t_cut(&self) -> f64 {
        match *self {
            Temporal::Smooth { t_cut } | Temporal::Quadratic { t_cut } => t_cut,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let tc = self.t_cut();
        if t >= tc {
            return 0.0;
        }
        let s = t / tc;
        match self {
            Temporal::Smooth { .. } => (1.0 - 1.0 / (1.0 - s * s)).exp(),
            Temporal::Quadratic { .. } => (1.0 - s).powi(2),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let tc = self.t_cut();
        if t >= tc {
            return 0.0;
        }
        let s = t / tc;
        match self {
            Temporal::Smooth { .. } => {
                let q = 1.0 - s * s;
                self.value(t) * (-2.0 * s / tc) / (q * q)
            }
            Temporal::Quadratic { .. } => -2.0 * (1.0 - s) / tc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestFunction {
    pub spatial: Spatial,
    pub temporal: Temporal,
}

impl TestFunction {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self.spatial {
            Spatial::Constant => 1.0,
            Spatial::Bump { cx, cy, r } => (-((x - cx).powi(2) + (y - cy).powi(2)) / (r * r)).exp(),
        }
    }

    /// Analytic spatial gradient.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match self.spatial {
            Spatial::Constant => (0.0, 0.0),
            Spatial::Bump { cx, cy, r } => {
                let f = self.value(x, y);
                let k = -2.0 / (r * r);
                (k * (x - cx) * f, k * (y - cy) * f)
            }
        }
    }

    pub fn sampled(&self, g: GridSpec) -> ScalarField {
        ScalarField::from_fn(g, |x, y| self.value(x, y))
    }

    /// Analytic gradient at interior face centres: `(x-faces, y-faces)` in
    /// the face-field layout, boundary faces zero.
    fn face_gradients(&self, g: &GridSpec) -> (Vec<f64>, Vec<f64>) {
        let (hx, hy) = (g.hx(), g.hy());
        let mut fx = vec![0.0; (g.nx + 1) * g.ny];
        let mut fy = vec![0.0; g.nx * (g.ny + 1)];
        for j in 0..g.ny {
            for i in 1..g.nx {
                fx[j * (g.nx + 1) + i] = self.gradient(i as f64 * hx, (j as f64 + 0.5) * hy).0;
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                fy[j * g.nx + i] = self.gradient((i as f64 + 0.5) * hx, j as f64 * hy).1;
            }
        }
        (fx, fy)
    }

    /// Deterministic bank: one spatially constant member followed by
    /// `n - 1` bumps with seeded centres and radii, all sharing `temporal`.
    pub fn bank(seed: u64, n: usize, lx: f64, ly: f64, temporal: Temporal) -> Vec<TestFunction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![TestFunction {
            spatial: Spatial::Constant,
            temporal,
        }];
        let m = lx.min(ly);
        while out.len() < n {
            let cx = rng.gen_range(0.2..0.8) * lx;
            let cy = rng.gen_range(0.2..0.8) * ly;
            let r = rng.gen_range(0.15..0.35) * m;
            out.push(TestFunction {
                spatial: Spatial::Bump { cx, cy, r },
                temporal,
            });
        }
        out
    }
}

/// Sampled solution together with its unregularized initial data.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub l: f64,
    pub u0: ScalarField,
    pub v0: ScalarField,
    pub times: Vec<f64>,
    pub u: Vec<ScalarField>,
    pub v: Vec<ScalarField>,
}

impl Trajectory {
    pub fn new(
        l: f64,
        u0: ScalarField,
        v0: ScalarField,
        times: Vec<f64>,
        u: Vec<ScalarField>,
        v: Vec<ScalarField>,
    ) -> Result<Self> {
        if times.len() != u.len() || times.len() != v.len() {
            return Err(Error::InvalidParameter(
                "trajectory arrays differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "trajectory times must increase".into(),
            ));
        }
        for f in u.iter().chain(v.iter()).chain([&u0, &v0]) {
            f.grid().ensure_same(u0.grid())?;
        }
        for f in u.iter().chain([&u0]) {
            let (i, j, m) = f.argmin();
            if m < 0.0 {
                return Err(Error::InadmissibleData(format!(
                    "u = {m} < 0 at cell ({i},{j})"
                )));
            }
        }
        Ok(Self {
            l,
            u0,
            v0,
            times,
            u,
            v,
        })
    }

    pub fn from_recorder(init: &InitialData, l: f64, rec: TrajectoryRecorder) -> Result<Self> {
        Self::new(l, init.u0.clone(), init.v0.clone(), rec.times, rec.u, rec.v)
    }

    pub fn grid(&self) -> &GridSpec {
        self.u0.grid()
    }
}

/// Trapezoidal weights on the sample times.
pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = 0.5 * (t[k + 1] - t[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

fn check_support(tr: &Trajectory, tf: &TestFunction) -> Result<bool> {
    let tc = tf.temporal.t_cut();
    if tc == 0.0 {
        return Ok(false);
    }
    let last = *tr
        .times
        .last()
        .ok_or_else(|| Error::Precondition("empty trajectory".into()))?;
    if !(tc > 0.0) || tc > last {
        return Err(Error::Precondition(format!(
            "test function support [0, {tc}) exceeds the sampled interval [0, {last}]"
        )));
    }
    let inside = tr.times.iter().filter(|t| **t < tc).count();
    if inside < 50 {
        return Err(Error::Precondition(format!(
            "only {inside} samples inside the test-function support (need 50)"
        )));
    }
    Ok(true)
}

fn cell_pair(a: &[f64], b: &[f64], da: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * da
}

/// `sum_faces coef_f (grad f)_f (grad phi)_f * hx hy` over interior faces,
/// with `coef_f` built from the two adjacent cells.
fn face_pairing(
    g: &GridSpec,
    f: &[f64],
    coef: impl Fn(usize, usize) -> f64,
    gx: &[f64],
    gy: &[f64],
) -> f64 {
    let (hx, hy) = (g.hx(), g.hy());
    let mut s = 0.0;
    for j in 0..g.ny {
        for i in 1..g.nx {
            let (a, b) = (j * g.nx + i - 1, j * g.nx + i);
            s += coef(a, b) * (f[b] - f[a]) / hx * gx[j * (g.nx + 1) + i];
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            let (a, b) = ((j - 1) * g.nx + i, j * g.nx + i);
            s += coef(a, b) * (f[b] - f[a]) / hy * gy[j * g.nx + i];
        }
    }
    s * g.cell_area()
}

/// Residual of the u-equation in weak form:
/// `-∫∫ u phi_t - ∫ u0 phi(0) + (1/l)∫∫ v grad u^l . grad phi
///  - ∫∫ u^l v grad v . grad phi - ∫∫ (u - u^2) phi`.
pub fn residual_u(tr: &Trajectory, tf: &TestFunction) -> Result<f64> {
    if !check_support(tr, tf)? {
        return Ok(0.0);
    }
    let g = *tr.grid();
    let da = g.cell_area();
    let l = tr.l;
    let phi = tf.sampled(g);
    let (gx, gy) = tf.face_gradients(&g);
    let w = trapezoid_weights(&tr.times);
    let mut total = -tf.temporal.value(0.0) * cell_pair(tr.u0.values(), phi.values(), da);
    for (n, &t) in tr.times.iter().enumerate() {
        let (chi, dchi) = (tf.temporal.value(t), tf.temporal.derivative(t));
        if chi == 0.0 && dchi == 0.0 {
            continue;
        }
        let u = tr.u[n].values();
        let v = tr.v[n].values();
        let ul: Vec<f64> = u.iter().map(|x| x.powf(l)).collect();
        let diffusion = face_pairing(&g, &ul, |a, b| 0.5 * (v[a] + v[b]), &gx, &gy) / l;
        let taxis = face_pairing(
            &g,
            v,
            |a, b| 0.25 * (ul[a] + ul[b]) * (v[a] + v[b]),
            &gx,
            &gy,
        );
        let logistic: f64 = u
            .iter()
            .zip(phi.values())
            .map(|(x, p)| (x - x * x) * p)
            .sum::<f64>()
            * da;
        total +=
            w[n] * (-dchi * cell_pair(u, phi.values(), da) + chi * (diffusion - taxis - logistic));
    }
    Ok(total.abs())
}

/// Residual of the v-equation in weak form:
/// `∫∫ v phi_t + ∫ v0 phi(0) - ∫∫ grad v . grad phi - ∫∫ u v phi`.
pub fn residual_v(tr: &Trajectory, tf: &TestFunction) -> Result<f64> {
    if !check_support(tr, tf)? {
        return Ok(0.0);
    }
    let g = *tr.grid();
    let da = g.cell_area();
    let phi = tf.sampled(g);
    let (gx, gy) = tf.face_gradients(&g);
    let w = trapezoid_weights(&tr.times);
    let mut total = tf.temporal.value(0.0) * cell_pair(tr.v0.values(), phi.values(), da);
    for (n, &t) in tr.times.iter().enumerate() {
        let (chi, dchi) = (tf.temporal.value(t), tf.temporal.derivative(t));
        if chi == 0.0 && dchi == 0.0 {
            continue;
        }
        let u = tr.u[n].values();
        let v = tr.v[n].values();
        let dirichlet = face_pairing(&g, v, |_, _| 1.0, &gx, &gy);
        let consumption: f64 = u
            .iter()
            .zip(v)
            .zip(phi.values())
            .map(|((a, b), p)| a * b * p)
            .sum::<f64>()
            * da;
        total += w[n] * (dchi * cell_pair(v, phi.values(), da) - chi * (dirichlet + consumption));
    }
    Ok(total.abs())
}

/// The residuals for a spatially constant test function computed from the
/// series budgets alone: `∫u`, `∫u^2`, `∫v`, `∫uv` and the integrals of the data.
pub fn budget_residuals(
    series: &FunctionalSeries,
    u0_int: f64,
    v0_int: f64,
    temporal: &Temporal,
) -> Result<(f64, f64)> {
    let t = series.times();
    let v_int = series.column("v_int")?;
    let mass = series.column("mass")?;
    let l2u = series.column("l2u")?;
    let uv = series.column("uv_budget")?;
    let w = trapezoid_weights(&t);
    let mut ru = -temporal.value(0.0) * u0_int;
    let mut rv = temporal.value(0.0) * v0_int;
    for n in 0..t.len() {
        let (chi, dchi) = (temporal.value(t[n]), temporal.derivative(t[n]));
        ru += w[n] * (-dchi * mass[n] - chi * (mass[n] - l2u[n]));
        rv += w[n] * (dchi * v_int[n] - chi * uv[n]);
    }
    Ok((ru.abs(), rv.abs()))
}

/// Inputs of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub lx: f64,
    pub ly: f64,
    pub l: f64,
    pub taxis: TaxisScheme,
    pub init_u: InitSpec,
    pub init_v: InitSpec,
    pub t_end: f64,
    pub eps_list: Vec<f64>,
    /// Cells per direction, refining.
    pub grid_list: Vec<usize>,
    /// Sample count on the coarsest grid; scaled with the refinement ratio.
    pub samples: usize,
    /// Lower end of the Cauchy-difference window (default `T/10`).
    pub tau: Option<f64>,
    pub band: f64,
    pub bank_size: usize,
    pub bank_seed: u64,
    pub plist: Vec<f64>,
    pub b: f64,
    /// Step control on the coarsest grid. `dt_max` shrinks with the square
    /// of the mesh ratio on finer grids, so dt refines together with h.
    pub control: StepControl,
    pub jobs: usize,
}

impl StudyConfig {
    fn validate(&self) -> Result<()> {
        if self.eps_list.len() < 3 || self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Precondition(
                "eps list must hold at least 3 strictly decreasing values".into(),
            ));
        }
        if self.grid_list.len() < 3 || self.grid_list.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition(
                "grid list must hold at least 3 strictly refining grids".into(),
            ));
        }
        if self.bank_size < 5 {
            return Err(Error::Precondition(
                "test-function bank needs at least 5 members".into(),
            ));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter("T must be positive".into()));
        }
        Ok(())
    }

    fn samples_for(&self, m: usize) -> usize {
        self.samples * self.grid_list[m] / self.grid_list[0]
    }
}

/// Outcome of one `(eps, grid)` member run.
#[derive(Clone, Debug)]
pub enum Cell {
    Done {
        steps: usize,
        residual_u: Vec<f64>,
        residual_v: Vec<f64>,
        series: FunctionalSeries,
    },
    Failed(String),
}

impl Cell {
    pub fn residual_sums(&self) -> Option<(f64, f64)> {
        match self {
            Cell::Done {
                residual_u,
                residual_v,
                ..
            } => Some((residual_u.iter().sum(), residual_v.iter().sum())),
            Cell::Failed(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub eps_list: Vec<f64>,
    pub grid_list: Vec<usize>,
    /// `cells[i][m]` for `eps_list[i]`, `grid_list[m]`.
    pub cells: Vec<Vec<Cell>>,
    pub tau: f64,
    /// `sup_{t >= tau} max |u_{eps_i} - u_{eps_(i+1)}|` on the finest grid
    /// (`NaN` when either run failed).
    pub cauchy: Vec<f64>,
    /// Bank-summed residuals along the diagonal `(eps_k, grid_k)`.
    pub diagonal_u: Vec<f64>,
    pub diagonal_v: Vec<f64>,
    pub uniform: std::result::Result<Vec<AuditVerdict>, String>,
}

impl ConvergenceReport {
    pub fn cauchy_decreasing(&self) -> bool {
        self.cauchy.iter().all(|x| x.is_finite()) && self.cauchy.windows(2).all(|w| w[1] < w[0])
    }

    /// Each refinement step cuts both residuals by at least `factor`.
    pub fn residuals_decrease(&self, factor: f64) -> bool {
        let ok = |r: &[f64]| {
            r.iter().all(|x| x.is_finite()) && r.windows(2).all(|w| w[1] * factor <= w[0])
        };
        ok(&self.diagonal_u) && ok(&self.diagonal_v)
    }

    pub fn uniform_pass(&self) -> bool {
        matches!(&self.uniform, Ok(v) if v.iter().all(|x| x.pass))
    }

    pub fn any_failed(&self) -> bool {
        self.cells
            .iter()
            .flatten()
            .any(|c| matches!(c, Cell::Failed(_)))
    }

    /// Gate for the convergence verdict; the uniform-in-eps audit is
    /// reported alongside but does not gate.
    pub fn passed(&self, factor: f64) -> bool {
        !self.any_failed() && self.cauchy_decreasing() && self.residuals_decrease(factor)
    }

    pub fn cauchy_csv(&self) -> String {
        let mut s = String::from("eps_a,eps_b,sup_diff\n");
        for (k, d) in self.cauchy.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_f64(self.eps_list[k]),
                fmt_f64(self.eps_list[k + 1]),
                fmt_f64(*d)
            );
        }
        s
    }

    pub fn residual_csv(&self) -> String {
        let mut s = String::from("eps,grid,status,residual_u,residual_v\n");
        for (i, row) in self.cells.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                let (status, ru, rv) = match c.residual_sums() {
                    Some((a, b)) => ("ok", a, b),
                    None => ("failed", f64::NAN, f64::NAN),
                };
                let _ = writeln!(
                    s,
                    "{},{},{status},{},{}",
                    fmt_f64(self.eps_list[i]),
                    self.grid_list[m],
                    fmt_f64(ru),
                    fmt_f64(rv)
                );
            }
        }
        s
    }

    pub fn summary(&self, factor: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tau = {}", fmt_f64(self.tau));
        for (i, row) in self.cells.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                if let Cell::Failed(msg) = c {
                    let _ = writeln!(s, "cell eps{i}_grid{m} failed: {msg}");
                }
            }
        }
        let _ = writeln!(s, "cauchy = [{}]", join(&self.cauchy));
        let _ = writeln!(s, "cauchy_decreasing = {}", self.cauchy_decreasing());
        let _ = writeln!(s, "diagonal_residual_u = [{}]", join(&self.diagonal_u));
        let _ = writeln!(s, "diagonal_residual_v = [{}]", join(&self.diagonal_v));
        let _ = writeln!(s, "residual_factor = {}", fmt_f64(factor));
        let _ = writeln!(
            s,
            "residuals_decrease = {}",
            self.residuals_decrease(factor)
        );
        let _ = writeln!(s, "[uniform-in-eps, reported only]");
        match &self.uniform {
            Ok(v) => {
                for x in v {
                    let _ = writeln!(
                        s,
                        "{} spread = {} band = {} {}",
                        x.id,
                        fmt_f64(x.margin),
                        fmt_f64(x.tolerance),
                        if x.pass { "PASS" } else { "FAIL" }
                    );
                }
            }
            Err(e) => {
                let _ = writeln!(s, "uniform audit unavailable: {e}");
            }
        }
        let _ = writeln!(s, "[verdict]");
        let _ = writeln!(
            s,
            "status = {}",
            if self.passed(factor) { "PASS" } else { "FAIL" }
        );
        s
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| fmt_f64(*x))
        .collect::<Vec<_>>()
        .join(", ")
}

struct MemberRun {
    cell: Cell,
    trajectory: Option<Trajectory>,
}

fn run_member(cfg: &StudyConfig, i: usize, m: usize, dir: Option<&Path>) -> MemberRun {
    let attempt = || -> Result<(Cell, Trajectory, ScalarField, ScalarField)> {
        let n = cfg.grid_list[m];
        let g = GridSpec::new(n, n, cfg.lx, cfg.ly)?;
        let init = InitialData::new(cfg.init_u.build(g)?, cfg.init_v.build(g)?, cfg.l)?;
        let p = ModelParams::new(cfg.l, cfg.eps_list[i])?.with_taxis(cfg.taxis);
        let times = uniform_times(cfg.t_end, cfg.samples_for(m));
        let mut control = cfg.control;
        let shrink = (cfg.grid_list[0] as f64 / n as f64).powi(2);
        control.dt_max *= shrink;
        control.dt_min = control.dt_min.min(control.dt_max);
        let mut series = SeriesRecorder::new(p, &cfg.plist, cfg.b);
        let mut traj = TrajectoryRecorder::default();
        let out = run(
            &p,
            &init,
            cfg.t_end,
            &times,
            &control,
            &mut [&mut series, &mut traj],
        )?;
        let tr = Trajectory::from_recorder(&init, cfg.l, traj)?;
        let bank = TestFunction::bank(
            cfg.bank_seed,
            cfg.bank_size,
            cfg.lx,
            cfg.ly,
            Temporal::Smooth { t_cut: cfg.t_end },
        );
        let ru = bank
            .iter()
            .map(|tf| residual_u(&tr, tf))
            .collect::<Result<Vec<_>>>()?;
        let rv = bank
            .iter()
            .map(|tf| residual_v(&tr, tf))
            .collect::<Result<Vec<_>>>()?;
        let cell = Cell::Done {
            steps: out.steps,
            residual_u: ru,
            residual_v: rv,
            series: series.series,
        };
        Ok((cell, tr, out.final_state.u, out.final_state.v))
    };
    match attempt() {
        Ok((cell, tr, uf, vf)) => {
            if let (Some(dir), Cell::Done { series, .. }) = (dir, &cell) {
                if let Err(e) = persist(dir, i, m, series, &uf, &vf, cfg.t_end) {
                    return MemberRun {
                        cell: Cell::Failed(e.to_string()),
                        trajectory: None,
                    };
                }
            }
            MemberRun {
                cell,
                trajectory: Some(tr),
            }
        }
        Err(e) => MemberRun {
            cell: Cell::Failed(e.to_string()),
            trajectory: None,
        },
    }
}

fn persist(
    dir: &Path,
    i: usize,
    m: usize,
    series: &FunctionalSeries,
    u: &ScalarField,
    v: &ScalarField,
    t: f64,
) -> Result<()> {
    let d: PathBuf = dir.join(format!("eps{i}_grid{m}"));
    std::fs::create_dir_all(&d)?;
    let f = std::fs::File::create(d.join("series.csv"))?;
    series.write_csv(std::io::BufWriter::new(f))?;
    crate::snapshot::save(&d.join("u_final.dgt"), u, t)?;
    crate::snapshot::save(&d.join("v_final.dgt"), v, t)?;
    Ok(())
}

/// Runs the `(eps, grid)` matrix and assembles the report. Member runs
/// execute on a pool of `cfg.jobs` threads; when `dir` is given each member
/// persists its series and final snapshots under `dir/eps<k>_grid<m>/`.
pub fn run_convergence_study(cfg: &StudyConfig, dir: Option<&Path>) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let tau = cfg.tau.unwrap_or(cfg.t_end / 10.0);
    let ne = cfg.eps_list.len();
    let ng = cfg.grid_list.len();
    let jobs: Vec<(usize, usize)> = (0..ne).flat_map(|i| (0..ng).map(move |m| (i, m))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let mut members: Vec<MemberRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, m)| run_member(cfg, i, m, dir))
            .collect()
    });

    let finest = ng - 1;
    let mut cauchy = Vec::new();
    for i in 0..ne - 1 {
        let a = &members[i * ng + finest].trajectory;
        let b = &members[(i + 1) * ng + finest].trajectory;
        let d = match (a, b) {
            (Some(a), Some(b)) => {
                let mut worst = 0.0f64;
                for (n, &t) in a.times.iter().enumerate() {
                    if t >= tau {
                        let diff = a.u[n]
                            .values()
                            .iter()
                            .zip(b.u[n].values())
                            .map(|(x, y)| (x - y).abs())
                            .fold(0.0, f64::max);
                        worst = worst.max(diff);
                    }
                }
                worst
            }
            _ => f64::NAN,
        };
        cauchy.push(d);
    }
    let diag = ne.min(ng);
    let mut diagonal_u = Vec::new();
    let mut diagonal_v = Vec::new();
    for k in 0..diag {
        let (ru, rv) = members[k * ng + k]
            .cell
            .residual_sums()
            .unwrap_or((f64::NAN, f64::NAN));
        diagonal_u.push(ru);
        diagonal_v.push(rv);
    }
    let finest_series: Vec<(f64, &FunctionalSeries)> = (0..ne)
        .filter_map(|i| match &members[i * ng + finest].cell {
            Cell::Done { series, .. } => Some((cfg.eps_list[i], series)),
            Cell::Failed(_) => None,
        })
        .collect();
    let uniform = audit_uniform_in_eps(&finest_series, cfg.band).map_err(|e| e.to_string());

    let mut cells = Vec::with_capacity(ne);
    let mut it = members.drain(..);
    for _ in 0..ne {
        cells.push(
            (0..ng)
                .map(|_| it.next().expect("member per cell").cell)
                .collect(),
        );
    }
    Ok(ConvergenceReport {
        eps_list: cfg.eps_list.clone(),
        grid_list: cfg.grid_list.clone(),
        cells,
        tau,
        cauchy,
        diagonal_u,
        diagonal_v,
        uniform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::AuditConsts;

    fn unit(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    #[test]
    fn temporal_profiles() {
        let s = Temporal::Smooth { t_cut: 2.0 };
        assert_eq!(s.value(0.0), 1.0);
        assert_eq!(s.value(2.0), 0.0);
        assert_eq!(s.value(3.0), 0.0);
        for &t in &[0.1, 0.7, 1.5, 1.9] {
            let h = 1e-6;
            let fd = (s.value(t + h) - s.value(t - h)) / (2.0 * h);
            assert!((fd - s.derivative(t)).abs() <= 1e-6 * fd.abs().max(1.0));
        }
        let q = Temporal::Quadratic { t_cut: 1.0 };
        assert_eq!(q.value(0.0), 1.0);
        assert_eq!(q.derivative(0.5), -1.0);
    }

    #[test]
    fn gradient_consistency_on_the_bank() {
        let bank = TestFunction::bank(3, 6, 1.0, 1.0, Temporal::Smooth { t_cut: 1.0 });
        assert_eq!(bank.len(), 6);
        let mut errs = Vec::new();
        for n in [32, 64] {
            let g = unit(n);
            let mut worst = 0.0f64;
            for tf in &bank {
                let sampled = crate::grid::face_gradient(&tf.sampled(g));
                let (gx, _) = tf.face_gradients(&g);
                for (a, b) in sampled.x_faces().iter().zip(&gx) {
                    worst = worst.max((a - b).abs());
                }
            }
            errs.push(worst);
        }
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
        assert!(errs[1] <= 50.0 * (1.0 / 64.0f64).powi(2));
    }

    #[test]
    fn bank_is_deterministic() {
        let a = TestFunction::bank(9, 5, 2.0, 1.0, Temporal::Smooth { t_cut: 1.0 });
        let b = TestFunction::bank(9, 5, 2.0, 1.0, Temporal::Smooth { t_cut: 1.0 });
        assert_eq!(a, b);
        assert_eq!(a[0].spatial, Spatial::Constant);
    }

    fn constant_trajectory(u: f64, v: f64, n: usize, t_end: f64) -> Trajectory {
        let g = unit(8);
        let times = uniform_times(t_end, n);
        let us = vec![ScalarField::constant(g, u); times.len()];
        let vs = vec![ScalarField::constant(g, v); times.len()];
        Trajectory::new(
            2.0,
            ScalarField::constant(g, u),
            ScalarField::constant(g, v),
            times,
            us,
            vs,
        )
        .unwrap()
    }

    #[test]
    fn discrete_witnesses_have_zero_residual() {
        let tf = TestFunction {
            spatial: Spatial::Constant,
            temporal: Temporal::Quadratic { t_cut: 1.0 },
        };
        let tr = constant_trajectory(1.0, 0.7, 60, 1.0);
        assert!(residual_u(&tr, &tf).unwrap() <= 1e-14);
        let tr = constant_trajectory(0.0, 0.7, 60, 1.0);
        assert!(residual_v(&tr, &tf).unwrap() <= 1e-14);
        assert!(residual_u(&tr, &tf).unwrap() <= 1e-14);
    }

    #[test]
    fn zero_duration_and_support_checks() {
        let tr = constant_trajectory(1.0, 1.0, 60, 1.0);
        let zero = TestFunction {
            spatial: Spatial::Constant,
            temporal: Temporal::Smooth { t_cut: 0.0 },
        };
        assert_eq!(residual_u(&tr, &zero).unwrap(), 0.0);
        assert_eq!(residual_v(&tr, &zero).unwrap(), 0.0);
        let long = TestFunction {
            spatial: Spatial::Constant,
            temporal: Temporal::Smooth { t_cut: 1.5 },
        };
        assert!(matches!(
            residual_u(&tr, &long),
            Err(Error::Precondition(_))
        ));
        let sparse = constant_trajectory(1.0, 1.0, 20, 1.0);
        let tf = TestFunction {
            spatial: Spatial::Constant,
            temporal: Temporal::Smooth { t_cut: 1.0 },
        };
        assert!(matches!(
            residual_v(&sparse, &tf),
            Err(Error::Precondition(_))
        ));
    }

    fn recorded(
        init: &InitialData,
        p: &ModelParams,
        t_end: f64,
        n: usize,
        c: &StepControl,
    ) -> (Trajectory, FunctionalSeries) {
        let mut traj = TrajectoryRecorder::default();
        let mut series = SeriesRecorder::new(*p, &[2.0], 1.0);
        run(
            p,
            init,
            t_end,
            &uniform_times(t_end, n),
            c,
            &mut [&mut series, &mut traj],
        )
        .unwrap();
        (
            Trajectory::from_recorder(init, p.l, traj).unwrap(),
            series.series,
        )
    }

    #[test]
    fn homogeneous_logistic_residual() {
        let g = unit(8);
        let eps = 0.01;
        let init = InitialData::new(
            ScalarField::constant(g, 0.5),
            ScalarField::constant(g, 1.0),
            2.0,
        )
        .unwrap();
        let p = ModelParams::new(2.0, eps).unwrap();
        let (mut tr, _) = recorded(&init, &p, 1.0, 400, &StepControl::fixed(1e-4));
        // pair against the data actually integrated
        tr.u0 = init.regularized_u0(eps);
        let tf = TestFunction {
            spatial: Spatial::Constant,
            temporal: Temporal::Smooth { t_cut: 1.0 },
        };
        assert!(residual_u(&tr, &tf).unwrap() <= 1e-4);
    }

    #[test]
    fn heat_equation_limit() {
        let g = unit(32);
        let u0 = ScalarField::constant(g, 0.0);
        let v0 = ScalarField::from_fn(g, |x, y| {
            1.0 + 0.5 * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
        });
        let init = InitialData::new(u0, v0, 2.0).unwrap();
        let p = ModelParams::new(2.0, 1e-12).unwrap();
        let (tr, _) = recorded(&init, &p, 0.2, 400, &StepControl::fixed(1e-4));
        for tf in TestFunction::bank(1, 5, 1.0, 1.0, Temporal::Smooth { t_cut: 0.2 }) {
            let r = residual_v(&tr, &tf).unwrap();
            assert!(r <= 1e-4, "{tf:?}: {r}");
        }
    }

    #[test]
    fn constant_test_function_matches_budgets() {
        let g = unit(16);
        let u0 = ScalarField::from_fn(g, |x, y| {
            0.5 + (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.02).exp()
        });
        let v0 = ScalarField::from_fn(g, |x, _| 0.6 + 0.3 * x);
        let init = InitialData::new(u0, v0, 2.0).unwrap();
        let p = ModelParams::new(2.0, 0.01).unwrap();
        let (tr, series) = recorded(&init, &p, 0.2, 60, &StepControl::default());
        let temporal = Temporal::Smooth { t_cut: 0.2 };
        let tf = TestFunction {
            spatial: Spatial::Constant,
            temporal,
        };
        let consts = AuditConsts::for_run(&init, &p, 0.2, &Default::default());
        let (bu, bv) = budget_residuals(
            &series,
            consts.get("u0_int").unwrap(),
            consts.get("v0_int").unwrap(),
            &temporal,
        )
        .unwrap();
        let (ru, rv) = (residual_u(&tr, &tf).unwrap(), residual_v(&tr, &tf).unwrap());
        let scale = consts.get("m_star").unwrap() + consts.get("v0_int").unwrap();
        assert!((ru - bu).abs() <= 1e-8 * scale, "{ru} {bu}");
        assert!((rv - bv).abs() <= 1e-8 * scale, "{rv} {bv}");
    }

    fn study(init_u: InitSpec, init_v: InitSpec, grids: Vec<usize>) -> StudyConfig {
        StudyConfig {
            lx: 1.0,
            ly: 1.0,
            l: 2.0,
            taxis: TaxisScheme::Hybrid,
            init_u,
            init_v,
            t_end: 0.1,
            eps_list: vec![0.1, 0.01, 0.001],
            grid_list: grids,
            samples: 50,
            tau: None,
            band: 0.25,
            bank_size: 5,
            bank_seed: 1,
            plist: vec![2.0, 4.0],
            b: 1.0,
            control: StepControl::default(),
            jobs: 1,
        }
    }

    #[test]
    fn study_preconditions() {
        let cfg = study(InitSpec::Constant(0.5), InitSpec::Constant(1.0), vec![8]);
        assert!(matches!(
            run_convergence_study(&cfg, None),
            Err(Error::Precondition(_))
        ));
        let mut cfg = study(
            InitSpec::Constant(0.5),
            InitSpec::Constant(1.0),
            vec![8, 12, 16],
        );
        cfg.eps_list = vec![0.01, 0.1, 0.001];
        assert!(run_convergence_study(&cfg, None).is_err());
    }

    #[test]
    fn homogeneous_study_tracks_eps_shift() {
        let mut cfg = study(
            InitSpec::Constant(0.5),
            InitSpec::Constant(1.0),
            vec![8, 16, 32],
        );
        cfg.control.dt_max = 1e-3;
        let rep = run_convergence_study(&cfg, None).unwrap();
        assert!(!rep.any_failed());
        assert!(rep.residuals_decrease(2.0), "{}", rep.summary(2.0));
        assert!(rep.passed(2.0));
        assert!(rep.cauchy_decreasing());
        // logistic flow contracts differences: |du(t)| <= |d eps| for u < 1
        for (k, d) in rep.cauchy.iter().enumerate() {
            let de = cfg.eps_list[k] - cfg.eps_list[k + 1];
            assert!(*d <= de && *d >= 0.5 * de, "{d} vs {de}");
        }
        assert!(rep.summary(2.0).contains("cauchy_decreasing = true"));
        assert_eq!(rep.residual_csv().lines().count(), 1 + 9);
    }

    #[test]
    fn failing_member_is_marked() {
        let mut cfg = study(
            InitSpec::Constant(0.5),
            InitSpec::Constant(1.0),
            vec![8, 12, 16],
        );
        cfg.init_v = InitSpec::File("/nonexistent/v.dgt".into());
        let rep = run_convergence_study(&cfg, None).unwrap();
        assert!(rep.any_failed());
        assert!(!rep.passed(2.0));
        assert!(rep.summary(2.0).contains("failed"));
    }
}
