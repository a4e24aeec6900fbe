//! Right-hand sides of the regularized doubly degenerate nutrient-taxis
//! system and admissibility checks for its initial data.
//!
//! ```text
//! u_t = div(u^(l-1) v grad u) - div(u^l v grad v) + u - u^2
//! v_t = lap v - u v
//! ```
//!
//! with homogeneous Neumann data and `u(0) = u0 + eps`.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::{divergence, neumann_laplacian, FaceVectorField, GridSpec, ScalarField};
use crate::lab::FieldSampler;

/// How the taxis coefficient `u^l` is carried to a face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TaxisScheme {
    /// Always take `u^l` from the upwind cell w.r.t. `grad v`.
    Upwind,
    /// Arithmetic face mean while the face Peclet test holds, upwind otherwise.
    #[default]
    Hybrid,
}

impl std::str::FromStr for TaxisScheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "upwind" => Ok(Self::Upwind),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!(
                "unknown taxis scheme `{other}` (expected upwind|hybrid)"
            )),
        }
    }
}

impl std::fmt::Display for TaxisScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Upwind => "upwind",
            Self::Hybrid => "hybrid",
        })
    }
}

/// Degeneracy exponent `l >= 1` and regularization level `0 < eps <= 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub l: f64,
    pub eps: f64,
    pub taxis: TaxisScheme,
}

impl ModelParams {
    pub fn new(l: f64, eps: f64) -> Result<Self> {
        if !(l.is_finite() && l >= 1.0) {
            return Err(Error::InvalidParameter(format!("l must be >= 1, got {l}")));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must lie in (0, 1], got {eps}"
            )));
        }
        Ok(Self {
            l,
            eps,
            taxis: TaxisScheme::default(),
        })
    }

    pub fn with_taxis(mut self, taxis: TaxisScheme) -> Self {
        self.taxis = taxis;
        self
    }
}

/// `x^e` for `x > 0`. Integer exponents take the exact `powi` path;
/// the rest go through `exp(e ln x)`.
#[inline]
pub fn pos_pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else if e.fract() == 0.0 && e.abs() <= 16.0 {
        x.powi(e as i32)
    } else {
        (e * x.ln()).exp()
    }
}

/// Admissibility class of `u0` as a function of `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmissibilityClass {
    Below3,
    Equal3,
    Above3,
}

impl AdmissibilityClass {
    pub fn for_l(l: f64) -> Self {
        if l == 3.0 {
            Self::Equal3
        } else if l < 3.0 {
            Self::Below3
        } else {
            Self::Above3
        }
    }
}

impl std::fmt::Display for AdmissibilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Below3 => "l<3",
            Self::Equal3 => "l=3",
            Self::Above3 => "l>3",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub class: AdmissibilityClass,
    pub min_u0: f64,
    pub min_v0: f64,
    /// `integrate(ln u0)`, present when `l = 3`.
    pub ln_integral: Option<f64>,
    /// `integrate(u0^(3-l))`, present when `l > 3`.
    pub moment_integral: Option<f64>,
    pub flags: Vec<String>,
}

/// Checks `u0 >= 0`, `v0 > 0` and the class-specific integrability condition.
pub fn validate_initial_data(
    u0: &ScalarField,
    v0: &ScalarField,
    l: f64,
) -> Result<AdmissibilityReport> {
    u0.grid().ensure_same(v0.grid())?;
    u0.check_finite()?;
    v0.check_finite()?;
    let (ui, uj, min_u0) = u0.argmin();
    if min_u0 < 0.0 {
        return Err(Error::InadmissibleData(format!(
            "u0 = {min_u0} < 0 at cell ({ui},{uj})"
        )));
    }
    let (vi, vj, min_v0) = v0.argmin();
    if !(min_v0 > 0.0) {
        return Err(Error::InadmissibleData(format!(
            "v0 = {min_v0} is not positive at cell ({vi},{vj})"
        )));
    }
    let class = AdmissibilityClass::for_l(l);
    let mut report = AdmissibilityReport {
        class,
        min_u0,
        min_v0,
        ln_integral: None,
        moment_integral: None,
        flags: Vec::new(),
    };
    let zero_cell = u0.first_nonpositive();
    match class {
        AdmissibilityClass::Below3 => {}
        AdmissibilityClass::Equal3 => {
            report.ln_integral = Some(u0.map(f64::ln).sum_integral());
            if let Some((i, j, _)) = zero_cell {
                report
                    .flags
                    .push(format!("ln u0 integral divergent at cell ({i},{j})"));
            }
        }
        AdmissibilityClass::Above3 => {
            report.moment_integral = Some(u0.map(|x| x.powf(3.0 - l)).sum_integral());
            if let Some((i, j, _)) = zero_cell {
                report
                    .flags
                    .push(format!("u0^(3-l) integral divergent at cell ({i},{j})"));
            }
        }
    }
    Ok(report)
}

/// Validated (unregularized) initial data.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub u0: ScalarField,
    pub v0: ScalarField,
    pub report: AdmissibilityReport,
}

impl InitialData {
    pub fn new(u0: ScalarField, v0: ScalarField, l: f64) -> Result<Self> {
        let report = validate_initial_data(&u0, &v0, l)?;
        Ok(Self { u0, v0, report })
    }

    pub fn grid(&self) -> &GridSpec {
        self.u0.grid()
    }

    /// `u0 + eps`.
    pub fn regularized_u0(&self, eps: f64) -> ScalarField {
        self.u0.map(|x| x + eps)
    }
}

/// Named initial-data generators.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    Constant(f64),
    /// `floor + amplitude * exp(-|x - c|^2 / (2 sigma^2))`.
    GaussianBump {
        cx: f64,
        cy: f64,
        sigma: f64,
        amplitude: f64,
        floor: f64,
    },
    RandomFourier {
        seed: u64,
        modes: usize,
        min: f64,
        max: f64,
    },
    File(PathBuf),
}

impl InitSpec {
    pub fn build(&self, grid: GridSpec) -> Result<ScalarField> {
        match self {
            InitSpec::Constant(c) => Ok(ScalarField::constant(grid, *c)),
            InitSpec::GaussianBump {
                cx,
                cy,
                sigma,
                amplitude,
                floor,
            } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian-bump sigma must be positive, got {sigma}"
                    )));
                }
                let s2 = 2.0 * sigma * sigma;
                Ok(ScalarField::from_fn(grid, |x, y| {
                    floor + amplitude * (-((x - cx).powi(2) + (y - cy).powi(2)) / s2).exp()
                }))
            }
            InitSpec::RandomFourier {
                seed,
                modes,
                min,
                max,
            } => {
                if !(max >= min) || !(*min > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "random-fourier needs 0 < min <= max, got {min}, {max}"
                    )));
                }
                FieldSampler::new(*seed, *modes, max - min, *min)?.sample(&grid)
            }
            InitSpec::File(path) => {
                let (f, _) = crate::snapshot::load(path)?;
                f.grid().ensure_same(&grid)?;
                f.check_finite()?;
                Ok(f)
            }
        }
    }
}

impl std::str::FromStr for InitSpec {
    type Err = String;

    /// `constant(c)`, `gaussian-bump(cx,cy,sigma,amplitude,floor)`,
    /// `random-fourier(seed,modes,min,max)` or `file(path)`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| format!("expected name(args), got `{s}`"))?;
        if !s.ends_with(')') {
            return Err(format!("missing closing parenthesis in `{s}`"));
        }
        let name = s[..open].trim();
        let inner = &s[open + 1..s.len() - 1];
        if name == "file" {
            return Ok(InitSpec::File(PathBuf::from(inner.trim())));
        }
        let args: Vec<&str> = inner.split(',').map(str::trim).collect();
        let reals = |n: usize| -> std::result::Result<Vec<f64>, String> {
            if args.len() != n {
                return Err(format!("{name} takes {n} arguments, got {}", args.len()));
            }
            args.iter()
                .map(|a| {
                    a.parse::<f64>()
                        .map_err(|_| format!("bad number `{a}` in {name}"))
                })
                .collect()
        };
        match name {
            "constant" => Ok(InitSpec::Constant(reals(1)?[0])),
            "gaussian-bump" => {
                let a = reals(5)?;
                Ok(InitSpec::GaussianBump {
                    cx: a[0],
                    cy: a[1],
                    sigma: a[2],
                    amplitude: a[3],
                    floor: a[4],
                })
            }
            "random-fourier" => {
                if args.len() != 4 {
                    return Err(format!(
                        "random-fourier takes 4 arguments, got {}",
                        args.len()
                    ));
                }
                let seed = args[0]
                    .parse()
                    .map_err(|_| format!("bad seed `{}`", args[0]))?;
                let modes = args[1]
                    .parse()
                    .map_err(|_| format!("bad mode count `{}`", args[1]))?;
                let min = args[2]
                    .parse()
                    .map_err(|_| format!("bad min `{}`", args[2]))?;
                let max = args[3]
                    .parse()
                    .map_err(|_| format!("bad max `{}`", args[3]))?;
                Ok(InitSpec::RandomFourier {
                    seed,
                    modes,
                    min,
                    max,
                })
            }
            other => Err(format!("unknown initial-data generator `{other}`")),
        }
    }
}

fn require_positive(f: &ScalarField, name: &'static str) -> Result<()> {
    match f.first_nonpositive() {
        None => Ok(()),
        Some((i, j, value)) => Err(Error::Nonpositive {
            field: name,
            i,
            j,
            value,
        }),
    }
}

/// Face flux `a_f (grad u)_f - b_f (grad v)_f` of the u-equation.
///
/// `a_f` is the arithmetic mean of `u^(l-1) v` over the two adjacent cells.
/// `b_f` is `u^l` at the upwind cell (or the face mean under
/// [`TaxisScheme::Hybrid`] when the face Peclet test passes) times the
/// arithmetic mean of `v`. Boundary faces are zero.
pub fn flux_u(u: &ScalarField, v: &ScalarField, p: &ModelParams) -> Result<FaceVectorField> {
    u.grid().ensure_same(v.grid())?;
    require_positive(u, "u")?;
    require_positive(v, "v")?;
    Ok(flux_u_unchecked(u, v, p))
}

pub(crate) fn flux_u_unchecked(
    u: &ScalarField,
    v: &ScalarField,
    p: &ModelParams,
) -> FaceVectorField {
    let g = *u.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let uv = u.values();
    let vv = v.values();
    let diff: Vec<f64> = uv
        .iter()
        .zip(vv)
        .map(|(a, b)| pos_pow(*a, p.l - 1.0) * b)
        .collect();
    let ul: Vec<f64> = uv.iter().map(|a| pos_pow(*a, p.l)).collect();
    let hybrid = p.taxis == TaxisScheme::Hybrid;
    let l = p.l;

    // Face flux between cell `a` (low side) and `b` (high side) with spacing h.
    let face = |a: usize, b: usize, h: f64| -> f64 {
        let gu = (uv[b] - uv[a]) / h;
        let gv = (vv[b] - vv[a]) / h;
        let af = 0.5 * (diff[a] + diff[b]);
        let vf = 0.5 * (vv[a] + vv[b]);
        let upwind = if gv > 0.0 { ul[a] } else { ul[b] };
        let coef = if hybrid {
            // central is monotone while the diffusive weight dominates
            // the taxis sensitivity to the downwind cell
            let pe = h * l * gv.abs() * vf * diff_pow_max(uv[a], uv[b], l);
            if pe <= diff[a] + diff[b] {
                0.5 * (ul[a] + ul[b])
            } else {
                upwind
            }
        } else {
            upwind
        };
        af * gu - coef * vf * gv
    };

    let mut out = FaceVectorField::zeros(g);
    {
        let fx = out.x_faces_mut();
        for j in 0..g.ny {
            let row = j * g.nx;
            let base = j * (g.nx + 1);
            for i in 1..g.nx {
                fx[base + i] = face(row + i - 1, row + i, hx);
            }
        }
    }
    {
        let fy = out.y_faces_mut();
        for j in 1..g.ny {
            for i in 0..g.nx {
                fy[j * g.nx + i] = face((j - 1) * g.nx + i, j * g.nx + i, hy);
            }
        }
    }
    out
}

#[inline]
fn diff_pow_max(a: f64, b: f64, l: f64) -> f64 {
    pos_pow(a.max(b), l - 1.0)
}

/// `div(flux_u) + u - u^2`.
pub fn rhs_u(u: &ScalarField, v: &ScalarField, p: &ModelParams) -> Result<ScalarField> {
    let flux = flux_u(u, v, p)?;
    let div = divergence(&flux)?;
    Ok(div.zip_map(u, |d, x| d + x - x * x))
}

pub(crate) fn rhs_u_unchecked(u: &ScalarField, v: &ScalarField, p: &ModelParams) -> ScalarField {
    let flux = flux_u_unchecked(u, v, p);
    let div = divergence(&flux).expect("flux_u pins boundary faces to zero");
    div.zip_map(u, |d, x| d + x - x * x)
}

/// `lap v - u v`.
pub fn rhs_v(u: &ScalarField, v: &ScalarField) -> Result<ScalarField> {
    u.grid().ensure_same(v.grid())?;
    u.check_finite()?;
    v.check_finite()?;
    let lap = neumann_laplacian(v);
    let uv = u.zip_map(v, |a, b| a * b);
    Ok(lap.zip_map(&uv, |a, b| a - b))
}
