//! Randomized stress tests for the standalone functional inequalities used
//! by the a-priori estimates.

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{cell_gradient_sq, GridSpec, ScalarField};

/// Band-limited positive random fields: `exp` of a cosine series with
/// modes `0..=modes` in each direction, rescaled into `[floor, floor + amplitude]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSampler {
    pub seed: u64,
    pub modes: usize,
    pub amplitude: f64,
    pub floor: f64,
}

impl FieldSampler {
    pub fn new(seed: u64, modes: usize, amplitude: f64, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sampler floor must be positive, got {floor}"
            )));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sampler amplitude must be nonnegative, got {amplitude}"
            )));
        }
        Ok(Self {
            seed,
            modes,
            amplitude,
            floor,
        })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn sample(&self, g: &GridSpec) -> Result<ScalarField> {
        sample_field(self, g)
    }

    /// Coefficients `a_km` in draw order (`k` outer, `m` inner, `(0,0)` skipped).
    pub fn coefficients(&self) -> Vec<(usize, usize, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for k in 0..=self.modes {
            for m in 0..=self.modes {
                if k == 0 && m == 0 {
                    continue;
                }
                let a: f64 = rng.gen_range(-1.0..1.0);
                out.push((k, m, a / (1.0 + (k * k + m * m) as f64)));
            }
        }
        out
    }
}

pub fn sample_field(s: &FieldSampler, g: &GridSpec) -> Result<ScalarField> {
    let cap = g.nx.min(g.ny) / 8;
    if s.modes > cap {
        return Err(Error::InvalidParameter(format!(
            "mode count {} exceeds the band limit {cap} for a {}x{} grid",
            s.modes, g.nx, g.ny
        )));
    }
    if s.amplitude == 0.0 {
        return Ok(ScalarField::constant(*g, s.floor));
    }
    let coeffs = s.coefficients();
    let cx: Vec<Vec<f64>> = (0..=s.modes)
        .map(|k| {
            (0..g.nx)
                .map(|i| (k as f64 * PI * g.center(i, 0).0 / g.lx).cos())
                .collect()
        })
        .collect();
    let cy: Vec<Vec<f64>> = (0..=s.modes)
        .map(|m| {
            (0..g.ny)
                .map(|j| (m as f64 * PI * g.center(0, j).1 / g.ly).cos())
                .collect()
        })
        .collect();
    let mut vals = vec![0.0; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let s: f64 = coeffs
                .iter()
                .map(|&(k, m, a)| a * cx[k][i] * cy[m][j])
                .sum();
            vals[g.idx(i, j)] = s.exp();
        }
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for x in vals.iter_mut() {
        *x = if span > 0.0 {
            s.floor + s.amplitude * (*x - lo) / span
        } else {
            s.floor
        };
    }
    ScalarField::new(*g, vals)
}

/// Field pair for sample `seed`: `phi` from `seed`, `psi` from a decorrelated seed.
pub fn sample_pair(
    s: &FieldSampler,
    g: &GridSpec,
    seed: u64,
) -> Result<(ScalarField, ScalarField)> {
    let phi = s.with_seed(seed).sample(g)?;
    let psi = s.with_seed(seed ^ 0x9E37_79B9_7F4A_7C15).sample(g)?;
    Ok((phi, psi))
}

/// Named terms of the weighted interpolation inequality
/// `int phi^(p+1) psi |grad psi|^2 <= t1 + t2 + t3 + t4`.
#[derive(Clone, Debug, PartialEq)]
pub struct InequalitySample {
    pub p: f64,
    pub eta: f64,
    pub c: f64,
    pub lhs: f64,
    /// `eta int phi^(p-1) psi |grad phi|^2`
    pub t1: f64,
    /// `c (|psi|^2 + |psi|^4/eta) int phi^(p+1) int |grad psi|^4/psi^3`
    pub t2: f64,
    /// `c |psi|^2 (int phi)^(2p+1) int |grad psi|^4/psi^3`
    pub t3: f64,
    /// `c |psi|^2 int phi psi`
    pub t4: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Sum of the c-proportional terms at `c = 1`.
    pub coef: f64,
}

pub fn check_appendix_inequality(
    phi: &ScalarField,
    psi: &ScalarField,
    p: f64,
    eta: f64,
    c: f64,
) -> Result<InequalitySample> {
    phi.grid().ensure_same(psi.grid())?;
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eta must be positive, got {eta}"
        )));
    }
    for (f, name) in [(phi, "phi"), (psi, "psi")] {
        f.check_finite()?;
        if let Some((i, j, value)) = f.first_nonpositive() {
            return Err(Error::Nonpositive {
                field: name,
                i,
                j,
                value,
            });
        }
    }
    let da = phi.grid().cell_area();
    let gphi = cell_gradient_sq(phi);
    let gpsi = cell_gradient_sq(psi);
    let (mut lhs, mut i1, mut phi_p1, mut fisher, mut int_phi, mut phipsi) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..phi.values().len() {
        let f = phi.values()[k];
        let s = psi.values()[k];
        let fp1 = f.powf(p + 1.0);
        lhs += fp1 * s * gpsi.values()[k];
        i1 += f.powf(p - 1.0) * s * gphi.values()[k];
        phi_p1 += fp1;
        fisher += gpsi.values()[k].powi(2) / (s * s * s);
        int_phi += f;
        phipsi += f * s;
    }
    let (lhs, i1, phi_p1, fisher, int_phi, phipsi) = (
        lhs * da,
        i1 * da,
        phi_p1 * da,
        fisher * da,
        int_phi * da,
        phipsi * da,
    );
    let n2 = psi.max_abs().powi(2);
    let k2 = (n2 + n2 * n2 / eta) * phi_p1 * fisher;
    let k3 = n2 * int_phi.powf(2.0 * p + 1.0) * fisher;
    let k4 = n2 * phipsi;
    let t1 = eta * i1;
    let (t2, t3, t4) = (c * k2, c * k3, c * k4);
    let rhs = t1 + t2 + t3 + t4;
    Ok(InequalitySample {
        p,
        eta,
        c,
        lhs,
        t1,
        t2,
        t3,
        t4,
        rhs,
        margin: rhs - lhs,
        coef: k2 + k3 + k4,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantFit {
    pub c_fit: f64,
    /// Index into the calibration list of the sample attaining `c_fit`.
    pub argmax: usize,
}

/// Smallest `c >= 0` with nonnegative margin on every sample.
pub fn fit_constant(samples: &[InequalitySample]) -> Result<ConstantFit> {
    if samples.len() < 100 {
        return Err(Error::Precondition(format!(
            "fit_constant needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mut best = ConstantFit {
        c_fit: 0.0,
        argmax: 0,
    };
    for (k, s) in samples.iter().enumerate() {
        let excess = s.lhs - s.t1;
        if excess <= 0.0 {
            continue;
        }
        if s.coef == 0.0 {
            return Err(Error::Unsatisfiable { sample: k, excess });
        }
        let c = excess / s.coef;
        if c > best.c_fit {
            best = ConstantFit {
                c_fit: c,
                argmax: k,
            };
        }
    }
    Ok(best)
}

/// Evaluates the interpolation inequality on the pairs seeded by `seeds`.
pub fn evaluate_bank(
    sampler: &FieldSampler,
    g: &GridSpec,
    seeds: &[u64],
    p: f64,
    eta: f64,
    c: f64,
) -> Result<Vec<InequalitySample>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let (phi, psi) = sample_pair(sampler, g, seed)?;
            check_appendix_inequality(&phi, &psi, p, eta, c)
        })
        .collect()
}

/// Both Sobolev-type embeddings on one field.
#[derive(Clone, Debug, PartialEq)]
pub struct SobolevSample {
    pub l2_sq: f64,
    pub grad_l1: f64,
    pub l1: f64,
    /// `int rho^2 / (|grad rho|_1^2 + |rho|_1^2)`
    pub c_fit_quadratic: f64,
    /// `(int rho^(1/(p+1)))^(p+1)`, present when `p` was given.
    pub quasi_norm: Option<f64>,
    /// `|rho|_2 / (|grad rho|_1 + quasi_norm)`
    pub c_fit_fractional: Option<f64>,
}

pub fn check_sobolev(rho: &ScalarField, p: Option<f64>) -> Result<SobolevSample> {
    rho.check_finite()?;
    let da = rho.grid().cell_area();
    let l2_sq = rho.values().iter().map(|x| x * x).sum::<f64>() * da;
    let grad_l1 = cell_gradient_sq(rho)
        .values()
        .iter()
        .map(|x| x.sqrt())
        .sum::<f64>()
        * da;
    let l1 = rho.values().iter().map(|x| x.abs()).sum::<f64>() * da;
    let c_fit_quadratic = l2_sq / (grad_l1 * grad_l1 + l1 * l1);
    let (quasi_norm, c_fit_fractional) = match p {
        None => (None, None),
        Some(p) => {
            if !(p > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "p must be positive, got {p}"
                )));
            }
            if let Some((i, j, value)) = rho.first_nonpositive() {
                return Err(Error::Nonpositive {
                    field: "rho",
                    i,
                    j,
                    value,
                });
            }
            let q = (rho
                .values()
                .iter()
                .map(|x| x.powf(1.0 / (p + 1.0)))
                .sum::<f64>()
                * da)
                .powf(p + 1.0);
            (Some(q), Some(l2_sq.sqrt() / (grad_l1 + q)))
        }
    };
    Ok(SobolevSample {
        l2_sq,
        grad_l1,
        l1,
        c_fit_quadratic,
        quasi_norm,
        c_fit_fractional,
    })
}

/// `Psi(xi) = (xi+e) ln^2(xi+e) - 2 (xi+e) ln(xi+e) + 2 (xi+e)`.
pub fn psi(xi: f64) -> f64 {
    let s = xi + E;
    let l = s.ln();
    s * l * l - 2.0 * s * l + 2.0 * s
}

/// `Psi'(xi) = ln^2(xi+e)`.
pub fn psi_prime(xi: f64) -> f64 {
    (xi + E).ln().powi(2)
}

/// `e (xi+e) ln(xi+e) - (Psi(xi) - xi Psi'(xi))`.
pub fn check_psi_bound(xi: f64) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "xi must be >= 0, got {xi}"
        )));
    }
    let s = xi + E;
    let l = s.ln();
    let lower = E * l * l - 2.0 * s * l + 2.0 * s;
    Ok(E * s * l - lower)
}

/// Result of a random sweep of the `Psi` bound.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiSweep {
    pub samples: usize,
    pub min_margin: f64,
    pub violations: usize,
}

/// Evaluates the `Psi` bound at `xi = 0` and at `samples - 1` log-uniform
/// points in `[1e-8, 1e6]`.
pub fn sweep_psi_bound(samples: usize, seed: u64) -> PsiSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PsiSweep {
        samples,
        min_margin: f64::INFINITY,
        violations: 0,
    };
    for k in 0..samples {
        let xi = if k == 0 {
            0.0
        } else {
            10f64.powf(rng.gen_range(-8.0..6.0))
        };
        let m = check_psi_bound(xi).expect("xi is nonnegative");
        out.min_margin = out.min_margin.min(m);
        if m < 0.0 {
            out.violations += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementaryReport {
    pub samples: usize,
    /// Largest scaled value of `1/2 a^2 - b^2 - (a-b)^2`.
    pub max_violation_square_diff: f64,
    /// Largest scaled value of `(a+b)^2 - 2(a^2+b^2)`.
    pub max_violation_square_sum: f64,
    /// Samples whose scaled violation exceeds round-off (`1e-12`).
    pub violations: usize,
}

/// Sweeps `(a-b)^2 >= a^2/2 - b^2` and `(a+b)^2 <= 2(a^2+b^2)` over random pairs.
pub fn check_elementary(samples: usize, seed: u64) -> ElementaryReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ElementaryReport {
        samples,
        max_violation_square_diff: f64::NEG_INFINITY,
        max_violation_square_sum: f64::NEG_INFINITY,
        violations: 0,
    };
    for _ in 0..samples {
        let mag: f64 = 10f64.powf(rng.gen_range(-6.0..6.0));
        let a: f64 = rng.gen_range(-1.0..1.0) * mag;
        let b: f64 = rng.gen_range(-1.0..1.0) * mag;
        let scale = (a * a + b * b).max(f64::MIN_POSITIVE);
        let d1 = (0.5 * a * a - b * b - (a - b).powi(2)) / scale;
        let d2 = ((a + b).powi(2) - 2.0 * (a * a + b * b)) / scale;
        report.max_violation_square_diff = report.max_violation_square_diff.max(d1);
        report.max_violation_square_sum = report.max_violation_square_sum.max(d2);
        if d1 > 1e-12 || d2 > 1e-12 {
            report.violations += 1;
        }
    }
    report
}
