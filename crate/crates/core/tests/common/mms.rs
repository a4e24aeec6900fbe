//! Manufactured solution with homogeneous Neumann data on the unit square:
//!
//! ```text
//! u* = 1 + 0.3 cos(pi x) cos(pi y) e^-t
//! v* = 1.2 + 0.4 cos(pi x) cos(2 pi y) e^-t/2
//! ```

use std::f64::consts::PI;

use degtaxis::grid::{GridSpec, ScalarField};
use degtaxis::model::{InitialData, ModelParams};
use degtaxis::stepper::{stable_dt, step_with_sources, SimState, Sources, StepControl};

struct Jet {
    f: f64,
    fx: f64,
    fy: f64,
    lap: f64,
    ft: f64,
}

fn u_jet(x: f64, y: f64, t: f64) -> Jet {
    let a = 0.3 * (-t).exp();
    let (cx, sx, cy, sy) = (
        (PI * x).cos(),
        (PI * x).sin(),
        (PI * y).cos(),
        (PI * y).sin(),
    );
    Jet {
        f: 1.0 + a * cx * cy,
        fx: -a * PI * sx * cy,
        fy: -a * PI * cx * sy,
        lap: -2.0 * PI * PI * a * cx * cy,
        ft: -a * cx * cy,
    }
}

fn v_jet(x: f64, y: f64, t: f64) -> Jet {
    let a = 0.4 * (-0.5 * t).exp();
    let (cx, sx, cy, sy) = (
        (PI * x).cos(),
        (PI * x).sin(),
        (2.0 * PI * y).cos(),
        (2.0 * PI * y).sin(),
    );
    Jet {
        f: 1.2 + a * cx * cy,
        fx: -a * PI * sx * cy,
        fy: -2.0 * a * PI * cx * sy,
        lap: -5.0 * PI * PI * a * cx * cy,
        ft: -0.5 * a * cx * cy,
    }
}

pub fn exact_u(g: GridSpec, t: f64) -> ScalarField {
    ScalarField::from_fn(g, |x, y| u_jet(x, y, t).f)
}

pub fn exact_v(g: GridSpec, t: f64) -> ScalarField {
    ScalarField::from_fn(g, |x, y| v_jet(x, y, t).f)
}

fn source_u(g: GridSpec, t: f64, l: f64) -> ScalarField {
    ScalarField::from_fn(g, |x, y| {
        let u = u_jet(x, y, t);
        let v = v_jet(x, y, t);
        let a = u.f.powf(l - 1.0) * v.f;
        let ax = (l - 1.0) * u.f.powf(l - 2.0) * v.f * u.fx + u.f.powf(l - 1.0) * v.fx;
        let ay = (l - 1.0) * u.f.powf(l - 2.0) * v.f * u.fy + u.f.powf(l - 1.0) * v.fy;
        let b = u.f.powf(l) * v.f;
        let bx = l * u.f.powf(l - 1.0) * v.f * u.fx + u.f.powf(l) * v.fx;
        let by = l * u.f.powf(l - 1.0) * v.f * u.fy + u.f.powf(l) * v.fy;
        let diffusion = ax * u.fx + ay * u.fy + a * u.lap;
        let taxis = bx * v.fx + by * v.fy + b * v.lap;
        u.ft - (diffusion - taxis + u.f - u.f * u.f)
    })
}

fn source_v(g: GridSpec, t: f64) -> ScalarField {
    ScalarField::from_fn(g, |x, y| {
        let u = u_jet(x, y, t);
        let v = v_jet(x, y, t);
        v.ft - (v.lap - u.f * v.f)
    })
}

/// Discrete L2 errors `(u, v)` at `t_end` on an `n x n` grid.
pub fn mms_errors(n: usize, l: f64, t_end: f64, p: ModelParams, c: &StepControl) -> (f64, f64) {
    let g = GridSpec::unit_square(n).unwrap();
    let eps = p.eps;
    let init = InitialData::new(exact_u(g, 0.0).map(|x| x - eps), exact_v(g, 0.0), l).unwrap();
    let mut s = SimState::new(init.regularized_u0(eps), init.v0.clone(), 0.0).unwrap();
    while s.t < t_end {
        let mut dt = stable_dt(&s, &p, c);
        let last = s.t + dt >= t_end;
        if last {
            dt = t_end - s.t;
        }
        let su = source_u(g, s.t, l);
        let sv = source_v(g, s.t + dt);
        let mut next = step_with_sources(
            &s,
            dt,
            &p,
            c,
            Sources {
                su: Some(&su),
                sv: Some(&sv),
            },
        )
        .unwrap();
        if last {
            next.t = t_end;
        }
        s = next;
    }
    let eu =
        s.u.zip_map(&exact_u(g, t_end), |a, b| (a - b).powi(2))
            .sum_integral()
            .sqrt();
    let ev =
        s.v.zip_map(&exact_v(g, t_end), |a, b| (a - b).powi(2))
            .sum_integral()
            .sqrt();
    (eu, ev)
}
