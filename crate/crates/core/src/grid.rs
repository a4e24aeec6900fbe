//! Structured cell-centred grids and the discrete calculus used by every
//! other module.
//!
//! Cells are indexed `(i, j)` with `i` along x and `j` along y; storage is
//! row-major with `j` outer and `i` inner. Faces carry gradients and fluxes.
//! Boundary faces are pinned to zero, which is the reflection ghost-cell
//! realisation of homogeneous Neumann data.

use crate::error::{Error, Result};

/// Uniform rectangular grid on `[0, lx] x [0, ly]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 cells per axis, got {nx}x{ny}"
            )));
        }
        if !(lx.is_finite() && lx > 0.0 && ly.is_finite() && ly > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "extents must be positive and finite, got {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// `n x n` cells on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// `|Omega|`.
    #[inline]
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn h_max(&self) -> f64 {
        self.hx().max(self.hy())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.lx.to_bits() == other.lx.to_bits()
            && self.ly.to_bits() == other.ly.to_bits()
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Cell-centred real values on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    /// Checked constructor: length must match and every value must be finite.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let f = Self::from_vec_unchecked(grid, values)?;
        f.check_finite()?;
        Ok(f)
    }

    /// Length-checked only; finiteness is left to the consumer.
    pub fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x, y)` at cell centres.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => {
                let (i, j) = self.grid.ij(k);
                Err(Error::NonFinite {
                    i,
                    j,
                    value: self.values[k],
                })
            }
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Location and value of the smallest entry.
    pub fn argmin(&self) -> (usize, usize, f64) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = k;
            }
        }
        let (i, j) = self.grid.ij(best);
        (i, j, self.values[best])
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|v| *v > 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    /// First cell violating `v > 0`, if any.
    pub fn first_nonpositive(&self) -> Option<(usize, usize, f64)> {
        self.values.iter().position(|v| !(*v > 0.0)).map(|k| {
            let (i, j) = self.grid.ij(k);
            (i, j, self.values[k])
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Pointwise combination; grids are assumed equal (checked in debug builds).
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// Unchecked midpoint quadrature.
    #[inline]
    pub fn sum_integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }
}

/// Values on x-faces (`(nx+1) x ny`) and y-faces (`nx x (ny+1)`).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVectorField {
    grid: GridSpec,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl FaceVectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            fx: vec![0.0; (grid.nx + 1) * grid.ny],
            fy: vec![0.0; grid.nx * (grid.ny + 1)],
        }
    }

    pub fn from_parts(grid: GridSpec, fx: Vec<f64>, fy: Vec<f64>) -> Result<Self> {
        if fx.len() != (grid.nx + 1) * grid.ny || fy.len() != grid.nx * (grid.ny + 1) {
            return Err(Error::GridMismatch(format!(
                "face arrays {}+{} do not fit {}x{}",
                fx.len(),
                fy.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid, fx, fy })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// x-face between cells `(i-1, j)` and `(i, j)`; `i` in `0..=nx`.
    #[inline]
    pub fn x_index(&self, i: usize, j: usize) -> usize {
        j * (self.grid.nx + 1) + i
    }

    /// y-face between cells `(i, j-1)` and `(i, j)`; `j` in `0..=ny`.
    #[inline]
    pub fn y_index(&self, i: usize, j: usize) -> usize {
        j * self.grid.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.fx[self.x_index(i, j)]
    }

    #[inline]
    pub fn y(&self, i: usize, j: usize) -> f64 {
        self.fy[self.y_index(i, j)]
    }

    pub fn x_faces(&self) -> &[f64] {
        &self.fx
    }

    pub fn y_faces(&self) -> &[f64] {
        &self.fy
    }

    pub fn x_faces_mut(&mut self) -> &mut [f64] {
        &mut self.fx
    }

    pub fn y_faces_mut(&mut self) -> &mut [f64] {
        &mut self.fy
    }

    pub fn max_abs(&self) -> f64 {
        self.fx
            .iter()
            .chain(&self.fy)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// First nonzero boundary face, reported as (axis, flat index, value).
    pub fn first_boundary_violation(&self) -> Option<(char, usize, f64)> {
        let g = &self.grid;
        for j in 0..g.ny {
            for i in [0, g.nx] {
                let k = self.x_index(i, j);
                if self.fx[k] != 0.0 {
                    return Some(('x', k, self.fx[k]));
                }
            }
        }
        for j in [0, g.ny] {
            for i in 0..g.nx {
                let k = self.y_index(i, j);
                if self.fy[k] != 0.0 {
                    return Some(('y', k, self.fy[k]));
                }
            }
        }
        None
    }
}

/// Midpoint quadrature `hx * hy * sum(values)`.
pub fn integrate(f: &ScalarField) -> Result<f64> {
    f.check_finite()?;
    Ok(f.sum_integral())
}

/// Two-point face differences; boundary faces are zero.
pub fn face_gradient(f: &ScalarField) -> FaceVectorField {
    let g = *f.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let mut out = FaceVectorField::zeros(g);
    let v = f.values();
    for j in 0..g.ny {
        let row = j * g.nx;
        let base = j * (g.nx + 1);
        for i in 1..g.nx {
            out.fx[base + i] = (v[row + i] - v[row + i - 1]) / hx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            out.fy[j * g.nx + i] = (v[j * g.nx + i] - v[(j - 1) * g.nx + i]) / hy;
        }
    }
    out
}

fn divergence_unchecked(flux: &FaceVectorField) -> ScalarField {
    let g = *flux.grid();
    let (hx, hy) = (g.hx(), g.hy());
    let mut values = vec![0.0; g.len()];
    for j in 0..g.ny {
        let base = j * (g.nx + 1);
        for i in 0..g.nx {
            let dx = (flux.fx[base + i + 1] - flux.fx[base + i]) / hx;
            let dy = (flux.fy[(j + 1) * g.nx + i] - flux.fy[j * g.nx + i]) / hy;
            values[j * g.nx + i] = dx + dy;
        }
    }
    ScalarField { grid: g, values }
}

/// Discrete divergence of a no-flux face field.
pub fn divergence(flux: &FaceVectorField) -> Result<ScalarField> {
    if let Some((axis, index, value)) = flux.first_boundary_violation() {
        return Err(Error::BoundaryFlux { axis, index, value });
    }
    Ok(divergence_unchecked(flux))
}

/// Five-point Laplacian with homogeneous Neumann data.
pub fn neumann_laplacian(f: &ScalarField) -> ScalarField {
    divergence_unchecked(&face_gradient(f))
}

/// Per-cell `|grad f|^2`: squares of the two adjacent face gradients are
/// averaged per axis, then the axes are summed. Outside boundary faces
/// contribute zero.
pub fn cell_gradient_sq(f: &ScalarField) -> ScalarField {
    let grad = face_gradient(f);
    let g = *f.grid();
    let mut values = vec![0.0; g.len()];
    for j in 0..g.ny {
        let base = j * (g.nx + 1);
        for i in 0..g.nx {
            let gl = grad.fx[base + i];
            let gr = grad.fx[base + i + 1];
            let gb = grad.fy[j * g.nx + i];
            let gt = grad.fy[(j + 1) * g.nx + i];
            values[j * g.nx + i] = 0.5 * (gl * gl + gr * gr) + 0.5 * (gb * gb + gt * gt);
        }
    }
    ScalarField { grid: g, values }
}

/// `<f, g>` with cell weights `hx * hy`.
pub fn cell_inner(f: &ScalarField, g: &ScalarField) -> f64 {
    f.grid().cell_area()
        * f.values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
}

/// `<F, G>` with face weights `hx * hy`.
pub fn face_inner(f: &FaceVectorField, g: &FaceVectorField) -> f64 {
    let sx: f64 = f.fx.iter().zip(&g.fx).map(|(a, b)| a * b).sum();
    let sy: f64 = f.fy.iter().zip(&g.fy).map(|(a, b)| a * b).sum();
    f.grid().cell_area() * (sx + sy)
}

/// Discrete L2 norm with cell weights.
pub fn l2_norm(f: &ScalarField) -> f64 {
    cell_inner(f, f).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_degenerate() {
        assert!(GridSpec::new(3, 8, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 1.0, f64::NAN).is_err());
        let g = GridSpec::new(8, 4, 2.0, 1.0).unwrap();
        assert_eq!(g.center(0, 0), (0.125, 0.125));
    }

    #[test]
    fn integrate_constant_and_affine() {
        let g = unit(10);
        assert!((integrate(&ScalarField::constant(g, 3.0)).unwrap() - 3.0).abs() < 1e-14);
        let fx = ScalarField::from_fn(g, |x, _| x);
        assert!((integrate(&fx).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integrate_sine_product() {
        let g = unit(128);
        let f = ScalarField::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
        let exact = 4.0 / (PI * PI);
        assert!((integrate(&f).unwrap() - exact).abs() < 1e-3);
    }

    #[test]
    fn integrate_names_bad_cell() {
        let g = unit(4);
        let mut v = vec![1.0; 16];
        v[g.idx(2, 3)] = f64::NAN;
        let f = ScalarField::from_vec_unchecked(g, v).unwrap();
        match integrate(&f) {
            Err(Error::NonFinite { i: 2, j: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn integrate_is_second_order() {
        let f = |x: f64, y: f64| (1.3 * x).exp() * (2.0 * y).cos();
        let exact = ((1.3f64).exp() - 1.0) / 1.3 * (2.0f64).sin() / 2.0;
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| (integrate(&ScalarField::from_fn(unit(n), f)).unwrap() - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&rate), "rate {rate}");
        }
    }

    #[test]
    fn gradient_of_constant_and_affine() {
        let g = unit(8);
        let c = face_gradient(&ScalarField::constant(g, 7.0));
        assert_eq!(c.max_abs(), 0.0);
        let f = ScalarField::from_fn(g, |x, y| 2.0 * x + 3.0 * y);
        let gr = face_gradient(&f);
        for j in 0..8 {
            for i in 1..8 {
                assert!((gr.x(i, j) - 2.0).abs() < 1e-12);
            }
            assert_eq!(gr.x(0, j), 0.0);
            assert_eq!(gr.x(8, j), 0.0);
        }
        for j in 1..8 {
            for i in 0..8 {
                assert!((gr.y(i, j) - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_of_square_is_sum_of_centres() {
        let g = unit(16);
        let f = ScalarField::from_fn(g, |x, _| x * x);
        let gr = face_gradient(&f);
        for i in 1..16 {
            let (xl, _) = g.center(i - 1, 0);
            let (xr, _) = g.center(i, 0);
            assert!((gr.x(i, 3) - (xl + xr)).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_zero_and_affine_gradient() {
        let g = unit(8);
        let z = divergence(&FaceVectorField::zeros(g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        // interior cells only: boundary cells see the clamped outer face
        let f = ScalarField::from_fn(g, |x, y| 2.0 * x - y);
        let d = divergence(&face_gradient(&f)).unwrap();
        for j in 1..7 {
            for i in 1..7 {
                assert!(d.get(i, j).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn divergence_rejects_boundary_flux() {
        let g = unit(4);
        let mut f = FaceVectorField::zeros(g);
        let k = f.x_index(4, 2);
        f.x_faces_mut()[k] = 1.0;
        assert!(matches!(
            divergence(&f),
            Err(Error::BoundaryFlux { axis: 'x', .. })
        ));
    }

    #[test]
    fn laplacian_of_quadratic_interior() {
        let g = unit(16);
        let f = ScalarField::from_fn(g, |x, y| x * x + y * y);
        let lap = neumann_laplacian(&f);
        for j in 1..15 {
            for i in 1..15 {
                assert!((lap.get(i, j) - 4.0).abs() < 1e-9);
            }
        }
        assert_eq!(
            neumann_laplacian(&ScalarField::constant(g, 2.5)).max_abs(),
            0.0
        );
    }

    #[test]
    fn gradient_sq_examples() {
        let g = unit(8);
        assert_eq!(
            cell_gradient_sq(&ScalarField::constant(g, 1.0)).max_abs(),
            0.0
        );
        let f = ScalarField::from_fn(g, |x, _| 2.0 * x);
        let s = cell_gradient_sq(&f);
        for j in 0..8 {
            for i in 1..7 {
                assert!((s.get(i, j) - 4.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_sq_tracks_analytic_derivative() {
        let g = GridSpec::new(256, 4, 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let s = cell_gradient_sq(&f);
        let scale = 4.0 * PI * PI;
        for j in 0..4 {
            for i in 1..255 {
                let (x, _) = g.center(i, j);
                let exact = scale * (2.0 * PI * x).cos().powi(2);
                assert!((s.get(i, j) - exact).abs() <= 1e-2 * scale);
            }
        }
    }

    fn random_faces(g: GridSpec, seed: &[f64]) -> FaceVectorField {
        let mut f = FaceVectorField::zeros(g);
        let mut k = 0;
        for j in 0..g.ny {
            for i in 1..g.nx {
                let idx = f.x_index(i, j);
                f.x_faces_mut()[idx] = seed[k % seed.len()] * (1.0 + i as f64 * 0.1);
                k += 1;
            }
        }
        for j in 1..g.ny {
            for i in 0..g.nx {
                let idx = f.y_index(i, j);
                f.y_faces_mut()[idx] = seed[k % seed.len()] - 0.3 * j as f64;
                k += 1;
            }
        }
        f
    }

    proptest! {
        #[test]
        fn divergence_theorem(seed in prop::collection::vec(-5.0f64..5.0, 7..40), n in 4usize..20) {
            let g = GridSpec::new(n, n + 3, 1.7, 0.9).unwrap();
            let f = random_faces(g, &seed);
            let total = integrate(&divergence(&f).unwrap()).unwrap();
            prop_assert!(total.abs() <= 1e-13 * f.max_abs() * g.area());
        }

        #[test]
        fn summation_by_parts(seed in prop::collection::vec(-5.0f64..5.0, 7..40), gv in prop::collection::vec(-3.0f64..3.0, 1..30), n in 4usize..16) {
            let g = GridSpec::new(n, n + 1, 1.0, 2.0).unwrap();
            let f = random_faces(g, &seed);
            let gf = ScalarField::from_fn(g, |x, y| gv[((x * 7.0 + y * 13.0) as usize) % gv.len()] + x * y);
            let lhs = cell_inner(&divergence(&f).unwrap(), &gf) + face_inner(&f, &face_gradient(&gf));
            let nf = face_inner(&f, &f).sqrt();
            let ng = l2_norm(&gf);
            prop_assert!(lhs.abs() <= 1e-12 * nf * ng);
        }

        #[test]
        fn laplacian_conserves(vals in prop::collection::vec(-10.0f64..10.0, 64)) {
            let g = unit(8);
            let f = ScalarField::new(g, vals).unwrap();
            let total = integrate(&neumann_laplacian(&f)).unwrap();
            prop_assert!(total.abs() <= 1e-13 * f.max_abs());
        }
    }
}
