//! Vertex-centred structured grids on an interval or a rectangle, the
//! discrete Neumann Laplacian and the eigenpair `(λ0, Φ0)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    One,
    Two,
}

/// Uniform grid including the boundary nodes; spacing is `L / (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: Dimension,
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
}

fn check_axis(name: &str, len: f64, n: usize) -> Result<()> {
    if !(len.is_finite() && len > 0.0) {
        return Err(domain(format!("extent {name} = {len} must be finite and > 0")));
    }
    if n < 3 {
        return Err(domain(format!("axis {name} needs at least 3 points, got {n}")));
    }
    Ok(())
}

impl Grid {
    pub fn new_1d(lx: f64, nx: usize) -> Result<Self> {
        check_axis("lx", lx, nx)?;
        Ok(Self { dim: Dimension::One, lx, ly: 1.0, nx, ny: 1 })
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        check_axis("lx", lx, nx)?;
        check_axis("ly", ly, ny)?;
        Ok(Self { dim: Dimension::Two, lx, ly, nx, ny })
    }

    pub fn dimension(&self) -> Dimension {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.lx / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|Ω|`
    pub fn measure(&self) -> f64 {
        match self.dim {
            Dimension::One => self.lx,
            Dimension::Two => self.lx * self.ly,
        }
    }

    /// Coordinates of node `idx`; `y` is 0 for 1D grids.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx % self.nx, idx / self.nx);
        let y = match self.dim {
            Dimension::One => 0.0,
            Dimension::Two => j as f64 * self.hy(),
        };
        (i as f64 * self.hx(), y)
    }

    /// Product trapezoidal weights.
    pub fn weights(&self) -> Vec<f64> {
        let axis = |n: usize, h: f64| -> Vec<f64> {
            (0..n)
                .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
                .collect()
        };
        let wx = axis(self.nx, self.hx());
        match self.dim {
            Dimension::One => wx,
            Dimension::Two => {
                let wy = axis(self.ny, self.hy());
                wy.iter().flat_map(|&b| wx.iter().map(move |&a| a * b)).collect()
            }
        }
    }

    /// Assembles `diag(shift) - Δ_h` in banded form.
    pub(crate) fn shifted_operator(&self, shift: &[f64]) -> BandedMatrix {
        assert_eq!(shift.len(), self.len());
        let half_bw = match self.dim {
            Dimension::One => 1,
            Dimension::Two => self.nx,
        };
        let mut m = BandedMatrix::zeros(self.len(), half_bw);
        for (idx, &s) in shift.iter().enumerate() {
            m.add(idx, idx, s);
        }
        let mut add_axis = |stride: usize, n: usize, inv_h2: f64| {
            for idx in 0..self.len() {
                let pos = (idx / stride) % n;
                // mirror ghost node: the missing neighbour is replaced by the inner one
                let (lo, hi) = if pos == 0 {
                    (None, Some(idx + stride))
                } else if pos == n - 1 {
                    (Some(idx - stride), None)
                } else {
                    (Some(idx - stride), Some(idx + stride))
                };
                m.add(idx, idx, 2.0 * inv_h2);
                match (lo, hi) {
                    (Some(a), Some(b)) => {
                        m.add(idx, a, -inv_h2);
                        m.add(idx, b, -inv_h2);
                    }
                    (None, Some(b)) => m.add(idx, b, -2.0 * inv_h2),
                    (Some(a), None) => m.add(idx, a, -2.0 * inv_h2),
                    (None, None) => unreachable!(),
                }
            }
        };
        add_axis(1, self.nx, 1.0 / (self.hx() * self.hx()));
        if self.dim == Dimension::Two {
            add_axis(self.nx, self.ny, 1.0 / (self.hy() * self.hy()));
        }
        m
    }

    pub(crate) fn factor_shifted(&self, shift: &[f64]) -> Result<BandedLu> {
        self.shifted_operator(shift).factor()
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(domain(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(domain(format!("field contains non-finite value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(domain("fields live on different grids"));
        }
        Ok(())
    }
}

/// Second-order Neumann Laplacian with mirrored ghost nodes.
pub fn neumann_laplacian(grid: &Grid, field: &ScalarField) -> Result<ScalarField> {
    if field.grid != *grid {
        return Err(domain("field is not defined on the given grid"));
    }
    let u = &field.values;
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = vec![0.0; u.len()];
    let ihx2 = 1.0 / (grid.hx() * grid.hx());
    let second = |c: f64, lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
        (Some(a), Some(b)) => a - 2.0 * c + b,
        (None, Some(b)) | (Some(b), None) => 2.0 * (b - c),
        (None, None) => 0.0,
    };
    for j in 0..ny {
        for i in 0..nx {
            let k = i + nx * j;
            let lo = (i > 0).then(|| u[k - 1]);
            let hi = (i + 1 < nx).then(|| u[k + 1]);
            out[k] = second(u[k], lo, hi) * ihx2;
        }
    }
    if grid.dim == Dimension::Two {
        let ihy2 = 1.0 / (grid.hy() * grid.hy());
        for j in 0..ny {
            for i in 0..nx {
                let k = i + nx * j;
                let lo = (j > 0).then(|| u[k - nx]);
                let hi = (j + 1 < ny).then(|| u[k + nx]);
                out[k] += second(u[k], lo, hi) * ihy2;
            }
        }
    }
    Ok(ScalarField::from_vec_unchecked(*grid, out))
}

/// Trapezoidal quadrature of `weight * field` over Ω.
pub fn weighted_integral(grid: &Grid, weight: &ScalarField, field: &ScalarField) -> Result<f64> {
    if weight.grid != *grid || field.grid != *grid {
        return Err(domain("weight and field must live on the given grid"));
    }
    Ok(grid
        .weights()
        .iter()
        .zip(weight.values.iter().zip(&field.values))
        .map(|(w, (a, b))| w * a * b)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMode {
    /// `λ0 = 0`, `Φ0 ≡ 1`.
    #[default]
    Principal,
    /// Smallest positive eigenvalue of `-Δ_h`.
    FirstPositive,
}

impl std::str::FromStr for EigenMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "principal" => Ok(Self::Principal),
            "first_positive" => Ok(Self::FirstPositive),
            other => Err(domain(format!(
                "unknown eigen mode '{other}', expected principal or first_positive"
            ))),
        }
    }
}

impl std::fmt::Display for EigenMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Principal => "principal",
            Self::FirstPositive => "first_positive",
        })
    }
}

/// `-Δ_h Φ0 = λ0 Φ0`, with `max Φ0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda0: f64,
    pub phi0: ScalarField,
    pub mode: EigenMode,
    /// `‖Δ_h Φ0 + λ0 Φ0‖∞ / ‖Φ0‖∞`
    pub residual: f64,
}

pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITERS: usize = 2000;

pub fn principal_eigenpair(grid: &Grid, mode: EigenMode) -> Result<EigenPair> {
    match mode {
        EigenMode::Principal => Ok(EigenPair {
            lambda0: 0.0,
            phi0: ScalarField::constant(*grid, 1.0),
            mode,
            residual: 0.0,
        }),
        EigenMode::FirstPositive => first_positive(grid, EIGEN_MAX_ITERS),
    }
}

fn residual(grid: &Grid, x: &ScalarField, lambda: f64) -> Result<f64> {
    let lap = neumann_laplacian(grid, x)?;
    let r = lap
        .values
        .iter()
        .zip(&x.values)
        .fold(0.0f64, |m, (l, v)| m.max((l + lambda * v).abs()));
    Ok(r / x.sup_norm())
}

/// Inverse iteration on `-Δ_h + s` with the constant mode projected out in
/// the quadrature inner product (the operator is self-adjoint there).
fn first_positive(grid: &Grid, max_iters: usize) -> Result<EigenPair> {
    let w = grid.weights();
    let total: f64 = w.iter().sum();
    let deflate = |x: &mut [f64]| {
        let mean = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
        x.iter_mut().for_each(|v| *v -= mean);
    };
    let wnorm = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * a * b).sum::<f64>().sqrt();

    let lmax = grid.lx.max(if grid.dim == Dimension::Two { grid.ly } else { 0.0 });
    let shift = 1e-2 * (std::f64::consts::PI / lmax).powi(2);
    let lu = grid.factor_shifted(&vec![shift; grid.len()])?;

    let mut x: Vec<f64> = (0..grid.len())
        .map(|i| {
            let (px, py) = grid.coords(i);
            px / grid.lx + 0.37 * py / grid.ly
        })
        .collect();
    deflate(&mut x);

    let mut lambda = f64::NAN;
    let mut res = f64::INFINITY;
    for _ in 0..max_iters {
        let mut y = lu.solve(&x);
        deflate(&mut y);
        let n = wnorm(&y);
        if !(n.is_finite() && n > 0.0) {
            break;
        }
        y.iter_mut().for_each(|v| *v /= n);
        x = y;
        let field = ScalarField::from_vec_unchecked(*grid, x.clone());
        let lap = neumann_laplacian(grid, &field)?;
        // Rayleigh quotient <x, -Δx>_W / <x, x>_W with <x, x>_W = 1
        lambda = -lap.values.iter().zip(&x).zip(&w).map(|((l, v), q)| l * v * q).sum::<f64>();
        res = residual(grid, &field, lambda)?;
        if res <= EIGEN_RESIDUAL_TOL {
            let peak = x
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            let phi0 = field.map(|v| v / peak);
            return Ok(EigenPair { lambda0: lambda, phi0, mode: EigenMode::FirstPositive, residual: res });
        }
    }
    Err(Error::Numerical {
        message: format!("inverse iteration did not converge, last eigenvalue estimate {lambda}"),
        residual: res,
    })
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Writes one row per grid node: leading constant columns, coordinates, then
/// one column per field. A header row is written when `header` is set.
pub fn write_fields_csv<W: Write>(
    out: &mut W,
    leading: &[(&str, f64)],
    fields: &[(&str, &ScalarField)],
    header: bool,
) -> io::Result<()> {
    let Some((_, first)) = fields.first() else {
        return Ok(());
    };
    let grid = first.grid;
    let two_d = grid.dim == Dimension::Two;
    if header {
        let mut cols: Vec<&str> = leading.iter().map(|(n, _)| *n).collect();
        cols.push("x");
        if two_d {
            cols.push("y");
        }
        cols.extend(fields.iter().map(|(n, _)| *n));
        writeln!(out, "{}", cols.join(","))?;
    }
    for idx in 0..grid.len() {
        let (x, y) = grid.coords(idx);
        let mut row: Vec<String> = leading.iter().map(|(_, v)| fmt_num(*v)).collect();
        row.push(fmt_num(x));
        if two_d {
            row.push(fmt_num(y));
        }
        row.extend(fields.iter().map(|(_, f)| fmt_num(f.values[idx])));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_validation() {
        assert!(Grid::new_1d(1.0, 2).is_err());
        assert!(Grid::new_1d(0.0, 5).is_err());
        assert!(Grid::new_2d(1.0, -1.0, 5, 5).is_err());
        let g = Grid::new_2d(2.0, 3.0, 5, 7).unwrap();
        assert_eq!(g.len(), 35);
        assert_relative_eq!(g.hx(), 0.5);
        assert_relative_eq!(g.hy(), 0.5);
    }

    #[test]
    fn weights_sum_to_measure() {
        for g in [
            Grid::new_1d(2.0, 17).unwrap(),
            Grid::new_2d(1.5, 0.7, 9, 13).unwrap(),
        ] {
            let s: f64 = g.weights().iter().sum();
            assert!((s - g.measure()).abs() <= 1e-12 * g.measure());
        }
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = Grid::new_2d(1.0, 2.0, 9, 11).unwrap();
        let lap = neumann_laplacian(&g, &ScalarField::constant(g, 3.5)).unwrap();
        assert!(lap.sup_norm() < 1e-10);
    }

    #[test]
    fn laplacian_of_cosine_is_second_order() {
        let errs: Vec<f64> = [33usize, 65]
            .iter()
            .map(|&n| {
                let g = Grid::new_1d(PI, n).unwrap();
                let f = ScalarField::from_fn(g, |x, _| x.cos()).unwrap();
                let lap = neumann_laplacian(&g, &f).unwrap();
                lap.values().iter().zip(f.values()).fold(0.0f64, |m, (l, c)| m.max((l + c).abs()))
            })
            .collect();
        assert!(errs[0] < 1e-3);
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.9, "observed order {order}");
    }

    #[test]
    fn laplacian_of_quadratic_in_2d_interior() {
        let g = Grid::new_2d(1.0, 1.0, 11, 11).unwrap();
        let f = ScalarField::from_fn(g, |x, _| x * x).unwrap();
        let lap = neumann_laplacian(&g, &f).unwrap();
        for j in 1..10 {
            for i in 1..10 {
                assert_relative_eq!(lap.values()[i + 11 * j], 2.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn laplacian_rejects_foreign_field() {
        let g = Grid::new_1d(1.0, 5).unwrap();
        let h = Grid::new_1d(1.0, 6).unwrap();
        assert!(neumann_laplacian(&g, &ScalarField::zeros(h)).is_err());
    }

    #[test]
    fn operator_matches_stencil() {
        let g = Grid::new_2d(1.0, 1.3, 6, 5).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() + y * y * x).unwrap();
        let shift = vec![0.25; g.len()];
        let ax = g.shifted_operator(&shift).mul_vec(f.values());
        let lap = neumann_laplacian(&g, &f).unwrap();
        for i in 0..g.len() {
            assert_relative_eq!(ax[i], 0.25 * f.values()[i] - lap.values()[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn weighted_integral_examples() {
        let g = Grid::new_1d(2.0, 9).unwrap();
        let one = ScalarField::constant(g, 1.0);
        assert_relative_eq!(weighted_integral(&g, &one, &one).unwrap(), 2.0, epsilon = 1e-14);

        let g = Grid::new_1d(1.0, 17).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let x = ScalarField::from_fn(g, |x, _| x).unwrap();
        assert!((weighted_integral(&g, &one, &x).unwrap() - 0.5).abs() <= 1e-12);

        let zero = ScalarField::zeros(g);
        assert_eq!(weighted_integral(&g, &zero, &zero).unwrap(), 0.0);

        let other = Grid::new_1d(1.0, 9).unwrap();
        assert!(weighted_integral(&g, &one, &ScalarField::zeros(other)).is_err());
    }

    #[test]
    fn principal_mode_is_constant() {
        let g = Grid::new_2d(1.0, 2.0, 5, 6).unwrap();
        let e = principal_eigenpair(&g, EigenMode::Principal).unwrap();
        assert_eq!(e.lambda0, 0.0);
        assert!(e.phi0.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn first_positive_on_interval() {
        let g = Grid::new_1d(PI, 257).unwrap();
        let e = principal_eigenpair(&g, EigenMode::FirstPositive).unwrap();
        assert!((e.lambda0 - 1.0).abs() < 1e-3);
        assert_relative_eq!(e.phi0.max(), 1.0, epsilon = 1e-15);

        let g = Grid::new_1d(1.0, 257).unwrap();
        let e = principal_eigenpair(&g, EigenMode::FirstPositive).unwrap();
        assert!((e.lambda0 - PI * PI).abs() / (PI * PI) < 1e-2);

        let lap = neumann_laplacian(&g, &e.phi0).unwrap();
        let r = lap
            .values()
            .iter()
            .zip(e.phi0.values())
            .fold(0.0f64, |m, (l, p)| m.max((l + e.lambda0 * p).abs()));
        assert!(r <= 1e-6 * e.phi0.sup_norm());
    }

    #[test]
    fn first_positive_on_rectangle() {
        let g = Grid::new_2d(2.0, 1.0, 33, 17).unwrap();
        let e = principal_eigenpair(&g, EigenMode::FirstPositive).unwrap();
        let exact = (PI / 2.0).powi(2);
        assert!((e.lambda0 - exact).abs() / exact < 1e-2, "{}", e.lambda0);
        assert!(e.residual <= EIGEN_RESIDUAL_TOL);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let g = Grid::new_2d(1.0, 1.0, 3, 3).unwrap();
        let f = ScalarField::constant(g, 0.5);
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &[("t", 0.0)], &[("u", &f)], true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,y,u");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[9], "0,1,1,0.5");
    }

    proptest! {
        #[test]
        fn divergence_and_symmetry(seed in any::<u64>(), two_d in any::<bool>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = if two_d { Grid::new_2d(1.3, 0.8, 9, 7).unwrap() } else { Grid::new_1d(2.1, 21).unwrap() };
            let f = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let h = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let one = ScalarField::constant(g, 1.0);
            let lf = neumann_laplacian(&g, &f).unwrap();
            let lh = neumann_laplacian(&g, &h).unwrap();
            let flux = weighted_integral(&g, &one, &lf).unwrap();
            prop_assert!(flux.abs() <= 1e-10 * f.sup_norm() * lf.sup_norm().max(1.0));
            let a = weighted_integral(&g, &lf, &h).unwrap();
            let b = weighted_integral(&g, &f, &lh).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
        }
    }
}
