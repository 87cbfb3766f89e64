//! Curvature profiles, framed curves and the frame ODE `r' = A r`,
//! `y' = d1`, with `A13 = mu`, `A23 = tau` and all other entries fixed by
//! skew symmetry (so `A12 = 0` and `d1'.d2 = 0` hold by construction).

use std::io::{self, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::fmt17;
use crate::rotation::{exp_so3, left_jacobian, Rotation};

/// Default admissibility tolerance (position in units of `ell`, rotation in
/// Frobenius norm).
pub const ADMISSIBLE_TOL: f64 = 1e-7;

/// How the per-sample values of a [`CurvatureProfile`] are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// One value per cell.
    PiecewiseConstant,
    /// One value per node, linear in between.
    NodalLinear,
}

/// Sampled `(mu, tau)` on a grid `0 = t_0 < ... < t_N = ell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    grid: Vec<f64>,
    mu: Vec<f64>,
    tau: Vec<f64>,
    interp: Interpolation,
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    validate_increasing(grid)?;
    if grid[0] != 0.0 {
        return Err(Error::InvalidGrid(format!("grid must start at 0, got {}", grid[0])));
    }
    Ok(())
}

fn validate_increasing(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid("need at least two nodes".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("grid"));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "grid not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

pub(crate) fn uniform_grid(ell: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == n { ell } else { ell * i as f64 / n as f64 })
        .collect()
}

/// Index of the cell containing `t`, clamped to the grid.
pub(crate) fn locate(grid: &[f64], t: f64) -> usize {
    let n = grid.len() - 1;
    match grid.binary_search_by(|g| g.total_cmp(&t)) {
        Ok(i) => i.min(n - 1),
        Err(0) => 0,
        Err(i) => (i - 1).min(n - 1),
    }
}

impl CurvatureProfile {
    pub fn new(grid: Vec<f64>, mu: Vec<f64>, tau: Vec<f64>, interp: Interpolation) -> Result<Self> {
        validate_grid(&grid)?;
        let expected = match interp {
            Interpolation::PiecewiseConstant => grid.len() - 1,
            Interpolation::NodalLinear => grid.len(),
        };
        for (what, v) in [("mu", &mu), ("tau", &tau)] {
            if v.len() != expected {
                return Err(Error::LengthMismatch { what, expected, got: v.len() });
            }
        }
        if mu.iter().chain(tau.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curvature values"));
        }
        Ok(CurvatureProfile { grid, mu, tau, interp })
    }

    pub fn piecewise_constant(grid: Vec<f64>, mu: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        Self::new(grid, mu, tau, Interpolation::PiecewiseConstant)
    }

    /// Constant `(mu, tau)` on `n` uniform cells.
    pub fn constant(ell: f64, n: usize, mu: f64, tau: f64) -> Result<Self> {
        Self::from_cell_fn(ell, n, |_| (mu, tau))
    }

    /// Piecewise-constant profile on `n` uniform cells sampled at midpoints.
    pub fn from_cell_fn(ell: f64, n: usize, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        if !(ell > 0.0) || n == 0 {
            return Err(Error::InvalidGrid(format!("ell = {ell}, n = {n}")));
        }
        let grid = uniform_grid(ell, n);
        let (mu, tau) = grid.windows(2).map(|w| f(0.5 * (w[0] + w[1]))).unzip();
        Self::piecewise_constant(grid, mu, tau)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interp
    }

    pub fn length(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        self.grid[i + 1] - self.grid[i]
    }

    /// `(mu, tau)` at the midpoint of cell `i`.
    pub fn cell_values(&self, i: usize) -> (f64, f64) {
        match self.interp {
            Interpolation::PiecewiseConstant => (self.mu[i], self.tau[i]),
            Interpolation::NodalLinear => (
                0.5 * (self.mu[i] + self.mu[i + 1]),
                0.5 * (self.tau[i] + self.tau[i + 1]),
            ),
        }
    }

    /// `(mu, tau)` at an arbitrary `t`, clamped to `[0, ell]`.
    pub fn value_at(&self, t: f64) -> (f64, f64) {
        let i = locate(&self.grid, t);
        match self.interp {
            Interpolation::PiecewiseConstant => (self.mu[i], self.tau[i]),
            Interpolation::NodalLinear => {
                let s = ((t - self.grid[i]) / self.cell_width(i)).clamp(0.0, 1.0);
                (
                    self.mu[i] + s * (self.mu[i + 1] - self.mu[i]),
                    self.tau[i] + s * (self.tau[i + 1] - self.tau[i]),
                )
            }
        }
    }

    /// Angular velocity of the frame on cell `i`: `A = [w]x` with `w = (-tau, mu, 0)`.
    pub fn cell_omega(&self, i: usize) -> Vector3<f64> {
        let (mu, tau) = self.cell_values(i);
        omega(mu, tau)
    }

    /// Cell averages on `n` uniform cells (exact averages for piecewise
    /// constant input, midpoint values otherwise).
    pub fn resample_uniform(&self, n: usize) -> Result<CurvatureProfile> {
        let ell = self.length();
        let grid = uniform_grid(ell, n);
        let mut mu = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            match self.interp {
                Interpolation::PiecewiseConstant => {
                    let (mut sm, mut st) = (0.0, 0.0);
                    let mut j = locate(&self.grid, a);
                    while j < self.n_cells() && self.grid[j] < b {
                        let lo = self.grid[j].max(a);
                        let hi = self.grid[j + 1].min(b);
                        if hi > lo {
                            sm += self.mu[j] * (hi - lo);
                            st += self.tau[j] * (hi - lo);
                        }
                        j += 1;
                    }
                    mu.push(sm / (b - a));
                    tau.push(st / (b - a));
                }
                Interpolation::NodalLinear => {
                    let (m, t) = self.value_at(0.5 * (a + b));
                    mu.push(m);
                    tau.push(t);
                }
            }
        }
        CurvatureProfile::piecewise_constant(grid, mu, tau)
    }

    /// Piecewise-constant copy with the given per-cell values on the same grid.
    pub fn with_cell_values(&self, mu: Vec<f64>, tau: Vec<f64>) -> Result<CurvatureProfile> {
        CurvatureProfile::piecewise_constant(self.grid.clone(), mu, tau)
    }
}

pub(crate) fn omega(mu: f64, tau: f64) -> Vector3<f64> {
    Vector3::new(-tau, mu, 0.0)
}

/// Exact step of the frame ODE over a cell of width `h` with constant `w`.
/// Returns the rotation factor `E` (`r_next = E r`) and the centerline
/// increment expressed in the body frame of the cell start (`dy = r^T b`).
pub(crate) fn cell_step(w: &Vector3<f64>, h: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let e = exp_so3(&(w * h));
    let body = left_jacobian(&(-w * h)) * Vector3::x() * h;
    (e, body)
}

/// Centerline points and director frames at the grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramedCurve {
    grid: Vec<f64>,
    y: Vec<Vector3<f64>>,
    r: Vec<Rotation>,
}

impl FramedCurve {
    pub fn new(grid: Vec<f64>, y: Vec<Vector3<f64>>, r: Vec<Rotation>) -> Result<Self> {
        validate_increasing(&grid)?;
        for (what, len) in [("centerline", y.len()), ("rotations", r.len())] {
            if len != grid.len() {
                return Err(Error::LengthMismatch { what, expected: grid.len(), got: len });
            }
        }
        if y.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("centerline"));
        }
        Ok(FramedCurve { grid, y, r })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn y(&self) -> &[Vector3<f64>] {
        &self.y
    }

    pub fn r(&self) -> &[Rotation] {
        &self.r
    }

    /// Arclength between the first and last node.
    pub fn length(&self) -> f64 {
        self.grid[self.grid.len() - 1] - self.grid[0]
    }

    pub fn end(&self) -> (Vector3<f64>, Rotation) {
        (*self.y.last().unwrap(), *self.r.last().unwrap())
    }

    /// Writes `t,y1,y2,y3,d11,...,d33` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,y1,y2,y3,d11,d12,d13,d21,d22,d23,d31,d32,d33")?;
        for ((t, y), r) in self.grid.iter().zip(&self.y).zip(&self.r) {
            let mut fields = vec![fmt17(*t), fmt17(y.x), fmt17(y.y), fmt17(y.z)];
            for d in [r.d1(), r.d2(), r.d3()] {
                fields.extend(d.iter().map(|v| fmt17(*v)));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Integrates the frame ODE cell by cell with the exact rotation exponential
/// (midpoint angular velocity for nodal-linear profiles) and the closed-form
/// integral of `d1` over each cell.
pub fn integrate_frame(profile: &CurvatureProfile, r0: Rotation, y0: Vector3<f64>) -> Result<FramedCurve> {
    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial point"));
    }
    let n = profile.n_cells();
    let mut y = Vec::with_capacity(n + 1);
    let mut r = Vec::with_capacity(n + 1);
    y.push(y0);
    r.push(r0);
    let (mut yc, mut rc) = (y0, r0);
    for i in 0..n {
        let (e, body) = cell_step(&profile.cell_omega(i), profile.cell_width(i));
        yc += rc.matrix().transpose() * body;
        rc = rc.premul(&e);
        y.push(yc);
        r.push(rc);
    }
    FramedCurve::new(profile.grid.clone(), y, r)
}

/// Frame and centerline at arbitrary `t` inside the grid, consistent with
/// [`integrate_frame`] on every cell.
pub fn frame_at(profile: &CurvatureProfile, fc: &FramedCurve, t: f64) -> (Vector3<f64>, Rotation) {
    let i = locate(&profile.grid, t);
    let s = (t - profile.grid[i]).clamp(0.0, profile.cell_width(i));
    let (e, body) = cell_step(&profile.cell_omega(i), s);
    let ri = fc.r[i];
    let y = fc.y[i] + ri.matrix().transpose() * body;
    (y, Rotation::from_matrix_unchecked(e * ri.matrix()))
}

/// Endpoint `y(ell)` of the curve started at the origin with `r(0) = I`.
pub fn gamma_of(profile: &CurvatureProfile) -> Result<Vector3<f64>> {
    let fc = integrate_frame(profile, Rotation::identity(), Vector3::zeros())?;
    Ok(fc.end().0)
}

/// Clamped boundary data: `y(0) = 0`, `r(0) = I`, `y(ell) = y_bar`, `r(ell) = r_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub ell: f64,
    pub y_bar: Vector3<f64>,
    pub r_bar: Rotation,
}

impl BoundaryData {
    pub fn new(ell: f64, y_bar: Vector3<f64>, r_bar: Rotation) -> Result<Self> {
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::Precondition(format!("length must be positive, got {ell}")));
        }
        if !y_bar.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("end point"));
        }
        Rotation::from_matrix(*r_bar.matrix(), 1e-9)?;
        Ok(BoundaryData { ell, y_bar, r_bar })
    }

    /// Closed band with a half twist: `y_bar = 0`, `r_bar = diag(1, -1, -1)`.
    pub fn mobius(ell: f64) -> Result<Self> {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        Self::new(ell, Vector3::zeros(), Rotation::from_matrix_unchecked(r))
    }

    /// Boundary data realized by the end of a curve.
    pub fn of_curve(fc: &FramedCurve) -> Result<Self> {
        let (y, r) = fc.end();
        Self::new(fc.length(), y, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub ok: bool,
    /// `|y(ell) - y_bar| / ell`.
    pub pos_err: f64,
    /// `|r(ell) - r_bar|_F`.
    pub rot_err: f64,
}

impl AdmissibilityReport {
    /// Compares the ends of a framed curve with the boundary data. The start
    /// must sit at the origin with the identity frame.
    pub fn of_curve(fc: &FramedCurve, bd: &BoundaryData, tol: f64) -> Result<Self> {
        let ell = fc.length();
        if (ell - bd.ell).abs() > 1e-12 * bd.ell.max(1.0) {
            return Err(Error::Precondition(format!(
                "curve length {ell} does not match boundary data length {}",
                bd.ell
            )));
        }
        let start_err = fc.y[0].norm() / ell + fc.r[0].distance(&Rotation::identity());
        let (y, r) = fc.end();
        let pos_err = (y - bd.y_bar).norm() / ell + start_err;
        let rot_err = r.distance(&bd.r_bar);
        Ok(AdmissibilityReport { ok: pos_err <= tol && rot_err <= tol, pos_err, rot_err })
    }
}

pub fn is_admissible(profile: &CurvatureProfile, bd: &BoundaryData, tol: f64) -> Result<AdmissibilityReport> {
    let fc = integrate_frame(profile, Rotation::identity(), Vector3::zeros())?;
    AdmissibilityReport::of_curve(&fc, bd, tol)
}

/// Max over interior nodes of `|d1'.d2|` with central differences.
pub fn constraint_residual(fc: &FramedCurve) -> Result<f64> {
    let n = fc.grid.len();
    if n < 3 {
        return Err(Error::InvalidGrid("need at least three nodes".into()));
    }
    Ok((1..n - 1)
        .map(|i| {
            let d1p = (fc.r[i + 1].d1() - fc.r[i - 1].d1()) / (fc.grid[i + 1] - fc.grid[i - 1]);
            d1p.dot(&fc.r[i].d2()).abs()
        })
        .fold(0.0, f64::max))
}

/// Smallest singular value of the `3 x N` matrix of tangents `d1(t_i)`,
/// divided by `sqrt(N)`. Zero iff all tangents lie in a plane through the
/// origin, i.e. iff the centerline is planar.
pub fn planarity_measure(fc: &FramedCurve) -> f64 {
    let n = fc.r.len();
    let mut gram = Matrix3::zeros();
    for r in &fc.r {
        let d = r.d1();
        gram += d * d.transpose();
    }
    gram /= n as f64;
    let ev = gram.symmetric_eigenvalues();
    ev.min().max(0.0).sqrt()
}

/// Classification of boundary data by the set of admissible frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rigidity {
    /// No admissible frame.
    Empty,
    /// Only the straight, untwisted strip.
    RigidOnly,
    /// Admissible frames exist and can be deformed.
    Nontrivial,
}

pub fn rigidity_check(bd: &BoundaryData) -> Rigidity {
    let ell = bd.ell;
    let dist = bd.y_bar.norm();
    let eq_tol = 1e-12 * ell;
    if dist > ell + eq_tol {
        return Rigidity::Empty;
    }
    if (dist - ell).abs() <= eq_tol {
        let straight = (bd.y_bar - Vector3::x() * ell).norm() <= eq_tol;
        let frame_ok = bd.r_bar.distance(&Rotation::identity()) <= 1e-12;
        return if straight && frame_ok { Rigidity::RigidOnly } else { Rigidity::Empty };
    }
    Rigidity::Nontrivial
}
