//! Rank-one approximation of a relaxed field `M`: spectral splitting,
//! oscillating laminates `lambda p (x) p` with the same relaxed energy,
//! mollification of the direction angle, and a shooting correction that
//! restores the clamped boundary conditions.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector2, Vector3, Vector6};

use crate::curveframe::{
    cell_step, integrate_frame, is_admissible, locate, omega, uniform_grid, validate_grid, BoundaryData,
    CurvatureProfile,
};
use crate::energy::{relaxed_f, SymField};
use crate::error::{Error, Result};
use crate::rotation::{log_so3, Rotation};

/// Cells with `|M11|` below this are pushed to `+-MU_FLOOR`.
pub const MU_FLOOR: f64 = 1e-8;
/// Shooting tolerance on the 6-vector residual (radians, units of `ell`).
const SHOOT_TOL: f64 = 1e-11;
const SHOOT_MAX_ITER: usize = 200;
const FD_STEP: f64 = 1e-6;
/// Tolerance used to accept the input field as admissible.
pub const INPUT_ADMISSIBLE_TOL: f64 = 1e-6;

/// Per-cell spectral splitting `M = Lambda (s1 theta a(x)a + s2 (1 - theta) b(x)b)`
/// with `b = a~`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCell {
    pub lambda_sum: f64,
    pub theta: f64,
    pub a: Vector2<f64>,
    pub a_tilde: Vector2<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl SpectralCell {
    pub fn reconstruct(&self) -> (f64, f64, f64) {
        let w1 = self.lambda_sum * self.sigma1 * self.theta;
        let w2 = self.lambda_sum * self.sigma2 * (1.0 - self.theta);
        let (a, b) = (self.a, self.a_tilde);
        (
            w1 * a.x * a.x + w2 * b.x * b.x,
            w1 * a.x * a.y + w2 * b.x * b.y,
            w1 * a.y * a.y + w2 * b.y * b.y,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    grid: Vec<f64>,
    cells: Vec<SpectralCell>,
}

impl SpectralData {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cells(&self) -> &[SpectralCell] {
        &self.cells
    }

    pub fn length(&self) -> f64 {
        *self.grid.last().unwrap()
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Eigen-splitting of one symmetric 2x2 matrix.
pub fn spectral_cell(m11: f64, m12: f64, m22: f64) -> Result<SpectralCell> {
    if m11 == 0.0 && m12 == 0.0 && m22 == 0.0 {
        return Err(Error::Precondition("zero matrix cell".into()));
    }
    let mean = 0.5 * (m11 + m22);
    let rad = (0.25 * (m11 - m22).powi(2) + m12 * m12).sqrt();
    let (l_hi, l_lo) = (mean + rad, mean - rad);
    let eigvec = |l: f64| -> Vector2<f64> {
        // rows of M - l I are orthogonal to the eigenvector; use the larger one
        let r1 = Vector2::new(m11 - l, m12);
        let r2 = Vector2::new(m12, m22 - l);
        let r = if r1.norm() >= r2.norm() { r1 } else { r2 };
        if r.norm() == 0.0 {
            Vector2::x()
        } else {
            Vector2::new(-r.y, r.x).normalize()
        }
    };
    let mut v_hi = eigvec(l_hi);
    let mut v_lo = if rad == 0.0 { Vector2::new(-v_hi.y, v_hi.x) } else { eigvec(l_lo) };
    v_hi *= sign(v_hi.x);
    v_lo *= sign(v_lo.x);
    // a maximizes a.e1; ties go to the larger eigenvalue
    let (a, la, lb) = if v_lo.x > v_hi.x { (v_lo, l_lo, l_hi) } else { (v_hi, l_hi, l_lo) };
    let a_perp = Vector2::new(-a.y, a.x);
    let a_tilde = if a.y < 0.0 { a_perp } else { -a_perp };
    let lambda_sum = la.abs() + lb.abs();
    Ok(SpectralCell {
        lambda_sum,
        theta: la.abs() / lambda_sum,
        a,
        a_tilde,
        sigma1: sign(la),
        sigma2: sign(lb),
    })
}

pub fn spectral_decompose(m: &SymField) -> Result<SpectralData> {
    let cells = (0..m.n_cells())
        .map(|i| {
            let (a, b, c) = m.cell(i);
            spectral_cell(a, b, c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralData { grid: m.grid().to_vec(), cells })
}

/// Lower bounds carried along the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBounds {
    /// `min |lambda|`.
    pub lambda: f64,
    /// `min p.e1`.
    pub p1: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Samples {
    /// Per-cell `lambda` and direction angle.
    Cells { lambda: Vec<f64>, angle: Vec<f64> },
    /// Nodal `|lambda|`, angle and their derivatives (cubic Hermite in
    /// between) with a per-cell sign of `lambda`.
    Nodes {
        magnitude: Vec<f64>,
        magnitude_rate: Vec<f64>,
        angle: Vec<f64>,
        angle_rate: Vec<f64>,
        sign: Vec<f64>,
    },
}

/// `M = lambda p (x) p` with `p = (cos angle, sin angle)`, `|angle| < pi/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneProfile {
    grid: Vec<f64>,
    samples: Samples,
    bounds: LowerBounds,
}

fn hermite(f0: f64, d0: f64, f1: f64, d1: f64, h: f64, s: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let v = f0 + (3.0 * s2 - 2.0 * s3) * (f1 - f0) + (s3 - 2.0 * s2 + s) * h * d0 + (s3 - s2) * h * d1;
    let dv = ((6.0 * s2 - 6.0 * s) * (f0 - f1)) / h + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1;
    (v, dv)
}

/// Pointwise state of a rank-one profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOnePoint {
    pub lambda: f64,
    pub angle: f64,
    /// `d angle / dt` (zero for piecewise-constant profiles).
    pub angle_rate: f64,
    /// `d lambda / dt` (zero for piecewise-constant profiles).
    pub lambda_rate: f64,
}

impl RankOnePoint {
    pub fn p(&self) -> Vector2<f64> {
        Vector2::new(self.angle.cos(), self.angle.sin())
    }

    /// `(A13, A23) = lambda (p1^2, p1 p2)`.
    pub fn a(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (self.lambda * c * c, self.lambda * c * s)
    }
}

impl RankOneProfile {
    /// The flat strip: `lambda = 0`, `p = e1` on `[0, ell]`.
    pub fn flat(ell: f64) -> Result<Self> {
        let grid = vec![0.0, ell];
        validate_grid(&grid)?;
        let samples = Samples::Nodes {
            magnitude: vec![0.0; 2],
            magnitude_rate: vec![0.0; 2],
            angle: vec![0.0; 2],
            angle_rate: vec![0.0; 2],
            sign: vec![1.0],
        };
        Ok(RankOneProfile { grid, samples, bounds: LowerBounds { lambda: 0.0, p1: 1.0 } })
    }

    /// Piecewise-constant profile from per-cell `lambda` and angle.
    pub fn piecewise_constant(grid: Vec<f64>, lambda: Vec<f64>, angle: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        let n = grid.len() - 1;
        for (what, v) in [("lambda", &lambda), ("angle", &angle)] {
            if v.len() != n {
                return Err(Error::LengthMismatch { what, expected: n, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(what));
            }
        }
        if angle.iter().any(|a| a.abs() >= std::f64::consts::FRAC_PI_2) {
            return Err(Error::Precondition("direction must satisfy p.e1 > 0".into()));
        }
        let bounds = LowerBounds {
            lambda: lambda.iter().fold(f64::INFINITY, |m, l| m.min(l.abs())),
            p1: angle.iter().fold(f64::INFINITY, |m, a| m.min(a.cos())),
        };
        if bounds.lambda == 0.0 {
            return Err(Error::Precondition("lambda must not vanish".into()));
        }
        Ok(RankOneProfile { grid, samples: Samples::Cells { lambda, angle }, bounds })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn length(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self.samples, Samples::Nodes { .. })
    }

    pub fn lower_bounds(&self) -> LowerBounds {
        self.bounds
    }

    /// Widths of the end regions where `p = e1` exactly.
    pub fn collar_widths(&self) -> (f64, f64) {
        let n = self.n_cells();
        let flat = |i: usize| match &self.samples {
            Samples::Cells { angle, .. } => angle[i] == 0.0,
            Samples::Nodes { angle, angle_rate, .. } => {
                angle[i] == 0.0 && angle[i + 1] == 0.0 && angle_rate[i] == 0.0 && angle_rate[i + 1] == 0.0
            }
        };
        let left = (0..n).find(|&i| !flat(i)).map_or(self.length(), |i| self.grid[i]);
        let right = (0..n).rev().find(|&i| !flat(i)).map_or(self.length(), |i| self.length() - self.grid[i + 1]);
        (left, right)
    }

    fn point_in_cell(&self, i: usize, t: f64) -> RankOnePoint {
        match &self.samples {
            Samples::Cells { lambda, angle } => RankOnePoint { lambda: lambda[i], angle: angle[i], angle_rate: 0.0, lambda_rate: 0.0 },
            Samples::Nodes { magnitude, magnitude_rate, angle, angle_rate, sign } => {
                let h = self.grid[i + 1] - self.grid[i];
                let s = ((t - self.grid[i]) / h).clamp(0.0, 1.0);
                let (m, dm) = hermite(magnitude[i], magnitude_rate[i], magnitude[i + 1], magnitude_rate[i + 1], h, s);
                let (a, da) = hermite(angle[i], angle_rate[i], angle[i + 1], angle_rate[i + 1], h, s);
                RankOnePoint { lambda: sign[i] * m, angle: a, angle_rate: da, lambda_rate: sign[i] * dm }
            }
        }
    }

    /// State at `t`, clamped to `[0, ell]`.
    pub fn at(&self, t: f64) -> RankOnePoint {
        self.point_in_cell(locate(&self.grid, t), t)
    }

    /// State at the midpoint of cell `i`.
    pub fn cell_midpoint(&self, i: usize) -> RankOnePoint {
        self.point_in_cell(i, 0.5 * (self.grid[i] + self.grid[i + 1]))
    }

    /// Piecewise-constant curvature profile `A` sampled at cell midpoints.
    pub fn induced_profile(&self) -> Result<CurvatureProfile> {
        let (mu, tau) = (0..self.n_cells()).map(|i| self.cell_midpoint(i).a()).unzip();
        CurvatureProfile::piecewise_constant(self.grid.clone(), mu, tau)
    }

    /// `M = lambda p (x) p` sampled at cell midpoints; `M22` equals `gamma_A`.
    pub fn to_sym_field(&self) -> Result<SymField> {
        let n = self.n_cells();
        let (mut m11, mut m12, mut m22) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let q = self.cell_midpoint(i);
            let p = q.p();
            m11.push(q.lambda * p.x * p.x);
            m12.push(q.lambda * p.x * p.y);
            m22.push(q.lambda * p.y * p.y);
        }
        SymField::new(self.grid.clone(), m11, m12, m22)
    }

    /// `relaxed_F` of [`RankOneProfile::to_sym_field`], i.e. `int lambda^2`.
    pub fn energy(&self) -> f64 {
        (0..self.n_cells())
            .map(|i| {
                let l = self.cell_midpoint(i).lambda;
                l * l * (self.grid[i + 1] - self.grid[i])
            })
            .sum()
    }
}

/// Laminate with the collar `[0, ell/n] u [ell - ell/n, ell]`.
pub fn build_laminate(sd: &SpectralData, n: usize) -> Result<RankOneProfile> {
    build_laminate_with_collar(sd, n, sd.length() / n as f64)
}

/// Laminate with `n` periods of length `ell / n` laid over the whole
/// interval. Inside each period (cut at cell boundaries) the phase with
/// direction `a` takes the central fraction `theta` and `a~` the two outer
/// halves of `1 - theta`. On the collar `p = e1` and the sign of `lambda`
/// oscillates with duty `(1 + M11 / Lambda) / 2`, so `A13` keeps its weak limit.
pub fn build_laminate_with_collar(sd: &SpectralData, n: usize, collar: f64) -> Result<RankOneProfile> {
    if n < 4 {
        return Err(Error::Precondition(format!("laminate needs n >= 4, got {n}")));
    }
    let ell = sd.length();
    if !(collar > 0.0 && collar <= ell / 4.0) {
        return Err(Error::Precondition(format!("collar width {collar} outside (0, ell/4]")));
    }
    let mut cuts: Vec<f64> = uniform_grid(ell, n);
    cuts.extend_from_slice(&sd.grid);
    cuts.push(collar);
    cuts.push(ell - collar);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * ell);

    let mut grid = vec![0.0];
    let mut lambda = Vec::new();
    let mut angle = Vec::new();
    let min_frac = 1e-12;
    for w in cuts.windows(2) {
        let (u, v) = (w[0], w[1]);
        let mid = 0.5 * (u + v);
        let cell = &sd.cells[locate(&sd.grid, mid)];
        let (m11, _, _) = cell.reconstruct();
        let in_collar = mid < collar || mid > ell - collar;
        let (inner_frac, inner, outer) = if in_collar {
            let duty = (0.5 * (1.0 + m11 / cell.lambda_sum)).clamp(0.0, 1.0);
            (duty, (cell.lambda_sum, 0.0), (-cell.lambda_sum, 0.0))
        } else {
            let ang = |p: &Vector2<f64>| p.y.atan2(p.x);
            (
                cell.theta,
                (cell.sigma1 * cell.lambda_sum, ang(&cell.a)),
                (cell.sigma2 * cell.lambda_sum, ang(&cell.a_tilde)),
            )
        };
        let mut phases: Vec<(f64, (f64, f64))> = Vec::with_capacity(3);
        if inner_frac >= 1.0 - min_frac {
            phases.push((1.0, inner));
        } else if inner_frac <= min_frac {
            phases.push((1.0, outer));
        } else {
            let side = 0.5 * (1.0 - inner_frac);
            phases.extend([(side, outer), (inner_frac, inner), (side, outer)]);
        }
        let mut at = u;
        for (k, (frac, (l, a))) in phases.iter().enumerate() {
            let end = if k + 1 == phases.len() { v } else { at + frac * (v - u) };
            if end > at {
                grid.push(end);
                lambda.push(*l);
                angle.push(*a);
                at = end;
            }
        }
    }
    *grid.last_mut().unwrap() = ell;
    if angle.iter().any(|a| a.abs() >= std::f64::consts::FRAC_PI_2 - 1e-15) {
        return Err(Error::Precondition(
            "laminate direction orthogonal to e1 (diagonal M with two nonzero eigenvalues)".into(),
        ));
    }
    RankOneProfile::piecewise_constant(grid, lambda, angle)
}

/// Normalized bump `exp(1/(x^2 - 1))` on `(-1, 1)` and its distribution function.
struct Bump {
    norm: f64,
    cdf: Vec<f64>,
}

const BUMP_TABLE: usize = 4096;

fn raw_bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 / (x * x - 1.0)).exp()
    }
}

fn gauss_legendre_8(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_2];
    const W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    X.iter().zip(W.iter()).map(|(x, w)| w * (f(c - h * x) + f(c + h * x))).sum::<f64>() * h
}

fn bump() -> &'static Bump {
    static TABLE: OnceLock<Bump> = OnceLock::new();
    TABLE.get_or_init(|| {
        let dx = 2.0 / BUMP_TABLE as f64;
        let mut cdf = vec![0.0; BUMP_TABLE + 1];
        for k in 0..BUMP_TABLE {
            let a = -1.0 + k as f64 * dx;
            cdf[k + 1] = cdf[k] + gauss_legendre_8(raw_bump, a, a + dx);
        }
        let norm = cdf[BUMP_TABLE];
        for v in &mut cdf {
            *v /= norm;
        }
        Bump { norm, cdf }
    })
}

impl Bump {
    fn density(&self, x: f64) -> f64 {
        raw_bump(x) / self.norm
    }

    fn distribution(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let dx = 2.0 / BUMP_TABLE as f64;
        let k = (((x + 1.0) / dx) as usize).min(BUMP_TABLE - 1);
        let x0 = -1.0 + k as f64 * dx;
        let s = (x - x0) / dx;
        hermite(self.cdf[k], self.density(x0), self.cdf[k + 1], self.density(x0 + dx), dx, s).0
    }
}

/// Convolution of a step function (value `v0` left of the first jump, jumps
/// `dv[j]` at `at[j]`) with the bump of full width `width`: value and derivative.
fn smooth_steps(v0: f64, at: &[f64], dv: &[f64], width: f64, t: f64) -> (f64, f64) {
    let half = 0.5 * width;
    let b = bump();
    let lo = at.partition_point(|&x| x <= t - half);
    let hi = at.partition_point(|&x| x < t + half);
    let settled: f64 = dv[..lo].iter().sum();
    let (mut v, mut dvdt) = (v0 + settled, 0.0);
    for j in lo..hi {
        let x = (t - at[j]) / half;
        v += dv[j] * b.distribution(x);
        dvdt += dv[j] * b.density(x) / half;
    }
    (v, dvdt)
}

fn steps_of(grid: &[f64], values: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut at = Vec::new();
    let mut dv = Vec::new();
    for i in 1..values.len() {
        if values[i] != values[i - 1] {
            at.push(grid[i]);
            dv.push(values[i] - values[i - 1]);
        }
    }
    (values[0], at, dv)
}

/// Convolves the direction angle and `|lambda|` of a piecewise-constant
/// profile with the bump of full width `scale` (values extended constantly
/// beyond the ends). The sign of `lambda` is kept from the input cells.
pub fn mollify_profile(rp: &RankOneProfile, scale: f64) -> Result<RankOneProfile> {
    let Samples::Cells { lambda, angle } = &rp.samples else {
        return Err(Error::Precondition("mollification expects a piecewise-constant profile".into()));
    };
    let ell = rp.length();
    if !(scale > 0.0 && scale < ell) {
        return Err(Error::Precondition(format!("mollifier width {scale} outside (0, ell)")));
    }
    let (cl, cr) = rp.collar_widths();
    for c in [cl, cr] {
        if c > 0.0 && c < scale * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!("mollifier width {scale} exceeds collar width {c}")));
        }
    }
    // fine grid: input nodes plus uniform nodes at spacing <= scale / 16
    let m = (16.0 * ell / scale).ceil() as usize;
    let spacing = ell / m as f64;
    let mut grid = rp.grid.clone();
    for k in 1..m {
        let t = k as f64 * spacing;
        let j = locate(&rp.grid, t);
        if (t - rp.grid[j]).abs() > 0.25 * spacing && (rp.grid[j + 1] - t).abs() > 0.25 * spacing {
            grid.push(t);
        }
    }
    grid.sort_by(f64::total_cmp);

    let mags: Vec<f64> = lambda.iter().map(|l| l.abs()).collect();
    let (a0, a_at, a_dv) = steps_of(&rp.grid, angle);
    let (m0, m_at, m_dv) = steps_of(&rp.grid, &mags);
    let nodes = grid.len();
    let (mut ang, mut ang_rate, mut mag, mut mag_rate) =
        (Vec::with_capacity(nodes), Vec::with_capacity(nodes), Vec::with_capacity(nodes), Vec::with_capacity(nodes));
    for &t in &grid {
        let (a, da) = smooth_steps(a0, &a_at, &a_dv, scale, t);
        let (l, dl) = smooth_steps(m0, &m_at, &m_dv, scale, t);
        ang.push(a);
        ang_rate.push(da);
        mag.push(l);
        mag_rate.push(dl);
    }
    limit_rates(&grid, &ang, &mut ang_rate);
    limit_rates(&grid, &mag, &mut mag_rate);
    let sign = grid
        .windows(2)
        .map(|w| sign(lambda[locate(&rp.grid, 0.5 * (w[0] + w[1]))]))
        .collect();
    let out = RankOneProfile {
        grid,
        samples: Samples::Nodes { magnitude: mag, magnitude_rate: mag_rate, angle: ang, angle_rate: ang_rate, sign },
        bounds: rp.bounds,
    };
    check_bounds(&out)?;
    Ok(out)
}

/// Fritsch-Carlson limiting: each cubic piece stays monotone between its nodal values.
fn limit_rates(grid: &[f64], v: &[f64], d: &mut [f64]) {
    for i in 0..v.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let delta = (v[i + 1] - v[i]) / h;
        if delta == 0.0 {
            d[i] = 0.0;
            d[i + 1] = 0.0;
            continue;
        }
        for k in [i, i + 1] {
            if d[k] * delta < 0.0 {
                d[k] = 0.0;
            }
        }
        let (a, b) = (d[i] / delta, d[i + 1] / delta);
        let r = a * a + b * b;
        if r > 9.0 {
            let s = 3.0 / r.sqrt();
            d[i] = s * a * delta;
            d[i + 1] = s * b * delta;
        }
    }
}

fn check_bounds(rp: &RankOneProfile) -> Result<()> {
    let points: Vec<RankOnePoint> = (0..rp.n_cells()).flat_map(|i| [rp.at(rp.grid[i]), rp.cell_midpoint(i)]).collect();
    let top = points.iter().fold(0.0f64, |m, q| m.max(q.lambda.abs()));
    for (k, q) in points.iter().enumerate() {
        {
            let i = k / 2;
            if q.lambda.abs() < rp.bounds.lambda - 1e-12 * top || q.angle.cos() < rp.bounds.p1 - 1e-12 {
                return Err(Error::Internal(format!(
                    "lower bounds lost at t = {}: |lambda| = {}, p.e1 = {}",
                    rp.grid[i],
                    q.lambda.abs(),
                    q.angle.cos()
                )));
            }
        }
    }
    Ok(())
}

/// Outcome of [`correct_boundary`].
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub profile: RankOneProfile,
    /// Residual norm `|log(r(ell) r_bar^T)| + |y(ell) - y_bar| / ell` before and after.
    pub residual_before: f64,
    pub residual_after: f64,
    /// Sup norm of the added `(A13, A23)` perturbation.
    pub perturbation: f64,
    pub iterations: usize,
}

/// Smooth bump with peak 1 supported on `|t - center| < half`.
fn window_bump(t: f64, center: f64, half: f64) -> (f64, f64) {
    let x = (t - center) / half;
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - x * x;
    let v = (1.0 - 1.0 / q).exp();
    (v, v * (-2.0 * x / (q * q)) / half)
}

/// Correction window with node range `first..=last` in the refined grid.
struct Window {
    lo: f64,
    hi: f64,
    first: usize,
    last: usize,
}

impl Window {
    fn basis(&self, t: f64) -> [(f64, f64); 3] {
        let quarter = 0.25 * (self.hi - self.lo);
        [1.0, 2.0, 3.0].map(|k| window_bump(t, self.lo + k * quarter, quarter))
    }
}

enum Segment {
    /// Frame map of a fixed stretch: `r -> s r`, `y -> y + r^T z`.
    Fixed(Matrix3<f64>, Vector3<f64>),
    Window(usize),
}

/// Candidate profiles for bump coefficients `q` (per window: 3 for `A13`,
/// then 3 for `A23`) and their boundary residuals.
struct Corrector<'a> {
    base: RankOneProfile,
    windows: Vec<Window>,
    segments: Vec<Segment>,
    bd: &'a BoundaryData,
}

impl<'a> Corrector<'a> {
    fn new(rp: &RankOneProfile, bd: &'a BoundaryData, spans: &[(f64, f64)]) -> Result<Self> {
        let mut base = rp.clone();
        for &(lo, hi) in spans {
            base = refine_window(&base, lo, hi)?;
        }
        let prof = base.induced_profile()?;
        let max_a13 = prof.mu().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 1e-6 * max_a13.max(1.0);
        let mut windows = Vec::with_capacity(spans.len());
        for &(lo, hi) in spans {
            let first = base.grid.iter().position(|&t| t == lo).unwrap();
            let last = base.grid.iter().position(|&t| t == hi).unwrap();
            let degenerate = (first..last).any(|i| prof.mu()[i].abs() < floor)
                || (first..=last).any(|i| base.at(base.grid[i]).a().0.abs() < floor);
            if degenerate {
                return Err(Error::Precondition(format!("bending vanishes in the window ({lo}, {hi})")));
            }
            windows.push(Window { lo, hi, first, last });
        }
        let fixed = |from: usize, to: usize| {
            let (mut s, mut z) = (Matrix3::identity(), Vector3::zeros());
            for i in from..to {
                let (e, body) = cell_step(&prof.cell_omega(i), prof.cell_width(i));
                z += s.transpose() * body;
                s = e * s;
            }
            Segment::Fixed(s, z)
        };
        let mut segments = Vec::new();
        let mut at = 0;
        for (k, w) in windows.iter().enumerate() {
            segments.push(fixed(at, w.first));
            segments.push(Segment::Window(k));
            at = w.last;
        }
        segments.push(fixed(at, prof.n_cells()));
        Ok(Corrector { base, windows, segments, bd })
    }

    fn unknowns(&self) -> usize {
        6 * self.windows.len()
    }

    fn perturbation_at(&self, q: &[f64], w: usize, t: f64) -> (f64, f64, f64, f64) {
        let c = &q[6 * w..6 * w + 6];
        let mut out = (0.0, 0.0, 0.0, 0.0);
        for (k, (b, db)) in self.windows[w].basis(t).iter().enumerate() {
            out.0 += c[k] * b;
            out.1 += c[k + 3] * b;
            out.2 += c[k] * db;
            out.3 += c[k + 3] * db;
        }
        out
    }

    /// Rank-one state with `A = (a13, a23)`: `lambda = (a13^2 + a23^2) / a13`,
    /// angle `atan(a23 / a13)`, plus derivatives.
    fn restore(a13: f64, a23: f64, d13: f64, d23: f64) -> (f64, f64, f64, f64) {
        let n = a13 * a13 + a23 * a23;
        let lambda = n / a13;
        let angle = (a23 / a13).atan();
        let rate = (a13 * d23 - a23 * d13) / n;
        let dn = 2.0 * (a13 * d13 + a23 * d23);
        let lambda_rate = (dn * a13 - n * d13) / (a13 * a13);
        (lambda, angle, rate, lambda_rate)
    }

    fn candidate(&self, q: &[f64]) -> Result<RankOneProfile> {
        let mut out = self.base.clone();
        let flipped = || Err(Error::NoConvergence("correction flips the bending sign".into()));
        for (w, win) in self.windows.iter().enumerate() {
            match &mut out.samples {
                Samples::Cells { lambda, angle } => {
                    for i in win.first..win.last {
                        let t = 0.5 * (self.base.grid[i] + self.base.grid[i + 1]);
                        let (a13, a23) = self.base.cell_midpoint(i).a();
                        let (p13, p23, _, _) = self.perturbation_at(q, w, t);
                        if (a13 + p13) * a13 <= 0.0 {
                            return flipped();
                        }
                        let (l, a, _, _) = Self::restore(a13 + p13, a23 + p23, 0.0, 0.0);
                        lambda[i] = l;
                        angle[i] = a;
                    }
                }
                Samples::Nodes { magnitude, magnitude_rate, angle, angle_rate, sign } => {
                    for j in win.first..=win.last {
                        let t = self.base.grid[j];
                        let cell = if j == win.last { j - 1 } else { j };
                        let b = self.base.point_in_cell(cell, t);
                        let (a13, a23) = b.a();
                        let (s, c) = b.angle.sin_cos();
                        let d13 = b.lambda_rate * c * c - 2.0 * b.lambda * c * s * b.angle_rate;
                        let d23 = b.lambda_rate * c * s + b.lambda * (c * c - s * s) * b.angle_rate;
                        let (p13, p23, dp13, dp23) = self.perturbation_at(q, w, t);
                        if (a13 + p13) * a13 <= 0.0 {
                            return flipped();
                        }
                        let (l, a, da, dl) = Self::restore(a13 + p13, a23 + p23, d13 + dp13, d23 + dp23);
                        magnitude[j] = l.abs();
                        magnitude_rate[j] = sign[cell] * dl;
                        angle[j] = a;
                        angle_rate[j] = da;
                    }
                }
            }
        }
        Ok(out)
    }

    fn residual_of(&self, rp: &RankOneProfile) -> Vector6<f64> {
        let (mut y, mut r) = (Vector3::zeros(), Matrix3::identity());
        for seg in &self.segments {
            match seg {
                Segment::Fixed(s, z) => {
                    y += r.transpose() * z;
                    r = s * r;
                }
                Segment::Window(k) => {
                    let w = &self.windows[*k];
                    for i in w.first..w.last {
                        let (mu, tau) = rp.cell_midpoint(i).a();
                        let (e, body) = cell_step(&omega(mu, tau), rp.grid[i + 1] - rp.grid[i]);
                        y += r.transpose() * body;
                        r = e * r;
                    }
                }
            }
        }
        let rot = log_so3(&(r * self.bd.r_bar.matrix().transpose()));
        let pos = (y - self.bd.y_bar) / self.bd.ell;
        Vector6::new(rot.x, rot.y, rot.z, pos.x, pos.y, pos.z)
    }

    fn residual(&self, q: &[f64]) -> Result<Vector6<f64>> {
        Ok(self.residual_of(&self.candidate(q)?))
    }
}

/// Splits cells at the window ends; piecewise-constant profiles are also
/// refined inside the window to spacing `(hi - lo) / 128`.
fn refine_window(rp: &RankOneProfile, lo: f64, hi: f64) -> Result<RankOneProfile> {
    let mut grid = rp.grid.clone();
    grid.push(lo);
    grid.push(hi);
    let m = 128;
    let dt = (hi - lo) / m as f64;
    for k in 1..m {
        grid.push(lo + k as f64 * dt);
    }
    grid.sort_by(f64::total_cmp);
    let tol = 1e-9 * dt;
    let mut merged: Vec<f64> = Vec::with_capacity(grid.len());
    for t in grid {
        match merged.last() {
            Some(&prev) if t - prev <= tol => {
                // keep window ends exact
                if t == lo || t == hi {
                    *merged.last_mut().unwrap() = t;
                }
            }
            _ => merged.push(t),
        }
    }
    *merged.first_mut().unwrap() = 0.0;
    *merged.last_mut().unwrap() = rp.length();
    resample(rp, merged)
}

/// Same profile on a finer grid containing the original one (up to merged nodes).
fn resample(rp: &RankOneProfile, grid: Vec<f64>) -> Result<RankOneProfile> {
    match &rp.samples {
        Samples::Cells { .. } => {
            let (lambda, angle) = grid
                .windows(2)
                .map(|w| {
                    let q = rp.at(0.5 * (w[0] + w[1]));
                    (q.lambda, q.angle)
                })
                .unzip();
            let mut out = RankOneProfile::piecewise_constant(grid, lambda, angle)?;
            out.bounds = rp.bounds;
            Ok(out)
        }
        Samples::Nodes { sign: old_sign, .. } => {
            let n = grid.len();
            let (mut mag, mut mag_rate, mut ang, mut ang_rate) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for (j, &t) in grid.iter().enumerate() {
                let cell = locate(&rp.grid, t);
                let q = rp.point_in_cell(cell, t);
                mag[j] = q.lambda.abs();
                mag_rate[j] = old_sign[cell] * q.lambda_rate;
                ang[j] = q.angle;
                ang_rate[j] = q.angle_rate;
            }
            let sign = grid.windows(2).map(|w| old_sign[locate(&rp.grid, 0.5 * (w[0] + w[1]))]).collect();
            Ok(RankOneProfile {
                grid,
                samples: Samples::Nodes { magnitude: mag, magnitude_rate: mag_rate, angle: ang, angle_rate: ang_rate, sign },
                bounds: rp.bounds,
            })
        }
    }
}

fn residual_norm(f: &Vector6<f64>) -> f64 {
    f.fixed_rows::<3>(0).norm() + f.fixed_rows::<3>(3).norm()
}

/// Adds smooth bumps to `(A13, A23)` inside each window (three per component
/// and window) and solves for their coefficients by damped least-squares
/// shooting (minimum-norm steps when there are more than six unknowns) so
/// that the profile meets the boundary data. The rank-one form is restored
/// inside the windows.
pub fn correct_boundary(rp: &RankOneProfile, bd: &BoundaryData, windows: &[(f64, f64)]) -> Result<Correction> {
    let ell = rp.length();
    if (ell - bd.ell).abs() > 1e-12 * ell {
        return Err(Error::Precondition(format!("profile length {ell} differs from boundary data length {}", bd.ell)));
    }
    if windows.is_empty() {
        return Err(Error::Precondition("no correction window".into()));
    }
    let mut prev = 0.0;
    for &(lo, hi) in windows {
        if !(lo > prev && lo < hi && hi < ell) {
            return Err(Error::Precondition(format!(
                "window ({lo}, {hi}) must be nonempty, inside (0, ell) and after the previous one"
            )));
        }
        prev = hi;
    }
    let corr = Corrector::new(rp, bd, windows)?;
    let m = corr.unknowns();
    let mut q = DVector::zeros(m);
    let mut f = corr.residual(q.as_slice())?;
    let before = residual_norm(&f);
    let mut iterations = 0;
    let mut damping = 0.0;
    while residual_norm(&f) > SHOOT_TOL {
        if iterations == SHOOT_MAX_ITER {
            return Err(Error::NoConvergence(format!(
                "boundary shooting stalled at residual {:e} after {iterations} iterations",
                residual_norm(&f)
            )));
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(6, m);
        for k in 0..m {
            let mut qp = q.clone();
            qp[k] += FD_STEP;
            let mut qm = q.clone();
            qm[k] -= FD_STEP;
            let col = (corr.residual(qp.as_slice())? - corr.residual(qm.as_slice())?) / (2.0 * FD_STEP);
            jac.set_column(k, &col);
        }
        let jjt: Matrix6<f64> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned();
        let mut accepted = false;
        for _ in 0..30 {
            let Some(y) = (jjt + Matrix6::identity() * damping).lu().solve(&f) else {
                damping = (damping * 10.0).max(1e-12 * jjt.norm());
                continue;
            };
            let trial = &q - jac.transpose() * DVector::from_column_slice(y.as_slice());
            match corr.residual(trial.as_slice()) {
                Ok(ft) if residual_norm(&ft) < residual_norm(&f) => {
                    q = trial;
                    f = ft;
                    damping *= 0.1;
                    if damping < 1e-15 * jjt.norm() {
                        damping = 0.0;
                    }
                    accepted = true;
                    break;
                }
                _ => damping = (damping * 10.0).max(1e-9 * jjt.norm()),
            }
        }
        if !accepted {
            return Err(Error::NoConvergence(format!(
                "boundary shooting cannot reduce residual {:e}",
                residual_norm(&f)
            )));
        }
    }
    if iterations == 0 {
        return Ok(Correction { profile: rp.clone(), residual_before: before, residual_after: before, perturbation: 0.0, iterations });
    }
    let profile = corr.candidate(q.as_slice())?;
    let rep = is_admissible(&profile.induced_profile()?, bd, 1e-9)?;
    if !rep.ok {
        return Err(Error::NoConvergence(format!(
            "corrected profile misses the boundary data (pos {:e}, rot {:e})",
            rep.pos_err, rep.rot_err
        )));
    }
    let mut perturbation = 0.0f64;
    for (w, win) in corr.windows.iter().enumerate() {
        for j in win.first..=win.last {
            let (p13, p23, _, _) = corr.perturbation_at(q.as_slice(), w, corr.base.grid[j]);
            perturbation = perturbation.max(p13.abs()).max(p23.abs());
        }
    }
    let profile = RankOneProfile { bounds: updated_bounds(&profile), ..profile };
    Ok(Correction { profile, residual_before: before, residual_after: residual_norm(&f), perturbation, iterations })
}

fn updated_bounds(rp: &RankOneProfile) -> LowerBounds {
    let mut b = LowerBounds { lambda: f64::INFINITY, p1: f64::INFINITY };
    for i in 0..rp.n_cells() {
        for q in [rp.at(rp.grid[i]), rp.cell_midpoint(i), rp.point_in_cell(i, rp.grid[i + 1])] {
            b.lambda = b.lambda.min(q.lambda.abs());
            b.p1 = b.p1.min(q.angle.cos());
        }
    }
    LowerBounds { lambda: b.lambda.min(rp.bounds.lambda), p1: b.p1.min(rp.bounds.p1) }
}

/// One stage of [`approximate_admissible`].
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: &'static str,
    pub energy: f64,
    pub residual: f64,
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Approximation {
    pub profile: RankOneProfile,
    /// Correction windows (empty for free ends).
    pub windows: Vec<(f64, f64)>,
    pub stages: Vec<StageReport>,
    /// `relaxed_F` of the input field.
    pub target_energy: f64,
    /// `relaxed_F` of the output, i.e. `int lambda^2`.
    pub energy: f64,
}

impl Approximation {
    pub fn relative_gap(&self) -> f64 {
        (self.energy - self.target_energy).abs() / self.target_energy.abs().max(f64::MIN_POSITIVE)
    }
}

/// Pushes `|M11| < MU_FLOOR` to `+-MU_FLOOR` (zero counts as positive).
pub fn floor_bending(m: &SymField) -> Result<SymField> {
    let m11 = m
        .m11()
        .iter()
        .map(|&v| if v.abs() < MU_FLOOR { MU_FLOOR * sign(v) } else { v })
        .collect();
    SymField::new(m.grid().to_vec(), m11, m.m12().to_vec(), m.m22().to_vec())
}

/// Correction windows: the (at most two) longest runs of rank-one cells with
/// non-vanishing bending inside `[reserve, ell - reserve]`, each shrunk by
/// `margin` at both ends, in increasing order.
pub fn default_windows(m: &SymField, reserve: f64, margin: f64) -> Vec<(f64, f64)> {
    let ell = m.length();
    let (lo_lim, hi_lim) = (reserve, ell - reserve);
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut run: Option<f64> = None;
    let n = m.n_cells();
    for i in 0..=n {
        let good = i < n && {
            let (a, b, c) = m.cell(i);
            let size = a * a + 2.0 * b * b + c * c;
            (a * c - b * b).abs() <= 1e-12 * size && a.abs() >= 1e-6 && m.grid()[i + 1] > lo_lim && m.grid()[i] < hi_lim
        };
        match (good, run) {
            (true, None) => run = Some(m.grid()[i].max(lo_lim)),
            (false, Some(start)) => {
                runs.push((start + margin, m.grid()[i].min(hi_lim) - margin));
                run = None;
            }
            _ => {}
        }
    }
    runs.retain(|(s, e)| e > s);
    runs.sort_by(|a, b| (b.1 - b.0).total_cmp(&(a.1 - a.0)));
    runs.truncate(2);
    runs.sort_by(|a, b| a.0.total_cmp(&b.0));
    runs
}

/// The full chain: floor, split, laminate (collar of width `scale`),
/// correct, mollify, correct. Returns a smooth rank-one profile meeting `bd`.
pub fn approximate_admissible(m: &SymField, bd: &BoundaryData, n: usize, scale: f64) -> Result<Approximation> {
    approximate_with_windows(m, bd, n, scale, None)
}

pub fn approximate_with_windows(
    m: &SymField,
    bd: &BoundaryData,
    n: usize,
    scale: f64,
    windows: Option<Vec<(f64, f64)>>,
) -> Result<Approximation> {
    if m.m11().iter().all(|v| *v == 0.0) {
        return Err(Error::Precondition("M11 vanishes identically".into()));
    }
    let rep = is_admissible(&m.induced_profile()?, bd, INPUT_ADMISSIBLE_TOL)?;
    if !rep.ok {
        return Err(Error::Precondition(format!(
            "field does not meet the boundary data (pos {:e}, rot {:e})",
            rep.pos_err, rep.rot_err
        )));
    }
    let floored = floor_bending(m)?;
    let windows = match windows {
        Some(w) => w,
        None => default_windows(&floored, scale, scale),
    };
    if windows.is_empty() {
        return Err(Error::Precondition("no rank-one cells with bending away from the ends".into()));
    }
    let mut stages = Vec::new();
    let lam = laminate_stage(&floored, n, scale, &mut stages)?;
    let fixed = correct_boundary(&lam, bd, &windows)?;
    stages.push(StageReport { stage: "correct", energy: fixed.profile.energy(), residual: fixed.residual_after, perturbation: fixed.perturbation });
    let smooth = mollify_profile(&fixed.profile, scale)?;
    stages.push(StageReport { stage: "mollify", energy: smooth.energy(), residual: f64::NAN, perturbation: 0.0 });
    let fixed = correct_boundary(&smooth, bd, &windows)?;
    stages.push(StageReport { stage: "correct", energy: fixed.profile.energy(), residual: fixed.residual_after, perturbation: fixed.perturbation });
    Ok(Approximation {
        energy: fixed.profile.energy(),
        profile: fixed.profile,
        windows,
        stages,
        target_energy: relaxed_f(m),
    })
}

/// Laminate and mollify without boundary correction (free ends).
/// A vanishing field gives the flat strip exactly.
pub fn approximate_free(m: &SymField, n: usize, scale: f64) -> Result<Approximation> {
    if [m.m11(), m.m12(), m.m22()].iter().all(|v| v.iter().all(|x| *x == 0.0)) {
        let profile = RankOneProfile::flat(m.length())?;
        return Ok(Approximation { profile, windows: Vec::new(), stages: Vec::new(), target_energy: 0.0, energy: 0.0 });
    }
    let floored = floor_bending(m)?;
    let mut stages = Vec::new();
    let lam = laminate_stage(&floored, n, scale, &mut stages)?;
    let smooth = mollify_profile(&lam, scale)?;
    stages.push(StageReport { stage: "mollify", energy: smooth.energy(), residual: f64::NAN, perturbation: 0.0 });
    Ok(Approximation { energy: smooth.energy(), profile: smooth, windows: Vec::new(), stages, target_energy: relaxed_f(m) })
}

fn laminate_stage(m: &SymField, n: usize, scale: f64, stages: &mut Vec<StageReport>) -> Result<RankOneProfile> {
    let sd = spectral_decompose(m)?;
    let lam = build_laminate_with_collar(&sd, n, scale)?;
    stages.push(StageReport { stage: "laminate", energy: lam.energy(), residual: f64::NAN, perturbation: 0.0 });
    Ok(lam)
}

/// Boundary residual `(|log(r(ell) r_bar^T)|, |y(ell) - y_bar| / ell)` of a profile.
pub fn boundary_residual(rp: &RankOneProfile, bd: &BoundaryData) -> Result<(f64, f64)> {
    let fc = integrate_frame(&rp.induced_profile()?, Rotation::identity(), Vector3::zeros())?;
    let (y, r) = fc.end();
    Ok((
        log_so3(&(r.matrix() * bd.r_bar.matrix().transpose())).norm(),
        (y - bd.y_bar).norm() / bd.ell,
    ))
}
