//! Finite-width developable ribbons over a smooth rank-one profile.
//!
//! The strip `(t, s)` is mapped to the flat domain by
//! `Phi(t, s) = (t - s p2, s p1)` and to space by `v(t, s) = y(t) + s b(t)`
//! with the ruling `b = -p2 d1 + p1 d2`. The ribbon is `u = v o Phi^-1` on
//! `[0, ell] x [-eps/2, eps/2]`.

use std::io::{self, Write};

use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::curveframe::{frame_at, integrate_frame, BoundaryData, CurvatureProfile, FramedCurve};
use crate::energy::{relaxed_f, SymField};
use crate::error::{Error, Result};
use crate::export::{fmt17, write_table};
use crate::laminate::{approximate_admissible, approximate_free, RankOneProfile};
use crate::par::{find_any, map_indexed, Exec};
use crate::rotation::Rotation;

pub const WIDTH_SAFETY: f64 = 0.5;
pub const WIDTH_FLOOR: f64 = 1e-12;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 20;
const INJECTIVITY_SAMPLES: usize = 2048;
const SAMPLES_PER_CELL: usize = 4;

/// Upper bound on `|theta'|` and lower bound on `p.e1`, sampled inside every cell.
fn profile_extremes(rp: &RankOneProfile) -> (f64, f64) {
    let g = rp.grid();
    let (mut p1, mut rate) = (f64::INFINITY, 0.0f64);
    for i in 0..rp.n_cells() {
        for k in 0..=SAMPLES_PER_CELL {
            let t = g[i] + (g[i + 1] - g[i]) * k as f64 / SAMPLES_PER_CELL as f64;
            let q = rp.at(t.min(g[i + 1]));
            p1 = p1.min(q.angle.cos());
            rate = rate.max(q.angle_rate.abs());
        }
    }
    (p1, rate)
}

fn segments_cross(a0: Vector2<f64>, a1: Vector2<f64>, b0: Vector2<f64>, b1: Vector2<f64>) -> bool {
    let cross = |u: Vector2<f64>, v: Vector2<f64>| u.x * v.y - u.y * v.x;
    let (da, db) = (a1 - a0, b1 - b0);
    let denom = cross(da, db);
    if denom.abs() < 1e-300 {
        // parallel rulings: they meet only if collinear and overlapping
        if cross(b0 - a0, da).abs() > 1e-14 * da.norm_squared().max(1.0) {
            return false;
        }
        let len = da.norm_squared();
        let (s0, s1) = ((b0 - a0).dot(&da) / len, (b1 - a0).dot(&da) / len);
        return s0.max(s1) >= 0.0 && s0.min(s1) <= 1.0;
    }
    let s = cross(b0 - a0, db) / denom;
    let r = cross(b0 - a0, da) / denom;
    (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r)
}

/// True if the planar rulings `{(t, 0) + s (-p2, p1) : |s p1| <= eps/2}`
/// sampled at spacing `ell / 2048` are pairwise disjoint.
pub fn rulings_disjoint(rp: &RankOneProfile, eps: f64, exec: Exec) -> bool {
    let ell = rp.length();
    let n = INJECTIVITY_SAMPLES;
    let seg: Vec<(f64, Vector2<f64>, Vector2<f64>)> = (0..=n)
        .map(|i| {
            let t = ell * i as f64 / n as f64;
            let p = rp.at(t).p();
            let half = 0.5 * eps / p.x;
            let dir = Vector2::new(-p.y, p.x);
            let c = Vector2::new(t, 0.0);
            (t, c - dir * half, c + dir * half)
        })
        .collect();
    let reach = seg.iter().fold(0.0f64, |m, (t, a, _)| m.max((a.x - t).abs()));
    find_any(exec, n + 1, |i| {
        let (ti, a0, a1) = seg[i];
        seg[i + 1..]
            .iter()
            .take_while(|(tj, _, _)| tj - ti <= 2.0 * reach + 1e-15)
            .any(|&(_, b0, b1)| segments_cross(a0, a1, b0, b1))
    })
    .is_none()
}

/// Largest admissible width: `0.5 min(p.e1) / max(|p'|, 1e-12)`, capped at
/// `cap` (default `ell / 4`) and halved until the sampled rulings are disjoint.
pub fn max_width(rp: &RankOneProfile, cap: Option<f64>) -> Result<f64> {
    if !rp.is_smooth() {
        return Err(Error::Precondition("ribbon width needs a smooth profile".into()));
    }
    let cap = cap.unwrap_or(0.25 * rp.length());
    let (p1, rate) = profile_extremes(rp);
    if p1 <= 0.0 {
        return Ok(0.0);
    }
    let mut eps = (WIDTH_SAFETY * p1 / rate.max(WIDTH_FLOOR)).min(cap);
    for _ in 0..60 {
        if rulings_disjoint(rp, eps, Exec::Parallel) {
            return Ok(eps);
        }
        eps *= 0.5;
    }
    Ok(0.0)
}

/// One sample of the ribbon at flat coordinates `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RibbonSample {
    pub x: [f64; 2],
    /// Preimage `(t, s) = Phi^-1(x)`.
    pub t: f64,
    pub s: f64,
    pub point: Vector3<f64>,
    /// `grad u = (d1 | d2)` at `t`.
    pub grad: Matrix3x2<f64>,
    pub normal: Vector3<f64>,
    /// First fundamental form `(grad u)^T grad u`.
    pub first: Matrix2<f64>,
    /// Second fundamental form in flat coordinates.
    pub second: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibbonMesh {
    pub eps: f64,
    pub ell: f64,
    /// Number of intervals along `x1` and `x2`.
    pub n1: usize,
    pub n2: usize,
    /// Row-major samples, index `i * (n2 + 1) + k`.
    pub samples: Vec<RibbonSample>,
}

/// Solves `t - x2 tan(theta(t)) = x1` (so that `Phi(t, x2 / p1(t)) = x`).
fn invert_chart(rp: &RankOneProfile, x1: f64, x2: f64, bound: f64) -> Result<(f64, f64)> {
    let ell = rp.length();
    let g = |t: f64| {
        let q = rp.at(t.clamp(0.0, ell));
        let c = q.angle.cos();
        (t - x2 * q.angle.tan() - x1, 1.0 - x2 * q.angle_rate / (c * c), c)
    };
    let mut t = x1;
    for _ in 0..NEWTON_MAX_ITER {
        let (f, df, c) = g(t);
        if f.abs() <= NEWTON_TOL * ell.max(1.0) {
            return Ok((t, x2 / c));
        }
        if df <= 0.0 {
            break;
        }
        t -= f / df;
    }
    // bisection on the monotone scalar equation
    let (mut lo, mut hi) = (x1 - bound, x1 + bound);
    if g(lo).0 > 0.0 || g(hi).0 < 0.0 {
        return Err(Error::ChartInversion { x1, x2 });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (f, _, c) = g(mid);
        if f.abs() <= NEWTON_TOL * ell.max(1.0) || hi - lo <= f64::EPSILON * ell {
            return Ok((mid, x2 / c));
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::ChartInversion { x1, x2 })
}

/// Samples the ribbon of width `eps` on a `(n1 + 1) x (n2 + 1)` grid of the
/// flat strip; `fc` must be the frame of `rp.induced_profile()`.
pub fn build_ruled_surface(
    fc: &FramedCurve,
    rp: &RankOneProfile,
    eps: f64,
    resolution: (usize, usize),
    exec: Exec,
) -> Result<RibbonMesh> {
    let (n1, n2) = resolution;
    if n1 < 2 || n2 < 2 || n1 % 2 == 1 || n2 % 2 == 1 {
        return Err(Error::Precondition(format!("resolution must be even and >= 2, got {n1}x{n2}")));
    }
    let max = max_width(rp, None)?;
    if !(eps > 0.0 && eps <= max * (1.0 + 1e-12)) {
        return Err(Error::WidthTooLarge { eps, max });
    }
    let ell = rp.length();
    if rp.at(0.0).angle.abs() > 1e-12 || rp.at(ell).angle.abs() > 1e-12 {
        return Err(Error::Precondition("ribbon needs p = e1 at both ends".into()));
    }
    let profile: CurvatureProfile = rp.induced_profile()?;
    if fc.grid() != profile.grid() {
        return Err(Error::Precondition("frame does not belong to the profile".into()));
    }
    let (p1_min, _) = profile_extremes(rp);
    let bound = 0.5 * eps * (1.0 - p1_min * p1_min).sqrt() / p1_min + 1e-12 * ell;
    let cols = n2 + 1;
    let samples = map_indexed(exec, (n1 + 1) * cols, |idx| {
        let (i, k) = (idx / cols, idx % cols);
        let x1 = ell * i as f64 / n1 as f64;
        let x2 = eps * (k as f64 / n2 as f64 - 0.5);
        sample(fc, &profile, rp, x1, x2, bound)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RibbonMesh { eps, ell, n1, n2, samples })
}

fn sample(
    fc: &FramedCurve,
    profile: &CurvatureProfile,
    rp: &RankOneProfile,
    x1: f64,
    x2: f64,
    bound: f64,
) -> Result<RibbonSample> {
    let (t, s) = invert_chart(rp, x1, x2, bound)?;
    let t = t.clamp(0.0, rp.length());
    let q = rp.at(t);
    let p = q.p();
    let (y, r): (Vector3<f64>, Rotation) = frame_at(profile, fc, t);
    let (d1, d2, d3) = (r.d1(), r.d2(), r.d3());
    let b = d1 * (-p.y) + d2 * p.x;
    let point = y + b * s;
    // tangents of v in the frame (d1, d2): the columns of grad Phi
    let th = q.angle_rate;
    let grad_phi = Matrix2::new(1.0 - s * th * p.x, -p.y, -s * th * p.y, p.x);
    let (mu, tau) = q.a();
    // v_tt . n = mu + s b''.d3, b''.d3 = -theta' (p1 mu + p2 tau); v_ts . n = v_ss . n = 0
    let h = Matrix2::new(mu - s * th * (p.x * mu + p.y * tau), 0.0, 0.0, 0.0);
    let inv = grad_phi.try_inverse().ok_or(Error::ChartInversion { x1, x2 })?;
    let second = inv.transpose() * h * inv;
    // grad u = grad v grad Phi^-1 with grad v = (d1 | d2) grad Phi
    let grad_v = Matrix3x2::from_columns(&[d1, d2]) * grad_phi;
    let grad = grad_v * inv;
    Ok(RibbonSample {
        x: [x1, x2],
        t,
        s,
        point,
        grad,
        normal: d3,
        first: grad.transpose() * grad,
        second,
    })
}

fn simpson_weights(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .map(|w| w / (3.0 * n as f64))
        .collect()
}

impl RibbonMesh {
    pub fn at(&self, i: usize, k: usize) -> &RibbonSample {
        &self.samples[i * (self.n2 + 1) + k]
    }

    /// Largest `|(grad u)^T grad u - I|_F`.
    pub fn isometry_error(&self) -> f64 {
        self.samples.iter().map(|s| (s.first - Matrix2::identity()).norm()).fold(0.0, f64::max)
    }

    /// Largest `|det Pi|`.
    pub fn developability_error(&self) -> f64 {
        self.samples.iter().map(|s| s.second.determinant().abs()).fold(0.0, f64::max)
    }

    /// Samples on the centerline `x2 = 0`.
    pub fn centerline(&self) -> impl Iterator<Item = &RibbonSample> {
        (0..=self.n1).map(move |i| self.at(i, self.n2 / 2))
    }

    /// `int |Pi(x1, 0)|^2 dx1` with the same Simpson rule as [`kirchhoff_energy`].
    pub fn centerline_energy(&self) -> f64 {
        let w = simpson_weights(self.n1);
        self.centerline().zip(&w).map(|(s, w)| w * s.second.norm_squared()).sum::<f64>() * self.ell
    }

    pub fn write_obj<W: Write>(&self, mut w: W, normals: bool) -> io::Result<()> {
        for s in &self.samples {
            writeln!(w, "v {} {} {}", fmt17(s.point.x), fmt17(s.point.y), fmt17(s.point.z))?;
        }
        if normals {
            for s in &self.samples {
                writeln!(w, "vn {} {} {}", fmt17(s.normal.x), fmt17(s.normal.y), fmt17(s.normal.z))?;
            }
        }
        let cols = self.n2 + 1;
        for i in 0..self.n1 {
            for k in 0..self.n2 {
                let a = i * cols + k + 1;
                let (b, c, d) = (a + cols, a + cols + 1, a + 1);
                if normals {
                    writeln!(w, "f {a}//{a} {b}//{b} {c}//{c} {d}//{d}")?;
                } else {
                    writeln!(w, "f {a} {b} {c} {d}")?;
                }
            }
        }
        Ok(())
    }

    /// Centerline table `t, mu, tau, |Pi|^2`.
    pub fn write_centerline_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let rows: Vec<Vec<f64>> = self
            .centerline()
            .map(|s| vec![s.t, s.second[(0, 0)], s.second[(0, 1)], s.second.norm_squared()])
            .collect();
        write_table(w, &["t", "mu", "tau", "pi_sq"], &rows)
    }
}

/// `(1/eps) int |Pi|^2 dx` by tensor-product Simpson on the sample grid.
pub fn kirchhoff_energy(mesh: &RibbonMesh) -> f64 {
    let (w1, w2) = (simpson_weights(mesh.n1), simpson_weights(mesh.n2));
    let mut total = 0.0;
    for (i, a) in w1.iter().enumerate() {
        let row: f64 = w2.iter().enumerate().map(|(k, b)| b * mesh.at(i, k).second.norm_squared()).sum();
        total += a * row;
    }
    // the x2 weights integrate over a width eps, which cancels the 1/eps
    total * mesh.ell
}

/// Widths for [`verify_gamma_limit`].
#[derive(Debug, Clone, PartialEq)]
pub enum Widths {
    Absolute(Vec<f64>),
    /// Fractions of [`max_width`] of each profile.
    OfMax(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub n: usize,
    pub eps: f64,
    pub j_eps: f64,
    /// `int |M^n|^2` on the same `x1` rule.
    pub mn_energy: f64,
    pub relaxed: f64,
}

/// For each `n`: build the rank-one profile (clamped to `bd` if given,
/// otherwise free ends) with mollifier width `ell / (4 n)`, then the Kirchhoff
/// energy of ribbons of each width.
pub fn verify_gamma_limit(
    m: &SymField,
    bd: Option<&BoundaryData>,
    ns: &[usize],
    widths: &Widths,
    resolution: (usize, usize),
) -> Result<Vec<GammaRow>> {
    let relaxed = relaxed_f(m);
    let ell = m.length();
    let mut rows = Vec::new();
    for &n in ns {
        let scale = ell / (4 * n) as f64;
        let approx = match bd {
            Some(bd) => approximate_admissible(m, bd, n, scale)?,
            None => approximate_free(m, n, scale)?,
        };
        let rp = &approx.profile;
        let fc = integrate_frame(&rp.induced_profile()?, Rotation::identity(), Vector3::zeros())?;
        let eps_list = match widths {
            Widths::Absolute(v) => v.clone(),
            Widths::OfMax(f) => {
                let max = max_width(rp, None)?;
                f.iter().map(|x| x * max).collect()
            }
        };
        for eps in eps_list {
            let mesh = build_ruled_surface(&fc, rp, eps, resolution, Exec::Parallel)?;
            rows.push(GammaRow { n, eps, j_eps: kirchhoff_energy(&mesh), mn_energy: mesh.centerline_energy(), relaxed });
        }
    }
    Ok(rows)
}

pub fn write_gamma_csv<W: Write>(w: W, rows: &[GammaRow]) -> io::Result<()> {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.n as f64, r.eps, r.j_eps, r.mn_energy, r.relaxed]).collect();
    write_table(w, &["n", "eps", "j_eps", "mn_energy", "relaxed_f"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laminate::mollify_profile;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn smooth(grid: Vec<f64>, lambda: Vec<f64>, angle: Vec<f64>, scale: f64) -> RankOneProfile {
        mollify_profile(&RankOneProfile::piecewise_constant(grid, lambda, angle).unwrap(), scale).unwrap()
    }

    fn frame(rp: &RankOneProfile) -> FramedCurve {
        integrate_frame(&rp.induced_profile().unwrap(), Rotation::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn flat_strip_width_is_the_cap() {
        let rp = smooth(vec![0.0, 1.0], vec![1e-8], vec![0.0], 0.1);
        assert_eq!(max_width(&rp, None).unwrap(), 0.25);
        let mesh = build_ruled_surface(&frame(&rp), &rp, 0.25, (16, 4), Exec::Sequential).unwrap();
        assert!(kirchhoff_energy(&mesh) < 1e-15);
        assert!(mesh.isometry_error() < 1e-14);
    }

    #[test]
    fn zero_field_sweep_is_flat() {
        let m = SymField::constant(2.0, 3, 0.0, 0.0, 0.0).unwrap();
        let rows = verify_gamma_limit(&m, None, &[4, 8], &Widths::OfMax(vec![1.0, 0.5]), (64, 8)).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!((r.j_eps, r.mn_energy, r.relaxed), (0.0, 0.0, 0.0));
        }
        let rp = RankOneProfile::flat(2.0).unwrap();
        let mesh = build_ruled_surface(&frame(&rp), &rp, 0.5, (16, 4), Exec::Sequential).unwrap();
        assert!(mesh.samples.iter().all(|s| s.point.z == 0.0));
    }

    #[test]
    fn swing_width_order() {
        let w = 0.1;
        let rp = smooth(vec![0.0, 0.5, 1.0], vec![1.0, 1.0], vec![0.0, PI / 4.0], w);
        let eps = max_width(&rp, None).unwrap();
        let guess = 0.5 * (PI / 4.0).cos() * w / (PI / 4.0);
        assert!(eps > 0.25 * guess && eps < 4.0 * guess, "{eps} vs {guess}");
    }

    #[test]
    fn steep_profile_has_tiny_width() {
        let rp = smooth(vec![0.0, 0.5, 1.0], vec![1.0, 1.0], vec![0.0, 1.5706], 0.1);
        assert!(max_width(&rp, None).unwrap() < 1e-3);
        assert!(max_width(&RankOneProfile::piecewise_constant(vec![0.0, 1.0], vec![1.0], vec![0.0]).unwrap(), None).is_err());
    }

    #[test]
    fn cylinder_patch() {
        let rp = smooth(vec![0.0, 1.0], vec![1.0], vec![0.0], 0.1);
        let mesh = build_ruled_surface(&frame(&rp), &rp, 0.2, (64, 8), Exec::Parallel).unwrap();
        for s in &mesh.samples {
            assert_relative_eq!(s.second.norm(), 1.0, epsilon = 1e-12);
            assert!(s.second.determinant().abs() < 1e-15);
            // radius 1 about the axis through (0, 0, 1) along e2
            assert_relative_eq!((s.point - Vector3::new(0.0, s.point.y, 1.0)).norm(), 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(kirchhoff_energy(&mesh), 1.0, epsilon = 1e-12);
        assert!(build_ruled_surface(&frame(&rp), &rp, 0.3, (64, 8), Exec::Parallel).is_err());
    }

    #[test]
    fn twisted_ribbon_forms() {
        let rp = smooth(
            vec![0.0, 0.3, 0.6, 0.85, 1.0],
            vec![1.0, -2.0, 1.5, 1.0],
            vec![0.0, 0.5, -0.4, 0.0],
            0.1,
        );
        let eps = max_width(&rp, None).unwrap() / 4.0;
        let fc = frame(&rp);
        let mesh = build_ruled_surface(&fc, &rp, eps, (256, 16), Exec::Parallel).unwrap();
        assert!(mesh.isometry_error() < 1e-12);
        assert!(mesh.developability_error() < 1e-10);
        for s in mesh.centerline() {
            let (mu, tau) = rp.at(s.t).a();
            assert_relative_eq!(s.second[(0, 0)], mu, epsilon = 1e-10);
            assert_relative_eq!(s.second[(0, 1)], tau, epsilon = 1e-10);
        }
        // straight end rulings
        for k in 0..=mesh.n2 {
            let (a, b) = (mesh.at(0, k), mesh.at(mesh.n1, k));
            assert_relative_eq!(a.point, Vector3::new(0.0, a.x[1], 0.0), epsilon = 1e-12);
            let (_, r) = fc.end();
            assert_relative_eq!(b.grad, Matrix3x2::from_columns(&[r.d1(), r.d2()]), epsilon = 1e-12);
        }
    }

    #[test]
    fn finite_difference_cross_check() {
        let rp = smooth(vec![0.0, 0.2, 0.5, 0.8, 1.0], vec![1.0, 1.0, -1.0, 1.0], vec![0.0, 0.3, -0.3, 0.0], 0.15);
        let eps = max_width(&rp, None).unwrap() / 4.0;
        let mesh = build_ruled_surface(&frame(&rp), &rp, eps, (512, 8), Exec::Parallel).unwrap();
        let (h1, h2) = (mesh.ell / mesh.n1 as f64, mesh.eps / mesh.n2 as f64);
        let mut worst = 0.0f64;
        for i in 1..mesh.n1 {
            for k in 1..mesh.n2 {
                let du1 = (mesh.at(i + 1, k).point - mesh.at(i - 1, k).point) / (2.0 * h1);
                let du2 = (mesh.at(i, k + 1).point - mesh.at(i, k - 1).point) / (2.0 * h2);
                let g = mesh.at(i, k).grad;
                worst = worst.max((du1 - g.column(0)).norm()).max((du2 - g.column(1)).norm());
            }
        }
        assert!(worst < 8.0 * 1e-3, "{worst}");
    }

    #[test]
    fn width_gap_matches_expansion() {
        // J = int lambda^2 + (eps^2 / 12) int lambda^2 theta'^2 / p1^4 + O(eps^4)
        let rp = smooth(vec![0.0, 0.4, 0.8, 1.0], vec![1.0, 1.0, 1.0], vec![0.0, 0.4, 0.0], 0.15);
        let eps_max = max_width(&rp, None).unwrap();
        let fc = frame(&rp);
        let n = 4096;
        let w = simpson_weights(n);
        let coef: f64 = (0..=n)
            .map(|i| {
                let q = rp.at(i as f64 / n as f64);
                w[i] * q.lambda.powi(2) * q.angle_rate.powi(2) / q.angle.cos().powi(4)
            })
            .sum::<f64>()
            / 12.0;
        for frac in [0.5, 0.25] {
            let eps = eps_max * frac;
            let mesh = build_ruled_surface(&fc, &rp, eps, (n, 16), Exec::Parallel).unwrap();
            let gap = kirchhoff_energy(&mesh) - mesh.centerline_energy();
            assert_relative_eq!(gap, coef * eps * eps, max_relative = 0.05);
        }
    }

    #[test]
    fn segment_crossing() {
        let v = |x: f64, y: f64| Vector2::new(x, y);
        assert!(segments_cross(v(0.0, -1.0), v(0.0, 1.0), v(-1.0, 0.0), v(1.0, 0.0)));
        assert!(!segments_cross(v(0.0, -1.0), v(0.0, 1.0), v(0.1, -1.0), v(0.1, 1.0)));
        assert!(segments_cross(v(0.0, -1.0), v(0.0, 1.0), v(0.0, 0.5), v(0.0, 2.0)));
    }
}
