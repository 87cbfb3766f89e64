//! Constrained minimization of the Sadowsky functional over clamped frames,
//! the Euler-Lagrange residuals, multiplier recovery and the planarity test
//! for computed minimizers.
//!
//! The decision variables are the per-cell curvatures `(mu_i, tau_i)` on a
//! uniform grid. The six end conditions `log(r(ell) r_bar^T) = 0` and
//! `(y(ell) - y_bar) / ell = 0` are enforced by an augmented Lagrangian whose
//! inner problems are solved by L-BFGS with Armijo backtracking.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::curveframe::{
    cell_step, frame_at, integrate_frame, omega, planarity_measure, rigidity_check, uniform_grid, AdmissibilityReport,
    BoundaryData, CurvatureProfile, FramedCurve, Rigidity,
};
use crate::energy::{dqbar_dmu, dqbar_dtau, qbar, sadowsky_energy};
use crate::error::{Error, Result};
use crate::par::{map_indexed, Exec};
use crate::rotation::{exp_so3, left_jacobian, left_jacobian_inv, log_so3, Rotation};

pub const PLANARITY_THRESHOLD: f64 = 1e-3;
const PENALTY_START: f64 = 10.0;
const PENALTY_MAX: f64 = 1e12;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const MAX_STEP: f64 = 1.0;
const SVD_CUTOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub n_cells: usize,
    /// Bound on both boundary residuals.
    pub tol: f64,
    /// Bound on the energy-scaled L2 norm of the Lagrangian gradient.
    pub gtol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Number of stored L-BFGS pairs.
    pub memory: usize,
    pub exec: Exec,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            n_cells: 200,
            tol: 1e-7,
            gtol: 1e-5,
            max_outer: 40,
            max_inner: 4000,
            memory: 10,
            exec: Exec::default(),
        }
    }
}

/// Multipliers of the clamped problem: `lambda1` enters through
/// `lambda1 x y`, `lambda2` is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda1: Vector3<f64>,
    pub lambda2: Vector3<f64>,
}

impl Multipliers {
    pub fn zero() -> Self {
        Multipliers { lambda1: Vector3::zeros(), lambda2: Vector3::zeros() }
    }

    pub fn norm(&self) -> f64 {
        (self.lambda1.norm_squared() + self.lambda2.norm_squared()).sqrt()
    }

    /// `lambda2 + lambda1 x y`.
    pub fn load_at(&self, y: &Vector3<f64>) -> Vector3<f64> {
        self.lambda2 + self.lambda1.cross(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub n_cells: usize,
    pub energy: f64,
    pub init_energy: f64,
    pub pos_err: f64,
    pub rot_err: f64,
    pub el_twist: f64,
    pub el_bend: f64,
    pub gradient_norm: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub penalty: f64,
    pub planarity: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub profile: CurvatureProfile,
    pub curve: FramedCurve,
    pub multipliers: Multipliers,
    pub report: SolveReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierFit {
    pub multipliers: Multipliers,
    pub res_twist: f64,
    pub res_bend: f64,
    /// The normal system was rank deficient; the minimum-norm solution is returned.
    pub degenerate: bool,
}

/// Discrete boundary map `x -> (log(r_N r_bar^T), (y_N - y_bar) / ell)` for
/// piecewise-constant curvatures on a uniform grid.
struct BoundaryMap {
    bd: BoundaryData,
    n: usize,
    h: f64,
    exec: Exec,
}

struct Forward {
    r: Vec<Matrix3<f64>>,
    y: Vec<Vector3<f64>>,
    c: Vector6<f64>,
}

impl BoundaryMap {
    fn forward(&self, x: &[f64]) -> Forward {
        let mut r = Vec::with_capacity(self.n + 1);
        let mut y = Vec::with_capacity(self.n + 1);
        let (mut rc, mut yc) = (Matrix3::identity(), Vector3::zeros());
        r.push(rc);
        y.push(yc);
        for i in 0..self.n {
            let (e, body) = cell_step(&omega(x[2 * i], x[2 * i + 1]), self.h);
            yc += rc.transpose() * body;
            rc = e * rc;
            r.push(rc);
            y.push(yc);
        }
        let rn = r[self.n];
        let cr = log_so3(&(rn * self.bd.r_bar.matrix().transpose()));
        let cy = (y[self.n] - self.bd.y_bar) / self.bd.ell;
        let c = Vector6::new(cr.x, cr.y, cr.z, cy.x, cy.y, cy.z);
        Forward { r, y, c }
    }

    /// Columns of the constraint Jacobian for `(mu_i, tau_i)`, cell by cell.
    fn jacobian(&self, x: &[f64], fw: &Forward) -> Vec<[Vector6<f64>; 2]> {
        let cr = fw.c.fixed_rows::<3>(0).into_owned();
        let jinv = left_jacobian_inv(&cr);
        let rn = fw.r[self.n];
        let yn = fw.y[self.n];
        let h = self.h;
        let ell = self.bd.ell;
        map_indexed(self.exec, self.n, |i| {
            let w = omega(x[2 * i], x[2 * i + 1]);
            let jl = left_jacobian(&(w * h));
            let dirs = [Vector3::y(), -Vector3::x()];
            let mut cols = [Vector6::zeros(); 2];
            for (col, dw) in cols.iter_mut().zip(dirs.iter()) {
                let phi = fw.r[i + 1].transpose() * (jl * dw * h);
                let dc = jinv * (rn * phi);
                let mut dy = -phi.cross(&(yn - fw.y[i + 1]));
                dy -= gauss8(h, |s| {
                    let rs = exp_so3(&(w * s)) * fw.r[i];
                    let chi = rs.transpose() * (left_jacobian(&(w * s)) * dw * s);
                    chi.cross(&rs.row(0).transpose())
                });
                dy /= ell;
                *col = Vector6::new(dc.x, dc.y, dc.z, dy.x, dy.y, dy.z);
            }
            cols
        })
    }
}

fn gauss8(h: f64, f: impl Fn(f64) -> Vector3<f64>) -> Vector3<f64> {
    const X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_2];
    const W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let half = 0.5 * h;
    X.iter()
        .zip(W.iter())
        .map(|(x, w)| (f(half * (1.0 - x)) + f(half * (1.0 + x))) * *w)
        .sum::<Vector3<f64>>()
        * half
}

struct Merit {
    value: f64,
    energy: f64,
    c: Vector6<f64>,
    grad: Vec<f64>,
}

struct Problem {
    map: BoundaryMap,
    nu: Vector6<f64>,
    rho: f64,
}

impl Problem {
    fn energy(&self, x: &[f64]) -> f64 {
        (0..self.map.n).map(|i| qbar(x[2 * i], x[2 * i + 1])).sum::<f64>() * self.map.h
    }

    fn value(&self, x: &[f64]) -> f64 {
        let c = self.map.forward(x).c;
        self.energy(x) - self.nu.dot(&c) + 0.5 * self.rho * c.norm_squared()
    }

    fn eval(&self, x: &[f64]) -> Merit {
        let fw = self.map.forward(x);
        let energy = self.energy(x);
        let c = fw.c;
        let value = energy - self.nu.dot(&c) + 0.5 * self.rho * c.norm_squared();
        let cols = self.map.jacobian(x, &fw);
        let nu_hat = self.nu - c * self.rho;
        let h = self.map.h;
        let mut grad = vec![0.0; 2 * self.map.n];
        for (i, col) in cols.iter().enumerate() {
            let (mu, tau) = (x[2 * i], x[2 * i + 1]);
            grad[2 * i] = dqbar_dmu(mu, tau) * h - col[0].dot(&nu_hat);
            grad[2 * i + 1] = dqbar_dtau(mu, tau) * h - col[1].dot(&nu_hat);
        }
        Merit { value, energy, c, grad }
    }

    /// L2 norm of the gradient density, divided by `1 + energy`.
    fn scaled_norm(&self, m: &Merit) -> f64 {
        let s: f64 = m.grad.iter().map(|g| g * g).sum::<f64>() / self.map.h;
        s.sqrt() / (1.0 + m.energy)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS on the current augmented Lagrangian. Returns the number of
/// iterations taken.
fn inner_solve(p: &Problem, x: &mut Vec<f64>, m: &mut Merit, gtol: f64, max_iter: usize, memory: usize) -> usize {
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    for it in 0..max_iter {
        if p.scaled_norm(m) <= gtol {
            return it;
        }
        let mut d: Vec<f64> = m.grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma = pairs.back().map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
        d.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&m.grad, &d);
        if slope >= 0.0 {
            pairs.clear();
            d = m.grad.iter().map(|g| -g).collect();
            slope = dot(&m.grad, &d);
        }
        let big = d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut step = if big > MAX_STEP { MAX_STEP / big } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let v = p.value(&trial);
            if v.is_finite() && v <= m.value + ARMIJO * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(trial) = accepted else {
            if pairs.is_empty() {
                return it;
            }
            pairs.clear();
            continue;
        };
        let next = p.eval(&trial);
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&m.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        *x = trial;
        *m = next;
    }
    max_iter
}

/// Minimizes the Sadowsky energy over frames with the clamped ends `bd`,
/// starting from `init` resampled to `opts.n_cells` cells.
pub fn minimize_sadowsky(bd: &BoundaryData, init: &CurvatureProfile, opts: &SolveOptions) -> Result<Solution> {
    let rig = rigidity_check(bd);
    if rig != Rigidity::Nontrivial {
        return Err(Error::Degenerate(rig));
    }
    if opts.n_cells == 0 || opts.memory == 0 || !(opts.tol > 0.0) || !(opts.gtol > 0.0) {
        return Err(Error::Precondition("solver options must be positive".into()));
    }
    if (init.length() - bd.ell).abs() > 1e-12 * bd.ell.max(1.0) {
        return Err(Error::Precondition(format!(
            "initial profile length {} does not match boundary data length {}",
            init.length(),
            bd.ell
        )));
    }
    let init_energy = sadowsky_energy(init);
    if !init_energy.is_finite() {
        return Err(Error::NonFinite("initial energy"));
    }
    let start = init.resample_uniform(opts.n_cells)?;
    let n = opts.n_cells;
    let mut x: Vec<f64> = (0..n).flat_map(|i| [start.mu()[i], start.tau()[i]]).collect();
    let mut p = Problem {
        map: BoundaryMap { bd: *bd, n, h: bd.ell / n as f64, exec: opts.exec },
        nu: Vector6::zeros(),
        rho: PENALTY_START,
    };

    let mut m = p.eval(&x);
    let mut inner_total = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut last_violation = m.c.norm();
    let mut report = feasibility(&x, bd)?;
    while outer < opts.max_outer {
        outer += 1;
        inner_total += inner_solve(&p, &mut x, &mut m, opts.gtol, opts.max_inner, opts.memory);
        report = feasibility(&x, bd)?;
        if report.pos_err <= opts.tol && report.rot_err <= opts.tol && p.scaled_norm(&m) <= opts.gtol {
            converged = true;
            break;
        }
        let violation = m.c.norm();
        p.nu -= m.c * p.rho;
        let feasible = report.pos_err <= opts.tol && report.rot_err <= opts.tol;
        if !feasible && violation > 0.25 * last_violation && p.rho < PENALTY_MAX {
            p.rho *= 2.0;
        }
        last_violation = violation;
        m = p.eval(&x);
    }

    let nu_hat = p.nu - m.c * p.rho;
    let multipliers = multipliers_from(&nu_hat, bd);
    let grid = uniform_grid(bd.ell, n);
    let profile = CurvatureProfile::piecewise_constant(
        grid,
        (0..n).map(|i| x[2 * i]).collect(),
        (0..n).map(|i| x[2 * i + 1]).collect(),
    )?;
    let curve = integrate_frame(&profile, Rotation::identity(), Vector3::zeros())?;
    let energy = sadowsky_energy(&profile);
    let quadratic: f64 = (0..n).map(|i| (x[2 * i].powi(2) + x[2 * i + 1].powi(2)) * p.map.h).sum();
    if energy < quadratic * (1.0 - 1e-12) {
        return Err(Error::Internal(format!("energy {energy} below the quadratic bound {quadratic}")));
    }
    let (el_twist, el_bend) = el_residual(&profile, &curve, &multipliers);
    let report = SolveReport {
        n_cells: n,
        energy,
        init_energy,
        pos_err: report.pos_err,
        rot_err: report.rot_err,
        el_twist,
        el_bend,
        gradient_norm: p.scaled_norm(&m),
        outer_iterations: outer,
        inner_iterations: inner_total,
        penalty: p.rho,
        planarity: planarity_measure(&curve),
        converged,
    };
    Ok(Solution { profile, curve, multipliers, report })
}

fn feasibility(x: &[f64], bd: &BoundaryData) -> Result<AdmissibilityReport> {
    let n = x.len() / 2;
    let profile = CurvatureProfile::piecewise_constant(
        uniform_grid(bd.ell, n),
        (0..n).map(|i| x[2 * i]).collect(),
        (0..n).map(|i| x[2 * i + 1]).collect(),
    )?;
    let fc = integrate_frame(&profile, Rotation::identity(), Vector3::zeros())?;
    AdmissibilityReport::of_curve(&fc, bd, 0.0)
}

/// Converts the constraint multipliers of the scaled boundary map into the
/// load form `lambda2 + lambda1 x y`.
fn multipliers_from(nu: &Vector6<f64>, bd: &BoundaryData) -> Multipliers {
    let nu_r = nu.fixed_rows::<3>(0).into_owned();
    let nu_y = nu.fixed_rows::<3>(3).into_owned() / bd.ell;
    Multipliers {
        lambda1: -nu_y,
        lambda2: bd.r_bar.matrix().transpose() * nu_r + nu_y.cross(&bd.y_bar),
    }
}

/// Quadrature nodes (cell midpoints) and weights.
fn nodes(profile: &CurvatureProfile) -> Vec<(f64, f64)> {
    profile.grid().windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0])).collect()
}

/// L2 norms of the twist residual `Qbar_tau + w.d1` and the bend residual
/// `Qbar_mu - w.d2` with `w = lambda2 + lambda1 x y`, by the midpoint rule.
pub fn el_residual(profile: &CurvatureProfile, fc: &FramedCurve, mult: &Multipliers) -> (f64, f64) {
    let (mut twist, mut bend) = (0.0, 0.0);
    for (t, wt) in nodes(profile) {
        let (mu, tau) = profile.value_at(t);
        let (y, r) = frame_at(profile, fc, t);
        let w = mult.load_at(&y);
        twist += (dqbar_dtau(mu, tau) + w.dot(&r.d1())).powi(2) * wt;
        bend += (dqbar_dmu(mu, tau) - w.dot(&r.d2())).powi(2) * wt;
    }
    (twist.sqrt(), bend.sqrt())
}

/// Least-squares multipliers for the Euler-Lagrange system of a given frame.
pub fn recover_multipliers(profile: &CurvatureProfile, fc: &FramedCurve) -> MultiplierFit {
    let pts = nodes(profile);
    let mut a = DMatrix::zeros(2 * pts.len(), 6);
    let mut b = DVector::zeros(2 * pts.len());
    for (k, &(t, wt)) in pts.iter().enumerate() {
        let (mu, tau) = profile.value_at(t);
        let (y, r) = frame_at(profile, fc, t);
        let sw = wt.sqrt();
        let (d1, d2) = (r.d1(), r.d2());
        let (yd1, yd2) = (y.cross(&d1), y.cross(&d2));
        for j in 0..3 {
            a[(2 * k, j)] = yd1[j] * sw;
            a[(2 * k, 3 + j)] = d1[j] * sw;
            a[(2 * k + 1, j)] = yd2[j] * sw;
            a[(2 * k + 1, 3 + j)] = d2[j] * sw;
        }
        b[2 * k] = -dqbar_dtau(mu, tau) * sw;
        b[2 * k + 1] = dqbar_dmu(mu, tau) * sw;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let cut = SVD_CUTOFF * smax.max(f64::MIN_POSITIVE);
    let degenerate = svd.singular_values.iter().any(|s| *s <= cut);
    let sol = svd.solve(&b, cut).unwrap_or_else(|_| DVector::zeros(6));
    let multipliers = Multipliers {
        lambda1: Vector3::new(sol[0], sol[1], sol[2]),
        lambda2: Vector3::new(sol[3], sol[4], sol[5]),
    };
    let (res_twist, res_bend) = el_residual(profile, fc, &multipliers);
    MultiplierFit { multipliers, res_twist, res_bend, degenerate }
}

pub fn check_nonplanarity(solution: &FramedCurve, threshold: f64) -> bool {
    planarity_measure(solution) > threshold
}
