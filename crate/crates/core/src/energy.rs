//! The energy density `Qbar`, its characterization as a minimum over the
//! free entry `gamma`, the Sadowsky functional and the relaxed functional
//! `F(M) = int |M|^2 + 2 |det M|`.

use serde::{Deserialize, Serialize};

use crate::curveframe::{validate_grid, uniform_grid, CurvatureProfile, Interpolation};
use crate::error::{Error, Result};

/// `Qbar(mu, tau)`; the second branch covers `|mu| <= |tau|`, including `mu = 0`.
pub fn qbar(mu: f64, tau: f64) -> f64 {
    if mu.abs() > tau.abs() {
        let s = mu * mu + tau * tau;
        s * s / (mu * mu)
    } else {
        4.0 * tau * tau
    }
}

/// Density of the relaxed functional: `|M|^2 + 2 |det M|` with
/// `|M|^2 = M11^2 + 2 M12^2 + M22^2`.
pub fn relaxed_density(m11: f64, m12: f64, m22: f64) -> f64 {
    m11 * m11 + 2.0 * m12 * m12 + m22 * m22 + 2.0 * (m11 * m22 - m12 * m12).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QbarMin {
    pub value: f64,
    /// Minimizing `gamma`; ties at `|mu| = |tau|` take `gamma = mu`.
    pub gamma: f64,
}

/// `min over gamma of |M|^2 + 2|det M|` for `M = [[mu, tau], [tau, gamma]]`.
pub fn qbar_via_min(mu: f64, tau: f64) -> QbarMin {
    if mu.abs() > tau.abs() {
        QbarMin { value: qbar(mu, tau), gamma: tau * tau / mu }
    } else {
        QbarMin { value: 4.0 * tau * tau, gamma: mu }
    }
}

pub fn dqbar_dmu(mu: f64, tau: f64) -> f64 {
    if mu.abs() > tau.abs() {
        let (m2, t2) = (mu * mu, tau * tau);
        2.0 * (m2 * m2 - t2 * t2) / (m2 * mu)
    } else {
        0.0
    }
}

pub fn dqbar_dtau(mu: f64, tau: f64) -> f64 {
    if mu.abs() > tau.abs() {
        4.0 * tau * (mu * mu + tau * tau) / (mu * mu)
    } else {
        8.0 * tau
    }
}

/// `int_0^ell Qbar(mu, tau) dt`: exact for piecewise-constant profiles;
/// nodal-linear profiles use Simpson on 4 sub-cells per branch piece.
pub fn sadowsky_energy(profile: &CurvatureProfile) -> f64 {
    match profile.interpolation() {
        Interpolation::PiecewiseConstant => (0..profile.n_cells())
            .map(|i| qbar(profile.mu()[i], profile.tau()[i]) * profile.cell_width(i))
            .sum(),
        Interpolation::NodalLinear => (0..profile.n_cells()).map(|i| linear_cell_energy(profile, i)).sum(),
    }
}

fn linear_cell_energy(p: &CurvatureProfile, i: usize) -> f64 {
    let (m0, m1) = (p.mu()[i], p.mu()[i + 1]);
    let (t0, t1) = (p.tau()[i], p.tau()[i + 1]);
    let at = |s: f64| (m0 + s * (m1 - m0), t0 + s * (t1 - t0));
    let branch = |s: f64| {
        let (m, t) = at(s);
        m.abs() - t.abs()
    };
    // kinks of |mu| - |tau| sit at the zeros of mu and tau
    let mut marks = vec![0.0, 1.0];
    for (a, b) in [(m0, m1), (t0, t1)] {
        if a * b < 0.0 {
            marks.push(a / (a - b));
        }
    }
    marks.sort_by(f64::total_cmp);
    let mut breaks = vec![0.0];
    for w in marks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if branch(lo) * branch(hi) < 0.0 {
            let (mut a, mut b) = (lo, hi);
            while b - a > 1e-10 {
                let c = 0.5 * (a + b);
                if branch(a) * branch(c) <= 0.0 {
                    b = c;
                } else {
                    a = c;
                }
            }
            breaks.push(0.5 * (a + b));
        }
        breaks.push(hi);
    }
    let h = p.cell_width(i);
    let f = |s: f64| {
        let (m, t) = at(s);
        qbar(m, t)
    };
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| simpson(&f, w[0], w[1], 4) * h)
        .sum()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Piecewise-constant symmetric 2x2 field `M` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymField {
    grid: Vec<f64>,
    m11: Vec<f64>,
    m12: Vec<f64>,
    m22: Vec<f64>,
}

impl SymField {
    pub fn new(grid: Vec<f64>, m11: Vec<f64>, m12: Vec<f64>, m22: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        let n = grid.len() - 1;
        for (what, v) in [("m11", &m11), ("m12", &m12), ("m22", &m22)] {
            if v.len() != n {
                return Err(Error::LengthMismatch { what, expected: n, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(what));
            }
        }
        Ok(SymField { grid, m11, m12, m22 })
    }

    pub fn constant(ell: f64, n: usize, m11: f64, m12: f64, m22: f64) -> Result<Self> {
        if !(ell > 0.0) || n == 0 {
            return Err(Error::InvalidGrid(format!("ell = {ell}, n = {n}")));
        }
        Self::new(uniform_grid(ell, n), vec![m11; n], vec![m12; n], vec![m22; n])
    }

    /// `M = [[mu, tau], [tau, gamma*]]` with the minimizing `gamma*` per cell.
    pub fn relaxed_of(profile: &CurvatureProfile) -> Result<Self> {
        if profile.interpolation() != Interpolation::PiecewiseConstant {
            return Err(Error::Precondition("expected a piecewise-constant profile".into()));
        }
        let m22 = profile
            .mu()
            .iter()
            .zip(profile.tau())
            .map(|(&m, &t)| qbar_via_min(m, t).gamma)
            .collect();
        Self::new(profile.grid().to_vec(), profile.mu().to_vec(), profile.tau().to_vec(), m22)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn m11(&self) -> &[f64] {
        &self.m11
    }

    pub fn m12(&self) -> &[f64] {
        &self.m12
    }

    pub fn m22(&self) -> &[f64] {
        &self.m22
    }

    pub fn n_cells(&self) -> usize {
        self.m11.len()
    }

    pub fn length(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn cell(&self, i: usize) -> (f64, f64, f64) {
        (self.m11[i], self.m12[i], self.m22[i])
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        self.grid[i + 1] - self.grid[i]
    }

    /// The curvature profile `A_M`: `mu = M11`, `tau = M12`.
    pub fn induced_profile(&self) -> Result<CurvatureProfile> {
        CurvatureProfile::piecewise_constant(self.grid.clone(), self.m11.clone(), self.m12.clone())
    }

    /// `int |M|^2 dt`.
    pub fn norm_squared(&self) -> f64 {
        (0..self.n_cells())
            .map(|i| {
                let (a, b, c) = self.cell(i);
                (a * a + 2.0 * b * b + c * c) * self.cell_width(i)
            })
            .sum()
    }
}

/// `F(M) = int |M|^2 + 2 |det M| dt`, exact per cell.
pub fn relaxed_f(m: &SymField) -> f64 {
    (0..m.n_cells())
        .map(|i| {
            let (a, b, c) = m.cell(i);
            relaxed_density(a, b, c) * m.cell_width(i)
        })
        .sum()
}
