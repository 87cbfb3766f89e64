//! Rotations stored as director triples and the SO(3) maps used by the
//! frame integrator: exponential, logarithm and the left Jacobian.
//!
//! A [`Rotation`] is the matrix `r` whose *rows* are the directors
//! `d1, d2, d3`. The frame equation `r' = A r` with `A` skew therefore acts
//! on the left, and the directors in world coordinates are `d_k = r^T e_k`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance for rotations built from user data.
pub const ORTHO_TOL: f64 = 1e-12;

const SMALL_ANGLE: f64 = 1e-4;

/// Orthonormal director triple; rows of the matrix are `d1, d2, d3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix, checking orthonormality and orientation to `tol`.
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rotation"));
        }
        let err = (m * m.transpose() - Matrix3::identity()).norm();
        if err > tol {
            return Err(Error::InvalidRotation(format!(
                "rows not orthonormal (deviation {err:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Rotation(m))
    }

    /// Builds the rotation from `d1` and `d2`; `d3 = d1 x d2`.
    pub fn from_directors(d1: Vector3<f64>, d2: Vector3<f64>, tol: f64) -> Result<Self> {
        let d3 = d1.cross(&d2);
        Self::from_matrix(Matrix3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()]), tol)
    }

    /// Rows are taken as given; the caller guarantees orthonormality.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Directors `d_k = exp([w]x) e_k`.
    pub fn from_axis_angle(axis_angle: Vector3<f64>) -> Self {
        Rotation(exp_so3(&axis_angle).transpose())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn d1(&self) -> Vector3<f64> {
        self.0.row(0).transpose()
    }

    pub fn d2(&self) -> Vector3<f64> {
        self.0.row(1).transpose()
    }

    /// Third director, always derived as `d1 x d2`.
    pub fn d3(&self) -> Vector3<f64> {
        self.d1().cross(&self.d2())
    }

    /// `|| r r^T - I ||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Frobenius distance `|| self - other ||_F`.
    pub fn distance(&self, other: &Rotation) -> f64 {
        (self.0 - other.0).norm()
    }

    /// Left action by a rotation matrix: `E r`, followed by one
    /// Newton-Schulz step so round-off does not accumulate along a long grid.
    pub(crate) fn premul(&self, e: &Matrix3<f64>) -> Rotation {
        Rotation(reorthonormalize(&(e * self.0)))
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Rodrigues formula for `exp([w]x)`.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _) = rodrigues_coeffs(w.norm());
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian `J(w) = sum_k [w]x^k / (k+1)!`, so that
/// `int_0^1 exp(s [w]x) ds = J(w)` and
/// `exp([w + dw]x) = exp([J(w) dw]x) exp([w]x) + O(dw^2)`.
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, c) = rodrigues_coeffs(w.norm());
    let k = hat(w);
    Matrix3::identity() + k * b + k * k * c
}

pub fn left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    let coeff = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s)
    };
    Matrix3::identity() - k * 0.5 + k * k * coeff
}

/// Principal logarithm, returned as an axis-angle vector with angle in `[0, pi]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let skew = vee(&(r - r.transpose())) * 0.5;
    if theta < SMALL_ANGLE {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::FRAC_PI_2 {
        return skew * (theta / theta.sin());
    }
    // Near pi the antisymmetric part vanishes; read the axis off the
    // symmetric part (1 - cos) k k^T instead.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let mut best = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(best, best)] {
            best = i;
        }
    }
    let mut axis: Vector3<f64> = sym.column(best).into();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn reorthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    m * (Matrix3::identity() * 1.5 - m.transpose() * m * 0.5)
}

/// Signed angle that rotates `from` onto `to` about `axis`; both vectors are
/// assumed orthogonal to `axis`.
pub fn signed_angle(from: &Vector3<f64>, to: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
    from.cross(to).dot(axis).atan2(from.dot(to))
}
