//! Explicit admissible frames: straight and circular pieces, the glued
//! frame reaching any boundary data with `|y_bar| < ell`, and the planar
//! Möbius band with the half twist concentrated on `(0, 1)`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::curveframe::{
    rigidity_check, BoundaryData, CurvatureProfile, FramedCurve, Rigidity,
};
use crate::error::{Error, Result};
use crate::rotation::{signed_angle, Rotation};

const UNIT_TOL: f64 = 1e-12;
const PERP_TOL: f64 = 1e-12;
const MIN_PIECE_CELLS: usize = 64;
const CELLS_PER_LENGTH: f64 = 1024.0;

/// A frame with constant `(mu, tau)` on `[t0, t1]`, written in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FramePiece {
    /// `y = start + (t - t0) d`, `d1 = d`, and `d2` turning about `d` at rate
    /// `alpha`: `d2 = cos(phi) b + sin(phi) d x b` with `phi = alpha (t - t0) + beta`.
    Straight {
        t0: f64,
        t1: f64,
        start: Vector3<f64>,
        direction: Vector3<f64>,
        transversal: Vector3<f64>,
        alpha: f64,
        beta: f64,
    },
    /// `y = center + sigma (cos(phi) e + sin(phi) b x e)` with
    /// `phi = alpha + (t - t0) / sigma` and `d2 = b` fixed.
    Circular {
        t0: f64,
        t1: f64,
        center: Vector3<f64>,
        sigma: f64,
        alpha: f64,
        normal: Vector3<f64>,
        anchor: Vector3<f64>,
    },
}

impl FramePiece {
    /// Straight piece starting at `(y0, d1, d2)` that turns `d2` into `target`.
    pub fn straight_from(
        t0: f64,
        len: f64,
        y0: Vector3<f64>,
        d1: Vector3<f64>,
        d2: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self> {
        let piece = FramePiece::Straight {
            t0,
            t1: t0 + len,
            start: y0,
            direction: d1,
            transversal: d2,
            alpha: signed_angle(&d2, &target, &d1) / len,
            beta: 0.0,
        };
        piece.validate()?;
        Ok(piece)
    }

    /// Circular piece starting at `(y0, d1, d2)` that turns `d1` into
    /// `target` about the fixed `d2`.
    pub fn circular_from(
        t0: f64,
        len: f64,
        y0: Vector3<f64>,
        d1: Vector3<f64>,
        d2: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self> {
        let phi = signed_angle(&d1, &target, &d2);
        if phi.abs() < PERP_TOL {
            return Err(Error::Internal("circular piece with zero turning angle".into()));
        }
        let sigma = len / phi;
        let anchor = d1.cross(&d2);
        let piece = FramePiece::Circular {
            t0,
            t1: t0 + len,
            center: y0 - anchor * sigma,
            sigma,
            alpha: 0.0,
            normal: d2,
            anchor,
        };
        piece.validate()?;
        Ok(piece)
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.interval();
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::Precondition(format!("invalid piece interval [{t0}, {t1}]")));
        }
        let (u, v, extra) = match *self {
            FramePiece::Straight { start, direction, transversal, alpha, beta, .. } => {
                (direction, transversal, start.norm() + alpha.abs() + beta.abs())
            }
            FramePiece::Circular { center, sigma, alpha, normal, anchor, .. } => {
                if sigma == 0.0 {
                    return Err(Error::Precondition("circular piece with zero radius".into()));
                }
                (normal, anchor, center.norm() + sigma.abs() + alpha.abs())
            }
        };
        if !extra.is_finite() || !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("frame piece"));
        }
        if (u.norm() - 1.0).abs() > UNIT_TOL || (v.norm() - 1.0).abs() > UNIT_TOL || u.dot(&v).abs() > UNIT_TOL {
            return Err(Error::Precondition("piece directions must be orthonormal".into()));
        }
        Ok(())
    }

    pub fn interval(&self) -> (f64, f64) {
        match *self {
            FramePiece::Straight { t0, t1, .. } | FramePiece::Circular { t0, t1, .. } => (t0, t1),
        }
    }

    pub fn length(&self) -> f64 {
        let (a, b) = self.interval();
        b - a
    }

    /// Constant `(mu, tau)` of the piece.
    pub fn curvature(&self) -> (f64, f64) {
        match *self {
            FramePiece::Straight { alpha, .. } => (0.0, alpha),
            FramePiece::Circular { sigma, .. } => (-1.0 / sigma, 0.0),
        }
    }

    /// Centerline point and frame at `t`.
    pub fn eval(&self, t: f64) -> (Vector3<f64>, Rotation) {
        match *self {
            FramePiece::Straight { t0, start, direction, transversal, alpha, beta, .. } => {
                let s = t - t0;
                let (sn, cs) = (alpha * s + beta).sin_cos();
                let d2 = transversal * cs + direction.cross(&transversal) * sn;
                (start + direction * s, directors(direction, d2))
            }
            FramePiece::Circular { t0, center, sigma, alpha, normal, anchor, .. } => {
                let (sn, cs) = (alpha + (t - t0) / sigma).sin_cos();
                let f = normal.cross(&anchor);
                let y = center + (anchor * cs + f * sn) * sigma;
                let d1 = f * cs - anchor * sn;
                (y, directors(d1, normal))
            }
        }
    }

    pub fn end(&self) -> (Vector3<f64>, Rotation) {
        self.eval(self.interval().1)
    }

    fn shifted(&self, dt: f64, dy: Vector3<f64>) -> FramePiece {
        let mut p = *self;
        match &mut p {
            FramePiece::Straight { t0, t1, start, .. } => {
                *t0 += dt;
                *t1 += dt;
                *start += dy;
            }
            FramePiece::Circular { t0, t1, center, .. } => {
                *t0 += dt;
                *t1 += dt;
                *center += dy;
            }
        }
        p
    }

    fn sample(&self, n: usize) -> Result<FramedCurve> {
        let (a, b) = self.interval();
        let grid: Vec<f64> = (0..=n).map(|k| if k == n { b } else { a + (b - a) * k as f64 / n as f64 }).collect();
        let (y, r) = grid.iter().map(|&t| self.eval(t)).unzip();
        FramedCurve::new(grid, y, r)
    }
}

fn directors(d1: Vector3<f64>, d2: Vector3<f64>) -> Rotation {
    let d3 = d1.cross(&d2);
    Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
        d1.transpose(),
        d2.transpose(),
        d3.transpose(),
    ]))
}

/// Samples a straight piece on 64 cells.
pub fn straight_frame(piece: &FramePiece) -> Result<FramedCurve> {
    piece.validate()?;
    match piece {
        FramePiece::Straight { .. } => piece.sample(MIN_PIECE_CELLS),
        _ => Err(Error::Precondition("expected a straight piece".into())),
    }
}

/// Samples a circular piece on 64 cells.
pub fn circular_frame(piece: &FramePiece) -> Result<FramedCurve> {
    piece.validate()?;
    match piece {
        FramePiece::Circular { .. } => piece.sample(MIN_PIECE_CELLS),
        _ => Err(Error::Precondition("expected a circular piece".into())),
    }
}

/// A frame on `[0, ell]` assembled from consecutive pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluedFrame {
    pieces: Vec<FramePiece>,
}

impl GluedFrame {
    pub fn new(pieces: Vec<FramePiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::Precondition("no pieces".into()));
        }
        for p in &pieces {
            p.validate()?;
        }
        if pieces[0].interval().0 != 0.0 {
            return Err(Error::Precondition("first piece must start at 0".into()));
        }
        if pieces.windows(2).any(|w| w[0].interval().1 != w[1].interval().0) {
            return Err(Error::Precondition("pieces must be contiguous".into()));
        }
        Ok(GluedFrame { pieces })
    }

    pub fn pieces(&self) -> &[FramePiece] {
        &self.pieces
    }

    pub fn length(&self) -> f64 {
        self.pieces.last().unwrap().interval().1
    }

    pub fn eval(&self, t: f64) -> (Vector3<f64>, Rotation) {
        let k = self.pieces.partition_point(|p| p.interval().1 < t).min(self.pieces.len() - 1);
        self.pieces[k].eval(t)
    }

    /// Sampling grid: at least 64 cells per piece and spacing at most `ell / 1024`.
    pub fn sample_grid(&self) -> Vec<f64> {
        let ell = self.length();
        let mut grid = vec![0.0];
        for p in &self.pieces {
            let (a, b) = p.interval();
            let n = MIN_PIECE_CELLS.max(((b - a) * CELLS_PER_LENGTH / ell).ceil() as usize);
            grid.extend((1..=n).map(|k| if k == n { b } else { a + (b - a) * k as f64 / n as f64 }));
        }
        grid
    }

    /// Piecewise-constant curvature on [`GluedFrame::sample_grid`].
    pub fn profile(&self) -> Result<CurvatureProfile> {
        let grid = self.sample_grid();
        let mut k = 0;
        let (mu, tau) = grid
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                while self.pieces[k].interval().1 < mid {
                    k += 1;
                }
                self.pieces[k].curvature()
            })
            .unzip();
        CurvatureProfile::piecewise_constant(grid, mu, tau)
    }

    /// Piecewise-constant curvature with one cell per piece.
    pub fn piece_profile(&self) -> Result<CurvatureProfile> {
        let mut grid = vec![0.0];
        grid.extend(self.pieces.iter().map(|p| p.interval().1));
        let (mu, tau) = self.pieces.iter().map(|p| p.curvature()).unzip();
        CurvatureProfile::piecewise_constant(grid, mu, tau)
    }

    /// Closed-form samples on [`GluedFrame::sample_grid`]; junction nodes are
    /// evaluated on the piece that starts there.
    pub fn curve(&self) -> Result<FramedCurve> {
        let grid = self.sample_grid();
        let mut k = 0;
        let (y, r) = grid
            .iter()
            .map(|&t| {
                while k + 1 < self.pieces.len() && self.pieces[k].interval().1 <= t {
                    k += 1;
                }
                self.pieces[k].eval(t)
            })
            .unzip();
        FramedCurve::new(grid, y, r)
    }
}

fn perpendicular(v: &Vector3<f64>) -> Vector3<f64> {
    for e in [Vector3::x(), Vector3::y(), Vector3::z()] {
        let w = e - v * v.dot(&e);
        if w.norm() > 0.5 {
            return w.normalize();
        }
    }
    unreachable!("one basis vector is always far from v")
}

/// Explicit admissible frame for boundary data with `|y_bar| < ell`.
///
/// Away from the origin the frame is: an optional arc turning `e1` into the
/// direction `d10` orthogonal to `y_bar`; a U-shaped run made of two straight
/// legs along `+-d10` joined by two quarter circles of radius `delta`; and an
/// optional three-piece end turning `(-d10, e2)` into the target frame over
/// the last `delta`. Leg lengths are solved so the total length is `ell`.
/// `y_bar = 0` is reduced to `y_bar = -(ell/4) d1_bar` on `[0, 3 ell / 4]`
/// followed by a straight untwisted piece.
pub fn build_interpolating_frame(bd: &BoundaryData) -> Result<GluedFrame> {
    match rigidity_check(bd) {
        Rigidity::Nontrivial => {}
        other => return Err(Error::Degenerate(other)),
    }
    let pieces = glue(bd.ell, bd.y_bar, bd.r_bar.d1(), bd.r_bar.d2())?;
    let frame = GluedFrame::new(pieces)?;
    let (y, r) = frame.eval(frame.length());
    let err = (y - bd.y_bar).norm() / bd.ell + r.distance(&bd.r_bar);
    if err > 1e-9 || (frame.length() - bd.ell).abs() > 1e-12 * bd.ell {
        return Err(Error::Internal(format!("glued frame misses boundary data by {err:e}")));
    }
    Ok(frame)
}

fn glue(ell: f64, y_bar: Vector3<f64>, d1_bar: Vector3<f64>, d2_bar: Vector3<f64>) -> Result<Vec<FramePiece>> {
    let dist = y_bar.norm();
    if dist == 0.0 {
        let head = 0.75 * ell;
        let mut pieces = glue(head, -d1_bar * (0.25 * ell), d1_bar, d2_bar)?;
        pieces.push(FramePiece::Straight {
            t0: head,
            t1: ell,
            start: -d1_bar * (0.25 * ell),
            direction: d1_bar,
            transversal: d2_bar,
            alpha: 0.0,
            beta: 0.0,
        });
        return Ok(pieces);
    }
    let delta = dist.min(ell - dist) / 12.0;
    let u = y_bar / dist;
    let (e1, e2) = (Vector3::x(), Vector3::y());
    let zero = Vector3::zeros();
    let mut pieces = Vec::new();

    // start: turn e1 into d10, the closest direction in the e1 e3 plane orthogonal to y_bar
    let (d10, p0, delta_i) = if e1.dot(&u).abs() > PERP_TOL {
        let mut d = e2.cross(&u).normalize();
        if d.x < 0.0 || (d.x == 0.0 && d.z < 0.0) {
            d = -d;
        }
        let arc = FramePiece::circular_from(0.0, delta, zero, e1, e2, d)?;
        let p0 = arc.end().0;
        pieces.push(arc);
        (d, p0, delta)
    } else {
        (e1, zero, 0.0)
    };

    // end: turn (-d10, e2) into (d1_bar, d2_bar) over the last delta
    let (tail, pl, delta_e, d2_join) = if (d1_bar + d10).norm() > PERP_TOL {
        let cross = d1_bar.cross(&d10);
        let a = if cross.norm() > PERP_TOL { cross.normalize() } else { perpendicular(&d1_bar) };
        let h = delta / 3.0;
        let s1 = FramePiece::straight_from(0.0, h, zero, -d10, e2, a)?;
        let (y1, r1) = s1.end();
        let s2 = FramePiece::circular_from(h, h, y1, r1.d1(), a, d1_bar)?;
        let (y2, r2) = s2.end();
        let s3 = FramePiece::straight_from(2.0 * h, h, y2, r2.d1(), a, d2_bar)?;
        let disp = s3.end().0;
        (vec![s1, s2, s3], y_bar - disp, delta, e2)
    } else {
        (Vec::new(), y_bar, 0.0, d2_bar)
    };

    // middle: P0 -> Q0 along d10, Q0 -> Ql along dp, Ql -> Pl along -d10
    let gap = pl - p0;
    let c = gap.dot(&d10);
    let wvec = gap - d10 * c;
    let w = wvec.norm();
    let budget = ell + (4.0 - PI) * delta - w - delta_i - delta_e;
    let eta0 = 0.5 * (budget + c);
    let etal = 0.5 * (budget - c);
    if !(eta0 > delta && etal > delta && w > 2.0 * delta) {
        return Err(Error::Internal(format!(
            "leg lengths infeasible: eta0 = {eta0}, etal = {etal}, w = {w}, delta = {delta}"
        )));
    }
    let dp = wvec / w;
    let b = d10.cross(&dp).normalize();
    let quarter = 0.5 * PI * delta;

    let mut t = delta_i;
    let leg0 = FramePiece::straight_from(t, eta0 - delta, p0, d10, e2, b)?;
    t += eta0 - delta;
    let turn0 = FramePiece::circular_from(t, quarter, leg0.end().0, d10, b, dp)?;
    t += quarter;
    let cross_len = w - 2.0 * delta;
    let cross_leg = FramePiece::Straight {
        t0: t,
        t1: t + cross_len,
        start: turn0.end().0,
        direction: dp,
        transversal: b,
        alpha: 0.0,
        beta: 0.0,
    };
    t += cross_len;
    let turn1 = FramePiece::circular_from(t, quarter, cross_leg.end().0, dp, b, -d10)?;
    t += quarter;
    let leg1 = FramePiece::straight_from(t, etal - delta, turn1.end().0, -d10, b, d2_join)?;
    t += etal - delta;
    pieces.extend([leg0, turn0, cross_leg, turn1, leg1]);
    for p in tail {
        pieces.push(p.shifted(t, pl));
    }
    // absorb round-off in the final interval end
    if let Some(last) = pieces.last_mut() {
        match last {
            FramePiece::Straight { t1, .. } | FramePiece::Circular { t1, .. } => *t1 = ell,
        }
    }
    Ok(pieces)
}

/// The planar band on `ell = 2 + 2 pi`: a straight half twist on `(0, 1)`,
/// a half circle of radius 1, a straight return leg and a second half circle
/// closing at the origin, with `d2 = -e2` after the twist.
pub fn planar_mobius_example() -> GluedFrame {
    let (e1, e2, e3) = (Vector3::x(), Vector3::y(), Vector3::z());
    let pieces = vec![
        FramePiece::Straight { t0: 0.0, t1: 1.0, start: Vector3::zeros(), direction: e1, transversal: e2, alpha: PI, beta: 0.0 },
        FramePiece::Circular { t0: 1.0, t1: 1.0 + PI, center: Vector3::new(1.0, 0.0, 1.0), sigma: 1.0, alpha: 0.0, normal: -e2, anchor: -e3 },
        FramePiece::Straight { t0: 1.0 + PI, t1: 2.0 + PI, start: Vector3::new(1.0, 0.0, 2.0), direction: -e1, transversal: -e2, alpha: 0.0, beta: 0.0 },
        FramePiece::Circular { t0: 2.0 + PI, t1: 2.0 + 2.0 * PI, center: Vector3::new(0.0, 0.0, 1.0), sigma: 1.0, alpha: 0.0, normal: -e2, anchor: e3 },
    ];
    GluedFrame::new(pieces).expect("closed-form pieces are valid")
}
