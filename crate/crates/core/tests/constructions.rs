use std::f64::consts::PI;

use nalgebra::Vector3;
use proptest::prelude::*;
use sadowsky::constructions::{build_interpolating_frame, planar_mobius_example};
use sadowsky::*;

fn boundary_strategy() -> impl Strategy<Value = BoundaryData> {
    (
        0.5f64..10.0,
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..0.95,
        prop::array::uniform3(-1.8f64..1.8),
    )
        .prop_filter_map("direction", |(ell, dir, frac, aa)| {
            let d = Vector3::from(dir);
            if d.norm() < 1e-3 {
                return None;
            }
            let y = d.normalize() * frac * ell;
            BoundaryData::new(ell, y, Rotation::from_axis_angle(Vector3::from(aa))).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolating_frames_meet_the_data(bd in boundary_strategy()) {
        let g = build_interpolating_frame(&bd).unwrap();
        let total: f64 = g.pieces().iter().map(|p| p.length()).sum();
        prop_assert!((total - bd.ell).abs() <= 1e-12 * bd.ell);
        let fc = g.curve().unwrap();
        let rep = AdmissibilityReport::of_curve(&fc, &bd, 1e-9).unwrap();
        prop_assert!(rep.ok, "{:?}", rep);
        prop_assert!(constraint_residual(&fc).unwrap() <= 1e-9);
        for r in fc.r() {
            prop_assert!(r.orthonormality_error() <= 1e-12);
        }
    }

    #[test]
    fn junctions_are_c1(bd in boundary_strategy()) {
        let g = build_interpolating_frame(&bd).unwrap();
        let h = 1e-6;
        for w in g.pieces().windows(2) {
            let t = w[0].interval().1;
            let (ya, ra) = w[0].eval(t);
            let (yb, rb) = w[1].eval(t);
            let bend = w[0].curvature().0.abs() + w[1].curvature().0.abs();
            prop_assert!((ya - yb).norm() <= 1e-12 * (1.0 + ya.norm()));
            // the junction parameter carries ulp(t), which a tight arc turns into an angle
            prop_assert!(ra.distance(&rb) <= 1e-12 + 8.0 * f64::EPSILON * bend * t, "{:e}", ra.distance(&rb));
            let left = (ya - w[0].eval(t - h).0) / h;
            let right = (w[1].eval(t + h).0 - yb) / h;
            prop_assert!((left - right).norm() <= bend * h + 1e-7);
        }
    }
}

#[test]
fn planar_mobius_branches() {
    let g = planar_mobius_example();
    assert!((g.length() - (2.0 + 2.0 * PI)).abs() < 1e-12);
    for piece in g.pieces() {
        let (mu, tau) = piece.curvature();
        assert!(mu == 0.0 || mu == -1.0, "{mu}");
        assert!(tau == 0.0 || (tau - PI).abs() < 1e-15, "{tau}");
    }
    let d2 = g.eval(1.0 + 1e-9).1.d2();
    for k in 1..=100 {
        let t = 1.0 + (g.length() - 1.0) * k as f64 / 100.0;
        assert!((g.eval(t).1.d2() - d2).norm() < 1e-9);
    }
}
