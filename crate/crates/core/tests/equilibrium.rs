use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::Vector3;
use proptest::prelude::*;
use sadowsky::constructions::{build_interpolating_frame, planar_mobius_example};
use sadowsky::equilibrium::*;
use sadowsky::*;

const EXAMPLE_ENERGY: f64 = 4.0 * PI * PI + 2.0 * PI;

fn mobius() -> (BoundaryData, CurvatureProfile) {
    let bd = BoundaryData::mobius(2.0 + 2.0 * PI).unwrap();
    let init = build_interpolating_frame(&bd).unwrap().profile().unwrap();
    (bd, init)
}

fn solve(n: usize) -> &'static Solution {
    static S200: OnceLock<Solution> = OnceLock::new();
    static S400: OnceLock<Solution> = OnceLock::new();
    let cell = if n == 200 { &S200 } else { &S400 };
    cell.get_or_init(|| {
        let (bd, init) = mobius();
        minimize_sadowsky(&bd, &init, &SolveOptions { n_cells: n, ..Default::default() }).unwrap()
    })
}

#[test]
fn mobius_minimizer_properties() {
    let sol = solve(200);
    let r = sol.report;
    assert!(r.converged, "{r:?}");
    assert!(r.pos_err <= 1e-7 && r.rot_err <= 1e-7);
    assert!(r.energy < EXAMPLE_ENERGY, "{}", r.energy);
    assert!(check_nonplanarity(&sol.curve, PLANARITY_THRESHOLD));
    assert!(r.el_twist <= 1e-3 * (1.0 + r.energy) && r.el_bend <= 1e-3 * (1.0 + r.energy), "{r:?}");
    assert!(r.energy <= r.init_energy);
    let quadratic: f64 = (0..sol.profile.n_cells())
        .map(|i| {
            let (m, t) = sol.profile.cell_values(i);
            (m * m + t * t) * sol.profile.cell_width(i)
        })
        .sum();
    assert!(r.energy >= quadratic);
}

#[test]
fn multipliers_are_consistent() {
    let sol = solve(200);
    let fit = recover_multipliers(&sol.profile, &sol.curve);
    assert!(!fit.degenerate);
    let diff = Multipliers {
        lambda1: fit.multipliers.lambda1 - sol.multipliers.lambda1,
        lambda2: fit.multipliers.lambda2 - sol.multipliers.lambda2,
    };
    assert!(diff.norm() <= 0.1 * sol.multipliers.norm(), "{:?} vs {:?}", fit.multipliers, sol.multipliers);
}

#[test]
fn refinement_is_stable() {
    let (a, b) = (solve(200).report.energy, solve(400).report.energy);
    assert!((a - b).abs() <= 0.01 * a, "{a} vs {b}");
}

#[test]
fn planar_example_is_not_stationary() {
    let g = planar_mobius_example();
    let p = g.profile().unwrap();
    let fc = integrate_frame(&p, Rotation::identity(), Vector3::zeros()).unwrap();
    let fit = recover_multipliers(&p, &fc);
    assert!(fit.res_twist.hypot(fit.res_bend) >= 0.1, "{fit:?}");
    assert!(!check_nonplanarity(&fc, PLANARITY_THRESHOLD));
}

#[test]
fn infeasible_data_is_refused() {
    let bd = BoundaryData::new(1.0, Vector3::z() * 2.0, Rotation::identity()).unwrap();
    let init = CurvatureProfile::constant(1.0, 4, 0.0, 0.0).unwrap();
    assert_eq!(
        minimize_sadowsky(&bd, &init, &SolveOptions::default()).unwrap_err(),
        Error::Degenerate(Rigidity::Empty)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn solves_descend_from_feasible_starts(mu in 0.3f64..1.5, tau in -0.5f64..0.5, ell in 0.5f64..2.0) {
        let init = CurvatureProfile::from_cell_fn(ell, 60, |t| (mu + 0.3 * t.sin(), tau * t.cos())).unwrap();
        let fc = integrate_frame(&init, Rotation::identity(), Vector3::zeros()).unwrap();
        let bd = BoundaryData::of_curve(&fc).unwrap();
        let opts = SolveOptions { n_cells: 60, exec: par::Exec::Sequential, ..Default::default() };
        let sol = minimize_sadowsky(&bd, &init, &opts).unwrap();
        let r = sol.report;
        prop_assert!(r.converged, "{:?}", r);
        prop_assert!(r.pos_err <= opts.tol && r.rot_err <= opts.tol);
        prop_assert!(r.energy <= r.init_energy + opts.tol, "{:?}", r);
        prop_assert!(r.el_twist <= 1e-3 * (1.0 + r.energy) && r.el_bend <= 1e-3 * (1.0 + r.energy), "{:?}", r);
    }
}
