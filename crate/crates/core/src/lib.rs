//! Narrow elastic ribbons with clamped ends.
//!
//! The crate evaluates the extended Sadowsky energy of a framed centerline,
//! builds explicit frames that meet prescribed end positions and
//! orientations, turns relaxed curvature fields into oscillating rank-one
//! laminates, lifts smooth rank-one profiles to developable ribbons of
//! finite width, and minimizes the energy under clamped boundary
//! conditions.

pub mod constructions;
pub mod curveframe;
pub mod energy;
pub mod equilibrium;
pub mod error;
pub mod export;
pub mod laminate;
pub mod par;
pub mod ribbon;
pub mod rotation;

pub use curveframe::{
    constraint_residual, gamma_of, integrate_frame, is_admissible, planarity_measure, rigidity_check,
    AdmissibilityReport, BoundaryData, CurvatureProfile, FramedCurve, Interpolation, Rigidity,
};
pub use energy::{dqbar_dmu, dqbar_dtau, qbar, qbar_via_min, relaxed_f, sadowsky_energy, SymField};
pub use error::{Error, Result};
pub use rotation::Rotation;
