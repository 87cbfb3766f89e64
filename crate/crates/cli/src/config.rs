//! TOML run configuration with one section per module.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use sadowsky::equilibrium::SolveOptions;
use sadowsky::{integrate_frame, BoundaryData, CurvatureProfile, Rotation};
use serde::Deserialize;

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub boundary: BoundaryConfig,
    pub solver: SolverConfig,
    pub laminate: LaminateConfig,
    pub ribbon: RibbonConfig,
    pub output: OutputConfig,
}

/// Boundary data. `preset` is `mobius` (closed band with a half twist),
/// `arc` (ends of a constant-curvature strip with `mu`, `tau`) or `custom`
/// (`ell`, `y_bar` and `r_bar_axis_angle` or row-major `r_bar`).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub preset: Option<String>,
    pub ell: Option<f64>,
    pub y_bar: Option<[f64; 3]>,
    pub r_bar_axis_angle: Option<[f64; 3]>,
    pub r_bar: Option<[[f64; 3]; 3]>,
    pub mu: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n: usize,
    pub tol: f64,
    pub gtol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Initial profiles, tried in order: `construct` (the explicit admissible
    /// frame) and `straight` (zero curvature). The converged result of
    /// lowest energy is kept.
    pub starts: Vec<String>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        SolverConfig {
            n: o.n_cells,
            tol: o.tol,
            gtol: o.gtol,
            max_outer: o.max_outer,
            max_inner: o.max_inner,
            starts: vec!["construct".into(), "straight".into()],
        }
    }
}

/// Relaxed field to laminate. `field` is `planar-mobius` (the explicit
/// planar band), `minimizer` (relaxed field of the constrained minimizer),
/// `constant` (`m = [m11, m12, m22]` on `cells` cells) or `zero`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaminateConfig {
    pub field: String,
    pub m: [f64; 3],
    pub cells: usize,
    pub n: usize,
    /// Mollifier and collar width; defaults to `ell / (4 n)`.
    pub scale: Option<f64>,
    pub windows: Option<Vec<[f64; 2]>>,
}

impl Default for LaminateConfig {
    fn default() -> Self {
        LaminateConfig { field: "planar-mobius".into(), m: [0.0; 3], cells: 1, n: 32, scale: None, windows: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    Auto(String),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RibbonConfig {
    /// Clamp the laminate to the boundary data; free ends otherwise.
    pub clamp: bool,
    pub eps: EpsSpec,
    pub resolution: [usize; 2],
    pub sweep_n: Vec<usize>,
    /// Widths of the sweep as fractions of the largest admissible width.
    pub sweep_fractions: Vec<f64>,
}

impl Default for RibbonConfig {
    fn default() -> Self {
        RibbonConfig {
            clamp: true,
            eps: EpsSpec::Auto("auto".into()),
            resolution: [1024, 64],
            sweep_n: vec![8, 16, 32],
            sweep_fractions: vec![0.5, 0.25, 0.125],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write `vn` lines in the OBJ export.
    pub normals: bool,
}

/// Fractions of the largest width used for `eps = "auto"`.
pub const AUTO_FRACTIONS: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.boundary_data()?;
        let s = &self.solver;
        if s.n < 2 || s.max_outer == 0 || s.max_inner == 0 {
            return invalid("solver: n must be >= 2 and iteration limits positive");
        }
        if !(s.tol > 0.0 && s.gtol > 0.0) {
            return invalid("solver: tol and gtol must be positive");
        }
        if s.starts.is_empty() || !s.starts.iter().all(|k| k == "construct" || k == "straight") {
            return invalid("solver: starts must be a non-empty list of \"construct\" and \"straight\"");
        }
        let l = &self.laminate;
        if !["planar-mobius", "minimizer", "constant", "zero"].contains(&l.field.as_str()) {
            return invalid(format!("laminate: unknown field {:?}", l.field));
        }
        if l.n == 0 || l.cells == 0 {
            return invalid("laminate: n and cells must be positive");
        }
        if !l.m.iter().all(|v| v.is_finite()) {
            return invalid("laminate: m must be finite");
        }
        if let Some(scale) = l.scale {
            if !(scale.is_finite() && scale > 0.0) {
                return invalid("laminate: scale must be positive");
            }
        }
        for w in l.windows.iter().flatten() {
            if !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]) {
                return invalid("laminate: windows must be increasing intervals");
            }
        }
        let r = &self.ribbon;
        match &r.eps {
            EpsSpec::Auto(s) if s != "auto" => return invalid(format!("ribbon: eps must be \"auto\" or a list, got {s:?}")),
            EpsSpec::List(v) if v.is_empty() || !v.iter().all(|e| e.is_finite() && *e > 0.0) => {
                return invalid("ribbon: eps values must be positive");
            }
            _ => {}
        }
        if r.resolution.iter().any(|&k| k < 2 || k % 2 == 1) {
            return invalid("ribbon: resolution must be even and >= 2");
        }
        if r.sweep_n.is_empty() || r.sweep_n.contains(&0) {
            return invalid("ribbon: sweep_n must be non-empty and positive");
        }
        if r.sweep_fractions.is_empty() || !r.sweep_fractions.iter().all(|f| *f > 0.0 && *f <= 1.0) {
            return invalid("ribbon: sweep_fractions must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn boundary_data(&self) -> Result<BoundaryData, ConfigError> {
        let b = &self.boundary;
        let explicit = b.y_bar.is_some() || b.r_bar.is_some() || b.r_bar_axis_angle.is_some();
        let preset = b.preset.as_deref().unwrap_or(if explicit { "custom" } else { "mobius" });
        let lib = |e: sadowsky::Error| ConfigError(format!("boundary: {e}"));
        match preset {
            "mobius" => {
                if explicit || b.mu.is_some() || b.tau.is_some() {
                    return invalid("boundary: the mobius preset only takes ell");
                }
                BoundaryData::mobius(b.ell.unwrap_or(2.0 + 2.0 * PI)).map_err(lib)
            }
            "arc" => {
                if explicit {
                    return invalid("boundary: the arc preset takes ell, mu and tau");
                }
                let ell = b.ell.unwrap_or(1.0);
                if !(ell.is_finite() && ell > 0.0) {
                    return invalid(format!("boundary: length must be positive, got {ell}"));
                }
                let profile =
                    CurvatureProfile::constant(ell, 64, b.mu.unwrap_or(1.0), b.tau.unwrap_or(0.0)).map_err(lib)?;
                let fc = integrate_frame(&profile, Rotation::identity(), Vector3::zeros()).map_err(lib)?;
                BoundaryData::of_curve(&fc).map_err(lib)
            }
            "custom" => {
                if b.mu.is_some() || b.tau.is_some() {
                    return invalid("boundary: mu and tau belong to the arc preset");
                }
                let Some(ell) = b.ell else {
                    return invalid("boundary: custom data need ell");
                };
                let y = Vector3::from(b.y_bar.unwrap_or([0.0; 3]));
                let r = match (b.r_bar_axis_angle, b.r_bar) {
                    (Some(_), Some(_)) => return invalid("boundary: give r_bar_axis_angle or r_bar, not both"),
                    (Some(w), None) => Rotation::from_axis_angle(Vector3::from(w)),
                    (None, Some(rows)) => {
                        let m = Matrix3::from_fn(|i, j| rows[i][j]);
                        Rotation::from_matrix(m, 1e-9).map_err(lib)?
                    }
                    (None, None) => Rotation::identity(),
                };
                BoundaryData::new(ell, y, r).map_err(lib)
            }
            other => invalid(format!("boundary: unknown preset {other:?}")),
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        let s = &self.solver;
        SolveOptions {
            n_cells: s.n,
            tol: s.tol,
            gtol: s.gtol,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            ..SolveOptions::default()
        }
    }
}
