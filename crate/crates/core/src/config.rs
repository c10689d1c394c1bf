//! Run configuration: a TOML file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BoundaryCondition;
use crate::hyperelastic::{RegularizerParams, SurfaceMode};
use crate::optimizer::{KrylovMethod, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Segment,
    Register,
    CheckGradient,
}

/// Every setting is optional so that a file and flags can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub image: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub levels: Option<usize>,
    pub alpha_l: Option<f64>,
    pub alpha_s: Option<f64>,
    pub alpha_v: Option<f64>,
    pub surface: Option<SurfaceMode>,
    pub bc: Option<BoundaryCondition>,
    pub gamma: Option<f64>,
    pub tol_f: Option<f64>,
    pub tol_y: Option<f64>,
    pub tol_g: Option<f64>,
    pub max_iter: Option<usize>,
    pub minres_tol: Option<f64>,
    pub minres_max_iter: Option<usize>,
    pub krylov: Option<KrylovMethod>,
    pub max_backtracks: Option<usize>,
    /// Synthetic problem size for `check-gradient` without inputs.
    pub dim: Option<usize>,
    pub n: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: Settings) -> Self {
        overlay!(
            self, top, image, labels, out, ground_truth, levels, alpha_l, alpha_s, alpha_v, surface, bc,
            gamma, tol_f, tol_y, tol_g, max_iter, minres_tol, minres_max_iter, krylov, max_backtracks,
            dim, n
        );
        self
    }
}

/// Fully resolved, validated configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub image: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub params: RegularizerParams,
    pub bc: BoundaryCondition,
    pub solver: SolverConfig,
    /// `None` picks the default for the grid size.
    pub levels: Option<usize>,
}

impl RunConfig {
    /// Fills defaults for a `dim`-dimensional input and validates.
    pub fn resolve(mode: Mode, s: &Settings, dim: usize) -> Result<Self> {
        let defaults = RegularizerParams::defaults_for(dim);
        if dim == 2 && s.alpha_s.is_some_and(|a| a != 0.0) {
            return Err(Error::Config("alpha_s must be 0 for 2D inputs".into()));
        }
        let params = RegularizerParams {
            alpha_l: s.alpha_l.unwrap_or(defaults.alpha_l),
            alpha_s: s.alpha_s.unwrap_or(defaults.alpha_s),
            alpha_v: s.alpha_v.unwrap_or(defaults.alpha_v),
            surface_mode: s.surface.unwrap_or(defaults.surface_mode),
        };
        params.validate(dim).map_err(|e| Error::Config(e.to_string()))?;
        let bc = s.bc.unwrap_or(BoundaryCondition::Dirichlet);
        let d = SolverConfig::default();
        let solver = SolverConfig {
            gamma: s.gamma,
            minres_tol: s.minres_tol.unwrap_or(d.minres_tol),
            minres_max_iter: s.minres_max_iter.unwrap_or(d.minres_max_iter),
            krylov: s.krylov.unwrap_or(d.krylov),
            ls_max_backtracks: s.max_backtracks.unwrap_or(d.ls_max_backtracks),
            stop_tol_f: s.tol_f.unwrap_or(d.stop_tol_f),
            stop_tol_y: s.tol_y.unwrap_or(d.stop_tol_y),
            stop_tol_g: s.tol_g.unwrap_or(d.stop_tol_g),
            max_outer_iter: s.max_iter.unwrap_or(d.max_outer_iter),
            ..d
        };
        solver.validate(bc).map_err(|e| Error::Config(e.to_string()))?;
        if s.levels == Some(0) {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if mode != Mode::CheckGradient && (s.image.is_none() || s.labels.is_none() || s.out.is_none()) {
            return Err(Error::Config("image, labels and out are required".into()));
        }
        Ok(Self {
            mode,
            image: s.image.clone(),
            labels: s.labels.clone(),
            out: s.out.clone(),
            ground_truth: s.ground_truth.clone(),
            params,
            bc,
            solver,
            levels: s.levels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paths() -> Settings {
        Settings {
            image: Some("i.mhd".into()),
            labels: Some("l.mhd".into()),
            out: Some("o".into()),
            ..Default::default()
        }
    }

    #[test]
    fn empty_config_defaults() {
        let s = Settings::from_toml("").unwrap().overlay(paths());
        let c = RunConfig::resolve(Mode::Segment, &s, 3).unwrap();
        assert_eq!((c.params.alpha_l, c.params.alpha_s, c.params.alpha_v), (10.0, 1.0, 1.0));
        let c = RunConfig::resolve(Mode::Segment, &s, 2).unwrap();
        assert_eq!((c.params.alpha_l, c.params.alpha_s, c.params.alpha_v), (100.0, 0.0, 100.0));
        assert_eq!(c.bc, BoundaryCondition::Dirichlet);
    }

    #[test]
    fn rejections() {
        assert!(Settings::from_toml("alpha_x = 1").is_err());
        let s = Settings::from_toml("alpha_v = 0").unwrap().overlay(paths());
        assert!(RunConfig::resolve(Mode::Segment, &s, 3).is_err());
        let s = Settings::from_toml("alpha_l = -1").unwrap().overlay(paths());
        assert!(RunConfig::resolve(Mode::Segment, &s, 3).is_err());
        let s = Settings::from_toml("alpha_s = 1").unwrap().overlay(paths());
        assert!(RunConfig::resolve(Mode::Segment, &s, 2).is_err());
        let s = Settings::from_toml("bc = \"natural\"\ngamma = 0").unwrap().overlay(paths());
        assert!(RunConfig::resolve(Mode::Segment, &s, 2).is_err());
        assert!(RunConfig::resolve(Mode::Segment, &Settings::default(), 2).is_err());
    }

    #[test]
    fn flags_win() {
        let file = Settings::from_toml("alpha_v = 1\nsurface = \"convex\"").unwrap();
        let flags = Settings {
            alpha_v: Some(10.0),
            ..paths()
        };
        let c = RunConfig::resolve(Mode::Register, &file.overlay(flags), 3).unwrap();
        assert_eq!(c.params.alpha_v, 10.0);
        assert_eq!(c.params.surface_mode, SurfaceMode::ConvexEnvelope);
    }
}
