//! Central-difference verification of the analytic gradients, term by term.

use serde::Serialize;

use crate::error::Result;
use crate::fitting::{fit_energy, fit_gradient, initial_constants};
use crate::grid::{average_to_cells, BoundaryCondition, GridSpec};
use crate::hyperelastic::{length_energy, length_gradient, simplex_terms, RegularizerParams};
use crate::optimizer::Problem;

/// Largest grid accepted in 3D; the check costs two energies per unknown.
pub const MAX_3D_N: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermCheck {
    pub name: &'static str,
    /// `max |analytic|`.
    pub max_abs: f64,
    /// `max |analytic - fd| / max(|analytic|, |fd|)`, both as sup norms; 0 when both vanish.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub terms: Vec<TermCheck>,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.terms.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn term(&self, name: &str) -> Option<&TermCheck> {
        self.terms.iter().find(|t| t.name == name)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn compare(name: &'static str, analytic: &[f64], fd: &[f64]) -> TermCheck {
    let scale = sup(analytic).max(sup(fd));
    let diff = analytic
        .iter()
        .zip(fd)
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    TermCheck {
        name,
        max_abs: sup(analytic),
        rel_error: if scale > 0.0 { diff / scale } else { 0.0 },
    }
}

fn central(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut x = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let x0 = x[i];
        let e = step * (1.0 + x0.abs());
        x[i] = x0 + e;
        let fp = f(&x)?;
        x[i] = x0 - e;
        let fm = f(&x)?;
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * e);
    }
    Ok(g)
}

/// Compares every analytic gradient at `(y, c)` with central differences of step
/// `step · (1 + |x_i|)`. Terms: fit in `Y`, fit in `C`, length, surface (3D), volume
/// and the total, which is projected onto the free unknowns like the solver's.
pub fn check_gradient(problem: &Problem, y: &[f64], c: &[f64], step: f64) -> Result<GradientReport> {
    let grid = *problem.grid();
    let params = *problem.params();
    let x = problem.identity().to_vec();
    let prior = problem.prior();
    let image = problem.image();
    let mut terms = Vec::new();

    let fit_of = |y: &[f64], c: &[f64]| -> Result<f64> {
        let warped = image.eval(&average_to_cells(&grid, y)?)?;
        fit_energy(&grid, &warped, prior, c)
    };
    let (warped, cell_grads) = problem.warped_template(y)?;
    let (gy, gc) = fit_gradient(&grid, &warped, &cell_grads, prior, c)?;
    terms.push(compare("fit_y", &gy, &central(y, step, |v| fit_of(v, c))?));
    terms.push(compare("fit_c", &gc, &central(c, step, |v| fit_of(y, v))?));

    let gl = length_gradient(&grid, y, &x, params.alpha_l)?;
    let fd = central(y, step, |v| length_energy(&grid, v, &x, params.alpha_l))?;
    terms.push(compare("length", &gl, &fd));

    if grid.dim() == 3 {
        let only = RegularizerParams { alpha_v: 0.0, ..params };
        terms.push(simplex_check("surface", &grid, y, &only, step, |t| t.surface)?);
    }
    let only = RegularizerParams { alpha_s: 0.0, ..params };
    terms.push(simplex_check("volume", &grid, y, &only, step, |t| t.volume)?);

    let ev = problem.evaluate(y, c)?;
    let mut state = y.to_vec();
    state.extend_from_slice(c);
    let nl = y.len();
    let mut fd = central(&state, step, |s| Ok(problem.energy(&s[..nl], &s[nl..])?.0.total()))?;
    problem.project_free(&mut fd[..nl]);
    terms.push(compare("total", &ev.gradient, &fd));
    Ok(GradientReport { terms })
}

fn simplex_check(
    name: &'static str,
    grid: &GridSpec,
    y: &[f64],
    params: &RegularizerParams,
    step: f64,
    pick: impl Fn(&crate::hyperelastic::SimplexTerms) -> f64,
) -> Result<TermCheck> {
    let analytic = simplex_terms(grid, y, params, true)?.gradient.unwrap_or_default();
    let fd = central(y, step, |v| Ok(pick(&simplex_terms(grid, v, params, false)?)))?;
    Ok(compare(name, &analytic, &fd))
}

/// A small problem with a smooth image (or a flat one) and the split prior.
pub fn synthetic_problem(
    dim: usize,
    n: usize,
    bc: BoundaryCondition,
    params: RegularizerParams,
    flat: bool,
) -> Result<Problem> {
    use crate::fitting::build_prior;
    use crate::imagemodel::ImageModel;
    use crate::phantom::{smooth_image, split_prior};

    let grid = GridSpec::new(dim, n, bc)?;
    let samples = if flat {
        vec![100.0; grid.cell_count()]
    } else {
        smooth_image(&grid)
    };
    let prior = build_prior(&split_prior(&grid))?;
    let image = ImageModel::fit(&grid, &samples)?;
    let gamma = match bc {
        BoundaryCondition::Dirichlet => 0.0,
        BoundaryCondition::Natural => grid.cell_volume(),
    };
    Problem::new(image, prior, params, gamma)
}

/// A feasible state off the optimum: a smoothly perturbed identity and constants
/// shifted away from the region means.
pub fn perturbed_state(problem: &Problem) -> Result<(Vec<f64>, Vec<f64>)> {
    let y = crate::phantom::perturbed_identity(problem.grid(), 0.3, 11);
    let (warped, _) = problem.warped_template(&y)?;
    let mut c = initial_constants(&warped, problem.prior())?;
    for (k, v) in c.iter_mut().enumerate() {
        *v += 5.0 + 3.0 * k as f64;
    }
    Ok((y, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grids_pass() {
        for (dim, n) in [(2, 4), (3, 2)] {
            for bc in [BoundaryCondition::Natural, BoundaryCondition::Dirichlet] {
                let p = synthetic_problem(dim, n, bc, RegularizerParams::defaults_for(dim), false).unwrap();
                let (y, c) = perturbed_state(&p).unwrap();
                let r = check_gradient(&p, &y, &c, 1e-6).unwrap();
                assert!(r.max_rel_error() <= 1e-6, "{dim} {n} {bc:?} {r:?}");
            }
        }
    }

    #[test]
    fn flat_image_has_no_fit_y() {
        let p = synthetic_problem(2, 4, BoundaryCondition::Natural, RegularizerParams::defaults_for(2), true).unwrap();
        let (y, c) = perturbed_state(&p).unwrap();
        let r = check_gradient(&p, &y, &c, 1e-6).unwrap();
        let t = r.term("fit_y").unwrap();
        assert_eq!((t.max_abs, t.rel_error), (0.0, 0.0));
    }
}
