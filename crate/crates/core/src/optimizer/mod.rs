//! Generalized Gauss-Newton solver for `min F(Y, C)` subject to `v(Y) > 0`.

mod krylov;
mod line_search;
mod precond;
mod problem;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

pub use krylov::{cg, minres, KrylovOutcome};
pub use line_search::{backtrack, Step, ARMIJO_DELTA};
pub use precond::Preconditioner;
pub use problem::{EnergyBreakdown, Evaluation, Problem};

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KrylovMethod {
    #[default]
    Minres,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Shift of the `Y` block; `None` means `h^dim` under natural conditions.
    pub gamma: Option<f64>,
    pub minres_tol: f64,
    pub minres_max_iter: usize,
    pub krylov: KrylovMethod,
    pub ls_delta: f64,
    pub ls_max_backtracks: usize,
    pub stop_tol_f: f64,
    pub stop_tol_y: f64,
    pub stop_tol_g: f64,
    pub max_outer_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            minres_tol: 0.1,
            minres_max_iter: 100,
            krylov: KrylovMethod::Minres,
            ls_delta: ARMIJO_DELTA,
            ls_max_backtracks: 20,
            stop_tol_f: 1e-3,
            stop_tol_y: 1e-2,
            stop_tol_g: 1e-2,
            max_outer_iter: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, bc: BoundaryCondition) -> Result<()> {
        let positive = [self.minres_tol, self.ls_delta, self.stop_tol_f, self.stop_tol_y, self.stop_tol_g];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParams("solver tolerances must be positive".into()));
        }
        if self.ls_delta >= 1.0 {
            return Err(Error::InvalidParams("ls_delta must be below 1".into()));
        }
        if self.minres_max_iter == 0 {
            return Err(Error::InvalidParams("minres_max_iter must be positive".into()));
        }
        match (bc, self.gamma) {
            (BoundaryCondition::Dirichlet, Some(g)) if g != 0.0 => Err(Error::InvalidParams(
                "gamma must be 0 with Dirichlet boundary conditions".into(),
            )),
            (BoundaryCondition::Natural, Some(g)) if !(g > 0.0 && g.is_finite()) => Err(
                Error::InvalidParams("gamma must be positive with natural boundary conditions".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Shift used on a given grid.
    pub fn gamma_for(&self, grid: &GridSpec) -> f64 {
        match grid.boundary_condition() {
            BoundaryCondition::Dirichlet => 0.0,
            BoundaryCondition::Natural => self.gamma.unwrap_or_else(|| grid.cell_volume()),
        }
    }
}

/// One row of the energy log. Iteration 0 describes the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    pub energy: f64,
    pub fit: f64,
    pub length: f64,
    pub surface: f64,
    pub volume: f64,
    pub grad_norm: f64,
    pub eta: f64,
    pub krylov_iterations: usize,
    /// Preconditioned relative residual of the accepted direction.
    pub krylov_residual: f64,
    /// The Krylov solve stopped at its iteration cap.
    pub krylov_capped: bool,
    /// The direction fell back to `-d`.
    pub steepest_descent: bool,
    /// `dᵀp` of the direction used.
    pub slope: f64,
    pub min_det: f64,
    pub max_det: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    LineSearchStalled,
}

/// Final iterate of a solve.
#[derive(Debug, Clone)]
pub struct GNState {
    pub y: Vec<f64>,
    pub c: Vec<f64>,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub min_det: f64,
    pub max_det: f64,
    pub iteration: usize,
}

impl GNState {
    pub fn total(&self) -> f64 {
        self.energy.total()
    }
}

#[derive(Debug, Clone)]
pub struct GNRun {
    pub state: GNState,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direction from the Gauss-Newton system `Ĥ p = -d`.
#[derive(Debug, Clone)]
pub struct Direction {
    pub p: Vec<f64>,
    pub outcome: KrylovOutcome,
    pub steepest_descent: bool,
}

pub fn solve_direction(problem: &Problem, ev: &Evaluation, config: &SolverConfig) -> Direction {
    let rhs: Vec<f64> = ev.gradient.iter().map(|g| -g).collect();
    let pre = Preconditioner::new(problem, ev);
    let apply = |w: &[f64], out: &mut [f64]| problem.hessian_apply(ev, w, out);
    let prec = |r: &[f64], out: &mut [f64]| pre.apply(r, out);
    let outcome = match config.krylov {
        KrylovMethod::Minres => minres(apply, prec, &rhs, config.minres_tol, config.minres_max_iter),
        KrylovMethod::Cg => cg(apply, prec, &rhs, config.minres_tol, config.minres_max_iter),
    };
    let slope = dot(&ev.gradient, &outcome.x);
    let gnorm = norm(&ev.gradient);
    if gnorm > 0.0 && (outcome.breakdown || !(slope < 0.0)) {
        warn!(
            "Krylov direction unusable (breakdown: {}, slope {slope:e}); taking -d",
            outcome.breakdown
        );
        return Direction {
            p: rhs,
            outcome,
            steepest_descent: true,
        };
    }
    Direction {
        p: outcome.x.clone(),
        outcome,
        steepest_descent: false,
    }
}

/// Runs the Gauss-Newton iteration from `(y0, c0)`.
pub fn ggn_solve(
    problem: &Problem,
    config: &SolverConfig,
    y0: &[f64],
    c0: &[f64],
    level: usize,
) -> Result<GNRun> {
    config.validate(problem.grid().boundary_condition())?;
    let mut y = y0.to_vec();
    problem.prepare_start(&mut y)?;
    let mut c = c0.to_vec();
    let nl = y.len();
    let mut ev = problem.evaluate(&y, &c)?;
    let f0 = ev.total();
    let y0_norm = norm(&y);
    let mut grad_norm = norm(&ev.gradient);
    let mut records = vec![record(level, 0, &ev, grad_norm, None)];
    let mut prev: Option<(f64, f64)> = None;
    let mut iteration = 0;
    let stop = loop {
        if grad_norm <= 1e3 * f64::EPSILON {
            break StopReason::Converged;
        }
        if let Some((df, dy)) = prev {
            if df <= config.stop_tol_f * (1.0 + f0.abs())
                && dy <= config.stop_tol_y * (1.0 + y0_norm)
                && grad_norm <= config.stop_tol_g * (1.0 + f0.abs())
            {
                break StopReason::Converged;
            }
        }
        if iteration >= config.max_outer_iter {
            break StopReason::MaxIterations;
        }
        let dir = solve_direction(problem, &ev, config);
        let slope = dot(&ev.gradient, &dir.p);
        let f = ev.total();
        let mut trial_y = vec![0.0; nl];
        let mut trial_c = vec![0.0; c.len()];
        let step = backtrack(f, slope, config.ls_delta, config.ls_max_backtracks, |eta| {
            for i in 0..nl {
                trial_y[i] = y[i] + eta * dir.p[i];
            }
            for (k, tc) in trial_c.iter_mut().enumerate() {
                *tc = c[k] + eta * dir.p[nl + k];
            }
            let e = problem.energy_or_infinity(&trial_y, &trial_c).ok()?;
            e.is_finite().then_some(e)
        });
        let Some(step) = step else {
            warn!("line search stalled at level {level}, iteration {iteration}");
            break StopReason::LineSearchStalled;
        };
        let mut dy2 = 0.0;
        for i in 0..nl {
            let delta = step.eta * dir.p[i];
            y[i] += delta;
            dy2 += delta * delta;
        }
        for (k, ck) in c.iter_mut().enumerate() {
            *ck += step.eta * dir.p[nl + k];
        }
        let new_ev = problem.evaluate(&y, &c)?;
        iteration += 1;
        prev = Some(((f - new_ev.total()).abs(), dy2.sqrt()));
        grad_norm = norm(&new_ev.gradient);
        records.push(record(
            level,
            iteration,
            &new_ev,
            grad_norm,
            Some((&dir, step.eta, slope, config.minres_max_iter)),
        ));
        debug!(
            "level {level} iter {iteration}: F = {:.6e}, |d| = {grad_norm:.3e}, eta = {}, krylov {}",
            new_ev.total(),
            step.eta,
            dir.outcome.iterations
        );
        ev = new_ev;
    };
    Ok(GNRun {
        state: GNState {
            y,
            c,
            energy: ev.energy,
            grad_norm,
            min_det: ev.min_det,
            max_det: ev.max_det,
            iteration,
        },
        records,
        stop,
    })
}

fn record(
    level: usize,
    iteration: usize,
    ev: &Evaluation,
    grad_norm: f64,
    step: Option<(&Direction, f64, f64, usize)>,
) -> IterationRecord {
    let (eta, its, res, capped, sd, slope) = match step {
        Some((dir, eta, slope, cap)) => (
            eta,
            dir.outcome.iterations,
            dir.outcome.rel_residual,
            dir.outcome.iterations >= cap && !dir.outcome.converged,
            dir.steepest_descent,
            slope,
        ),
        None => (0.0, 0, 0.0, false, false, 0.0),
    };
    IterationRecord {
        level,
        iteration,
        energy: ev.total(),
        fit: ev.energy.fit,
        length: ev.energy.length,
        surface: ev.energy.surface,
        volume: ev.energy.volume,
        grad_norm,
        eta,
        krylov_iterations: its,
        krylov_residual: res,
        krylov_capped: capped,
        steepest_descent: sd,
        slope,
        min_det: ev.min_det,
        max_det: ev.max_det,
    }
}
