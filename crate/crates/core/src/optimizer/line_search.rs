//! Backtracking line search with a feasibility guard.

/// Sufficient-decrease constant.
pub const ARMIJO_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub eta: f64,
    pub energy: f64,
    pub backtracks: usize,
}

/// Finds the largest `η = 0.5^i`, `i <= max_backtracks`, with
/// `F(η) <= F0 + η δ slope` and a feasible trial point.
///
/// `trial(η)` returns the energy at the trial point or `None` if it is infeasible.
pub fn backtrack(
    f0: f64,
    slope: f64,
    delta: f64,
    max_backtracks: usize,
    mut trial: impl FnMut(f64) -> Option<f64>,
) -> Option<Step> {
    let mut eta = 1.0;
    for i in 0..=max_backtracks {
        if let Some(f) = trial(eta) {
            if f.is_finite() && f <= f0 + eta * delta * slope {
                return Some(Step {
                    eta,
                    energy: f,
                    backtracks: i,
                });
            }
        }
        eta *= 0.5;
    }
    None
}
