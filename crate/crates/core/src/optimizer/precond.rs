//! Band preconditioner `Q = blockdiag(T, h^dim MᵀM)`.
//!
//! `T` keeps the main diagonal and the first off-diagonals of the `Y` block of the
//! Gauss-Newton matrix. In component-major lexicographic order the only nonzero
//! first off-diagonal couplings are between x1-neighbours of one component.

use log::warn;

use super::problem::{Evaluation, Problem};
use crate::fitting::fit_band_add;
use crate::hyperelastic::add_length_band;

#[derive(Debug, Clone)]
pub struct Preconditioner {
    /// Tridiagonal `T` as `diag` and `off[i] = T[i, i+1]`.
    diag: Vec<f64>,
    off: Vec<f64>,
    /// `LDLᵀ` factors of `T`, or `None` if only the diagonal is used.
    factor: Option<(Vec<f64>, Vec<f64>)>,
    c_diag: Vec<f64>,
}

impl Preconditioner {
    pub fn new(problem: &Problem, ev: &Evaluation) -> Self {
        let grid = problem.grid();
        let nl = grid.nodal_len();
        let mut diag = vec![0.0; nl];
        let mut off = vec![0.0; nl];
        fit_band_add(grid, &ev.cell_grads, &mut diag, &mut off);
        add_length_band(
            grid,
            problem.params().alpha_l * grid.cell_volume(),
            &mut diag,
            &mut off,
        );
        ev.curvature.band_add(&mut diag, &mut off);
        for d in diag.iter_mut() {
            *d += problem.gamma();
        }
        let nn = grid.node_count();
        for c in 0..grid.dim() {
            for i in 0..nn {
                if grid.boundary_condition() == crate::grid::BoundaryCondition::Dirichlet
                    && grid.is_boundary_node(i)
                {
                    let k = c * nn + i;
                    diag[k] = 1.0;
                    off[k] = 0.0;
                    if k > 0 {
                        off[k - 1] = 0.0;
                    }
                }
            }
        }
        // Couplings never cross component blocks.
        for c in 1..=grid.dim() {
            off[c * nn - 1] = 0.0;
        }
        let hd = grid.cell_volume();
        let c_diag = problem
            .prior()
            .counts()
            .iter()
            .map(|&n| hd * n as f64)
            .collect();
        let factor = ldl_tridiagonal(&diag, &off);
        if factor.is_none() {
            warn!("band preconditioner is not positive definite; using its diagonal");
        }
        Self {
            diag,
            off,
            factor,
            c_diag,
        }
    }

    /// True when the tridiagonal factorization succeeded.
    pub fn is_banded(&self) -> bool {
        self.factor.is_some()
    }

    pub fn len(&self) -> usize {
        self.diag.len() + self.c_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Q w`.
    pub fn forward(&self, w: &[f64], out: &mut [f64]) {
        let nl = self.diag.len();
        for i in 0..nl {
            let mut v = self.diag[i] * w[i];
            if self.factor.is_some() {
                if i + 1 < nl {
                    v += self.off[i] * w[i + 1];
                }
                if i > 0 {
                    v += self.off[i - 1] * w[i - 1];
                }
            }
            out[i] = v;
        }
        for (k, d) in self.c_diag.iter().enumerate() {
            out[nl + k] = d * w[nl + k];
        }
    }

    /// `Q⁻¹ r`.
    pub fn apply(&self, r: &[f64], out: &mut [f64]) {
        let nl = self.diag.len();
        match &self.factor {
            Some((l, d)) => {
                out[0] = r[0];
                for i in 1..nl {
                    out[i] = r[i] - l[i - 1] * out[i - 1];
                }
                for i in 0..nl {
                    out[i] /= d[i];
                }
                for i in (0..nl - 1).rev() {
                    out[i] -= l[i] * out[i + 1];
                }
            }
            None => {
                for i in 0..nl {
                    out[i] = r[i] / self.diag[i];
                }
            }
        }
        for (k, d) in self.c_diag.iter().enumerate() {
            out[nl + k] = r[nl + k] / d;
        }
    }
}

/// `T = L D Lᵀ` with unit lower bidiagonal `L` (subdiagonal `l`). `None` unless every
/// pivot is positive and finite.
fn ldl_tridiagonal(diag: &[f64], off: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let mut d = vec![0.0; n];
    let mut l = vec![0.0; n.saturating_sub(1)];
    d[0] = diag[0];
    for i in 0..n {
        if !(d[i] > 0.0 && d[i].is_finite()) {
            return None;
        }
        if i + 1 < n {
            l[i] = off[i] / d[i];
            d[i + 1] = diag[i + 1] - l[i] * off[i];
        }
    }
    Some((l, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ldl_round_trip() {
        let diag = vec![4.0, 5.0, 6.0, 3.0];
        let off = vec![1.0, -2.0, 0.5, 0.0];
        let (l, d) = ldl_tridiagonal(&diag, &off).unwrap();
        // Reassemble T from the factors.
        for i in 0..4 {
            let t_ii = d[i] + if i > 0 { l[i - 1] * l[i - 1] * d[i - 1] } else { 0.0 };
            assert!((t_ii - diag[i]).abs() < 1e-14);
            if i < 3 {
                assert!((l[i] * d[i] - off[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ldl_rejects_indefinite() {
        assert!(ldl_tridiagonal(&[1.0, 1.0], &[2.0, 0.0]).is_none());
        assert!(ldl_tridiagonal(&[-1.0], &[0.0]).is_none());
    }
}
