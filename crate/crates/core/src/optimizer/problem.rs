//! Discrete objective `F(Y, C)`, its gradient and the Gauss-Newton matrix.

use crate::error::{check_len, Error, Result};
use crate::fitting::{fit_energy, fit_gn_add, fit_gradient, PriorPartition};
use crate::grid::{average_to_cells, nodal_coordinates, BoundaryCondition, GridSpec};
use crate::hyperelastic::{
    add_length_operator, length_energy, length_gradient, simplex_terms, Curvature,
    RegularizerParams,
};
use crate::imagemodel::ImageModel;

/// Energy split into its four terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct EnergyBreakdown {
    pub fit: f64,
    pub length: f64,
    pub surface: f64,
    pub volume: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.fit + self.length + self.surface + self.volume
    }
}

/// Everything the solver needs at one feasible iterate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: EnergyBreakdown,
    pub min_det: f64,
    pub max_det: f64,
    /// Stacked `(∂F/∂Y, ∂F/∂C)`, boundary entries zeroed under Dirichlet conditions.
    pub gradient: Vec<f64>,
    pub(crate) cell_grads: Vec<f64>,
    pub(crate) curvature: Curvature,
}

impl Evaluation {
    pub fn total(&self) -> f64 {
        self.energy.total()
    }
}

/// The segmentation objective on one grid level.
#[derive(Debug, Clone)]
pub struct Problem {
    grid: GridSpec,
    image: ImageModel,
    prior: PriorPartition,
    params: RegularizerParams,
    x: Vec<f64>,
    gamma: f64,
    /// Boundary node indices; their unknowns are eliminated under Dirichlet conditions.
    fixed_nodes: Vec<usize>,
}

impl Problem {
    /// `gamma` is the shift of the `Y` block; it must be zero exactly under Dirichlet
    /// conditions and positive under natural ones.
    pub fn new(
        image: ImageModel,
        prior: PriorPartition,
        params: RegularizerParams,
        gamma: f64,
    ) -> Result<Self> {
        let grid = *image.grid();
        params.validate(grid.dim())?;
        grid.check_cells("prior labels", prior.len())?;
        match grid.boundary_condition() {
            BoundaryCondition::Dirichlet if gamma != 0.0 => {
                return Err(Error::InvalidParams(
                    "gamma must be 0 with Dirichlet boundary conditions".into(),
                ))
            }
            BoundaryCondition::Natural if !(gamma > 0.0 && gamma.is_finite()) => {
                return Err(Error::InvalidParams(
                    "gamma must be positive with natural boundary conditions".into(),
                ))
            }
            _ => {}
        }
        let fixed_nodes = match grid.boundary_condition() {
            BoundaryCondition::Dirichlet => (0..grid.node_count())
                .filter(|&i| grid.is_boundary_node(i))
                .collect(),
            BoundaryCondition::Natural => Vec::new(),
        };
        Ok(Self {
            grid,
            x: nodal_coordinates(&grid),
            image,
            prior,
            params,
            gamma,
            fixed_nodes,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn image(&self) -> &ImageModel {
        &self.image
    }

    pub fn prior(&self) -> &PriorPartition {
        &self.prior
    }

    pub fn params(&self) -> &RegularizerParams {
        &self.params
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Identity transformation on this grid.
    pub fn identity(&self) -> &[f64] {
        &self.x
    }

    /// Length of the stacked unknown `(Y, C)`.
    pub fn unknown_len(&self) -> usize {
        self.grid.nodal_len() + self.prior.region_count()
    }

    /// Zeroes the eliminated boundary entries of a nodal vector (no-op for natural BCs).
    pub fn project_free(&self, v: &mut [f64]) {
        let nn = self.grid.node_count();
        for c in 0..self.grid.dim() {
            for &i in &self.fixed_nodes {
                v[c * nn + i] = 0.0;
            }
        }
    }

    fn check_state(&self, y: &[f64], c: &[f64]) -> Result<()> {
        self.grid.check_nodal("Y", y)?;
        check_len("intensity constants", self.prior.region_count(), c.len())?;
        if y.iter().chain(c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }

    /// Template intensities `I(PY)` and, optionally, their spatial gradients.
    pub fn warped_template(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let points = average_to_cells(&self.grid, y)?;
        self.image.eval_with_gradient(&points)
    }

    /// Energy terms with the determinant range; [`Error::Infeasible`] when some
    /// simplex has `v <= 0`.
    pub fn energy(&self, y: &[f64], c: &[f64]) -> Result<(EnergyBreakdown, f64, f64)> {
        self.check_state(y, c)?;
        let terms = simplex_terms(&self.grid, y, &self.params, false)?;
        let points = average_to_cells(&self.grid, y)?;
        let warped = self.image.eval(&points)?;
        let e = EnergyBreakdown {
            fit: fit_energy(&self.grid, &warped, &self.prior, c)?,
            length: length_energy(&self.grid, y, &self.x, self.params.alpha_l)?,
            surface: terms.surface,
            volume: terms.volume,
        };
        Ok((e, terms.min_det, terms.max_det))
    }

    /// Total energy with `+∞` for infeasible transformations.
    pub fn energy_or_infinity(&self, y: &[f64], c: &[f64]) -> Result<f64> {
        match self.energy(y, c) {
            Ok((e, _, _)) => Ok(e.total()),
            Err(Error::Infeasible { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Energy, gradient and the curvature needed for Hessian products.
    pub fn evaluate(&self, y: &[f64], c: &[f64]) -> Result<Evaluation> {
        self.check_state(y, c)?;
        let terms = simplex_terms(&self.grid, y, &self.params, true)?;
        let (warped, cell_grads) = self.warped_template(y)?;
        let (gy_fit, gc) = fit_gradient(&self.grid, &warped, &cell_grads, &self.prior, c)?;
        let mut gradient = length_gradient(&self.grid, y, &self.x, self.params.alpha_l)?;
        for ((g, a), b) in gradient.iter_mut().zip(&gy_fit).zip(terms.gradient.as_ref().unwrap()) {
            *g += a + b;
        }
        self.project_free(&mut gradient);
        gradient.extend_from_slice(&gc);
        let energy = EnergyBreakdown {
            fit: fit_energy(&self.grid, &warped, &self.prior, c)?,
            length: length_energy(&self.grid, y, &self.x, self.params.alpha_l)?,
            surface: terms.surface,
            volume: terms.volume,
        };
        Ok(Evaluation {
            energy,
            min_det: terms.min_det,
            max_det: terms.max_det,
            gradient,
            cell_grads,
            curvature: Curvature::new(&self.grid, y, &self.params)?,
        })
    }

    /// Writes `Ĥ w` for the stacked vector `w = (w_Y, w_C)`.
    ///
    /// Under Dirichlet conditions the operator is `P Ĥ P + (I - P)` with `P` the
    /// projection onto free unknowns.
    pub fn hessian_apply(&self, ev: &Evaluation, w: &[f64], out: &mut [f64]) {
        let nl = self.grid.nodal_len();
        out.fill(0.0);
        let owned;
        let w_in = if self.fixed_nodes.is_empty() {
            w
        } else {
            let mut p = w.to_vec();
            self.project_free(&mut p[..nl]);
            owned = p;
            &owned[..]
        };
        let (wy, wc) = w_in.split_at(nl);
        {
            let (oy, oc) = out.split_at_mut(nl);
            fit_gn_add(&self.grid, &ev.cell_grads, &self.prior, wy, wc, oy, oc);
            add_length_operator(
                &self.grid,
                wy,
                self.params.alpha_l * self.grid.cell_volume(),
                oy,
            );
            ev.curvature.apply_add(wy, oy);
            if self.gamma != 0.0 {
                for (o, v) in oy.iter_mut().zip(wy) {
                    *o += self.gamma * v;
                }
            }
        }
        if !self.fixed_nodes.is_empty() {
            let nn = self.grid.node_count();
            for c in 0..self.grid.dim() {
                for &i in &self.fixed_nodes {
                    out[c * nn + i] = w[c * nn + i];
                }
            }
        }
    }

    /// Checks `v(Y) > 0`; under Dirichlet conditions also snaps boundary nodes that
    /// agree with the identity to roundoff.
    pub fn prepare_start(&self, y: &mut [f64]) -> Result<()> {
        self.grid.check_nodal("Y", y)?;
        let nn = self.grid.node_count();
        for c in 0..self.grid.dim() {
            for &i in &self.fixed_nodes {
                let k = c * nn + i;
                if (y[k] - self.x[k]).abs() > 1e-9 {
                    return Err(Error::InvalidParams(
                        "Dirichlet start must equal the identity on the boundary".into(),
                    ));
                }
                y[k] = self.x[k];
            }
        }
        simplex_terms(&self.grid, y, &self.params, false).map(|_| ())
    }
}
