//! Hyperelastic regularizer: length, surface and volume energies on the Kuhn mesh,
//! their gradients and the Gauss-Newton curvature.
//!
//! The length term uses forward differences of `Y - X` on the nodal grid. Surface and
//! volume terms are integrated per simplex from the constant Jacobian `a` of the
//! piecewise-linear interpolant: `s(Y) = cof(a)` and `v(Y) = det(a)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{
    for_each_edge, gather_corners, scatter_simplex, simplex_jacobian, GridSpec, Jacobian,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceMode {
    /// `φ_w(S) = (S - 3)² / 2`, penalizes both growth and shrinkage of area.
    #[default]
    #[serde(alias = "well")]
    DoubleWell,
    /// `φ_c(S) = max(S - 3, 0)² / 2`.
    #[serde(alias = "convex")]
    ConvexEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerParams {
    pub alpha_l: f64,
    pub alpha_s: f64,
    pub alpha_v: f64,
    pub surface_mode: SurfaceMode,
}

impl RegularizerParams {
    /// `(α_l, α_v) = (100, 100)` in 2D, `(α_l, α_s, α_v) = (10, 1, 1)` in 3D.
    pub fn defaults_for(dim: usize) -> Self {
        if dim == 2 {
            Self {
                alpha_l: 100.0,
                alpha_s: 0.0,
                alpha_v: 100.0,
                surface_mode: SurfaceMode::DoubleWell,
            }
        } else {
            Self {
                alpha_l: 10.0,
                alpha_s: 1.0,
                alpha_v: 1.0,
                surface_mode: SurfaceMode::DoubleWell,
            }
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let finite = [self.alpha_l, self.alpha_s, self.alpha_v]
            .iter()
            .all(|a| a.is_finite());
        if !finite || self.alpha_l < 0.0 || self.alpha_s < 0.0 {
            return Err(Error::InvalidParams(
                "alpha_l and alpha_s must be finite and non-negative".into(),
            ));
        }
        if self.alpha_v <= 0.0 {
            return Err(Error::InvalidParams(
                "alpha_v must be positive; the volume barrier keeps the map invertible".into(),
            ));
        }
        if dim == 2 && self.alpha_s != 0.0 {
            return Err(Error::InvalidParams("alpha_s must be 0 in 2D".into()));
        }
        Ok(())
    }
}

/// `φ_v(x) = ((x - 1)² / x)²`.
pub fn phi_v(x: f64) -> f64 {
    let r = (x - 1.0) * (x - 1.0) / x;
    r * r
}

pub fn phi_v_prime(x: f64) -> f64 {
    2.0 * (x - 1.0).powi(3) * (x + 1.0) / (x * x * x)
}

/// `φ_v''(x) = 2 (x-1)² (x² + 2x + 3) / x⁴`; non-negative for `x > 0`, zero only at 1.
pub fn phi_v_second(x: f64) -> f64 {
    let x2 = x * x;
    2.0 * (x - 1.0) * (x - 1.0) * (x2 + 2.0 * x + 3.0) / (x2 * x2)
}

/// Floor applied to `φ_v''` inside the Gauss-Newton matrix.
pub const PHI_V_SECOND_FLOOR: f64 = 1e-12;

pub fn phi_surface(s: f64, mode: SurfaceMode) -> f64 {
    let t = match mode {
        SurfaceMode::DoubleWell => s - 3.0,
        SurfaceMode::ConvexEnvelope => (s - 3.0).max(0.0),
    };
    0.5 * t * t
}

pub fn phi_surface_prime(s: f64, mode: SurfaceMode) -> f64 {
    match mode {
        SurfaceMode::DoubleWell => s - 3.0,
        SurfaceMode::ConvexEnvelope => (s - 3.0).max(0.0),
    }
}

fn phi_surface_second(s: f64, mode: SurfaceMode) -> f64 {
    match mode {
        SurfaceMode::DoubleWell => 1.0,
        SurfaceMode::ConvexEnvelope => {
            if s > 3.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Index quadruples `(p, q, r, t)` with `s_i = a_p a_q - a_r a_t`, row-major cofactor.
const COF3: [(usize, usize, usize, usize); 9] = [
    (4, 8, 5, 7),
    (5, 6, 3, 8),
    (3, 7, 4, 6),
    (2, 7, 1, 8),
    (0, 8, 2, 6),
    (1, 6, 0, 7),
    (1, 5, 2, 4),
    (2, 3, 0, 5),
    (0, 4, 1, 3),
];

/// Cofactor matrix, which is also `∂det/∂a`.
#[inline]
pub fn cofactor(dim: usize, a: &Jacobian) -> Jacobian {
    let mut s = [0.0; 9];
    if dim == 3 {
        for (i, &(p, q, r, t)) in COF3.iter().enumerate() {
            s[i] = a[p] * a[q] - a[r] * a[t];
        }
    } else {
        s[0] = a[3];
        s[1] = -a[2];
        s[2] = -a[1];
        s[3] = a[0];
    }
    s
}

#[inline]
pub fn determinant(dim: usize, a: &Jacobian) -> f64 {
    if dim == 3 {
        a[0] * a[4] * a[8] + a[1] * a[5] * a[6] + a[3] * a[7] * a[2]
            - a[1] * a[3] * a[8]
            - a[0] * a[5] * a[7]
            - a[2] * a[4] * a[6]
    } else {
        a[0] * a[3] - a[1] * a[2]
    }
}

/// `S = Σ s_i²` and `∂S/∂a` for a 3D Jacobian.
#[inline]
fn surface_measure(a: &Jacobian, s: &Jacobian) -> (f64, Jacobian) {
    let mut ds = [0.0; 9];
    let mut total = 0.0;
    for (i, &(p, q, r, t)) in COF3.iter().enumerate() {
        let si = s[i];
        total += si * si;
        let w = 2.0 * si;
        ds[p] += w * a[q];
        ds[q] += w * a[p];
        ds[r] -= w * a[t];
        ds[t] -= w * a[r];
    }
    (total, ds)
}

/// `(α_l h^dim / 2) ‖A (Y - X)‖²`.
pub fn length_energy(grid: &GridSpec, y: &[f64], x: &[f64], alpha_l: f64) -> Result<f64> {
    grid.check_nodal("Y", y)?;
    grid.check_nodal("X", x)?;
    let nn = grid.node_count();
    let inv_h = 1.0 / grid.h();
    let mut sum = 0.0;
    for c in 0..grid.dim() {
        let (yc, xc) = (&y[c * nn..(c + 1) * nn], &x[c * nn..(c + 1) * nn]);
        for_each_edge(grid, |_, lo, hi| {
            let d = ((yc[hi] - xc[hi]) - (yc[lo] - xc[lo])) * inv_h;
            sum += d * d;
        });
    }
    Ok(0.5 * alpha_l * grid.cell_volume() * sum)
}

/// Adds `scale · A^T A w` to `out`.
pub(crate) fn add_length_operator(grid: &GridSpec, w: &[f64], scale: f64, out: &mut [f64]) {
    let nn = grid.node_count();
    let f = scale / (grid.h() * grid.h());
    for c in 0..grid.dim() {
        let wc = &w[c * nn..(c + 1) * nn];
        let oc = &mut out[c * nn..(c + 1) * nn];
        for_each_edge(grid, |_, lo, hi| {
            let d = (wc[hi] - wc[lo]) * f;
            oc[hi] += d;
            oc[lo] -= d;
        });
    }
}

/// `α_l h^dim A^T A (Y - X)`.
pub fn length_gradient(grid: &GridSpec, y: &[f64], x: &[f64], alpha_l: f64) -> Result<Vec<f64>> {
    grid.check_nodal("Y", y)?;
    grid.check_nodal("X", x)?;
    let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let mut out = vec![0.0; y.len()];
    add_length_operator(grid, &diff, alpha_l * grid.cell_volume(), &mut out);
    Ok(out)
}

/// Adds the tridiagonal part of `scale · A^T A`: `diag[i]` and `off[i] = H[i, i+1]`.
pub(crate) fn add_length_band(grid: &GridSpec, scale: f64, diag: &mut [f64], off: &mut [f64]) {
    let nn = grid.node_count();
    let f = scale / (grid.h() * grid.h());
    for c in 0..grid.dim() {
        let base = c * nn;
        for_each_edge(grid, |_, lo, hi| {
            diag[base + lo] += f;
            diag[base + hi] += f;
            if hi == lo + 1 {
                off[base + lo] -= f;
            }
        });
    }
}

/// Per-simplex cofactor entries `s_1 … s_9` (3D) or the 2×2 cofactor (2D).
pub fn cofactor_field(grid: &GridSpec, y: &[f64]) -> Result<Vec<Vec<f64>>> {
    let dim = grid.dim();
    let mut out = vec![vec![0.0; grid.simplex_count()]; dim * dim];
    for_each_simplex(grid, y, |t, a| {
        let s = cofactor(dim, a);
        for (q, arr) in out.iter_mut().enumerate() {
            arr[t] = s[q];
        }
    })?;
    Ok(out)
}

/// Per-simplex Jacobian determinant `v(Y)`.
pub fn determinant_field(grid: &GridSpec, y: &[f64]) -> Result<Vec<f64>> {
    let dim = grid.dim();
    let mut out = vec![0.0; grid.simplex_count()];
    for_each_simplex(grid, y, |t, a| out[t] = determinant(dim, a))?;
    Ok(out)
}

/// Minimum and maximum of `v(Y)`.
pub fn determinant_range(grid: &GridSpec, y: &[f64]) -> Result<(f64, f64)> {
    let dim = grid.dim();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for_each_simplex(grid, y, |_, a| {
        let v = determinant(dim, a);
        lo = lo.min(v);
        hi = hi.max(v);
    })?;
    Ok((lo, hi))
}

fn for_each_simplex(grid: &GridSpec, y: &[f64], mut f: impl FnMut(usize, &Jacobian)) -> Result<()> {
    grid.check_nodal("Y", y)?;
    let dim = grid.dim();
    let nn = grid.node_count();
    let spc = grid.simplices_per_cell();
    let inv_h = 1.0 / grid.h();
    let offsets = grid.corner_offsets();
    let mut cv = [[0.0; 8]; 3];
    for cell in 0..grid.cell_count() {
        gather_corners(dim, nn, y, grid.cell_base_node(cell), &offsets, &mut cv);
        for (l, s) in grid.simplices().iter().enumerate() {
            let a = simplex_jacobian(dim, s, &cv, inv_h);
            f(cell * spc + l, &a);
        }
    }
    Ok(())
}

/// `(h^dim/dim!) Σ α_s φ(S)` from a cofactor field (`dim²` arrays).
pub fn surface_energy(grid: &GridSpec, s: &[Vec<f64>], alpha_s: f64, mode: SurfaceMode) -> Result<f64> {
    check_len("cofactor field", grid.dim() * grid.dim(), s.len())?;
    let count = grid.simplex_count();
    let mut total = 0.0;
    for t in 0..count {
        let big_s: f64 = s.iter().map(|arr| arr[t] * arr[t]).sum();
        total += phi_surface(big_s, mode);
    }
    Ok(grid.simplex_volume() * alpha_s * total)
}

/// `(h^dim/dim!) Σ α_v φ_v(v)`, or `None` (the +∞ barrier) if any `v ≤ 0`.
pub fn volume_energy(grid: &GridSpec, v: &[f64], alpha_v: f64) -> Option<f64> {
    let mut total = 0.0;
    for &x in v {
        if x <= 0.0 || !x.is_finite() {
            return None;
        }
        total += phi_v(x);
    }
    Some(grid.simplex_volume() * alpha_v * total)
}

/// Regularizer energies and the fields they are built from.
#[derive(Debug, Clone)]
pub struct HyperelasticEval {
    pub energy_length: f64,
    pub energy_surface: f64,
    pub energy_volume: f64,
    pub s: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub min_det: f64,
    pub max_det: f64,
}

impl HyperelasticEval {
    pub fn total(&self) -> f64 {
        self.energy_length + self.energy_surface + self.energy_volume
    }
}

pub fn evaluate(grid: &GridSpec, y: &[f64], x: &[f64], params: &RegularizerParams) -> Result<HyperelasticEval> {
    let energy_length = length_energy(grid, y, x, params.alpha_l)?;
    let s = cofactor_field(grid, y)?;
    let v = determinant_field(grid, y)?;
    let min_det = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_det = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let energy_volume =
        volume_energy(grid, &v, params.alpha_v).ok_or(Error::Infeasible { min_det })?;
    let energy_surface = if grid.dim() == 3 {
        surface_energy(grid, &s, params.alpha_s, params.surface_mode)?
    } else {
        0.0
    };
    Ok(HyperelasticEval {
        energy_length,
        energy_surface,
        energy_volume,
        s,
        v,
        min_det,
        max_det,
    })
}

/// Surface and volume terms from one pass over the mesh.
#[derive(Debug, Clone)]
pub(crate) struct SimplexTerms {
    pub surface: f64,
    pub volume: f64,
    pub min_det: f64,
    pub max_det: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Fused surface/volume evaluation. Stops at the first non-positive determinant and
/// reports it as [`Error::Infeasible`].
pub(crate) fn simplex_terms(
    grid: &GridSpec,
    y: &[f64],
    params: &RegularizerParams,
    with_gradient: bool,
) -> Result<SimplexTerms> {
    grid.check_nodal("Y", y)?;
    let dim = grid.dim();
    let nn = grid.node_count();
    let inv_h = 1.0 / grid.h();
    let offsets = grid.corner_offsets();
    let wt = grid.simplex_volume();
    let use_surface = dim == 3 && params.alpha_s != 0.0;
    let mut grad = if with_gradient {
        Some(vec![0.0; grid.nodal_len()])
    } else {
        None
    };
    let (mut surface, mut volume) = (0.0, 0.0);
    let (mut min_det, mut max_det) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut cv = [[0.0; 8]; 3];
    for cell in 0..grid.cell_count() {
        let base = grid.cell_base_node(cell);
        gather_corners(dim, nn, y, base, &offsets, &mut cv);
        for s in grid.simplices() {
            let a = simplex_jacobian(dim, s, &cv, inv_h);
            let cof = cofactor(dim, &a);
            let det = determinant(dim, &a);
            if !(det > 0.0) {
                return Err(Error::Infeasible { min_det: det });
            }
            min_det = min_det.min(det);
            max_det = max_det.max(det);
            volume += phi_v(det);
            let mut g = [0.0; 9];
            let dv = phi_v_prime(det) * params.alpha_v * wt;
            if use_surface {
                let (big_s, ds) = surface_measure(&a, &cof);
                surface += phi_surface(big_s, params.surface_mode);
                let f = phi_surface_prime(big_s, params.surface_mode) * params.alpha_s * wt;
                for q in 0..9 {
                    g[q] = f * ds[q] + dv * cof[q];
                }
            } else {
                for q in 0..dim * dim {
                    g[q] = dv * cof[q];
                }
            }
            if let Some(out) = grad.as_mut() {
                scatter_simplex(dim, nn, s, &g, inv_h, base, &offsets, out);
            }
        }
    }
    Ok(SimplexTerms {
        surface: surface * params.alpha_s * wt * if use_surface { 1.0 } else { 0.0 },
        volume: volume * params.alpha_v * wt,
        min_det,
        max_det,
        gradient: grad,
    })
}

/// Exact gradient of the discretized regularizer.
pub fn reg_gradient(grid: &GridSpec, y: &[f64], x: &[f64], params: &RegularizerParams) -> Result<Vec<f64>> {
    let mut g = length_gradient(grid, y, x, params.alpha_l)?;
    let terms = simplex_terms(grid, y, params, true)?;
    for (gi, ti) in g.iter_mut().zip(terms.gradient.unwrap()) {
        *gi += ti;
    }
    Ok(g)
}

/// Gauss-Newton curvature of the surface and volume terms, linearized at one `Y`.
///
/// Per simplex the curvature is the rank-two form `u uᵀ + w wᵀ` in Jacobian space with
/// `u = sqrt(wt α_s φ'') ∂S/∂a` and `w = sqrt(wt α_v φ_v''(v)) cof(a)`; both vectors are
/// stored.
#[derive(Debug, Clone)]
pub struct Curvature {
    grid: GridSpec,
    with_surface: bool,
    /// `stride` values per simplex: `w` then (3D with surface) `u`.
    factors: Vec<f64>,
    stride: usize,
}

impl Curvature {
    pub fn new(grid: &GridSpec, y: &[f64], params: &RegularizerParams) -> Result<Self> {
        grid.check_nodal("Y", y)?;
        let dim = grid.dim();
        let d2 = dim * dim;
        let with_surface = dim == 3 && params.alpha_s != 0.0;
        let stride = if with_surface { 2 * d2 } else { d2 };
        let wt = grid.simplex_volume();
        let mut factors = vec![0.0; stride * grid.simplex_count()];
        let mut infeasible = None;
        for_each_simplex(grid, y, |t, a| {
            let det = determinant(dim, a);
            if !(det > 0.0) {
                infeasible.get_or_insert(det);
                return;
            }
            let cof = cofactor(dim, a);
            let dst = &mut factors[t * stride..(t + 1) * stride];
            let fv = (wt * params.alpha_v * phi_v_second(det).max(PHI_V_SECOND_FLOOR)).sqrt();
            for q in 0..d2 {
                dst[q] = fv * cof[q];
            }
            if with_surface {
                let (big_s, ds) = surface_measure(a, &cof);
                let fs = (wt * params.alpha_s * phi_surface_second(big_s, params.surface_mode)).sqrt();
                for q in 0..d2 {
                    dst[d2 + q] = fs * ds[q];
                }
            }
        })?;
        if let Some(min_det) = infeasible {
            return Err(Error::Infeasible { min_det });
        }
        Ok(Self {
            grid: *grid,
            with_surface,
            factors,
            stride,
        })
    }

    /// Adds the curvature applied to `w` into `out`.
    pub fn apply_add(&self, w: &[f64], out: &mut [f64]) {
        if self.grid.dim() == 2 {
            self.apply_add_dim::<2>(w, out);
        } else {
            self.apply_add_dim::<3>(w, out);
        }
    }

    fn apply_add_dim<const D: usize>(&self, w: &[f64], out: &mut [f64]) {
        let grid = &self.grid;
        let nn = grid.node_count();
        let inv_h = 1.0 / grid.h();
        let offsets = grid.corner_offsets();
        let corners = 1 << D;
        let spc = grid.simplices_per_cell();
        let d2 = D * D;
        let mut cv = [[0.0; 8]; 3];
        for cell in 0..grid.cell_count() {
            let base = grid.cell_base_node(cell);
            gather_corners(D, nn, w, base, &offsets, &mut cv);
            // Contributions are summed per corner and scattered once per cell.
            let mut acc = [[0.0; 8]; 3];
            let cell_factors = &self.factors[cell * spc * self.stride..(cell + 1) * spc * self.stride];
            for (l, s) in grid.simplices().iter().enumerate() {
                let f = &cell_factors[l * self.stride..(l + 1) * self.stride];
                let jw = simplex_jacobian(D, s, &cv, inv_h);
                let pv: f64 = (0..d2).map(|q| f[q] * jw[q]).sum();
                let mut g = [0.0; 9];
                for q in 0..d2 {
                    g[q] = pv * f[q];
                }
                if self.with_surface {
                    let fu = &f[d2..2 * d2];
                    let pu: f64 = (0..d2).map(|q| fu[q] * jw[q]).sum();
                    for q in 0..d2 {
                        g[q] += pu * fu[q];
                    }
                }
                for k in 0..D {
                    let axis = s.perm[k];
                    let (lo, hi) = (s.path[k], s.path[k + 1]);
                    for c in 0..D {
                        let val = g[c * D + axis] * inv_h;
                        acc[c][hi] += val;
                        acc[c][lo] -= val;
                    }
                }
            }
            for (c, row) in acc.iter().enumerate().take(D) {
                let dst = &mut out[c * nn..(c + 1) * nn];
                for corner in 0..corners {
                    dst[base + offsets[corner]] += row[corner];
                }
            }
        }
    }

    /// Adds the main diagonal and the first superdiagonal of the curvature matrix.
    pub(crate) fn band_add(&self, diag: &mut [f64], off: &mut [f64]) {
        let grid = &self.grid;
        let dim = grid.dim();
        let d2 = dim * dim;
        let nn = grid.node_count();
        let inv_h = 1.0 / grid.h();
        let offsets = grid.corner_offsets();
        let spc = grid.simplices_per_cell();
        let parts = if self.with_surface { 2 } else { 1 };
        for cell in 0..grid.cell_count() {
            let base = grid.cell_base_node(cell);
            for (l, s) in grid.simplices().iter().enumerate() {
                let t = cell * spc + l;
                let f = &self.factors[t * self.stride..(t + 1) * self.stride];
                for c in 0..dim {
                    // Projection of each factor onto the row of vertex k, component c.
                    let mut proj = [[0.0f64; 4]; 2];
                    for (p, pr) in proj.iter_mut().enumerate().take(parts) {
                        let fv = &f[p * d2..(p + 1) * d2];
                        for k in 0..=dim {
                            let mut acc = 0.0;
                            if k >= 1 {
                                acc += fv[c * dim + s.perm[k - 1]] * inv_h;
                            }
                            if k < dim {
                                acc -= fv[c * dim + s.perm[k]] * inv_h;
                            }
                            pr[k] = acc;
                        }
                    }
                    for k in 0..=dim {
                        let node = base + offsets[s.path[k]];
                        let mut dsum = 0.0;
                        for pr in proj.iter().take(parts) {
                            dsum += pr[k] * pr[k];
                        }
                        diag[c * nn + node] += dsum;
                        if k < dim && s.perm[k] == 0 {
                            let mut osum = 0.0;
                            for pr in proj.iter().take(parts) {
                                osum += pr[k] * pr[k + 1];
                            }
                            off[c * nn + node] += osum;
                        }
                    }
                }
            }
        }
    }
}

/// Applies `α_l h^dim AᵀA + (h^dim/dim!)(α_s dSᵀdS + α_v dvᵀ d²φ_v dv)` to `w`.
pub fn reg_gn_curvature_apply(
    grid: &GridSpec,
    y: &[f64],
    params: &RegularizerParams,
    w: &[f64],
) -> Result<Vec<f64>> {
    grid.check_nodal("w", w)?;
    let curv = Curvature::new(grid, y, params)?;
    let mut out = vec![0.0; w.len()];
    add_length_operator(grid, w, params.alpha_l * grid.cell_volume(), &mut out);
    curv.apply_add(w, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{nodal_coordinates, BoundaryCondition};

    fn g(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, BoundaryCondition::Natural).unwrap()
    }

    #[test]
    fn phi_v_values() {
        assert_eq!(phi_v(1.0), 0.0);
        assert!((phi_v(2.0) - 0.25).abs() < 1e-15);
        assert!((phi_v(0.5) - 0.25).abs() < 1e-15);
        assert!((phi_v(8.0) - 37.515625).abs() < 1e-12);
    }

    #[test]
    fn phi_v_reciprocal_symmetry() {
        for i in -40..=40 {
            let x = 10f64.powf(i as f64 / 10.0);
            let (a, b) = (phi_v(x), phi_v(1.0 / x));
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "x = {x}");
        }
    }

    #[test]
    fn phi_v_derivatives_match_differences() {
        for &x in &[0.2, 0.7, 1.0, 1.3, 3.0, 9.0] {
            let e = 1e-5;
            let d1 = (phi_v(x + e) - phi_v(x - e)) / (2.0 * e);
            let d2 = (phi_v_prime(x + e) - phi_v_prime(x - e)) / (2.0 * e);
            assert!((d1 - phi_v_prime(x)).abs() < 1e-6 * d1.abs().max(1.0));
            assert!((d2 - phi_v_second(x)).abs() < 1e-6 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn phi_v_second_non_negative() {
        // The second derivative vanishes at 1 and is positive elsewhere on x > 0.
        assert_eq!(phi_v_second(1.0), 0.0);
        for i in 1..2000 {
            let x = i as f64 * 0.005;
            if (x - 1.0).abs() > 1e-9 {
                assert!(phi_v_second(x) > 0.0, "x = {x}");
            }
        }
    }

    #[test]
    fn zero_at_identity() {
        for dim in [2, 3] {
            let grid = g(dim, 3);
            let x = nodal_coordinates(&grid);
            let mut params = RegularizerParams::defaults_for(dim);
            params.alpha_l = 3.0;
            let e = evaluate(&grid, &x, &x, &params).unwrap();
            assert_eq!(e.total(), 0.0);
            assert!(reg_gradient(&grid, &x, &x, &params).unwrap().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn length_energy_translation_invariant() {
        let grid = g(3, 3);
        let x = nodal_coordinates(&grid);
        let y: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        assert!(length_energy(&grid, &y, &x, 10.0).unwrap().abs() < 1e-20);
    }

    #[test]
    fn scaled_identity_fields() {
        let grid = g(3, 2);
        let x = nodal_coordinates(&grid);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let s = cofactor_field(&grid, &y).unwrap();
        for t in 0..grid.simplex_count() {
            let big_s: f64 = s.iter().map(|a| a[t] * a[t]).sum();
            assert!((big_s - 48.0).abs() < 1e-12);
        }
        let v = determinant_field(&grid, &y).unwrap();
        assert!(v.iter().all(|&d| (d - 8.0).abs() < 1e-12));
        let e = volume_energy(&grid, &v, 2.0).unwrap();
        let expect = grid.simplex_volume() * 2.0 * 37.515625 * 6.0 * 8.0;
        assert!((e - expect).abs() < 1e-12 * expect);
        let ident = cofactor_field(&grid, &x).unwrap();
        let big_s: f64 = ident.iter().map(|a| a[0] * a[0]).sum();
        assert!((big_s - 3.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_on_folded_field() {
        let grid = g(2, 2);
        let x = nodal_coordinates(&grid);
        // Mirror the first component.
        let nn = grid.node_count();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| if i < nn { -v } else { *v }).collect();
        let v = determinant_field(&grid, &y).unwrap();
        assert!(volume_energy(&grid, &v, 1.0).is_none());
        let params = RegularizerParams::defaults_for(2);
        assert!(matches!(
            reg_gradient(&grid, &y, &x, &params),
            Err(Error::Infeasible { .. })
        ));
        assert!(reg_gn_curvature_apply(&grid, &y, &params, &x).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = RegularizerParams::defaults_for(3);
        assert!(p.validate(3).is_ok());
        p.alpha_v = 0.0;
        assert!(p.validate(3).is_err());
        let mut p = RegularizerParams::defaults_for(3);
        assert!(p.validate(2).is_err());
        p.alpha_l = -1.0;
        assert!(p.validate(3).is_err());
    }

    #[test]
    fn convex_envelope_ignores_shrinkage() {
        assert_eq!(phi_surface(1.0, SurfaceMode::ConvexEnvelope), 0.0);
        assert_eq!(phi_surface(1.0, SurfaceMode::DoubleWell), 2.0);
        assert_eq!(phi_surface(5.0, SurfaceMode::ConvexEnvelope), 2.0);
    }
}
