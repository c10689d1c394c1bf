//! Discretization primitives on the unit square/cube.
//!
//! Transformations live on the nodal grid (voxel corners), images and labels on the
//! cell-centered grid. Every multi-component field is stored component-major: all
//! values of the first component in lexicographic node order (x1 fastest), then the
//! second component, and so on.
//!
//! Each voxel is split into `dim!` simplices along its main diagonal (Kuhn split).
//! Simplex `l` of a voxel corresponds to an axis permutation `π`; its vertices are the
//! monotone corner path `0 → e_π0 → e_π0 + e_π1 → … → (1,…,1)`. Along that path the
//! partial derivative of a linear interpolant with respect to `x_πk` is the forward
//! difference between consecutive path vertices, which is what makes the derivative
//! operators cheap stencils. The split is translation invariant and nests under
//! factor-two refinement.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// Boundary nodes are held at the identity.
    Dirichlet,
    /// Boundary nodes are free; the Gauss-Newton matrix gets a `γI` shift.
    Natural,
}

/// Uniform grid on `[0,1]^dim` with `n` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    bc: BoundaryCondition,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, bc: BoundaryCondition) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {n}")));
        }
        Ok(Self { dim, n, bc })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    /// Same dimension and boundary condition, different resolution.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.bc)
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1).pow(self.dim as u32)
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Length of a nodal field such as `Y`.
    pub fn nodal_len(&self) -> usize {
        self.dim * self.node_count()
    }

    pub fn simplices_per_cell(&self) -> usize {
        if self.dim == 3 {
            6
        } else {
            2
        }
    }

    pub fn simplex_count(&self) -> usize {
        self.cell_count() * self.simplices_per_cell()
    }

    /// Quadrature weight of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Quadrature weight of one simplex, `h^dim / dim!`.
    pub fn simplex_volume(&self) -> f64 {
        self.cell_volume() / self.simplices_per_cell() as f64
    }

    pub fn corner_count(&self) -> usize {
        1 << self.dim
    }

    /// Node counts per axis; the unused third axis of a 2D grid has extent 1.
    pub fn node_extent(&self) -> [usize; 3] {
        let m = self.n + 1;
        [m, m, if self.dim == 3 { m } else { 1 }]
    }

    pub fn cell_extent(&self) -> [usize; 3] {
        [self.n, self.n, if self.dim == 3 { self.n } else { 1 }]
    }

    pub fn node_strides(&self) -> [usize; 3] {
        let m = self.n + 1;
        [1, m, m * m]
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.n + 1;
        i + m * (j + m * k)
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn node_multi_index(&self, idx: usize) -> [usize; 3] {
        let m = self.n + 1;
        [idx % m, (idx / m) % m, idx / (m * m)]
    }

    pub fn cell_multi_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    /// Index of the lowest corner node of a cell.
    pub fn cell_base_node(&self, cell: usize) -> usize {
        let [i, j, k] = self.cell_multi_index(cell);
        self.node_index(i, j, k)
    }

    /// Node offsets of the `2^dim` cell corners relative to the base node, indexed by
    /// the corner bitmask (bit `a` set means +1 along axis `a`).
    pub fn corner_offsets(&self) -> [usize; 8] {
        let s = self.node_strides();
        let mut out = [0; 8];
        for (b, o) in out.iter_mut().enumerate().take(self.corner_count()) {
            *o = (0..self.dim).filter(|a| b >> a & 1 == 1).map(|a| s[a]).sum();
        }
        out
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        let mi = self.node_multi_index(idx);
        (0..self.dim).any(|a| mi[a] == 0 || mi[a] == self.n)
    }

    pub fn check_nodal(&self, what: &'static str, field: &[f64]) -> Result<()> {
        check_len(what, self.nodal_len(), field.len())
    }

    pub fn check_cells(&self, what: &'static str, len: usize) -> Result<()> {
        check_len(what, self.cell_count(), len)
    }

    pub fn simplices(&self) -> &'static [Simplex] {
        kuhn_simplices(self.dim)
    }
}

/// One simplex of the Kuhn split of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Simplex {
    /// Axis permutation; the simplex is `{t : t[perm0] >= t[perm1] >= …}` in local coordinates.
    pub perm: [usize; 3],
    /// Corner bitmasks of the path vertices `v0..v_dim`.
    pub path: [usize; 4],
    /// Sign of `perm`; the path order has orientation `parity`.
    pub parity: i8,
}

impl Simplex {
    /// Vertex corners in positively oriented order. Odd simplices swap the first two
    /// path vertices, which makes `det[v1-v0, v2-v0, …] > 0` for the identity map.
    pub fn oriented(&self, dim: usize) -> [usize; 4] {
        let mut v = self.path;
        if self.parity < 0 {
            v.swap(0, 1);
        }
        if dim == 2 {
            v[3] = v[2];
        }
        v
    }
}

const fn kuhn(perm: [usize; 3], parity: i8, dim: usize) -> Simplex {
    let v1 = 1 << perm[0];
    let v2 = v1 | (1 << perm[1]);
    let full = (1 << dim) - 1;
    let path = if dim == 3 {
        [0, v1, v2, full]
    } else {
        [0, v1, full, full]
    };
    Simplex { perm, path, parity }
}

static KUHN_2D: [Simplex; 2] = [kuhn([0, 1, 2], 1, 2), kuhn([1, 0, 2], -1, 2)];

static KUHN_3D: [Simplex; 6] = [
    kuhn([0, 1, 2], 1, 3),
    kuhn([0, 2, 1], -1, 3),
    kuhn([1, 0, 2], -1, 3),
    kuhn([1, 2, 0], 1, 3),
    kuhn([2, 0, 1], 1, 3),
    kuhn([2, 1, 0], -1, 3),
];

pub fn kuhn_simplices(dim: usize) -> &'static [Simplex] {
    if dim == 3 {
        &KUHN_3D
    } else {
        &KUHN_2D
    }
}

/// Row-major `dim x dim` Jacobian of one simplex; a 2D Jacobian uses the first 4 slots.
pub type Jacobian = [f64; 9];

/// Corner values of one cell, `[component][corner bitmask]`.
pub(crate) type CornerValues = [[f64; 8]; 3];

#[inline]
pub(crate) fn gather_corners(
    dim: usize,
    node_count: usize,
    field: &[f64],
    base: usize,
    offsets: &[usize; 8],
    out: &mut CornerValues,
) {
    let corners = 1 << dim;
    for c in 0..dim {
        let comp = &field[c * node_count..(c + 1) * node_count];
        for b in 0..corners {
            out[c][b] = comp[base + offsets[b]];
        }
    }
}

/// Constant Jacobian of the linear interpolant on one simplex.
#[inline]
pub(crate) fn simplex_jacobian(dim: usize, s: &Simplex, cv: &CornerValues, inv_h: f64) -> Jacobian {
    let mut jac = [0.0; 9];
    for k in 0..dim {
        let axis = s.perm[k];
        let (lo, hi) = (s.path[k], s.path[k + 1]);
        for c in 0..dim {
            jac[c * dim + axis] = (cv[c][hi] - cv[c][lo]) * inv_h;
        }
    }
    jac
}

/// Adds `D^T g` for one simplex, where `g` is a gradient with respect to the Jacobian.
#[inline]
pub(crate) fn scatter_simplex(
    dim: usize,
    node_count: usize,
    s: &Simplex,
    g: &Jacobian,
    inv_h: f64,
    base: usize,
    offsets: &[usize; 8],
    out: &mut [f64],
) {
    for k in 0..dim {
        let axis = s.perm[k];
        let hi = base + offsets[s.path[k + 1]];
        let lo = base + offsets[s.path[k]];
        for c in 0..dim {
            let val = g[c * dim + axis] * inv_h;
            out[c * node_count + hi] += val;
            out[c * node_count + lo] -= val;
        }
    }
}

/// Identity transformation `X`, with `X^{i,j,k} = (ih, jh, kh)`.
pub fn nodal_coordinates(grid: &GridSpec) -> Vec<f64> {
    let nn = grid.node_count();
    let h = grid.h();
    let mut x = vec![0.0; grid.nodal_len()];
    for idx in 0..nn {
        let mi = grid.node_multi_index(idx);
        for c in 0..grid.dim() {
            x[c * nn + idx] = mi[c] as f64 * h;
        }
    }
    x
}

/// Cell-centered points `PY`: each cell gets the mean of its `2^dim` corner values.
pub fn average_to_cells(grid: &GridSpec, y: &[f64]) -> Result<Vec<f64>> {
    grid.check_nodal("nodal field", y)?;
    let (dim, nn, nc) = (grid.dim(), grid.node_count(), grid.cell_count());
    let offsets = grid.corner_offsets();
    let corners = grid.corner_count();
    let w = 1.0 / corners as f64;
    let mut out = vec![0.0; dim * nc];
    for cell in 0..nc {
        let base = grid.cell_base_node(cell);
        for c in 0..dim {
            let comp = &y[c * nn..(c + 1) * nn];
            let s: f64 = offsets[..corners].iter().map(|&o| comp[base + o]).sum();
            out[c * nc + cell] = s * w;
        }
    }
    Ok(out)
}

/// `P^T v`: distributes each cell value equally onto its corners.
pub fn average_to_cells_adjoint(grid: &GridSpec, v: &[f64]) -> Result<Vec<f64>> {
    let (dim, nn, nc) = (grid.dim(), grid.node_count(), grid.cell_count());
    check_len("cell field", dim * nc, v.len())?;
    let offsets = grid.corner_offsets();
    let corners = grid.corner_count();
    let w = 1.0 / corners as f64;
    let mut out = vec![0.0; grid.nodal_len()];
    for cell in 0..nc {
        let base = grid.cell_base_node(cell);
        for c in 0..dim {
            let val = v[c * nc + cell] * w;
            for &o in &offsets[..corners] {
                out[c * nn + base + o] += val;
            }
        }
    }
    Ok(out)
}

pub(crate) fn difference_block_len(grid: &GridSpec) -> usize {
    grid.n() * (grid.n() + 1).pow(grid.dim() as u32 - 1)
}

/// Length of `A W`: one block per (component, axis).
pub fn forward_difference_len(grid: &GridSpec) -> usize {
    grid.dim() * grid.dim() * difference_block_len(grid)
}

/// Visits every forward-difference edge as `(block row, lower node, upper node)`,
/// blocks ordered axis-major within one component.
pub(crate) fn for_each_edge(grid: &GridSpec, mut f: impl FnMut(usize, usize, usize)) {
    let ext = grid.node_extent();
    let strides = grid.node_strides();
    let block = difference_block_len(grid);
    for axis in 0..grid.dim() {
        let mut lim = ext;
        lim[axis] -= 1;
        let mut row = axis * block;
        for k in 0..lim[2] {
            for j in 0..lim[1] {
                for i in 0..lim[0] {
                    let lo = grid.node_index(i, j, k);
                    f(row, lo, lo + strides[axis]);
                    row += 1;
                }
            }
        }
    }
}

/// `A W`: forward differences `(w_{+1} - w)/h` of every component along every axis.
pub fn forward_difference(grid: &GridSpec, w: &[f64]) -> Result<Vec<f64>> {
    grid.check_nodal("nodal field", w)?;
    let (dim, nn) = (grid.dim(), grid.node_count());
    let per_comp = dim * difference_block_len(grid);
    let inv_h = 1.0 / grid.h();
    let mut out = vec![0.0; forward_difference_len(grid)];
    for c in 0..dim {
        let comp = &w[c * nn..(c + 1) * nn];
        let dst = &mut out[c * per_comp..(c + 1) * per_comp];
        for_each_edge(grid, |row, lo, hi| dst[row] = (comp[hi] - comp[lo]) * inv_h);
    }
    Ok(out)
}

/// `A^T V`.
pub fn forward_difference_adjoint(grid: &GridSpec, v: &[f64]) -> Result<Vec<f64>> {
    check_len("difference field", forward_difference_len(grid), v.len())?;
    let (dim, nn) = (grid.dim(), grid.node_count());
    let per_comp = dim * difference_block_len(grid);
    let inv_h = 1.0 / grid.h();
    let mut out = vec![0.0; grid.nodal_len()];
    for c in 0..dim {
        let src = &v[c * per_comp..(c + 1) * per_comp];
        let comp = &mut out[c * nn..(c + 1) * nn];
        for_each_edge(grid, |row, lo, hi| {
            let val = src[row] * inv_h;
            comp[hi] += val;
            comp[lo] -= val;
        });
    }
    Ok(out)
}

/// Per-simplex partial derivatives `D_1 Y … D_{dim²} Y`.
///
/// Array `c*dim + q` holds `∂y_c/∂x_q`; entries are indexed by
/// `cell * simplices_per_cell + local simplex`.
pub fn tet_derivatives(grid: &GridSpec, y: &[f64]) -> Result<Vec<Vec<f64>>> {
    grid.check_nodal("nodal field", y)?;
    let dim = grid.dim();
    let nn = grid.node_count();
    let spc = grid.simplices_per_cell();
    let inv_h = 1.0 / grid.h();
    let offsets = grid.corner_offsets();
    let mut out = vec![vec![0.0; grid.simplex_count()]; dim * dim];
    let mut cv = [[0.0; 8]; 3];
    for cell in 0..grid.cell_count() {
        gather_corners(dim, nn, y, grid.cell_base_node(cell), &offsets, &mut cv);
        for (l, s) in grid.simplices().iter().enumerate() {
            let jac = simplex_jacobian(dim, s, &cv, inv_h);
            for (q, arr) in out.iter_mut().enumerate() {
                arr[cell * spc + l] = jac[q];
            }
        }
    }
    Ok(out)
}

/// Locates `p` in the Kuhn mesh: returns the cell, the simplex path corners and the
/// barycentric weights of the path vertices. Points on the closed domain only.
pub(crate) fn locate(grid: &GridSpec, p: &[f64; 3]) -> Option<(usize, [usize; 4], [f64; 4])> {
    let dim = grid.dim();
    let n = grid.n();
    let mut cell = [0usize; 3];
    let mut t = [0.0f64; 3];
    for a in 0..dim {
        if !(0.0..=1.0).contains(&p[a]) {
            return None;
        }
        let u = p[a] * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        cell[a] = i;
        t[a] = (u - i as f64).clamp(0.0, 1.0);
    }
    let mut perm = [0usize, 1, 2];
    perm[..dim].sort_by(|&a, &b| t[b].partial_cmp(&t[a]).unwrap());
    let mut path = [0usize; 4];
    let mut lambda = [0.0; 4];
    lambda[0] = 1.0 - t[perm[0]];
    for k in 1..=dim {
        path[k] = path[k - 1] | (1 << perm[k - 1]);
        lambda[k] = if k < dim {
            t[perm[k - 1]] - t[perm[k]]
        } else {
            t[perm[k - 1]]
        };
    }
    Some((grid.cell_index(cell[0], cell[1], cell[2]), path, lambda))
}

/// Evaluates the piecewise-linear interpolant of a nodal field at `p`.
pub fn interpolate_point(grid: &GridSpec, y: &[f64], p: &[f64; 3]) -> Result<[f64; 3]> {
    grid.check_nodal("nodal field", y)?;
    let (cell, path, lambda) = locate(grid, p).ok_or(Error::OutsideDomain {
        x: p[0],
        y: p[1],
        z: p[2],
    })?;
    let nn = grid.node_count();
    let base = grid.cell_base_node(cell);
    let offsets = grid.corner_offsets();
    let mut out = [0.0; 3];
    for k in 0..=grid.dim() {
        let node = base + offsets[path[k]];
        for (c, o) in out.iter_mut().enumerate().take(grid.dim()) {
            *o += lambda[k] * y[c * nn + node];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, BoundaryCondition::Natural).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(1, 4, BoundaryCondition::Natural).is_err());
        assert!(GridSpec::new(3, 1, BoundaryCondition::Natural).is_err());
    }

    #[test]
    fn counts() {
        let grid = g(3, 4);
        assert_eq!(grid.node_count(), 125);
        assert_eq!(grid.cell_count(), 64);
        assert_eq!(grid.simplex_count(), 6 * 64);
        assert_eq!(g(2, 4).simplex_count(), 2 * 16);
        assert_eq!(grid.h() * grid.n() as f64, 1.0);
    }

    #[test]
    fn coordinates_3d_corners() {
        // n=1 is below the solver minimum, so enumerate with n=2 and read the corners.
        let grid = g(3, 2);
        let x = nodal_coordinates(&grid);
        let nn = grid.node_count();
        assert_eq!([x[0], x[nn], x[2 * nn]], [0.0, 0.0, 0.0]);
        let last = nn - 1;
        assert_eq!([x[last], x[nn + last], x[2 * nn + last]], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn coordinates_2d_center() {
        let grid = g(2, 2);
        let x = nodal_coordinates(&grid);
        assert_eq!(x.len(), 18);
        assert_eq!((x[4], x[9 + 4]), (0.5, 0.5));
    }

    #[test]
    fn coordinates_3d_component() {
        let grid = g(3, 4);
        let x = nodal_coordinates(&grid);
        let idx = grid.node_index(1, 2, 3);
        let nn = grid.node_count();
        assert_eq!(x[idx], 0.25);
        assert_eq!(x[nn + idx], 0.5);
        assert_eq!(x[2 * nn + idx], 0.75);
    }

    #[test]
    fn averaging_identity_gives_centers() {
        let grid = g(3, 4);
        let pc = average_to_cells(&grid, &nodal_coordinates(&grid)).unwrap();
        let nc = grid.cell_count();
        let h = grid.h();
        for cell in 0..nc {
            let mi = grid.cell_multi_index(cell);
            for c in 0..3 {
                assert!((pc[c * nc + cell] - (mi[c] as f64 + 0.5) * h).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn averaging_constant_and_four_point_mean() {
        let grid = g(2, 3);
        let y = vec![2.5; grid.nodal_len()];
        assert!(average_to_cells(&grid, &y).unwrap().iter().all(|&v| v == 2.5));

        // Single-cell check on the lower-left cell of a 2D grid: y1 = (0,1,0,1) at its corners.
        let grid = g(2, 2);
        let mut y = vec![0.0; grid.nodal_len()];
        y[grid.node_index(1, 0, 0)] = 1.0;
        y[grid.node_index(1, 1, 0)] = 1.0;
        let pc = average_to_cells(&grid, &y).unwrap();
        assert_eq!(pc[0], 0.5);
    }

    #[test]
    fn averaging_size_mismatch() {
        assert!(average_to_cells(&g(2, 3), &[0.0; 5]).is_err());
        assert!(forward_difference(&g(2, 3), &[0.0; 5]).is_err());
        assert!(forward_difference_adjoint(&g(2, 3), &[0.0; 5]).is_err());
    }

    #[test]
    fn differences_of_identity() {
        let grid = g(3, 3);
        let ax = forward_difference(&grid, &nodal_coordinates(&grid)).unwrap();
        let block = difference_block_len(&grid);
        for c in 0..3 {
            for a in 0..3 {
                let expect = if a == c { 1.0 } else { 0.0 };
                let b = &ax[(c * 3 + a) * block..(c * 3 + a + 1) * block];
                assert!(b.iter().all(|&v| (v - expect).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn kuhn_table_orientation() {
        for dim in [2usize, 3] {
            let grid = g(dim, 2);
            let x = nodal_coordinates(&grid);
            let nn = grid.node_count();
            let offsets = grid.corner_offsets();
            for s in grid.simplices() {
                let v = s.oriented(dim);
                let p = |k: usize| -> [f64; 3] {
                    let node = offsets[v[k]];
                    [x[node], x[nn + node], if dim == 3 { x[2 * nn + node] } else { 0.0 }]
                };
                let e: Vec<[f64; 3]> = (1..=dim)
                    .map(|k| {
                        let (a, b) = (p(k), p(0));
                        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
                    })
                    .collect();
                let det = if dim == 2 {
                    e[0][0] * e[1][1] - e[0][1] * e[1][0]
                } else {
                    e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                        - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                        + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0])
                };
                assert!(det > 0.0);
            }
        }
    }

    #[test]
    fn derivatives_of_identity_and_scaling() {
        let grid = g(3, 3);
        let x = nodal_coordinates(&grid);
        for scale in [1.0, 2.0] {
            let y: Vec<f64> = x.iter().map(|v| scale * v).collect();
            let d = tet_derivatives(&grid, &y).unwrap();
            assert_eq!(d.len(), 9);
            for (q, arr) in d.iter().enumerate() {
                let expect = if q % 4 == 0 { scale } else { 0.0 };
                assert!(arr.iter().all(|&v| (v - expect).abs() < 1e-12), "D{}", q + 1);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_affine_maps() {
        let grid = g(3, 3);
        let x = nodal_coordinates(&grid);
        let nn = grid.node_count();
        let y: Vec<f64> = (0..grid.nodal_len())
            .map(|i| {
                let node = i % nn;
                let c = i / nn;
                let p = [x[node], x[nn + node], x[2 * nn + node]];
                [1.1 * p[0] + 0.2 * p[1], -0.1 * p[0] + 0.9 * p[1] + 0.3 * p[2], p[2] + 0.05][c]
            })
            .collect();
        let q = [0.37, 0.81, 0.12];
        let v = interpolate_point(&grid, &y, &q).unwrap();
        assert!((v[0] - (1.1 * 0.37 + 0.2 * 0.81)).abs() < 1e-12);
        assert!((v[1] - (-0.1 * 0.37 + 0.9 * 0.81 + 0.3 * 0.12)).abs() < 1e-12);
        assert!((v[2] - 0.17).abs() < 1e-12);
        assert!(interpolate_point(&grid, &y, &[1.2, 0.0, 0.0]).is_err());
    }

    #[test]
    fn boundary_nodes() {
        let grid = g(2, 3);
        let count = (0..grid.node_count()).filter(|&i| grid.is_boundary_node(i)).count();
        assert_eq!(count, 16 - 4);
    }
}
