//! Pushing the prior forward through `y`: geometry warping and mask rasterization.

use super::contour::BoundaryGeometry;
use crate::error::{Error, Result};
use crate::grid::{interpolate_point, GridSpec};

/// Maps every vertex through the piecewise-linear interpolant of `y`.
pub fn warp_geometry(grid: &GridSpec, y: &[f64], geometry: &BoundaryGeometry) -> Result<BoundaryGeometry> {
    grid.check_nodal("Y", y)?;
    let vertices = geometry
        .vertices
        .iter()
        .map(|p| interpolate_point(grid, y, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryGeometry {
        vertices,
        ..geometry.clone()
    })
}

/// Label of the deformed prior at each cell center.
///
/// Each deformed simplex claims the cell centers it contains and passes on the label of
/// the reference cell it came from; when simplices share a face the first one in
/// simplex order wins. Centers outside `y(Ω)` get the label that is most frequent
/// among the prior's boundary cells (lowest id on ties).
pub fn rasterize_mask(grid: &GridSpec, y: &[f64], labels: &[u32]) -> Result<Vec<u32>> {
    grid.check_nodal("Y", y)?;
    grid.check_cells("labels", labels.len())?;
    let dim = grid.dim();
    let n = grid.n();
    let nn = grid.node_count();
    let h = grid.h();
    let offsets = grid.corner_offsets();
    let mut mask = vec![0u32; grid.cell_count()];
    let mut verts = [[0.0f64; 3]; 4];
    for cell in 0..grid.cell_count() {
        let base = grid.cell_base_node(cell);
        for s in grid.simplices() {
            let ord = s.oriented(dim);
            for k in 0..=dim {
                let node = base + offsets[ord[k]];
                for c in 0..dim {
                    verts[k][c] = y[c * nn + node];
                }
            }
            let Some(inv) = inverse_edges(dim, &verts) else {
                return Err(Error::Infeasible { min_det: 0.0 });
            };
            // Cell-center index range covered by the bounding box.
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut empty = false;
            for a in 0..dim {
                let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in verts.iter().take(dim + 1) {
                    mn = mn.min(v[a]);
                    mx = mx.max(v[a]);
                }
                // Centers are at (i + 0.5) h.
                let first = ((mn / h - 0.5).ceil()).max(0.0);
                let last = ((mx / h - 0.5).floor()).min(n as f64 - 1.0);
                if first > last {
                    empty = true;
                    break;
                }
                lo[a] = first as usize;
                hi[a] = last as usize;
            }
            if empty {
                continue;
            }
            let (k_lo, k_hi) = if dim == 3 { (lo[2], hi[2]) } else { (0, 0) };
            for k in k_lo..=k_hi {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        let target = grid.cell_index(i, j, k);
                        if mask[target] != 0 {
                            continue;
                        }
                        let p = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h];
                        if contains(dim, &verts, &inv, &p) {
                            mask[target] = labels[cell];
                        }
                    }
                }
            }
        }
    }
    if mask.contains(&0) {
        let fill = boundary_label(grid, labels);
        for m in mask.iter_mut().filter(|m| **m == 0) {
            *m = fill;
        }
    }
    Ok(mask)
}

/// Most frequent label on the outermost layer of cells, lowest id on ties.
pub fn boundary_label(grid: &GridSpec, labels: &[u32]) -> u32 {
    let mut counts = std::collections::BTreeMap::new();
    let n = grid.n();
    for (cell, &l) in labels.iter().enumerate() {
        let m = grid.cell_multi_index(cell);
        if (0..grid.dim()).any(|a| m[a] == 0 || m[a] == n - 1) {
            *counts.entry(l).or_insert(0usize) += 1;
        }
    }
    let mut best = (0usize, 1u32);
    for (&l, &c) in &counts {
        if c > best.0 {
            best = (c, l);
        }
    }
    best.1
}

/// Inverse of the edge matrix `[v1 - v0, …]` (columns), row-major.
fn inverse_edges(dim: usize, v: &[[f64; 3]; 4]) -> Option<[f64; 9]> {
    let mut m = [0.0; 9];
    for col in 0..dim {
        for row in 0..dim {
            m[row * dim + col] = v[col + 1][row] - v[0][row];
        }
    }
    if dim == 2 {
        let det = m[0] * m[3] - m[1] * m[2];
        if !(det > 0.0) {
            return None;
        }
        return Some([m[3] / det, -m[1] / det, -m[2] / det, m[0] / det, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
    let cof = crate::hyperelastic::cofactor(3, &m);
    let det = crate::hyperelastic::determinant(3, &m);
    if !(det > 0.0) {
        return None;
    }
    let mut inv = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            inv[r * 3 + c] = cof[c * 3 + r] / det;
        }
    }
    Some(inv)
}

fn contains(dim: usize, v: &[[f64; 3]; 4], inv: &[f64; 9], p: &[f64; 3]) -> bool {
    const TOL: f64 = 1e-12;
    let mut d = [0.0; 3];
    for a in 0..dim {
        d[a] = p[a] - v[0][a];
    }
    let mut sum = 0.0;
    for r in 0..dim {
        let lambda: f64 = (0..dim).map(|c| inv[r * dim + c] * d[c]).sum();
        if lambda < -TOL {
            return false;
        }
        sum += lambda;
    }
    sum <= 1.0 + TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{nodal_coordinates, BoundaryCondition};
    use crate::segmenter::contour::extract_boundary;

    fn g(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, BoundaryCondition::Natural).unwrap()
    }

    fn disk(grid: &GridSpec, r: f64) -> Vec<u32> {
        (0..grid.cell_count())
            .map(|c| {
                let m = grid.cell_multi_index(c);
                let p: Vec<f64> = m.iter().map(|&i| (i as f64 + 0.5) * grid.h() - 0.5).collect();
                let d2: f64 = p[..grid.dim()].iter().map(|v| v * v).sum();
                if d2.sqrt() < r { 2 } else { 1 }
            })
            .collect()
    }

    #[test]
    fn identity_reproduces_prior() {
        for dim in [2, 3] {
            let grid = g(dim, 12);
            let labels = disk(&grid, 0.3);
            let mask = rasterize_mask(&grid, &nodal_coordinates(&grid), &labels).unwrap();
            assert_eq!(mask, labels);
        }
    }

    #[test]
    fn scaled_disk_area() {
        let grid = g(2, 64);
        let labels = disk(&grid, 0.25);
        let y: Vec<f64> = nodal_coordinates(&grid).iter().map(|x| 0.5 + 1.2 * (x - 0.5)).collect();
        let mask = rasterize_mask(&grid, &y, &labels).unwrap();
        let prior_area = labels.iter().filter(|&&l| l == 2).count() as f64;
        let area = mask.iter().filter(|&&l| l == 2).count() as f64;
        assert!((area / (1.44 * prior_area) - 1.0).abs() < 0.1);
        assert!(mask.iter().all(|&l| l == 1 || l == 2));
    }

    #[test]
    fn shrunk_domain_uses_background() {
        let grid = g(2, 16);
        let labels = disk(&grid, 0.2);
        let y: Vec<f64> = nodal_coordinates(&grid).iter().map(|x| 0.5 + 0.8 * (x - 0.5)).collect();
        let mask = rasterize_mask(&grid, &y, &labels).unwrap();
        assert_eq!(mask[0], 1);
    }

    #[test]
    fn warp_translation_and_identity() {
        let grid = g(2, 8);
        let labels = disk(&grid, 0.2);
        let geo = extract_boundary(&grid, &labels).unwrap().region(2);
        let same = warp_geometry(&grid, &nodal_coordinates(&grid), &geo).unwrap();
        assert_eq!(same, geo);
        let nn = grid.node_count();
        let y: Vec<f64> = nodal_coordinates(&grid)
            .iter()
            .enumerate()
            .map(|(i, x)| if i < nn { x + 0.1 } else { *x })
            .collect();
        let moved = warp_geometry(&grid, &y, &geo).unwrap();
        assert_eq!(moved.elements, geo.elements);
        for (a, b) in moved.vertices.iter().zip(&geo.vertices) {
            assert!((a[0] - b[0] - 0.1).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }
}
