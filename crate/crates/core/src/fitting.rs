//! Piecewise-constant prior and the least-squares fitting term
//! `(h^dim / 2) ‖I(PY) - MC‖²`.

use crate::error::{check_len, Error, Result};
use crate::grid::GridSpec;

/// Cell-centered label map with regions `1..=m`. Column `l` of the selection matrix `M`
/// is the indicator of region `l + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorPartition {
    labels: Vec<u32>,
    counts: Vec<usize>,
}

impl PriorPartition {
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of regions `m`.
    pub fn region_count(&self) -> usize {
        self.counts.len()
    }

    /// Cells per region; `MᵀM = diag(counts)`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Zero-based region index of a cell.
    #[inline]
    pub fn region_of(&self, cell: usize) -> usize {
        self.labels[cell] as usize - 1
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Validates a label map: ids must be exactly `1..=m`, each used at least once.
pub fn build_prior(labels: &[u32]) -> Result<PriorPartition> {
    if labels.is_empty() {
        return Err(Error::InvalidLabels("empty label map".into()));
    }
    if labels.contains(&0) {
        return Err(Error::InvalidLabels("region ids start at 1".into()));
    }
    let m = *labels.iter().max().unwrap() as usize;
    let mut counts = vec![0usize; m];
    for &l in labels {
        counts[l as usize - 1] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidLabels(format!(
            "region {} is empty (ids must be 1..={m} without gaps)",
            missing + 1
        )));
    }
    Ok(PriorPartition {
        labels: labels.to_vec(),
        counts,
    })
}

fn check_shapes(grid: &GridSpec, warped: &[f64], prior: &PriorPartition, c: &[f64]) -> Result<()> {
    grid.check_cells("warped intensities", warped.len())?;
    grid.check_cells("prior labels", prior.len())?;
    check_len("intensity constants", prior.region_count(), c.len())
}

/// `(h^dim / 2) Σ_cells (warped - c_label)²`.
pub fn fit_energy(grid: &GridSpec, warped: &[f64], prior: &PriorPartition, c: &[f64]) -> Result<f64> {
    check_shapes(grid, warped, prior, c)?;
    let s: f64 = warped
        .iter()
        .enumerate()
        .map(|(cell, w)| {
            let r = w - c[prior.region_of(cell)];
            r * r
        })
        .sum();
    Ok(0.5 * grid.cell_volume() * s)
}

/// Gradients of [`fit_energy`] with respect to `Y` and `C`. `cell_grads` holds the
/// image gradient at each cell point `PY`, component-major.
pub fn fit_gradient(
    grid: &GridSpec,
    warped: &[f64],
    cell_grads: &[f64],
    prior: &PriorPartition,
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(grid, warped, prior, c)?;
    let (dim, nn, nc) = (grid.dim(), grid.node_count(), grid.cell_count());
    check_len("image gradients", dim * nc, cell_grads.len())?;
    let hd = grid.cell_volume();
    let corners = grid.corner_count();
    let offsets = grid.corner_offsets();
    let w = hd / corners as f64;
    let mut gy = vec![0.0; grid.nodal_len()];
    let mut gc = vec![0.0; c.len()];
    for cell in 0..nc {
        let region = prior.region_of(cell);
        let r = warped[cell] - c[region];
        gc[region] -= hd * r;
        let base = grid.cell_base_node(cell);
        for comp in 0..dim {
            let val = w * r * cell_grads[comp * nc + cell];
            for &o in &offsets[..corners] {
                gy[comp * nn + base + o] += val;
            }
        }
    }
    Ok((gy, gc))
}

/// Adds the Gauss-Newton blocks of the fitting term applied to `(w_y, w_c)`.
pub(crate) fn fit_gn_add(
    grid: &GridSpec,
    cell_grads: &[f64],
    prior: &PriorPartition,
    w_y: &[f64],
    w_c: &[f64],
    out_y: &mut [f64],
    out_c: &mut [f64],
) {
    let (dim, nn, nc) = (grid.dim(), grid.node_count(), grid.cell_count());
    let hd = grid.cell_volume();
    let corners = grid.corner_count();
    let offsets = grid.corner_offsets();
    let avg = 1.0 / corners as f64;
    for cell in 0..nc {
        let base = grid.cell_base_node(cell);
        let region = prior.region_of(cell);
        // q = I_PY (P w_y) - M w_c at this cell.
        let mut q = -w_c[region];
        for comp in 0..dim {
            let wc = &w_y[comp * nn..];
            let s: f64 = offsets[..corners].iter().map(|&o| wc[base + o]).sum();
            q += cell_grads[comp * nc + cell] * s * avg;
        }
        let q = hd * q;
        out_c[region] -= q;
        for comp in 0..dim {
            let val = q * cell_grads[comp * nc + cell] * avg;
            for &o in &offsets[..corners] {
                out_y[comp * nn + base + o] += val;
            }
        }
    }
}

/// `h^dim [PᵀI_PYᵀI_PY P, -PᵀI_PYᵀM; -MᵀI_PY P, MᵀM] (w_y, w_c)`.
pub fn fit_gn_blocks_apply(
    grid: &GridSpec,
    cell_grads: &[f64],
    prior: &PriorPartition,
    w_y: &[f64],
    w_c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    grid.check_nodal("w_y", w_y)?;
    grid.check_cells("prior labels", prior.len())?;
    check_len("w_c", prior.region_count(), w_c.len())?;
    check_len("image gradients", grid.dim() * grid.cell_count(), cell_grads.len())?;
    let mut out_y = vec![0.0; w_y.len()];
    let mut out_c = vec![0.0; w_c.len()];
    fit_gn_add(grid, cell_grads, prior, w_y, w_c, &mut out_y, &mut out_c);
    Ok((out_y, out_c))
}

/// Adds the main diagonal and first superdiagonal of `h^dim PᵀI_PYᵀI_PY P`.
pub(crate) fn fit_band_add(grid: &GridSpec, cell_grads: &[f64], diag: &mut [f64], off: &mut [f64]) {
    let (dim, nn, nc) = (grid.dim(), grid.node_count(), grid.cell_count());
    let corners = grid.corner_count();
    let offsets = grid.corner_offsets();
    let avg = 1.0 / corners as f64;
    let hd = grid.cell_volume();
    for cell in 0..nc {
        let base = grid.cell_base_node(cell);
        for comp in 0..dim {
            let g = cell_grads[comp * nc + cell] * avg;
            let e = hd * g * g;
            for b in 0..corners {
                diag[comp * nn + base + offsets[b]] += e;
                if b & 1 == 0 {
                    off[comp * nn + base + offsets[b]] += e;
                }
            }
        }
    }
}

/// Per-region mean of the warped intensities; the minimizer of the fit in `C`.
pub fn initial_constants(warped: &[f64], prior: &PriorPartition) -> Result<Vec<f64>> {
    check_len("warped intensities", prior.len(), warped.len())?;
    let mut sums = vec![0.0; prior.region_count()];
    for (cell, w) in warped.iter().enumerate() {
        sums[prior.region_of(cell)] += w;
    }
    let c: Vec<f64> = sums
        .iter()
        .zip(prior.counts())
        .map(|(s, &n)| s / n as f64)
        .collect();
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    fn g2() -> GridSpec {
        GridSpec::new(2, 2, BoundaryCondition::Natural).unwrap()
    }

    #[test]
    fn prior_counts() {
        let p = build_prior(&[1, 1, 2, 2]).unwrap();
        assert_eq!(p.region_count(), 2);
        assert_eq!(p.counts(), &[2, 2]);
        let single = build_prior(&[1; 16]).unwrap();
        assert_eq!(single.counts(), &[16]);
    }

    #[test]
    fn prior_rejects_gaps_and_zero() {
        assert!(build_prior(&[1, 3, 3, 1]).is_err());
        assert!(build_prior(&[0, 1, 1, 1]).is_err());
        assert!(build_prior(&[]).is_err());
    }

    #[test]
    fn exact_fit_is_zero() {
        let p = build_prior(&[1, 1, 2, 2]).unwrap();
        let e = fit_energy(&g2(), &[3.0, 3.0, 9.0, 9.0], &p, &[3.0, 9.0]).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn single_cell_value() {
        // With h = 1 the energy is (5 - 3)² / 2; scale out h^dim = 1/4 here.
        let p = build_prior(&[1, 1, 1, 1]).unwrap();
        let e = fit_energy(&g2(), &[5.0, 3.0, 3.0, 3.0], &p, &[3.0]).unwrap();
        assert!((e / g2().cell_volume() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let grid = g2();
        let p = build_prior(&[1, 2, 1, 2]).unwrap();
        let grads = vec![1.5; 8];
        let (gy, gc) = fit_gradient(&grid, &[4.0, 1.0, 4.0, 1.0], &grads, &p, &[4.0, 1.0]).unwrap();
        assert!(gy.iter().all(|&v| v == 0.0));
        assert!(gc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_image_keeps_only_counts() {
        let grid = g2();
        let p = build_prior(&[1, 2, 2, 2]).unwrap();
        let zeros = vec![0.0; 8];
        let wy: Vec<f64> = (0..grid.nodal_len()).map(|i| i as f64).collect();
        let (oy, oc) = fit_gn_blocks_apply(&grid, &zeros, &p, &wy, &[2.0, -1.0]).unwrap();
        assert!(oy.iter().all(|&v| v == 0.0));
        let hd = grid.cell_volume();
        assert_eq!(oc, vec![hd * 1.0 * 2.0, -(hd * 3.0)]);
    }

    #[test]
    fn constants_are_means() {
        let p = build_prior(&[1, 2, 2, 1]).unwrap();
        assert_eq!(initial_constants(&[2.0, 5.0, 5.0, 4.0], &p).unwrap(), vec![3.0, 5.0]);
        let q = build_prior(&[1, 1, 1, 1]).unwrap();
        assert_eq!(initial_constants(&[7.0; 4], &q).unwrap(), vec![7.0]);
        assert!(initial_constants(&[1.0; 3], &q).is_err());
    }

    #[test]
    fn size_mismatch() {
        let p = build_prior(&[1, 1, 2, 2]).unwrap();
        assert!(fit_energy(&g2(), &[0.0; 3], &p, &[0.0, 0.0]).is_err());
        assert!(fit_energy(&g2(), &[0.0; 4], &p, &[0.0]).is_err());
    }
}
