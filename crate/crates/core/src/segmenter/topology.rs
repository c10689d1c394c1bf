//! Connected components and overlap scores of label masks.

use serde::{Deserialize, Serialize};

use super::contour::UnionFind;
use crate::error::{check_len, Result};
use crate::grid::GridSpec;

/// Components of the cells carrying `label`, with 8-connectivity in 2D and
/// 26-connectivity in 3D.
pub fn component_count(grid: &GridSpec, mask: &[u32], label: u32) -> Result<usize> {
    grid.check_cells("mask", mask.len())?;
    let ext = grid.cell_extent();
    let mut uf = UnionFind::new(mask.len());
    // Half of the neighbour stencil: offsets that are lexicographically positive.
    let mut stencil = Vec::new();
    let dz = if grid.dim() == 3 { -1i64..=1 } else { 0i64..=0 };
    for k in dz {
        for j in -1i64..=1 {
            for i in -1i64..=1 {
                if (k, j, i) > (0, 0, 0) {
                    stencil.push([i, j, k]);
                }
            }
        }
    }
    for k in 0..ext[2] {
        for j in 0..ext[1] {
            for i in 0..ext[0] {
                let a = grid.cell_index(i, j, k);
                if mask[a] != label {
                    continue;
                }
                for o in &stencil {
                    let (ni, nj, nk) = (i as i64 + o[0], j as i64 + o[1], k as i64 + o[2]);
                    if ni < 0 || nj < 0 || nk < 0 {
                        continue;
                    }
                    let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                    if ni >= ext[0] || nj >= ext[1] || nk >= ext[2] {
                        continue;
                    }
                    let b = grid.cell_index(ni, nj, nk);
                    if mask[b] == label {
                        uf.union(a, b);
                    }
                }
            }
        }
    }
    Ok((0..mask.len())
        .filter(|&c| mask[c] == label && uf.find(c) == c)
        .count())
}

/// `2|A ∩ B| / (|A| + |B|)` for the cells labelled `label`; 1 when both are empty.
pub fn dice(a: &[u32], b: &[u32], label: u32) -> Result<f64> {
    check_len("mask", a.len(), b.len())?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub label: u32,
    pub prior_components: usize,
    pub mask_components: usize,
    pub cells: usize,
    /// Against the ground truth, when one is given.
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub regions: Vec<RegionReport>,
}

impl TopologyReport {
    /// Every region has as many components as in the prior.
    pub fn preserved(&self) -> bool {
        self.regions
            .iter()
            .all(|r| r.prior_components == r.mask_components)
    }
}

pub fn topology_report(
    grid: &GridSpec,
    mask: &[u32],
    prior: &[u32],
    ground_truth: Option<&[u32]>,
) -> Result<TopologyReport> {
    grid.check_cells("mask", mask.len())?;
    grid.check_cells("prior labels", prior.len())?;
    if let Some(gt) = ground_truth {
        grid.check_cells("ground truth", gt.len())?;
    }
    let m = prior.iter().copied().max().unwrap_or(0);
    let mut regions = Vec::new();
    for label in 1..=m {
        regions.push(RegionReport {
            label,
            prior_components: component_count(grid, prior, label)?,
            mask_components: component_count(grid, mask, label)?,
            cells: mask.iter().filter(|&&l| l == label).count(),
            dice: ground_truth.map(|gt| dice(mask, gt, label)).transpose()?,
        });
    }
    Ok(TopologyReport { regions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    #[test]
    fn diagonal_cells_connect() {
        let grid = GridSpec::new(2, 4, BoundaryCondition::Natural).unwrap();
        let mut mask = vec![1u32; 16];
        mask[grid.cell_index(0, 0, 0)] = 2;
        mask[grid.cell_index(1, 1, 0)] = 2;
        mask[grid.cell_index(3, 3, 0)] = 2;
        assert_eq!(component_count(&grid, &mask, 2).unwrap(), 2);
        assert_eq!(component_count(&grid, &mask, 1).unwrap(), 1);
    }

    #[test]
    fn corner_touch_in_3d() {
        let grid = GridSpec::new(3, 3, BoundaryCondition::Natural).unwrap();
        let mut mask = vec![1u32; 27];
        mask[grid.cell_index(0, 0, 0)] = 2;
        mask[grid.cell_index(1, 1, 1)] = 2;
        assert_eq!(component_count(&grid, &mask, 2).unwrap(), 1);
    }

    #[test]
    fn dice_one_flip() {
        let a: Vec<u32> = (0..4096).map(|i| if i < 100 { 2 } else { 1 }).collect();
        let mut b = a.clone();
        b[0] = 1;
        let d = dice(&b, &a, 2).unwrap();
        assert!((d - 2.0 * 99.0 / 199.0).abs() < 1e-15);
        assert_eq!(dice(&a, &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn self_report() {
        let grid = GridSpec::new(2, 4, BoundaryCondition::Natural).unwrap();
        let prior: Vec<u32> = (0..16).map(|i| if i % 4 < 2 { 1 } else { 2 }).collect();
        let r = topology_report(&grid, &prior, &prior, Some(&prior)).unwrap();
        assert!(r.preserved());
        assert!(r.regions.iter().all(|x| x.dice == Some(1.0)));
    }
}
