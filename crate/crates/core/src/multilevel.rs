//! Coarse-to-fine solution: image and prior pyramids, nodal prolongation of `Y`.

use log::{info, warn};

use crate::error::{Error, Result};
use crate::fitting::{build_prior, initial_constants};
use crate::grid::{average_to_cells, interpolate_point, nodal_coordinates, GridSpec};
use crate::hyperelastic::RegularizerParams;
use crate::imagemodel::{restrict_once, ImageModel};
use crate::optimizer::{ggn_solve, GNState, IterationRecord, Problem, SolverConfig, StopReason};

/// Smallest admissible coarse grid.
pub const MIN_COARSE_N: usize = 4;
/// Target size of the coarsest grid when the level count is not given.
pub const DEFAULT_COARSE_N: usize = 8;

#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub grid: GridSpec,
    pub samples: Vec<f64>,
    pub labels: Vec<u32>,
}

/// Levels ordered finest first, coarsest last.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Level count that brings `n` down to [`DEFAULT_COARSE_N`] by halving, or as far as
/// divisibility allows.
pub fn default_levels(n: usize) -> usize {
    let mut levels = 1;
    let mut m = n;
    while m.is_multiple_of(2) && m / 2 >= DEFAULT_COARSE_N {
        m /= 2;
        levels += 1;
    }
    levels
}

/// Majority vote over each `2^dim` block; ties go to the lowest id.
pub fn restrict_labels(grid: &GridSpec, labels: &[u32]) -> Result<Vec<u32>> {
    grid.check_cells("labels", labels.len())?;
    let n = grid.n();
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!("cannot halve n = {n}")));
    }
    let coarse = grid.with_n(n / 2)?;
    let dim = grid.dim();
    let ext = coarse.cell_extent();
    let mut out = vec![0; coarse.cell_count()];
    let mut block = [0u32; 8];
    for k in 0..ext[2] {
        for j in 0..ext[1] {
            for i in 0..ext[0] {
                let size = 1 << dim;
                for (b, slot) in block.iter_mut().enumerate().take(size) {
                    let (di, dj, dk) = (b & 1, b >> 1 & 1, b >> 2 & 1);
                    *slot = labels[grid.cell_index(2 * i + di, 2 * j + dj, 2 * k + dk)];
                }
                let votes = &mut block[..size];
                votes.sort_unstable();
                let (mut best, mut best_count) = (votes[0], 0);
                let mut run = 0;
                for t in 0..size {
                    run = if t > 0 && votes[t] == votes[t - 1] { run + 1 } else { 1 };
                    if run > best_count {
                        best = votes[t];
                        best_count = run;
                    }
                }
                out[coarse.cell_index(i, j, k)] = best;
            }
        }
    }
    Ok(out)
}

/// Builds up to `levels` levels. Coarsening stops early, with a warning, at the first
/// level on which some region would vanish.
pub fn build_pyramid(grid: &GridSpec, samples: &[f64], labels: &[u32], levels: usize) -> Result<Pyramid> {
    grid.check_cells("image samples", samples.len())?;
    let prior = build_prior(labels)?;
    if levels == 0 {
        return Err(Error::InvalidParams("level count must be at least 1".into()));
    }
    let factor = 1usize << (levels - 1);
    if !grid.n().is_multiple_of(factor) {
        return Err(Error::InvalidGrid(format!(
            "n = {} is not divisible by 2^{}",
            grid.n(),
            levels - 1
        )));
    }
    if levels > 1 && grid.n() / factor < MIN_COARSE_N {
        return Err(Error::InvalidGrid(format!(
            "{levels} levels would make the coarsest grid smaller than {MIN_COARSE_N} cells per axis"
        )));
    }
    let m = prior.region_count();
    let mut out = vec![PyramidLevel {
        grid: *grid,
        samples: samples.to_vec(),
        labels: labels.to_vec(),
    }];
    for _ in 1..levels {
        let fine = out.last().unwrap();
        let coarse_labels = restrict_labels(&fine.grid, &fine.labels)?;
        let mut present = vec![false; m];
        for &l in &coarse_labels {
            present[l as usize - 1] = true;
        }
        if present.iter().any(|p| !p) {
            warn!(
                "a prior region vanishes at n = {}; using {} level(s)",
                fine.grid.n() / 2,
                out.len()
            );
            break;
        }
        let coarse_samples = restrict_once(&fine.grid, &fine.samples)?;
        let coarse_grid = fine.grid.with_n(fine.grid.n() / 2)?;
        out.push(PyramidLevel {
            grid: coarse_grid,
            samples: coarse_samples,
            labels: coarse_labels,
        });
    }
    Ok(Pyramid { levels: out })
}

/// Evaluates the coarse piecewise-linear interpolant at the fine nodes.
pub fn prolong(coarse: &GridSpec, y: &[f64], fine: &GridSpec) -> Result<Vec<f64>> {
    coarse.check_nodal("coarse Y", y)?;
    if fine.dim() != coarse.dim() || fine.n() != 2 * coarse.n() {
        return Err(Error::InvalidGrid(format!(
            "prolongation needs factor-two refinement, got n = {} to n = {}",
            coarse.n(),
            fine.n()
        )));
    }
    let dim = fine.dim();
    let nn = fine.node_count();
    let x = nodal_coordinates(fine);
    let mut out = vec![0.0; fine.nodal_len()];
    for i in 0..nn {
        let mut p = [0.0; 3];
        for (a, pa) in p.iter_mut().enumerate().take(dim) {
            *pa = x[a * nn + i];
        }
        let v = interpolate_point(coarse, y, &p)?;
        for c in 0..dim {
            out[c * nn + i] = v[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LevelOutcome {
    pub grid: GridSpec,
    pub stop: StopReason,
    pub iterations: usize,
    pub start_min_det: f64,
    pub final_energy: f64,
}

#[derive(Debug, Clone)]
pub struct MultilevelRun {
    /// Solution on the finest grid.
    pub state: GNState,
    pub grid: GridSpec,
    pub records: Vec<IterationRecord>,
    /// Per level, coarsest first.
    pub levels: Vec<LevelOutcome>,
}

impl MultilevelRun {
    /// Stop reason on the finest level.
    pub fn stop(&self) -> StopReason {
        self.levels.last().map(|l| l.stop).unwrap_or(StopReason::Converged)
    }
}

/// Solves coarsest to finest. Level indices in the log count from 0 at the coarsest grid.
pub fn run_multilevel(
    grid: &GridSpec,
    samples: &[f64],
    labels: &[u32],
    params: &RegularizerParams,
    config: &SolverConfig,
    levels: usize,
) -> Result<MultilevelRun> {
    params.validate(grid.dim())?;
    config.validate(grid.boundary_condition())?;
    let pyramid = build_pyramid(grid, samples, labels, levels)?;
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    let mut previous: Option<(GridSpec, Vec<f64>)> = None;
    let mut last_state = None;
    for (index, level) in pyramid.levels.iter().rev().enumerate() {
        let image = ImageModel::fit(&level.grid, &level.samples)?;
        let prior = build_prior(&level.labels)?;
        let problem = Problem::new(image, prior, *params, config.gamma_for(&level.grid))?;
        let y0 = match previous.take() {
            Some((cg, cy)) => prolong(&cg, &cy, &level.grid)?,
            None => nodal_coordinates(&level.grid),
        };
        let warped = problem.image().eval(&average_to_cells(&level.grid, &y0)?)?;
        let c0 = initial_constants(&warped, problem.prior())?;
        let run = ggn_solve(&problem, config, &y0, &c0, index)?;
        let start_min_det = run.records[0].min_det;
        info!(
            "level {index} (n = {}): {:?} after {} iteration(s), F = {:.6e}, min det = {:.3e}",
            level.grid.n(),
            run.stop,
            run.state.iteration,
            run.state.total(),
            run.state.min_det
        );
        outcomes.push(LevelOutcome {
            grid: level.grid,
            stop: run.stop,
            iterations: run.state.iteration,
            start_min_det,
            final_energy: run.state.total(),
        });
        records.extend(run.records);
        previous = Some((level.grid, run.state.y.clone()));
        last_state = Some(run.state);
    }
    Ok(MultilevelRun {
        state: last_state.expect("pyramid has at least one level"),
        grid: *grid,
        records,
        levels: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;
    use crate::hyperelastic::determinant_field;

    fn g(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, BoundaryCondition::Natural).unwrap()
    }

    #[test]
    fn level_defaults() {
        assert_eq!(default_levels(256), 6);
        assert_eq!(default_levels(64), 4);
        assert_eq!(default_levels(8), 1);
        assert_eq!(default_levels(12), 1);
        assert_eq!(default_levels(24), 2);
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let grid = g(2, 4);
        // Top-left block {1,1,2,2} in two rows; everything else 3.
        let mut labels = vec![3u32; 16];
        labels[grid.cell_index(0, 0, 0)] = 2;
        labels[grid.cell_index(1, 0, 0)] = 2;
        labels[grid.cell_index(0, 1, 0)] = 1;
        labels[grid.cell_index(1, 1, 0)] = 1;
        let coarse = restrict_labels(&grid, &labels).unwrap();
        assert_eq!(coarse, vec![1, 3, 3, 3]);
    }

    #[test]
    fn single_level_is_input() {
        let grid = g(2, 8);
        let labels = vec![1u32; 64];
        let p = build_pyramid(&grid, &[5.0; 64], &labels, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.levels[0].samples, vec![5.0; 64]);
    }

    #[test]
    fn constants_survive_restriction() {
        let grid = g(3, 16);
        let nc = grid.cell_count();
        let p = build_pyramid(&grid, &vec![9.0; nc], &vec![1; nc], 3).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.levels.iter().all(|l| l.samples.iter().all(|&s| s == 9.0)));
        assert_eq!(p.levels[2].grid.n(), 4);
    }

    #[test]
    fn vanishing_region_truncates() {
        let grid = g(2, 16);
        let mut labels = vec![1u32; 256];
        labels[0] = 2;
        let p = build_pyramid(&grid, &[0.0; 256], &labels, 3).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn rejects_bad_divisibility() {
        let grid = g(2, 12);
        assert!(build_pyramid(&grid, &[0.0; 144], &[1; 144], 3).is_err());
        let grid = g(2, 8);
        assert!(build_pyramid(&grid, &[0.0; 64], &[1; 64], 3).is_err());
    }

    #[test]
    fn prolong_identity_and_affine() {
        for dim in [2, 3] {
            let coarse = g(dim, 4);
            let fine = g(dim, 8);
            let xf = nodal_coordinates(&fine);
            let yf = prolong(&coarse, &nodal_coordinates(&coarse), &fine).unwrap();
            assert!(xf.iter().zip(&yf).all(|(a, b)| (a - b).abs() < 1e-15));
            let affine = |x: &[f64], grid: &GridSpec| -> Vec<f64> {
                let nn = grid.node_count();
                let mut y = vec![0.0; x.len()];
                for i in 0..nn {
                    for c in 0..dim {
                        let mut v = 0.1 * c as f64;
                        for a in 0..dim {
                            v += (if a == c { 1.2 } else { 0.1 * (a + c) as f64 }) * x[a * nn + i];
                        }
                        y[c * nn + i] = v;
                    }
                }
                y
            };
            let yc = affine(&nodal_coordinates(&coarse), &coarse);
            let got = prolong(&coarse, &yc, &fine).unwrap();
            let want = affine(&xf, &fine);
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn prolong_keeps_determinants() {
        let coarse = g(3, 4);
        let fine = g(3, 8);
        let nn = coarse.node_count();
        let mut y = nodal_coordinates(&coarse);
        for (i, v) in y.iter_mut().enumerate() {
            *v += 0.03 * ((i * 7919 % 97) as f64 / 97.0 - 0.5) * (i / nn + 1) as f64;
        }
        let vc = determinant_field(&coarse, &y).unwrap();
        assert!(vc.iter().all(|&d| d > 0.0));
        let vf = determinant_field(&fine, &prolong(&coarse, &y, &fine).unwrap()).unwrap();
        let spc = 6;
        for (t, &d) in vf.iter().enumerate() {
            let cell = fine.cell_multi_index(t / spc);
            let local = &fine.simplices()[t % spc];
            // Parent cell, and the parent simplex from the sub-cell's position inside it.
            let parent = coarse.cell_index(cell[0] / 2, cell[1] / 2, cell[2] / 2);
            let off = [cell[0] % 2, cell[1] % 2, cell[2] % 2];
            let parent_local = parent_simplex(off, local.perm);
            assert!((d - vc[parent * spc + parent_local]).abs() < 1e-12);
        }
    }

    /// Kuhn index of the coarse simplex containing a fine sub-simplex, by the ordering
    /// of the parent-local coordinates of the sub-simplex centroid.
    fn parent_simplex(off: [usize; 3], perm: [usize; 3]) -> usize {
        let mut local = [0.0f64; 3];
        // An interior point of the fine simplex, local to its own cell.
        for (rank, &axis) in perm.iter().enumerate() {
            local[axis] = 0.75 - 0.25 * rank as f64;
        }
        let t: Vec<f64> = (0..3).map(|a| (off[a] as f64 + local[a]) / 2.0).collect();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| t[b].partial_cmp(&t[a]).unwrap());
        crate::grid::kuhn_simplices(3)
            .iter()
            .position(|s| s.perm == order)
            .unwrap()
    }
}
