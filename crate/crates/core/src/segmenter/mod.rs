//! End-to-end segmentation: solve, push the prior forward, verify topology.

mod contour;
mod raster;
mod topology;

pub use contour::{extract_boundary, BoundaryGeometry};
pub use raster::{boundary_label, rasterize_mask, warp_geometry};
pub use topology::{component_count, dice, topology_report, RegionReport, TopologyReport};

use crate::error::Result;
use crate::grid::GridSpec;
use crate::hyperelastic::RegularizerParams;
use crate::multilevel::{run_multilevel, MultilevelRun};
use crate::optimizer::SolverConfig;

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    /// Deformed prior on the cell-centered grid.
    pub mask: Vec<u32>,
    /// Prior boundary in reference coordinates.
    pub boundary: BoundaryGeometry,
    /// The same boundary mapped through `y`.
    pub warped_boundary: BoundaryGeometry,
    pub det_range: (f64, f64),
    pub report: TopologyReport,
    /// Euler characteristic of each region's warped surface (3D only).
    pub euler: Vec<(u32, i64)>,
    pub run: MultilevelRun,
}

impl SegmentationResult {
    /// Positive determinants everywhere and unchanged component counts.
    pub fn topology_preserved(&self) -> bool {
        self.det_range.0 > 0.0 && self.report.preserved()
    }
}

/// Post-processing of a finished solve.
pub fn finish(
    grid: &GridSpec,
    labels: &[u32],
    run: MultilevelRun,
    ground_truth: Option<&[u32]>,
) -> Result<SegmentationResult> {
    let y = &run.state.y;
    let boundary = extract_boundary(grid, labels)?;
    let warped_boundary = warp_geometry(grid, y, &boundary)?;
    let mask = rasterize_mask(grid, y, labels)?;
    let report = topology_report(grid, &mask, labels, ground_truth)?;
    let euler = if grid.dim() == 3 {
        let m = labels.iter().copied().max().unwrap_or(0);
        (1..=m)
            .map(|l| (l, warped_boundary.region(l).euler_characteristic()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(SegmentationResult {
        mask,
        boundary,
        warped_boundary,
        det_range: (run.state.min_det, run.state.max_det),
        report,
        euler,
        run,
    })
}

/// Multilevel solve followed by [`finish`].
pub fn segment(
    grid: &GridSpec,
    samples: &[f64],
    labels: &[u32],
    params: &RegularizerParams,
    config: &SolverConfig,
    levels: usize,
    ground_truth: Option<&[u32]>,
) -> Result<SegmentationResult> {
    let run = run_multilevel(grid, samples, labels, params, config, levels)?;
    finish(grid, labels, run, ground_truth)
}
