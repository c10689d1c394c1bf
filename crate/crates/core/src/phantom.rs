//! Synthetic test volumes and deterministic perturbations.

use crate::grid::{nodal_coordinates, BoundaryCondition, GridSpec};

/// Cell centers, component-major.
pub fn cell_centers(grid: &GridSpec) -> Vec<[f64; 3]> {
    let h = grid.h();
    (0..grid.cell_count())
        .map(|c| {
            let m = grid.cell_multi_index(c);
            let mut p = [0.0; 3];
            for a in 0..grid.dim() {
                p[a] = (m[a] as f64 + 0.5) * h;
            }
            p
        })
        .collect()
}

/// An axis-aligned ellipsoid (ellipse in 2D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn ball(center: [f64; 3], r: f64) -> Self {
        Self {
            center,
            radii: [r; 3],
        }
    }

    pub fn contains(&self, dim: usize, p: &[f64; 3]) -> bool {
        (0..dim)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            < 1.0
    }
}

/// An axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cuboid {
    pub fn contains(&self, dim: usize, p: &[f64; 3]) -> bool {
        (0..dim).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }
}

/// Labels `2` inside any of the shapes, `1` elsewhere.
pub fn label_shapes(grid: &GridSpec, inside: impl Fn(&[f64; 3]) -> bool) -> Vec<u32> {
    cell_centers(grid)
        .iter()
        .map(|p| if inside(p) { 2 } else { 1 })
        .collect()
}

/// Two-level image from a label map.
pub fn render(labels: &[u32], background: f64, foreground: f64) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == 1 { background } else { foreground })
        .collect()
}

/// Smooth image used for derivative checks.
pub fn smooth_image(grid: &GridSpec) -> Vec<f64> {
    cell_centers(grid)
        .iter()
        .map(|p| {
            let z = if grid.dim() == 3 { p[2] } else { 0.3 };
            128.0 + 60.0 * (3.1 * p[0] + 0.4).sin() * (2.3 * p[1] + 1.1).cos() + 40.0 * (2.7 * z).sin()
        })
        .collect()
}

/// Half-space prior `x1 < 1/2` as region 1, the rest region 2.
pub fn split_prior(grid: &GridSpec) -> Vec<u32> {
    label_shapes(grid, |p| p[0] >= 0.5)
}

/// Deterministic pseudo-random numbers in `[-1, 1)` (SplitMix64).
pub fn noise(seed: u64, len: usize) -> Vec<f64> {
    let mut state = seed;
    (0..len)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

/// `X` plus a smooth perturbation of size `amplitude · h` made of a few random Fourier
/// modes; boundary nodes stay fixed under Dirichlet conditions. Feasibility is not
/// checked; amplitudes around 0.3 stay feasible for `n >= 4`.
pub fn perturbed_identity(grid: &GridSpec, amplitude: f64, seed: u64) -> Vec<f64> {
    let dim = grid.dim();
    let nn = grid.node_count();
    let mut y = nodal_coordinates(grid);
    let coeffs = noise(seed, dim * 4 * 5);
    let x = nodal_coordinates(grid);
    let h = grid.h();
    for c in 0..dim {
        for i in 0..nn {
            if grid.boundary_condition() == BoundaryCondition::Dirichlet && grid.is_boundary_node(i) {
                continue;
            }
            let mut v = 0.0;
            for m in 0..4 {
                let k = &coeffs[(c * 4 + m) * 5..(c * 4 + m + 1) * 5];
                let mut phase = k[4] * 3.0;
                for a in 0..dim {
                    phase += (1.0 + 2.0 * k[a].abs()) * std::f64::consts::PI * x[a * nn + i];
                }
                v += 0.25 * k[3] * phase.sin();
            }
            y[c * nn + i] += amplitude * h * v;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperelastic::determinant_range;

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let a = noise(7, 1000);
        assert_eq!(a, noise(7, 1000));
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(a, noise(8, 1000));
    }

    #[test]
    fn perturbation_stays_feasible() {
        for dim in [2, 3] {
            for seed in 0..10 {
                let grid = GridSpec::new(dim, 6, BoundaryCondition::Natural).unwrap();
                let y = perturbed_identity(&grid, 0.3, seed);
                assert!(determinant_range(&grid, &y).unwrap().0 > 0.0);
            }
        }
    }

    #[test]
    fn shapes() {
        let e = Ellipsoid::ball([0.5; 3], 0.2);
        assert!(e.contains(3, &[0.5, 0.6, 0.5]));
        assert!(!e.contains(3, &[0.5, 0.75, 0.5]));
        let b = Cuboid { lo: [0.1; 3], hi: [0.2; 3] };
        assert!(b.contains(2, &[0.15, 0.15, 9.0]));
    }
}
