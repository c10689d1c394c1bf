//! Gauss-Newton building blocks checked against probes of the matrix-free Hessian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toposeg::fitting::build_prior;
use toposeg::grid::{BoundaryCondition, GridSpec};
use toposeg::hyperelastic::RegularizerParams;
use toposeg::imagemodel::ImageModel;
use toposeg::optimizer::{ggn_solve, solve_direction, Preconditioner, Problem, SolverConfig};
use toposeg::phantom::{label_shapes, perturbed_identity, render, smooth_image, split_prior, Ellipsoid};

fn problem(dim: usize, n: usize, bc: BoundaryCondition) -> Problem {
    let grid = GridSpec::new(dim, n, bc).unwrap();
    let gamma = SolverConfig::default().gamma_for(&grid);
    Problem::new(
        ImageModel::fit(&grid, &smooth_image(&grid)).unwrap(),
        build_prior(&split_prior(&grid)).unwrap(),
        RegularizerParams::defaults_for(dim),
        gamma,
    )
    .unwrap()
}

fn unit(len: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; len];
    e[j] = 1.0;
    e
}

#[test]
fn band_preconditioner_is_the_tridiagonal_of_the_hessian() {
    for (dim, n) in [(2, 4), (3, 3)] {
        let p = problem(dim, n, BoundaryCondition::Natural);
        let y = perturbed_identity(p.grid(), 0.3, 4);
        let ev = p.evaluate(&y, &[60.0, 140.0]).unwrap();
        let pre = Preconditioner::new(&p, &ev);
        assert!(pre.is_banded());
        let (len, nl, nn) = (p.unknown_len(), p.grid().nodal_len(), p.grid().node_count());
        let mut h = vec![0.0; len];
        let mut q = vec![0.0; len];
        for j in 0..len {
            let e = unit(len, j);
            p.hessian_apply(&ev, &e, &mut h);
            pre.forward(&e, &mut q);
            for i in 0..len {
                let in_band = if j < nl {
                    i < nl && i / nn == j / nn && i.abs_diff(j) <= 1
                } else {
                    i == j
                };
                let expect = if in_band { h[i] } else { 0.0 };
                assert!((q[i] - expect).abs() <= 1e-10 * h[j].abs(), "{dim}D ({i},{j}): {} vs {expect}", q[i]);
            }
        }
        // Q⁻¹ Q = I.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut back = vec![0.0; len];
        pre.forward(&w, &mut q);
        pre.apply(&q, &mut back);
        for (a, b) in back.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn directions_descend() {
    let config = SolverConfig::default();
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Natural] {
        let p = problem(2, 8, bc);
        for seed in 0..10 {
            let y = perturbed_identity(p.grid(), 0.4, 100 + seed);
            let ev = p.evaluate(&y, &[50.0 + seed as f64, 170.0]).unwrap();
            let dir = solve_direction(&p, &ev, &config);
            let slope: f64 = ev.gradient.iter().zip(&dir.p).map(|(a, b)| a * b).sum();
            assert!(slope < 0.0, "{bc:?} seed {seed}: slope {slope}");
            assert!(!dir.steepest_descent);
            assert!(dir.outcome.rel_residual <= config.minres_tol || dir.outcome.iterations == config.minres_max_iter);
        }
    }
}

#[test]
fn shifted_disk_run_keeps_invariants() {
    let grid = GridSpec::new(2, 32, BoundaryCondition::Dirichlet).unwrap();
    let disk = Ellipsoid::ball([0.6, 0.5, 0.0], 0.2);
    let prior_disk = Ellipsoid::ball([0.5, 0.5, 0.0], 0.2);
    let image = render(&label_shapes(&grid, |p| disk.contains(2, p)), 30.0, 200.0);
    let labels = label_shapes(&grid, |p| prior_disk.contains(2, p));
    let p = Problem::new(
        ImageModel::fit(&grid, &image).unwrap(),
        build_prior(&labels).unwrap(),
        RegularizerParams::defaults_for(2),
        0.0,
    )
    .unwrap();
    let config = SolverConfig::default();
    let x = toposeg::grid::nodal_coordinates(&grid);
    let run = ggn_solve(&p, &config, &x, &[30.0, 200.0], 0).unwrap();
    assert!(run.records.len() > 3);
    for pair in run.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!(b.min_det > 0.0);
        assert!(b.energy < a.energy);
        assert!(b.energy <= a.energy + config.ls_delta * b.eta * b.slope);
    }
    let fit0 = run.records[0].fit;
    assert!(run.state.energy.fit < 0.5 * fit0);
}
