//! Preconditioned MINRES and CG for symmetric systems, matrix-free.

/// Outcome of a Krylov solve of `A x = b`.
#[derive(Debug, Clone)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Preconditioned relative residual `‖b - Ax‖_{Q⁻¹} / ‖b‖_{Q⁻¹}` of the returned `x`,
    /// recomputed from scratch.
    pub rel_residual: f64,
    pub converged: bool,
    /// The recurrence broke down (indefinite preconditioner or operator).
    pub breakdown: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn true_residual(
    apply: &mut impl FnMut(&[f64], &mut [f64]),
    precond: &mut impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &[f64],
    bnorm: f64,
) -> f64 {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    dot(&r, &z).max(0.0).sqrt() / bnorm
}

/// Preconditioned MINRES (Paige-Saunders), starting from `x = 0`.
///
/// `apply(v, out)` writes `A v`; `precond(r, out)` writes `Q⁻¹ r` for an SPD `Q`.
pub fn minres(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = vec![0.0; n];
    precond(&r1, &mut y);
    let beta1_sq = dot(&r1, &y);
    if !(beta1_sq > 0.0) {
        return KrylovOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
            converged: beta1_sq == 0.0,
            breakdown: beta1_sq < 0.0 || beta1_sq.is_nan(),
        };
    }
    let beta1 = beta1_sq.sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = false;

    while iterations < max_iter {
        iterations += 1;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        apply(&v, &mut y);
        if iterations >= 2 {
            let f = beta / oldb;
            for (yi, ri) in y.iter_mut().zip(&r1) {
                *yi -= f * ri;
            }
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        for (yi, ri) in y.iter_mut().zip(&r2) {
            *yi -= f * ri;
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond(&r2, &mut y);
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < 0.0 || beta_sq.is_nan() {
            breakdown = true;
            break;
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        if phibar / beta1 <= tol {
            converged = true;
            break;
        }
        if beta == 0.0 {
            // Exact invariant subspace: x solves the system.
            converged = true;
            break;
        }
    }
    let rel_residual = true_residual(&mut apply, &mut precond, b, &x, beta1);
    KrylovOutcome {
        x,
        iterations,
        rel_residual,
        converged: converged && !breakdown,
        breakdown,
    }
}

/// Preconditioned conjugate gradients, starting from `x = 0`.
pub fn cg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return KrylovOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
            converged: rz == 0.0,
            breakdown: rz < 0.0 || rz.is_nan(),
        };
    }
    let bnorm = rz.sqrt();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = false;
    while iterations < max_iter {
        iterations += 1;
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        if rz_new.max(0.0).sqrt() / bnorm <= tol {
            converged = true;
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel_residual = true_residual(&mut apply, &mut precond, b, &x, bnorm);
    KrylovOutcome {
        x,
        iterations,
        rel_residual,
        converged: converged && !breakdown,
        breakdown,
    }
}
