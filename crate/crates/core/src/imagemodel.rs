//! Cubic B-spline image model on the cell-centered lattice.
//!
//! Samples sit at `x_i = (i + 1/2) h`. Coefficients satisfy the interpolation
//! conditions with natural (zero second derivative) end conditions at the outermost
//! sample centers, and are linearly extrapolated two layers beyond, so the spline is
//! C² on the whole closed domain. Any point with a coordinate outside `[0, 1]`
//! evaluates to 0 with zero gradient.

use crate::error::{check_len, Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone)]
pub struct ImageModel {
    grid: GridSpec,
    /// Padded coefficients, `(n + 4)` per axis, x1 fastest.
    coefficients: Vec<f64>,
    intensity_range: (f64, f64),
}

const PAD: usize = 2;

/// Natural cubic B-spline coefficients for one line, written with padding into `out`
/// (length `n + 4`).
fn solve_line(f: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let n = f.len();
    let c = &mut out[PAD..PAD + n];
    c[0] = f[0];
    c[n - 1] = f[n - 1];
    if n > 2 {
        // Interior rows: c[i-1] + 4 c[i] + c[i+1] = 6 f[i], ends known.
        let m = n - 2;
        scratch.clear();
        scratch.resize(m, 0.0);
        let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * f[i]).collect();
        rhs[0] -= c[0];
        rhs[m - 1] -= c[n - 1];
        // Thomas algorithm on the constant (1, 4, 1) matrix.
        let mut denom = 4.0;
        scratch[0] = 1.0 / denom;
        rhs[0] /= denom;
        for i in 1..m {
            denom = 4.0 - scratch[i - 1];
            scratch[i] = 1.0 / denom;
            rhs[i] = (rhs[i] - rhs[i - 1]) / denom;
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= scratch[i] * rhs[i + 1];
        }
        c[1..n - 1].copy_from_slice(&rhs);
    }
    let (c0, c1) = (out[PAD], if n > 1 { out[PAD + 1] } else { out[PAD] });
    out[1] = 2.0 * c0 - c1;
    out[0] = 2.0 * out[1] - c0;
    let (e0, e1) = (out[PAD + n - 1], if n > 1 { out[PAD + n - 2] } else { out[PAD + n - 1] });
    out[PAD + n] = 2.0 * e0 - e1;
    out[PAD + n + 1] = 2.0 * out[PAD + n] - e0;
}

/// Cubic B-spline weights and their derivatives for fractional offset `t`, covering
/// lattice offsets -1, 0, +1, +2.
#[inline]
fn bspline_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    let w = [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ];
    let dw = [
        -0.5 * s * s,
        0.5 * (3.0 * t2 - 4.0 * t),
        0.5 * (-3.0 * t2 + 2.0 * t + 1.0),
        0.5 * t2,
    ];
    (w, dw)
}

impl ImageModel {
    pub fn fit(grid: &GridSpec, samples: &[f64]) -> Result<Self> {
        grid.check_cells("image samples", samples.len())?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image samples"));
        }
        let dim = grid.dim();
        let n = grid.n();
        let np = n + 2 * PAD;
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        // Separable solve: pad one axis at a time.
        let mut cur = samples.to_vec();
        let mut ext = [n, n, if dim == 3 { n } else { 1 }];
        let mut line = vec![0.0; n];
        let mut padded = vec![0.0; np];
        let mut scratch = Vec::new();
        for axis in 0..dim {
            let mut next_ext = ext;
            next_ext[axis] = np;
            let mut next = vec![0.0; next_ext.iter().product()];
            let stride_in: usize = ext[..axis].iter().product();
            let stride_out: usize = next_ext[..axis].iter().product();
            let mut others = ext;
            others[axis] = 1;
            for k in 0..others[2] {
                for j in 0..others[1] {
                    for i in 0..others[0] {
                        let start_in = i + ext[0] * (j + ext[1] * k);
                        let start_out = i + next_ext[0] * (j + next_ext[1] * k);
                        for (t, v) in line.iter_mut().enumerate() {
                            *v = cur[start_in + t * stride_in];
                        }
                        solve_line(&line, &mut padded, &mut scratch);
                        for (t, v) in padded.iter().enumerate() {
                            next[start_out + t * stride_out] = *v;
                        }
                    }
                }
            }
            cur = next;
            ext = next_ext;
        }
        Ok(Self {
            grid: *grid,
            coefficients: cur,
            intensity_range: (lo, hi),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn intensity_range(&self) -> (f64, f64) {
        self.intensity_range
    }

    /// Value and spatial gradient at a single point.
    pub fn eval_point(&self, p: &[f64; 3]) -> (f64, [f64; 3]) {
        let dim = self.grid.dim();
        let n = self.grid.n();
        let nf = n as f64;
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        let mut dw = [[0.0; 4]; 3];
        for a in 0..dim {
            let x = p[a];
            if !(0.0..=1.0).contains(&x) {
                return (0.0, [0.0; 3]);
            }
            let u = x * nf - 0.5;
            let j0 = u.floor();
            let t = u - j0;
            // Padded index of lattice offset -1.
            base[a] = (j0 as isize + PAD as isize - 1) as usize;
            let (wa, dwa) = bspline_weights(t);
            w[a] = wa;
            dw[a] = dwa.map(|v| v * nf);
        }
        if self.intensity_range.0 == self.intensity_range.1 {
            // The interpolant of a constant image is that constant.
            return (self.intensity_range.0, [0.0; 3]);
        }
        let np = n + 2 * PAD;
        let c = &self.coefficients;
        if dim == 2 {
            let mut val = 0.0;
            let (mut g0, mut g1) = (0.0, 0.0);
            for jj in 0..4 {
                let row = (base[1] + jj) * np + base[0];
                let (mut s, mut ds) = (0.0, 0.0);
                for ii in 0..4 {
                    let cv = c[row + ii];
                    s += w[0][ii] * cv;
                    ds += dw[0][ii] * cv;
                }
                val += w[1][jj] * s;
                g0 += w[1][jj] * ds;
                g1 += dw[1][jj] * s;
            }
            (val, [g0, g1, 0.0])
        } else {
            let mut val = 0.0;
            let mut g = [0.0; 3];
            for kk in 0..4 {
                let (mut v2, mut a0, mut a1) = (0.0, 0.0, 0.0);
                for jj in 0..4 {
                    let row = ((base[2] + kk) * np + base[1] + jj) * np + base[0];
                    let (mut s, mut ds) = (0.0, 0.0);
                    for ii in 0..4 {
                        let cv = c[row + ii];
                        s += w[0][ii] * cv;
                        ds += dw[0][ii] * cv;
                    }
                    v2 += w[1][jj] * s;
                    a0 += w[1][jj] * ds;
                    a1 += dw[1][jj] * s;
                }
                val += w[2][kk] * v2;
                g[0] += w[2][kk] * a0;
                g[1] += w[2][kk] * a1;
                g[2] += dw[2][kk] * v2;
            }
            (val, g)
        }
    }

    /// Intensities and gradient rows at a component-major point list
    /// (`dim * count` values). Gradients come back in the same layout.
    pub fn eval_with_gradient(&self, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.grid.dim();
        if !points.len().is_multiple_of(dim) {
            return Err(Error::SizeMismatch {
                what: "point list",
                expected: dim * (points.len() / dim),
                found: points.len(),
            });
        }
        let count = points.len() / dim;
        let mut vals = vec![0.0; count];
        let mut grads = vec![0.0; points.len()];
        for (i, v) in vals.iter_mut().enumerate() {
            let mut p = [0.0; 3];
            for a in 0..dim {
                p[a] = points[a * count + i];
            }
            let (val, g) = self.eval_point(&p);
            *v = val;
            for a in 0..dim {
                grads[a * count + i] = g[a];
            }
        }
        Ok((vals, grads))
    }

    /// Intensities only.
    pub fn eval(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_with_gradient(points)?.0)
    }
}

/// One level of 2^dim block averaging.
pub fn restrict_once(grid: &GridSpec, samples: &[f64]) -> Result<Vec<f64>> {
    grid.check_cells("image samples", samples.len())?;
    let n = grid.n();
    if !n.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!("cannot halve n = {n}")));
    }
    let coarse = grid.with_n(n / 2)?;
    let dim = grid.dim();
    let w = 1.0 / (1 << dim) as f64;
    let ext = coarse.cell_extent();
    let mut out = vec![0.0; coarse.cell_count()];
    for k in 0..ext[2] {
        for j in 0..ext[1] {
            for i in 0..ext[0] {
                let mut s = 0.0;
                for b in 0..(1 << dim) {
                    let (di, dj, dk) = (b & 1, b >> 1 & 1, b >> 2 & 1);
                    s += samples[grid.cell_index(2 * i + di, 2 * j + dj, 2 * k + dk)];
                }
                out[coarse.cell_index(i, j, k)] = s * w;
            }
        }
    }
    Ok(out)
}

/// Image pyramid by block averaging, finest first, `levels` entries in total.
pub fn restrict_image(grid: &GridSpec, samples: &[f64], levels: usize) -> Result<Vec<Vec<f64>>> {
    check_len("image samples", grid.cell_count(), samples.len())?;
    if levels == 0 {
        return Err(Error::InvalidParams("level count must be at least 1".into()));
    }
    let factor = 1usize << (levels - 1);
    if !grid.n().is_multiple_of(factor) || grid.n() / factor < 2 {
        return Err(Error::InvalidGrid(format!(
            "n = {} does not support {levels} levels",
            grid.n()
        )));
    }
    let mut out = vec![samples.to_vec()];
    let mut g = *grid;
    for _ in 1..levels {
        let next = restrict_once(&g, out.last().unwrap())?;
        g = g.with_n(g.n() / 2)?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    fn g(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, BoundaryCondition::Natural).unwrap()
    }

    fn center(grid: &GridSpec, cell: usize) -> [f64; 3] {
        let mi = grid.cell_multi_index(cell);
        let h = grid.h();
        let mut p = [0.0; 3];
        for a in 0..grid.dim() {
            p[a] = (mi[a] as f64 + 0.5) * h;
        }
        p
    }

    #[test]
    fn constant_image() {
        let grid = g(3, 5);
        let m = ImageModel::fit(&grid, &vec![7.0; grid.cell_count()]).unwrap();
        for p in [[0.5, 0.5, 0.5], [0.01, 0.99, 0.3], [0.0, 1.0, 0.5]] {
            let (v, gr) = m.eval_point(&p);
            assert!((v - 7.0).abs() < 1e-12);
            assert!(gr.iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn interpolates_samples() {
        for dim in [2, 3] {
            let grid = g(dim, 6);
            let samples: Vec<f64> = (0..grid.cell_count())
                .map(|i| ((i * 7919) % 97) as f64)
                .collect();
            let m = ImageModel::fit(&grid, &samples).unwrap();
            for (cell, s) in samples.iter().enumerate() {
                let (v, _) = m.eval_point(&center(&grid, cell));
                assert!((v - s).abs() < 1e-10, "dim {dim} cell {cell}: {v} vs {s}");
            }
        }
    }

    #[test]
    fn reproduces_ramp() {
        let grid = g(2, 8);
        let samples: Vec<f64> = (0..grid.cell_count())
            .map(|c| center(&grid, c)[0])
            .collect();
        let m = ImageModel::fit(&grid, &samples).unwrap();
        for &x in &[0.1, 0.33, 0.5, 0.77, 0.9] {
            let (v, gr) = m.eval_point(&[x, 0.4, 0.0]);
            assert!((v - x).abs() < 1e-8);
            assert!((gr[0] - 1.0).abs() < 1e-8 && gr[1].abs() < 1e-8);
        }
    }

    #[test]
    fn zero_outside() {
        let grid = g(3, 4);
        let m = ImageModel::fit(&grid, &vec![3.0; grid.cell_count()]).unwrap();
        let (v, gr) = m.eval_point(&[-0.5, -0.5, -0.5]);
        assert_eq!(v, 0.0);
        assert_eq!(gr, [0.0; 3]);
        assert_eq!(m.eval_point(&[0.5, 1.0 + 1e-12, 0.5]).0, 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let grid = g(2, 2);
        assert!(ImageModel::fit(&grid, &[0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(ImageModel::fit(&grid, &[0.0; 3]).is_err());
    }

    #[test]
    fn restriction() {
        let grid = g(2, 4);
        let checker: Vec<f64> = (0..16)
            .map(|c| ((c % 4 + c / 4) % 2) as f64)
            .collect();
        let pyr = restrict_image(&grid, &checker, 2).unwrap();
        assert_eq!(pyr[1], vec![0.5; 4]);
        assert!(restrict_image(&g(2, 6), &vec![0.0; 36], 3).is_err());
    }
}
