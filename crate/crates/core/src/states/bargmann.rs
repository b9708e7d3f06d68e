//! Fourier-Bargmann transform u#(rho) = (2 pi hbar)^{-d/2} int u(x) conj(phi_rho(x)) dx,
//! with phi_rho = T(rho) phi_0 the standard coherent state, and its inverse
//! u = (2 pi hbar)^{-d/2} int u#(rho) phi_rho d rho.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::states::grid::{Axis, GridWavefunction};

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceGrid {
    pub q_axes: Vec<Axis>,
    pub p_axes: Vec<Axis>,
}

impl PhaseSpaceGrid {
    pub fn d(&self) -> usize {
        self.q_axes.len()
    }

    pub fn len(&self) -> usize {
        self.q_axes.iter().chain(&self.p_axes).map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.q_axes.iter().chain(&self.p_axes).map(|a| a.spacing).product()
    }

    /// Point index -> (q, p), last p axis fastest.
    pub fn point(&self, mut idx: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.d();
        let mut q = vec![0.0; d];
        let mut p = vec![0.0; d];
        for i in (0..d).rev() {
            let a = &self.p_axes[i];
            p[i] = a.point(idx % a.count);
            idx /= a.count;
        }
        for i in (0..d).rev() {
            let a = &self.q_axes[i];
            q[i] = a.point(idx % a.count);
            idx /= a.count;
        }
        (q, p)
    }

    fn on_boundary(&self, mut idx: usize) -> bool {
        let mut edge = false;
        for a in self.p_axes.iter().rev().chain(self.q_axes.iter().rev()) {
            let i = idx % a.count;
            idx /= a.count;
            edge |= i == 0 || i + 1 == a.count;
        }
        edge
    }

    /// Square grid of `n` points per axis over center +/- half_width.
    pub fn around(q: &[f64], p: &[f64], half_width: f64, n: usize) -> Self {
        let ax = |c: f64| Axis::new(c - half_width, 2.0 * half_width / (n - 1) as f64, n);
        PhaseSpaceGrid { q_axes: q.iter().map(|&c| ax(c)).collect(), p_axes: p.iter().map(|&c| ax(c)).collect() }
    }
}

fn check_resolution(grid: &PhaseSpaceGrid, hbar: f64) -> Result<()> {
    let lim = 0.5 * hbar.sqrt() * (1.0 + 1e-12);
    if grid.q_axes.iter().chain(&grid.p_axes).any(|a| a.spacing > lim) {
        return Err(Error::GridTooSmall("phase-space spacing exceeds sqrt(hbar)/2".into()));
    }
    Ok(())
}

fn coherent_row(x: &[f64], q: f64, p: f64, hbar: f64) -> impl Iterator<Item = (usize, Complex64)> + '_ {
    let norm = (std::f64::consts::PI * hbar).powf(-0.25);
    let cut = (2.0 * hbar * 40.0).sqrt();
    x.iter().enumerate().filter(move |(_, &xi)| (xi - q).abs() < cut).map(move |(i, &xi)| {
        let g = norm * (-(xi - q) * (xi - q) / (2.0 * hbar)).exp();
        (i, Complex64::from_polar(g, (p * xi - 0.5 * q * p) / hbar))
    })
}

/// Samples of u# on the phase-space grid.
pub fn fourier_bargmann(u: &GridWavefunction, grid: &PhaseSpaceGrid) -> Result<Vec<Complex64>> {
    let d = u.dim();
    if grid.d() != d {
        return Err(Error::AxisMismatch);
    }
    check_resolution(grid, u.hbar)?;
    let hbar = u.hbar;
    let pref = (2.0 * std::f64::consts::PI * hbar).powf(-0.5 * d as f64) * u.cell_volume();
    let xs: Vec<Vec<f64>> = u.axes.iter().map(|a| a.points()).collect();
    let strides = u.strides();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let (q, p) = grid.point(idx);
        // separable coherent state: product of 1D rows
        let rows: Vec<Vec<(usize, Complex64)>> = (0..d).map(|i| coherent_row(&xs[i], q[i], p[i], hbar).collect()).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut stack = vec![(0usize, 0usize, Complex64::new(1.0, 0.0))];
        while let Some((axis, offset, w)) = stack.pop() {
            if axis == d {
                acc += u.values[offset] * w.conj();
                continue;
            }
            for &(i, c) in &rows[axis] {
                stack.push((axis + 1, offset + i * strides[axis], w * c));
            }
        }
        *slot = acc * pref;
    }
    let max = out.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let edge = (0..grid.len()).filter(|&i| grid.on_boundary(i)).fold(0.0f64, |a, i| a.max(out[i].norm()));
    if max > 0.0 && edge > 1e-6 * max {
        return Err(Error::GridTooSmall(format!("phase-space grid misses support (edge ratio {:e})", edge / max)));
    }
    Ok(out)
}

/// L^2(d rho) norm of sampled u#.
pub fn bargmann_norm(samples: &[Complex64], grid: &PhaseSpaceGrid) -> f64 {
    (samples.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt()
}

/// Quadrature of the resolution of the identity back onto `axes`.
pub fn reconstruct_from_bargmann(samples: &[Complex64], grid: &PhaseSpaceGrid, hbar: f64, axes: &[Axis]) -> Result<GridWavefunction> {
    let d = axes.len();
    if grid.d() != d || samples.len() != grid.len() {
        return Err(Error::AxisMismatch);
    }
    check_resolution(grid, hbar)?;
    let max = samples.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let edge = (0..grid.len()).filter(|&i| grid.on_boundary(i)).fold(0.0f64, |a, i| a.max(samples[i].norm()));
    if max > 0.0 && edge > 1e-6 * max {
        return Err(Error::GridTooSmall("phase-space grid misses support".into()));
    }
    let mut u = GridWavefunction::zeros(hbar, axes.to_vec());
    let pref = (2.0 * std::f64::consts::PI * hbar).powf(-0.5 * d as f64) * grid.cell_volume();
    let xs: Vec<Vec<f64>> = axes.iter().map(|a| a.points()).collect();
    let strides = u.strides();
    for (idx, s) in samples.iter().enumerate() {
        if s.norm() < 1e-14 * max {
            continue;
        }
        let (q, p) = grid.point(idx);
        let rows: Vec<Vec<(usize, Complex64)>> = (0..d).map(|i| coherent_row(&xs[i], q[i], p[i], hbar).collect()).collect();
        let mut stack = vec![(0usize, 0usize, *s * pref)];
        while let Some((axis, offset, w)) = stack.pop() {
            if axis == d {
                u.values[offset] += w;
                continue;
            }
            for &(i, c) in &rows[axis] {
                stack.push((axis + 1, offset + i * strides[axis], w * c));
            }
        }
    }
    Ok(u)
}
