//! Uniform-grid wavefunctions and spectral helpers.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub origin: f64,
    pub spacing: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(origin: f64, spacing: f64, count: usize) -> Self {
        Axis { origin, spacing, count }
    }

    /// `count` points centred on `center` with the given spacing.
    pub fn centered(center: f64, spacing: f64, count: usize) -> Self {
        Axis { origin: center - spacing * (count / 2) as f64, spacing, count }
    }

    /// `count` points covering [lo, hi).
    pub fn span(lo: f64, hi: f64, count: usize) -> Self {
        Axis { origin: lo, spacing: (hi - lo) / count as f64, count }
    }

    pub fn point(&self, i: usize) -> f64 {
        self.origin + self.spacing * i as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }

    pub fn length(&self) -> f64 {
        self.spacing * self.count as f64
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.count as i64;
        let dk = 2.0 * std::f64::consts::PI / self.length();
        (0..n).map(|j| if j < (n + 1) / 2 { j as f64 * dk } else { (j - n) as f64 * dk }).collect()
    }

    pub fn matches(&self, other: &Axis) -> bool {
        self.count == other.count
            && (self.origin - other.origin).abs() <= 1e-12 * (1.0 + self.origin.abs())
            && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridWavefunction {
    pub hbar: f64,
    pub axes: Vec<Axis>,
    /// Row-major samples, last axis fastest.
    pub values: Vec<Complex64>,
}

impl GridWavefunction {
    pub fn zeros(hbar: f64, axes: Vec<Axis>) -> Self {
        let n = axes.iter().map(|a| a.count).product();
        GridWavefunction { hbar, axes, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_fn(hbar: f64, axes: Vec<Axis>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut u = Self::zeros(hbar, axes);
        let mut x = vec![0.0; u.dim()];
        for idx in 0..u.len() {
            u.point_into(idx, &mut x);
            u.values[idx] = f(&x);
        }
        u
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for i in (0..self.dim().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].count;
        }
        s
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            out[i] = idx % self.axes[i].count;
            idx /= self.axes[i].count;
        }
        out
    }

    pub fn point_into(&self, mut idx: usize, x: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let c = self.axes[i].count;
            x[i] = self.axes[i].point(idx % c);
            idx /= c;
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing).product()
    }

    pub fn same_axes(&self, other: &GridWavefunction) -> bool {
        self.axes.len() == other.axes.len() && self.axes.iter().zip(&other.axes).all(|(a, b)| a.matches(b))
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.norm()))
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn scaled(mut self, s: Complex64) -> Self {
        self.scale(s);
        self
    }

    pub fn add_assign(&mut self, other: &GridWavefunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    /// max |u| over the outermost samples of every axis divided by max |u|.
    pub fn boundary_ratio(&self) -> f64 {
        let max = self.max_abs();
        if max == 0.0 {
            return 0.0;
        }
        let counts: Vec<usize> = self.axes.iter().map(|a| a.count).collect();
        let mut m = vec![0usize; counts.len()];
        let mut b: f64 = 0.0;
        for v in &self.values {
            if m.iter().zip(&counts).any(|(&i, &n)| i == 0 || i + 1 == n) {
                b = b.max(v.norm());
            }
            for k in (0..m.len()).rev() {
                m[k] += 1;
                if m[k] < counts[k] {
                    break;
                }
                m[k] = 0;
            }
        }
        b / max
    }

    pub fn check_boundary(&self, tol: f64) -> Result<()> {
        let r = self.boundary_ratio();
        if r > tol {
            Err(Error::GridTooSmall(format!("boundary/interior magnitude ratio {r:e} exceeds {tol:e}")))
        } else {
            Ok(())
        }
    }
}

/// <a, b> = int conj(a) b by the trapezoid (here: rectangle) rule.
pub fn inner_product(a: &GridWavefunction, b: &GridWavefunction) -> Result<Complex64> {
    if !a.same_axes(b) || (a.hbar - b.hbar).abs() > 1e-15 * a.hbar {
        return Err(Error::AxisMismatch);
    }
    let s: Complex64 = a.values.iter().zip(&b.values).map(|(x, y)| x.conj() * y).sum();
    Ok(s * a.cell_volume())
}

/// Pre-planned FFTs for every axis of a grid.
pub struct Spectral {
    plans: Vec<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    counts: Vec<usize>,
}

impl Spectral {
    pub fn new(axes: &[Axis]) -> Self {
        let mut planner = FftPlanner::new();
        let mut cache: HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)> = HashMap::new();
        let plans = axes
            .iter()
            .map(|a| {
                cache
                    .entry(a.count)
                    .or_insert_with(|| (planner.plan_fft_forward(a.count), planner.plan_fft_inverse(a.count)))
                    .clone()
            })
            .collect();
        Spectral { plans, counts: axes.iter().map(|a| a.count).collect() }
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, forward: bool) {
        let n = self.counts[axis];
        let stride: usize = self.counts[axis + 1..].iter().product();
        let outer: usize = self.counts[..axis].iter().product();
        let plan = if forward { &self.plans[axis].0 } else { &self.plans[axis].1 };
        if stride == 1 {
            plan.process(data);
            if !forward {
                let s = 1.0 / n as f64;
                for v in data.iter_mut() {
                    *v *= s;
                }
            }
            return;
        }
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let s = if forward { 1.0 } else { 1.0 / n as f64 };
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for k in 0..n {
                    line[k] = data[base + k * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for k in 0..n {
                    data[base + k * stride] = line[k] * s;
                }
            }
        }
    }

    pub fn forward_axis(&self, data: &mut [Complex64], axis: usize) {
        self.transform_axis(data, axis, true);
    }

    pub fn inverse_axis(&self, data: &mut [Complex64], axis: usize) {
        self.transform_axis(data, axis, false);
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        for a in 0..self.counts.len() {
            self.forward_axis(data, a);
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        for a in 0..self.counts.len() {
            self.inverse_axis(data, a);
        }
    }
}

/// u(x - s e_axis) by exact Fourier interpolation (periodic).
pub fn spectral_shift(u: &GridWavefunction, axis: usize, s: f64) -> GridWavefunction {
    let spec = Spectral::new(&u.axes);
    let mut out = u.clone();
    spec.forward_axis(&mut out.values, axis);
    let k = u.axes[axis].wavenumbers();
    let stride: usize = u.axes[axis + 1..].iter().map(|a| a.count).product();
    let n = u.axes[axis].count;
    for (idx, v) in out.values.iter_mut().enumerate() {
        let j = (idx / stride) % n;
        *v *= Complex64::from_polar(1.0, -k[j] * s);
    }
    spec.inverse_axis(&mut out.values, axis);
    out
}

/// T(q, p) u(x) = exp(-i q.p / (2 hbar)) exp(i p.x / hbar) u(x - q).
/// Lattice-aligned translations shift indices; others use spectral shifts.
pub fn weyl_heisenberg(q: &[f64], p: &[f64], u: &GridWavefunction) -> Result<GridWavefunction> {
    let d = u.dim();
    if q.len() != d || p.len() != d {
        return Err(Error::invalid("translation dimension differs from the grid"));
    }
    let hbar = u.hbar;
    let mut out = u.clone();
    for axis in 0..d {
        if q[axis] == 0.0 {
            continue;
        }
        let steps = q[axis] / u.axes[axis].spacing;
        if (steps - steps.round()).abs() < 1e-9 {
            let sh = steps.round() as i64;
            let strides = out.strides();
            let n = u.axes[axis].count as i64;
            let mut shifted = vec![Complex64::new(0.0, 0.0); out.len()];
            let mut lost: f64 = 0.0;
            for idx in 0..out.len() {
                let j = ((idx / strides[axis]) % n as usize) as i64;
                let target = j + sh;
                if target >= 0 && target < n {
                    let t_idx = (idx as i64 + sh * strides[axis] as i64) as usize;
                    shifted[t_idx] = out.values[idx];
                } else {
                    lost = lost.max(out.values[idx].norm());
                }
            }
            if lost > 1e-12 * out.max_abs().max(1e-300) {
                return Err(Error::GridTooSmall(format!("translation pushes support off the grid (lost {lost:e})")));
            }
            out.values = shifted;
        } else {
            out = spectral_shift(&out, axis, q[axis]);
        }
    }
    let qp: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
    let mut x = vec![0.0; d];
    for idx in 0..out.len() {
        out.point_into(idx, &mut x);
        let px: f64 = p.iter().zip(&x).map(|(a, b)| a * b).sum();
        out.values[idx] *= Complex64::from_polar(1.0, (px - 0.5 * qp) / hbar);
    }
    Ok(out)
}

/// Grid per the default rule: extent 12 max(sqrt(hbar), spread) around
/// `center`, 2^k samples with spacing below sqrt(hbar)/6 and fine enough to
/// resolve momenta up to `p_max`.
pub fn default_axes(hbar: f64, center: &[f64], spread: &[f64], p_max: &[f64]) -> Vec<Axis> {
    center
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let extent = 12.0 * hbar.sqrt().max(spread[i]);
            let dx_max = (hbar.sqrt() / 6.0).min(std::f64::consts::PI * hbar / p_max[i].max(1e-12));
            let mut n = 16usize;
            while extent / n as f64 >= dx_max {
                n *= 2;
            }
            Axis::centered(c, extent / n as f64, n)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(hbar: f64, axes: Vec<Axis>) -> GridWavefunction {
        GridWavefunction::from_fn(hbar, axes, |x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            Complex64::new((std::f64::consts::PI * hbar).powf(-0.25 * x.len() as f64) * (-r2 / (2.0 * hbar)).exp(), 0.0)
        })
    }

    #[test]
    fn translation_overlap_and_unitarity() {
        let hbar = 0.01;
        let ax = Axis::centered(0.0, 0.005, 512);
        let u = gaussian(hbar, vec![ax]);
        assert!((u.norm() - 1.0).abs() < 1e-10);
        let q = 0.05;
        let v = weyl_heisenberg(&[q], &[0.0], &u).unwrap();
        assert!((v.norm() - u.norm()).abs() < 1e-10);
        let ov = inner_product(&u, &v).unwrap().norm();
        assert!((ov - (-q * q / (4.0 * hbar)).exp()).abs() < 1e-6);
        let same = weyl_heisenberg(&[0.0], &[0.0], &u).unwrap();
        assert_eq!(same, u);
    }

    #[test]
    fn group_law_of_translations() {
        let hbar = 0.02;
        let ax = Axis::centered(0.0, 0.01, 256);
        let u = gaussian(hbar, vec![ax]);
        let (q1, p1, q2, p2) = (0.13, 0.2, -0.07, 0.35);
        let lhs = weyl_heisenberg(&[q1], &[p1], &weyl_heisenberg(&[q2], &[p2], &u).unwrap()).unwrap();
        let rhs = weyl_heisenberg(&[q1 + q2], &[p1 + p2], &u).unwrap();
        let sigma = p1 * q2 - q1 * p2;
        let ph = Complex64::from_polar(1.0, sigma / (2.0 * hbar));
        let err = lhs.values.iter().zip(&rhs.values).map(|(a, b)| (a - ph * b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn fft_roundtrip_2d() {
        let axes = vec![Axis::centered(0.0, 0.1, 8), Axis::centered(0.0, 0.2, 16)];
        let u = gaussian(0.5, axes.clone());
        let spec = Spectral::new(&axes);
        let mut w = u.values.clone();
        spec.forward(&mut w);
        spec.inverse(&mut w);
        let err = w.iter().zip(&u.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn mismatch_and_boundary() {
        let a = GridWavefunction::zeros(0.1, vec![Axis::centered(0.0, 0.1, 8)]);
        let b = GridWavefunction::zeros(0.1, vec![Axis::centered(0.0, 0.1, 16)]);
        assert!(matches!(inner_product(&a, &b), Err(Error::AxisMismatch)));
        let wide = gaussian(1.0, vec![Axis::centered(0.0, 0.1, 16)]);
        assert!(wide.check_boundary(1e-12).is_err());
    }
}
