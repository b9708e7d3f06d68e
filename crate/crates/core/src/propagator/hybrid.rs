//! Hybrid states: a WKB amplitude in the transverse variable tensored with a
//! y-dependent squeezed Gaussian in the central variables.
//!
//! In the adapted chart of the graph (central x, transverse y) the state is
//!   T_I sum_g hbar^{|g|/2} u_g(y) (pi hbar)^{-d_par/4} |det Im G(y)|^{1/4}
//!       (Im G(y)^{1/2} x / sqrt hbar)^g e^{i x.G(y) x / (2 hbar)},
//!   T_I u(x, y) = e^{i (phi(y) + xi(y).(x - x(y)/2)) / hbar} u(x - x(y), y),
//! and the physical state is T(base) Mu(chart^{-1}) applied to that.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::dynamics::flow::flow_map;
use crate::dynamics::graph::{back_map_determinant, evolve_manifold_graph, fd_derivative, ManifoldGraph};
use crate::dynamics::rates::DynamicalRates;
use crate::dynamics::splitting::{frame_from_splitting, Splitting};
use crate::error::{Error, Result};
use crate::linalg::{c_inverse, imag_part, max_abs, min_eigenvalue_sym, op_norm_c, spd_inv_sqrt, spd_sqrt, to_complex, CMat, RMat, RVec, SymplecticMatrix};
use crate::metaplectic::grid_ops::factorize;
use crate::models::ModelHamiltonian;
use crate::oracle::dilation::lagrange;
use crate::poly::{total_degree, MultiIndex};
use crate::propagator::expansion::CENTRAL_CAUSTIC_TOL;
use crate::spline::{ComplexSpline, CubicSpline};
use crate::states::grid::{Axis, GridWavefunction};
use crate::states::wavepacket::GaussianWavepacket;

/// Smallest admissible eigenvalue of Im G_par.
pub const SIEGEL_FLOOR: f64 = 1e-12;
/// |u_0| at the graph ends relative to its maximum above which evaluation
/// reports that the graph domain does not hold the amplitude.
pub const DOMAIN_EDGE_TOL: f64 = 1e-6;
/// Boundary tolerance of physical evaluation; the row-wise metaplectic
/// transform leaves a noise floor near 1e-7 of the peak.
pub const EVAL_BOUNDARY_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct HybridOptions {
    /// Half-width of the graph domain in chart y. Defaults to ten amplitude
    /// widths; runs that expand the amplitude need room for the final width.
    pub half_width: Option<f64>,
    pub samples: usize,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions { half_width: None, samples: 257 }
    }
}

#[derive(Clone, Debug)]
pub struct HybridState {
    pub hbar: f64,
    pub graph: ManifoldGraph,
    /// Central Siegel matrix at every graph sample.
    pub gamma_par: Vec<CMat>,
    pub amplitudes: BTreeMap<MultiIndex, Vec<Complex64>>,
    pub delta_est: f64,
    pub nu_est: f64,
    /// Stages that produced the state, oldest first.
    pub provenance: Vec<String>,
    /// sup |u_0| when the state was created.
    pub initial_sup: f64,
    /// log of the unstable Jacobian accumulated at the base point.
    pub log_unstable_jacobian: f64,
}

fn zero_index(dp: usize) -> MultiIndex {
    vec![0; dp]
}

impl HybridState {
    pub fn d_par(&self) -> usize {
        self.graph.d_par()
    }

    pub fn ground(&self) -> &[Complex64] {
        &self.amplitudes[&zero_index(self.d_par())]
    }

    pub fn time(&self) -> f64 {
        self.graph.time
    }

    pub fn amplitude_sup(&self) -> f64 {
        self.ground().iter().fold(0.0, |a, v| a.max(v.norm()))
    }

    /// Length of {y : |u_0(y)| >= level sup |u_0|}, ends located by linear
    /// interpolation between samples.
    pub fn support_diameter(&self, level: f64) -> f64 {
        let u: Vec<f64> = self.ground().iter().map(|v| v.norm()).collect();
        let cut = level * u.iter().cloned().fold(0.0, f64::max);
        let g = &self.graph;
        let first = u.iter().position(|&v| v >= cut).unwrap_or(0);
        let last = u.iter().rposition(|&v| v >= cut).unwrap_or(0);
        let cross = |i: usize, j: usize| {
            // i outside the level set, j inside
            let t = (cut - u[i]) / (u[j] - u[i]);
            g.y(i) + t * (g.y(j) - g.y(i))
        };
        let lo = if first > 0 { cross(first - 1, first) } else { g.y(0) };
        let hi = if last + 1 < u.len() { cross(last + 1, last) } else { g.y_max() };
        hi - lo
    }

    /// max_y of ||d_y G_par|| and of ||Im G^{-1/2} d_y G Im G^{-1/2}||.
    pub fn gamma_derivative(&self) -> Result<(f64, f64)> {
        let dp = self.d_par();
        let g = &self.graph;
        let mut d = vec![CMat::zeros(dp, dp); g.n];
        for i in 0..dp {
            for j in 0..dp {
                let re: Vec<f64> = self.gamma_par.iter().map(|m| m[(i, j)].re).collect();
                let im: Vec<f64> = self.gamma_par.iter().map(|m| m[(i, j)].im).collect();
                let (dre, dim) = (fd_derivative(&re, g.dy), fd_derivative(&im, g.dy));
                for k in 0..g.n {
                    d[k][(i, j)] = Complex64::new(dre[k], dim[k]);
                }
            }
        }
        let mut raw: f64 = 0.0;
        let mut scaled: f64 = 0.0;
        for (k, dk) in d.iter().enumerate() {
            raw = raw.max(op_norm_c(dk));
            let w = to_complex(&spd_inv_sqrt(&imag_part(&self.gamma_par[k]))?);
            scaled = scaled.max(op_norm_c(&(&w * dk * &w)));
        }
        Ok((raw, scaled))
    }

    /// Largest deviation of G_par(y) from its sample mean.
    pub fn gamma_spread(&self) -> f64 {
        let n = self.gamma_par.len() as f64;
        let mean = self.gamma_par.iter().fold(CMat::zeros(self.d_par(), self.d_par()), |a, m| a + m) / Complex64::new(n, 0.0);
        self.gamma_par.iter().map(|m| (m - &mean).iter().fold(0.0f64, |a, z| a.max(z.norm()))).fold(0.0, f64::max)
    }

    /// Re-estimate delta (amplitude width hbar^delta) and nu (growth of the
    /// normalized derivative of G_par).
    pub fn update_estimates(&mut self) -> Result<()> {
        let l = self.hbar.ln();
        let w = 0.5 * self.support_diameter((-0.5f64).exp());
        self.delta_est = if w > 0.0 { w.ln() / l } else { 0.5 };
        let (_, scaled) = self.gamma_derivative()?;
        let lh = l.abs();
        self.nu_est = if scaled > lh { (scaled / lh).ln() / (2.0 * lh) } else { 0.0 };
        Ok(())
    }

    fn check_siegel(&self) -> Result<()> {
        for (k, g) in self.gamma_par.iter().enumerate() {
            let m = min_eigenvalue_sym(&imag_part(g));
            if !(m >= SIEGEL_FLOOR) {
                return Err(Error::Siegel(format!("Im G_par has eigenvalue {m:e} at sample {k}")));
            }
        }
        Ok(())
    }
}

/// Rewrites a Gaussian wavepacket as a hybrid state over a straight graph.
///
/// In the chart the complex quadratic form splits exactly: the real slope
/// a = -Im(G_xx)^{-1} Im(G_xy) makes the x-y coupling real, so it becomes the
/// graph momentum xi(y), and the remaining y-Gaussian is the amplitude u_0.
pub fn hybrid_from_wavepacket(h: &ModelHamiltonian, s: &GaussianWavepacket, split: &Splitting, opts: &HybridOptions) -> Result<HybridState> {
    if s.poly.degree() != 0 {
        return Err(Error::invalid("hybrid conversion takes a Gaussian (degree-0) wavepacket"));
    }
    if h.d_perp != 1 || s.d() != h.d {
        return Err(Error::invalid("hybrid states need one transverse dimension matching the model"));
    }
    if opts.samples < 16 {
        return Err(Error::invalid("at least 16 graph samples are needed"));
    }
    let d = h.d;
    let dp = h.d_par;
    let hbar = s.hbar;
    let frame = frame_from_splitting(h, split)?;
    let b = split.base.to_z();
    let z = s.center.to_z();
    let w = frame.matrix() * RVec::from_iterator(2 * d, z.iter().zip(&b).map(|(a, c)| a - c));
    let chart = s.frame.apply(&frame);
    let gam = chart.gamma_matrix()?;
    let gam = (&gam + gam.transpose()) * Complex64::new(0.5, 0.0);

    let gxx = gam.view((0, 0), (dp, dp)).into_owned();
    let gxy = gam.view((0, dp), (dp, 1)).into_owned();
    let gyy = gam[(dp, dp)];
    let im_xx = imag_part(&gxx);
    let a: RVec = if dp == 0 {
        RVec::zeros(0)
    } else {
        let inv = im_xx.clone().try_inverse().ok_or_else(|| Error::Siegel("singular central block".into()))?;
        -(inv * imag_part(&gxy).column(0))
    };
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let beta_c = &gxx * &ac + &gxy;
    let beta: RVec = beta_c.column(0).map(|z| z.re);
    let c = (ac.transpose() * &gxx * &ac)[(0, 0)] + Complex64::new(2.0, 0.0) * (ac.transpose() * &gxy)[(0, 0)] + gyy;
    if !(c.im > 0.0) {
        return Err(Error::Siegel(format!("transverse Schur complement has Im = {:e}", c.im)));
    }
    let width = (hbar / c.im).sqrt();
    let half = opts.half_width.unwrap_or(10.0 * width);
    let n = opts.samples;
    let (xc, yc, xic, etac) = (w.rows(0, dp).into_owned(), w[dp], w.rows(d, dp).into_owned(), w[d + dp]);
    let y_min = yc - half;
    let dy = 2.0 * half / (n - 1) as f64;

    let det_c = chart.gamma()?.im().determinant();
    let det_xx = if dp == 0 { 1.0 } else { im_xx.determinant() };
    let amp0 = Complex64::from_polar((std::f64::consts::PI * hbar).powf(-0.25) * (det_c / det_xx).powf(0.25), s.phase);
    let eta_slope = c.re - a.dot(&beta);
    let wq_wp = xc.dot(&xic) + yc * etac;

    let mut x_bar = Vec::with_capacity(n);
    let mut xi_bar = Vec::with_capacity(n);
    let mut eta_bar = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut u0 = Vec::with_capacity(n);
    for k in 0..n {
        let y = y_min + k as f64 * dy;
        let t = y - yc;
        let xb = &xc + &a * t;
        let xib = &xic + &beta * t;
        phi.push(etac * y - 0.5 * wq_wp - xb.dot(&beta) * t + 0.5 * xib.dot(&xb) + 0.5 * c.re * t * t);
        eta_bar.push(etac + eta_slope * t);
        u0.push(amp0 * (-0.5 * c.im * t * t / hbar).exp());
        x_bar.push(xb.iter().cloned().collect());
        xi_bar.push(xib.iter().cloned().collect());
    }
    let mut graph = ManifoldGraph::from_samples(split.base.clone(), frame, y_min, dy, x_bar, xi_bar, eta_bar, phi)?;
    let off = gxy.iter().fold(0.0, |m: f64, z| m.max(z.norm()));
    if off > 1e-6 {
        graph.warnings.push(format!("off-block coupling {off:.3e} absorbed into the graph slope"));
    }
    let initial_sup = u0.iter().fold(0.0, |m: f64, v| m.max(v.norm()));
    let mut amplitudes = BTreeMap::new();
    amplitudes.insert(zero_index(dp), u0);
    let mut hs = HybridState {
        hbar,
        graph,
        gamma_par: vec![gxx; n],
        amplitudes,
        delta_est: 0.5,
        nu_est: 0.0,
        provenance: vec![format!("hybrid_from_wavepacket t={}", 0.0)],
        initial_sup,
        log_unstable_jacobian: 0.0,
    };
    hs.check_siegel()?;
    hs.update_estimates()?;
    Ok(hs)
}

/// Unwrap a sequence of angles so neighbours differ by less than pi.
fn unwrap(v: &mut [f64]) {
    for k in 1..v.len() {
        let mut d = v[k] - v[k - 1];
        while d > std::f64::consts::PI {
            v[k] -= 2.0 * std::f64::consts::PI;
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            v[k] += 2.0 * std::f64::consts::PI;
            d += 2.0 * std::f64::consts::PI;
        }
    }
}

/// One leading-order step of length t0: evolve the graph, transport the
/// amplitudes as half-densities along the y-map and act on G_par with the
/// central part of the linearized flow restricted to the graph.
pub fn propagate_hybrid_leading(h: &ModelHamiltonian, hs: &HybridState, t0: f64) -> Result<HybridState> {
    let g0 = &hs.graph;
    let g1 = evolve_manifold_graph(h, g0, t0)?;
    let dp = hs.d_par();
    let d = dp + 1;
    let n = g0.n;
    let f_new = g1.frame.matrix();
    let g_old = g0.frame.inverse();
    let col = |f: &dyn Fn(usize) -> f64| fd_derivative(&(0..n).map(f).collect::<Vec<_>>(), g0.dy);
    let dx: Vec<Vec<f64>> = (0..dp).map(|i| col(&|k| g0.x_bar[k][i])).collect();
    let dxi: Vec<Vec<f64>> = (0..dp).map(|i| col(&|k| g0.xi_bar[k][i])).collect();
    let deta = fd_derivative(&g0.eta_bar, g0.dy);

    let mut gam_new = Vec::with_capacity(n);
    let mut args = Vec::with_capacity(n);
    for k in 0..n {
        let (_, kap, _) = flow_map(h, &g0.global_point(k), t0)?;
        let kk = f_new * kap.matrix() * g_old.matrix();
        let mut v2 = RVec::zeros(2 * d);
        for i in 0..dp {
            v2[i] = dx[i][k];
            v2[d + i] = dxi[i][k];
        }
        v2[dp] = 1.0;
        v2[d + dp] = deta[k];
        let t = &kk * v2;
        if !(t[dp] > 0.0) {
            return Err(Error::Projectability(format!("graph tangent folds at sample {k}")));
        }
        // isotropic completion of the central Lagrangian directions
        let gam = &hs.gamma_par[k];
        let mut v1 = CMat::zeros(2 * d, dp);
        for j in 0..dp {
            v1[(j, j)] = Complex64::new(1.0, 0.0);
            let mut eta = Complex64::new(dxi[j][k], 0.0);
            for i in 0..dp {
                v1[(d + i, j)] = gam[(i, j)];
                eta -= gam[(i, j)] * dx[i][k];
            }
            v1[(d + dp, j)] = eta;
        }
        let mut kv = to_complex(&kk) * v1;
        for j in 0..dp {
            let c = kv[(dp, j)] / t[dp];
            for r in 0..2 * d {
                kv[(r, j)] -= c * t[r];
            }
        }
        let wx = kv.view((0, 0), (dp, dp)).into_owned();
        let wxi = kv.view((d, 0), (dp, dp)).into_owned();
        let det = wx.determinant();
        if det.norm() < CENTRAL_CAUSTIC_TOL {
            return Err(Error::Caustic(det.norm()));
        }
        let gn = &wxi * c_inverse(&wx)?;
        gam_new.push((&gn + gn.transpose()) * Complex64::new(0.5, 0.0));
        args.push(det.arg());
    }
    unwrap(&mut args);

    let pre = g1.preimage.as_ref().expect("evolved graph has preimages");
    let jac = back_map_determinant(g0, &g1)?;
    let spline = |v: Vec<f64>| CubicSpline::new(g0.y_min, g0.dy, v);
    let arg_s = spline(args);
    let mut gamma_par = vec![CMat::zeros(dp, dp); n];
    for i in 0..dp {
        for j in 0..dp {
            let cs = ComplexSpline::new(g0.y_min, g0.dy, &gam_new.iter().map(|m| m[(i, j)]).collect::<Vec<_>>());
            for (k, &y) in pre.iter().enumerate() {
                gamma_par[k][(i, j)] = cs.eval(y);
            }
        }
    }
    let mut amplitudes = BTreeMap::new();
    for (key, u) in &hs.amplitudes {
        let cs = ComplexSpline::new(g0.y_min, g0.dy, u);
        let v: Vec<Complex64> = pre
            .iter()
            .zip(&jac)
            .map(|(&y, &j)| cs.eval(y) * j.sqrt() * Complex64::from_polar(1.0, -0.5 * arg_s.eval(y)))
            .collect();
        amplitudes.insert(key.clone(), v);
    }
    let mut out = HybridState {
        hbar: hs.hbar,
        log_unstable_jacobian: hs.log_unstable_jacobian + g1.expansion.ln(),
        graph: g1,
        gamma_par,
        amplitudes,
        delta_est: hs.delta_est,
        nu_est: hs.nu_est,
        provenance: hs.provenance.clone(),
        initial_sup: hs.initial_sup,
    };
    out.provenance.push(format!("propagate_hybrid_leading t0={t0}"));
    out.check_siegel()?;
    out.update_estimates()?;
    Ok(out)
}

/// Central data of one y row.
struct Row {
    x_bar: Vec<f64>,
    xi_bar: Vec<f64>,
    phi: f64,
    gamma: CMat,
    im_sqrt: RMat,
    norm: f64,
    amps: Vec<(MultiIndex, Complex64)>,
}

struct Evaluator<'a> {
    hs: &'a HybridState,
    x: Vec<CubicSpline>,
    xi: Vec<CubicSpline>,
    phi: CubicSpline,
    gamma: Vec<Vec<ComplexSpline>>,
    amps: Vec<(MultiIndex, ComplexSpline)>,
}

impl<'a> Evaluator<'a> {
    fn new(hs: &'a HybridState) -> Self {
        let g = &hs.graph;
        let dp = hs.d_par();
        let sp = |v: Vec<f64>| CubicSpline::new(g.y_min, g.dy, v);
        Evaluator {
            hs,
            x: (0..dp).map(|i| sp(g.x_bar.iter().map(|v| v[i]).collect())).collect(),
            xi: (0..dp).map(|i| sp(g.xi_bar.iter().map(|v| v[i]).collect())).collect(),
            phi: sp(g.phi.clone()),
            gamma: (0..dp)
                .map(|i| (0..dp).map(|j| ComplexSpline::new(g.y_min, g.dy, &hs.gamma_par.iter().map(|m| m[(i, j)]).collect::<Vec<_>>())).collect())
                .collect(),
            amps: hs.amplitudes.iter().map(|(k, u)| (k.clone(), ComplexSpline::new(g.y_min, g.dy, u))).collect(),
        }
    }

    fn row(&self, y: f64) -> Result<Option<Row>> {
        let g = &self.hs.graph;
        let eps = 1e-12 * g.dy;
        if y < g.y_min - eps || y > g.y_max() + eps {
            return Ok(None);
        }
        let dp = self.hs.d_par();
        let gamma = CMat::from_fn(dp, dp, |i, j| self.gamma[i][j].eval(y));
        let gamma = (&gamma + gamma.transpose()) * Complex64::new(0.5, 0.0);
        let im = imag_part(&gamma);
        let det = if dp == 0 { 1.0 } else { im.determinant() };
        Ok(Some(Row {
            x_bar: self.x.iter().map(|s| s.eval(y)).collect(),
            xi_bar: self.xi.iter().map(|s| s.eval(y)).collect(),
            phi: self.phi.eval(y),
            im_sqrt: if dp == 0 { RMat::zeros(0, 0) } else { spd_sqrt(&im)? },
            gamma,
            norm: (std::f64::consts::PI * self.hs.hbar).powf(-0.25 * dp as f64) * det.abs().powf(0.25),
            amps: self.amps.iter().map(|(k, s)| (k.clone(), s.eval(y))).collect(),
        }))
    }

    fn value(&self, row: &Row, x: &[f64]) -> Complex64 {
        let hbar = self.hs.hbar;
        let dp = x.len();
        let xs: Vec<f64> = (0..dp).map(|i| x[i] - row.x_bar[i]).collect();
        let mut quad = Complex64::new(0.0, 0.0);
        for i in 0..dp {
            for j in 0..dp {
                quad += row.gamma[(i, j)] * xs[i] * xs[j];
            }
        }
        let lin: f64 = (0..dp).map(|i| row.xi_bar[i] * (x[i] - 0.5 * row.x_bar[i])).sum();
        let sh = hbar.sqrt();
        let scaled: Vec<f64> = (0..dp).map(|i| (0..dp).map(|j| row.im_sqrt[(i, j)] * xs[j]).sum::<f64>() / sh).collect();
        let mut poly = Complex64::new(0.0, 0.0);
        for (k, u) in &row.amps {
            let mono: f64 = k.iter().zip(&scaled).map(|(&e, &s)| s.powi(e as i32)).product();
            poly += u * mono * hbar.powf(0.5 * total_degree(k) as f64);
        }
        let expo = Complex64::new(0.0, (row.phi + lin) / hbar) + Complex64::new(0.0, 0.5 / hbar) * quad;
        poly * row.norm * expo.exp()
    }
}

fn check_domain(hs: &HybridState) -> Result<()> {
    let u = hs.ground();
    let sup = hs.amplitude_sup();
    let edge = u[0].norm().max(u[u.len() - 1].norm());
    if edge > DOMAIN_EDGE_TOL * sup {
        return Err(Error::GridTooSmall(format!("amplitude at the graph ends is {:.2e} of its maximum", edge / sup)));
    }
    Ok(())
}

/// Samples of the state in chart coordinates (axes x_1.., y), zero outside
/// the graph domain.
pub fn eval_hybrid_chart(hs: &HybridState, axes: &[Axis]) -> Result<GridWavefunction> {
    let dp = hs.d_par();
    if axes.len() != dp + 1 {
        return Err(Error::AxisMismatch);
    }
    let ev = Evaluator::new(hs);
    let mut out = GridWavefunction::zeros(hs.hbar, axes.to_vec());
    let ya = &axes[dp];
    let rows: Vec<Option<Row>> = (0..ya.count).map(|j| ev.row(ya.point(j))).collect::<Result<_>>()?;
    let mut x = vec![0.0; dp + 1];
    for i in 0..out.len() {
        out.point_into(i, &mut x);
        let j = i % ya.count;
        if let Some(r) = &rows[j] {
            out.values[i] = ev.value(r, &x[..dp]);
        }
    }
    Ok(out)
}

/// Samples of the physical state on `axes`.
///
/// The chart map of the catalog graphs keeps (x, xi) fixed and acts on
/// (y, eta) alone, so the metaplectic part is applied row by row in y on a
/// padded work axis with the spacing of the target y axis.
pub fn eval_hybrid(hs: &HybridState, axes: &[Axis]) -> Result<GridWavefunction> {
    let dp = hs.d_par();
    let d = dp + 1;
    if axes.len() != d {
        return Err(Error::AxisMismatch);
    }
    check_domain(hs)?;
    let g = &hs.graph;
    let ginv = g.frame.inverse();
    let m = ginv.matrix();
    let yi = [dp, d + dp];
    for r in 0..2 * d {
        for c in 0..2 * d {
            if yi.contains(&r) && yi.contains(&c) {
                continue;
            }
            let v = if r == c { 1.0 } else { 0.0 };
            if (m[(r, c)] - v).abs() > 1e-10 {
                return Err(Error::invalid("chart map mixes central and transverse coordinates"));
            }
        }
    }
    let ky = SymplecticMatrix::new(RMat::from_row_slice(2, 2, &[m[(dp, dp)], m[(dp, d + dp)], m[(d + dp, dp)], m[(d + dp, d + dp)]]))?;
    let identity = max_abs(&(ky.matrix() - RMat::identity(2, 2))) < 1e-14;
    let b = &g.base;
    let hbar = hs.hbar;

    let ya = &axes[dp];
    let s = ya.spacing;
    let lo_t = ya.origin - b.q[dp];
    let hi_t = ya.point(ya.count - 1) - b.q[dp];
    let (lo, hi) = (lo_t.min(g.y_min), hi_t.max(g.y_max()));
    let pad = if identity { 0.0 } else { hi - lo };
    let k0 = ((lo_t - (lo - pad)) / s).ceil().max(0.0) as usize;
    let origin = lo_t - k0 as f64 * s;
    let need = ((hi + pad - origin) / s).ceil() as usize + 1;
    let work = Axis::new(origin, s, if identity { need.max(k0 + ya.count) } else { need.next_power_of_two() });
    let gens = if identity { vec![] } else { factorize(&ky)? };

    let ev = Evaluator::new(hs);
    let rows: Vec<Option<Row>> = (0..work.count).map(|j| ev.row(work.point(j))).collect::<Result<_>>()?;
    let mut out = GridWavefunction::zeros(hbar, axes.to_vec());
    let x_axes = &axes[..dp];
    let n_x: usize = x_axes.iter().map(|a| a.count).product();
    let bqbp: f64 = b.q.iter().zip(&b.p).map(|(a, c)| a * c).sum();
    let mut xs = vec![0.0; dp];
    for ix in 0..n_x {
        let mut rem = ix;
        for a in (0..dp).rev() {
            xs[a] = x_axes[a].point(rem % x_axes[a].count);
            rem /= x_axes[a].count;
        }
        let xc: Vec<f64> = (0..dp).map(|a| xs[a] - b.q[a]).collect();
        let mut line = GridWavefunction::zeros(hbar, vec![work.clone()]);
        for (j, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                line.values[j] = ev.value(r, &xc);
            }
        }
        for gen in &gens {
            line = gen.apply(&line)?;
        }
        let xphase: f64 = (0..dp).map(|a| b.p[a] * xs[a]).sum();
        for jy in 0..ya.count {
            let y = ya.point(jy);
            let ph = (xphase + b.p[dp] * y - 0.5 * bqbp) / hbar;
            out.values[ix * ya.count + jy] = line.values[k0 + jy] * Complex64::from_polar(1.0, ph);
        }
    }
    out.check_boundary(EVAL_BOUNDARY_TOL)?;
    Ok(out)
}

fn t_i_generic(graph: &ManifoldGraph, u: &GridWavefunction, sign: f64) -> Result<GridWavefunction> {
    let dp = graph.d_par();
    if u.dim() != dp + 1 {
        return Err(Error::AxisMismatch);
    }
    let hbar = u.hbar;
    let sp = |v: Vec<f64>| CubicSpline::new(graph.y_min, graph.dy, v);
    let xs: Vec<CubicSpline> = (0..dp).map(|i| sp(graph.x_bar.iter().map(|v| v[i]).collect())).collect();
    let xis: Vec<CubicSpline> = (0..dp).map(|i| sp(graph.xi_bar.iter().map(|v| v[i]).collect())).collect();
    let phis = sp(graph.phi.clone());
    let clamp = |y: f64| y.clamp(graph.y_min, graph.y_max());
    let ya = &u.axes[dp];
    let strides = u.strides();
    let mut out = u.clone();
    // shift along each central axis in turn: v(x) = u(x -/+ x_bar)
    for a in 0..dp {
        let src = out.clone();
        let ax = &u.axes[a];
        let mut line = vec![Complex64::new(0.0, 0.0); ax.count];
        for i in 0..src.len() {
            let mi = src.multi_index(i);
            if mi[a] != 0 {
                continue;
            }
            let shift = sign * xs[a].eval(clamp(ya.point(mi[dp])));
            for (k, v) in line.iter_mut().enumerate() {
                *v = src.values[i + k * strides[a]];
            }
            for k in 0..ax.count {
                out.values[i + k * strides[a]] = lagrange(&line, k as f64 - shift / ax.spacing);
            }
        }
    }
    let mut x = vec![0.0; dp + 1];
    for i in 0..out.len() {
        out.point_into(i, &mut x);
        let y = clamp(x[dp]);
        let xb: Vec<f64> = xs.iter().map(|s| s.eval(y)).collect();
        let lin: f64 = (0..dp).map(|a| xis[a].eval(y) * (x[a] - sign * 0.5 * xb[a])).sum();
        out.values[i] *= Complex64::from_polar(1.0, sign * (phis.eval(y) + lin) / hbar);
    }
    Ok(out)
}

/// T_I on chart-coordinate samples (axes x_1.., y); graph data are held at
/// their end values outside the graph domain.
pub fn t_i_apply(graph: &ManifoldGraph, u: &GridWavefunction) -> Result<GridWavefunction> {
    t_i_generic(graph, u, 1.0)
}

/// Adjoint (and inverse) of `t_i_apply`.
pub fn t_i_adjoint(graph: &ManifoldGraph, u: &GridWavefunction) -> Result<GridWavefunction> {
    t_i_generic(graph, u, -1.0)
}

/// Measured quantities next to their envelopes for one hybrid state.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub step: usize,
    pub time: f64,
    pub hbar: f64,
    /// 1/2 - t nu_min / |log hbar|.
    pub delta_t: f64,
    pub delta_est: f64,
    pub nu_est: f64,
    pub gamma_derivative: f64,
    /// |log hbar| sigma_c(t)^2.
    pub gamma_bound: f64,
    pub support_diameter: f64,
    /// hbar^{0.45} e^{t lambda_max}.
    pub support_bound: f64,
    pub amplitude_derivative: f64,
    /// hbar^{-delta_t} J_u^{-1/2} hbar^{-1/4}.
    pub amplitude_bound: f64,
    /// sup|u_0| / (initial sup |u_0| J_u^{-1/2}).
    pub half_density_ratio: f64,
    pub constant: f64,
    pub gamma_ok: bool,
    pub support_ok: bool,
    pub amplitude_ok: bool,
}

impl EstimateReport {
    pub const CSV_HEADER: &'static str = "step,time,hbar,delta_t,delta_est,nu_est,gamma_derivative,gamma_bound,support_diameter,support_bound,amplitude_derivative,amplitude_bound,half_density_ratio,gamma_ok,support_ok,amplitude_ok";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:e},{:.6},{:.6},{:.6},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6},{},{},{}",
            self.step,
            self.time,
            self.hbar,
            self.delta_t,
            self.delta_est,
            self.nu_est,
            self.gamma_derivative,
            self.gamma_bound,
            self.support_diameter,
            self.support_bound,
            self.amplitude_derivative,
            self.amplitude_bound,
            self.half_density_ratio,
            self.gamma_ok,
            self.support_ok,
            self.amplitude_ok
        )
    }

    pub fn all_ok(&self) -> bool {
        self.gamma_ok && self.support_ok && self.amplitude_ok
    }
}

/// Compare a hybrid state at time `t` (measured from the start of the
/// hybrid description) with the envelopes built from `rates`; a check passes
/// when measured <= constant * envelope.
pub fn estimate_report(hs: &HybridState, rates: &DynamicalRates, t: f64, constant: f64) -> Result<EstimateReport> {
    if hs.provenance.is_empty() {
        return Err(Error::MissingProvenance);
    }
    let hbar = hs.hbar;
    let l = hbar.ln().abs();
    let (gd, _) = hs.gamma_derivative()?;
    let sigma = rates.sigma_c(t);
    let u: Vec<f64> = hs.ground().iter().map(|v| v.norm()).collect();
    let du = fd_derivative(&u, hs.graph.dy).iter().fold(0.0, |a: f64, v| a.max(v.abs()));
    let delta_t = 0.5 - t * rates.nu_min_perp / l;
    let ju_half = (-0.5 * hs.log_unstable_jacobian).exp();
    let support = hs.support_diameter((-0.5f64).exp());
    let report = EstimateReport {
        step: hs.graph.step,
        time: hs.time(),
        hbar,
        delta_t,
        delta_est: hs.delta_est,
        nu_est: hs.nu_est,
        gamma_derivative: gd,
        gamma_bound: l * sigma * sigma,
        support_diameter: support,
        support_bound: hbar.powf(0.45) * (t * rates.lambda_max).exp(),
        amplitude_derivative: du,
        amplitude_bound: hbar.powf(-delta_t) * ju_half * hbar.powf(-0.25),
        half_density_ratio: hs.amplitude_sup() / (hs.initial_sup * ju_half),
        constant,
        gamma_ok: false,
        support_ok: false,
        amplitude_ok: false,
    };
    Ok(EstimateReport {
        gamma_ok: report.gamma_derivative <= constant * report.gamma_bound,
        support_ok: report.support_diameter <= constant * report.support_bound,
        amplitude_ok: report.amplitude_derivative <= constant * report.amplitude_bound,
        ..report
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::flow::flow_point;
    use crate::dynamics::splitting::hyperbolic_splitting;
    use crate::metaplectic::frame::SiegelMatrix;
    use crate::models::{make_model, params_from, PhasePoint};
    use crate::linalg::RVec;
    use crate::oracle::{compare, split_step_evolve_with, SplitStepOptions};
    use crate::propagator::expansion::propagate_order0;
    use crate::states::wavepacket::eval_wavepacket;

    fn nh(eps: f64) -> ModelHamiltonian {
        make_model("nh2d", &params_from(&[("epsilon", eps)])).unwrap()
    }

    fn axes() -> Vec<Axis> {
        vec![Axis::centered(0.0, 0.02, 128), Axis::centered(0.0, 0.01, 1024)]
    }

    fn on_k() -> PhasePoint {
        PhasePoint::new(vec![0.3, 0.0], vec![0.1, 0.0])
    }

    /// Order-0 packet at time ts and the hybrid state built from it.
    fn switched(h: &ModelHamiltonian, hbar: f64, ts: f64, half: f64) -> (GaussianWavepacket, HybridState) {
        let s0 = GaussianWavepacket::coherent(hbar, on_k()).unwrap();
        let s = propagate_order0(h, &s0, ts).unwrap();
        let (b, _) = flow_point(h, &on_k(), ts).unwrap();
        let split = hyperbolic_splitting(h, &b, 6.0).unwrap();
        let hs = hybrid_from_wavepacket(h, &s, &split, &HybridOptions { half_width: Some(half), samples: 401 }).unwrap();
        (s, hs)
    }

    fn max_diff_up_to_phase(a: &GridWavefunction, b: &GridWavefunction) -> f64 {
        let ip = crate::states::grid::inner_product(b, a).unwrap();
        let phase = ip / ip.norm();
        a.values.iter().zip(&b.values).map(|(x, y)| (x / phase - y).norm()).fold(0.0, f64::max) / b.max_abs()
    }

    #[test]
    fn conversion_reproduces_the_wavepacket() {
        let h = nh(0.0);
        let (s, hs) = switched(&h, 1e-2, 0.3, 3.0);
        assert!(hs.graph.isotropy_residual() < 1e-10);
        // tensor identity in the chart
        let f = &hs.graph.frame;
        let b = hs.graph.base.to_z();
        let z: Vec<f64> = s.center.to_z().iter().zip(&b).map(|(a, c)| a - c).collect();
        let w = f.matrix() * RVec::from_vec(z);
        let chart = GaussianWavepacket::new(
            s.hbar,
            PhasePoint::from_z(w.as_slice()),
            s.frame.apply(f),
            s.poly.clone(),
            s.phase,
        )
        .unwrap();
        let g = &hs.graph;
        let cax = vec![Axis::centered(0.3, 0.01, 128), Axis::new(g.y_min, g.dy, g.n)];
        let direct = crate::states::wavepacket::eval_wavepacket_unchecked(&chart, &cax).unwrap();
        assert!(max_diff_up_to_phase(&eval_hybrid_chart(&hs, &cax).unwrap(), &direct) < 1e-10);
        // physical samples go through the interpolating metaplectic rows
        let phys = max_diff_up_to_phase(&eval_hybrid(&hs, &axes()).unwrap(), &eval_wavepacket(&s, &axes()).unwrap());
        assert!(phys < 1e-6, "{phys:e}");
    }

    #[test]
    fn coupled_squeezed_packet_round_trip() {
        // nonzero off-block G_xy is absorbed into a tilted graph
        let h = nh(0.1);
        let hbar = 1e-2;
        let g = CMat::from_row_slice(
            2,
            2,
            &[Complex64::new(0.3, 1.5), Complex64::new(0.2, 0.3), Complex64::new(0.2, 0.3), Complex64::new(-0.4, 0.8)],
        );
        let s = GaussianWavepacket::squeezed(hbar, PhasePoint::new(vec![0.1, 0.05], vec![0.0, -0.1]), &SiegelMatrix::new(g).unwrap()).unwrap();
        let split = hyperbolic_splitting(&h, &PhasePoint::origin(2), 6.0).unwrap();
        let hs = hybrid_from_wavepacket(&h, &s, &split, &HybridOptions { half_width: Some(1.5), samples: 301 }).unwrap();
        assert!(!hs.graph.warnings.is_empty());
        assert!(hs.graph.isotropy_residual() < 1e-10);
        let m = compare(&eval_hybrid(&hs, &axes()).unwrap(), &eval_wavepacket(&s, &axes()).unwrap()).unwrap();
        assert!(1.0 - m.overlap_mag < 1e-10, "{m:?}");
    }

    #[test]
    fn delta_follows_transverse_width() {
        let h = nh(0.0);
        let hbar: f64 = 1e-3;
        let e = 0.2;
        let g = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![Complex64::new(0.0, 1.0), Complex64::new(0.0, hbar.powf(2.0 * e))]));
        // chart y at the origin is (y + eta)/sqrt 2: squeeze in that variable
        let split = hyperbolic_splitting(&h, &PhasePoint::origin(2), 6.0).unwrap();
        let f = frame_from_splitting(&h, &split).unwrap();
        let gam = SiegelMatrix::new(g).unwrap();
        let frame = gam.frame().apply(&f.inverse());
        let s = GaussianWavepacket::new(hbar, PhasePoint::origin(2), frame, crate::poly::ComplexPoly::constant(2, Complex64::new(1.0, 0.0)), 0.0).unwrap();
        let hs = hybrid_from_wavepacket(&h, &s, &split, &HybridOptions::default()).unwrap();
        assert!((hs.delta_est - (0.5 - e)).abs() < 0.01, "{}", hs.delta_est);
    }

    #[test]
    fn decoupled_steps_match_the_oracle() {
        let h = nh(0.0);
        let (s, mut hs) = switched(&h, 1e-2, 0.3, 3.0);
        let t0 = 0.05;
        let mut diam = hs.support_diameter((-0.5f64).exp());
        for _ in 0..10 {
            hs = propagate_hybrid_leading(&h, &hs, t0).unwrap();
            let next = hs.support_diameter((-0.5f64).exp());
            assert!((next / diam / (2.0 * t0).exp() - 1.0).abs() < 0.1);
            diam = next;
            assert!(hs.gamma_spread() < 1e-8);
            assert!(hs.gamma_derivative().unwrap().0 < 1e-8);
        }
        let ratio = hs.amplitude_sup() / (hs.initial_sup * (-0.5 * hs.log_unstable_jacobian).exp());
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
        let o = split_step_evolve_with(&h, &eval_wavepacket(&s, &axes()).unwrap(), 0.5, &SplitStepOptions::default()).unwrap();
        let m = compare(&eval_hybrid(&hs, &axes()).unwrap(), &o.state).unwrap();
        assert!(m.overlap_mag > 0.99, "{m:?}");
    }

    #[test]
    fn coupled_steps_beat_order_zero() {
        let h = nh(0.1);
        let (s, mut hs) = switched(&h, 1e-2, 0.3, 3.0);
        for _ in 0..10 {
            hs = propagate_hybrid_leading(&h, &hs, 0.05).unwrap();
        }
        assert!(hs.graph.isotropy_residual() < 1e-4);
        let o = split_step_evolve_with(&h, &eval_wavepacket(&s, &axes()).unwrap(), 0.5, &SplitStepOptions::default()).unwrap();
        let hyb = compare(&eval_hybrid(&hs, &axes()).unwrap(), &o.state).unwrap();
        let plain = propagate_order0(&h, &s, 0.5).unwrap();
        let p = compare(&crate::states::wavepacket::eval_wavepacket_unchecked(&plain, &axes()).unwrap(), &o.state).unwrap();
        assert!(hyb.phase_insensitive_error < p.phase_insensitive_error, "{hyb:?} {p:?}");
        assert!(hyb.overlap_mag > 0.999);
    }

    #[test]
    fn consistent_with_wavepacket_just_after_switch() {
        let h = nh(0.1);
        let hbar: f64 = 1e-2;
        let (s, hs) = switched(&h, hbar, 0.3, 3.0);
        let hs = propagate_hybrid_leading(&h, &hs, 0.05).unwrap();
        let p = propagate_order0(&h, &s, 0.05).unwrap();
        let m = compare(&eval_hybrid(&hs, &axes()).unwrap(), &eval_wavepacket(&p, &axes()).unwrap()).unwrap();
        assert!(m.overlap_mag >= 1.0 - 5.0 * hbar.sqrt(), "{m:?}");
    }

    #[test]
    fn t_i_is_unitary_and_trivial_on_flat_graphs() {
        let h = nh(0.1);
        let (_, hs) = switched(&h, 1e-2, 0.3, 1.0);
        let ax = vec![Axis::centered(0.0, 0.02, 128), Axis::centered(0.0, 0.02, 128)];
        let u = GridWavefunction::from_fn(1e-2, ax.clone(), |x| {
            Complex64::new((-(x[0] * x[0] + x[1] * x[1]) / 0.02).exp(), 0.0) * Complex64::from_polar(1.0, 3.0 * x[1])
        });
        let mut g = hs.graph.clone();
        for k in 0..g.n {
            g.x_bar[k][0] = 0.1 * (2.0 * g.y(k)).sin();
            g.xi_bar[k][0] = 0.2 * g.y(k);
        }
        let v = t_i_apply(&g, &u).unwrap();
        assert!((v.norm() / u.norm() - 1.0).abs() < 1e-4);
        let back = t_i_adjoint(&g, &v).unwrap();
        let scale = u.max_abs();
        assert!(back.values.iter().zip(&u.values).all(|(a, b)| (a - b).norm() < 1e-4 * scale));
        let mut flat = g.clone();
        for k in 0..flat.n {
            flat.x_bar[k][0] = 0.0;
            flat.xi_bar[k][0] = 0.0;
            flat.phi[k] = 0.0;
        }
        let same = t_i_apply(&flat, &u).unwrap();
        assert!(same.values.iter().zip(&u.values).all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn excited_central_amplitude_has_node_on_graph() {
        let h = nh(0.0);
        let (_, mut hs) = switched(&h, 1e-2, 0.3, 1.0);
        let n = hs.graph.n;
        for k in 0..n {
            hs.graph.x_bar[k][0] = 0.2 * hs.graph.y(k);
        }
        let u0 = hs.ground().to_vec();
        hs.amplitudes.clear();
        hs.amplitudes.insert(vec![1], u0);
        let ax = vec![Axis::centered(0.0, 0.005, 256), Axis::centered(0.0, 0.02, 64)];
        let v = eval_hybrid_chart(&hs, &ax).unwrap();
        let spl = CubicSpline::new(hs.graph.y_min, hs.graph.dy, hs.graph.x_bar.iter().map(|x| x[0]).collect());
        for jy in (8..56).step_by(8) {
            let y = ax[1].point(jy);
            let xb = spl.eval(y);
            let i = ((xb - ax[0].origin) / ax[0].spacing).floor() as usize;
            // real part of v e^{-i phase} changes sign across x_bar
            let a = v.values[i * 64 + jy];
            let b = v.values[(i + 1) * 64 + jy];
            let lo = v.values[(i - 4) * 64 + jy];
            let hi = v.values[(i + 5) * 64 + jy];
            assert!((lo / hi).re < 0.0, "no node near x_bar at y = {y}");
            assert!(a.norm() < lo.norm() && b.norm() < hi.norm());
        }
    }

    #[test]
    fn norm_matches_amplitude_quadrature() {
        let h = nh(0.1);
        let (_, hs) = switched(&h, 1e-2, 0.3, 3.0);
        let hs = propagate_hybrid_leading(&h, &hs, 0.2).unwrap();
        let ax = vec![Axis::centered(0.3, 0.01, 256), Axis::centered(0.0, 0.01, 1024)];
        let grid = eval_hybrid_chart(&hs, &ax).unwrap().norm();
        let quad: f64 = hs.ground().iter().map(|u| u.norm_sqr()).sum::<f64>() * hs.graph.dy;
        assert!((grid - quad.sqrt()).abs() < 1e-3, "{grid} {}", quad.sqrt());
    }

    #[test]
    fn report_needs_provenance_and_delta_decreases() {
        let h = nh(0.0);
        let (_, mut hs) = switched(&h, 1e-2, 0.3, 3.0);
        let rates = DynamicalRates::new(2.0, 0.0, 2.0);
        let mut last = f64::INFINITY;
        for k in 1..=4 {
            hs = propagate_hybrid_leading(&h, &hs, 0.1).unwrap();
            let r = estimate_report(&hs, &rates, 0.1 * k as f64, 10.0).unwrap();
            assert!(r.delta_t < last);
            assert!(r.gamma_derivative < 1e-8);
            last = r.delta_t;
        }
        hs.provenance.clear();
        assert!(matches!(estimate_report(&hs, &rates, 0.4, 10.0), Err(Error::MissingProvenance)));
    }
}
