//! Isotropic manifold graphs y -> (x(y), y, xi(y), eta(y)) written in the
//! adapted chart w = F (z - base) of a base point on K, and their evolution
//! under the flow. Only one transverse dimension is supported.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dynamics::flow::flow_point;
use crate::dynamics::splitting::{default_window, frame_from_splitting, hyperbolic_splitting};
use crate::error::{Error, Result};
use crate::linalg::{RMat, RVec, SymplecticMatrix};
use crate::models::{ModelHamiltonian, PhasePoint};
use crate::spline::{invert_monotone, CubicSpline};

static LINEAGE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
pub struct ManifoldGraph {
    pub base: PhasePoint,
    /// Global-to-chart frame F.
    pub frame: SymplecticMatrix,
    pub y_min: f64,
    pub dy: f64,
    pub n: usize,
    pub x_bar: Vec<Vec<f64>>,
    pub xi_bar: Vec<Vec<f64>>,
    pub eta_bar: Vec<f64>,
    pub phi: Vec<f64>,
    pub accumulated_action: Vec<f64>,
    /// Bound on the finite-difference C^1 norms of x, xi, eta.
    pub gamma1: f64,
    pub step: usize,
    pub time: f64,
    /// y on the previous graph of each sample (None for an initial graph).
    pub preimage: Option<Vec<f64>>,
    /// y on the initial graph of each sample.
    pub origin: Vec<f64>,
    /// dy_new/dy_old at the base point during the last step.
    pub expansion: f64,
    pub warnings: Vec<String>,
    lineage: u64,
}

/// Q_L(w) = ((L w)_p . (L w)_q - w_p . w_q) / 2 plus the translation terms of
/// T(base): the generating function relating p dq in global coordinates to
/// p dq in chart coordinates.
fn chart_generating(base: &PhasePoint, g: &RMat, w: &RVec) -> f64 {
    let d = base.d();
    let gw = g * w;
    let mut acc = 0.0;
    for i in 0..d {
        acc += 0.5 * (gw[d + i] * gw[i] - w[d + i] * w[i]);
        acc += base.p[i] * gw[i];
    }
    acc + 0.5 * base.q.iter().zip(&base.p).map(|(a, b)| a * b).sum::<f64>()
}

/// Central finite differences, second-order one-sided at the ends.
pub fn fd_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        return vec![if n == 2 { (v[1] - v[0]) / h } else { 0.0 }; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

impl ManifoldGraph {
    /// Flat graph x = xi = eta = phi = 0 over [y_min, y_max] in the adapted
    /// chart at `base`.
    pub fn flat(h: &ModelHamiltonian, base: &PhasePoint, y_min: f64, y_max: f64, n: usize) -> Result<Self> {
        if h.d_perp != 1 {
            return Err(Error::invalid("manifold graphs support one transverse dimension"));
        }
        if n < 8 || !(y_max > y_min) {
            return Err(Error::invalid("graph grid needs at least 8 samples over a nonempty interval"));
        }
        let split = hyperbolic_splitting(h, base, default_window(h))?;
        let frame = frame_from_splitting(h, &split)?;
        let dy = (y_max - y_min) / (n - 1) as f64;
        let dp = h.d_par;
        Ok(ManifoldGraph {
            base: base.clone(),
            frame,
            y_min,
            dy,
            n,
            x_bar: vec![vec![0.0; dp]; n],
            xi_bar: vec![vec![0.0; dp]; n],
            eta_bar: vec![0.0; n],
            phi: vec![0.0; n],
            accumulated_action: vec![0.0; n],
            gamma1: 10.0,
            step: 0,
            time: 0.0,
            preimage: None,
            origin: (0..n).map(|k| y_min + k as f64 * dy).collect(),
            expansion: 1.0,
            warnings: Vec::new(),
            lineage: LINEAGE.fetch_add(1, Ordering::Relaxed),
        })
    }

    /// Graph with the given samples on a uniform y grid (new lineage).
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        base: PhasePoint,
        frame: SymplecticMatrix,
        y_min: f64,
        dy: f64,
        x_bar: Vec<Vec<f64>>,
        xi_bar: Vec<Vec<f64>>,
        eta_bar: Vec<f64>,
        phi: Vec<f64>,
    ) -> Result<Self> {
        let n = eta_bar.len();
        if n < 8 || x_bar.len() != n || xi_bar.len() != n || phi.len() != n || !(dy > 0.0) {
            return Err(Error::invalid("graph samples have inconsistent lengths"));
        }
        Ok(ManifoldGraph {
            base,
            frame,
            y_min,
            dy,
            n,
            x_bar,
            xi_bar,
            eta_bar,
            phi,
            accumulated_action: vec![0.0; n],
            gamma1: 10.0,
            step: 0,
            time: 0.0,
            preimage: None,
            origin: (0..n).map(|k| y_min + k as f64 * dy).collect(),
            expansion: 1.0,
            warnings: Vec::new(),
            lineage: LINEAGE.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn d_par(&self) -> usize {
        self.x_bar.first().map_or(0, |v| v.len())
    }

    pub fn y(&self, k: usize) -> f64 {
        self.y_min + k as f64 * self.dy
    }

    pub fn y_grid(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.y(k)).collect()
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.n - 1)
    }

    /// Chart coordinates (x.., y, xi.., eta) of sample k.
    pub fn chart_point(&self, k: usize) -> RVec {
        let dp = self.d_par();
        let d = dp + 1;
        let mut w = RVec::zeros(2 * d);
        for i in 0..dp {
            w[i] = self.x_bar[k][i];
            w[d + i] = self.xi_bar[k][i];
        }
        w[dp] = self.y(k);
        w[d + dp] = self.eta_bar[k];
        w
    }

    pub fn global_point(&self, k: usize) -> PhasePoint {
        let g = self.frame.inverse();
        let z = g.matrix() * self.chart_point(k);
        let b = self.base.to_z();
        PhasePoint::from_z(&z.iter().zip(&b).map(|(a, c)| a + c).collect::<Vec<_>>())
    }

    fn series(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.n).map(f).collect()
    }

    /// max |eta - (phi' + (xi' . x - xi . x') / 2)| over interior samples.
    pub fn isotropy_residual(&self) -> f64 {
        let dp = self.d_par();
        let dphi = fd_derivative(&self.phi, self.dy);
        let mut rhs = dphi;
        for i in 0..dp {
            let x: Vec<f64> = self.series(|k| self.x_bar[k][i]);
            let xi: Vec<f64> = self.series(|k| self.xi_bar[k][i]);
            let dx = fd_derivative(&x, self.dy);
            let dxi = fd_derivative(&xi, self.dy);
            for k in 0..self.n {
                rhs[k] += 0.5 * (dxi[k] * x[k] - xi[k] * dx[k]);
            }
        }
        (2..self.n - 2).map(|k| (self.eta_bar[k] - rhs[k]).abs()).fold(0.0, f64::max)
    }

    /// Finite-difference C^1 norm of (x, xi, eta).
    pub fn c1_norm(&self) -> f64 {
        let dp = self.d_par();
        let mut m: f64 = 0.0;
        let mut take = |v: Vec<f64>| {
            let dv = fd_derivative(&v, self.dy);
            for (a, b) in v.iter().zip(&dv) {
                m = m.max(a.abs()).max(b.abs());
            }
        };
        for i in 0..dp {
            take(self.series(|k| self.x_bar[k][i]));
            take(self.series(|k| self.xi_bar[k][i]));
        }
        take(self.eta_bar.clone());
        m
    }

    pub fn same_lineage(&self, other: &ManifoldGraph) -> bool {
        self.lineage == other.lineage
    }

    fn origin_spline(&self) -> CubicSpline {
        CubicSpline::new(self.y_min, self.dy, self.origin.clone())
    }
}

/// Flow every graph point for time t0, re-chart at the image of the base
/// point, invert the y-map and resample on a uniform grid.
pub fn evolve_manifold_graph(h: &ModelHamiltonian, g: &ManifoldGraph, t0: f64) -> Result<ManifoldGraph> {
    let dp = g.d_par();
    let d = dp + 1;
    if h.d != d || h.d_perp != 1 {
        return Err(Error::invalid("graph and model dimensions differ"));
    }
    let c1 = g.c1_norm();
    if c1 > g.gamma1 {
        return Err(Error::invalid(format!("graph C^1 norm {c1:.3} exceeds gamma1 = {}", g.gamma1)));
    }
    let g_old = g.frame.inverse();

    let (base_new, base_action) = flow_point(h, &g.base, t0)?;
    let _ = base_action;
    let frame_new = if t0 == 0.0 {
        g.frame.clone()
    } else {
        let split = hyperbolic_splitting(h, &base_new, default_window(h))?;
        frame_from_splitting(h, &split)?
    };
    let mut f_new = frame_new.matrix().clone();

    // flow the samples
    let mut images: Vec<RVec> = Vec::with_capacity(g.n);
    let mut gen_new: Vec<f64> = Vec::with_capacity(g.n);
    let mut actions: Vec<f64> = Vec::with_capacity(g.n);
    let bnew = RVec::from_vec(base_new.to_z());
    for k in 0..g.n {
        let w = g.chart_point(k);
        let z0 = g.global_point(k);
        let (z1, s) = flow_point(h, &z0, t0)?;
        let w1 = &f_new * (RVec::from_vec(z1.to_z()) - &bnew);
        let gen_old = g.phi[k] + (0..dp).map(|i| g.xi_bar[k][i] * g.x_bar[k][i]).sum::<f64>() * 0.5
            + chart_generating(&g.base, g_old.matrix(), &w);
        images.push(w1);
        gen_new.push(gen_old + s);
        actions.push(g.accumulated_action[k] + s);
    }
    // orientation: keep y increasing along the graph
    if images[g.n - 1][dp] < images[0][dp] {
        for r in [dp, d + dp] {
            for c in 0..2 * d {
                f_new[(r, c)] = -f_new[(r, c)];
            }
        }
        for w in images.iter_mut() {
            w[dp] = -w[dp];
            w[d + dp] = -w[d + dp];
        }
    }
    let frame_new = SymplecticMatrix::new(f_new)?;
    let g_new = frame_new.inverse();
    for (k, w1) in images.iter().enumerate() {
        gen_new[k] -= chart_generating(&base_new, g_new.matrix(), w1);
    }

    let y1: Vec<f64> = images.iter().map(|w| w[dp]).collect();
    let slope = fd_derivative(&y1, g.dy);
    let min_slope = slope.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_slope > 1e-6) {
        return Err(Error::Projectability(format!("y-map derivative {min_slope:e}")));
    }
    let ymap = CubicSpline::new(g.y_min, g.dy, y1.clone());
    let lo = g.y_min.max(y1[0]);
    let hi = g.y_max().min(y1[g.n - 1]);
    if !(hi > lo) {
        return Err(Error::Projectability("image does not overlap the graph domain".into()));
    }
    // expansion at the base point (chart y = 0 when inside the domain)
    let y_base = 0f64.clamp(g.y_min, g.y_max());
    let expansion = ymap.deriv(y_base);

    let n = g.n;
    let dy_new = (hi - lo) / (n - 1) as f64;
    let mut pre = Vec::with_capacity(n);
    let mut seed: Option<f64> = None;
    for k in 0..n {
        let target = lo + k as f64 * dy_new;
        let guess = seed.or(Some(y_base + (target - ymap.eval(y_base)) / expansion));
        let y0 = invert_monotone(&ymap, target, guess)
            .ok_or_else(|| Error::Projectability(format!("cannot invert the y-map at {target}")))?;
        pre.push(y0);
        seed = Some(y0 + dy_new / expansion.max(1e-3));
    }

    let resample = |vals: Vec<f64>| -> Vec<f64> {
        let s = CubicSpline::new(g.y_min, g.dy, vals);
        pre.iter().map(|&y| s.eval(y)).collect()
    };
    let comp = |idx: usize| resample(images.iter().map(|w| w[idx]).collect());
    let x_cols: Vec<Vec<f64>> = (0..dp).map(|i| comp(i)).collect();
    let xi_cols: Vec<Vec<f64>> = (0..dp).map(|i| comp(d + i)).collect();
    let eta_bar = comp(d + dp);
    let gen = resample(gen_new);
    let accumulated_action = resample(actions);
    let origin = {
        let s = g.origin_spline();
        pre.iter().map(|&y| s.eval(y)).collect()
    };
    let x_bar: Vec<Vec<f64>> = (0..n).map(|k| (0..dp).map(|i| x_cols[i][k]).collect()).collect();
    let xi_bar: Vec<Vec<f64>> = (0..n).map(|k| (0..dp).map(|i| xi_cols[i][k]).collect()).collect();
    let phi: Vec<f64> = (0..n)
        .map(|k| gen[k] - 0.5 * (0..dp).map(|i| x_bar[k][i] * xi_bar[k][i]).sum::<f64>())
        .collect();

    let mut out = ManifoldGraph {
        base: base_new,
        frame: frame_new,
        y_min: lo,
        dy: dy_new,
        n,
        x_bar,
        xi_bar,
        eta_bar,
        phi,
        accumulated_action,
        gamma1: g.gamma1,
        step: g.step + 1,
        time: g.time + t0,
        preimage: Some(pre),
        origin,
        expansion,
        warnings: g.warnings.clone(),
        lineage: g.lineage,
    };
    let c1_new = out.c1_norm();
    if c1_new > out.gamma1 {
        out.warnings.push(format!("step {}: inclination bound exceeded, C^1 norm {c1_new:.4}", out.step));
    }
    Ok(out)
}

/// |dy_before/dy_after| at every sample of `after`, by finite differences.
pub fn back_map_determinant(before: &ManifoldGraph, after: &ManifoldGraph) -> Result<Vec<f64>> {
    if !before.same_lineage(after) || after.step < before.step {
        return Err(Error::invalid("unmatched grids: graphs are not related by evolution"));
    }
    if after.step == before.step {
        return Ok(vec![1.0; after.n]);
    }
    let y_before: Vec<f64> = if after.step == before.step + 1 {
        after.preimage.clone().ok_or_else(|| Error::invalid("missing point correspondence"))?
    } else {
        let s = before.origin_spline();
        after
            .origin
            .iter()
            .map(|&o| invert_monotone(&s, o, None).ok_or_else(|| Error::invalid("origin outside the earlier graph")))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(fd_derivative(&y_before, after.dy).into_iter().map(f64::abs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, params_from};

    fn nh(eps: f64) -> ModelHamiltonian {
        make_model("nh2d", &params_from(&[("epsilon", eps)])).unwrap()
    }

    #[test]
    fn flat_graph_stays_flat_and_contracts() {
        let h = nh(0.0);
        let g0 = ManifoldGraph::flat(&h, &PhasePoint::origin(2), -1.0, 1.0, 81).unwrap();
        let t0 = 0.25;
        let g1 = evolve_manifold_graph(&h, &g0, t0).unwrap();
        let xmax = g1.x_bar.iter().map(|v| v[0].abs()).fold(0.0, f64::max);
        assert!(xmax < 1e-8);
        assert!(g1.eta_bar.iter().all(|e| e.abs() < 1e-8));
        let det = back_map_determinant(&g0, &g1).unwrap();
        let expect = (-2.0 * t0).exp();
        for v in &det {
            assert!((v / expect - 1.0).abs() < 0.05, "{v} vs {expect}");
        }
        assert!(g1.isotropy_residual() < 1e-8);
    }

    #[test]
    fn identity_step_and_chain_rule() {
        let h = nh(0.1);
        let g0 = ManifoldGraph::flat(&h, &PhasePoint::origin(2), -1.0, 1.0, 101).unwrap();
        let same = evolve_manifold_graph(&h, &g0, 0.0).unwrap();
        for v in back_map_determinant(&g0, &same).unwrap() {
            assert!((v - 1.0).abs() < 1e-8);
        }
        let g1 = evolve_manifold_graph(&h, &g0, 0.3).unwrap();
        let g2 = evolve_manifold_graph(&h, &g1, 0.3).unwrap();
        let d01 = back_map_determinant(&g0, &g1).unwrap();
        let d12 = back_map_determinant(&g1, &g2).unwrap();
        let d02 = back_map_determinant(&g0, &g2).unwrap();
        let s01 = CubicSpline::new(g1.y_min, g1.dy, d01);
        let pre = g2.preimage.as_ref().unwrap();
        for k in 5..g2.n - 5 {
            let prod = d12[k] * s01.eval(pre[k]);
            assert!((prod / d02[k] - 1.0).abs() < 0.01, "{prod} {}", d02[k]);
        }
        let other = ManifoldGraph::flat(&h, &PhasePoint::origin(2), -1.0, 1.0, 101).unwrap();
        assert!(back_map_determinant(&other, &g2).is_err());
    }

    #[test]
    fn coupled_graph_stays_isotropic_and_bounded() {
        let h = nh(0.1);
        let mut g = ManifoldGraph::flat(&h, &PhasePoint::origin(2), -1.5, 1.5, 241).unwrap();
        for _ in 0..10 {
            g = evolve_manifold_graph(&h, &g, 0.1).unwrap();
            assert!(g.c1_norm() <= g.gamma1);
            assert!(g.warnings.is_empty());
        }
        let xmax = g.x_bar.iter().map(|v| v[0].abs()).fold(0.0, f64::max);
        assert!(xmax > 1e-4, "coupling should bend the graph");
        assert!(g.isotropy_residual() < 1e-4, "{}", g.isotropy_residual());
    }
}
