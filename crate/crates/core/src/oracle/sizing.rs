//! Grids that contain a wavepacket along its whole classical history.

use crate::dynamics::flow::{integrate_variational_with, FlowOptions};
use crate::error::{Error, Result};
use crate::metaplectic::frame::HagedornFrame;
use crate::models::ModelHamiltonian;
use crate::states::grid::Axis;
use crate::states::wavepacket::GaussianWavepacket;

#[derive(Clone, Debug)]
pub struct GridSizing {
    /// Position half-widths kept on each side, in units of the packet width.
    pub q_margin: f64,
    /// Momentum half-widths resolved beyond the largest |p|.
    pub p_margin: f64,
    /// Upper bound on the spacing in units of sqrt(hbar).
    pub dx_over_sqrt_hbar: f64,
    pub max_points: usize,
}

impl Default for GridSizing {
    fn default() -> Self {
        GridSizing { q_margin: 9.0, p_margin: 9.0, dx_over_sqrt_hbar: 1.0 / 6.0, max_points: 1 << 12 }
    }
}

/// Power-of-two axes covering the order-0 packet over [0, t].
pub fn trajectory_axes(h: &ModelHamiltonian, s: &GaussianWavepacket, t: f64, sizing: &GridSizing) -> Result<Vec<Axis>> {
    let d = s.d();
    let opts = FlowOptions { richardson: false, ..Default::default() };
    let tr = integrate_variational_with(h, &s.center, t.max(1e-9), (t / 200.0).max(1e-3), &opts)?;
    let sh = s.hbar.sqrt();
    let grow = 1.0 + 0.25 * s.poly.degree() as f64;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut pmax = vec![0.0f64; d];
    for (p, k) in tr.points.iter().zip(tr.jacobians.as_ref().expect("variational")) {
        let f: HagedornFrame = s.frame.apply(k);
        for i in 0..d {
            let qw = sh * (0..d).map(|j| f.m[(i, j)].norm_sqr()).sum::<f64>().sqrt() * grow;
            let pw = sh * (0..d).map(|j| f.n[(i, j)].norm_sqr()).sum::<f64>().sqrt() * grow;
            lo[i] = lo[i].min(p.q[i] - sizing.q_margin * qw);
            hi[i] = hi[i].max(p.q[i] + sizing.q_margin * qw);
            pmax[i] = pmax[i].max(p.p[i].abs() + sizing.p_margin * pw);
        }
    }
    (0..d)
        .map(|i| {
            let dx_max = (sizing.dx_over_sqrt_hbar * sh).min(std::f64::consts::PI * s.hbar / pmax[i]);
            let extent = hi[i] - lo[i];
            let mut n = 16usize;
            while extent / n as f64 > dx_max {
                n *= 2;
            }
            if n > sizing.max_points {
                return Err(Error::GridTooSmall(format!("axis {i} needs {n} points (limit {})", sizing.max_points)));
            }
            // keep the spacing at dx_max and centre the extra room
            let dx = dx_max.min(extent / (n / 2) as f64);
            Ok(Axis::centered(0.5 * (lo[i] + hi[i]), dx, n))
        })
        .collect()
}
