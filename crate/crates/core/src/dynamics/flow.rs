//! Hamiltonian flow, variational equations and action.

use crate::error::{Error, Result};
use crate::integrate::{Integrator, System, Tolerance};
use crate::linalg::{reproject_symplectic, RMat, SymplecticMatrix};
use crate::models::{ModelHamiltonian, PhasePoint};

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub tol: Tolerance,
    /// Escape when any coordinate exceeds this magnitude.
    pub box_bound: f64,
    /// Re-run with a tighter tolerance to estimate the final-point error.
    pub richardson: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { tol: Tolerance::default(), box_bound: 1e3, richardson: true }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub jacobians: Option<Vec<SymplecticMatrix>>,
    /// S(t) = int (xi . d_xi p - p) ds along the trajectory.
    pub actions: Vec<f64>,
    pub energy_drift: f64,
    pub error_estimate: Option<f64>,
}

impl Trajectory {
    pub fn final_point(&self) -> &PhasePoint {
        self.points.last().expect("trajectory has samples")
    }

    pub fn final_jacobian(&self) -> Option<&SymplecticMatrix> {
        self.jacobians.as_ref().and_then(|j| j.last())
    }

    pub fn final_action(&self) -> f64 {
        *self.actions.last().expect("trajectory has samples")
    }

    /// CSV rows: t, q..., p..., then vec(kappa) column-major when present.
    pub fn to_csv(&self) -> String {
        let d = self.points[0].d();
        let mut s = String::from("t");
        for i in 0..d {
            s.push_str(&format!(",q{i}"));
        }
        for i in 0..d {
            s.push_str(&format!(",p{i}"));
        }
        if self.jacobians.is_some() {
            for c in 0..2 * d {
                for r in 0..2 * d {
                    s.push_str(&format!(",k{r}{c}"));
                }
            }
        }
        s.push('\n');
        for (k, (t, p)) in self.times.iter().zip(&self.points).enumerate() {
            s.push_str(&format!("{t:.17e}"));
            for v in p.q.iter().chain(&p.p) {
                s.push_str(&format!(",{v:.17e}"));
            }
            if let Some(js) = &self.jacobians {
                for v in js[k].matrix().iter() {
                    s.push_str(&format!(",{v:.17e}"));
                }
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) struct FlowSystem<'a> {
    pub h: &'a ModelHamiltonian,
    pub variational: bool,
}

impl FlowSystem<'_> {
    fn n(&self) -> usize {
        2 * self.h.d
    }
}

impl System for FlowSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.n();
        n + if self.variational { n * n } else { 0 } + 1
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.h.d;
        let n = 2 * d;
        let z = &y[..n];
        let mut g = [0.0; 6];
        self.h.gradient_into(z, &mut g[..n]);
        for i in 0..d {
            dy[i] = g[d + i];
            dy[d + i] = -g[i];
        }
        if self.variational {
            let hs = self.h.hessian(z);
            // kappa' = J H kappa; (J H)_{i,.} = H_{d+i,.}, (J H)_{d+i,.} = -H_{i,.}
            let k = &y[n..n + n * n];
            let dk = &mut dy[n..n + n * n];
            for c in 0..n {
                for r in 0..n {
                    let (row, sign) = if r < d { (r + d, 1.0) } else { (r - d, -1.0) };
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += hs[(row, m)] * k[c * n + m];
                    }
                    dk[c * n + r] = sign * acc;
                }
            }
        }
        let mut xi_dp = 0.0;
        for i in 0..d {
            xi_dp += z[d + i] * g[d + i];
        }
        let last = self.dim() - 1;
        dy[last] = xi_dp - self.h.eval(z);
    }
}

fn escape_check(bound: f64, n: usize) -> impl Fn(f64, &[f64]) -> Result<()> {
    move |t, y| {
        if y[..n].iter().any(|v| !(v.abs() <= bound)) {
            Err(Error::Escape { time: t, bound })
        } else {
            Ok(())
        }
    }
}

fn run(
    h: &ModelHamiltonian,
    rho0: &PhasePoint,
    kappa0: Option<&RMat>,
    t: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !t.is_finite() {
        return Err(Error::invalid("dt must be positive and t finite"));
    }
    if t.abs() / dt > 1e7 {
        return Err(Error::invalid("more than 1e7 output samples requested"));
    }
    if rho0.d() != h.d || !rho0.is_finite() {
        return Err(Error::invalid("initial point has wrong dimension or is not finite"));
    }
    let variational = kappa0.is_some();
    let sys = FlowSystem { h, variational };
    let n = 2 * h.d;
    let mut y = vec![0.0; sys.dim()];
    y[..n].copy_from_slice(&rho0.to_z());
    if let Some(k) = kappa0 {
        y[n..n + n * n].copy_from_slice(k.as_slice());
    }
    let e0 = h.energy(rho0);
    let nsamples = ((t.abs() / dt).ceil() as usize).max(1);
    let mut out = Trajectory {
        times: vec![0.0],
        points: vec![rho0.clone()],
        jacobians: kappa0.map(|k| vec![SymplecticMatrix::new_unchecked(k.clone())]),
        actions: vec![0.0],
        energy_drift: 0.0,
        error_estimate: None,
    };
    let mut integ = Integrator::new(opts.tol.clone(), dt.min(0.05));
    let mut tc = 0.0;
    let check = escape_check(opts.box_bound, n);
    for k in 1..=nsamples {
        let target = if k == nsamples { t } else { t.signum() * dt * k as f64 };
        integ.advance(&sys, &mut tc, &mut y, target, &check)?;
        if variational {
            let kap = RMat::from_column_slice(n, n, &y[n..n + n * n]);
            let kap = reproject_symplectic(&kap);
            y[n..n + n * n].copy_from_slice(kap.as_slice());
            out.jacobians.as_mut().expect("jacobians").push(SymplecticMatrix::new_unchecked(kap));
        }
        let p = PhasePoint::from_z(&y[..n]);
        out.energy_drift = out.energy_drift.max((h.energy(&p) - e0).abs());
        out.points.push(p);
        out.times.push(target);
        out.actions.push(y[sys.dim() - 1]);
    }
    if opts.richardson {
        let fine = FlowOptions { tol: opts.tol.tightened(1.0 / 32.0), richardson: false, ..opts.clone() };
        let ref_traj = run(h, rho0, None, t, t.abs().max(dt), &fine)?;
        let a = out.final_point().to_z();
        let b = ref_traj.final_point().to_z();
        out.error_estimate = Some(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok(out)
}

pub fn integrate_flow(h: &ModelHamiltonian, rho0: &PhasePoint, t: f64, dt: f64) -> Result<Trajectory> {
    integrate_flow_with(h, rho0, t, dt, &FlowOptions::default())
}

pub fn integrate_flow_with(h: &ModelHamiltonian, rho0: &PhasePoint, t: f64, dt: f64, opts: &FlowOptions) -> Result<Trajectory> {
    run(h, rho0, None, t, dt, opts)
}

pub fn integrate_variational(h: &ModelHamiltonian, rho0: &PhasePoint, t: f64, dt: f64) -> Result<Trajectory> {
    integrate_variational_with(h, rho0, t, dt, &FlowOptions::default())
}

pub fn integrate_variational_with(
    h: &ModelHamiltonian,
    rho0: &PhasePoint,
    t: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    let n = 2 * h.d;
    run(h, rho0, Some(&RMat::identity(n, n)), t, dt, opts)
}

/// Endpoint of the flow with its Jacobian and action, no intermediate samples.
pub fn flow_map(h: &ModelHamiltonian, rho: &PhasePoint, t: f64) -> Result<(PhasePoint, SymplecticMatrix, f64)> {
    if t == 0.0 {
        return Ok((rho.clone(), SymplecticMatrix::identity(h.d), 0.0));
    }
    let opts = FlowOptions { richardson: false, ..FlowOptions::default() };
    let tr = integrate_variational_with(h, rho, t, t.abs(), &opts)?;
    let k = tr.final_jacobian().expect("variational").clone();
    Ok((tr.final_point().clone(), k, tr.final_action()))
}

/// Endpoint of the flow and its action (no Jacobian).
pub fn flow_point(h: &ModelHamiltonian, rho: &PhasePoint, t: f64) -> Result<(PhasePoint, f64)> {
    if t == 0.0 {
        return Ok((rho.clone(), 0.0));
    }
    let opts = FlowOptions { richardson: false, ..FlowOptions::default() };
    let tr = integrate_flow_with(h, rho, t, t.abs(), &opts)?;
    Ok((tr.final_point().clone(), tr.final_action()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::models::{make_model, params_from};

    fn model(name: &str, pairs: &[(&str, f64)]) -> ModelHamiltonian {
        make_model(name, &params_from(pairs)).unwrap()
    }

    #[test]
    fn harmonic_quarter_period() {
        let h = model("harmonic", &[]);
        let tr = integrate_variational(&h, &PhasePoint::new(vec![1.0], vec![0.0]), std::f64::consts::FRAC_PI_4, 0.01).unwrap();
        let p = tr.final_point();
        assert!((p.q[0]).abs() < 1e-8 && (p.p[0] + 1.0).abs() < 1e-8);
        let k = tr.final_jacobian().unwrap().matrix().clone();
        let rot = RMat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(max_abs(&(k - rot)) < 1e-8);
        assert!(tr.error_estimate.unwrap() < 1e-8);
    }

    #[test]
    fn dilation_flow_and_jacobian() {
        let h = model("dilation", &[]);
        let tr = integrate_flow(&h, &PhasePoint::new(vec![1.0], vec![1.0]), 1.0, 0.1).unwrap();
        let p = tr.final_point();
        assert!((p.q[0] - std::f64::consts::E).abs() < 1e-8);
        assert!((p.p[0] - (-1f64).exp()).abs() < 1e-8);
        let (_, k, _) = flow_map(&h, &PhasePoint::new(vec![0.3], vec![0.2]), 2f64.ln()).unwrap();
        assert!(max_abs(&(k.matrix() - RMat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]))) < 1e-8);
    }

    #[test]
    fn quartic_energy_drift() {
        let h = model("anharmonic_quartic", &[("beta", 0.1)]);
        let tr = integrate_flow(&h, &PhasePoint::new(vec![1.0], vec![0.0]), 5.0, 0.01).unwrap();
        assert!(tr.energy_drift < 1e-10, "{}", tr.energy_drift);
    }

    #[test]
    fn nh2d_transverse_singular_values() {
        let h = model("nh2d", &[("epsilon", 0.0)]);
        let (_, k, _) = flow_map(&h, &PhasePoint::new(vec![0.4, 0.0], vec![0.1, 0.0]), 1.0).unwrap();
        let m = k.matrix();
        let tb = RMat::from_row_slice(2, 2, &[m[(1, 1)], m[(1, 3)], m[(3, 1)], m[(3, 3)]]);
        let sv = tb.singular_values();
        let e2 = 2f64.exp();
        let (hi, lo) = (sv.max(), sv.min());
        assert!((hi / e2 - 1.0).abs() < 1e-6, "{hi}");
        assert!((lo * e2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn escape_is_reported() {
        let h = model("saddle_cubic", &[("beta", 0.3)]);
        let opts = FlowOptions { box_bound: 50.0, ..FlowOptions::default() };
        let r = integrate_flow_with(&h, &PhasePoint::new(vec![-1.0], vec![-1.0]), 50.0, 0.1, &opts);
        match r {
            Err(Error::Escape { time, .. }) => assert!(time > 0.0 && time < 50.0),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn cocycle_and_symplecticity() {
        let h = model("nh2d", &[("epsilon", 0.1)]);
        let rho = PhasePoint::new(vec![0.3, 0.05], vec![-0.2, 0.02]);
        let (mid, k1, _) = flow_map(&h, &rho, 0.4).unwrap();
        let (_, k2, _) = flow_map(&h, &mid, 0.7).unwrap();
        let (_, k12, _) = flow_map(&h, &rho, 1.1).unwrap();
        assert!(max_abs(&(k2.compose(&k1).matrix() - k12.matrix())) < 1e-7);
        assert!(k12.residual() < 1e-8);
    }

    #[test]
    fn backwards_flow_inverts() {
        let h = model("anharmonic_quartic", &[("beta", 0.1)]);
        let rho = PhasePoint::new(vec![0.7], vec![-0.3]);
        let (fwd, _) = flow_point(&h, &rho, 1.3).unwrap();
        let (back, _) = flow_point(&h, &fwd, -1.3).unwrap();
        assert!(back.distance(&rho) < 1e-10);
    }
}
