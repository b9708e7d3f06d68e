//! Split-step Fourier solver for i hbar u_t = (-hbar^2 Laplacian + V) u.
//!
//! Steps are the fourth-order Yoshida composition of Strang steps
//! V/2 K V/2, so that the dt vs dt/2 agreement check passes at practical
//! step counts.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::ModelHamiltonian;
use crate::poly::RealPoly;
use crate::states::grid::{GridWavefunction, Spectral};

const CBRT2: f64 = 1.259_921_049_894_873_2;
const W1: f64 = 1.0 / (2.0 - CBRT2);
const W0: f64 = -CBRT2 / (2.0 - CBRT2);

#[derive(Clone, Debug)]
pub struct SplitStepOptions {
    /// Fixed step; `None` picks min(0.01, 0.1 sqrt(hbar) / max|grad V|).
    pub dt: Option<f64>,
    pub boundary_tol: f64,
    /// Relative dt vs dt/2 tolerance; `None` disables the check.
    pub richardson_tol: Option<f64>,
    pub max_refinements: usize,
    pub monitor_every: usize,
}

impl Default for SplitStepOptions {
    fn default() -> Self {
        SplitStepOptions { dt: None, boundary_tol: 1e-8, richardson_tol: Some(1e-6), max_refinements: 6, monitor_every: 4 }
    }
}

#[derive(Clone, Debug)]
pub struct OracleRun {
    pub state: GridWavefunction,
    pub dt: f64,
    pub steps: usize,
    pub norm_drift: f64,
    /// max over checkpoints of |u_dt - u_{dt/2}| / |u|.
    pub richardson_error: Option<f64>,
    pub max_boundary_ratio: f64,
}

fn potential_of(h: &ModelHamiltonian) -> Result<RealPoly> {
    h.potential().ok_or_else(|| Error::NotKineticPotential(h.name.clone()))
}

fn sample_potential(v: &RealPoly, u: &GridWavefunction) -> Vec<f64> {
    let mut x = vec![0.0; u.dim()];
    (0..u.len())
        .map(|i| {
            u.point_into(i, &mut x);
            v.eval(&x)
        })
        .collect()
}

/// min(0.01, 0.1 sqrt(hbar) / max|grad V|) over the grid.
pub fn default_dt(h: &ModelHamiltonian, u: &GridWavefunction) -> Result<f64> {
    let v = potential_of(h)?;
    let d = u.dim();
    let grads: Vec<RealPoly> = (0..d).map(|i| v.derivative(i)).collect();
    let mut x = vec![0.0; d];
    let mut gmax: f64 = 0.0;
    for i in 0..u.len() {
        u.point_into(i, &mut x);
        let g2: f64 = grads.iter().map(|g| g.eval(&x).powi(2)).sum();
        gmax = gmax.max(g2.sqrt());
    }
    Ok(if gmax > 0.0 { 0.01f64.min(0.1 * u.hbar.sqrt() / gmax) } else { 0.01 })
}

/// Precomputed phase factors for one dt.
pub struct SplitStepper {
    spec: Spectral,
    pot_half: [Vec<Complex64>; 2],
    kin: [Vec<Complex64>; 2],
    pub dt: f64,
}

impl SplitStepper {
    pub fn new(h: &ModelHamiltonian, u: &GridWavefunction, dt: f64) -> Result<Self> {
        let v = potential_of(h)?;
        if h.d != u.dim() {
            return Err(Error::AxisMismatch);
        }
        let vals = sample_potential(&v, u);
        let hbar = u.hbar;
        let pot = |w: f64| -> Vec<Complex64> { vals.iter().map(|&vx| Complex64::from_polar(1.0, -0.5 * w * dt * vx / hbar)).collect() };
        let ks: Vec<Vec<f64>> = u.axes.iter().map(|a| a.wavenumbers()).collect();
        let k2: Vec<f64> = (0..u.len())
            .map(|i| u.multi_index(i).iter().enumerate().map(|(a, &j)| ks[a][j] * ks[a][j]).sum())
            .collect();
        let kin = |w: f64| -> Vec<Complex64> { k2.iter().map(|&k| Complex64::from_polar(1.0, -w * dt * hbar * k)).collect() };
        Ok(SplitStepper { spec: Spectral::new(&u.axes), pot_half: [pot(W1), pot(W0)], kin: [kin(W1), kin(W0)], dt })
    }

    fn strang(&self, data: &mut [Complex64], which: usize) {
        let p = &self.pot_half[which];
        for (v, f) in data.iter_mut().zip(p) {
            *v *= f;
        }
        self.spec.forward(data);
        for (v, f) in data.iter_mut().zip(&self.kin[which]) {
            *v *= f;
        }
        self.spec.inverse(data);
        for (v, f) in data.iter_mut().zip(p) {
            *v *= f;
        }
    }

    pub fn step(&self, data: &mut [Complex64]) {
        self.strang(data, 0);
        self.strang(data, 1);
        self.strang(data, 0);
    }
}

struct Lane {
    stepper: SplitStepper,
    state: GridWavefunction,
    steps: usize,
    max_boundary: f64,
}

impl Lane {
    fn advance(&mut self, n: usize, every: usize, tol: f64) -> Result<()> {
        for k in 0..n {
            self.stepper.step(&mut self.state.values);
            self.steps += 1;
            if (k + 1) % every.max(1) == 0 || k + 1 == n {
                let r = self.state.boundary_ratio();
                self.max_boundary = self.max_boundary.max(r);
                if r > tol {
                    return Err(Error::GridTooSmall(format!(
                        "boundary contamination {r:e} at step {} (t = {:.4})",
                        self.steps,
                        self.steps as f64 * self.stepper.dt
                    )));
                }
            }
        }
        Ok(())
    }
}

fn relative_difference(a: &GridWavefunction, b: &GridWavefunction) -> f64 {
    let num: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.values.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Evolves `u0` through the increasing `times`, calling `observe(i, state)`
/// at each. With the Richardson check on, a dt and a dt/2 lane run in
/// lockstep and dt is halved (restarting) until they agree; after a restart
/// `observe` sees the same indices again and the last call wins.
pub fn split_step_observe(
    h: &ModelHamiltonian,
    u0: &GridWavefunction,
    times: &[f64],
    opts: &SplitStepOptions,
    mut observe: impl FnMut(usize, &GridWavefunction) -> Result<()>,
) -> Result<OracleRun> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::invalid("oracle times must be non-negative and increasing"));
    }
    u0.check_boundary(opts.boundary_tol)?;
    let norm0 = u0.norm();
    let mut dt = match opts.dt {
        Some(dt) if dt > 0.0 => dt,
        Some(_) => return Err(Error::invalid("dt must be positive")),
        None => default_dt(h, u0)?,
    };
    for attempt in 0..=opts.max_refinements {
        // a whole number of steps between consecutive checkpoints
        let counts: Vec<usize> = {
            let mut prev = 0.0;
            times
                .iter()
                .map(|&t| {
                    let n = ((t - prev) / dt - 1e-9).ceil().max(0.0) as usize;
                    prev = t;
                    n
                })
                .collect()
        };
        let mut lanes = vec![Lane { stepper: SplitStepper::new(h, u0, dt)?, state: u0.clone(), steps: 0, max_boundary: 0.0 }];
        if opts.richardson_tol.is_some() {
            lanes.push(Lane { stepper: SplitStepper::new(h, u0, dt / 2.0)?, state: u0.clone(), steps: 0, max_boundary: 0.0 });
        }
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        let mut failed = false;
        for (i, (&t, &n)) in times.iter().zip(&counts).enumerate() {
            let seg = t - prev;
            prev = t;
            for (li, lane) in lanes.iter_mut().enumerate() {
                let steps = n << li;
                if steps > 0 {
                    let sub = seg / steps as f64;
                    if (sub - lane.stepper.dt).abs() > 1e-15 * sub.max(1.0) {
                        lane.stepper = SplitStepper::new(h, u0, sub)?;
                    }
                }
                lane.advance(steps, opts.monitor_every, opts.boundary_tol)?;
            }
            if let Some(tol) = opts.richardson_tol {
                let e = relative_difference(&lanes[0].state, &lanes[1].state);
                worst = worst.max(e);
                if e > tol {
                    failed = true;
                    break;
                }
            }
            observe(i, &lanes.last().unwrap().state)?;
        }
        if failed {
            if attempt == opts.max_refinements {
                return Err(Error::NonConvergence {
                    what: "split-step refinement".into(),
                    detail: format!("dt vs dt/2 difference {worst:e} at dt = {dt:e}"),
                });
            }
            dt /= 2.0;
            continue;
        }
        let fine = lanes.pop().unwrap();
        let norm_drift = (fine.state.norm() - norm0).abs() / norm0.max(1e-300);
        let max_boundary_ratio = fine.max_boundary.max(lanes.first().map_or(0.0, |l| l.max_boundary));
        return Ok(OracleRun {
            dt: fine.stepper.dt,
            steps: fine.steps,
            state: fine.state,
            norm_drift,
            richardson_error: opts.richardson_tol.map(|_| worst),
            max_boundary_ratio,
        });
    }
    unreachable!()
}

pub fn split_step_evolve_with(h: &ModelHamiltonian, u0: &GridWavefunction, t: f64, opts: &SplitStepOptions) -> Result<OracleRun> {
    split_step_observe(h, u0, &[t], opts, |_, _| Ok(()))
}

/// Evolution to time `t` with step `dt` (refined if the dt/2 check fails).
pub fn split_step_evolve(h: &ModelHamiltonian, u0: &GridWavefunction, t: f64, dt: f64) -> Result<GridWavefunction> {
    let opts = SplitStepOptions { dt: Some(dt), ..Default::default() };
    Ok(split_step_evolve_with(h, u0, t, &opts)?.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, params_from, PhasePoint};
    use crate::oracle::metrics::compare;
    use crate::states::grid::Axis;
    use crate::states::wavepacket::{eval_wavepacket, GaussianWavepacket};

    fn free_model() -> ModelHamiltonian {
        let mut sym = RealPoly::zero(2);
        sym.add_term(vec![0, 2], 1.0);
        ModelHamiltonian::from_symbol("free", sym, 1, 1, Default::default())
    }

    #[test]
    fn free_gaussian_closed_form() {
        let hbar = 0.05;
        let h = free_model();
        let axes = vec![Axis::centered(0.0, 0.02, 1024)];
        let u0 = eval_wavepacket(&GaussianWavepacket::coherent(hbar, PhasePoint::new(vec![-1.0], vec![0.5])).unwrap(), &axes).unwrap();
        let t = 1.0;
        let run = split_step_evolve_with(&h, &u0, t, &SplitStepOptions::default()).unwrap();
        // Gamma(t) = i / (1 + 2 i t), centre q = -1 + 2 p t
        let g = Complex64::new(0.0, 1.0) / Complex64::new(1.0, 2.0 * t);
        let (q, p) = (-1.0 + 2.0 * 0.5 * t, 0.5);
        let mut exact = GridWavefunction::from_fn(hbar, axes, |x| {
            let y = x[0] - q;
            (Complex64::new(0.0, 1.0) * (g * y * y / 2.0 + p * y) / hbar).exp()
        });
        let n = exact.norm();
        exact.scale(Complex64::new(1.0 / n, 0.0));
        let m = compare(&run.state, &exact).unwrap();
        assert!(m.phase_insensitive_error < 1e-6, "{m:?}");
        assert!(run.norm_drift < 1e-10);
    }

    #[test]
    fn harmonic_revival_and_norm() {
        let hbar = 0.1;
        let h = make_model("harmonic", &params_from(&[])).unwrap();
        let axes = vec![Axis::centered(0.0, 0.025, 512)];
        let u0 = eval_wavepacket(&GaussianWavepacket::coherent(hbar, PhasePoint::new(vec![0.7], vec![0.0])).unwrap(), &axes).unwrap();
        let run = split_step_evolve_with(&h, &u0, std::f64::consts::PI, &SplitStepOptions { dt: Some(std::f64::consts::PI / 1000.0), ..Default::default() }).unwrap();
        assert!(run.steps >= 1000);
        let m = compare(&run.state, &u0).unwrap();
        assert!(1.0 - m.overlap_mag < 1e-6, "{m:?}");
        assert!(run.norm_drift < 1e-12);
    }

    #[test]
    fn rejects_dilation_and_small_domains() {
        let hbar = 0.1;
        let dil = make_model("dilation", &params_from(&[])).unwrap();
        let axes = vec![Axis::centered(0.0, 0.05, 128)];
        let u0 = eval_wavepacket(&GaussianWavepacket::coherent(hbar, PhasePoint::origin(1)).unwrap(), &axes).unwrap();
        assert!(matches!(split_step_evolve(&dil, &u0, 0.1, 0.01), Err(Error::NotKineticPotential(_))));
        let free = free_model();
        let moving = eval_wavepacket(&GaussianWavepacket::coherent(hbar, PhasePoint::new(vec![0.0], vec![2.0])).unwrap(), &axes).unwrap();
        assert!(matches!(split_step_evolve(&free, &moving, 3.0, 0.01), Err(Error::GridTooSmall(_))));
    }
}
