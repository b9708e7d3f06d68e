//! Oracle-backed experiments: error scaling in hbar, growth of the correction
//! polynomials, breakdown times of order-0 propagation and the full hybrid
//! pipeline on nh2d.
//!
//! Each function runs one self-contained measurement; sweeps over hbar are
//! split into per-point functions so callers can run them concurrently.

use crate::dynamics::flow::flow_map;
use crate::dynamics::rates::{estimate_rates, sample_k, time_thresholds, DynamicalRates, ThresholdParams, Thresholds};
use crate::dynamics::splitting::hyperbolic_splitting;
use crate::error::{Error, Result};
use crate::linalg::op_norm;
use crate::models::{ModelHamiltonian, PhasePoint};
use crate::oracle::metrics::{compare, ErrorMetrics};
use crate::oracle::sizing::{trajectory_axes, GridSizing};
use crate::oracle::slope::{convergence_slope, linear_fit, SlopeFit};
use crate::oracle::split_step::{split_step_evolve_with, split_step_observe, SplitStepOptions};
use crate::propagator::expansion::{evolve_expansion, propagate_order_n, ExpansionState, PropagationOptions};
use crate::propagator::hybrid::{estimate_report, eval_hybrid, hybrid_from_wavepacket, propagate_hybrid_leading, EstimateReport, HybridOptions, HybridState};
use crate::states::grid::Axis;
use crate::states::wavepacket::{eval_wavepacket, eval_wavepacket_unchecked, GaussianWavepacket};

/// Errors below this are treated as exact and excluded from slope fits.
pub const EXACT_ERROR: f64 = 1e-7;

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

fn japanese(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

#[derive(Clone, Debug)]
pub struct ScalingPoint {
    pub hbar: f64,
    pub order: usize,
    pub metrics: ErrorMetrics,
    pub grid_points: usize,
    pub oracle_dt: f64,
    pub richardson: f64,
}

/// Order-0..N errors against the split-step oracle for a coherent state at
/// `center`, all orders sharing one oracle run.
pub fn scaling_point(h: &ModelHamiltonian, center: &PhasePoint, t: f64, hbar: f64, orders: &[usize], sizing: &GridSizing) -> Result<Vec<ScalingPoint>> {
    scaling_point_with(h, center, t, hbar, orders, sizing, &SplitStepOptions::default())
}

pub fn scaling_point_with(
    h: &ModelHamiltonian,
    center: &PhasePoint,
    t: f64,
    hbar: f64,
    orders: &[usize],
    sizing: &GridSizing,
    oracle: &SplitStepOptions,
) -> Result<Vec<ScalingPoint>> {
    let s = GaussianWavepacket::coherent(hbar, center.clone())?;
    let axes = stage("grid sizing", trajectory_axes(h, &s, t, sizing))?;
    let u0 = eval_wavepacket(&s, &axes)?;
    let run = stage("oracle", split_step_evolve_with(h, &u0, t, oracle))?;
    let top = orders.iter().copied().max().unwrap_or(0);
    let e = stage("expansion", propagate_order_n(h, &s, t, top))?;
    orders
        .iter()
        .map(|&n| {
            let approx = eval_wavepacket_unchecked(&e.wavepacket_to(n)?, &axes)?;
            Ok(ScalingPoint {
                hbar,
                order: n,
                metrics: compare(&approx, &run.state)?,
                grid_points: u0.len(),
                oracle_dt: run.dt,
                richardson: run.richardson_error.unwrap_or(0.0),
            })
        })
        .collect()
}

/// Log-log slope of the phase-insensitive error against hbar for `order`;
/// `None` when every error is below [`EXACT_ERROR`] (exact propagation).
pub fn scaling_slope(points: &[ScalingPoint], order: usize) -> Result<Option<SlopeFit>> {
    let pairs: Vec<(f64, f64)> = points.iter().filter(|p| p.order == order).map(|p| (p.hbar, p.metrics.phase_insensitive_error)).collect();
    if pairs.iter().all(|&(_, e)| e < EXACT_ERROR) {
        return Ok(None);
    }
    convergence_slope(&pairs).map(Some)
}

#[derive(Clone, Debug)]
pub struct GrowthSample {
    pub t: f64,
    pub kappa_norm: f64,
    /// N_inf(P^n) for n = 1..N.
    pub norms: Vec<f64>,
    pub degrees: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct GrowthFit {
    pub n: usize,
    /// ln N_inf(P^n) against ln(<t>^n |kappa_t|^{3n}).
    pub fit: SlopeFit,
    /// Smallest C with N_inf(P^n) <= C <t>^n |kappa_t|^{3n} on the samples.
    pub constant: f64,
}

#[derive(Clone, Debug)]
pub struct GrowthReport {
    pub samples: Vec<GrowthSample>,
    pub fits: Vec<GrowthFit>,
    /// deg P^n <= 3n at every sample.
    pub degree_ok: bool,
}

/// Samples the correction polynomials at `count` equally spaced times in
/// (0, t_max] and fits their sup norms against the predicted growth shape.
pub fn growth_diagnostic(h: &ModelHamiltonian, s: &GaussianWavepacket, t_max: f64, count: usize, order: usize) -> Result<GrowthReport> {
    if order == 0 || count < 3 {
        return Err(Error::invalid("growth diagnostic needs order >= 1 and at least three samples"));
    }
    let times: Vec<f64> = (1..=count).map(|k| t_max * k as f64 / count as f64).collect();
    let st = ExpansionState::from_wavepacket(s, order)?;
    let mut samples = Vec::with_capacity(count);
    let mut degree_ok = true;
    evolve_expansion(h, &st, &times, &PropagationOptions::default(), |e| {
        let degrees = e.degrees();
        degree_ok &= degrees.iter().enumerate().all(|(n, &k)| k as usize <= 3 * n + s.poly.degree() as usize);
        samples.push(GrowthSample {
            t: e.time,
            kappa_norm: op_norm(e.kappa.matrix()),
            norms: (1..=order).map(|n| e.correction_norm(n)).collect(),
            degrees,
        });
        Ok(())
    })?;
    let mut fits = Vec::new();
    for n in 1..=order {
        let reg = |g: &GrowthSample| (n as f64) * (japanese(g.t).ln() + 3.0 * g.kappa_norm.ln());
        let pts: Vec<(f64, f64)> = samples.iter().filter(|g| g.norms[n - 1] > 0.0).map(|g| (reg(g), g.norms[n - 1].ln())).collect();
        if pts.len() < 3 {
            return Err(Error::invalid(format!("P^{n} vanishes at the sampled times")));
        }
        let constant = samples.iter().map(|g| g.norms[n - 1] / reg(g).exp()).fold(0.0, f64::max);
        fits.push(GrowthFit { n, fit: linear_fit(&pts)?, constant });
    }
    Ok(GrowthReport { samples, fits, degree_ok })
}

#[derive(Clone, Debug)]
pub struct BreakdownOptions {
    pub threshold: f64,
    /// Observation window as a fraction of the Ehrenfest time; `None` runs
    /// as long as the oracle grid stays within `sizing.max_points`.
    pub window: Option<f64>,
    pub observations: usize,
    /// Orders tracked alongside order 0.
    pub orders: Vec<usize>,
    pub sizing: GridSizing,
    pub oracle: SplitStepOptions,
}

impl Default for BreakdownOptions {
    fn default() -> Self {
        BreakdownOptions { threshold: 0.25, window: None, observations: 120, orders: vec![0], sizing: GridSizing::default(), oracle: SplitStepOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct BreakdownPoint {
    pub hbar: f64,
    pub t_ehrenfest: f64,
    pub times: Vec<f64>,
    /// L2 error (phase included) per tracked order, per observation time.
    pub errors: Vec<Vec<f64>>,
    /// First crossing of the threshold per order (linear interpolation), if any.
    pub breakdown: Vec<Option<f64>>,
    pub grid_points: usize,
    /// The oracle left its grid before the end of the window.
    pub truncated: bool,
}

fn first_crossing(times: &[f64], errors: &[f64], threshold: f64) -> Option<f64> {
    let k = errors.iter().position(|&e| e > threshold)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (e0, e1) = (errors[k - 1], errors[k]);
    Some(times[k - 1] + (threshold - e0) / (e1 - e0) * (times[k] - times[k - 1]))
}

/// Longest time in (0, t_cap] whose trajectory grid fits the sizing budget.
pub fn budget_window(h: &ModelHamiltonian, s: &GaussianWavepacket, t_cap: f64, sizing: &GridSizing) -> Result<f64> {
    let fits = |t: f64| match trajectory_axes(h, s, t, sizing) {
        Ok(_) => Ok(true),
        Err(Error::GridTooSmall(_)) => Ok(false),
        Err(e) => Err(e),
    };
    if fits(t_cap)? {
        return Ok(t_cap);
    }
    let (mut lo, mut hi) = (0.0, t_cap);
    while hi - lo > 1e-3 * t_cap {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::GridTooSmall("the initial state does not fit the grid budget".into()));
    }
    Ok(lo)
}

/// Time at which the expansion error (phase included) against the oracle
/// first exceeds the threshold, for a coherent state at `center`.
pub fn breakdown_point(h: &ModelHamiltonian, center: &PhasePoint, hbar: f64, lambda: f64, opts: &BreakdownOptions) -> Result<BreakdownPoint> {
    let t_e = hbar.ln().abs() / (2.0 * lambda);
    let s = GaussianWavepacket::coherent(hbar, center.clone())?;
    let t_end = match opts.window {
        Some(w) => w * t_e,
        None => stage("grid sizing", budget_window(h, &s, t_e, &opts.sizing))?,
    };
    let times: Vec<f64> = (1..=opts.observations).map(|k| t_end * k as f64 / opts.observations as f64).collect();
    let axes = stage("grid sizing", trajectory_axes(h, &s, t_end, &opts.sizing))?;
    let top = opts.orders.iter().copied().max().unwrap_or(0);
    let mut packets: Vec<Vec<GaussianWavepacket>> = vec![Vec::new(); opts.orders.len()];
    let st = ExpansionState::from_wavepacket(&s, top)?;
    stage(
        "expansion",
        evolve_expansion(h, &st, &times, &PropagationOptions::default(), |e| {
            for (slot, &n) in packets.iter_mut().zip(&opts.orders) {
                slot.push(e.wavepacket_to(n)?);
            }
            Ok(())
        }),
    )?;
    let u0 = eval_wavepacket(&s, &axes)?;
    let mut errors = vec![vec![0.0; times.len()]; opts.orders.len()];
    // observations made so far; the run stops once every order has crossed
    let mut seen = 0;
    let result = split_step_observe(h, &u0, &times, &opts.oracle, |i, u| {
        for (k, p) in packets.iter().enumerate() {
            errors[k][i] = compare(&eval_wavepacket_unchecked(&p[i], &axes)?, u)?.l2_error;
        }
        seen = i + 1;
        if errors.iter().all(|e| e[..seen].iter().any(|&v| v > opts.threshold)) {
            return Err(Error::Threshold("all orders past the threshold".into()));
        }
        Ok(())
    });
    let truncated = match result {
        Ok(_) => false,
        Err(Error::Threshold(_)) => false,
        // the exact state outgrew the grid after some observations: keep them
        Err(Error::GridTooSmall(_)) if seen > 0 => true,
        Err(e) => return Err(Error::Stage { stage: "oracle".into(), source: Box::new(e) }),
    };
    let mut times = times;
    times.truncate(seen);
    for e in errors.iter_mut() {
        e.truncate(seen);
    }
    let breakdown = errors.iter().map(|e| first_crossing(&times, e, opts.threshold)).collect();
    Ok(BreakdownPoint { hbar, t_ehrenfest: t_e, times, errors, breakdown, grid_points: u0.len(), truncated })
}

/// Breakdown time against |ln hbar| for the order at position `k`.
pub fn breakdown_fit(points: &[BreakdownPoint], k: usize) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            p.breakdown[k]
                .map(|t| (p.hbar.ln().abs(), t))
                .ok_or_else(|| Error::Threshold(format!("error threshold never reached within the window at hbar = {:e}", p.hbar)))
        })
        .collect::<Result<_>>()?;
    linear_fit(&pts)
}

/// Interval [1/(6 lambda), 1/(2 lambda)] widened by the relative `slack`.
pub fn breakdown_interval(lambda: f64, slack: f64) -> (f64, f64) {
    ((1.0 - slack) / (6.0 * lambda), (1.0 + slack) / (2.0 * lambda))
}

#[derive(Clone, Debug)]
pub struct HybridConfig {
    pub epsilon: f64,
    pub hbar: f64,
    pub center: PhasePoint,
    /// Switch and final times as fractions of the Ehrenfest time.
    pub switch_fraction: f64,
    pub final_fraction: f64,
    pub steps: usize,
    /// Graph samples; 0 picks a count that keeps the final amplitude resolved.
    pub samples: usize,
    pub alpha: f64,
    pub estimate_constant: f64,
    /// Order-0 error observations between 0 and the final time.
    pub observations: usize,
    pub sizing: GridSizing,
    pub oracle: SplitStepOptions,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            epsilon: 0.1,
            hbar: 1e-3,
            center: PhasePoint::origin(2),
            switch_fraction: 0.6,
            final_fraction: 0.8,
            steps: 8,
            samples: 0,
            alpha: 0.05,
            estimate_constant: 10.0,
            observations: 16,
            sizing: GridSizing { q_margin: 7.0, p_margin: 7.0, ..GridSizing::default() },
            // refined automatically until the dt/2 check passes
            oracle: SplitStepOptions { dt: Some(0.0025), ..SplitStepOptions::default() },
        }
    }
}

#[derive(Clone, Debug)]
pub struct HybridRun {
    pub rates: DynamicalRates,
    pub thresholds: Thresholds,
    pub switch_time: f64,
    pub final_time: f64,
    pub reports: Vec<EstimateReport>,
    pub states: Vec<HybridState>,
    /// Largest isotropy residual over all graphs.
    pub isotropy: f64,
    /// exp(-log J / 2) from the back-map determinants at the base point.
    pub back_map_factor: f64,
    /// J_u^{-1/2} from the linearized flow along the unstable direction.
    pub ju_factor: f64,
    /// sup|u_0| at the end over sup|u_0| at the switch.
    pub amplitude_factor: f64,
    pub hybrid: ErrorMetrics,
    pub order0_final: ErrorMetrics,
    pub order0_times: Vec<f64>,
    pub order0_errors: Vec<f64>,
    pub axes: Vec<Axis>,
}

impl HybridRun {
    /// First observation where plain order-0 exceeds `threshold` (L2 error).
    pub fn order0_breakdown(&self, threshold: f64) -> Option<f64> {
        first_crossing(&self.order0_times, &self.order0_errors, threshold)
    }
}

/// Order-0 up to the switch, conversion to a hybrid state, leading-order
/// hybrid steps to the final time, and the oracle comparison.
/// `on_step` sees every hybrid state with its estimate report.
pub fn run_hybrid(cfg: &HybridConfig, mut on_step: impl FnMut(&HybridState, &EstimateReport) -> Result<()>) -> Result<HybridRun> {
    let h = stage("model", crate::models::make_model("nh2d", &crate::models::params_from(&[("epsilon", cfg.epsilon)])))?;
    let rates = stage("rates", estimate_rates(&h, &sample_k(&h, 5, 0.5), 3.0, cfg.alpha))?;
    let thresholds = stage("thresholds", time_thresholds(&rates, cfg.hbar, &ThresholdParams::default()))?;
    let t_e = thresholds.t_ehrenfest;
    let (t_s, t_f) = (cfg.switch_fraction * t_e, cfg.final_fraction * t_e);
    if !(0.0 < t_s && t_s < t_f) {
        return Err(Error::invalid("need 0 < switch time < final time"));
    }
    let s0 = GaussianWavepacket::coherent(cfg.hbar, cfg.center.clone())?;
    let s_switch = stage("order-0 to switch", propagate_order_n(&h, &s0, t_s, 0))?.base;
    let split = stage("splitting", hyperbolic_splitting(&h, &s_switch.center, 6.0))?;

    // room for the amplitude at the final time
    let lambda = rates.lambda_max;
    let grow = (lambda * (t_f - t_s)).exp();
    let width = s_switch.position_spread()?;
    let samples = if cfg.samples > 0 { cfg.samples } else { (80.0 * grow).ceil().max(257.0) as usize | 1 };
    let opts = HybridOptions { half_width: Some(12.0 * width * grow), samples };
    let mut hs = stage("conversion", hybrid_from_wavepacket(&h, &s_switch, &split, &opts))?;
    hs.provenance.insert(0, format!("order-0 propagation to t={t_s}"));
    let start_sup = hs.amplitude_sup();
    let mut reports = Vec::new();
    let mut states = vec![hs.clone()];
    let mut isotropy = hs.graph.isotropy_residual();
    let dt = (t_f - t_s) / cfg.steps as f64;
    // envelopes are measured from the initial coherent state
    let first = stage("estimate report", estimate_report(&hs, &rates, t_s, cfg.estimate_constant))?;
    on_step(&hs, &first)?;
    reports.push(first);
    for k in 1..=cfg.steps {
        hs = stage(&format!("hybrid step {k}"), propagate_hybrid_leading(&h, &hs, dt))?;
        isotropy = isotropy.max(hs.graph.isotropy_residual());
        let r = stage("estimate report", estimate_report(&hs, &rates, t_s + k as f64 * dt, cfg.estimate_constant))?;
        on_step(&hs, &r)?;
        reports.push(r);
        states.push(hs.clone());
    }

    let (_, jac, _) = stage("unstable jacobian", flow_map(&h, &split.base, t_f - t_s))?;
    let ju = (jac.matrix() * &split.unstable[0]).norm() / split.unstable[0].norm();

    let axes = stage("oracle grid", trajectory_axes(&h, &s0, t_f, &cfg.sizing))?;
    let obs: Vec<f64> = (1..=cfg.observations).map(|k| t_f * k as f64 / cfg.observations as f64).collect();
    let mut packets = Vec::with_capacity(obs.len());
    stage(
        "order-0 reference",
        evolve_expansion(&h, &ExpansionState::from_wavepacket(&s0, 0)?, &obs, &PropagationOptions::default(), |e| {
            packets.push(e.base.clone());
            Ok(())
        }),
    )?;
    let hybrid_grid = stage("hybrid evaluation", eval_hybrid(&hs, &axes))?;
    let u0 = eval_wavepacket(&s0, &axes)?;
    let mut order0_errors = vec![0.0; obs.len()];
    let mut order0_final = None;
    let mut hybrid = None;
    let last = obs.len() - 1;
    stage(
        "oracle",
        split_step_observe(&h, &u0, &obs, &cfg.oracle, |i, u| {
            let m = compare(&eval_wavepacket_unchecked(&packets[i], &axes)?, u)?;
            order0_errors[i] = m.l2_error;
            if i == last {
                order0_final = Some(m);
                hybrid = Some(compare(&hybrid_grid, u)?);
            }
            Ok(())
        }),
    )?;
    Ok(HybridRun {
        rates,
        thresholds,
        switch_time: t_s,
        final_time: t_f,
        reports,
        states,
        isotropy,
        back_map_factor: (-0.5 * hs.log_unstable_jacobian).exp(),
        ju_factor: 1.0 / ju.sqrt(),
        amplitude_factor: hs.amplitude_sup() / start_sup,
        hybrid: hybrid.expect("final observation"),
        order0_final: order0_final.expect("final observation"),
        order0_times: obs,
        order0_errors,
        axes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, params_from};

    #[test]
    fn crossing_interpolates() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(first_crossing(&t, &[0.1, 0.2, 0.3], 0.25), Some(2.5));
        assert_eq!(first_crossing(&t, &[0.1, 0.2, 0.2], 0.25), None);
    }

    #[test]
    fn quadratic_scaling_is_degenerate() {
        let h = make_model("harmonic", &params_from(&[])).unwrap();
        let c = PhasePoint::new(vec![0.5], vec![0.0]);
        let pts: Vec<ScalingPoint> = [1e-2, 3e-3, 1e-3]
            .iter()
            .flat_map(|&hb| scaling_point(&h, &c, 1.0, hb, &[0, 1], &GridSizing::default()).unwrap())
            .collect();
        assert!(pts.iter().all(|p| p.metrics.phase_insensitive_error < EXACT_ERROR));
        assert!(scaling_slope(&pts, 0).unwrap().is_none());
    }

    #[test]
    fn growth_is_exact_zero_for_quadratic_models() {
        let h = make_model("harmonic", &params_from(&[])).unwrap();
        let s = GaussianWavepacket::coherent(1e-2, PhasePoint::new(vec![0.5], vec![0.0])).unwrap();
        assert!(growth_diagnostic(&h, &s, 1.0, 5, 2).is_err());
    }

    #[test]
    fn growth_on_the_cubic_saddle() {
        let h = make_model("saddle_cubic", &params_from(&[("beta", 0.3)])).unwrap();
        let s = GaussianWavepacket::coherent(1e-4, PhasePoint::origin(1)).unwrap();
        let t_cr = 1e-4f64.ln().abs() / 12.0;
        let r = growth_diagnostic(&h, &s, t_cr, 16, 2).unwrap();
        assert!(r.degree_ok);
        for f in &r.fits {
            assert!(f.fit.r_squared >= 0.9, "n = {}: {:?}", f.n, f.fit);
        }
    }

    #[test]
    fn quadratic_saddle_never_breaks_down() {
        let h = make_model("saddle_cubic", &params_from(&[("beta", 0.0)])).unwrap();
        let opts = BreakdownOptions { observations: 10, window: Some(0.6), ..Default::default() };
        let p = breakdown_point(&h, &PhasePoint::origin(1), 1e-3, 2.0, &opts).unwrap();
        assert_eq!(p.breakdown, vec![None]);
        assert!(p.errors[0].iter().all(|&e| e < 1e-6));
        assert!(breakdown_fit(&[p], 0).is_err());
    }
}
