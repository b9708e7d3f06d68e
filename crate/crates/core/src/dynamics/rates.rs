//! Lyapunov exponents, central growth and the time thresholds.

use crate::dynamics::flow::flow_map;
use crate::error::{Error, Result};
use crate::linalg::{op_norm, RMat, SymplecticMatrix};
use crate::models::{ModelHamiltonian, PhasePoint};

/// Indices of the central coordinates (x's then xi's) in phase space.
pub fn central_indices(h: &ModelHamiltonian) -> Vec<usize> {
    (0..h.d_par).chain(h.d..h.d + h.d_par).collect()
}

/// Indices of the transverse coordinates (y's then eta's).
pub fn transverse_indices(h: &ModelHamiltonian) -> Vec<usize> {
    (h.d_par..h.d).chain(h.d + h.d_par..2 * h.d).collect()
}

pub fn sub_block(m: &RMat, idx: &[usize]) -> RMat {
    RMat::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Max over seeds of log||kappa_T|| / T. Errors when the estimates over
/// [0, T/2] and [0, T] disagree by more than 5% (absolute floor 0.02).
pub fn lyapunov_max(h: &ModelHamiltonian, seeds: &[PhasePoint], t: f64) -> Result<f64> {
    if seeds.is_empty() || !(t > 0.0) {
        return Err(Error::invalid("lyapunov_max needs seeds and T > 0"));
    }
    let mut best: f64 = 0.0;
    for s in seeds {
        let (mid, k_half, _) = flow_map(h, s, 0.5 * t)?;
        let (_, k_rest, _) = flow_map(h, &mid, 0.5 * t)?;
        let k_full = k_rest.compose(&k_half);
        let l_half = op_norm(k_half.matrix()).ln() / (0.5 * t);
        let l_full = op_norm(k_full.matrix()).ln() / t;
        if (l_full - l_half).abs() > (0.05 * l_full.abs()).max(0.02) {
            return Err(Error::NonConvergence {
                what: "lyapunov_max".into(),
                detail: format!("windows disagree: {l_half:.4} over T/2 vs {l_full:.4} over T"),
            });
        }
        best = best.max(l_full);
    }
    Ok(best.max(0.0))
}

#[derive(Clone, Debug)]
pub struct CentralGrowth {
    pub sample_max: f64,
    pub sample_mean: f64,
    pub samples: usize,
}

/// Operator norm of the Jacobian restricted to T K, maximized over samples on K.
pub fn central_growth(h: &ModelHamiltonian, k_samples: &[PhasePoint], t: f64) -> Result<CentralGrowth> {
    let idx = central_indices(h);
    if idx.is_empty() {
        return Err(Error::invalid("model has no central directions"));
    }
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for s in k_samples {
        let dist = h.distance_to_k(&s.to_z());
        if dist > 1e-10 {
            return Err(Error::OffInvariantSet(dist));
        }
        let (_, k, _) = flow_map(h, s, t)?;
        let n = op_norm(&sub_block(k.matrix(), &idx));
        max = max.max(n);
        sum += n;
    }
    Ok(CentralGrowth { sample_max: max, sample_mean: sum / k_samples.len().max(1) as f64, samples: k_samples.len() })
}

/// Uniform grid of `n` points per central axis on K, central coordinates in
/// [-radius, radius].
pub fn sample_k(h: &ModelHamiltonian, n: usize, radius: f64) -> Vec<PhasePoint> {
    let dc = 2 * h.d_par;
    let axis: Vec<f64> = if n <= 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -radius + 2.0 * radius * i as f64 / (n - 1) as f64).collect()
    };
    let mut out = Vec::new();
    let total = axis.len().pow(dc as u32);
    for mut code in 0..total {
        let mut z = vec![0.0; 2 * h.d];
        for c in 0..dc {
            let v = axis[code % axis.len()];
            code /= axis.len();
            let i = if c < h.d_par { c } else { h.d + (c - h.d_par) };
            z[i] = v;
        }
        out.push(PhasePoint::from_z(&z));
    }
    out
}

#[derive(Clone, Debug)]
pub struct DynamicalRates {
    pub lambda_max: f64,
    pub lambda_c: f64,
    pub nu_min_perp: f64,
    /// Growth rate used for sigma_c when lambda_c vanishes.
    pub alpha: f64,
    /// Measured (t, sigma_c) pairs; empty means use exp(max(lambda_c, alpha) t).
    pub sigma_table: Vec<(f64, f64)>,
    pub normally_hyperbolic_r3: bool,
}

impl DynamicalRates {
    pub fn new(lambda_max: f64, lambda_c: f64, nu_min_perp: f64) -> Self {
        DynamicalRates {
            lambda_max,
            lambda_c,
            nu_min_perp,
            alpha: 0.05,
            sigma_table: Vec::new(),
            normally_hyperbolic_r3: nu_min_perp > 3.0 * lambda_c,
        }
    }

    pub fn sigma_c(&self, t: f64) -> f64 {
        if self.sigma_table.len() >= 2 {
            let tab = &self.sigma_table;
            if t <= tab[0].0 {
                return tab[0].1;
            }
            for w in tab.windows(2) {
                if t <= w[1].0 {
                    let s = (t - w[0].0) / (w[1].0 - w[0].0);
                    return w[0].1 + s * (w[1].1 - w[0].1);
                }
            }
            return tab[tab.len() - 1].1;
        }
        (self.lambda_c.max(self.alpha) * t).exp()
    }
}

/// Estimate all rates from samples on K over the window T.
pub fn estimate_rates(h: &ModelHamiltonian, k_samples: &[PhasePoint], t: f64, alpha: f64) -> Result<DynamicalRates> {
    let cidx = central_indices(h);
    let tidx = transverse_indices(h);
    let mut lambda_max: f64 = 0.0;
    let mut lambda_c: f64 = 0.0;
    let mut nu_min = f64::INFINITY;
    let steps = 8;
    let mut table = vec![(0.0, 1.0)];
    let mut per_step = vec![0.0f64; steps];
    for s in k_samples {
        let mut rho = s.clone();
        let mut k = SymplecticMatrix::identity(h.d);
        for (j, slot) in per_step.iter_mut().enumerate() {
            let (next, kj, _) = flow_map(h, &rho, t / steps as f64)?;
            k = kj.compose(&k);
            rho = next;
            if !cidx.is_empty() {
                *slot = slot.max(op_norm(&sub_block(k.matrix(), &cidx)));
            }
            let _ = j;
        }
        lambda_max = lambda_max.max(op_norm(k.matrix()).ln() / t);
        if !cidx.is_empty() {
            lambda_c = lambda_c.max(op_norm(&sub_block(k.matrix(), &cidx)).ln() / t);
        }
        if !tidx.is_empty() {
            let sv = sub_block(k.matrix(), &tidx).singular_values();
            let mut v: Vec<f64> = sv.iter().copied().collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            nu_min = nu_min.min(v[h.d_perp - 1].ln() / t);
        }
    }
    for (j, s) in per_step.iter().enumerate() {
        table.push((t * (j + 1) as f64 / steps as f64, if cidx.is_empty() { 1.0 } else { *s }));
    }
    let mut rates = DynamicalRates::new(lambda_max.max(0.0), lambda_c.max(0.0), if nu_min.is_finite() { nu_min } else { 0.0 });
    rates.alpha = alpha;
    rates.sigma_table = table;
    Ok(rates)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub t_ehrenfest: f64,
    pub t_cr: f64,
    pub t_packet_max: f64,
    pub t_hybrid_max: f64,
}

#[derive(Clone, Debug)]
pub struct ThresholdParams {
    /// Loss epsilon in the wavepacket propagation window.
    pub epsilon: f64,
    /// Localization exponent tau of the hybrid window.
    pub tau: f64,
    /// Constant C used when lambda_c = 0.
    pub c_when_flat: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams { epsilon: 0.01, tau: 0.5, c_when_flat: 1.0 }
    }
}

/// Central rates at or below this count as zero.
pub const FLAT_RATE: f64 = 1e-8;

pub fn time_thresholds(rates: &DynamicalRates, hbar: f64, params: &ThresholdParams) -> Result<Thresholds> {
    if !(hbar > 0.0 && hbar < 1.0) {
        return Err(Error::invalid(format!("hbar = {hbar} must lie in (0, 1)")));
    }
    if !(rates.lambda_max > 0.0) {
        return Err(Error::invalid("lambda_max must be positive for finite thresholds"));
    }
    let l = hbar.ln().abs();
    let t_e = l / (2.0 * rates.lambda_max);
    // measured central rates of order 1e-16 are roundoff: treat as flat
    let t_hybrid = if rates.lambda_c > FLAT_RATE {
        (params.tau / rates.lambda_c).min(1.0 / (6.0 * rates.lambda_c)) * l
    } else {
        params.c_when_flat * l
    };
    Ok(Thresholds {
        t_ehrenfest: t_e,
        t_cr: t_e / 3.0,
        t_packet_max: (1.0 / (2.0 * rates.lambda_max) - params.epsilon) * l,
        t_hybrid_max: t_hybrid,
    })
}

impl Thresholds {
    pub fn to_key_values(&self) -> String {
        format!(
            "t_ehrenfest = {:.10}\nt_cr = {:.10}\nt_packet_max = {:.10}\nt_hybrid_max = {:.10}\n",
            self.t_ehrenfest, self.t_cr, self.t_packet_max, self.t_hybrid_max
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, params_from};

    fn model(name: &str, pairs: &[(&str, f64)]) -> ModelHamiltonian {
        make_model(name, &params_from(pairs)).unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let dil = model("dilation", &[]);
        let l = lyapunov_max(&dil, &[PhasePoint::origin(1)], 10.0).unwrap();
        assert!((l - 1.0).abs() < 0.01);
        let har = model("harmonic", &[]);
        assert!(lyapunov_max(&har, &[PhasePoint::new(vec![1.0], vec![0.0])], 20.0).unwrap() < 0.01);
        let nh = model("nh2d", &[("epsilon", 0.0)]);
        let seeds = sample_k(&nh, 3, 0.5);
        let l = lyapunov_max(&nh, &seeds, 6.0).unwrap();
        assert!((l - 2.0).abs() < 0.02, "{l}");
    }

    #[test]
    fn central_growth_examples() {
        let nh = model("nh2d", &[("epsilon", 0.1)]);
        let g = central_growth(&nh, &sample_k(&nh, 3, 0.5), 2.0).unwrap();
        assert!(g.sample_max <= 1.0 + 1e-6);
        let dil = model("dilation", &[]).with_split(1).unwrap();
        let g = central_growth(&dil, &[PhasePoint::origin(1)], 1.0).unwrap();
        assert!((g.sample_max - std::f64::consts::E).abs() < 1e-8);
        let off = PhasePoint::new(vec![0.0, 0.1], vec![0.0, 0.0]);
        assert!(matches!(central_growth(&nh, &[off], 1.0), Err(Error::OffInvariantSet(_))));
        let har = model("harmonic", &[]);
        let a = central_growth(&har, &[PhasePoint::new(vec![0.5], vec![0.0])], 10.0).unwrap();
        assert!(a.sample_max < 1.0 + 1e-8);
    }

    #[test]
    fn thresholds() {
        let r = DynamicalRates::new(2.0, 0.0, 2.0);
        let th = time_thresholds(&r, 1e-4, &ThresholdParams::default()).unwrap();
        assert!((th.t_ehrenfest - 2.302585).abs() < 1e-5);
        assert!((th.t_cr - 0.767528).abs() < 1e-5);
        assert_eq!(th.t_cr, th.t_ehrenfest / 3.0);
        assert!(th.t_packet_max < th.t_ehrenfest);
        assert!((th.t_hybrid_max - 1e4f64.ln()).abs() < 1e-12);
        assert!(time_thresholds(&r, 1.0, &ThresholdParams::default()).is_err());
        assert!(time_thresholds(&DynamicalRates::new(0.0, 0.0, 1.0), 0.1, &ThresholdParams::default()).is_err());
    }

    #[test]
    fn rates_for_nh2d() {
        let nh = model("nh2d", &[("epsilon", 0.0)]);
        let r = estimate_rates(&nh, &sample_k(&nh, 2, 0.3), 5.0, 0.05).unwrap();
        assert!((r.lambda_max - 2.0).abs() < 0.02);
        assert!(r.lambda_c < 1e-6);
        assert!((r.nu_min_perp - 2.0).abs() < 0.02);
        assert!(r.normally_hyperbolic_r3);
        assert!(r.sigma_c(2.5) <= 1.0 + 1e-6);
    }
}
