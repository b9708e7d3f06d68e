//! Shadowing diagnostics: a nearby orbit seen in the adapted frames along a
//! reference orbit on K.

use crate::dynamics::flow::flow_map;
use crate::dynamics::rates::{central_indices, transverse_indices};
use crate::dynamics::splitting::adapted_frame;
use crate::error::{Error, Result};
use crate::linalg::{op_norm, RVec};
use crate::models::{ModelHamiltonian, PhasePoint};

#[derive(Clone, Debug)]
pub struct ShadowParams {
    pub eps1: f64,
    pub eps2: f64,
    /// Measured central rate used in the envelope.
    pub lambda_c: f64,
    /// Escape radius for the chart coordinates.
    pub neighborhood: f64,
}

impl Default for ShadowParams {
    fn default() -> Self {
        ShadowParams { eps1: 0.1, eps2: 0.05, lambda_c: 0.0, neighborhood: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct ShadowRow {
    pub step: usize,
    /// Norm of the central chart coordinates (x, xi).
    pub central: f64,
    /// Norm of the unstable chart coordinates y.
    pub unstable: f64,
    /// Norm of the stable chart coordinates eta.
    pub stable: f64,
    pub jacobian_difference: f64,
    pub envelope: f64,
    pub within_envelope: bool,
}

/// Coordinates of Phi^{k t0}(rho) in the adapted frame at Phi^{k t0}(rho_tilde)
/// for k = 0..=n, with the fitted-envelope check
/// |central|, |stable| <= (1 + eps1) e^{(lambda_c + 2 eps2 / 3) k t0} d0.
pub fn shadow_deviation(
    h: &ModelHamiltonian,
    rho: &PhasePoint,
    rho_tilde: &PhasePoint,
    n: usize,
    t0: f64,
    params: &ShadowParams,
) -> Result<Vec<ShadowRow>> {
    let cidx = central_indices(h);
    let tidx = transverse_indices(h);
    let r = h.d_perp;
    let d0 = rho.distance(rho_tilde);
    let mut a = rho.clone();
    let mut b = rho_tilde.clone();
    let mut ka = crate::linalg::SymplecticMatrix::identity(h.d);
    let mut kb = ka.clone();
    let mut rows = Vec::with_capacity(n + 1);
    for step in 0..=n {
        let frame = adapted_frame(h, &b)?;
        let diff = RVec::from_vec(a.to_z().iter().zip(b.to_z()).map(|(x, y)| x - y).collect());
        let w = frame.matrix() * diff;
        let norm_of = |idx: &[usize]| idx.iter().map(|&i| w[i] * w[i]).sum::<f64>().sqrt();
        let central = norm_of(&cidx);
        let unstable = norm_of(&tidx[..r]);
        let stable = norm_of(&tidx[r..]);
        if central.max(unstable).max(stable) > params.neighborhood {
            return Err(Error::Escape { time: step as f64 * t0, bound: params.neighborhood });
        }
        let envelope = (1.0 + params.eps1) * ((params.lambda_c + 2.0 * params.eps2 / 3.0) * step as f64 * t0).exp() * d0;
        rows.push(ShadowRow {
            step,
            central,
            unstable,
            stable,
            jacobian_difference: op_norm(&(ka.matrix() - kb.matrix())),
            envelope,
            within_envelope: central <= envelope && stable <= envelope,
        });
        if step < n {
            let (na, ja, _) = flow_map(h, &a, t0)?;
            let (nb, jb, _) = flow_map(h, &b, t0)?;
            ka = ja.compose(&ka);
            kb = jb.compose(&kb);
            a = na;
            b = nb;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, params_from};

    #[test]
    fn central_offset_is_preserved() {
        let h = make_model("nh2d", &params_from(&[("epsilon", 0.0)])).unwrap();
        let base = PhasePoint::new(vec![0.2, 0.0], vec![0.0, 0.0]);
        let delta = 1e-3;
        let rho = PhasePoint::new(vec![0.2 + delta, 0.0], vec![0.0, 0.0]);
        let rows = shadow_deviation(&h, &rho, &base, 6, 0.5, &ShadowParams::default()).unwrap();
        assert_eq!(rows[0].jacobian_difference, 0.0);
        for r in &rows {
            assert!((r.central / delta - 1.0).abs() < 0.01);
            assert!(r.within_envelope);
        }
    }

    #[test]
    fn stable_offset_contracts() {
        let h = make_model("nh2d", &params_from(&[("epsilon", 0.0)])).unwrap();
        let base = PhasePoint::origin(2);
        let delta = 1e-3;
        // stable direction (0, 1, 0, -1)/sqrt 2
        let s = delta / 2f64.sqrt();
        let rho = PhasePoint::new(vec![0.0, s], vec![0.0, -s]);
        let t0 = 0.25;
        let rows = shadow_deviation(&h, &rho, &base, 8, t0, &ShadowParams::default()).unwrap();
        let s0 = rows[0].stable;
        for r in &rows {
            let expect = s0 * (-2.0 * r.step as f64 * t0).exp();
            assert!((r.stable / expect - 1.0).abs() < 0.1, "{} {}", r.stable, expect);
            assert!(r.within_envelope);
            assert!(r.jacobian_difference < 1e-9);
        }
    }
}
