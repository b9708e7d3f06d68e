//! Hyperbolic splitting along K and linear adapted frames.
//!
//! Along K the linearized flow of the catalog models does not mix central and
//! transverse coordinates, so V^u and V^s are searched inside the transverse
//! coordinate plane span(e_y, e_eta).

use crate::dynamics::flow::flow_map;
use crate::dynamics::rates::{central_indices, sub_block, transverse_indices};
use crate::error::{Error, Result};
use crate::linalg::{j_matrix, RMat, RVec, SymplecticMatrix};
use crate::models::{ModelHamiltonian, PhasePoint};

#[derive(Clone, Debug)]
pub struct Splitting {
    pub base: PhasePoint,
    /// Orthonormal basis of V^u, full phase-space vectors.
    pub unstable: Vec<RVec>,
    pub stable: Vec<RVec>,
    pub central: Vec<RVec>,
    /// Smallest transverse expansion rate measured over the window.
    pub expansion_rate: f64,
    /// Largest principal angle between dPhi^{t0} V^u(rho) and V^u(Phi^{t0} rho).
    pub invariance_residual: f64,
}

fn embed(h: &ModelHamiltonian, idx: &[usize], v: &RVec) -> RVec {
    let mut out = RVec::zeros(2 * h.d);
    for (k, &i) in idx.iter().enumerate() {
        out[i] = v[k];
    }
    out
}

/// Top-`r` left singular vectors, signs fixed so the first nonzero entry is positive.
fn dominant_left(m: &RMat, r: usize) -> Vec<RVec> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    order
        .into_iter()
        .take(r)
        .map(|i| {
            let mut v = u.column(i).into_owned();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-8) {
                if *first < 0.0 {
                    v = -v;
                }
            }
            v
        })
        .collect()
}

/// Largest principal angle between two subspaces given by spanning vectors.
pub fn subspace_angle(a: &[RVec], b: &[RVec]) -> f64 {
    let orth = |vs: &[RVec]| {
        let m = RMat::from_columns(vs);
        m.qr().q()
    };
    let qa = orth(a);
    let qb = orth(b);
    let s = (qa.transpose() * qb).singular_values();
    let smin = s.min().clamp(-1.0, 1.0);
    smin.acos()
}

pub fn hyperbolic_splitting(h: &ModelHamiltonian, rho: &PhasePoint, t: f64) -> Result<Splitting> {
    hyperbolic_splitting_with(h, rho, t, 1.0)
}

pub fn hyperbolic_splitting_with(h: &ModelHamiltonian, rho: &PhasePoint, t: f64, t0: f64) -> Result<Splitting> {
    if h.d_perp == 0 {
        return Err(Error::invalid("model has no transverse directions"));
    }
    let dist = h.distance_to_k(&rho.to_z());
    if dist > 1e-8 {
        return Err(Error::OffInvariantSet(dist));
    }
    let tidx = transverse_indices(h);
    let cidx = central_indices(h);
    let r = h.d_perp;

    // forward Jacobian arriving at rho, and continuing to Phi^{t0} rho
    let (past, _, _) = flow_map(h, rho, -t)?;
    let (_, k_in, _) = flow_map(h, &past, t)?;
    let (ahead, k_t0, _) = flow_map(h, rho, t0)?;
    let k_in_t0 = k_t0.compose(&k_in);
    // backward Jacobian arriving at rho
    let (future, _, _) = flow_map(h, rho, t)?;
    let (_, k_back, _) = flow_map(h, &future, -t)?;

    let block_in = sub_block(k_in.matrix(), &tidx);
    let sv = block_in.singular_values();
    let mut svs: Vec<f64> = sv.iter().copied().collect();
    svs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rate = svs[r - 1].ln() / t;
    if rate < (1.01f64).ln() {
        return Err(Error::DegenerateHyperbolicity(format!("transverse expansion factor per unit time {:.5}", rate.exp())));
    }

    let unstable: Vec<RVec> = dominant_left(&block_in, r).iter().map(|v| embed(h, &tidx, v)).collect();
    let stable: Vec<RVec> = dominant_left(&sub_block(k_back.matrix(), &tidx), r).iter().map(|v| embed(h, &tidx, v)).collect();
    let central: Vec<RVec> = cidx
        .iter()
        .map(|&i| {
            let mut e = RVec::zeros(2 * h.d);
            e[i] = 1.0;
            e
        })
        .collect();

    // invariance: transport V^u(rho) by t0 and compare with V^u(Phi^{t0} rho)
    let pushed: Vec<RVec> = unstable.iter().map(|u| k_t0.matrix() * u).collect();
    let there: Vec<RVec> = dominant_left(&sub_block(k_in_t0.matrix(), &tidx), r).iter().map(|v| embed(h, &tidx, v)).collect();
    let residual = subspace_angle(&pushed, &there);
    let _ = ahead;
    if residual > 1e-2 {
        return Err(Error::DegenerateHyperbolicity(format!("splitting invariance residual {residual:e}")));
    }
    Ok(Splitting { base: rho.clone(), unstable, stable, central, expansion_rate: rate, invariance_residual: residual })
}

impl Splitting {
    /// Chart-to-global matrix G: e_x, e_xi fixed, e_y -> u_i, e_eta -> s_j with
    /// s normalized so that u_i^T J s_j = delta_ij.
    pub fn frame_columns(&self, d: usize, d_par: usize) -> Result<RMat> {
        let r = d - d_par;
        let j = j_matrix(d);
        let w = RMat::from_fn(r, r, |a, b| (self.unstable[a].transpose() * &j * &self.stable[b])[(0, 0)]);
        let winv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateHyperbolicity("V^u and V^s pair degenerately".into()))?;
        let mut g = RMat::zeros(2 * d, 2 * d);
        for i in 0..d_par {
            g[(i, i)] = 1.0;
            g[(d + i, d + i)] = 1.0;
        }
        for a in 0..r {
            g.set_column(d_par + a, &self.unstable[a]);
            let mut s = RVec::zeros(2 * d);
            for b in 0..r {
                s += &self.stable[b] * winv[(b, a)];
            }
            g.set_column(d + d_par + a, &s);
        }
        Ok(g)
    }

    /// Rank of the combined central, unstable and stable bases.
    pub fn spans_phase_space(&self) -> bool {
        let cols: Vec<RVec> = self.central.iter().chain(&self.unstable).chain(&self.stable).cloned().collect();
        let m = RMat::from_columns(&cols);
        m.nrows() == m.ncols() && m.singular_values().min() > 1e-8
    }
}

/// Global-to-chart symplectic map F = G^{-1}: central tangent to the
/// (x, xi)-plane, V^u into the y-plane, V^s into the eta-plane.
pub fn adapted_frame(h: &ModelHamiltonian, rho: &PhasePoint) -> Result<SymplecticMatrix> {
    let split = hyperbolic_splitting(h, rho, default_window(h))?;
    frame_from_splitting(h, &split)
}

pub fn frame_from_splitting(h: &ModelHamiltonian, split: &Splitting) -> Result<SymplecticMatrix> {
    let g = SymplecticMatrix::new(split.frame_columns(h.d, h.d_par)?)?;
    Ok(g.inverse())
}

/// Window long enough for the transverse subspaces to converge at rate ~2.
pub fn default_window(_h: &ModelHamiltonian) -> f64 {
    6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::models::{make_model, params_from};

    fn model(name: &str, pairs: &[(&str, f64)]) -> ModelHamiltonian {
        make_model(name, &params_from(pairs)).unwrap()
    }

    fn parallel(a: &RVec, b: &RVec) -> bool {
        (a.dot(b).abs() / (a.norm() * b.norm()) - 1.0).abs() < 1e-8
    }

    #[test]
    fn nh2d_decoupled_splitting() {
        let h = model("nh2d", &[("epsilon", 0.0)]);
        let s = hyperbolic_splitting(&h, &PhasePoint::new(vec![0.3, 0.0], vec![-0.2, 0.0]), 6.0).unwrap();
        assert!(parallel(&s.unstable[0], &RVec::from_vec(vec![0.0, 1.0, 0.0, 1.0])));
        assert!(parallel(&s.stable[0], &RVec::from_vec(vec![0.0, 1.0, 0.0, -1.0])));
        assert!(s.invariance_residual < 1e-3);
        assert!(s.spans_phase_space());
    }

    #[test]
    fn dilation_splitting() {
        let h = model("dilation", &[]);
        let s = hyperbolic_splitting(&h, &PhasePoint::origin(1), 6.0).unwrap();
        assert!(parallel(&s.unstable[0], &RVec::from_vec(vec![1.0, 0.0])));
        assert!(parallel(&s.stable[0], &RVec::from_vec(vec![0.0, 1.0])));
    }

    #[test]
    fn coupled_rate_matches_frozen_linearization() {
        let eps = 0.1;
        let x0 = 0.5;
        let h = model("nh2d", &[("epsilon", eps)]);
        // x0 on K with xi = 0 is not an equilibrium; the frozen rate is a local check
        let rho = PhasePoint::new(vec![x0, 0.0], vec![0.0, 0.0]);
        let s = hyperbolic_splitting(&h, &rho, 6.0).unwrap();
        let (_, k, _) = flow_map(&h, &rho, 0.05).unwrap();
        let u = &s.unstable[0];
        let grown = (k.matrix() * u).norm();
        let rate = grown.ln() / 0.05;
        let expect = 2.0 * (1.0 - eps * x0).sqrt();
        assert!((rate / expect - 1.0).abs() < 0.05, "{rate} vs {expect}");
    }

    #[test]
    fn adapted_frame_examples() {
        let h = model("nh2d", &[("epsilon", 0.0)]);
        let f = adapted_frame(&h, &PhasePoint::new(vec![0.2, 0.0], vec![0.1, 0.0])).unwrap();
        assert!(f.residual() < 1e-8);
        let u = RVec::from_vec(vec![0.0, 1.0, 0.0, 1.0]);
        let fu = f.matrix() * &u;
        assert!(fu[0].abs() < 1e-10 && fu[2].abs() < 1e-10 && fu[3].abs() < 1e-10);
        let s = RVec::from_vec(vec![0.0, 1.0, 0.0, -1.0]);
        let fs = f.matrix() * &s;
        assert!(fs[0].abs() < 1e-10 && fs[1].abs() < 1e-10 && fs[2].abs() < 1e-10);
        // central tangent vectors keep zero transverse part
        for i in [0usize, 2] {
            let mut e = RVec::zeros(4);
            e[i] = 1.0;
            let fe = f.matrix() * e;
            assert!(fe[1].abs() < 1e-10 && fe[3].abs() < 1e-10);
            assert!((fe[i] - 1.0).abs() < 1e-10);
        }
        let _ = max_abs;
    }

    #[test]
    fn off_k_is_rejected() {
        let h = model("nh2d", &[("epsilon", 0.0)]);
        let r = hyperbolic_splitting(&h, &PhasePoint::new(vec![0.0, 0.1], vec![0.0, 0.0]), 6.0);
        assert!(matches!(r, Err(Error::OffInvariantSet(_))));
        let har = model("harmonic", &[]).with_split(0).unwrap();
        assert!(matches!(hyperbolic_splitting(&har, &PhasePoint::origin(1), 6.0), Err(Error::DegenerateHyperbolicity(_))));
    }
}
