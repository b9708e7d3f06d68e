//! Text formats for expansion and hybrid states.
//!
//! Both start with a header line, then `key value...` lines, then `rows`
//! followed by one line per sample. Floats use shortest round-trip form.
//!
//! ```text
//! # expansion-state v1
//! hbar, order, time, d, center (q.. p..), kappa (row-major), chi,
//! arg_det_m, action, max_degree
//! rows: <n> <k_1..k_d> <re> <im>      (nonzero number-basis coefficients of v_n)
//!
//! # hybrid-state v1
//! hbar, d_par, time, step, delta, nu, initial_sup, log_unstable_jacobian,
//! base (q.. p..), frame (row-major), grid (y_min dy n), gammas (one
//! multi-index per amplitude, `;`-separated), provenance (`;`-separated)
//! rows: <x_bar..> <xi_bar..> <eta> <phi> <action> <origin> <re/im G_ij..> <re/im u_g..>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::dynamics::graph::ManifoldGraph;
use crate::error::{Error, Result};
use crate::linalg::{CMat, RMat, SymplecticMatrix};
use crate::models::PhasePoint;
use crate::poly::MultiIndex;
use crate::propagator::expansion::{ExpansionState, NumberBasis};
use crate::propagator::hybrid::HybridState;
use crate::states::wavepacket::GaussianWavepacket;

pub const EXPANSION_HEADER: &str = "# expansion-state v1";
pub const HYBRID_HEADER: &str = "# hybrid-state v1";

fn floats(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

struct Doc<'a> {
    fields: BTreeMap<&'a str, &'a str>,
    rows: Vec<&'a str>,
}

fn split_doc<'a>(text: &'a str, header: &str) -> Result<Doc<'a>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(Error::Parse(format!("expected `{header}`")));
    }
    let mut fields = BTreeMap::new();
    let mut rows = Vec::new();
    let mut in_rows = false;
    for l in lines {
        if l.trim().is_empty() {
            continue;
        }
        if in_rows {
            rows.push(l);
        } else if l.trim() == "rows" {
            in_rows = true;
        } else {
            let (k, v) = l.split_once(' ').unwrap_or((l, ""));
            fields.insert(k, v.trim());
        }
    }
    if !in_rows {
        return Err(Error::Parse("missing `rows`".into()));
    }
    Ok(Doc { fields, rows })
}

impl<'a> Doc<'a> {
    fn raw(&self, key: &str) -> Result<&'a str> {
        self.fields.get(key).copied().ok_or_else(|| Error::Parse(format!("missing `{key}`")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.raw(key)?.parse().map_err(|_| Error::Parse(format!("bad `{key}`")))
    }

    fn list(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let v = parse_floats(self.raw(key)?)?;
        if v.len() != n {
            return Err(Error::Parse(format!("`{key}` needs {n} values")));
        }
        Ok(v)
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace().map(|t| t.parse().map_err(|_| Error::Parse(format!("bad number `{t}`")))).collect()
}

pub fn write_expansion(s: &ExpansionState) -> String {
    let d = s.center.d();
    let mut o = String::new();
    let _ = writeln!(o, "{EXPANSION_HEADER}");
    let _ = writeln!(o, "hbar {:?}", s.hbar);
    let _ = writeln!(o, "order {}", s.order);
    let _ = writeln!(o, "time {:?}", s.time);
    let _ = writeln!(o, "d {d}");
    let _ = writeln!(o, "center {}", floats(s.center.to_z()));
    let k = s.kappa.matrix();
    let _ = writeln!(o, "kappa {}", floats((0..2 * d).flat_map(|i| (0..2 * d).map(move |j| k[(i, j)]))));
    let _ = writeln!(o, "chi {:?}", s.chi);
    let _ = writeln!(o, "arg_det_m {:?}", s.arg_det_m);
    let _ = writeln!(o, "action {:?}", s.action);
    let _ = writeln!(o, "max_degree {}", s.basis.max_degree);
    let _ = writeln!(o, "rows");
    for (n, c) in s.coefficients.iter().enumerate() {
        for (idx, v) in s.basis.indices.iter().zip(c) {
            if v.norm() > 0.0 {
                let ks: Vec<String> = idx.iter().map(|e| e.to_string()).collect();
                let _ = writeln!(o, "{n} {} {:?} {:?}", ks.join(" "), v.re, v.im);
            }
        }
    }
    o
}

pub fn read_expansion(text: &str) -> Result<ExpansionState> {
    let doc = split_doc(text, EXPANSION_HEADER)?;
    let d: usize = doc.get("d")?;
    let order: usize = doc.get("order")?;
    let hbar: f64 = doc.get("hbar")?;
    let center = PhasePoint::from_z(&doc.list("center", 2 * d)?);
    let kappa = SymplecticMatrix::new(RMat::from_row_slice(2 * d, 2 * d, &doc.list("kappa", 4 * d * d)?))?;
    let basis = NumberBasis::new(d, doc.get("max_degree")?);
    let mut coefficients = vec![vec![Complex64::new(0.0, 0.0); basis.len()]; order + 1];
    for r in &doc.rows {
        let t: Vec<&str> = r.split_whitespace().collect();
        if t.len() != d + 3 {
            return Err(Error::Parse(format!("row `{r}` has {} fields", t.len())));
        }
        let n: usize = t[0].parse().map_err(|_| Error::Parse("bad order index".into()))?;
        let k: Vec<u32> = t[1..=d].iter().map(|x| x.parse().map_err(|_| Error::Parse("bad index".into()))).collect::<Result<_>>()?;
        let pos = basis.position(&k).ok_or_else(|| Error::Parse("index above max_degree".into()))?;
        if n > order {
            return Err(Error::Parse("order index above order".into()));
        }
        let v = parse_floats(&t[d + 1..].join(" "))?;
        coefficients[n][pos] = Complex64::new(v[0], v[1]);
    }
    let base = GaussianWavepacket::coherent(hbar, center.clone())?;
    let mut s = ExpansionState {
        hbar,
        order,
        time: doc.get("time")?,
        center,
        kappa,
        chi: doc.get("chi")?,
        arg_det_m: doc.get("arg_det_m")?,
        basis,
        coefficients,
        action: doc.get("action")?,
        base,
        corrections: vec![],
    };
    s.refresh()?;
    Ok(s)
}

fn index_string(k: &MultiIndex) -> String {
    k.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_hybrid(hs: &HybridState) -> String {
    let g = &hs.graph;
    let dp = hs.d_par();
    let d = dp + 1;
    let mut o = String::new();
    let _ = writeln!(o, "{HYBRID_HEADER}");
    let _ = writeln!(o, "hbar {:?}", hs.hbar);
    let _ = writeln!(o, "d_par {dp}");
    let _ = writeln!(o, "time {:?}", g.time);
    let _ = writeln!(o, "step {}", g.step);
    let _ = writeln!(o, "delta {:?}", hs.delta_est);
    let _ = writeln!(o, "nu {:?}", hs.nu_est);
    let _ = writeln!(o, "initial_sup {:?}", hs.initial_sup);
    let _ = writeln!(o, "log_unstable_jacobian {:?}", hs.log_unstable_jacobian);
    let _ = writeln!(o, "base {}", floats(g.base.to_z()));
    let f = g.frame.matrix();
    let _ = writeln!(o, "frame {}", floats((0..2 * d).flat_map(|i| (0..2 * d).map(move |j| f[(i, j)]))));
    let _ = writeln!(o, "grid {:?} {:?} {}", g.y_min, g.dy, g.n);
    let _ = writeln!(o, "gammas {}", hs.amplitudes.keys().map(index_string).collect::<Vec<_>>().join(";"));
    let _ = writeln!(o, "provenance {}", hs.provenance.join(";"));
    let _ = writeln!(o, "rows");
    for k in 0..g.n {
        let mut row: Vec<f64> = Vec::new();
        row.extend(&g.x_bar[k]);
        row.extend(&g.xi_bar[k]);
        row.extend([g.eta_bar[k], g.phi[k], g.accumulated_action[k], g.origin[k]]);
        for z in hs.gamma_par[k].iter() {
            row.extend([z.re, z.im]);
        }
        for u in hs.amplitudes.values() {
            row.extend([u[k].re, u[k].im]);
        }
        let _ = writeln!(o, "{}", floats(row));
    }
    o
}

/// Reads a hybrid state. The graph starts a new lineage, so back-map
/// determinants against graphs from before the round trip are refused.
pub fn read_hybrid(text: &str) -> Result<HybridState> {
    let doc = split_doc(text, HYBRID_HEADER)?;
    let dp: usize = doc.get("d_par")?;
    let d = dp + 1;
    let grid = parse_floats(doc.raw("grid")?)?;
    if grid.len() != 3 {
        return Err(Error::Parse("`grid` needs y_min dy n".into()));
    }
    let n = grid[2] as usize;
    let keys: Vec<MultiIndex> = doc
        .raw("gammas")?
        .split(';')
        .map(|k| k.split(',').filter(|t| !t.is_empty()).map(|t| t.parse().map_err(|_| Error::Parse("bad multi-index".into()))).collect())
        .collect::<Result<_>>()?;
    let width = 2 * dp + 4 + 2 * dp * dp + 2 * keys.len();
    if doc.rows.len() != n {
        return Err(Error::Parse(format!("expected {n} rows, found {}", doc.rows.len())));
    }
    let mut x_bar = Vec::with_capacity(n);
    let mut xi_bar = Vec::with_capacity(n);
    let (mut eta, mut phi, mut action, mut origin) = (vec![], vec![], vec![], vec![]);
    let mut gamma_par = Vec::with_capacity(n);
    let mut amps: Vec<Vec<Complex64>> = vec![Vec::with_capacity(n); keys.len()];
    for r in &doc.rows {
        let v = parse_floats(r)?;
        if v.len() != width {
            return Err(Error::Parse(format!("row has {} values, expected {width}", v.len())));
        }
        x_bar.push(v[..dp].to_vec());
        xi_bar.push(v[dp..2 * dp].to_vec());
        eta.push(v[2 * dp]);
        phi.push(v[2 * dp + 1]);
        action.push(v[2 * dp + 2]);
        origin.push(v[2 * dp + 3]);
        let g0 = 2 * dp + 4;
        // nalgebra iterates column-major, matching the writer
        gamma_par.push(CMat::from_iterator(dp, dp, (0..dp * dp).map(|i| Complex64::new(v[g0 + 2 * i], v[g0 + 2 * i + 1]))));
        let a0 = g0 + 2 * dp * dp;
        for (j, a) in amps.iter_mut().enumerate() {
            a.push(Complex64::new(v[a0 + 2 * j], v[a0 + 2 * j + 1]));
        }
    }
    let frame = SymplecticMatrix::new(RMat::from_row_slice(2 * d, 2 * d, &doc.list("frame", 4 * d * d)?))?;
    let base = PhasePoint::from_z(&doc.list("base", 2 * d)?);
    let mut graph = ManifoldGraph::from_samples(base, frame, grid[0], grid[1], x_bar, xi_bar, eta, phi)?;
    graph.accumulated_action = action;
    graph.origin = origin;
    graph.time = doc.get("time")?;
    graph.step = doc.get("step")?;
    let provenance = doc.raw("provenance")?;
    Ok(HybridState {
        hbar: doc.get("hbar")?,
        graph,
        gamma_par,
        amplitudes: keys.into_iter().zip(amps).collect(),
        delta_est: doc.get("delta")?,
        nu_est: doc.get("nu")?,
        provenance: if provenance.is_empty() { vec![] } else { provenance.split(';').map(str::to_string).collect() },
        initial_sup: doc.get("initial_sup")?,
        log_unstable_jacobian: doc.get("log_unstable_jacobian")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::splitting::hyperbolic_splitting;
    use crate::models::{make_model, params_from};
    use crate::propagator::expansion::propagate_order_n;
    use crate::propagator::hybrid::{hybrid_from_wavepacket, propagate_hybrid_leading, HybridOptions};

    #[test]
    fn expansion_round_trip() {
        let h = make_model("anharmonic_quartic", &params_from(&[("beta", 0.1)])).unwrap();
        let s = GaussianWavepacket::coherent(1e-2, PhasePoint::new(vec![0.5], vec![0.0])).unwrap();
        let e = propagate_order_n(&h, &s, 0.5, 2).unwrap();
        let text = write_expansion(&e);
        let back = read_expansion(&text).unwrap();
        assert_eq!(back.coefficients, e.coefficients);
        assert_eq!(back.kappa.matrix(), e.kappa.matrix());
        assert_eq!(back.chi, e.chi);
        assert_eq!(write_expansion(&back), text);
        assert!(read_expansion(&text.replace("order 2", "order 1")).is_err());
    }

    #[test]
    fn hybrid_round_trip() {
        let h = make_model("nh2d", &params_from(&[("epsilon", 0.1)])).unwrap();
        let s = GaussianWavepacket::coherent(1e-2, PhasePoint::origin(2)).unwrap();
        let split = hyperbolic_splitting(&h, &PhasePoint::origin(2), 6.0).unwrap();
        let hs = hybrid_from_wavepacket(&h, &s, &split, &HybridOptions { half_width: Some(1.0), samples: 65 }).unwrap();
        let hs = propagate_hybrid_leading(&h, &hs, 0.1).unwrap();
        let text = write_hybrid(&hs);
        let back = read_hybrid(&text).unwrap();
        assert_eq!(back.gamma_par, hs.gamma_par);
        assert_eq!(back.amplitudes, hs.amplitudes);
        assert_eq!(back.graph.phi, hs.graph.phi);
        assert_eq!(write_hybrid(&back), text);
        assert!(read_hybrid(&text.replace("# hybrid-state v1", "# other")).is_err());
    }
}
