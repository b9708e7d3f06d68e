//! Log-log least squares for convergence rates.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope (0 for three collinear points).
    pub slope_stderr: f64,
}

/// Least-squares line through (ln h, ln e).
pub fn convergence_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 3 {
        return Err(Error::invalid("a slope fit needs at least three points"));
    }
    if pairs.iter().any(|&(h, e)| !(h > 0.0) || !(e > 0.0)) {
        return Err(Error::invalid("slope fit needs positive abscissae and errors"));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    linear_fit(&pts)
}

/// Ordinary least squares y = slope x + intercept.
pub fn linear_fit(pts: &[(f64, f64)]) -> Result<SlopeFit> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return Err(Error::invalid("a line fit needs at least two points"));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("degenerate abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    let slope_stderr = if pts.len() > 2 { (ss_res / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(SlopeFit { slope, intercept, r_squared, slope_stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_laws() {
        let hs: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
        let f = convergence_slope(&hs.map(|h| (h, h.sqrt()))).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-10);
        let f = convergence_slope(&hs.map(|h| (h, 3.0 * h))).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-10 && (f.intercept - 3f64.ln()).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_fit_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let h = 10f64.powf(-1.0 - 0.35 * i as f64);
                (h, h.sqrt() * (1.0 + rng.gen_range(-0.05..0.05)))
            })
            .collect();
        assert!((convergence_slope(&pts).unwrap().slope - 0.5).abs() < 0.05);
        assert!(convergence_slope(&[(1.0, 1.0), (0.1, 0.0), (0.01, 1.0)]).is_err());
        assert!(convergence_slope(&[(1.0, 1.0), (0.1, 1.0)]).is_err());
    }
}
