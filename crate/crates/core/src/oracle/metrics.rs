use crate::error::{Error, Result};
use crate::states::grid::{inner_product, GridWavefunction};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMetrics {
    pub l2_error: f64,
    pub overlap_mag: f64,
    pub phase_insensitive_error: f64,
}

/// L2 distance, |<a,b>|/(|a||b|) and min_theta |a - e^{i theta} b| for unit inputs.
pub fn compare(a: &GridWavefunction, b: &GridWavefunction) -> Result<ErrorMetrics> {
    if !a.same_axes(b) || (a.hbar - b.hbar).abs() > 1e-14 * a.hbar.max(b.hbar) {
        return Err(Error::AxisMismatch);
    }
    let mut diff = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        diff += (x - y).norm_sqr();
    }
    let l2_error = (diff * a.cell_volume()).sqrt();
    let na = a.norm();
    let nb = b.norm();
    let ip = inner_product(a, b)?.norm();
    let overlap_mag = if na == 0.0 || nb == 0.0 { 0.0 } else { (ip / (na * nb)).min(1.0) };
    // |a|^2 + |b|^2 - 2|<a,b>| reduces to 2 - 2 overlap for unit states
    let pie = (na * na + nb * nb - 2.0 * ip).max(0.0).sqrt();
    Ok(ErrorMetrics { l2_error, overlap_mag, phase_insensitive_error: pie })
}
