//! Adaptive classical RK4 with step-doubling error control and local
//! Richardson extrapolation. Works forwards and backwards in time.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_steps: usize,
    pub min_step: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-12, abs: 1e-13, max_steps: 10_000_000, min_step: 1e-14 }
    }
}

impl Tolerance {
    pub fn tightened(&self, factor: f64) -> Self {
        Tolerance { rel: self.rel * factor, abs: self.abs * factor, ..self.clone() }
    }
}

pub trait System {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F: Fn(f64, &[f64], &mut [f64])> System for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.1)(t, y, dy)
    }
}

struct Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    full: Vec<f64>,
    half: Vec<f64>,
    twice: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        let v = || vec![0.0; n];
        Work { k1: v(), k2: v(), k3: v(), k4: v(), tmp: v(), full: v(), half: v(), twice: v() }
    }
}

fn rk4_step<S: System + ?Sized>(sys: &S, t: f64, y: &[f64], h: f64, w: &mut Work, out: &mut [f64]) {
    let n = y.len();
    sys.rhs(t, y, &mut w.k1);
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k1[i];
    }
    sys.rhs(t + 0.5 * h, &w.tmp, &mut w.k2);
    for i in 0..n {
        w.tmp[i] = y[i] + 0.5 * h * w.k2[i];
    }
    sys.rhs(t + 0.5 * h, &w.tmp, &mut w.k3);
    for i in 0..n {
        w.tmp[i] = y[i] + h * w.k3[i];
    }
    sys.rhs(t + h, &w.tmp, &mut w.k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    }
}

/// Integrator state carried between calls so the step size persists.
pub struct Integrator {
    pub tol: Tolerance,
    h: f64,
    pub steps: usize,
    work: Option<Work>,
}

impl Integrator {
    pub fn new(tol: Tolerance, initial_step: f64) -> Self {
        Integrator { tol, h: initial_step.abs().max(1e-6), steps: 0, work: None }
    }

    /// Advance `y` from `t` to `t_end`. `check` runs after each accepted step.
    pub fn advance<S, C>(&mut self, sys: &S, t: &mut f64, y: &mut [f64], t_end: f64, mut check: C) -> Result<()>
    where
        S: System + ?Sized,
        C: FnMut(f64, &[f64]) -> Result<()>,
    {
        let n = y.len();
        if self.work.as_ref().map_or(true, |w| w.k1.len() != n) {
            self.work = Some(Work::new(n));
        }
        let mut w = self.work.take().expect("work buffers");
        let dir = if t_end >= *t { 1.0 } else { -1.0 };
        let result = (|| {
            while (t_end - *t) * dir > 1e-15 * (1.0 + t_end.abs()) {
                if self.steps >= self.tol.max_steps {
                    return Err(Error::Integration(format!("step limit {} reached at t = {}", self.tol.max_steps, t)));
                }
                let remaining = (t_end - *t).abs();
                let h = self.h.min(remaining);
                let hs = h * dir;
                let mut full = std::mem::take(&mut w.full);
                let mut half = std::mem::take(&mut w.half);
                let mut twice = std::mem::take(&mut w.twice);
                rk4_step(sys, *t, y, hs, &mut w, &mut full);
                rk4_step(sys, *t, y, 0.5 * hs, &mut w, &mut half);
                rk4_step(sys, *t + 0.5 * hs, &half, 0.5 * hs, &mut w, &mut twice);
                let mut err: f64 = 0.0;
                for i in 0..n {
                    let scale = self.tol.abs + self.tol.rel * y[i].abs().max(twice[i].abs());
                    err = err.max((twice[i] - full[i]).abs() / 15.0 / scale);
                }
                if !err.is_finite() {
                    w.full = full;
                    w.half = half;
                    w.twice = twice;
                    if h <= self.tol.min_step {
                        return Err(Error::Integration(format!("non-finite state at t = {t}")));
                    }
                    self.h = h * 0.25;
                    continue;
                }
                if err <= 1.0 {
                    for i in 0..n {
                        y[i] = twice[i] + (twice[i] - full[i]) / 15.0;
                    }
                    *t = if h == remaining { t_end } else { *t + hs };
                    self.steps += 1;
                    let grow = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 4.0) };
                    // do not let a short final step shrink the working step
                    if h == self.h || grow < 1.0 {
                        self.h = h * grow;
                    }
                    w.full = full;
                    w.half = half;
                    w.twice = twice;
                    check(*t, y)?;
                } else {
                    w.full = full;
                    w.half = half;
                    w.twice = twice;
                    if h <= self.tol.min_step {
                        return Err(Error::Integration(format!("step size underflow at t = {t}")));
                    }
                    self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                }
            }
            Ok(())
        })();
        self.work = Some(w);
        result
    }
}

/// One-shot convenience: integrate and return the final state.
pub fn solve<S: System + ?Sized>(sys: &S, t0: f64, y0: &[f64], t_end: f64, tol: &Tolerance) -> Result<Vec<f64>> {
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut integ = Integrator::new(tol.clone(), ((t_end - t0).abs() / 16.0).max(1e-6));
    integ.advance(sys, &mut t, &mut y, t_end, |_, _| Ok(()))?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_both_directions() {
        let sys = (1usize, |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0]);
        let y = solve(&sys, 0.0, &[1.0], 3.0, &Tolerance::default()).unwrap();
        assert!((y[0] - (-3f64).exp()).abs() < 1e-12);
        let back = solve(&sys, 3.0, &y, 0.0, &Tolerance::default()).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn oscillator_phase_accuracy() {
        let sys = (2usize, |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        });
        let y = solve(&sys, 0.0, &[1.0, 0.0], 20.0, &Tolerance::default()).unwrap();
        assert!((y[0] - 20f64.cos()).abs() < 1e-10);
        assert!((y[1] + 20f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn check_callback_can_abort() {
        let sys = (1usize, |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0]);
        let mut integ = Integrator::new(Tolerance::default(), 0.1);
        let mut t = 0.0;
        let mut y = vec![1.0];
        let r = integ.advance(&sys, &mut t, &mut y, 10.0, |t, y| {
            if y[0] > 100.0 {
                Err(Error::Escape { time: t, bound: 100.0 })
            } else {
                Ok(())
            }
        });
        assert!(matches!(r, Err(Error::Escape { .. })));
        assert!(t < 5.0);
    }
}
