//! Natural cubic splines on uniform grids.

use num_complex::Complex64;

#[derive(Clone, Debug)]
pub struct CubicSpline {
    x0: f64,
    dx: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x0: f64, dx: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        assert!(n >= 2, "spline needs two samples");
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal solve for the second derivatives, natural ends
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (dx * dx);
                let (cp, dp) = if i == 0 { (0.0, 0.0) } else { (c[i - 1], d[i - 1]) };
                let denom = 4.0 - cp;
                c[i] = 1.0 / denom;
                d[i] = (rhs - dp) / denom;
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { m[i + 2] } else { 0.0 };
                m[i + 1] = d[i] - c[i] * next;
            }
        }
        CubicSpline { x0, dx, y, m }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x0, self.x0 + self.dx * (self.y.len() - 1) as f64)
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.x0) / self.dx;
        let i = (s.floor().max(0.0) as usize).min(self.y.len() - 2);
        (i, s - i as f64)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, u) = self.locate(x);
        let h2 = self.dx * self.dx;
        let a = 1.0 - u;
        a * self.y[i]
            + u * self.y[i + 1]
            + h2 / 6.0 * ((a * a * a - a) * self.m[i] + (u * u * u - u) * self.m[i + 1])
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (i, u) = self.locate(x);
        let a = 1.0 - u;
        (self.y[i + 1] - self.y[i]) / self.dx
            + self.dx / 6.0 * (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * u * u - 1.0) * self.m[i + 1])
    }
}

#[derive(Clone, Debug)]
pub struct ComplexSpline {
    re: CubicSpline,
    im: CubicSpline,
}

impl ComplexSpline {
    pub fn new(x0: f64, dx: f64, y: &[Complex64]) -> Self {
        ComplexSpline {
            re: CubicSpline::new(x0, dx, y.iter().map(|z| z.re).collect()),
            im: CubicSpline::new(x0, dx, y.iter().map(|z| z.im).collect()),
        }
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }

    pub fn deriv(&self, x: f64) -> Complex64 {
        Complex64::new(self.re.deriv(x), self.im.deriv(x))
    }
}

/// Solve f(x) = target for a spline `f` that is increasing on its domain.
/// Bracket by bisection over the samples, then Newton from `seed`.
pub fn invert_monotone(f: &CubicSpline, target: f64, seed: Option<f64>) -> Option<f64> {
    let (lo, hi) = f.domain();
    let n = f.len();
    // bracket on sample values
    let mut a = 0usize;
    let mut b = n - 1;
    if target < f.y[0] - 1e-12 * (1.0 + target.abs()) || target > f.y[n - 1] + 1e-12 * (1.0 + target.abs()) {
        return None;
    }
    while b - a > 1 {
        let mid = (a + b) / 2;
        if f.y[mid] <= target {
            a = mid;
        } else {
            b = mid;
        }
    }
    let xa = lo + a as f64 * f.dx;
    let xb = (xa + f.dx).min(hi);
    let mut x = seed.filter(|s| *s >= xa && *s <= xb).unwrap_or_else(|| {
        let (ya, yb) = (f.y[a], f.y[b]);
        if yb > ya {
            xa + (target - ya) / (yb - ya) * (xb - xa)
        } else {
            xa
        }
    });
    let (mut l, mut r) = (xa, xb);
    for _ in 0..60 {
        let g = f.eval(x) - target;
        if g.abs() < 1e-14 * (1.0 + target.abs()) {
            break;
        }
        if g > 0.0 {
            r = x;
        } else {
            l = x;
        }
        let dg = f.deriv(x);
        let mut nx = if dg > 0.0 { x - g / dg } else { 0.5 * (l + r) };
        if !(nx > l && nx < r) {
            nx = 0.5 * (l + r);
        }
        if (nx - x).abs() < 1e-15 * (1.0 + x.abs()) {
            x = nx;
            break;
        }
        x = nx;
    }
    Some(x)
}
