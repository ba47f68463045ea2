use crate::error::{Error, Result};

/// Interpolating cubic spline with not-a-knot end conditions.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    /// Builds the spline through strictly increasing knots (at least four).
    pub fn not_a_knot(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(Error::LengthMismatch(n, ys.len()));
        }
        if n < 4 {
            return Err(Error::TooFewPoints { need: 4, got: n });
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse("spline knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

        // Unknowns M[1..=n-2]; M[0] and M[n-1] are eliminated through the
        // third-derivative continuity at x[1] and x[n-2], which keeps the
        // system tridiagonal.
        let k = n - 2;
        let mut sub = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for row in 0..k {
            let i = row + 1;
            sub[row] = h[i - 1];
            diag[row] = 2.0 * (h[i - 1] + h[i]);
            sup[row] = h[i];
            rhs[row] = 6.0 * (slope[i] - slope[i - 1]);
        }
        // M0 = ((h0 + h1) M1 - h0 M2) / h1
        let (h0, h1) = (h[0], h[1]);
        diag[0] += h0 * (h0 + h1) / h1;
        sup[0] -= h0 * h0 / h1;
        // M[n-1] = ((h[n-3] + h[n-2]) M[n-2] - h[n-2] M[n-3]) / h[n-3]
        let (ha, hb) = (h[n - 3], h[n - 2]);
        diag[k - 1] += hb * (ha + hb) / ha;
        sub[k - 1] -= hb * hb / ha;

        let inner = solve_tridiagonal(&sub, &diag, &sup, &rhs);
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&inner);
        m[0] = ((h0 + h1) * m[1] - h0 * m[2]) / h1;
        m[n - 1] = ((ha + hb) * m[n - 2] - hb * m[n - 3]) / ha;

        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Evaluates the spline; no extrapolation outside the knot span.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        let upper = self.xs.partition_point(|&x| x < t);
        if upper < self.xs.len() && self.xs[upper] == t {
            return Ok(self.ys[upper]);
        }
        let i = upper - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let (a, b) = (self.xs[i + 1] - t, t - self.xs[i]);
        let (mi, mj) = (self.m[i], self.m[i + 1]);
        Ok(mi * a * a * a / (6.0 * h)
            + mj * b * b * b / (6.0 * h)
            + (self.ys[i] / h - mi * h / 6.0) * a
            + (self.ys[i + 1] / h - mj * h / 6.0) * b)
    }
}

/// Thomas algorithm. `sub[0]` and `sup[n-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
