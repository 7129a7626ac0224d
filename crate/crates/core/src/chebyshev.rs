//! Chebyshev series on an interval, Lobatto nodes and Clenshaw–Curtis quadrature.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Chebyshev–Lobatto points of `[a, b]`, ascending, `n + 1` of them.
pub fn lobatto_points(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![0.5 * (a + b)];
    }
    (0..=n)
        .map(|j| {
            let t = -(PI * j as f64 / n as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect()
}

/// Clenshaw–Curtis weights on `[-1, 1]` for the `n + 1` Lobatto points.
pub fn cc_weights(n: usize) -> Vec<f64> {
    if n == 0 {
        return vec![2.0];
    }
    let nf = n as f64;
    let mut w = vec![0.0; n + 1];
    let edge = if n % 2 == 0 { 1.0 / (nf * nf - 1.0) } else { 1.0 / (nf * nf) };
    w[0] = edge;
    w[n] = edge;
    for (j, wj) in w.iter_mut().enumerate().take(n).skip(1) {
        let th = PI * j as f64 / nf;
        let mut v = 1.0;
        let half = if n % 2 == 0 { n / 2 - 1 } else { (n - 1) / 2 };
        for k in 1..=half {
            let kf = k as f64;
            v -= 2.0 * (2.0 * kf * th).cos() / (4.0 * kf * kf - 1.0);
        }
        if n % 2 == 0 {
            v -= (nf * th).cos() / (nf * nf - 1.0);
        }
        *wj = 2.0 * v / nf;
    }
    w
}

/// Clenshaw–Curtis weights for the Lobatto points of `[a, b]`.
pub fn cc_weights_on(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = 0.5 * (b - a);
    cc_weights(n).into_iter().map(|w| w * h).collect()
}

/// `Σ c_k T_k(t)` with `t` the affine image of `x ∈ [a, b]` in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cheb {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl Cheb {
    pub fn constant(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, coeffs: vec![c] }
    }

    /// Interpolant through values at the ascending Lobatto points of `[a, b]`.
    pub fn from_values(a: f64, b: f64, values: &[f64]) -> Self {
        let n = values.len() - 1;
        if n == 0 {
            return Self::constant(a, b, values[0]);
        }
        let nf = n as f64;
        let mut coeffs = vec![0.0; n + 1];
        for (m, cm) in coeffs.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..=n {
                // the node cos(πk/n) is values[n − k]
                let v = values[n - k];
                let wt = if k == 0 || k == n { 0.5 } else { 1.0 };
                s += wt * v * (PI * ((m * k) % (2 * n)) as f64 / nf).cos();
            }
            let scale = if m == 0 || m == n { 1.0 / nf } else { 2.0 / nf };
            *cm = s * scale;
        }
        Self { a, b, coeffs }
    }

    pub fn fit(a: f64, b: f64, degree: usize, f: impl Fn(f64) -> f64) -> Self {
        let vals: Vec<f64> = lobatto_points(a, b, degree).into_iter().map(f).collect();
        Self::from_values(a, b, &vals)
    }

    /// Least-squares fit of the given degree to scattered samples.
    pub fn least_squares(a: f64, b: f64, degree: usize, xs: &[f64], ys: &[f64]) -> Self {
        let m = xs.len();
        let n = degree + 1;
        assert!(m >= n, "need at least as many samples as coefficients");
        let mut mat = vec![0.0; m * n];
        for (i, &x) in xs.iter().enumerate() {
            let t = (2.0 * x - a - b) / (b - a);
            let (mut t0, mut t1) = (1.0, t);
            for k in 0..n {
                mat[i * n + k] = if k == 0 {
                    1.0
                } else if k == 1 {
                    t
                } else {
                    let t2 = 2.0 * t * t1 - t0;
                    t0 = t1;
                    t1 = t2;
                    t2
                };
            }
        }
        let coeffs = householder_lstsq(&mut mat, ys.to_vec(), m, n);
        Self { a, b, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - self.a - self.b) / (self.b - self.a)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = self.to_unit(x);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs.first().copied().unwrap_or(0.0)
    }

    pub fn derivative(&self) -> Self {
        let n = self.coeffs.len();
        if n <= 1 {
            return Self::constant(self.a, self.b, 0.0);
        }
        let mut d = vec![0.0; n - 1];
        for k in (1..n).rev() {
            let next = if k + 1 < n - 1 { d[k + 1] } else { 0.0 };
            d[k - 1] = next + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        let scale = 2.0 / (self.b - self.a);
        Self { a: self.a, b: self.b, coeffs: d.into_iter().map(|c| c * scale).collect() }
    }

    /// `∫_a^b`.
    pub fn integral(&self) -> f64 {
        let mut s = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().step_by(2) {
            s += c * 2.0 / (1.0 - (k * k) as f64);
        }
        s * 0.5 * (self.b - self.a)
    }

    pub fn values_at_nodes(&self) -> Vec<f64> {
        lobatto_points(self.a, self.b, self.degree()).into_iter().map(|x| self.eval(x)).collect()
    }

    /// Largest of the last three coefficient magnitudes.
    pub fn tail(&self) -> f64 {
        self.coeffs.iter().rev().take(3).fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { a: self.a, b: self.b, coeffs: self.coeffs.iter().map(|v| v * c).collect() }
    }

    pub fn plus_constant(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    /// The same function with the domain translated by `dx`.
    pub fn shifted(&self, dx: f64) -> Self {
        Self { a: self.a + dx, b: self.b + dx, coeffs: self.coeffs.clone() }
    }

    /// `max |·|` over `m` Chebyshev check points (first kind, interior).
    pub fn check_max_abs(&self, m: usize) -> f64 {
        check_points(self.a, self.b, m).into_iter().fold(0.0_f64, |acc, x| acc.max(self.eval(x).abs()))
    }
}

/// Chebyshev points of the first kind on `[a, b]`, together with both endpoints.
pub fn check_points(a: f64, b: f64, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m)
        .map(|j| {
            let t = -(PI * (j as f64 + 0.5) / m as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * t
        })
        .collect();
    v.insert(0, a);
    v.push(b);
    v
}

/// Least squares `min ‖A c − y‖` by Householder QR; `a` is `m × n` row-major.
fn householder_lstsq(a: &mut [f64], mut y: Vec<f64>, m: usize, n: usize) -> Vec<f64> {
    for k in 0..n {
        let norm = (k..m).map(|i| a[i * n + k] * a[i * n + k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k * n + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i * n + k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * a[i * n + j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                a[i * n + j] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..m).map(|i| v[i - k] * y[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            y[i] -= f * v[i - k];
        }
    }
    let mut c = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|j| a[k * n + j] * c[j]).sum();
        c[k] = (y[k] - s) / a[k * n + k];
    }
    c
}

/// Differentiation matrix at the ascending Lobatto points of `[a, b]`: `(D v)_i ≈ v′(x_i)`.
pub fn diff_matrix(a: f64, b: f64, n: usize) -> Vec<f64> {
    let m = n + 1;
    if n == 0 {
        return vec![0.0];
    }
    // nodes on [-1, 1] ascending
    let x: Vec<f64> = (0..m).map(|j| -(PI * j as f64 / n as f64).cos()).collect();
    let c: Vec<f64> = (0..m)
        .map(|j| {
            let e = if j == 0 || j == n { 2.0 } else { 1.0 };
            if j % 2 == 0 { e } else { -e }
        })
        .collect();
    let mut d = vec![0.0; m * m];
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            if i != j {
                let v = (c[i] / c[j]) / (x[i] - x[j]);
                d[i * m + j] = v;
                row += v;
            }
        }
        d[i * m + i] = -row;
    }
    let s = 2.0 / (b - a);
    d.iter_mut().for_each(|v| *v *= s);
    d
}

/// `D v` for a square row-major matrix.
pub fn mat_vec(d: &[f64], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m).map(|i| (0..m).map(|j| d[i * m + j] * v[j]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_reproduces_polynomials() {
        let p = |x: f64| 1.0 + 2.0 * x - 3.0 * x * x + 0.5 * x.powi(5);
        let c = Cheb::fit(0.3, 1.7, 8, p);
        for &x in &[0.3, 0.5, 1.0, 1.33, 1.7] {
            assert!((c.eval(x) - p(x)).abs() < 1e-12);
        }
        let d = c.derivative();
        let dp = |x: f64| 2.0 - 6.0 * x + 2.5 * x.powi(4);
        for &x in &[0.3, 0.9, 1.7] {
            assert!((d.eval(x) - dp(x)).abs() < 1e-11);
        }
        let exact = |x: f64| x + x * x - x.powi(3) + x.powi(6) / 12.0;
        assert!((c.integral() - (exact(1.7) - exact(0.3))).abs() < 1e-12);
    }

    #[test]
    fn cc_weights_integrate_exactly() {
        for n in [1, 2, 7, 8, 32] {
            let w = cc_weights(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            let x = lobatto_points(-1.0, 1.0, n);
            let q: f64 = w.iter().zip(&x).map(|(w, x)| w * x * x).sum();
            if n >= 2 {
                assert!((q - 2.0 / 3.0).abs() < 1e-14);
            }
        }
        let w = cc_weights_on(0.0, 2.0, 32);
        let x = lobatto_points(0.0, 2.0, 32);
        let q: f64 = w.iter().zip(&x).map(|(w, x)| w * x.exp()).sum();
        assert!((q - (2f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn least_squares_recovers_exact_fit() {
        let xs: Vec<f64> = (0..65).map(|i| i as f64 / 64.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let c = Cheb::least_squares(0.0, 1.0, 20, &xs, &ys);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((c.eval(*x) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diff_matrix_matches_derivative() {
        let n = 16;
        let x = lobatto_points(0.0, 0.5, n);
        let v: Vec<f64> = x.iter().map(|x| (2.0 * x).cos()).collect();
        let dv = mat_vec(&diff_matrix(0.0, 0.5, n), &v);
        for (xi, d) in x.iter().zip(dv) {
            assert!((d + 2.0 * (2.0 * xi).sin()).abs() < 1e-10);
        }
    }
}
