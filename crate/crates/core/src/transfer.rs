//! Invariant densities of the fibre maps and fibre averages.

use crate::error::{Error, Result};
use crate::slopes;
use crate::system::FastSlowSystem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

pub const DEFAULT_N: usize = 256;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_N_THETA: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleDensity {
    pub theta: f64,
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl CircleDensity {
    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.values.len() as f64;
        (0..self.values.len()).map(move |i| i as f64 / n)
    }

    /// Trigonometric interpolant at an arbitrary point.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let sn = (n as f64 * PI * x).sin();
        let (sa, ca) = (PI * x).sin_cos();
        let mut s = 0.0;
        for (j, v) in self.values.iter().enumerate() {
            let (sb, cb) = (PI * j as f64 / n as f64).sin_cos();
            s += v * kernel(n, sn, sa, ca, sb, cb, j);
        }
        s
    }
}

/// Periodic sinc kernel of even-N trigonometric interpolation at `y − x_j`,
/// assembled from the sines and cosines of `πy` and `πx_j`.
#[inline]
fn kernel(n: usize, sin_ny: f64, sa: f64, ca: f64, sb: f64, cb: f64, j: usize) -> f64 {
    // sin(πN(y−x_j)) = (−1)^j sin(πNy); cot(π(y−x_j)) from angle differences
    let s_diff = sa * cb - ca * sb;
    let c_diff = ca * cb + sa * sb;
    if s_diff.abs() < 1e-8 {
        // y at a node: the kernel is 1 there
        let z = n as f64 * s_diff;
        return 1.0 - z * z / 6.0;
    }
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    sign * sin_ny * c_diff / (n as f64 * s_diff)
}

/// Dense transfer matrix `P` with `(Lρ)_i = Σ_j P_ij ρ_j` at fixed θ.
fn transfer_matrix(sys: &FastSlowSystem, theta: f64, n: usize) -> Result<Vec<f64>> {
    let d = sys.fibre_degree();
    let nodes: Vec<(f64, f64)> = (0..n).map(|j| (PI * j as f64 / n as f64).sin_cos()).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let xi = i as f64 / n as f64;
        let row = &mut p[i * n..(i + 1) * n];
        for k in 0..d {
            let y = sys.fibre_inverse_lift(k, xi, theta)?;
            let w = 1.0 / sys.partials(y, theta).fx;
            let sin_ny = (n as f64 * PI * y).sin();
            let (sa, ca) = (PI * y).sin_cos();
            for (j, &(sb, cb)) in nodes.iter().enumerate() {
                row[j] += w * kernel(n, sin_ny, sa, ca, sb, cb, j);
            }
        }
    }
    Ok(p)
}

fn apply(p: &[f64], rho: &[f64], out: &mut [f64]) {
    let n = rho.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &p[i * n..(i + 1) * n];
        *o = row.iter().zip(rho).map(|(a, b)| a * b).sum();
    }
}

pub fn invariant_density(sys: &FastSlowSystem, theta: f64, n: usize, tol: f64) -> Result<CircleDensity> {
    if n < 64 || !n.is_power_of_two() {
        return Err(Error::Validation(format!("grid size {n} must be a power of two >= 64")));
    }
    if tol < 1e-13 {
        return Err(Error::Validation(format!("tolerance {tol} below 1e-13")));
    }
    let lambda = f64::from(sys.fibre_degree()) - sys.f_pert().partial_bound(1, 0);
    if lambda <= 1.0 && sys.norms().lambda <= 1.0 {
        return Err(Error::NotExpanding { lambda: sys.norms().lambda, required: 1.0 });
    }
    let p = transfer_matrix(sys, theta, n)?;
    let mut rho = vec![1.0; n];
    let mut next = vec![0.0; n];
    for it in 1..=10_000 {
        apply(&p, &rho, &mut next);
        let mean = next.iter().sum::<f64>() / n as f64;
        next.iter_mut().for_each(|v| *v /= mean);
        let diff = rho.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut rho, &mut next);
        if diff < tol {
            for v in rho.iter_mut() {
                if *v < 0.0 && *v > -1e-12 {
                    *v = 0.0;
                }
            }
            let mean = rho.iter().sum::<f64>() / n as f64;
            rho.iter_mut().for_each(|v| *v /= mean);
            apply(&p, &rho, &mut next);
            let residual = rho.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            return Ok(CircleDensity { theta, values: rho, residual, iterations: it });
        }
    }
    Err(Error::NoConvergence { what: "transfer operator power iteration".into(), iterations: 10_000 })
}

/// Trapezoid rule `∫ h ρ dx` on the density grid.
pub fn fibre_average(rho: &CircleDensity, h: impl Fn(f64) -> f64) -> f64 {
    let n = rho.values.len();
    rho.grid().zip(&rho.values).map(|(x, r)| h(x) * r).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedDrift {
    pub theta: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub psi_bar: Vec<f64>,
    pub psi_bar_star: Vec<f64>,
    pub residual: Vec<f64>,
    pub n0: usize,
}

/// Periodic cubic (Catmull–Rom free) interpolation via the periodic natural spline.
fn periodic_spline_second_derivs(y: &[f64], h: f64) -> Vec<f64> {
    // Solve the cyclic tridiagonal system M_{i-1} + 4M_i + M_{i+1} = 6(y_{i+1} − 2y_i + y_{i−1})/h²
    // by fixed-point iteration (diagonally dominant, converges geometrically with factor 1/2).
    let n = y.len();
    let rhs: Vec<f64> = (0..n)
        .map(|i| 6.0 * (y[(i + 1) % n] - 2.0 * y[i] + y[(i + n - 1) % n]) / (h * h))
        .collect();
    let mut m: Vec<f64> = rhs.iter().map(|r| r / 6.0).collect();
    for _ in 0..200 {
        let mut delta: f64 = 0.0;
        let prev = m.clone();
        for i in 0..n {
            let v = (rhs[i] - prev[(i + n - 1) % n] - prev[(i + 1) % n]) / 4.0;
            delta = delta.max((v - m[i]).abs());
            m[i] = v;
        }
        if delta < 1e-14 * (1.0 + m.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
            break;
        }
    }
    m
}

/// Periodic cubic spline through samples on a uniform grid of `[0,1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicSpline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl PeriodicSpline {
    pub fn new(y: &[f64]) -> Self {
        let h = 1.0 / y.len() as f64;
        Self { y: y.to_vec(), m: periodic_spline_second_derivs(y, h) }
    }

    fn locate(&self, t: f64) -> (usize, usize, f64, f64) {
        let n = self.y.len();
        let u = crate::system::wrap(t) * n as f64;
        let i = (u.floor() as usize).min(n - 1);
        let s = u - i as f64;
        (i, (i + 1) % n, s, 1.0 / n as f64)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (i, j, s, h) = self.locate(t);
        let a = 1.0 - s;
        a * self.y[i] + s * self.y[j] + h * h / 6.0 * ((a * a * a - a) * self.m[i] + (s * s * s - s) * self.m[j])
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let (i, j, s, h) = self.locate(t);
        let a = 1.0 - s;
        (self.y[j] - self.y[i]) / h + h / 6.0 * (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * s * s - 1.0) * self.m[j])
    }
}

/// Trigonometric interpolant of samples on a uniform grid of `[0,1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicTrig {
    a0: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PeriodicTrig {
    pub fn new(y: &[f64]) -> Self {
        let n = y.len();
        let half = n / 2;
        let nf = n as f64;
        let a0 = y.iter().sum::<f64>() / nf;
        let mut cos = vec![0.0; half];
        let mut sin = vec![0.0; half];
        for k in 1..=half {
            let (mut c, mut s) = (0.0, 0.0);
            for (j, v) in y.iter().enumerate() {
                let (sj, cj) = (2.0 * PI * ((k * j) % n) as f64 / nf).sin_cos();
                c += v * cj;
                s += v * sj;
            }
            let w = if n % 2 == 0 && k == half { 1.0 / nf } else { 2.0 / nf };
            cos[k - 1] = c * w;
            sin[k - 1] = if n % 2 == 0 && k == half { 0.0 } else { s * w };
        }
        Self { a0, cos, sin }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.a0;
        for k in 0..self.cos.len() {
            let (s, c) = (2.0 * PI * (k + 1) as f64 * t).sin_cos();
            v += self.cos[k] * c + self.sin[k] * s;
        }
        v
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let mut v = 0.0;
        for k in 0..self.cos.len() {
            let w = 2.0 * PI * (k + 1) as f64;
            let (s, c) = (w * t).sin_cos();
            v += w * (self.sin[k] * c - self.cos[k] * s);
        }
        v
    }
}

impl AveragedDrift {
    pub fn omega_spline(&self) -> PeriodicSpline {
        PeriodicSpline::new(&self.omega_bar)
    }
    pub fn psi_star_spline(&self) -> PeriodicSpline {
        PeriodicSpline::new(&self.psi_bar_star)
    }
    pub fn psi_spline(&self) -> PeriodicSpline {
        PeriodicSpline::new(&self.psi_bar)
    }
    pub fn omega_trig(&self) -> PeriodicTrig {
        PeriodicTrig::new(&self.omega_bar)
    }
    pub fn psi_star_trig(&self) -> PeriodicTrig {
        PeriodicTrig::new(&self.psi_bar_star)
    }
    pub fn psi_trig(&self) -> PeriodicTrig {
        PeriodicTrig::new(&self.psi_bar)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "theta,omega_bar,psi_bar,psi_bar_star,residual")?;
        for i in 0..self.theta.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.theta[i], self.omega_bar[i], self.psi_bar[i], self.psi_bar_star[i], self.residual[i]
            )?;
        }
        Ok(())
    }
}

/// Settings for [`averaged_drift_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSettings {
    pub n_theta: usize,
    pub n: usize,
    pub tol: f64,
    pub star_tol: f64,
    pub n0: Option<usize>,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self { n_theta: DEFAULT_N_THETA, n: DEFAULT_N, tol: DEFAULT_TOL, star_tol: 1e-12, n0: None }
    }
}

pub fn averaged_drift(sys: &FastSlowSystem, n_theta: usize) -> Result<AveragedDrift> {
    averaged_drift_with(sys, DriftSettings { n_theta, ..Default::default() })
}

/// Tabulates `ω̄`, `ψ̄ = ∫ψ_{n₀}ρ` and `ψ̄_* = ∫ψ_*ρ` on a uniform θ grid.
/// The slope fields here are those of the unperturbed fibre maps (ε = 0).
pub fn averaged_drift_with(sys: &FastSlowSystem, s: DriftSettings) -> Result<AveragedDrift> {
    let n0 = match s.n0 {
        Some(n) => n,
        None => slopes::select_n0(sys, slopes::DEFAULT_RHO_REG)?,
    };
    let rows: Vec<Result<(f64, f64, f64, f64, f64)>> = (0..s.n_theta)
        .into_par_iter()
        .map(|i| {
            let th = i as f64 / s.n_theta as f64;
            let rho = invariant_density(sys, th, s.n, s.tol)?;
            let w = fibre_average(&rho, |x| sys.omega().eval(x, th));
            let (mut pb, mut pbs) = (0.0, 0.0);
            for (x, r) in rho.grid().zip(&rho.values) {
                let (_, wx, wth) = sys.omega().eval_grad(x, th);
                let sn = slopes::fibre_slope_n(sys, x, th, n0);
                let ss = slopes::fibre_slope_star(sys, x, th, s.star_tol);
                pb += (wth + wx * sn) * r;
                pbs += (wth + wx * ss) * r;
            }
            let n = rho.values.len() as f64;
            Ok((th, w, pb / n, pbs / n, rho.residual))
        })
        .collect();
    let mut out = AveragedDrift {
        theta: vec![],
        omega_bar: vec![],
        psi_bar: vec![],
        psi_bar_star: vec![],
        residual: vec![],
        n0,
    };
    for r in rows {
        let (th, w, pb, pbs, res) = r?;
        out.theta.push(th);
        out.omega_bar.push(w);
        out.psi_bar.push(pb);
        out.psi_bar_star.push(pbs);
        out.residual.push(res);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_a, sys_b};
    use std::f64::consts::TAU;

    #[test]
    fn sys_a_density_is_uniform() {
        let s = sys_a(0.01);
        for &th in &[0.0, 0.3, 0.71] {
            let r = invariant_density(&s, th, 128, 1e-12).unwrap();
            let dev = r.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-12, "{dev}");
            assert!(fibre_average(&r, |x| (TAU * x).cos()).abs() < 1e-12);
            assert!((fibre_average(&r, |_| 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_kernel_reproduces_low_modes() {
        let n = 64;
        let vals: Vec<f64> = (0..n).map(|i| (TAU * 3.0 * i as f64 / n as f64).sin() + 0.5).collect();
        let d = CircleDensity { theta: 0.0, values: vals, residual: 0.0, iterations: 0 };
        for &x in &[0.0123, 0.5, 0.77777, 1.0 / 64.0] {
            assert!((d.eval(x) - ((TAU * 3.0 * x).sin() + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn sys_b_density_self_converges() {
        let s = sys_b(0.01);
        let a = invariant_density(&s, 0.37, 128, 1e-13).unwrap();
        let b = invariant_density(&s, 0.37, 256, 1e-13).unwrap();
        assert!(a.residual < 1e-12);
        let dev = b.grid().zip(&b.values).map(|(x, v)| (a.eval(x) - v).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-10, "{dev}");
    }

    #[test]
    fn trig_interpolant_is_spectral() {
        let n = 64;
        let f = |t: f64| (TAU * t).sin() + 0.3 * (3.0 * TAU * t).cos();
        let y: Vec<f64> = (0..n).map(|i| f(i as f64 / n as f64)).collect();
        let tr = PeriodicTrig::new(&y);
        for &t in &[0.013, 0.5, 0.877] {
            assert!((tr.eval(t) - f(t)).abs() < 1e-13);
            let d = TAU * (TAU * t).cos() - 0.9 * TAU * (3.0 * TAU * t).sin();
            assert!((tr.deriv(t) - d).abs() < 1e-11);
        }
    }

    #[test]
    fn periodic_spline_is_accurate_and_periodic() {
        let n = 256;
        let y: Vec<f64> = (0..n).map(|i| (TAU * i as f64 / n as f64).sin()).collect();
        let sp = PeriodicSpline::new(&y);
        for &t in &[0.001, 0.4999, 0.731, 0.9999] {
            assert!((sp.eval(t) - (TAU * t).sin()).abs() < 1e-8);
            assert!((sp.deriv(t) - TAU * (TAU * t).cos()).abs() < 1e-4);
        }
    }
}
