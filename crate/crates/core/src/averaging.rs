//! Averaged dynamics: sink/source of `ω̄`, classification, normalization, the averaged
//! ODE, the interpolated slow path and the large-deviation probe near the sink.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{sample_pair, StandardPair};
use crate::rng::{median, stream, wilson_interval};
use crate::slopes::{psi_star, PsiField};
use crate::system::{lift_diff, wrap, FastSlowSystem, TorusPoint};
use crate::transfer::{
    averaged_drift, fibre_average, invariant_density, AveragedDrift, PeriodicTrig, DEFAULT_N, DEFAULT_N_THETA,
    DEFAULT_TOL,
};

pub const MARGINAL_THRESHOLD: f64 = 1e-3;
pub const DEGENERATE_DERIV: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkSourceReport {
    pub theta_minus: f64,
    pub theta_plus: f64,
    pub deriv_minus: f64,
    pub deriv_plus: f64,
    pub zero_count: usize,
}

/// Zeros of a periodic function given on a uniform grid, refined on the trigonometric
/// interpolant. Returns `(θ, derivative)` pairs.
pub fn interpolant_zeros(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = values.len();
    let tr = PeriodicTrig::new(values);
    let h = 1.0 / n as f64;
    let mut zeros = Vec::new();
    for i in 0..n {
        let (a, b) = (values[i], values[(i + 1) % n]);
        let t0 = i as f64 * h;
        if a == 0.0 {
            zeros.push(t0);
            continue;
        }
        if a * b < 0.0 {
            let (mut lo, mut hi) = (t0, t0 + h);
            let mut t = t0 + h * a / (a - b);
            let sign_lo = a.signum();
            for _ in 0..200 {
                let v = tr.eval(t);
                if v == 0.0 {
                    break;
                }
                if v.signum() == sign_lo {
                    lo = t;
                } else {
                    hi = t;
                }
                let next = t - v / tr.deriv(t);
                let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
                if (next - t).abs() < 1e-15 || hi - lo < 1e-15 {
                    t = next;
                    break;
                }
                t = next;
            }
            zeros.push(wrap(t));
        }
    }
    Ok(zeros.into_iter().map(|t| (t, tr.deriv(t))).collect())
}

pub fn find_zeros(drift: &AveragedDrift) -> Result<SinkSourceReport> {
    let zeros = interpolant_zeros(&drift.omega_bar)?;
    if zeros.len() != 2 {
        return Err(Error::NotOmega1(format!("{} zeros of the averaged drift", zeros.len())));
    }
    if let Some(z) = zeros.iter().find(|z| z.1.abs() < DEGENERATE_DERIV) {
        return Err(Error::NotOmega1(format!("degenerate zero at {} (derivative {})", z.0, z.1)));
    }
    let (minus, plus) = if zeros[0].1 < 0.0 { (zeros[0], zeros[1]) } else { (zeros[1], zeros[0]) };
    if !(minus.1 < 0.0 && plus.1 > 0.0) {
        return Err(Error::NotOmega1("zeros do not form a sink/source pair".into()));
    }
    Ok(SinkSourceReport {
        theta_minus: minus.0,
        theta_plus: plus.0,
        deriv_minus: minus.1,
        deriv_plus: plus.1,
        zero_count: 2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class")]
pub enum SystemClass {
    MostlyExpanding,
    MostlyContracting,
    Marginal { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    #[serde(flatten)]
    pub class: SystemClass,
    pub psi_bar_star_at_sink: f64,
    pub zeros: SinkSourceReport,
}

/// `ψ̄_*(θ) = ∫ψ_*(x,θ)ρ_θ(x)dx` computed directly at one θ.
pub fn psi_bar_star_at(sys: &FastSlowSystem, theta: f64) -> Result<f64> {
    let rho = invariant_density(sys, theta, DEFAULT_N, DEFAULT_TOL)?;
    Ok(fibre_average(&rho, |x| psi_star(sys, TorusPoint::new(x, theta), 1e-13)))
}

pub fn omega_bar_at(sys: &FastSlowSystem, theta: f64) -> Result<f64> {
    let rho = invariant_density(sys, theta, DEFAULT_N, DEFAULT_TOL)?;
    Ok(fibre_average(&rho, |x| sys.omega().eval(x, theta)))
}

pub fn classify_system(sys: &FastSlowSystem) -> Result<Classification> {
    let drift = averaged_drift(sys, DEFAULT_N_THETA)?;
    classify_with(sys, &drift, MARGINAL_THRESHOLD)
}

pub fn classify_with(sys: &FastSlowSystem, drift: &AveragedDrift, margin: f64) -> Result<Classification> {
    let zeros = find_zeros(drift)?;
    let v = psi_bar_star_at(sys, zeros.theta_minus)?;
    let class = if v.abs() < margin {
        SystemClass::Marginal { value: v }
    } else if v > 0.0 {
        SystemClass::MostlyExpanding
    } else {
        SystemClass::MostlyContracting
    };
    Ok(Classification { class, psi_bar_star_at_sink: v, zeros })
}

/// `ω ↦ ω/ψ̄_*(θ₋)`, `ε ↦ εψ̄_*(θ₋)`.
pub fn normalize_system(sys: &FastSlowSystem) -> Result<FastSlowSystem> {
    let c = classify_system(sys)?;
    normalize_with(sys, c.psi_bar_star_at_sink)
}

pub fn normalize_with(sys: &FastSlowSystem, value: f64) -> Result<FastSlowSystem> {
    if !(value > 0.0) {
        return Err(Error::NotMostlyExpanding { value });
    }
    if value == 1.0 {
        return Ok(sys.clone());
    }
    sys.with_omega(sys.omega().scaled(1.0 / value), sys.epsilon() * value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    /// Lifted θ values.
    pub theta: Vec<f64>,
}

impl Trajectory {
    /// Cubic Hermite interpolation between samples, using the vector field for slopes.
    pub fn eval(&self, t: f64, field: impl Fn(f64) -> f64) -> f64 {
        let n = self.t.len();
        if t <= self.t[0] {
            return self.theta[0];
        }
        let i = ((t / self.dt).floor() as usize).min(n - 2);
        let s = (t - self.t[i]) / self.dt;
        let (y0, y1) = (self.theta[i], self.theta[i + 1]);
        let (m0, m1) = (field(y0) * self.dt, field(y1) * self.dt);
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1
    }

    pub fn last(&self) -> f64 {
        *self.theta.last().expect("non-empty")
    }
}

/// Classical RK4 for `θ′ = v(θ)`.
pub fn integrate_ode(v: impl Fn(f64) -> f64, theta0: f64, t_end: f64, dt: f64) -> Trajectory {
    let steps = (t_end / dt).round().max(0.0) as usize;
    let dt = if steps > 0 { t_end / steps as f64 } else { dt };
    let mut t = Vec::with_capacity(steps + 1);
    let mut th = Vec::with_capacity(steps + 1);
    let mut y = theta0;
    t.push(0.0);
    th.push(y);
    for k in 0..steps {
        let k1 = v(y);
        let k2 = v(y + 0.5 * dt * k1);
        let k3 = v(y + 0.5 * dt * k2);
        let k4 = v(y + dt * k3);
        y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t.push((k + 1) as f64 * dt);
        th.push(y);
    }
    Trajectory { dt, t, theta: th }
}

/// RK4 on `θ′ = ω̄(θ)` with the trigonometric interpolant of the tabulated drift.
pub fn integrate_averaged(drift: &AveragedDrift, theta0: f64, t_end: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(Error::Validation(format!("time step {dt} must lie in (0, 1e-3]")));
    }
    let tr = drift.omega_trig();
    Ok(integrate_ode(|t| tr.eval(t), theta0, t_end, dt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowPath {
    pub epsilon: f64,
    /// Lifted `θ_k`.
    pub theta: Vec<f64>,
    /// `ζ_k = ε Σ_{j<k} ψ(p_j)`.
    pub zeta: Vec<f64>,
    pub end: TorusPoint,
}

impl SlowPath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.theta.len()).map(move |k| k as f64 * self.epsilon)
    }

    fn interp(&self, v: &[f64], t: f64) -> f64 {
        let u = t / self.epsilon;
        let k = u.round();
        if k >= 0.0 && (k as usize) < v.len() && k * self.epsilon == t {
            return v[k as usize];
        }
        let i = (u.floor().max(0.0) as usize).min(v.len() - 2);
        let s = u - i as f64;
        (1.0 - s) * v[i] + s * v[i + 1]
    }

    /// `θ_ε(t)`, piecewise linear with knots `θ_ε(kε) = θ_k`.
    pub fn theta_at(&self, t: f64) -> f64 {
        self.interp(&self.theta, t)
    }

    pub fn zeta_at(&self, t: f64) -> f64 {
        self.interp(&self.zeta, t)
    }
}

/// Iterates `⌈T/ε⌉` steps recording `θ_k` and `ζ_k`.
pub fn slow_path(sys: &FastSlowSystem, p0: TorusPoint, t_end: f64, psi: Option<&PsiField>) -> Result<SlowPath> {
    let eps = sys.epsilon();
    if !(eps > 0.0) {
        return Err(Error::Validation("slow path needs epsilon > 0".into()));
    }
    let n = (t_end / eps).ceil() as usize;
    if n > 100_000_000 {
        return Err(Error::Validation(format!("{n} steps exceed the 1e8 limit")));
    }
    let mut theta = Vec::with_capacity(n + 1);
    let mut zeta = Vec::with_capacity(n + 1);
    let mut p = p0;
    let (mut lift, mut z) = (p0.theta, 0.0);
    theta.push(lift);
    zeta.push(z);
    for _ in 0..n {
        if let Some(psi) = psi {
            z += eps * psi.eval(sys, p);
        }
        let q = sys.step(p);
        lift += eps * sys.omega().eval(p.x, p.theta);
        p = q;
        theta.push(lift);
        zeta.push(z);
    }
    Ok(SlowPath { epsilon: eps, theta, zeta, end: p })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub index: u64,
    pub theta0: f64,
    pub sup_deviation: f64,
}

/// `sup_k |θ_k − θ̄(kε)|` for Lebesgue-distributed starts; the averaged solution uses
/// RK4 with a step dividing ε.
pub fn ensemble_deviation(
    sys: &FastSlowSystem,
    drift: &AveragedDrift,
    t_end: f64,
    members: usize,
    seed: u64,
) -> Result<Vec<EnsembleMember>> {
    use rand::Rng;
    let eps = sys.epsilon();
    let spline = drift.omega_spline();
    let sub = (eps / 1e-3).ceil().max(1.0) as usize;
    let dt = eps / sub as f64;
    let out: Vec<Result<EnsembleMember>> = (0..members as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "slow-path", i);
            let p0 = TorusPoint::new(rng.gen(), rng.gen());
            let path = slow_path(sys, p0, t_end, None)?;
            let n = path.theta.len() - 1;
            let avg = integrate_ode(|t| spline.eval(t), p0.theta, n as f64 * eps, dt);
            let dev = (0..=n).map(|k| (path.theta[k] - avg.theta[k * sub]).abs()).fold(0.0, f64::max);
            Ok(EnsembleMember { index: i, theta0: p0.theta, sup_deviation: dev })
        })
        .collect();
    out.into_iter().collect()
}

pub fn median_deviation(members: &[EnsembleMember]) -> f64 {
    median(&members.iter().map(|m| m.sup_deviation).collect::<Vec<_>>())
}

/// Largest `h ≤ 0.1` (step 1e-3) with `ψ̄ > 5/8` on `H_h`.
pub fn default_h(drift: &AveragedDrift, theta_minus: f64) -> Result<f64> {
    let psi = drift.psi_trig();
    let mut h = 0.1;
    while h > 0.0 {
        let ok = (0..=200).all(|i| psi.eval(theta_minus - h + 2.0 * h * i as f64 / 200.0) > 5.0 / 8.0);
        if ok {
            return Ok(h);
        }
        h = ((h - 1e-3) * 1e6).round() / 1e6;
    }
    Err(Error::Validation(format!(
        "no h in (0, 0.1] with psi_bar > 5/8 around the sink (psi_bar(theta_minus) = {})",
        psi.eval(theta_minus)
    )))
}

/// Smallest multiple of 0.5 with `θ̄(T₀, H_h) ⊂ H_{h/2}`, capped at 20.
pub fn default_t0(drift: &AveragedDrift, theta_minus: f64, h: f64) -> f64 {
    let tr = drift.omega_trig();
    let inside = |t0: f64| {
        [theta_minus - h, theta_minus + h].iter().all(|&th| {
            let end = integrate_ode(|t| tr.eval(t), th, t0, 1e-3).last();
            lift_diff(end, theta_minus).abs() < h / 2.0
        })
    };
    let mut t0 = 0.5;
    while t0 < 20.0 {
        if inside(t0) {
            return t0;
        }
        t0 += 0.5;
    }
    20.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeDeviationReport {
    pub epsilon: f64,
    pub t0: f64,
    pub h: f64,
    pub n0: usize,
    pub samples: usize,
    pub successes: usize,
    pub probability: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub failure_fraction: f64,
}

/// Fraction of pair samples with `θ_{N₀} ∈ H_{3h/4}` and `ζ_{N₀} ≥ 9T₀/16`, `N₀ = ⌊T₀/ε⌋`.
/// At `ε = 0` the averaged limit `θ̄(T₀)`, `ζ̄(T₀) = ∫ψ̄(θ̄)` replaces the orbit.
#[allow(clippy::too_many_arguments)]
pub fn large_deviation_probe(
    sys: &FastSlowSystem,
    drift: &AveragedDrift,
    theta_minus: f64,
    pair: &StandardPair,
    t0: f64,
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<LargeDeviationReport> {
    let eps = sys.epsilon();
    let psi_field = PsiField { n0: drift.n0, rho_reg: crate::slopes::DEFAULT_RHO_REG };
    let mut rng = stream(seed, "large-deviation", 0);
    let pts = sample_pair(pair, &mut rng, samples);
    let n0 = if eps > 0.0 { (t0 / eps).floor() as usize } else { 0 };
    let omega = drift.omega_trig();
    let psi_bar = drift.psi_trig();
    let ok: Vec<bool> = pts
        .par_iter()
        .map(|&(x, th)| {
            let (th_end, zeta) = if eps > 0.0 {
                let mut p = TorusPoint::new(wrap(x), wrap(th));
                let mut z = 0.0;
                for _ in 0..n0 {
                    z += eps * psi_field.eval(sys, p);
                    p = sys.step(p);
                }
                (p.theta, z)
            } else {
                let dt = 1e-3;
                let traj = integrate_ode(|t| omega.eval(t), th, t0, dt);
                let zeta: f64 = traj
                    .theta
                    .windows(2)
                    .map(|w| 0.5 * dt * (psi_bar.eval(w[0]) + psi_bar.eval(w[1])))
                    .sum();
                (traj.last(), zeta)
            };
            lift_diff(th_end, theta_minus).abs() < 0.75 * h && zeta >= 9.0 * t0 / 16.0
        })
        .collect();
    let k = ok.iter().filter(|&&b| b).count();
    let (lo, hi) = wilson_interval(k, samples);
    let p = k as f64 / samples as f64;
    Ok(LargeDeviationReport {
        epsilon: eps,
        t0,
        h,
        n0,
        samples,
        successes: k,
        probability: p,
        wilson_lo: lo,
        wilson_hi: hi,
        failure_fraction: 1.0 - p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_a, sys_b};
    use std::f64::consts::{PI, TAU};

    #[test]
    fn sys_a_zeros_and_class() {
        let s = sys_a(0.01);
        let d = averaged_drift(&s, 64).unwrap();
        let z = find_zeros(&d).unwrap();
        assert!((z.theta_minus - 0.5).abs() < 1e-12);
        assert!(z.theta_plus.abs() < 1e-12 || (z.theta_plus - 1.0).abs() < 1e-12);
        assert!((z.deriv_minus + TAU).abs() < 1e-10);
        assert!((z.deriv_plus - TAU).abs() < 1e-10);
        let c = classify_with(&s, &d, MARGINAL_THRESHOLD).unwrap();
        assert_eq!(c.class, SystemClass::MostlyContracting);
        assert!((c.psi_bar_star_at_sink + TAU).abs() < 1e-10);
    }

    #[test]
    fn constant_drift_is_not_omega1() {
        let d = AveragedDrift {
            theta: vec![0.0; 8],
            omega_bar: vec![0.3; 8],
            psi_bar: vec![0.0; 8],
            psi_bar_star: vec![0.0; 8],
            residual: vec![0.0; 8],
            n0: 0,
        };
        assert!(matches!(find_zeros(&d), Err(Error::NotOmega1(_))));
    }

    #[test]
    fn rk4_matches_closed_form() {
        let s = sys_a(0.01);
        let d = averaged_drift(&s, 64).unwrap();
        let tr = integrate_averaged(&d, 0.25, 1.0, 1e-3).unwrap();
        let exact = (TAU).exp().atan() / PI;
        assert!((tr.last() - exact).abs() < 1e-8, "{}", tr.last() - exact);
        assert!((exact - 0.499406).abs() < 1e-6);
        let still = integrate_averaged(&d, 0.5, 1.0, 1e-3).unwrap();
        assert!((still.last() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn slow_path_knots_are_exact() {
        let s = sys_b(0.01);
        let path = slow_path(&s, TorusPoint::new(0.2, 0.3), 0.5, None).unwrap();
        for (k, t) in path.times().enumerate() {
            assert_eq!(path.theta_at(t).to_bits(), path.theta[k].to_bits());
        }
    }

    #[test]
    fn sys_a_slow_path_is_euler() {
        let s = sys_a(0.01);
        let path = slow_path(&s, TorusPoint::new(0.2, 0.3), 0.2, None).unwrap();
        let mut th = 0.3;
        for k in 0..path.theta.len() {
            assert!((path.theta[k] - th).abs() < 1e-14);
            th += 0.01 * (TAU * th).sin();
        }
    }
}
