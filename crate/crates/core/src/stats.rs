//! Monte-Carlo statistics: occupation histograms, the central Lyapunov exponent,
//! correlation decay and its ε-scaling, sink localization and TV contraction of families.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{classify_system, SystemClass};
use crate::error::{Error, Result};
use crate::pairs::{sample_pair, PairFamily};
use crate::rng::{mean_stderr, pairwise_sum, stream, uniform_point, wilson_interval};
use crate::slopes::xi_minus;
use crate::system::{lift_diff, wrap, FastSlowSystem, Partials, TorusPoint};
use crate::systems::template;
use crate::trig::TrigPoly2;

/// Default burn-in multiplier `V` in `V·log(1/ε)·N₀`.
pub const DEFAULT_V: f64 = 1.0;

/// `⌈V·log(1/ε)·T₀/ε⌉`.
pub fn burn_in_steps(eps: f64, v: f64, t0: f64) -> usize {
    if eps <= 0.0 {
        return 0;
    }
    (v * (1.0 / eps).ln().max(1.0) * t0 / eps).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub nx: usize,
    pub nth: usize,
    /// Row-major over θ: `counts[j·nx + i]`.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram2D {
    pub fn new(nx: usize, nth: usize) -> Self {
        Self { nx, nth, counts: vec![0; nx * nth], total: 0 }
    }

    #[inline]
    pub fn add(&mut self, p: TorusPoint) {
        let i = ((p.x * self.nx as f64) as usize).min(self.nx - 1);
        let j = ((p.theta * self.nth as f64) as usize).min(self.nth - 1);
        self.counts[j * self.nx + i] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &Histogram2D) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    /// Density with respect to Lebesgue on the torus.
    pub fn density(&self) -> Vec<f64> {
        let cells = (self.nx * self.nth) as f64;
        self.probabilities().into_iter().map(|p| p * cells).collect()
    }

    pub fn theta_marginal(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        (0..self.nth).map(|j| self.counts[j * self.nx..(j + 1) * self.nx].iter().sum::<u64>() as f64 / t).collect()
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        (0..self.nx).map(|i| (0..self.nth).map(|j| self.counts[j * self.nx + i]).sum::<u64>() as f64 / t).collect()
    }

    pub fn theta_mode(&self) -> f64 {
        let m = self.theta_marginal();
        let j = (0..m.len()).fold(0, |b, j| if m[j] > m[b] { j } else { b });
        (j as f64 + 0.5) / self.nth as f64
    }

    /// `Σ (p − q)²/(p + q)` over cells with positive mass.
    pub fn chi2_distance(&self, other: &Histogram2D) -> f64 {
        let (p, q) = (self.probabilities(), other.probabilities());
        pairwise_sum(&p.iter().zip(&q).map(|(a, b)| if a + b > 0.0 { (a - b).powi(2) / (a + b) } else { 0.0 }).collect::<Vec<_>>())
    }

    pub fn tv_distance(&self, other: &Histogram2D) -> f64 {
        let (p, q) = (self.probabilities(), other.probabilities());
        0.5 * pairwise_sum(&p.iter().zip(&q).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "i,j,x_lo,theta_lo,count,density")?;
        let d = self.density();
        for j in 0..self.nth {
            for i in 0..self.nx {
                let k = j * self.nx + i;
                writeln!(w, "{i},{j},{},{},{},{}", i as f64 / self.nx as f64, j as f64 / self.nth as f64, self.counts[k], d[k])?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSettings {
    pub n_orbits: usize,
    pub burn_in: usize,
    pub n_steps: usize,
    pub bins_x: usize,
    pub bins_theta: usize,
    /// Centre for the θ spread (usually `θ₋`).
    pub theta_center: Option<f64>,
}

impl Default for MeasureSettings {
    fn default() -> Self {
        Self { n_orbits: 256, burn_in: 5000, n_steps: 20_000, bins_x: 64, bins_theta: 64, theta_center: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub histogram: Histogram2D,
    /// Root mean square of `θ − θ_center` (lifted), if a centre was given.
    pub theta_spread: Option<f64>,
    pub theta_mean_offset: Option<f64>,
    pub seed: u64,
}

/// Post-burn-in occupation of Lebesgue-seeded orbits.
pub fn physical_measure(sys: &FastSlowSystem, s: &MeasureSettings, seed: u64) -> MeasureReport {
    physical_measure_labelled(sys, s, seed, "measure")
}

fn physical_measure_labelled(sys: &FastSlowSystem, s: &MeasureSettings, seed: u64, label: &str) -> MeasureReport {
    let per: Vec<(Histogram2D, f64, f64)> = (0..s.n_orbits as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, label, i);
            let mut p = uniform_point(&mut rng);
            for _ in 0..s.burn_in {
                p = sys.step(p);
            }
            let mut h = Histogram2D::new(s.bins_x, s.bins_theta);
            let (mut m1, mut m2) = (Vec::new(), Vec::new());
            for _ in 0..s.n_steps {
                h.add(p);
                if let Some(c) = s.theta_center {
                    let d = lift_diff(p.theta, c);
                    m1.push(d);
                    m2.push(d * d);
                }
                p = sys.step(p);
            }
            (h, pairwise_sum(&m1), pairwise_sum(&m2))
        })
        .collect();
    let mut h = Histogram2D::new(s.bins_x, s.bins_theta);
    for (hi, _, _) in &per {
        h.merge(hi);
    }
    let n = (s.n_orbits * s.n_steps).max(1) as f64;
    let (spread, offset) = match s.theta_center {
        Some(_) => {
            let s1 = pairwise_sum(&per.iter().map(|t| t.1).collect::<Vec<_>>()) / n;
            let s2 = pairwise_sum(&per.iter().map(|t| t.2).collect::<Vec<_>>()) / n;
            (Some(s2.sqrt()), Some(s1))
        }
        None => (None, None),
    };
    MeasureReport { histogram: h, theta_spread: spread, theta_mean_offset: offset, seed }
}

/// `ν_ε(B)` from stationary orbit averages on an independent stream.
pub fn stationary_mean(sys: &FastSlowSystem, b: &TrigPoly2, s: &MeasureSettings, seed: u64) -> (f64, f64) {
    let per: Vec<f64> = (0..s.n_orbits as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "stationary-mean", i);
            let mut p = uniform_point(&mut rng);
            for _ in 0..s.burn_in {
                p = sys.step(p);
            }
            let mut v = Vec::with_capacity(s.n_steps);
            for _ in 0..s.n_steps {
                v.push(b.eval(p.x, p.theta));
                p = sys.step(p);
            }
            pairwise_sum(&v) / s.n_steps as f64
        })
        .collect();
    mean_stderr(&per)
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSettings {
    pub n_samples: usize,
    pub burn_in: usize,
    pub n_steps: usize,
    /// Extra forward steps that fix the centre slope at the end of the window.
    pub slope_window: usize,
}

impl Default for LyapunovSettings {
    fn default() -> Self {
        Self { n_samples: 16, burn_in: 5000, n_steps: 100_000, slope_window: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub epsilon: f64,
    /// Birkhoff average of `log υ`, `υ = π₂ dF(s^ε_*, 1)`.
    pub estimate: f64,
    pub stderr: f64,
    /// `(1/n)(log|det dFⁿ| − log|dFⁿ u|)` along the unstable direction `u`.
    pub det_estimate: f64,
    pub det_stderr: f64,
    /// `εψ̄_*(θ₋)` when the averaged drift has one sink.
    pub predictor: Option<f64>,
    pub per_sample: Vec<f64>,
}

fn lyapunov_orbit(sys: &FastSlowSystem, p0: TorusPoint, s: &LyapunovSettings) -> (f64, f64) {
    let eps = sys.epsilon();
    let mut p = p0;
    for _ in 0..s.burn_in {
        p = sys.step(p);
    }
    let total = s.n_steps + s.slope_window;
    let mut parts: Vec<Partials> = Vec::with_capacity(total);
    for _ in 0..total {
        let (q, d) = sys.step_partials(p);
        parts.push(d);
        p = q;
    }
    // centre slopes by one backward fold from the far end
    let mut slope = 0.0;
    let mut logs = vec![0.0; s.n_steps];
    for k in (0..total).rev() {
        let d = &parts[k];
        slope = xi_minus(eps, d, slope);
        if k < s.n_steps {
            logs[k] = (1.0 + eps * (d.wth + d.wx * slope)).abs().ln();
        }
    }
    // unstable direction (1, εw), forward
    let mut w = 0.0;
    let mut dlogs = Vec::with_capacity(s.n_steps);
    for d in &parts[..s.n_steps] {
        let j = sys.jacobian_from(d);
        let (ux, uy) = (1.0, eps * w);
        let (vx, vy) = (j.a * ux + j.b * uy, j.c * ux + j.e * uy);
        let growth = ((vx * vx + vy * vy) / (ux * ux + uy * uy)).sqrt();
        dlogs.push(j.det().abs().ln() - growth.ln());
        w = if eps > 0.0 { vy / (eps * vx) } else { 0.0 };
    }
    let n = s.n_steps as f64;
    (pairwise_sum(&logs) / n, pairwise_sum(&dlogs) / n)
}

pub fn central_lyapunov(sys: &FastSlowSystem, s: &LyapunovSettings, seed: u64) -> Result<LyapunovReport> {
    if s.n_steps == 0 || s.n_samples == 0 {
        return Err(Error::Validation("lyapunov needs n_steps > 0 and n_samples > 0".into()));
    }
    let est: Vec<(f64, f64)> = (0..s.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "lyapunov", i);
            lyapunov_orbit(sys, uniform_point(&mut rng), s)
        })
        .collect();
    let a: Vec<f64> = est.iter().map(|e| e.0).collect();
    let b: Vec<f64> = est.iter().map(|e| e.1).collect();
    let (m, se) = mean_stderr(&a);
    let (md, sed) = mean_stderr(&b);
    let predictor = classify_system(sys).ok().map(|c| sys.epsilon() * c.psi_bar_star_at_sink);
    Ok(LyapunovReport {
        epsilon: sys.epsilon(),
        estimate: m,
        stderr: if se.is_nan() { 0.0 } else { se },
        det_estimate: md,
        det_stderr: if sed.is_nan() { 0.0 } else { sed },
        predictor,
        per_sample: a,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSettings {
    pub lags: Vec<usize>,
    pub n_samples: usize,
    /// Protocol for `ν_ε(B)`.
    pub stationary: MeasureSettings,
}

/// `n_points` lags spread geometrically-then-linearly over `[0, lag_max]`.
pub fn lag_grid(lag_max: usize, n_points: usize) -> Vec<usize> {
    let mut v: Vec<usize> =
        (0..n_points).map(|k| (lag_max as f64 * k as f64 / (n_points - 1).max(1) as f64).round() as usize).collect();
    v.dedup();
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub epsilon: f64,
    pub lags: Vec<usize>,
    pub c_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub rate: f64,
    pub window: (usize, usize),
    pub r2: f64,
    pub leb_a: f64,
    pub nu_b: f64,
}

impl DecayFit {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "lag,C_hat,stderr")?;
        for k in 0..self.lags.len() {
            writeln!(w, "{},{},{}", self.lags[k], self.c_hat[k], self.stderr[k])?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub lags: Vec<usize>,
    pub c_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub leb_a: f64,
    pub nu_b: f64,
}

/// `Ĉ(n) = Leb(A·B∘Fⁿ) − Leb(A)ν_ε(B)` on the lag grid.
pub fn correlation_table(
    sys: &FastSlowSystem,
    a: &TrigPoly2,
    b: &TrigPoly2,
    s: &CorrelationSettings,
    seed: u64,
) -> Result<CorrelationTable> {
    if s.lags.is_empty() || s.n_samples < 2 {
        return Err(Error::Validation("correlation needs lags and at least 2 samples".into()));
    }
    let lag_max = *s.lags.iter().max().expect("non-empty");
    let rows: Vec<Vec<f64>> = (0..s.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "correlation", i);
            let mut p = uniform_point(&mut rng);
            let av = a.eval(p.x, p.theta);
            let mut out = Vec::with_capacity(s.lags.len());
            let mut li = 0;
            for n in 0..=lag_max {
                while li < s.lags.len() && s.lags[li] == n {
                    out.push(av * b.eval(p.x, p.theta));
                    li += 1;
                }
                p = sys.step(p);
            }
            out
        })
        .collect();
    let leb_a = a.mean();
    let (nu_b, nu_se) = stationary_mean(sys, b, &s.stationary, seed);
    let nu_se = if nu_se.is_nan() { 0.0 } else { nu_se };
    let mut c_hat = Vec::new();
    let mut stderr = Vec::new();
    for k in 0..s.lags.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        let (m, se) = mean_stderr(&col);
        c_hat.push(m - leb_a * nu_b);
        stderr.push((se * se + (leb_a * nu_se).powi(2)).sqrt());
    }
    Ok(CorrelationTable { lags: s.lags.clone(), c_hat, stderr, leb_a, nu_b })
}

/// Exponential fit on the largest contiguous window where `|Ĉ| > 3σ` and `log|Ĉ|` stays
/// within 0.5 of its regression line.
pub fn fit_decay(eps: f64, t: &CorrelationTable) -> Result<DecayFit> {
    let n = t.lags.len();
    let sig: Vec<bool> = (0..n).map(|k| t.c_hat[k].abs() > 3.0 * t.stderr[k] && t.c_hat[k] != 0.0).collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < n {
        if sig[k] {
            let start = k;
            while k < n && sig[k] {
                k += 1;
            }
            runs.push((start, k));
        } else {
            k += 1;
        }
    }
    runs.sort_by_key(|r| std::cmp::Reverse(r.1 - r.0));
    for (lo0, hi) in runs {
        let mut lo = lo0;
        while hi - lo >= 3 {
            let x: Vec<f64> = t.lags[lo..hi].iter().map(|&l| l as f64).collect();
            let y: Vec<f64> = t.c_hat[lo..hi].iter().map(|c| c.abs().ln()).collect();
            let (slope, icpt, r2) = linear_fit(&x, &y);
            let worst = x.iter().zip(&y).map(|(a, b)| (b - slope * a - icpt).abs()).fold(0.0, f64::max);
            if worst <= 0.5 && slope.is_finite() {
                return Ok(DecayFit {
                    epsilon: eps,
                    lags: t.lags.clone(),
                    c_hat: t.c_hat.clone(),
                    stderr: t.stderr.clone(),
                    rate: -slope,
                    window: (t.lags[lo], t.lags[hi - 1]),
                    r2,
                    leb_a: t.leb_a,
                    nu_b: t.nu_b,
                });
            }
            lo += 1;
        }
    }
    Err(Error::DegenerateFit("no window of 3 or more significant, log-linear lags".into()))
}

pub fn correlation_decay(
    sys: &FastSlowSystem,
    a: &TrigPoly2,
    b: &TrigPoly2,
    s: &CorrelationSettings,
    seed: u64,
) -> Result<DecayFit> {
    fit_decay(sys.epsilon(), &correlation_table(sys, a, b, s, seed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateScaling {
    pub epsilon: Vec<f64>,
    pub rate: Vec<f64>,
    /// Slope of `log ĉ_ε` against `log(ε/log ε⁻¹)`.
    pub slope: f64,
    pub r2: f64,
    /// Slope of `log ĉ_ε` against `log ε`.
    pub slope_pure: f64,
    /// Range of `ĉ_ε log(ε⁻¹)/ε`.
    pub c2_band: (f64, f64),
}

pub fn fit_rate_table(eps: &[f64], rate: &[f64]) -> Result<RateScaling> {
    if eps.len() < 3 || eps.len() != rate.len() {
        return Err(Error::Validation("rate scaling needs at least 3 matching points".into()));
    }
    if rate.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::DegenerateFit("non-positive fitted rate".into()));
    }
    let y: Vec<f64> = rate.iter().map(|r| r.ln()).collect();
    let x: Vec<f64> = eps.iter().map(|&e| (e / (1.0 / e).ln()).ln()).collect();
    let xp: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let (slope, _, r2) = linear_fit(&x, &y);
    let (slope_pure, _, _) = linear_fit(&xp, &y);
    let c2: Vec<f64> = eps.iter().zip(rate).map(|(&e, &r)| r * (1.0 / e).ln() / e).collect();
    let band = (c2.iter().copied().fold(f64::INFINITY, f64::min), c2.iter().copied().fold(0.0, f64::max));
    Ok(RateScaling { epsilon: eps.to_vec(), rate: rate.to_vec(), slope, r2, slope_pure, c2_band: band })
}

/// Runs `correlation_decay` at each ε (the system's ω is unchanged).
pub fn rate_scaling(
    sys: &FastSlowSystem,
    eps_grid: &[f64],
    a: &TrigPoly2,
    b: &TrigPoly2,
    settings: impl Fn(f64) -> CorrelationSettings,
    seed: u64,
) -> Result<(Vec<DecayFit>, RateScaling)> {
    let mut fits = Vec::new();
    for &e in eps_grid {
        fits.push(correlation_decay(&sys.with_epsilon(e), a, b, &settings(e), seed)?);
    }
    let table = fit_rate_table(eps_grid, &fits.iter().map(|f| f.rate).collect::<Vec<_>>())?;
    Ok((fits, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkReport {
    pub epsilon: f64,
    pub theta_minus: f64,
    pub horizon: usize,
    pub c: f64,
    pub samples: usize,
    pub mass: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// `|θ_n − θ₋|/√ε` after `horizon` steps from Lebesgue-distributed starts.
pub fn sink_deviations(sys: &FastSlowSystem, theta_minus: f64, horizon: usize, n: usize, seed: u64, label: &str) -> Vec<f64> {
    let root = sys.epsilon().sqrt();
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, label, i);
            let mut p = uniform_point(&mut rng);
            for _ in 0..horizon {
                p = sys.step(p);
            }
            lift_diff(p.theta, theta_minus).abs() / root
        })
        .collect()
}

/// Smallest `C` whose calibration mass clears 1/2 by two Wilson half-widths.
pub fn calibrate_sink_constant(devs: &[f64]) -> f64 {
    let mut s = devs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let target = 0.5 + 2.0 * 1.96 * 0.5 / n.sqrt();
    let k = ((target * n).ceil() as usize).clamp(1, s.len());
    s[k - 1] * (1.0 + 1e-12)
}

pub fn sink_localization(
    sys: &FastSlowSystem,
    theta_minus: f64,
    c: f64,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> SinkReport {
    let d = sink_deviations(sys, theta_minus, horizon, n_samples, seed, "sink");
    let k = d.iter().filter(|&&v| v < c).count();
    let (lo, hi) = wilson_interval(k, n_samples);
    SinkReport {
        epsilon: sys.epsilon(),
        theta_minus,
        horizon,
        c,
        samples: n_samples,
        mass: k as f64 / n_samples as f64,
        wilson_lo: lo,
        wilson_hi: hi,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvSeries {
    pub epsilon: f64,
    pub checkpoints: Vec<usize>,
    pub tv: Vec<f64>,
    /// TV between two halves of the first cloud, rescaled to the full cloud size.
    pub noise_floor: Vec<f64>,
    /// Decay rate of TV per `ε⁻¹log ε⁻¹` steps, when at least two points clear 2× the floor.
    pub envelope_rate: Option<f64>,
}

impl TvSeries {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step,tv,noise_floor")?;
        for k in 0..self.checkpoints.len() {
            writeln!(w, "{},{},{}", self.checkpoints[k], self.tv[k], self.noise_floor[k])?;
        }
        Ok(())
    }

    /// Largest rise of TV between checkpoints beyond twice the local noise floor.
    pub fn worst_rise(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut best = f64::INFINITY;
        for k in 0..self.tv.len() {
            if self.tv[k] > best + 2.0 * self.noise_floor[k] {
                worst = worst.max(self.tv[k] - best - 2.0 * self.noise_floor[k]);
            }
            best = best.min(self.tv[k]);
        }
        worst
    }
}

pub fn sample_family(family: &PairFamily, n: usize, rng: &mut impl Rng) -> Vec<TorusPoint> {
    let w: Vec<f64> = family.members.iter().map(|p| p.weight).collect();
    let total: f64 = w.iter().sum();
    let mut counts = vec![0usize; w.len()];
    for _ in 0..n {
        let mut u = rng.gen::<f64>() * total;
        let mut k = 0;
        while k + 1 < w.len() && u >= w[k] {
            u -= w[k];
            k += 1;
        }
        counts[k] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            out.extend(sample_pair(&family.members[k].pair, rng, c).into_iter().map(|(x, t)| TorusPoint::new(wrap(x), wrap(t))));
        }
    }
    out
}

fn histogram(points: &[TorusPoint], bins: usize) -> Histogram2D {
    let mut h = Histogram2D::new(bins, bins);
    for &p in points {
        h.add(p);
    }
    h
}

/// Pushes point clouds of both families (drawn from the same stream) and records the
/// discrete total variation at each checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn tv_contraction(
    sys: &FastSlowSystem,
    family1: &PairFamily,
    family2: &PairFamily,
    checkpoints: &[usize],
    bins: usize,
    n_points: usize,
    seed: u64,
) -> TvSeries {
    let mut c1 = sample_family(family1, n_points, &mut stream(seed, "tv-cloud", 0));
    let mut c2 = sample_family(family2, n_points, &mut stream(seed, "tv-cloud", 0));
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    let (mut tv, mut floor) = (Vec::new(), Vec::new());
    let mut done = 0;
    for &cp in &cps {
        let steps = cp - done;
        for c in [&mut c1, &mut c2] {
            c.par_iter_mut().for_each(|p| {
                for _ in 0..steps {
                    *p = sys.step(*p);
                }
            });
        }
        done = cp;
        tv.push(histogram(&c1, bins).tv_distance(&histogram(&c2, bins)));
        let half = c1.len() / 2;
        let f = histogram(&c1[..half], bins).tv_distance(&histogram(&c1[half..2 * half], bins));
        floor.push(f / std::f64::consts::SQRT_2);
    }
    let eps = sys.epsilon();
    let unit = if eps > 0.0 { (1.0 / eps).ln().max(1.0) / eps } else { 1.0 };
    let keep: Vec<usize> = (0..tv.len()).filter(|&k| tv[k] > 2.0 * floor[k]).collect();
    let envelope_rate = (keep.len() >= 2).then(|| {
        let x: Vec<f64> = keep.iter().map(|&k| cps[k] as f64 / unit).collect();
        let y: Vec<f64> = keep.iter().map(|&k| tv[k].ln()).collect();
        -linear_fit(&x, &y).0
    });
    TvSeries { epsilon: eps, checkpoints: cps, tv, noise_floor: floor, envelope_rate }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub a: f64,
    pub mu: f64,
    pub c: f64,
    pub psi_bar_star_at_sink: Option<f64>,
    pub theta_minus: Option<f64>,
    pub mostly_expanding: bool,
    pub diagnostic: Option<String>,
}

/// `ψ̄_*(θ₋)` over a grid of template parameters `(a, μ, c)`.
pub fn scan_mostly_expanding(grid: &[(f64, f64, f64)], epsilon: f64) -> Vec<ScanRow> {
    grid.par_iter()
        .map(|&(a, mu, c)| {
            let res = template(a, mu, c, epsilon).and_then(|s| classify_system(&s));
            match res {
                Ok(cl) => ScanRow {
                    a,
                    mu,
                    c,
                    psi_bar_star_at_sink: Some(cl.psi_bar_star_at_sink),
                    theta_minus: Some(cl.zeros.theta_minus),
                    mostly_expanding: cl.class == SystemClass::MostlyExpanding,
                    diagnostic: None,
                },
                Err(e) => ScanRow {
                    a,
                    mu,
                    c,
                    psi_bar_star_at_sink: None,
                    theta_minus: None,
                    mostly_expanding: false,
                    diagnostic: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn write_scan_csv(rows: &[ScanRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "a,mu,c,psi_bar_star_at_sink,theta_minus,mostly_expanding,diagnostic")?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.a,
            r.mu,
            r.c,
            opt(r.psi_bar_star_at_sink),
            opt(r.theta_minus),
            r.mostly_expanding,
            r.diagnostic.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::StandardPair;
    use crate::systems::{sys_a, sys_b};
    use crate::trig::TrigTerm;
    use std::f64::consts::TAU;

    #[test]
    fn histogram_density_integrates_to_one() {
        let r = physical_measure(
            &sys_b(0.01),
            &MeasureSettings { n_orbits: 4, burn_in: 100, n_steps: 2000, bins_x: 16, bins_theta: 8, theta_center: None },
            3,
        );
        let d = r.histogram.density();
        let integral: f64 = d.iter().sum::<f64>() / (16.0 * 8.0);
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sys_a_measure_sits_at_sink() {
        let r = physical_measure(
            &sys_a(0.01),
            &MeasureSettings { n_orbits: 8, burn_in: 3000, n_steps: 1000, bins_x: 8, bins_theta: 32, theta_center: Some(0.5) },
            1,
        );
        assert!((r.histogram.theta_mode() - 0.5).abs() <= 2.0 / 32.0);
        assert!(r.theta_spread.unwrap() < 1e-6);
    }

    #[test]
    fn sys_a_lyapunov_closed_form() {
        let s = LyapunovSettings { n_samples: 2, burn_in: 3000, n_steps: 2000, slope_window: 32 };
        let r = central_lyapunov(&sys_a(0.01), &s, 5).unwrap();
        let exact = (1.0 - TAU * 0.01).ln();
        assert!((r.estimate - exact).abs() < 1e-9, "{}", r.estimate);
        assert!((r.det_estimate - exact).abs() < 1e-9);
        let z = central_lyapunov(&sys_b(0.0), &s, 5).unwrap();
        assert_eq!(z.estimate, 0.0);
    }

    #[test]
    fn lyapunov_estimators_agree() {
        let s = LyapunovSettings { n_samples: 8, burn_in: 2000, n_steps: 20_000, slope_window: 64 };
        for sys in [sys_b(0.01), crate::systems::reference_expanding(0.01)] {
            let r = central_lyapunov(&sys, &s, 11).unwrap();
            let tol = 3.0 * (r.stderr.powi(2) + r.det_stderr.powi(2)).sqrt() + 1e-6;
            assert!((r.estimate - r.det_estimate).abs() < tol, "{} vs {}", r.estimate, r.det_estimate);
        }
    }

    #[test]
    fn rate_fit_identity() {
        let eps: [f64; 3] = [0.02, 0.01, 0.005];
        let rate: Vec<f64> = eps.iter().map(|&e| 0.5 * e / (1.0 / e).ln()).collect();
        let t = fit_rate_table(&eps, &rate).unwrap();
        assert!((t.slope - 1.0).abs() < 1e-12);
        assert!((t.c2_band.0 - 0.5).abs() < 1e-12 && (t.c2_band.1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn synthetic_exponential_is_fitted() {
        let lags: Vec<usize> = (0..20).map(|k| 10 * k).collect();
        let t = CorrelationTable {
            c_hat: lags.iter().map(|&l| 0.3 * (-0.02 * l as f64).exp()).collect(),
            stderr: vec![1e-4; 20],
            lags,
            leb_a: 0.0,
            nu_b: 0.0,
        };
        let f = fit_decay(0.01, &t).unwrap();
        assert!((f.rate - 0.02).abs() < 1e-12);
        assert!(f.r2 > 0.999);
        let flat = CorrelationTable { c_hat: vec![0.0; 20], ..t };
        assert!(matches!(fit_decay(0.01, &flat), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn constant_observable_does_not_correlate() {
        let a = TrigPoly2::new(vec![TrigTerm(0, 1, 1.0, 0.0)]);
        let one = TrigPoly2::zero().plus_constant(1.0);
        let s = CorrelationSettings {
            lags: vec![0, 5, 10],
            n_samples: 2000,
            stationary: MeasureSettings { n_orbits: 2, burn_in: 10, n_steps: 100, ..Default::default() },
        };
        let t = correlation_table(&sys_b(0.01), &a, &one, &s, 2).unwrap();
        for k in 0..3 {
            assert!(t.c_hat[k].abs() < 4.0 * t.stderr[k] + 1e-15, "{} {}", t.c_hat[k], t.stderr[k]);
        }
    }

    #[test]
    fn identical_families_have_zero_tv() {
        let fam = PairFamily::single(StandardPair::horizontal(0.1, 0.3, 0.4));
        let tv = tv_contraction(&sys_b(0.01), &fam, &fam, &[0, 10, 20], 8, 2000, 4);
        assert!(tv.tv.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sink_constant_clears_half() {
        let devs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let c = calibrate_sink_constant(&devs);
        let k = devs.iter().filter(|&&d| d < c).count();
        assert!(wilson_interval(k, 1000).0 >= 0.5);
    }

    #[test]
    fn skew_product_scan_is_negative() {
        let rows = scan_mostly_expanding(&[(0.0, 1.0, 0.0), (0.1, 0.5, 0.0)], 0.01);
        for r in rows {
            let v = r.psi_bar_star_at_sink.unwrap();
            assert!(v < 0.0, "{v}");
        }
        assert!(scan_mostly_expanding(&[], 0.01).is_empty());
    }
}
