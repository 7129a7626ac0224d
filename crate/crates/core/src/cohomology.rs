//! Periodic orbits of the fibre maps `f_θ` and the span test on their Birkhoff averages.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slopes::psi_star;
use crate::system::{lift_diff, wrap, FastSlowSystem, TorusPoint};

pub const MAX_PERIOD: usize = 8;
pub const MAX_SPAN_PERIOD: usize = 6;
pub const DEFAULT_MARGIN_THRESHOLD: f64 = 1e-4;
const DEDUP_TOL: f64 = 1e-9;
const PSI_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub theta: f64,
    pub period: usize,
    pub itinerary: Vec<u32>,
    pub points: Vec<f64>,
    pub birkhoff_omega: f64,
    pub birkhoff_psi: f64,
    /// `|f_θ^p(x₀) − x₀|` on the circle.
    pub residual: f64,
    /// The itinerary is a repetition of a shorter word.
    pub repeat: bool,
}

impl PeriodicOrbit {
    pub fn itinerary_string(&self) -> String {
        self.itinerary.iter().map(|b| b.to_string()).collect()
    }
}

fn circle_dist(a: f64, b: f64) -> f64 {
    lift_diff(a, b).abs()
}

/// Least rotation of each cyclic class of words of length `p` over `d` letters.
pub fn necklaces(d: u32, p: usize) -> Vec<Vec<u32>> {
    let total = (d as u64).pow(p as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut w = vec![0u32; p];
        let mut c = code;
        for i in (0..p).rev() {
            w[i] = (c % d as u64) as u32;
            c /= d as u64;
        }
        let is_min = (1..p).all(|r| {
            let rot: Vec<u32> = w[r..].iter().chain(&w[..r]).copied().collect();
            w <= rot
        });
        if is_min {
            out.push(w);
        }
    }
    out
}

/// Smallest period of the word under rotation.
pub fn primitive_period(w: &[u32]) -> usize {
    let p = w.len();
    (1..=p).find(|&q| p % q == 0 && (0..p).all(|i| w[i] == w[i % q])).unwrap_or(p)
}

fn orbit_for(sys: &FastSlowSystem, theta: f64, w: &[u32]) -> Result<Vec<f64>> {
    let p = w.len();
    let compose = |x: f64| -> Result<f64> {
        let mut y = x;
        for &b in w.iter().rev() {
            y = sys.fibre_inverse_lift(b, y, theta)?;
        }
        Ok(y)
    };
    let mut x = 0.5;
    let mut converged = false;
    for _ in 0..200 {
        let next = compose(x)?;
        let step = (next - x).abs();
        x = next;
        if step < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        // one more pass distinguishes a stalled last bit from a real failure
        let next = compose(x)?;
        if (next - x).abs() > 1e-13 {
            return Err(Error::NoConvergence { what: "periodic orbit fixed point".into(), iterations: 200 });
        }
    }
    let mut pts = Vec::with_capacity(p);
    pts.push(wrap(x));
    for i in 1..p {
        pts.push(wrap(sys.fibre_lift(pts[i - 1], theta)));
    }
    Ok(pts)
}

/// Orbits of period dividing `period`, one per cyclic class of itineraries whose point set
/// is new (branch identifications such as `0…0 ≡ (d−1)…(d−1)` are merged).
pub fn periodic_orbits(sys: &FastSlowSystem, theta: f64, period: usize) -> Result<Vec<PeriodicOrbit>> {
    if period == 0 || period > MAX_PERIOD {
        return Err(Error::Validation(format!("period {period} outside 1..={MAX_PERIOD}")));
    }
    let words = necklaces(sys.fibre_degree(), period);
    let found: Vec<Result<PeriodicOrbit>> = words
        .par_iter()
        .map(|w| {
            let points = orbit_for(sys, theta, w)?;
            let mut y = points[0];
            for _ in 0..period {
                y = wrap(sys.fibre_lift(y, theta));
            }
            let n = period as f64;
            let birkhoff_omega = points.iter().map(|&x| sys.omega().eval(x, theta)).sum::<f64>() / n;
            let birkhoff_psi =
                points.iter().map(|&x| psi_star(sys, TorusPoint::new(x, theta), PSI_TOL)).sum::<f64>() / n;
            Ok(PeriodicOrbit {
                theta,
                period,
                itinerary: w.clone(),
                residual: circle_dist(y, points[0]),
                repeat: primitive_period(w) < period,
                points,
                birkhoff_omega,
                birkhoff_psi,
            })
        })
        .collect();
    let mut out: Vec<PeriodicOrbit> = Vec::new();
    for o in found {
        let o = o?;
        let dup = out.iter().any(|q| {
            o.points.iter().all(|&a| q.points.iter().any(|&b| circle_dist(a, b) < DEDUP_TOL))
        });
        if !dup {
            out.push(o);
        }
    }
    Ok(out)
}

/// Distinct periodic points of `f_θ^p`.
pub fn periodic_point_count(orbits: &[PeriodicOrbit]) -> usize {
    let mut pts: Vec<f64> = Vec::new();
    for o in orbits {
        for &x in &o.points {
            if !pts.iter().any(|&y| circle_dist(x, y) < DEDUP_TOL) {
                pts.push(x);
            }
        }
    }
    pts.len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub theta: f64,
    pub max_period: usize,
    pub orbits: Vec<PeriodicOrbit>,
    pub margin: f64,
}

/// Primitive orbits of all periods up to `max_period`, with the span margin.
pub fn a0_span_report(sys: &FastSlowSystem, theta: f64, max_period: usize) -> Result<SpanReport> {
    if max_period == 0 || max_period > MAX_SPAN_PERIOD {
        return Err(Error::Validation(format!("max period {max_period} outside 1..={MAX_SPAN_PERIOD}")));
    }
    let mut orbits = Vec::new();
    for p in 1..=max_period {
        orbits.extend(periodic_orbits(sys, theta, p)?.into_iter().filter(|o| !o.repeat));
    }
    let pairs: Vec<(f64, f64)> = orbits.iter().map(|o| (o.birkhoff_omega, o.birkhoff_psi)).collect();
    let margin = span_margin(&pairs);
    Ok(SpanReport { theta, max_period, orbits, margin })
}

pub fn a0_span_margin(sys: &FastSlowSystem, theta: f64, max_period: usize) -> Result<f64> {
    Ok(a0_span_report(sys, theta, max_period)?.margin)
}

/// Second singular value of the matrix of differences from the first pair, divided by
/// the square root of its row count.
pub fn span_margin(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < 3 {
        return 0.0;
    }
    let (a0, b0) = pairs[0];
    let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs[1..] {
        let (u, v) = (a - a0, b - b0);
        s11 += u * u;
        s12 += u * v;
        s22 += v * v;
    }
    let tr = s11 + s22;
    let det = s11 * s22 - s12 * s12;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    // smallest eigenvalue via det/λ_max avoids cancellation
    let lmax = 0.5 * tr + disc;
    let lmin = if lmax > 0.0 { (det / lmax).max(0.0) } else { 0.0 };
    (lmin / (pairs.len() - 1) as f64).sqrt()
}

/// Margins on a uniform θ grid.
pub fn a0_margin_scan(sys: &FastSlowSystem, n_theta: usize, max_period: usize) -> Result<Vec<(f64, f64)>> {
    (0..n_theta)
        .into_par_iter()
        .map(|i| {
            let th = i as f64 / n_theta as f64;
            Ok((th, a0_span_margin(sys, th, max_period)?))
        })
        .collect()
}

pub fn write_csv(reports: &[SpanReport], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "theta,period,itinerary,birkhoff_omega,birkhoff_psi,margin")?;
    for r in reports {
        for o in &r.orbits {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.theta,
                o.period,
                o.itinerary_string(),
                o.birkhoff_omega,
                o.birkhoff_psi,
                r.margin
            )?;
        }
    }
    Ok(())
}
