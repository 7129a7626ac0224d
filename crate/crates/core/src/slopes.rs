//! Centre slope fields, unstable slopes and expansion factors along orbits.
//!
//! The centre direction at `p` is `(s, 1)`; the unstable direction is
//! `(1, εw)`. Slopes are obtained by folding the one-step maps
//!
//! `Ξ⁻(p, s) = ((1+εω_θ)s − f_θ)/(f_x − εω_x s)` (backward along an orbit),
//! `Ξ⁺(p, w) = (ω_x + (1+εω_θ)w)/(f_x + εf_θ w)` (forward).

use crate::error::{Error, Result};
use crate::system::{FastSlowSystem, Jacobian2, Partials, TorusPoint};
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const DEFAULT_RHO_REG: f64 = 0.1;

#[inline]
pub fn xi_minus(eps: f64, d: &Partials, s: f64) -> f64 {
    ((1.0 + eps * d.wth) * s - d.fth) / (d.fx - eps * d.wx * s)
}

#[inline]
pub fn xi_plus(eps: f64, d: &Partials, w: f64) -> f64 {
    (d.wx + (1.0 + eps * d.wth) * w) / (d.fx + eps * d.fth * w)
}

/// Unperturbed slope `s_n` at `(x, θ)`: the explicit sum along the fibre orbit.
pub fn fibre_slope_n(sys: &FastSlowSystem, x: f64, th: f64, n: usize) -> f64 {
    let mut s = 0.0;
    let mut prod = 1.0;
    let mut x = x;
    for _ in 0..n {
        let (fv, fx, fth) = sys.f_pert().eval_grad(x, th);
        prod *= f64::from(sys.fibre_degree()) + fx;
        s -= fth / prod;
        x = crate::system::wrap(f64::from(sys.fibre_degree()) * x + fv);
    }
    s
}

/// Unperturbed `s_*` truncated where the certified tail `‖f_θ‖λ^{−n}/(λ−1)` drops below `tol`.
pub fn fibre_slope_star(sys: &FastSlowSystem, x: f64, th: f64, tol: f64) -> f64 {
    fibre_slope_n(sys, x, th, fibre_star_depth(sys, tol))
}

pub fn fibre_star_depth(sys: &FastSlowSystem, tol: f64) -> usize {
    let fth = sys.f_pert().partial_bound(0, 1);
    if fth == 0.0 {
        return 0;
    }
    let lam = sys.norms().lambda;
    let mut n = 0usize;
    let mut tail = fth / (lam - 1.0);
    while tail >= tol && n < 10_000 {
        tail /= lam;
        n += 1;
    }
    n
}

/// `s_n` at `p` from the recursion `s_n(p) = (s_{n−1}(F₀p) − ∂_θf(p))/∂_xf(p)`.
pub fn slope_s_n_recursive(sys: &FastSlowSystem, p: TorusPoint, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let d = sys.partials(p.x, p.theta);
    let next = TorusPoint::new(sys.fibre_lift(p.x, p.theta), p.theta);
    (slope_s_n_recursive(sys, next, n - 1) - d.fth) / d.fx
}

pub fn slope_s_n(sys: &FastSlowSystem, p: TorusPoint, n: usize) -> f64 {
    fibre_slope_n(sys, p.x, p.theta, n)
}

/// Partials along the `F_ε` orbit `p₀ … p_{n−1}`.
pub fn orbit_partials(sys: &FastSlowSystem, p: TorusPoint, n: usize) -> Vec<Partials> {
    orbit_partials_end(sys, p, n).0
}

/// Partials along `p₀ … p_{n−1}` and the end point `p_n`.
pub fn orbit_partials_end(sys: &FastSlowSystem, p: TorusPoint, n: usize) -> (Vec<Partials>, TorusPoint) {
    let mut out = Vec::with_capacity(n);
    let mut q = p;
    for _ in 0..n {
        let (next, d) = sys.step_partials(q);
        out.push(d);
        q = next;
    }
    (out, q)
}

/// Backward fold of `Ξ⁻` with terminal seed 0.
pub fn fold_minus(eps: f64, partials: &[Partials]) -> f64 {
    partials.iter().rev().fold(0.0, |s, d| xi_minus(eps, d, s))
}

pub fn slope_s_eps_n(sys: &FastSlowSystem, p: TorusPoint, n: usize) -> f64 {
    fold_minus(sys.epsilon(), &orbit_partials(sys, p, n))
}

/// Certified interval `[-S, S]` invariant under every `Ξ⁻` and the contraction
/// bound `σ̂ = sup |∂Ξ⁻/∂s|` over it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeContraction {
    pub s_bound: f64,
    pub sigma: f64,
}

pub fn slope_contraction(sys: &FastSlowSystem) -> Result<SlopeContraction> {
    let n = sys.norms();
    let eps = sys.epsilon();
    let (a, b, c) = (eps * n.wx, n.lambda - 1.0 - eps * n.wth, n.fth);
    let s = if a == 0.0 {
        if b <= 0.0 {
            return Err(Error::ContractionNotCertified { sigma: f64::INFINITY });
        }
        c / b
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 || b <= 0.0 {
            return Err(Error::ContractionNotCertified { sigma: f64::INFINITY });
        }
        (b - disc.sqrt()) / (2.0 * a)
    };
    let den = n.lambda - eps * n.wx * s;
    if den <= 0.0 {
        return Err(Error::ContractionNotCertified { sigma: f64::INFINITY });
    }
    // det/(f_x − εω_x s)² is decreasing in f_x, so the sup sits at f_x = λ
    let sigma = (n.lambda * (1.0 + eps * n.wth) + eps * n.fth * n.wx) / (den * den);
    Ok(SlopeContraction { s_bound: s, sigma })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeStar {
    pub value: f64,
    pub n: usize,
    pub sigma: f64,
    pub tail_bound: f64,
}

/// Depth so that the certified increment bound `σ̂^{n−1}(‖f_θ‖/λ)/(1−σ̂)` is below `tol`.
pub fn star_depth(sys: &FastSlowSystem, c: &SlopeContraction, tol: f64) -> usize {
    let n = sys.norms();
    let first = n.fth / n.lambda;
    if first == 0.0 {
        return 1;
    }
    let mut k = 1usize;
    let mut bound = first / (1.0 - c.sigma);
    while bound >= tol && k < 100_000 {
        bound *= c.sigma;
        k += 1;
    }
    k
}

pub fn slope_s_star(sys: &FastSlowSystem, p: TorusPoint, tol: f64) -> Result<SlopeStar> {
    let c = slope_contraction(sys)?;
    if c.sigma >= 1.0 {
        return Err(Error::ContractionNotCertified { sigma: c.sigma });
    }
    let mut n = star_depth(sys, &c, tol).max(1);
    let eps = sys.epsilon();
    let (mut parts, mut end) = orbit_partials_end(sys, p, n);
    loop {
        let sn = fold_minus(eps, &parts);
        let sm = fold_minus(eps, &parts[..n - 1]);
        let tail = (sn - sm).abs() / (1.0 - c.sigma);
        if tail < tol || n > 100_000 {
            return Ok(SlopeStar { value: sn, n, sigma: c.sigma, tail_bound: tail });
        }
        let (more, e) = orbit_partials_end(sys, end, 5);
        parts.extend(more);
        end = e;
        n += 5;
    }
}

/// `ψ_{n₀} = ∂_θω + ∂_xω·s_{n₀}` with the unperturbed slope field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiField {
    pub n0: usize,
    pub rho_reg: f64,
}

impl PsiField {
    pub fn new(sys: &FastSlowSystem, rho_reg: f64) -> Result<Self> {
        Ok(Self { n0: select_n0(sys, rho_reg)?, rho_reg })
    }

    pub fn eval(&self, sys: &FastSlowSystem, p: TorusPoint) -> f64 {
        let (_, wx, wth) = sys.omega().eval_grad(p.x, p.theta);
        wth + wx * fibre_slope_n(sys, p.x, p.theta, self.n0)
    }
}

/// `ψ_*` with the unperturbed `s_*` at tolerance `tol`.
pub fn psi_star(sys: &FastSlowSystem, p: TorusPoint, tol: f64) -> f64 {
    let (_, wx, wth) = sys.omega().eval_grad(p.x, p.theta);
    wth + wx * fibre_slope_star(sys, p.x, p.theta, tol)
}

/// Smallest `n₀` with grid sup `|ψ_{n₀} − ψ_{n₀+5}| < ϱ/2` on a 64×64 grid.
pub fn select_n0(sys: &FastSlowSystem, rho_reg: f64) -> Result<usize> {
    if !(rho_reg > 0.0 && rho_reg < 0.25) {
        return Err(Error::Validation(format!("regularization {rho_reg} outside (0, 1/4)")));
    }
    let g = 64;
    for n0 in 0..200 {
        let mut worst: f64 = 0.0;
        for a in 0..g {
            for b in 0..g {
                let (x, th) = (a as f64 / g as f64, b as f64 / g as f64);
                let (_, wx, _) = sys.omega().eval_grad(x, th);
                let diff = wx * (fibre_slope_n(sys, x, th, n0) - fibre_slope_n(sys, x, th, n0 + 5));
                worst = worst.max(diff.abs());
            }
        }
        if worst < rho_reg / 2.0 {
            return Ok(n0);
        }
    }
    Err(Error::NoConvergence { what: "psi regularization depth".into(), iterations: 200 })
}

/// Grid sup of `|ψ_*|` on a 64×64 grid plus one.
pub fn lambda_c(sys: &FastSlowSystem) -> f64 {
    let g = 64;
    let mut m: f64 = 0.0;
    for a in 0..g {
        for b in 0..g {
            m = m.max(psi_star(sys, TorusPoint::new(a as f64 / g as f64, b as f64 / g as f64), 1e-12).abs());
        }
    }
    m + 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFactors {
    pub base: TorusPoint,
    pub n: usize,
    pub s_eps: Vec<f64>,
    pub w_eps: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub log_upsilon: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl ExpansionFactors {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "k,s_eps,w_eps,log_gamma,log_upsilon,zeta")?;
        for k in 0..=self.n {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                k, self.s_eps[k], self.w_eps[k], self.log_gamma[k], self.log_upsilon[k], self.zeta[k]
            )?;
        }
        Ok(())
    }
}

/// `log Υ_n(p₀) = −Σ_j log(1 + ε(ω_θ + ω_x s^ε_{n−j})(p_j))`, using one backward fold.
fn log_upsilon_from(eps: f64, parts: &[Partials]) -> (f64, f64) {
    let mut s = 0.0;
    let mut log_u = 0.0;
    for d in parts.iter().rev() {
        s = xi_minus(eps, d, s);
        log_u -= (1.0 + eps * (d.wth + d.wx * s)).ln();
    }
    (s, log_u)
}

pub fn expansion_factors(sys: &FastSlowSystem, p: TorusPoint, n: usize, psi: &PsiField) -> ExpansionFactors {
    let eps = sys.epsilon();
    let parts = orbit_partials(sys, p, n);
    let orbit = sys.iterate(p, n);
    let mut out = ExpansionFactors {
        base: p,
        n,
        s_eps: Vec::with_capacity(n + 1),
        w_eps: Vec::with_capacity(n + 1),
        log_gamma: Vec::with_capacity(n + 1),
        log_upsilon: Vec::with_capacity(n + 1),
        zeta: Vec::with_capacity(n + 1),
    };
    let (mut w, mut lg, mut z) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let (s, lu) = log_upsilon_from(eps, &parts[..k]);
        out.s_eps.push(s);
        out.log_upsilon.push(lu);
        out.w_eps.push(w);
        out.log_gamma.push(lg);
        out.zeta.push(z);
        if k < n {
            let d = &parts[k];
            lg += (d.fx + eps * d.fth * w).ln();
            w = xi_plus(eps, d, w);
            z += eps * psi.eval(sys, orbit[k]);
        }
    }
    out
}

/// Forward unstable data `(w_n, log Γ_n)` along `parts`.
pub fn unstable_fold(eps: f64, parts: &[Partials]) -> (f64, f64) {
    let (mut w, mut lg) = (0.0, 0.0);
    for d in parts {
        lg += (d.fx + eps * d.fth * w).ln();
        w = xi_plus(eps, d, w);
    }
    (w, lg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentreExpansionReport {
    pub n: usize,
    pub log_product: f64,
    pub lambda_c: f64,
    pub band: f64,
    pub max_deviation: f64,
    pub fitted_k: f64,
}

/// Compares `Π υ∘F^k` with the band `e^{±Λ_c nε}` and `log υ` with `log(1+εψ_*)`.
/// `υ` uses the converged slope `s^ε_*`, obtained from an orbit extended by `lookahead` steps.
pub fn centre_expansion_bounds(
    sys: &FastSlowSystem,
    p: TorusPoint,
    n: usize,
    horizon_t: f64,
    lambda_c: f64,
    lookahead: usize,
) -> Result<CentreExpansionReport> {
    let eps = sys.epsilon();
    if eps > 0.0 && n as f64 > horizon_t / eps {
        return Err(Error::Validation(format!("n = {n} exceeds T/eps")));
    }
    let parts = orbit_partials(sys, p, n + lookahead);
    let orbit = sys.iterate(p, n);
    let mut slopes = vec![0.0; n + lookahead];
    let mut s = 0.0;
    for k in (0..n + lookahead).rev() {
        s = xi_minus(eps, &parts[k], s);
        slopes[k] = s;
    }
    let mut log_product = 0.0;
    let mut max_dev: f64 = 0.0;
    let band_rate = lambda_c * eps;
    for k in 0..n {
        let d = &parts[k];
        let lu = (1.0 + eps * (d.wth + d.wx * slopes[k])).ln();
        log_product += lu;
        if log_product.abs() > band_rate * (k + 1) as f64 + 1e-12 {
            return Err(Error::BandViolated { step: k, log_product, band: band_rate * (k + 1) as f64 });
        }
        let reference = (1.0 + eps * psi_star(sys, orbit[k], 1e-13)).ln();
        max_dev = max_dev.max((lu - reference).abs());
    }
    let scale = if eps > 0.0 && eps < 1.0 { eps * eps * (1.0 / eps).ln() } else { 0.0 };
    Ok(CentreExpansionReport {
        n,
        log_product,
        lambda_c,
        band: band_rate * n as f64,
        max_deviation: max_dev,
        fitted_k: if scale > 0.0 { max_dev / scale } else { 0.0 },
    })
}

/// Backward orbit `p = F^{−n}q` along an itinerary; `itinerary[0]` is the branch of the last step.
pub fn backward_orbit(sys: &FastSlowSystem, q: TorusPoint, itinerary: &[u32]) -> Result<TorusPoint> {
    let mut p = q;
    for &b in itinerary {
        p = sys.inverse_step(b, p)?;
    }
    Ok(p)
}

/// Points `F^{−n}q, …, F^{−1}q` of the backward orbit, deepest first.
pub fn backward_orbit_points(sys: &FastSlowSystem, q: TorusPoint, itinerary: &[u32]) -> Result<Vec<TorusPoint>> {
    let mut pts = Vec::with_capacity(itinerary.len());
    let mut p = q;
    for &b in itinerary {
        p = sys.inverse_step(b, p)?;
        pts.push(p);
    }
    pts.reverse();
    Ok(pts)
}

pub fn parse_itinerary(s: &str, d: u32) -> Result<Vec<u32>> {
    s.chars()
        .map(|c| {
            c.to_digit(10)
                .filter(|&v| v < d)
                .ok_or_else(|| Error::Parse(format!("bad itinerary symbol {c:?} for degree {d}")))
        })
        .collect()
}

/// `d_qF^{−n}` assembled from `(Γ_n, Υ_n, s^ε_n, w^ε_n)` at `p = F^{−n}q`, together with
/// `(log Υ_n, log Γ_n)`.
pub fn inverse_jacobian_formula(
    sys: &FastSlowSystem,
    q: TorusPoint,
    itinerary: &[u32],
) -> Result<(Jacobian2, f64, f64)> {
    let n = itinerary.len();
    if n == 0 {
        return Ok((Jacobian2::IDENTITY, 0.0, 0.0));
    }
    let eps = sys.epsilon();
    // re-iterating forward from p would amplify its rounding by the expansion
    let parts: Vec<Partials> =
        backward_orbit_points(sys, q, itinerary)?.iter().map(|p| sys.partials(p.x, p.theta)).collect();
    let (s, lu) = log_upsilon_from(eps, &parts);
    let (w, lg) = unstable_fold(eps, &parts);
    let (u, g) = (lu.exp(), (-lg).exp());
    let m = Jacobian2 { a: g - eps * w * u * s, b: u * s, c: -eps * w * u, e: u };
    Ok((m, lu, lg))
}

/// Product of the one-step inverses `(d_{p_0}F)^{−1}⋯(d_{p_{n−1}}F)^{−1}` along the backward orbit.
pub fn inverse_jacobian_direct(sys: &FastSlowSystem, q: TorusPoint, itinerary: &[u32]) -> Result<Jacobian2> {
    let mut m = Jacobian2::IDENTITY;
    for p in backward_orbit_points(sys, q, itinerary)? {
        m = m.mul(&sys.jacobian(p).inverse());
    }
    Ok(m)
}

pub fn max_rel_entry_error(a: &Jacobian2, b: &Jacobian2) -> f64 {
    let diff = Jacobian2 { a: a.a - b.a, b: a.b - b.b, c: a.c - b.c, e: a.e - b.e };
    diff.max_abs() / b.max_abs()
}

/// `|log det d_qF^{−n} − (log Υ_n − log Γ_n)|`, the determinant taken as `−Σ log det d_{p_k}F`.
/// The determinant of the assembled matrix itself cancels `Γ_n^{−1} ≈ λ^{−n}` against `O(ε)` terms.
pub fn log_jacobian_identity(sys: &FastSlowSystem, q: TorusPoint, itinerary: &[u32]) -> Result<f64> {
    let (_, lu, lg) = inverse_jacobian_formula(sys, q, itinerary)?;
    let pts = backward_orbit_points(sys, q, itinerary)?;
    let log_det: f64 = -pts.iter().map(|p| sys.jacobian(*p).det().abs().ln()).sum::<f64>();
    Ok((log_det - (lu - lg)).abs())
}

/// A map `ℝ² → ℝ²` given by two trigonometric polynomials.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigMap2 {
    pub u: crate::trig::TrigPoly2,
    pub v: crate::trig::TrigPoly2,
}

fn spectral_norm(m: [[f64; 2]; 2]) -> f64 {
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let s = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    (0.5 * (s + (s * s - 4.0 * det * det).max(0.0).sqrt())).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianChainCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖H(g∘f)‖ ≤ ‖Hg‖‖df‖² + k‖dg‖‖Hf‖` at `p` with exact jets (`k = 2`).
pub fn hessian_chain_bound_check(f: &TrigMap2, g: &crate::trig::TrigPoly2, p: [f64; 2]) -> HessianChainCheck {
    let ju = f.u.eval_jet(p[0], p[1], 2);
    let jv = f.v.eval_jet(p[0], p[1], 2);
    let q = [ju.value(), jv.value()];
    let jg = g.eval_jet(q[0], q[1], 2);
    let df = [[ju.dx(), ju.dth()], [jv.dx(), jv.dth()]];
    let hg = [[jg.d[2][0], jg.d[1][1]], [jg.d[1][1], jg.d[0][2]]];
    let dg = [jg.dx(), jg.dth()];
    let hu = [[ju.d[2][0], ju.d[1][1]], [ju.d[1][1], ju.d[0][2]]];
    let hv = [[jv.d[2][0], jv.d[1][1]], [jv.d[1][1], jv.d[0][2]]];
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for s in 0..2 {
                for t in 0..2 {
                    acc += df[t][j] * hg[s][t] * df[s][i];
                }
            }
            acc += dg[0] * hu[i][j] + dg[1] * hv[i][j];
            h[i][j] = acc;
        }
    }
    let lhs = spectral_norm(h);
    let nf = spectral_norm(df);
    let rhs = spectral_norm(hg) * nf * nf + 2.0 * dg[0].hypot(dg[1]) * spectral_norm(hu).max(spectral_norm(hv));
    HessianChainCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300 }
}
