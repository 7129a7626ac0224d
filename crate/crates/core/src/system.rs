//! Fast-slow maps `F_ε(x,θ) = (d·x + f_pert(x,θ), θ + εω(x,θ)) mod 1`.

use crate::error::{Error, Result};
use crate::trig::{certified_sup_abs, certified_sup_grad, Jet, TrigPoly2};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Grid used to certify sup norms and determinant positivity.
pub const CERT_GRID: usize = 512;

/// Reduce to `[0, 1)`.
#[inline]
pub fn wrap(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Difference `a − b` taken on the nearest lift, in `[-1/2, 1/2]`.
#[inline]
pub fn lift_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - d.round()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x: f64,
    pub theta: f64,
}

impl TorusPoint {
    pub fn new(x: f64, theta: f64) -> Self {
        Self { x: wrap(x), theta: wrap(theta) }
    }

    /// Euclidean distance on the torus.
    pub fn dist(&self, other: &TorusPoint) -> f64 {
        lift_diff(self.x, other.x).hypot(lift_diff(self.theta, other.theta))
    }
}

/// One-step derivative `[[a, b], [c, e]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobian2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl Jacobian2 {
    pub const IDENTITY: Jacobian2 = Jacobian2 { a: 1.0, b: 0.0, c: 0.0, e: 1.0 };

    pub fn det(&self) -> f64 {
        self.a * self.e - self.b * self.c
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.e * v[1]]
    }

    /// `self · rhs`
    pub fn mul(&self, rhs: &Jacobian2) -> Jacobian2 {
        Jacobian2 {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.e,
            c: self.c * rhs.a + self.e * rhs.c,
            e: self.c * rhs.b + self.e * rhs.e,
        }
    }

    pub fn inverse(&self) -> Jacobian2 {
        let det = self.det();
        Jacobian2 { a: self.e / det, b: -self.b / det, c: -self.c / det, e: self.a / det }
    }

    pub fn to_rows(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.c, self.e]]
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.e.abs())
    }
}

/// Jets of `f` (including the linear part) and `ω` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemJet {
    pub f: Jet,
    pub omega: Jet,
}

/// First partials of `f` and `ω` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partials {
    pub fx: f64,
    pub fth: f64,
    pub wx: f64,
    pub wth: f64,
}

/// Certified sup norms of the map data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapNorms {
    pub grid: usize,
    /// `d − sup|∂_x f_pert|`
    pub lambda: f64,
    /// `d + sup|∂_x f_pert|`
    pub fx_max: f64,
    pub fth: f64,
    pub wx: f64,
    pub wth: f64,
    pub omega: f64,
    /// sup of the gradient norm of ω
    pub grad_omega: f64,
    pub hess_omega: f64,
    pub d3_omega: f64,
    pub hess_f: f64,
    pub d3_f: f64,
}

/// On-disk system definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub fibre_degree: u32,
    pub epsilon: f64,
    #[serde(default)]
    pub f_pert: TrigPoly2,
    #[serde(default)]
    pub omega: TrigPoly2,
}

impl SystemSpec {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("system spec serializes")
    }
}

#[derive(Clone, Debug)]
pub struct FastSlowSystem {
    d: u32,
    f_pert: TrigPoly2,
    omega: TrigPoly2,
    epsilon: f64,
    norms: OnceLock<MapNorms>,
}

impl PartialEq for FastSlowSystem {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.f_pert == other.f_pert
            && self.omega == other.omega
            && self.epsilon.to_bits() == other.epsilon.to_bits()
    }
}

impl FastSlowSystem {
    /// Builds and validates: certified `λ > 3` and `det dF > 0`.
    pub fn new(fibre_degree: u32, f_pert: TrigPoly2, omega: TrigPoly2, epsilon: f64) -> Result<Self> {
        let sys = Self::new_unchecked(fibre_degree, f_pert, omega, epsilon)?;
        sys.validate()?;
        Ok(sys)
    }

    /// Builds without the expansion and determinant checks (coefficients
    /// and ε must still be finite).
    pub fn new_unchecked(fibre_degree: u32, f_pert: TrigPoly2, omega: TrigPoly2, epsilon: f64) -> Result<Self> {
        if fibre_degree == 0 {
            return Err(Error::InvalidSystem("fibre_degree must be positive".into()));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidSystem(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        let finite = |p: &TrigPoly2| p.terms.iter().all(|t| t.2.is_finite() && t.3.is_finite());
        if !finite(&f_pert) || !finite(&omega) {
            return Err(Error::InvalidSystem("non-finite coefficient".into()));
        }
        Ok(Self { d: fibre_degree, f_pert, omega, epsilon, norms: OnceLock::new() })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        Self::new(spec.fibre_degree, spec.f_pert.clone(), spec.omega.clone(), spec.epsilon)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        Self::from_spec(&SystemSpec::from_toml(s)?)
    }

    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            fibre_degree: self.d,
            epsilon: self.epsilon,
            f_pert: self.f_pert.clone(),
            omega: self.omega.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        self.to_spec().to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        let coarse = f64::from(self.d) - self.f_pert.partial_bound(1, 0);
        if coarse <= 3.0 {
            let lambda = self.norms().lambda;
            if lambda <= 3.0 {
                return Err(Error::NotExpanding { lambda, required: 3.0 });
            }
        }
        if self.epsilon > 0.0 {
            let lb = self.certified_det_lower_bound();
            if lb <= 0.0 {
                return Err(Error::InvalidSystem(format!(
                    "determinant positivity not certified (lower bound {lb})"
                )));
            }
        }
        Ok(())
    }

    pub fn fibre_degree(&self) -> u32 {
        self.d
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn f_pert(&self) -> &TrigPoly2 {
        &self.f_pert
    }
    pub fn omega(&self) -> &TrigPoly2 {
        &self.omega
    }

    /// Same map data at a different ε (no re-validation of the determinant).
    pub fn with_epsilon(&self, epsilon: f64) -> FastSlowSystem {
        let norms = OnceLock::new();
        if let Some(n) = self.norms.get() {
            let _ = norms.set(n.clone());
        }
        FastSlowSystem { d: self.d, f_pert: self.f_pert.clone(), omega: self.omega.clone(), epsilon, norms }
    }

    /// Same fibre map and ε with a different ω.
    pub fn with_omega(&self, omega: TrigPoly2, epsilon: f64) -> Result<FastSlowSystem> {
        FastSlowSystem::new(self.d, self.f_pert.clone(), omega, epsilon)
    }

    pub fn norms(&self) -> &MapNorms {
        self.norms.get_or_init(|| self.certify_norms(CERT_GRID))
    }

    /// Certified norms computed on a `grid × grid` lattice.
    pub fn certify_norms(&self, grid: usize) -> MapNorms {
        let fxp = self.f_pert.derivative(1, 0);
        let fth = self.f_pert.derivative(0, 1);
        let wx = self.omega.derivative(1, 0);
        let wth = self.omega.derivative(0, 1);
        let fx_pert = certified_sup_abs(&fxp, grid);
        MapNorms {
            grid,
            lambda: f64::from(self.d) - fx_pert,
            fx_max: f64::from(self.d) + fx_pert,
            fth: certified_sup_abs(&fth, grid),
            wx: certified_sup_abs(&wx, grid),
            wth: certified_sup_abs(&wth, grid),
            omega: certified_sup_abs(&self.omega, grid),
            grad_omega: certified_sup_grad(&self.omega, grid),
            hess_omega: self.omega.tensor_bound(2),
            d3_omega: self.omega.tensor_bound(3),
            hess_f: self.f_pert.tensor_bound(2),
            d3_f: self.f_pert.tensor_bound(3),
        }
    }

    /// Lower bound on `det dF_ε` over the torus. Uses the analytic bound when it
    /// is positive, otherwise the grid minimum minus a Lipschitz margin.
    pub fn certified_det_lower_bound(&self) -> f64 {
        let n = self.norms();
        let eps = self.epsilon;
        let analytic = n.lambda * (1.0 - eps * n.wth) - eps * n.fth * n.wx;
        if analytic > 0.0 {
            return analytic;
        }
        let grid = CERT_GRID;
        let h = 1.0 / grid as f64;
        let mut m = f64::INFINITY;
        for a in 0..grid {
            for b in 0..grid {
                let p = self.partials(a as f64 * h, b as f64 * h);
                m = m.min(p.fx * (1.0 + eps * p.wth) - eps * p.fth * p.wx);
            }
        }
        let lip = n.hess_f * (1.0 + eps * n.wth)
            + n.fx_max * eps * n.hess_omega
            + eps * (n.hess_f * n.wx + n.fth * n.hess_omega);
        m - lip * h / std::f64::consts::SQRT_2
    }

    /// Lift of the fibre map, `d·x + f_pert(x,θ)`.
    #[inline]
    pub fn fibre_lift(&self, x: f64, th: f64) -> f64 {
        f64::from(self.d) * x + self.f_pert.eval(x, th)
    }

    #[inline]
    pub fn step(&self, p: TorusPoint) -> TorusPoint {
        TorusPoint {
            x: wrap(self.fibre_lift(p.x, p.theta)),
            theta: wrap(p.theta + self.epsilon * self.omega.eval(p.x, p.theta)),
        }
    }

    /// Lifted step: no reduction mod 1.
    #[inline]
    pub fn step_lift(&self, x: f64, th: f64) -> (f64, f64) {
        (self.fibre_lift(x, th), th + self.epsilon * self.omega.eval(x, th))
    }

    /// Orbit of length `n + 1` starting at `p`.
    pub fn iterate(&self, p: TorusPoint, n: usize) -> Vec<TorusPoint> {
        let mut out = Vec::with_capacity(n + 1);
        let mut q = TorusPoint::new(p.x, p.theta);
        out.push(q);
        for _ in 0..n {
            q = self.step(q);
            out.push(q);
        }
        out
    }

    #[inline]
    pub fn partials(&self, x: f64, th: f64) -> Partials {
        let (_, fx, fth) = self.f_pert.eval_grad(x, th);
        let (_, wx, wth) = self.omega.eval_grad(x, th);
        Partials { fx: f64::from(self.d) + fx, fth, wx, wth }
    }

    /// Step together with the partials at the base point.
    #[inline]
    pub fn step_partials(&self, p: TorusPoint) -> (TorusPoint, Partials) {
        let (fv, fx, fth) = self.f_pert.eval_grad(p.x, p.theta);
        let (wv, wx, wth) = self.omega.eval_grad(p.x, p.theta);
        let q = TorusPoint {
            x: wrap(f64::from(self.d) * p.x + fv),
            theta: wrap(p.theta + self.epsilon * wv),
        };
        (q, Partials { fx: f64::from(self.d) + fx, fth, wx, wth })
    }

    pub fn eval_with_jet(&self, p: TorusPoint, order: usize) -> SystemJet {
        let mut f = self.f_pert.eval_jet(p.x, p.theta, order);
        f.d[0][0] += f64::from(self.d) * p.x;
        if order >= 1 {
            f.d[1][0] += f64::from(self.d);
        }
        SystemJet { f, omega: self.omega.eval_jet(p.x, p.theta, order) }
    }

    #[inline]
    pub fn jacobian_from(&self, q: &Partials) -> Jacobian2 {
        let e = self.epsilon;
        Jacobian2 { a: q.fx, b: q.fth, c: e * q.wx, e: 1.0 + e * q.wth }
    }

    pub fn jacobian(&self, p: TorusPoint) -> Jacobian2 {
        self.jacobian_from(&self.partials(p.x, p.theta))
    }

    /// `d_pF^n`, accumulated in orbit order.
    pub fn jacobian_product(&self, p: TorusPoint, n: usize) -> Jacobian2 {
        let mut m = Jacobian2::IDENTITY;
        let mut q = TorusPoint::new(p.x, p.theta);
        for _ in 0..n {
            let (next, d) = self.step_partials(q);
            m = self.jacobian_from(&d).mul(&m);
            q = next;
        }
        m
    }

    /// Integer label `c(θ)` so that branch k covers lift values `c + k + [0,1)`.
    #[inline]
    fn lap_offset(&self, th: f64) -> f64 {
        self.fibre_lift(0.0, th).round()
    }

    /// Lifted preimage of `x_target` on branch `k`: the unique real `x` with
    /// `d·x + f_pert(x,θ) = c(θ) + k + x_target`.
    pub fn fibre_inverse_lift(&self, branch: u32, x_target: f64, th: f64) -> Result<f64> {
        if branch >= self.d {
            return Err(Error::Validation(format!("branch {branch} out of range 0..{}", self.d)));
        }
        let d = f64::from(self.d);
        let t = self.lap_offset(th) + f64::from(branch) + x_target;
        let s = self.f_pert.coefficient_sum();
        let (mut lo, mut hi) = ((t - s) / d - 1e-12, (t + s) / d + 1e-12);
        let mut x = ((t - self.f_pert.eval(t / d, th)) / d).clamp(lo, hi);
        for _ in 0..100 {
            let (fv, fx, _) = self.f_pert.eval_grad(x, th);
            let r = d * x + fv - t;
            if r.abs() < 1e-13 {
                return Ok(x);
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - r / (d + fx);
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-16 {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence { what: "fibre inverse branch".into(), iterations: 100 })
    }

    /// Preimage of `x_target` under `x ↦ f(x,θ)` on branch `k`, reduced mod 1.
    pub fn fibre_inverse_branch(&self, branch: u32, x_target: f64, th: f64) -> Result<f64> {
        Ok(wrap(self.fibre_inverse_lift(branch, x_target, th)?))
    }

    /// The preimage `p` with `F_ε(p) = q` whose fibre coordinate lies on branch k.
    pub fn inverse_step(&self, branch: u32, q: TorusPoint) -> Result<TorusPoint> {
        let mut th = q.theta;
        let mut x = self.fibre_inverse_lift(branch, q.x, th)?;
        for _ in 0..200 {
            let th_new = q.theta - self.epsilon * self.omega.eval(x, th);
            let x_new = self.fibre_inverse_lift(branch, q.x, th_new)?;
            let delta = (th_new - th).abs() + (x_new - x).abs();
            th = th_new;
            x = x_new;
            if delta < 1e-15 {
                return Ok(TorusPoint::new(x, th));
            }
        }
        let p = TorusPoint::new(x, th);
        if self.step(p).dist(&q) < 1e-12 {
            return Ok(p);
        }
        Err(Error::NoConvergence { what: "inverse step".into(), iterations: 200 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_a, sys_b};
    use std::f64::consts::{PI, TAU};

    #[test]
    fn sys_a_steps_match_closed_form() {
        let s = sys_a(0.01);
        let q = s.step(TorusPoint::new(0.1, 0.5));
        assert!((q.x - 0.4).abs() < 1e-15 && (q.theta - 0.5).abs() < 1e-15);
        let q = s.step(TorusPoint::new(0.1, 0.25));
        assert!((q.x - 0.4).abs() < 1e-15 && (q.theta - 0.26).abs() < 1e-15);
    }

    #[test]
    fn sys_a_jet_is_closed_form() {
        let s = sys_a(0.01);
        let j = s.eval_with_jet(TorusPoint::new(0.1, 0.2), 2);
        assert_eq!(j.f.dx(), 4.0);
        assert_eq!(j.f.dth(), 0.0);
        assert_eq!(j.omega.dx(), 0.0);
        assert!((j.omega.dth() - TAU * (0.4 * PI).cos()).abs() < 1e-14);
        assert!((j.omega.dth() - 1.94161).abs() < 1e-5);
        assert_eq!(j.f.d[2][0], 0.0);
        assert_eq!(j.f.d[1][1], 0.0);
        assert_eq!(j.f.d[0][2], 0.0);
    }

    #[test]
    fn sys_a_jacobian_rows() {
        let s = sys_a(0.01);
        for &th in &[0.0, 0.13, 0.5, 0.77] {
            let j = s.jacobian(TorusPoint::new(0.3, th));
            assert_eq!((j.a, j.b, j.c), (4.0, 0.0, 0.0));
            assert!((j.e - (1.0 + 0.02 * PI * (TAU * th).cos())).abs() < 1e-15);
        }
        let p = TorusPoint::new(0.21, 0.4);
        assert_eq!(s.jacobian_product(p, 1), s.jacobian(p));
    }

    #[test]
    fn sys_a_inverse_branches_are_linear() {
        let s = sys_a(0.01);
        for k in 0..4 {
            let x = s.fibre_inverse_branch(k, 0.2, 0.37).unwrap();
            assert!((x - (0.2 + f64::from(k)) / 4.0).abs() < 1e-15);
        }
        assert!(s.fibre_inverse_branch(4, 0.2, 0.0).is_err());
    }

    #[test]
    fn sys_b_lambda_matches_grid_minimum() {
        let s = sys_b(0.01);
        let lam = s.norms().lambda;
        assert!((lam - (4.0 - 0.2 * PI)).abs() < 1e-10);
        let n = 2048;
        let mut m = f64::INFINITY;
        for a in 0..n {
            for b in 0..n / 8 {
                m = m.min(s.partials(a as f64 / n as f64, b as f64 * 8.0 / n as f64).fx);
            }
        }
        assert!((lam - m).abs() < 1e-10);
    }

    #[test]
    fn inverse_step_round_trip() {
        let s = sys_b(0.01);
        let q = TorusPoint::new(0.83, 0.41);
        for k in 0..4 {
            let p = s.inverse_step(k, q).unwrap();
            assert!(s.step(p).dist(&q) < 1e-13);
        }
    }

    #[test]
    fn spec_round_trip_is_bit_exact() {
        let s = sys_b(0.01);
        let text = s.to_toml();
        let back = FastSlowSystem::from_toml(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn not_expanding_is_rejected() {
        let f = TrigPoly2::new(vec![crate::trig::TrigTerm(1, 0, 0.0, 0.2)]);
        let err = FastSlowSystem::new(4, f, TrigPoly2::zero(), 0.01).unwrap_err();
        assert!(matches!(err, Error::NotExpanding { .. }));
    }
}
