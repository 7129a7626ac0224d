//! Centre curves, standard rectangles and foliations, and standard patches with their
//! pushforward, adapted cutting, density splitting and gauge telemetry.
//!
//! A patch is stored as a map `Ψ(η*, s) = (X, Θ)` on a 33×33 Chebyshev–Lobatto grid of
//! `[0,1]²`: `η*` labels the leaf, `X = a(η*) + s·w(η*)` runs along it and `Θ = G_{η*}(X)`.
//! The mass density `p` is taken with respect to `dη* ds`; the Lebesgue density is
//! `p/|det DΨ|`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{cc_weights_on, diff_matrix, lobatto_points, mat_vec, Cheb};
use crate::constants::ConstantsLedger;
use crate::error::{Error, Result};
use crate::pairs::{
    f_on_curve, invert_increasing, resample_small, validate_pair, CurveLevel, StandardCurve, StandardPair,
};
use crate::slopes::{slope_contraction, slope_s_eps_n, star_depth};
use crate::system::{wrap, FastSlowSystem, TorusPoint};
use crate::trig::TrigPoly2;

pub const PATCH_DEGREE: usize = 32;
const NODES: usize = PATCH_DEGREE + 1;
pub const CURVE_SAMPLES: usize = 65;
pub const CENTRE_TOL: f64 = 1e-10;
pub const TOP_FIT_DEGREE: usize = 1;
/// Longest θ-span of a centre curve.
pub const MAX_SPAN: f64 = 0.5;
/// Patches taller than this are cut before the next pushforward step.
pub const MAX_PUSH_HEIGHT: f64 = 0.3;

/// The centre slope `s^ε_*` at a fixed certified depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentreField {
    pub depth: usize,
}

impl CentreField {
    pub fn new(sys: &FastSlowSystem) -> Result<Self> {
        let c = slope_contraction(sys)?;
        if c.sigma >= 1.0 {
            return Err(Error::ContractionNotCertified { sigma: c.sigma });
        }
        Ok(Self { depth: star_depth(sys, &c, CENTRE_TOL).max(1) })
    }

    #[inline]
    pub fn slope(&self, sys: &FastSlowSystem, x: f64, th: f64) -> f64 {
        slope_s_eps_n(sys, TorusPoint::new(wrap(x), wrap(th)), self.depth)
    }
}

/// Graph `x(θ)` of a centre curve, sampled at `θ₀ + k·step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentreCurve {
    pub theta0: f64,
    pub step: f64,
    pub x: Vec<f64>,
    pub slope: Vec<f64>,
}

impl CentreCurve {
    pub fn height(&self) -> f64 {
        self.step * (self.x.len() - 1) as f64
    }

    pub fn theta_end(&self) -> f64 {
        self.theta0 + self.height()
    }

    pub fn x_end(&self) -> f64 {
        *self.x.last().expect("non-empty")
    }

    /// Cubic Hermite between samples, tangent lines beyond the ends.
    pub fn eval(&self, th: f64) -> f64 {
        let n = self.x.len();
        if n == 1 || self.step == 0.0 {
            return self.x[0] + self.slope[0] * (th - self.theta0);
        }
        let u = (th - self.theta0) / self.step;
        if u <= 0.0 {
            return self.x[0] + self.slope[0] * (th - self.theta0);
        }
        if u >= (n - 1) as f64 {
            return self.x[n - 1] + self.slope[n - 1] * (th - self.theta_end());
        }
        let i = (u.floor() as usize).min(n - 2);
        let t = u - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h = self.step;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.x[i]
            + (t3 - 2.0 * t2 + t) * h * self.slope[i]
            + (-2.0 * t3 + 3.0 * t2) * self.x[i + 1]
            + (t3 - t2) * h * self.slope[i + 1]
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.slope.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn shifted(&self, dx: f64) -> Self {
        Self { x: self.x.iter().map(|v| v + dx).collect(), ..self.clone() }
    }

    /// Intersection with the graph `θ = leaf(x)`.
    pub fn intersect(&self, leaf: impl Fn(f64) -> f64, x_guess: f64) -> Result<f64> {
        let mut x = x_guess;
        let mut step = f64::INFINITY;
        for _ in 0..200 {
            let next = self.eval(leaf(x));
            step = (next - x).abs();
            if step < 1e-15 * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::NoConvergence {
            what: format!("centre curve / leaf intersection (last step {step:e} at x = {x})"),
            iterations: 200,
        })
    }
}

/// RK4 with step `ε/20` on `dx/dθ = s^ε_*(x, θ)` from `p` over `θ ∈ [θ_p, θ_p + span]`.
pub fn integrate_centre_curve(sys: &FastSlowSystem, p: TorusPoint, theta_span: f64) -> Result<CentreCurve> {
    integrate_with(sys, &CentreField::new(sys)?, p.x, p.theta, theta_span)
}

fn integrate_with(sys: &FastSlowSystem, field: &CentreField, x0: f64, th0: f64, span: f64) -> Result<CentreCurve> {
    if !(span >= 0.0 && span <= MAX_SPAN) {
        return Err(Error::Validation(format!("centre curve span {span} outside [0, {MAX_SPAN}]")));
    }
    let eps = sys.epsilon();
    let target = if eps > 0.0 { eps / 20.0 } else { 1.0 / 400.0 };
    let steps = (span / target).ceil() as usize;
    let h = if steps > 0 { span / steps as f64 } else { 0.0 };
    let f = |x: f64, th: f64| field.slope(sys, x, th);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ss = Vec::with_capacity(steps + 1);
    let mut x = x0;
    let mut k1 = f(x, th0);
    xs.push(x);
    ss.push(k1);
    for k in 0..steps {
        let th = th0 + k as f64 * h;
        let k2 = f(x + 0.5 * h * k1, th + 0.5 * h);
        let k3 = f(x + 0.5 * h * k2, th + 0.5 * h);
        let k4 = f(x + h * k3, th + h);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        k1 = f(x, th0 + (k + 1) as f64 * h);
        xs.push(x);
        ss.push(k1);
    }
    Ok(CentreCurve { theta0: th0, step: h, x: xs, slope: ss })
}

/// A Chebyshev graph continued by its order-3 Taylor polynomials beyond the ends.
struct TaylorExt {
    g: [Cheb; 4],
}

impl TaylorExt {
    fn new(g: &Cheb) -> Self {
        let d1 = g.derivative();
        let d2 = d1.derivative();
        let d3 = d2.derivative();
        Self { g: [g.clone(), d1, d2, d3] }
    }

    /// `k`-th derivative of the extension.
    fn deriv(&self, x: f64, k: usize) -> f64 {
        let (a, b) = (self.g[0].a, self.g[0].b);
        let at = if x < a {
            a
        } else if x > b {
            b
        } else {
            return self.g[k].eval(x);
        };
        let u = x - at;
        let mut s = 0.0;
        let mut fact = 1.0;
        for j in k..4 {
            if j > k {
                fact *= (j - k) as f64;
            }
            s += self.g[j].eval(at) * u.powi((j - k) as i32) / fact;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardRectangle {
    pub bottom: StandardCurve,
    pub top: StandardCurve,
    pub left: CentreCurve,
    pub right: CentreCurve,
    pub height: f64,
    pub z: f64,
    #[serde(rename = "Z")]
    pub big_z: f64,
    /// Largest residual of the least-squares top curve.
    pub top_fit_residual: f64,
}

/// Admissible target heights `[1.25Δε/Z̲, min(0.8Δε, 1/2)]`.
pub fn height_range(ledger: &ConstantsLedger) -> (f64, f64) {
    let de = ledger.max_height();
    (1.25 * de / ledger.z_under, (0.8 * de).min(MAX_SPAN))
}

fn is_constant(g: &Cheb) -> bool {
    g.coeffs.iter().skip(1).all(|&c| c == 0.0)
}

/// Rectangle over the standard curve `g0` with centre sides of height `target_height`.
pub fn build_rectangle(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    g0: &StandardCurve,
    target_height: f64,
) -> Result<StandardRectangle> {
    let (lo, hi) = height_range(ledger);
    if !(target_height >= lo && target_height <= hi) {
        return Err(Error::HeightOutOfRange { height: target_height, min: lo, max: hi });
    }
    let field = CentreField::new(sys)?;
    let (a, b) = (g0.a(), g0.b());
    let left = integrate_with(sys, &field, a, g0.eval(a), target_height)?;
    let right = integrate_with(sys, &field, b, g0.eval(b), target_height)?;
    rectangle_from_sides(sys, ledger, &field, g0, left, right, target_height)
}

/// Splits `g0` into halves until every leaf of the rectangle over it is shorter than `δ`,
/// then builds one rectangle on each.
pub fn build_rectangles(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    g0: &StandardCurve,
    target_height: f64,
) -> Result<Vec<StandardRectangle>> {
    if g0.length() < ledger.delta {
        let rect = build_rectangle(sys, ledger, g0, target_height)?;
        let widest = build_foliation(&rect)?.leaves.iter().fold(0.0_f64, |m, g| m.max(g.b - g.a));
        if widest < ledger.delta {
            return Ok(vec![rect]);
        }
    }
    let mid = 0.5 * (g0.a() + g0.b());
    let mut out = Vec::new();
    for (u, v) in [(g0.a(), mid), (mid, g0.b())] {
        let half = StandardCurve { g: Cheb::fit(u, v, PATCH_DEGREE, |x| g0.eval(x)), ..g0.clone() };
        out.extend(build_rectangles(sys, ledger, &half, target_height)?);
    }
    Ok(out)
}

fn rectangle_from_sides(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    field: &CentreField,
    g0: &StandardCurve,
    left: CentreCurve,
    right: CentreCurve,
    h: f64,
) -> Result<StandardRectangle> {
    let (a, b) = (g0.a(), g0.b());
    let (a1, b1) = (left.x_end(), right.x_end());
    if !(b1 > a1) {
        return Err(Error::LeafValidationFailed("centre sides cross".into()));
    }
    let (top, resid) = if is_constant(&g0.g) {
        (Cheb::constant(a1, b1, g0.g.coeffs[0] + h), 0.0)
    } else {
        let xs = lobatto_points(a, b, CURVE_SAMPLES - 1);
        let moved: Vec<Result<f64>> = xs
            .par_iter()
            .enumerate()
            .map(|(k, &x)| {
                if k == 0 {
                    Ok(a1)
                } else if k == CURVE_SAMPLES - 1 {
                    Ok(b1)
                } else {
                    Ok(integrate_with(sys, field, x, g0.eval(x), h)?.x_end())
                }
            })
            .collect();
        let moved: Vec<f64> = moved.into_iter().collect::<Result<_>>()?;
        let ths: Vec<f64> = xs.iter().map(|&x| g0.eval(x) + h).collect();
        // the holonomy image is only Hölder across centre fibres; a straight re-fit keeps the top standard
        let low = Cheb::least_squares(a1, b1, TOP_FIT_DEGREE, &moved, &ths);
        let (e0, e1) = (ths[0] - low.eval(a1), ths[CURVE_SAMPLES - 1] - low.eval(b1));
        let fit = Cheb::fit(a1, b1, PATCH_DEGREE, |x| low.eval(x) + e0 + (e1 - e0) * (x - a1) / (b1 - a1));
        let r = moved.iter().zip(&ths).fold(0.0_f64, |m, (&x, &t)| m.max((fit.eval(x) - t).abs()));
        (fit, r)
    };
    let len = (b - a).min(b1 - a1);
    let z = (ledger.delta / len).max(2.0);
    if z > 100.0 {
        return Err(Error::LeafValidationFailed(format!("rectangle too narrow: z = {z}")));
    }
    let big_z = ledger.z_under.max(ledger.max_height() / h);
    Ok(StandardRectangle {
        bottom: g0.clone(),
        top: StandardCurve { g: top, z: g0.z, trimmed: false },
        left,
        right,
        height: h,
        z,
        big_z,
        top_fit_residual: resid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Foliation {
    pub levels: Vec<f64>,
    pub leaves: Vec<Cheb>,
    /// `‖d log ∂_θη‖`.
    pub dlog: f64,
    /// `‖H log ∂_θη‖`.
    pub hlog: f64,
}

/// Leaves `G_{η*} = η*G̃₁ + (1−η*)G̃₀` at the Lobatto levels, cut off by the centre sides.
pub fn build_foliation(rect: &StandardRectangle) -> Result<Foliation> {
    let e0 = TaylorExt::new(&rect.bottom.g);
    let e1 = TaylorExt::new(&rect.top.g);
    let levels = lobatto_points(0.0, 1.0, PATCH_DEGREE);
    let mut leaves = Vec::with_capacity(NODES);
    for (i, &eta) in levels.iter().enumerate() {
        if i == 0 {
            leaves.push(rect.bottom.g.clone());
            continue;
        }
        if i == PATCH_DEGREE {
            leaves.push(rect.top.g.clone());
            continue;
        }
        let g = |x: f64| eta * e1.deriv(x, 0) + (1.0 - eta) * e0.deriv(x, 0);
        let xl = rect.left.intersect(g, rect.bottom.a() + eta * (rect.top.a() - rect.bottom.a()))?;
        let xr = rect.right.intersect(g, rect.bottom.b() + eta * (rect.top.b() - rect.bottom.b()))?;
        if !(xr > xl) {
            return Err(Error::LeafValidationFailed(format!("empty leaf at level {eta}")));
        }
        leaves.push(Cheb::fit(xl, xr, PATCH_DEGREE, g));
    }
    let (lo, hi) = (rect.bottom.a().min(rect.top.a()), rect.bottom.b().max(rect.top.b()));
    let (mut dlog, mut hlog) = (0.0_f64, 0.0_f64);
    for k in 0..=256 {
        let x = lo + (hi - lo) * k as f64 / 256.0;
        let d = e1.deriv(x, 0) - e0.deriv(x, 0);
        let d1 = (e1.deriv(x, 1) - e0.deriv(x, 1)) / d;
        let d2 = (e1.deriv(x, 2) - e0.deriv(x, 2)) / d;
        dlog = dlog.max(d1.abs());
        hlog = hlog.max((d2 - d1 * d1).abs());
    }
    Ok(Foliation { levels, leaves, dlog, hlog })
}

/// Leaf-by-leaf validation of a foliation at the prestandard level with `3z`.
pub fn validate_foliation(ledger: &ConstantsLedger, rect: &StandardRectangle, fol: &Foliation) -> Vec<String> {
    let mut bad = Vec::new();
    for (eta, g) in fol.levels.iter().zip(&fol.leaves) {
        let pair = StandardPair::new(g.clone(), Cheb::constant(g.a, g.b, 1.0), 3.0 * rect.z, 0.0);
        let v = validate_pair(ledger, &pair, CurveLevel::Prestandard);
        if !v.valid {
            bad.push(format!("leaf {eta}: {:?}", v.violations));
        }
        if g.width() < ledger.delta / (3.0 * rect.z) * (1.0 - 1e-12) {
            bad.push(format!("leaf {eta} shorter than delta/(3z)"));
        }
    }
    bad
}

/// Centre-fibre heights measured by integrating `m` centre curves from the bottom to the top.
pub fn sample_fibre_heights(sys: &FastSlowSystem, rect: &StandardRectangle, m: usize) -> Result<Vec<f64>> {
    let field = CentreField::new(sys)?;
    let (a, b) = (rect.bottom.a(), rect.bottom.b());
    let span = (rect.height * 1.2 + 1e-3).min(MAX_SPAN);
    let top = TaylorExt::new(&rect.top.g);
    (0..m)
        .into_par_iter()
        .map(|k| {
            let x = a + (b - a) * (k as f64 + 0.5) / m as f64;
            let th0 = rect.bottom.eval(x);
            let c = integrate_with(sys, &field, x, th0, span)?;
            let xt = c.intersect(|u| top.deriv(u, 0), x)?;
            Ok(top.deriv(xt, 0) - th0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGauges {
    #[serde(rename = "Z")]
    pub big_z: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// `sup |∂_s log|det DΨ||/w`, the foliation term of leaf densities.
    pub fol1: f64,
    pub fol2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardPatch {
    /// `X(η*_i, s_k)` at `i·33 + k`.
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    /// Density with respect to `dη* ds`, integrating to one.
    pub p: Vec<f64>,
    pub z: f64,
    pub gauges: PatchGauges,
}

fn grid_weights() -> Vec<f64> {
    cc_weights_on(0.0, 1.0, PATCH_DEGREE)
}

fn d_eta(f: &[f64], d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for k in 0..NODES {
        let col: Vec<f64> = (0..NODES).map(|i| f[i * NODES + k]).collect();
        for (i, v) in mat_vec(d, &col).into_iter().enumerate() {
            out[i * NODES + k] = v;
        }
    }
    out
}

fn d_s(f: &[f64], d: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    for i in 0..NODES {
        out.extend(mat_vec(d, &f[i * NODES..(i + 1) * NODES]));
    }
    out
}

/// Gradient in `(x, θ)` from the `(η*, s)` gradient.
fn to_xy(f: &[f64], d: &[f64], jac: &Jac) -> (Vec<f64>, Vec<f64>) {
    let fe = d_eta(f, d);
    let fs = d_s(f, d);
    let n = f.len();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    for q in 0..n {
        fx[q] = (fe[q] * jac.ts[q] - fs[q] * jac.te[q]) / jac.det[q];
        fy[q] = (fs[q] * jac.xe[q] - fe[q] * jac.xs[q]) / jac.det[q];
    }
    (fx, fy)
}

struct Jac {
    xe: Vec<f64>,
    xs: Vec<f64>,
    te: Vec<f64>,
    ts: Vec<f64>,
    det: Vec<f64>,
}

fn jacobian(x: &[f64], theta: &[f64], d: &[f64]) -> Jac {
    let xe = d_eta(x, d);
    let xs = d_s(x, d);
    let te = d_eta(theta, d);
    let ts = d_s(theta, d);
    let det = (0..x.len()).map(|q| xe[q] * ts[q] - xs[q] * te[q]).collect();
    Jac { xe, xs, te, ts, det }
}

impl StandardPatch {
    /// Normalizes `p` and measures the gauges.
    pub fn assemble(ledger: &ConstantsLedger, x: Vec<f64>, theta: Vec<f64>, mut p: Vec<f64>, z: f64) -> Result<(f64, Self)> {
        let w = grid_weights();
        let mass: f64 = (0..NODES).map(|i| w[i] * (0..NODES).map(|k| w[k] * p[i * NODES + k]).sum::<f64>()).sum();
        if !(mass > 0.0) {
            return Err(Error::Validation(format!("patch mass {mass} not positive")));
        }
        p.iter_mut().for_each(|v| *v /= mass);
        if let Some(q) = p.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Validation(format!("patch density not positive at node {q}")));
        }
        let gauges = measure_gauges(ledger, &x, &theta, &p);
        Ok((mass, Self { x, theta, p, z, gauges }))
    }

    #[inline]
    pub fn node(i: usize, k: usize) -> usize {
        i * NODES + k
    }

    pub fn leaf_range(&self, i: usize) -> (f64, f64) {
        (self.x[i * NODES], self.x[i * NODES + PATCH_DEGREE])
    }

    /// Leaf `i` as a graph over its x-interval.
    pub fn leaf_curve(&self, i: usize) -> Cheb {
        let (a, b) = self.leaf_range(i);
        Cheb::from_values(a, b, &self.theta[i * NODES..(i + 1) * NODES])
    }

    pub fn leaf_density_s(&self, i: usize) -> Cheb {
        Cheb::from_values(0.0, 1.0, &self.p[i * NODES..(i + 1) * NODES])
    }

    /// `ν_{η*}` at the grid levels.
    pub fn leaf_masses(&self) -> Vec<f64> {
        let w = grid_weights();
        (0..NODES).map(|i| (0..NODES).map(|k| w[k] * self.p[i * NODES + k]).sum()).collect()
    }

    pub fn mass(&self) -> f64 {
        let w = grid_weights();
        self.leaf_masses().iter().zip(&w).map(|(a, b)| a * b).sum()
    }

    /// `∫ g dμ_K`.
    pub fn integrate(&self, g: impl Fn(f64, f64) -> f64) -> f64 {
        let w = grid_weights();
        let mut s = 0.0;
        for i in 0..NODES {
            for k in 0..NODES {
                let q = i * NODES + k;
                s += w[i] * w[k] * self.p[q] * g(self.x[q], self.theta[q]);
            }
        }
        s
    }

    pub fn det(&self) -> Vec<f64> {
        jacobian(&self.x, &self.theta, &diff_matrix(0.0, 1.0, PATCH_DEGREE)).det
    }

    pub fn lebesgue_area(&self) -> f64 {
        let w = grid_weights();
        let det = self.det();
        let mut s = 0.0;
        for i in 0..NODES {
            for k in 0..NODES {
                s += w[i] * w[k] * det[i * NODES + k].abs();
            }
        }
        s
    }

    /// Lebesgue density at the grid nodes.
    pub fn lebesgue_density(&self) -> Vec<f64> {
        self.det().iter().zip(&self.p).map(|(d, p)| p / d.abs()).collect()
    }

    /// `Θ(1, s) − Θ(0, s)` on the grid; the two sides are exact centre fibres.
    pub fn fibre_heights(&self) -> Vec<f64> {
        (0..NODES).map(|k| self.theta[PATCH_DEGREE * NODES + k] - self.theta[k]).collect()
    }

    fn column_chebs(v: &[f64]) -> Vec<Cheb> {
        (0..NODES).map(|k| Cheb::from_values(0.0, 1.0, &(0..NODES).map(|i| v[i * NODES + k]).collect::<Vec<_>>())).collect()
    }

    /// The grid restricted to `η* ∈ [e0, e1]` and re-interpolated on the full grid.
    fn restrict_eta(&self, e0: f64, e1: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (cx, ct, cp) = (Self::column_chebs(&self.x), Self::column_chebs(&self.theta), Self::column_chebs(&self.p));
        let lv = lobatto_points(e0, e1, PATCH_DEGREE);
        let n = NODES * NODES;
        let (mut x, mut t, mut p) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (i, &e) in lv.iter().enumerate() {
            for k in 0..NODES {
                let q = i * NODES + k;
                x[q] = cx[k].eval(e);
                t[q] = ct[k].eval(e);
                p[q] = cp[k].eval(e) * (e1 - e0);
            }
        }
        // the affine structure in s is kept exactly
        for i in 0..NODES {
            let (a, b) = (x[i * NODES], x[i * NODES + PATCH_DEGREE]);
            for (k, s) in lobatto_points(0.0, 1.0, PATCH_DEGREE).into_iter().enumerate() {
                x[i * NODES + k] = a + s * (b - a);
            }
        }
        (x, t, p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("patch serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn measure_gauges(ledger: &ConstantsLedger, x: &[f64], theta: &[f64], p: &[f64]) -> PatchGauges {
    let eps = ledger.epsilon;
    let d = diff_matrix(0.0, 1.0, PATCH_DEGREE);
    let jac = jacobian(x, theta, &d);
    let logrho: Vec<f64> = p.iter().zip(&jac.det).map(|(p, dt)| p.ln() - dt.abs().ln()).collect();
    let (lx, ly) = to_xy(&logrho, &d, &jac);
    let (lxx, lxy) = to_xy(&lx, &d, &jac);
    let (lyx, lyy) = to_xy(&ly, &d, &jac);
    let (mut dn, mut hn) = (0.0_f64, 0.0_f64);
    for q in 0..p.len() {
        dn = dn.max((lx[q] * lx[q] + (eps * ly[q]).powi(2)).sqrt());
        let h = lxx[q].powi(2) + (eps * lxy[q]).powi(2) + (eps * lyx[q]).powi(2) + (eps * eps * lyy[q]).powi(2);
        hn = hn.max(h.sqrt());
    }
    let heights: Vec<f64> = (0..NODES).map(|k| theta[PATCH_DEGREE * NODES + k] - theta[k]).collect();
    let min_h = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let max_h = heights.iter().copied().fold(0.0, f64::max);
    let big_z = ledger.z_under.max(ledger.max_height() / min_h);
    let r = dn.max(hn / ledger.frak_e);
    let m = big_z.max(r);
    let logdet: Vec<f64> = jac.det.iter().map(|v| v.abs().ln()).collect();
    let l1 = d_s(&logdet, &d);
    let l2 = d_s(&l1, &d);
    let (mut fol1, mut fol2) = (0.0_f64, 0.0_f64);
    for i in 0..NODES {
        let w = x[i * NODES + PATCH_DEGREE] - x[i * NODES];
        for k in 0..NODES {
            fol1 = fol1.max(l1[i * NODES + k].abs() / w);
            fol2 = fol2.max(l2[i * NODES + k].abs() / (w * w));
        }
    }
    PatchGauges { big_z, r, m, l: m.powf(ledger.gamma), min_height: min_h, max_height: max_h, fol1, fol2 }
}

/// Patch on a foliated rectangle with Lebesgue density proportional to `rho`.
pub fn patch_from_foliation(
    ledger: &ConstantsLedger,
    rect: &StandardRectangle,
    fol: &Foliation,
    rho: impl Fn(f64, f64) -> f64,
) -> Result<(f64, StandardPatch)> {
    let s = lobatto_points(0.0, 1.0, PATCH_DEGREE);
    let n = NODES * NODES;
    let (mut x, mut t) = (vec![0.0; n], vec![0.0; n]);
    for (i, leaf) in fol.leaves.iter().enumerate() {
        for (k, &sk) in s.iter().enumerate() {
            let xv = leaf.a + sk * (leaf.b - leaf.a);
            x[i * NODES + k] = xv;
            t[i * NODES + k] = leaf.eval(xv);
        }
    }
    let det = jacobian(&x, &t, &diff_matrix(0.0, 1.0, PATCH_DEGREE)).det;
    let p: Vec<f64> = (0..n).map(|q| rho(x[q], t[q]) * det[q].abs()).collect();
    StandardPatch::assemble(ledger, x, t, p, rect.z)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disintegration {
    pub eta_star: f64,
    pub nu: f64,
    pub pair: StandardPair,
    pub r: f64,
    pub r_bound: f64,
}

/// Leaf pair at level `η*` with density `∝ p(η*, ·)`, and its measured roughness against
/// the bound implied by `ℛ`, the leaf slopes and the foliation terms.
pub fn disintegrate(ledger: &ConstantsLedger, patch: &StandardPatch, eta_star: f64) -> Result<Disintegration> {
    let cx = StandardPatch::column_chebs(&patch.x);
    let ct = StandardPatch::column_chebs(&patch.theta);
    let cp = StandardPatch::column_chebs(&patch.p);
    let (a, b) = (cx[0].eval(eta_star), cx[PATCH_DEGREE].eval(eta_star));
    let th: Vec<f64> = ct.iter().map(|c| c.eval(eta_star)).collect();
    let pv: Vec<f64> = cp.iter().map(|c| c.eval(eta_star)).collect();
    let w = grid_weights();
    let nu: f64 = pv.iter().zip(&w).map(|(p, w)| p * w).sum();
    let g = Cheb::from_values(a, b, &th);
    let rho = Cheb::from_values(a, b, &pv.iter().map(|p| p / (b - a)).collect::<Vec<_>>());
    let mut pair = StandardPair::new(g, rho, patch.z, 0.0);
    let v = validate_pair(ledger, &pair, CurveLevel::Prestandard);
    pair.density.r = v.r;
    let eps = ledger.epsilon;
    let rr = patch.gauges.r;
    let (s1, s2) = (v.slopes[0], v.slopes[1]);
    let r1 = rr * (1.0 + s1) + patch.gauges.fol1;
    let r2 = ledger.frak_e * rr * (1.0 + s1).powi(2) + s2 * rr + patch.gauges.fol2 + r1 * r1;
    let r_bound = r1.max(r2 / ledger.frak_d);
    if v.r > 1.1 * r_bound + 1e-6 {
        return Err(Error::Validation(format!("leaf roughness {} above bound {r_bound} (eps {eps})", v.r)));
    }
    Ok(Disintegration { eta_star, nu, pair, r: v.r, r_bound })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPatch {
    pub weight: f64,
    pub patch: StandardPatch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatchFamily {
    pub members: Vec<WeightedPatch>,
}

impl PatchFamily {
    pub fn single(patch: StandardPatch) -> Self {
        Self { members: vec![WeightedPatch { weight: 1.0, patch }] }
    }

    pub fn total_weight(&self) -> f64 {
        crate::rng::pairwise_sum(&self.members.iter().map(|m| m.weight).collect::<Vec<_>>())
    }

    pub fn integrate(&self, g: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        let v: Vec<f64> = self.members.par_iter().map(|m| m.weight * m.patch.integrate(&g)).collect();
        crate::rng::pairwise_sum(&v)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Weighted mean of `ℒ`.
    pub fn mean_l(&self) -> f64 {
        let t = self.total_weight();
        crate::rng::pairwise_sum(&self.members.iter().map(|m| m.weight * m.patch.gauges.l).collect::<Vec<_>>()) / t
    }

    pub fn max_m(&self) -> f64 {
        self.members.iter().fold(0.0, |a, m| a.max(m.patch.gauges.m))
    }

    pub fn is_proper(&self, b_prop: f64) -> bool {
        self.mean_l() <= 2.0 * b_prop
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("family serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Cuts along `η*` levels of equal height on the line `s = 1/2` into
/// `N = ⌈2·height/(e^{−Λ_c mε}Δε)⌉` pieces, weighted by their masses.
pub fn cut_adapted(ledger: &ConstantsLedger, patch: &StandardPatch, m: usize) -> Result<Vec<WeightedPatch>> {
    let t = m as f64 * ledger.epsilon;
    let need = 4.0 * (ledger.lambda_c * t).exp();
    if !(ledger.z_under > need) {
        return Err(Error::ZTooSmall { z: ledger.z_under, required: need });
    }
    let e = (-ledger.lambda_c * t).exp() * ledger.max_height();
    let h = patch.gauges.max_height;
    let n = (2.0 * h / e).ceil().max(1.0) as usize;
    if n <= 1 {
        return Ok(vec![WeightedPatch { weight: 1.0, patch: patch.clone() }]);
    }
    cut_into(ledger, patch, n)
}

fn cut_into(ledger: &ConstantsLedger, patch: &StandardPatch, n: usize) -> Result<Vec<WeightedPatch>> {
    let mid = PATCH_DEGREE / 2;
    let col: Vec<f64> = (0..NODES).map(|i| patch.theta[i * NODES + mid]).collect();
    let c = Cheb::from_values(0.0, 1.0, &col);
    let dc = c.derivative();
    let (t0, t1) = (c.eval(0.0), c.eval(1.0));
    let mut levels = vec![0.0];
    for j in 1..n {
        let target = t0 + (t1 - t0) * j as f64 / n as f64;
        levels.push(invert_increasing(|e| (c.eval(e), dc.eval(e)), target, 0.0, 1.0)?);
    }
    levels.push(1.0);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let (x, t, p) = patch.restrict_eta(levels[j], levels[j + 1]);
        let (mass, piece) = StandardPatch::assemble(ledger, x, t, p, patch.z)?;
        out.push(WeightedPatch { weight: mass, patch: piece });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushDiagnostics {
    pub pieces: usize,
    /// Largest `|∫p′ − c_j|` before renormalization.
    pub projection_error: f64,
    pub predicted_big_z: f64,
    pub measured_big_z: f64,
}

/// One step of `F_ε` on a patch: bottom-curve partition, centre-curve transport of the
/// cut points across the leaves, leafwise pushforward of the density.
pub fn pushforward_patch_step(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    field: &CentreField,
    patch: &StandardPatch,
) -> Result<(Vec<WeightedPatch>, PushDiagnostics)> {
    let eps = sys.epsilon();
    let g0 = patch.leaf_curve(0);
    let dg0 = g0.derivative();
    let (xa, xb) = patch.leaf_range(0);
    let fg = |x: f64| f_on_curve(sys, &g0, &dg0, x);
    let (ja, jb) = (fg(xa).0, fg(xb).0);
    let jlen = jb - ja;
    if jlen > 0.5 {
        return Err(Error::CurveTooLong { length: jlen });
    }
    let piece = ledger.delta * (-ledger.trim_kappa).exp();
    let n = ((jlen / piece) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let span = (patch.gauges.max_height * 1.2 + 1e-3).min(MAX_SPAN);
    let mut cuts = Vec::with_capacity(n.saturating_sub(1));
    for j in 1..n {
        let x = invert_increasing(&fg, ja + jlen * j as f64 / n as f64, xa, xb)?;
        cuts.push(integrate_with(sys, field, x, g0.eval(x), span)?);
    }
    let leaves: Vec<Cheb> = (0..NODES).map(|i| patch.leaf_curve(i)).collect();
    let ext: Vec<TaylorExt> = leaves.iter().map(TaylorExt::new).collect();
    // x-coordinates of the cuts on every leaf
    let mut cut_x = vec![vec![0.0; n + 1]; NODES];
    for i in 0..NODES {
        let (a, b) = patch.leaf_range(i);
        cut_x[i][0] = a;
        cut_x[i][n] = b;
        for (j, c) in cuts.iter().enumerate() {
            cut_x[i][j + 1] = c.intersect(|x| ext[i].deriv(x, 0), c.x[0])?;
        }
        if cut_x[i].windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::LeafValidationFailed(format!("cut points out of order on leaf {i}")));
        }
    }
    let dleaves: Vec<Cheb> = leaves.iter().map(|l| l.derivative()).collect();
    let dens: Vec<Cheb> = (0..NODES).map(|i| patch.leaf_density_s(i)).collect();
    let s_nodes = lobatto_points(0.0, 1.0, PATCH_DEGREE);
    let w = grid_weights();
    let z_new = (0.8 * patch.z).max(2.0);
    let pieces: Vec<Result<(f64, f64, StandardPatch)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let cells = NODES * NODES;
            let (mut x, mut t, mut p) = (vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]);
            let mut c_j = 0.0;
            for i in 0..NODES {
                let (a, b) = patch.leaf_range(i);
                let wi = b - a;
                let (lo, hi) = (cut_x[i][j], cut_x[i][j + 1]);
                let f = |u: f64| f_on_curve(sys, &leaves[i], &dleaves[i], u);
                let (tlo, thi) = (f(lo).0, f(hi).0);
                let wn = thi - tlo;
                for (k, &sk) in s_nodes.iter().enumerate() {
                    let target = tlo + sk * wn;
                    let u = if k == 0 {
                        lo
                    } else if k == PATCH_DEGREE {
                        hi
                    } else {
                        invert_increasing(&f, target, lo, hi)?
                    };
                    let th = leaves[i].eval(u);
                    let q = i * NODES + k;
                    x[q] = target;
                    t[q] = th + eps * sys.omega().eval(u, th);
                    p[q] = dens[i].eval((u - a) / wi) * wn / (wi * f(u).1);
                }
                // exact for the degree-32 leaf density
                let (sa, sb) = ((lo - a) / wi, (hi - a) / wi);
                let part: f64 = lobatto_points(sa, sb, PATCH_DEGREE)
                    .into_iter()
                    .zip(cc_weights_on(sa, sb, PATCH_DEGREE))
                    .map(|(s, ws)| ws * dens[i].eval(s))
                    .sum();
                c_j += w[i] * part;
            }
            let sx = -x[0].floor();
            let st = -t[0].floor();
            x.iter_mut().for_each(|v| *v += sx);
            t.iter_mut().for_each(|v| *v += st);
            let (grid_mass, piece) = StandardPatch::assemble(ledger, x, t, p, z_new)?;
            Ok((c_j, (grid_mass - c_j).abs(), piece))
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut proj: f64 = 0.0;
    for r in pieces {
        let (c, e, piece) = r?;
        proj = proj.max(e);
        out.push(WeightedPatch { weight: c, patch: piece });
    }
    let predicted = ledger.z_under.max((ledger.lambda_c * eps).exp() * patch.gauges.big_z);
    let measured = out.iter().fold(0.0_f64, |a, m| a.max(m.patch.gauges.big_z));
    if measured > predicted * 1.01 {
        return Err(Error::Validation(format!("image Z = {measured} above predicted {predicted}")));
    }
    Ok((out, PushDiagnostics { pieces: n, projection_error: proj, predicted_big_z: predicted, measured_big_z: measured }))
}

fn cut_if_tall(ledger: &ConstantsLedger, m: WeightedPatch, n0: usize) -> Result<Vec<WeightedPatch>> {
    if m.patch.gauges.max_height <= MAX_PUSH_HEIGHT {
        return Ok(vec![m]);
    }
    let mut parts = cut_adapted(ledger, &m.patch, n0)?;
    if parts.len() == 1 {
        let k = (m.patch.gauges.max_height / MAX_PUSH_HEIGHT * 2.0).ceil() as usize;
        parts = cut_into(ledger, &m.patch, k)?;
    }
    Ok(parts.into_iter().map(|c| WeightedPatch { weight: m.weight * c.weight, patch: c.patch }).collect())
}

fn push_family_once(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    field: &CentreField,
    fam: &PatchFamily,
    n0: usize,
) -> Result<(PatchFamily, f64)> {
    let mut ready = Vec::new();
    for m in fam.members.iter().cloned() {
        ready.extend(cut_if_tall(ledger, m, n0)?);
    }
    let pushed: Vec<Result<(Vec<WeightedPatch>, PushDiagnostics)>> =
        ready.par_iter().map(|m| pushforward_patch_step(sys, ledger, field, &m.patch)).collect();
    let mut members = Vec::new();
    let mut proj: f64 = 0.0;
    for (m, r) in ready.iter().zip(pushed) {
        let (kids, diag) = r?;
        proj = proj.max(diag.projection_error);
        for k in kids {
            members.push(WeightedPatch { weight: m.weight * k.weight, patch: k.patch });
        }
    }
    Ok((PatchFamily { members }, proj))
}

fn n0_of(ledger: &ConstantsLedger) -> usize {
    if ledger.epsilon > 0.0 {
        ((ledger.t0 / ledger.epsilon).floor() as usize).max(1)
    } else {
        1
    }
}

/// `n` pushforward steps without resampling: exact transport, with tall pieces cut first.
pub fn pushforward_patch(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    patch: &StandardPatch,
    n: usize,
) -> Result<PatchFamily> {
    let field = CentreField::new(sys)?;
    let n0 = n0_of(ledger);
    let mut fam = PatchFamily { members: cut_adapted(ledger, patch, n0)? };
    for _ in 0..n {
        fam = push_family_once(sys, ledger, &field, &fam, n0)?.0;
    }
    Ok(fam)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDensity {
    pub tau: f64,
    pub uniform: StandardPatch,
    pub residual: StandardPatch,
    /// `2R + 4R²/𝔈`.
    pub r_prime: f64,
    /// Extremes of `ρ·Leb(K)` on the grid.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// `ρ = τ·1_K/Leb(K) + (1−τ)ρ′` with `τ = ½e^{−2ΔR}`.
pub fn split_density(ledger: &ConstantsLedger, patch: &StandardPatch) -> Result<SplitDensity> {
    let r = patch.gauges.r;
    let tau = 0.5 * (-2.0 * ledger.big_delta * r).exp();
    let det = patch.det();
    let area = patch.lebesgue_area();
    let pu: Vec<f64> = det.iter().map(|d| d.abs() / area).collect();
    let pr: Vec<f64> = patch.p.iter().zip(&pu).map(|(p, u)| (p - tau * u) / (1.0 - tau)).collect();
    let (_, uniform) = StandardPatch::assemble(ledger, patch.x.clone(), patch.theta.clone(), pu, patch.z)?;
    let (_, residual) = StandardPatch::assemble(ledger, patch.x.clone(), patch.theta.clone(), pr, patch.z)?;
    let ratios: Vec<f64> = patch.p.iter().zip(&det).map(|(p, d)| p / d.abs() * area).collect();
    Ok(SplitDensity {
        tau,
        uniform,
        residual,
        r_prime: 2.0 * r + 4.0 * r * r / ledger.frak_e,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
    })
}

/// `sup|d log ρ| + sup|H log ρ|` of a positive trigonometric density on a 64×64 grid.
pub fn log_density_c1(rho: &TrigPoly2) -> Result<f64> {
    let g = 64;
    let (mut d1, mut d2) = (0.0_f64, 0.0_f64);
    for a in 0..g {
        for b in 0..g {
            let (x, th) = (a as f64 / g as f64, b as f64 / g as f64);
            let j = rho.eval_jet(x, th, 2);
            let v = j.value();
            if !(v > 0.0) {
                return Err(Error::Validation(format!("density not positive at ({x}, {th})")));
            }
            let (gx, gy) = (j.dx() / v, j.dth() / v);
            let hxx = j.get(2, 0) / v - gx * gx;
            let hxy = j.get(1, 1) / v - gx * gy;
            let hyy = j.get(0, 2) / v - gy * gy;
            d1 = d1.max((gx * gx + gy * gy).sqrt());
            d2 = d2.max((hxx * hxx + 2.0 * hxy * hxy + hyy * hyy).sqrt());
        }
    }
    Ok(d1 + d2)
}

/// Patch family for the measure with Lebesgue density `rho / mean(rho)`: vertical strips of
/// width in `[3δ/5, 4δ/5]`, horizontal leaves, centre-curve sides, strips of height
/// `min(Δε, 1/4)`.
pub fn smooth_measure_to_family(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    rho: &TrigPoly2,
    kappa_max: f64,
) -> Result<PatchFamily> {
    let kappa = log_density_c1(rho)?;
    if kappa > kappa_max {
        return Err(Error::KappaTooLarge { kappa, bound: kappa_max });
    }
    let mean = rho.mean();
    let field = CentreField::new(sys)?;
    let nx = (1.0 / (0.8 * ledger.delta)).ceil() as usize;
    let width = 1.0 / nx as f64;
    let hs0 = ledger.max_height().min(0.25);
    let nth = (1.0 / hs0).ceil() as usize;
    let hs = 1.0 / nth as f64;
    let jobs: Vec<(usize, usize)> = (0..nth).flat_map(|k| (0..nx).map(move |i| (k, i))).collect();
    let curves: Vec<Result<CentreCurve>> = jobs
        .par_iter()
        .map(|&(k, i)| integrate_with(sys, &field, i as f64 * width, k as f64 * hs, hs))
        .collect();
    let curves: Vec<CentreCurve> = curves.into_iter().collect::<Result<_>>()?;
    let members: Vec<Result<WeightedPatch>> = jobs
        .par_iter()
        .enumerate()
        .map(|(q, &(k, i))| {
            let left = curves[q].clone();
            let right = if i + 1 < nx { curves[q + 1].clone() } else { curves[q + 1 - nx].shifted(1.0) };
            let th0 = k as f64 * hs;
            let g0 = StandardCurve {
                g: Cheb::constant(i as f64 * width, left.x[0].max(i as f64 * width) + width, th0),
                z: 2.0,
                trimmed: false,
            };
            let g0 = StandardCurve { g: Cheb::constant(left.x[0], right.x[0], th0), ..g0 };
            let rect = rectangle_from_sides(sys, ledger, &field, &g0, left, right, hs)?;
            let fol = build_foliation(&rect)?;
            let (mass, patch) = patch_from_foliation(ledger, &rect, &fol, |x, t| rho.eval(x, t) / mean)?;
            Ok(WeightedPatch { weight: mass, patch })
        })
        .collect();
    let fam = PatchFamily { members: members.into_iter().collect::<Result<_>>()? };
    if !fam.is_proper(ledger.b_prop) {
        return Err(Error::Validation(format!("smooth family not proper: mean L = {}", fam.mean_l())));
    }
    Ok(fam)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub mean_l: f64,
    pub max_m: f64,
    pub proper: bool,
    pub pieces: usize,
    pub mass_defect: f64,
}

pub fn write_telemetry_csv(rows: &[TelemetryRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "step,mean_L,max_M,proper_flag,piece_count")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.step, r.mean_l, r.max_m, u8::from(r.proper), r.pieces)?;
    }
    Ok(())
}

/// Pushes a family for `horizon` steps, cutting tall pieces and resampling pieces lighter
/// than `1/max_pieces`, and records gauge statistics at the checkpoints.
pub fn gauge_telemetry(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    family: &PatchFamily,
    horizon: usize,
    checkpoints: &[usize],
    max_pieces: usize,
    seed: u64,
) -> Result<Vec<TelemetryRow>> {
    if horizon > 10_000_000 {
        return Err(Error::Validation(format!("horizon {horizon} above 1e7")));
    }
    let field = CentreField::new(sys)?;
    let n0 = n0_of(ledger);
    let floor = 1.0 / max_pieces.max(1) as f64;
    let mut fam = family.clone();
    let mut defect = 0.0;
    let mut rows = Vec::new();
    let row = |step: usize, f: &PatchFamily, d: f64| TelemetryRow {
        step,
        mean_l: f.mean_l(),
        max_m: f.max_m(),
        proper: f.is_proper(ledger.b_prop),
        pieces: f.len(),
        mass_defect: d,
    };
    if checkpoints.contains(&0) {
        rows.push(row(0, &fam, 0.0));
    }
    for step in 1..=horizon {
        let (next, _) = push_family_once(sys, ledger, &field, &fam, n0)?;
        let total = next.total_weight();
        let (kept, d) = resample_small(
            next.members,
            floor * total,
            seed,
            step as u64,
            |m: &WeightedPatch| m.weight,
            |m, w| m.weight = w,
        );
        defect += d;
        fam = PatchFamily { members: kept };
        if checkpoints.contains(&step) {
            rows.push(row(step, &fam, defect));
        }
    }
    Ok(rows)
}

/// Rectangle, foliation and uniform-density patch over `g0` without the height-range check.
pub fn uniform_patch(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    g0: &StandardCurve,
    height: f64,
) -> Result<StandardPatch> {
    let field = CentreField::new(sys)?;
    let (a, b) = (g0.a(), g0.b());
    let left = integrate_with(sys, &field, a, g0.eval(a), height)?;
    let right = integrate_with(sys, &field, b, g0.eval(b), height)?;
    let rect = rectangle_from_sides(sys, ledger, &field, g0, left, right, height)?;
    let fol = build_foliation(&rect)?;
    Ok(patch_from_foliation(ledger, &rect, &fol, |_, _| 1.0)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_standard_constants;
    use crate::pairs::pair_integrate;
    use crate::systems::{sys_a, sys_b};
    use crate::trig::TrigTerm;

    fn flat(a: f64, b: f64, th: f64) -> StandardCurve {
        StandardCurve { g: Cheb::constant(a, b, th), z: 2.0, trimmed: false }
    }

    #[test]
    fn sys_a_centre_curve_is_vertical() {
        let s = sys_a(0.01);
        let c = integrate_centre_curve(&s, TorusPoint::new(0.3, 0.2), 0.1).unwrap();
        assert!(c.x.iter().all(|&x| x == 0.3));
        let z = integrate_centre_curve(&s, TorusPoint::new(0.3, 0.2), 0.0).unwrap();
        assert_eq!(z.x.len(), 1);
    }

    #[test]
    fn sys_b_centre_curve_is_invariant() {
        let s = sys_b(0.01);
        let c = integrate_centre_curve(&s, TorusPoint::new(0.3, 0.2), 0.1).unwrap();
        let (x1, t1) = s.step_lift(c.x[0], c.theta0);
        let image = integrate_centre_curve(&s, TorusPoint::new(x1, t1), 0.12).unwrap();
        let mut worst: f64 = 0.0;
        for (k, &x) in c.x.iter().enumerate().step_by(10) {
            let th = c.theta0 + k as f64 * c.step;
            let (xi, ti) = s.step_lift(x, th);
            let off = xi - x1 + image.x[0];
            worst = worst.max((image.eval(ti - t1 + image.theta0) - off).abs());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn sys_a_rectangle_is_euclidean() {
        let s = sys_a(0.01);
        let l = derive_standard_constants(&s, 1.0).unwrap();
        let (lo, hi) = height_range(&l);
        let h = 0.5 * (lo + hi);
        let rect = build_rectangle(&s, &l, &flat(0.1, 0.13, 0.2), h).unwrap();
        assert_eq!(rect.top.a(), 0.1);
        assert_eq!(rect.top.b(), 0.13);
        let fol = build_foliation(&rect).unwrap();
        assert!(fol.dlog == 0.0 && fol.hlog == 0.0);
        assert_eq!(fol.leaves[0], rect.bottom.g);
        assert_eq!(fol.leaves[PATCH_DEGREE], rect.top.g);
        let (_, patch) = patch_from_foliation(&l, &rect, &fol, |_, _| 1.0).unwrap();
        assert!((patch.lebesgue_area() - 0.03 * h).abs() < 1e-14);
        let d = disintegrate(&l, &patch, 0.37).unwrap();
        // rounding in det is amplified by the spectral second derivative
        assert!(d.r < 1e-3, "{}", d.r);
    }

    #[test]
    fn out_of_range_height_is_rejected() {
        let s = sys_b(0.01);
        let l = derive_standard_constants(&s, 0.5).unwrap();
        assert!(matches!(
            build_rectangle(&s, &l, &flat(0.1, 0.13, 0.2), 1e-4),
            Err(Error::HeightOutOfRange { .. })
        ));
    }

    #[test]
    fn sys_b_patch_disintegration_and_split() {
        let s = sys_b(0.01);
        let l = derive_standard_constants(&s, 0.5).unwrap();
        let g = Cheb::fit(0.2, 0.235, PATCH_DEGREE, |x| 0.4 + 0.01 * 3.0 * (x - 0.2));
        let rect = build_rectangle(&s, &l, &StandardCurve { g, z: 2.0, trimmed: false }, 0.1).unwrap();
        let fol = build_foliation(&rect).unwrap();
        let bad = validate_foliation(&l, &rect, &fol);
        assert!(bad.is_empty(), "{:?}", &bad[..bad.len().min(3)]);
        let (_, patch) =
            patch_from_foliation(&l, &rect, &fol, |x, t| 1.0 + 0.3 * (std::f64::consts::TAU * (x + t)).sin()).unwrap();
        assert!((patch.mass() - 1.0).abs() < 1e-12);
        let obs = |x: f64, t: f64| (std::f64::consts::TAU * t).sin() + (std::f64::consts::TAU * x).cos();
        let direct = patch.integrate(obs);
        let w = grid_weights();
        let levels = lobatto_points(0.0, 1.0, PATCH_DEGREE);
        let mut via = 0.0;
        for (i, &e) in levels.iter().enumerate() {
            let d = disintegrate(&l, &patch, e).unwrap();
            via += w[i] * d.nu * pair_integrate(&d.pair, obs);
        }
        assert!((via - direct).abs() < 1e-8, "{via} {direct}");
        let sp = split_density(&l, &patch).unwrap();
        for q in 0..patch.p.len() {
            let back = sp.tau * sp.uniform.p[q] + (1.0 - sp.tau) * sp.residual.p[q];
            assert!((back - patch.p[q]).abs() < 1e-10);
        }
    }

    #[test]
    fn cut_conserves_mass_and_heights() {
        let s = sys_b(0.01);
        let l = derive_standard_constants(&s, 0.5).unwrap();
        let patch = uniform_patch(&s, &l, &flat(0.2, 0.24, 0.1), 0.45).unwrap();
        let parts = cut_adapted(&l, &patch, 50).unwrap();
        let total: f64 = parts.iter().map(|m| m.weight).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let e = (-l.lambda_c * 0.5).exp() * l.max_height();
        for m in &parts {
            for h in m.patch.fibre_heights() {
                assert!(h >= 0.25 * e && h <= 0.75 * e, "{h} vs {e}");
            }
        }
    }

    #[test]
    fn pushforward_conserves_mass_and_transports() {
        let s = sys_b(0.01);
        let l = derive_standard_constants(&s, 0.5).unwrap();
        let patch = uniform_patch(&s, &l, &flat(0.2, 0.24, 0.1), 0.1).unwrap();
        let n = 2;
        let fam = pushforward_patch(&s, &l, &patch, n).unwrap();
        assert!((fam.total_weight() - 1.0).abs() < 1e-8);
        assert!(fam.members.iter().all(|m| m.patch.z == 2.0));
        let g = |x: f64, t: f64| (std::f64::consts::TAU * t).sin() + 0.3 * (std::f64::consts::TAU * x).cos();
        let pulled = patch.integrate(|x, t| {
            let mut p = TorusPoint::new(x, t);
            for _ in 0..n {
                p = s.step(p);
            }
            g(p.x, p.theta)
        });
        assert!((fam.integrate(g) - pulled).abs() < 1e-5);
    }

    #[test]
    fn lebesgue_family_is_proper() {
        let s = sys_b(0.01);
        let l = derive_standard_constants(&s, 0.5).unwrap();
        let one = TrigPoly2::zero().plus_constant(1.0);
        let fam = smooth_measure_to_family(&s, &l, &one, 1.0).unwrap();
        assert!((fam.total_weight() - 1.0).abs() < 1e-8);
        assert!((fam.mean_l() - l.z_under.powf(l.gamma)).abs() < 1e-9);
        let rough = TrigPoly2::new(vec![TrigTerm(0, 0, 1.0, 0.0), TrigTerm(3, 0, 0.9, 0.0)]);
        assert!(matches!(smooth_measure_to_family(&s, &l, &rough, 1.0), Err(Error::KappaTooLarge { .. })));
    }
}
