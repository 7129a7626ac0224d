//! Standard curves, standard densities and standard pairs with their pushforward.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{cc_weights_on, check_points, lobatto_points, Cheb};
use crate::constants::ConstantsLedger;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::system::FastSlowSystem;

/// Degree of the Chebyshev representations of curves and densities.
pub const CHEB_DEGREE: usize = 32;
/// Number of check points for the derivative sup norms.
pub const CHECK_POINTS: usize = 64;
/// Quadrature degree for observables on a pair.
pub const QUAD_DEGREE: usize = 64;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-12;

/// Graph `θ = G(x)` over `[a, b]` (a lift of the torus).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardCurve {
    pub g: Cheb,
    pub z: f64,
    pub trimmed: bool,
}

impl StandardCurve {
    pub fn a(&self) -> f64 {
        self.g.a
    }
    pub fn b(&self) -> f64 {
        self.g.b
    }
    pub fn length(&self) -> f64 {
        self.g.b - self.g.a
    }
    pub fn eval(&self, x: f64) -> f64 {
        self.g.eval(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardDensity {
    pub rho: Cheb,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardPair {
    pub curve: StandardCurve,
    pub density: StandardDensity,
}

impl StandardPair {
    /// Pair on the graph `g` with density proportional to `rho`, normalized.
    pub fn new(g: Cheb, rho: Cheb, z: f64, r: f64) -> Self {
        let mass = rho.integral();
        Self {
            curve: StandardCurve { g, z, trimmed: false },
            density: StandardDensity { rho: rho.scaled(1.0 / mass), r },
        }
    }

    /// Uniform density on the horizontal segment `[x0, x0 + len] × {θ0}`.
    pub fn horizontal(x0: f64, theta0: f64, len: f64) -> Self {
        Self::new(
            Cheb::constant(x0, x0 + len, theta0),
            Cheb::constant(x0, x0 + len, 1.0),
            2.0,
            0.0,
        )
    }

    pub fn mass(&self) -> f64 {
        self.density.rho.integral()
    }

    /// Quadrature nodes `(x, θ, weight·ρ)`.
    pub fn quadrature(&self, degree: usize) -> Vec<(f64, f64, f64)> {
        let (a, b) = (self.curve.a(), self.curve.b());
        let xs = lobatto_points(a, b, degree);
        let ws = cc_weights_on(a, b, degree);
        xs.into_iter()
            .zip(ws)
            .map(|(x, w)| (x, self.curve.eval(x), w * self.density.rho.eval(x)))
            .collect()
    }
}

/// `μ_ℓ(g) = ∫_I g(x, G(x)) ρ(x) dx` by Clenshaw–Curtis quadrature.
pub fn pair_integrate(pair: &StandardPair, g: impl Fn(f64, f64) -> f64) -> f64 {
    pair.quadrature(QUAD_DEGREE).into_iter().map(|(x, th, w)| w * g(x, th)).sum()
}

/// Draw `n` points from the pair's measure by inverse-CDF sampling on a fine table.
pub fn sample_pair(pair: &StandardPair, rng: &mut impl Rng, n: usize) -> Vec<(f64, f64)> {
    let m = 2048;
    let (a, b) = (pair.curve.a(), pair.curve.b());
    let h = (b - a) / m as f64;
    let mut cdf = vec![0.0; m + 1];
    for i in 0..m {
        let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let mid = 0.5 * (x0 + x1);
        let v = (pair.density.rho.eval(x0) + 4.0 * pair.density.rho.eval(mid) + pair.density.rho.eval(x1)) * h / 6.0;
        cdf[i + 1] = cdf[i] + v.max(0.0);
    }
    let total = cdf[m];
    (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            let i = cdf.partition_point(|&c| c <= u).clamp(1, m) - 1;
            let span = cdf[i + 1] - cdf[i];
            let t = if span > 0.0 { (u - cdf[i]) / span } else { 0.5 };
            let x = a + (i as f64 + t) * h;
            (x, pair.curve.eval(x))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveLevel {
    Standard,
    Prestandard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairValidation {
    pub valid: bool,
    pub z: f64,
    pub r: f64,
    /// `‖G^{(k)}‖/ε` for `k = 1, 2, 3`.
    pub slopes: [f64; 3],
    pub mass: f64,
    pub violations: Vec<String>,
}

/// Measures a pair against the ledger; `z` is `max{δ/|I|, 2}`, `r` the minimal roughness.
pub fn validate_pair(ledger: &ConstantsLedger, pair: &StandardPair, level: CurveLevel) -> PairValidation {
    let eps = ledger.epsilon;
    let c = &pair.curve;
    let len = c.length();
    let mut violations = Vec::new();
    let upper = if c.trimmed { ledger.delta * (-ledger.trim_kappa).exp() } else { ledger.delta };
    if len > upper * (1.0 + 1e-12) {
        violations.push(format!("interval length {len} above {upper}"));
    }
    if !(len > 0.0) {
        violations.push("empty interval".into());
    }
    let z = (ledger.delta / len).max(2.0);
    if c.trimmed && len < ledger.delta * ledger.trim_kappa.exp() / c.z * (1.0 - 1e-12) {
        violations.push(format!("trimmed length {len} below delta e^kappa / z"));
    }
    let bounds = match level {
        CurveLevel::Standard => [ledger.c1, ledger.c2, ledger.c3],
        CurveLevel::Prestandard => [ledger.c1bar, ledger.c2bar, ledger.c3bar],
    };
    let pts = check_points(c.a(), c.b(), CHECK_POINTS);
    let d1 = c.g.derivative();
    let d2 = d1.derivative();
    let d3 = d2.derivative();
    let mut slopes = [0.0; 3];
    for (k, d) in [&d1, &d2, &d3].into_iter().enumerate() {
        let m = pts.iter().fold(0.0_f64, |acc, &x| acc.max(d.eval(x).abs()));
        slopes[k] = if eps > 0.0 { m / eps } else if m == 0.0 { 0.0 } else { f64::INFINITY };
        if slopes[k] > bounds[k] * (1.0 + 1e-9) + 1e-12 {
            violations.push(format!("G derivative {} norm {} above {}", k + 1, slopes[k], bounds[k]));
        }
    }
    let rho = &pair.density.rho;
    let mass = rho.integral();
    if (mass - 1.0).abs() > 1e-12 {
        violations.push(format!("normalization: integral {mass}"));
    }
    let r1 = rho.derivative();
    let r2 = r1.derivative();
    let (mut q1, mut q2) = (0.0_f64, 0.0_f64);
    for &x in &pts {
        let v = rho.eval(x);
        if !(v > 0.0) {
            violations.push(format!("density not positive at {x}"));
            break;
        }
        q1 = q1.max((r1.eval(x) / v).abs());
        q2 = q2.max((r2.eval(x) / v).abs());
    }
    let r = q1.max(q2 / ledger.frak_d);
    PairValidation { valid: violations.is_empty(), z, r, slopes, mass, violations }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPair {
    pub weight: f64,
    pub pair: StandardPair,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairFamily {
    pub members: Vec<WeightedPair>,
}

impl PairFamily {
    pub fn single(pair: StandardPair) -> Self {
        Self { members: vec![WeightedPair { weight: 1.0, pair }] }
    }

    pub fn total_weight(&self) -> f64 {
        crate::rng::pairwise_sum(&self.members.iter().map(|m| m.weight).collect::<Vec<_>>())
    }

    pub fn integrate(&self, g: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        let v: Vec<f64> = self.members.iter().map(|m| m.weight * pair_integrate(&m.pair, &g)).collect();
        crate::rng::pairwise_sum(&v)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("family serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// `x` in `[lo, hi]` with `f(x) = target` for increasing `f`; Newton with bisection fallback.
pub fn invert_increasing(
    f: impl Fn(f64) -> (f64, f64),
    target: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    let mut x = if fhi > flo { lo + (target - flo) / (fhi - flo) * (hi - lo) } else { 0.5 * (lo + hi) };
    x = x.clamp(lo, hi);
    for _ in 0..100 {
        let (v, dv) = f(x);
        let r = v - target;
        if r.abs() < 1e-14 * (1.0 + target.abs()) {
            return Ok(x);
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - r / dv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < 1e-16 * (1.0 + x.abs()) || hi - lo < 1e-15 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence { what: "curve inverse".into(), iterations: 100 })
}

/// `f_G(x) = f(x, G(x))` and its derivative.
pub fn f_on_curve(sys: &FastSlowSystem, g: &Cheb, dg: &Cheb, x: f64) -> (f64, f64) {
    let th = g.eval(x);
    let p = sys.partials(x, th);
    (sys.fibre_lift(x, th), p.fx + p.fth * dg.eval(x))
}

/// Pushforward of one pair: `n = ⌈|J|/(δe^{−κ})⌉` equal pieces of `J = f_G(I)`.
/// Each piece is checked against `z′ = max{4z/5, 2}` and `r′ ≤ qr + r_*`.
pub fn pushforward_pair(sys: &FastSlowSystem, ledger: &ConstantsLedger, pair: &StandardPair) -> Result<PairFamily> {
    Ok(pushforward_pair_checked(sys, ledger, pair)?.0)
}

/// As [`pushforward_pair`], also returning the largest re-projection mass error.
pub fn pushforward_pair_checked(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    pair: &StandardPair,
) -> Result<(PairFamily, f64)> {
    let eps = sys.epsilon();
    let g = &pair.curve.g;
    let dg = g.derivative();
    let (a, b) = (g.a, g.b);
    let fg = |x: f64| f_on_curve(sys, g, &dg, x);
    let (ja, jb) = (fg(a).0, fg(b).0);
    let jlen = jb - ja;
    if jlen > 0.5 {
        return Err(Error::CurveTooLong { length: jlen });
    }
    let piece = ledger.delta * (-ledger.trim_kappa).exp();
    let n = ((jlen / piece) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let step = jlen / n as f64;
    let rho = &pair.density.rho;
    let z_new = (0.8 * pair.curve.z).max(2.0);
    let r_in = validate_pair(ledger, pair, CurveLevel::Prestandard).r;
    let r_new = r_in * ledger.r_contraction + ledger.r_star;

    let mut members = Vec::with_capacity(n);
    let mut proj_err: f64 = 0.0;
    let mut lo_pre = a;
    for j in 0..n {
        let (u, v) = (ja + j as f64 * step, if j + 1 == n { jb } else { ja + (j + 1) as f64 * step });
        let nodes = lobatto_points(u, v, CHEB_DEGREE);
        let mut pre = Vec::with_capacity(nodes.len());
        for (k, &t) in nodes.iter().enumerate() {
            let x = if j == 0 && k == 0 {
                a
            } else if j + 1 == n && k == CHEB_DEGREE {
                b
            } else {
                invert_increasing(&fg, t, lo_pre.max(a), b)?
            };
            pre.push(x);
        }
        lo_pre = pre[CHEB_DEGREE - 1];
        let gvals: Vec<f64> = pre
            .iter()
            .map(|&x| {
                let th = g.eval(x);
                th + eps * sys.omega().eval(x, th)
            })
            .collect();
        let rvals: Vec<f64> = pre.iter().map(|&x| rho.eval(x) / fg(x).1).collect();
        // ρ is a polynomial of degree ≤ 32, integrated exactly by 33-point Clenshaw–Curtis
        let (pa, pb) = (pre[0], pre[CHEB_DEGREE]);
        let nu: f64 = lobatto_points(pa, pb, CHEB_DEGREE.max(rho.degree()))
            .into_iter()
            .zip(cc_weights_on(pa, pb, CHEB_DEGREE.max(rho.degree())))
            .map(|(x, w)| w * rho.eval(x))
            .sum();
        let gj = Cheb::from_values(u, v, &gvals);
        let rj = Cheb::from_values(u, v, &rvals);
        let fitted = rj.integral();
        proj_err = proj_err.max((fitted - nu).abs());
        let shift_x = -u.floor();
        let shift_th = -gj.eval(u).floor();
        let curve = StandardCurve { g: gj.shifted(shift_x).plus_constant(shift_th), z: z_new, trimmed: true };
        let density = StandardDensity { rho: rj.scaled(1.0 / fitted).shifted(shift_x), r: r_new };
        members.push(WeightedPair { weight: nu, pair: StandardPair { curve, density } });
    }
    let fam = PairFamily { members };
    for m in &fam.members {
        let v = validate_pair(ledger, &m.pair, CurveLevel::Standard);
        if !v.valid {
            return Err(Error::Validation(format!("pushforward piece invalid: {:?}", v.violations)));
        }
        if v.r > r_new * (1.0 + 1e-9) {
            return Err(Error::Validation(format!("pushforward roughness {} above {}", v.r, r_new)));
        }
    }
    Ok((fam, proj_err))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyIteration {
    pub family: PairFamily,
    pub steps: usize,
    /// Total weight of the pieces that went through resampling.
    pub mass_defect: f64,
    pub seed: u64,
}

/// Repeated pushforward with seeded resampling of pieces below `weight_floor`.
pub fn iterate_family(
    sys: &FastSlowSystem,
    ledger: &ConstantsLedger,
    family: &PairFamily,
    n: usize,
    weight_floor: f64,
    seed: u64,
) -> Result<FamilyIteration> {
    let mut fam = family.clone();
    let mut defect = 0.0;
    for step in 0..n {
        let pushed: Vec<Result<PairFamily>> =
            fam.members.par_iter().map(|m| pushforward_pair(sys, ledger, &m.pair)).collect();
        let mut members = Vec::new();
        for (m, res) in fam.members.iter().zip(pushed) {
            for child in res?.members {
                members.push(WeightedPair { weight: m.weight * child.weight, pair: child.pair });
            }
        }
        let (kept, d) = resample_small(members, weight_floor, seed, step as u64, |m| m.weight, |m, w| m.weight = w);
        defect += d;
        fam = PairFamily { members: kept };
    }
    Ok(FamilyIteration { family: fam, steps: n, mass_defect: defect, seed })
}

/// Largest-remainder resampling of the items lighter than `floor`: their total mass `m` is
/// spread over `k = max(1, round(m/floor))` survivors chosen proportionally to weight, each
/// carrying `m/k`. Ties between equal remainders are broken by a seeded random key.
pub fn resample_small<T>(
    items: Vec<T>,
    floor: f64,
    seed: u64,
    step: u64,
    weight: impl Fn(&T) -> f64,
    set_weight: impl Fn(&mut T, f64),
) -> (Vec<T>, f64) {
    let (mut big, small): (Vec<T>, Vec<T>) = items.into_iter().partition(|t| weight(t) >= floor);
    if small.is_empty() {
        return (big, 0.0);
    }
    let m: f64 = crate::rng::pairwise_sum(&small.iter().map(&weight).collect::<Vec<_>>());
    let k = ((m / floor).round() as usize).clamp(1, small.len());
    let mut rng = stream(seed, "resample", step);
    let mut keyed: Vec<(f64, f64, usize)> = small
        .iter()
        .enumerate()
        .map(|(i, t)| (weight(t) * k as f64 / m, rng.gen::<f64>(), i))
        .collect();
    // every quota is below one, so the survivors are the k largest remainders
    keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)));
    let mut chosen: Vec<usize> = keyed.iter().take(k).map(|e| e.2).collect();
    chosen.sort_unstable();
    let mut small: Vec<Option<T>> = small.into_iter().map(Some).collect();
    for i in chosen {
        let mut t = small[i].take().expect("chosen once");
        set_weight(&mut t, m / k as f64);
        big.push(t);
    }
    (big, m)
}

/// Random prestandard pair inside the ledger bounds, for sweeps.
pub fn random_prestandard_pair(ledger: &ConstantsLedger, rng: &mut impl Rng) -> StandardPair {
    let eps = ledger.epsilon;
    let z: f64 = rng.gen_range(2.0..10.0);
    let len = rng.gen_range(ledger.delta / z..ledger.delta);
    let x0: f64 = rng.gen();
    let th0: f64 = rng.gen();
    let half = 0.5 * len;
    let mut alpha = [
        rng.gen_range(-0.5..0.5) * ledger.c1bar,
        rng.gen_range(-0.5..0.5) * ledger.c2bar,
        rng.gen_range(-0.5..0.5) * ledger.c3bar,
    ];
    // keep the first derivative inside the prestandard cone
    let d1 = alpha[0].abs() + alpha[1].abs() * half + alpha[2].abs() * half * half / 2.0;
    if d1 > 0.9 * ledger.c1bar {
        let s = 0.9 * ledger.c1bar / d1;
        alpha.iter_mut().for_each(|a| *a *= s);
    }
    let d2 = alpha[1].abs() + alpha[2].abs() * half;
    if d2 > 0.9 * ledger.c2bar {
        let s = 0.9 * ledger.c2bar / d2;
        alpha[1] *= s;
        alpha[2] *= s;
    }
    let mid = x0 + half;
    let g = Cheb::fit(x0, x0 + len, CHEB_DEGREE, |x| {
        let u = x - mid;
        th0 + eps * (alpha[0] * u + alpha[1] * u * u / 2.0 + alpha[2] * u * u * u / 6.0)
    });
    let r_target: f64 = rng.gen_range(0.0..20.0);
    let beta1 = rng.gen_range(-1.0..1.0) * r_target * 0.5;
    let beta2 = rng.gen_range(-1.0..1.0) * r_target;
    let rho = Cheb::fit(x0, x0 + len, CHEB_DEGREE, |x| {
        let u = x - mid;
        (beta1 * u + beta2 * u * u / 2.0).exp()
    });
    let mut p = StandardPair::new(g, rho, z.max(ledger.delta / len), 0.0);
    p.density.r = validate_pair(ledger, &p, CurveLevel::Prestandard).r;
    p
}

/// Predicted number of steps after which a `(z, r)` pair is regular.
pub fn regularization_steps(z: f64, r: f64, r_star: f64) -> usize {
    let a = if z > 2.0 { (z / 2.0).ln() / (1.25f64).ln() } else { 0.0 };
    let b = if r > r_star { (r / r_star).ln() / 3f64.ln() } else { 0.0 };
    a.ceil() as usize + b.ceil() as usize
}

/// `z ≤ 2` and `r ≤ 3r_*/2`.
pub fn is_regular(ledger: &ConstantsLedger, pair: &StandardPair) -> bool {
    let v = validate_pair(ledger, pair, CurveLevel::Standard);
    let len_ok = pair.curve.length() >= ledger.delta / 2.0 * (1.0 - 1e-12)
        || (pair.curve.trimmed && pair.curve.z <= 2.0);
    v.valid && len_ok && v.r <= 1.5 * ledger.r_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_standard_constants;
    use crate::systems::{sys_a, sys_b};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn horizontal_pair_validates() {
        let l = derive_standard_constants(&sys_a(0.01), 1.0).unwrap();
        let p = StandardPair::horizontal(0.1, 0.3, l.delta);
        let v = validate_pair(&l, &p, CurveLevel::Standard);
        assert!(v.valid, "{:?}", v.violations);
        assert_eq!(v.z, 2.0);
        assert_eq!(v.r, 0.0);
        assert!((pair_integrate(&p, |_, th| (6.0 * th).sin()) - (1.8f64).sin()).abs() < 1e-13);
    }

    #[test]
    fn unnormalized_density_flagged() {
        let l = derive_standard_constants(&sys_a(0.01), 1.0).unwrap();
        let mut p = StandardPair::horizontal(0.1, 0.3, l.delta);
        p.density.rho = p.density.rho.scaled(0.5);
        let v = validate_pair(&l, &p, CurveLevel::Standard);
        assert!(!v.valid);
        assert!(v.violations.iter().any(|s| s.starts_with("normalization")));
    }

    #[test]
    fn pushforward_conserves_mass_and_transports() {
        let sys = sys_b(0.01);
        let l = derive_standard_constants(&sys, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_prestandard_pair(&l, &mut rng);
            let fam = pushforward_pair(&sys, &l, &p).unwrap();
            assert!((fam.total_weight() - 1.0).abs() < 1e-10);
            let g = |x: f64, th: f64| (std::f64::consts::TAU * x).cos() * (std::f64::consts::TAU * th).sin();
            let lhs = fam.integrate(g);
            let rhs = pair_integrate(&p, |x, th| {
                let q = sys.step(crate::system::TorusPoint::new(x.rem_euclid(1.0), th.rem_euclid(1.0)));
                g(q.x, q.theta)
            });
            assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let sys = sys_b(0.01);
        let l = derive_standard_constants(&sys, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fam = pushforward_pair(&sys, &l, &random_prestandard_pair(&l, &mut rng)).unwrap();
        let back = PairFamily::from_json(&fam.to_json()).unwrap();
        assert_eq!(back, fam);
    }
}
