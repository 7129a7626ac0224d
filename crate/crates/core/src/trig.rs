//! Real trigonometric polynomials on the two-torus.
//!
//! A polynomial is a finite sum of terms
//! `a_cos·cos 2π(kx+lθ) + a_sin·sin 2π(kx+lθ)`. Every partial derivative is again
//! such a sum, so jets are exact and sup-norm bounds follow from the coefficients.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// One Fourier term `[k, l, a_cos, a_sin]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm(pub i32, pub i32, pub f64, pub f64);

impl TrigTerm {
    pub fn k(&self) -> i32 {
        self.0
    }
    pub fn l(&self) -> i32 {
        self.1
    }
    /// Amplitude `sqrt(a_cos² + a_sin²)`, the exact sup of the term.
    pub fn amplitude(&self) -> f64 {
        self.2.hypot(self.3)
    }
    fn frequency_norm(&self) -> f64 {
        TAU * f64::from(self.0).hypot(f64::from(self.1))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly2 {
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

/// All partial derivatives `∂_x^i ∂_θ^j` with `i + j ≤ 3`, stored as `d[i][j]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub d: [[f64; 4]; 4],
}

impl Jet {
    pub fn value(&self) -> f64 {
        self.d[0][0]
    }
    pub fn dx(&self) -> f64 {
        self.d[1][0]
    }
    pub fn dth(&self) -> f64 {
        self.d[0][1]
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i][j]
    }
}

/// Phase `kx + lθ` reduced to `[-1/2, 1/2]` before scaling, so lifted
/// coordinates do not cost accuracy.
#[inline]
fn phase(k: i32, l: i32, x: f64, th: f64) -> f64 {
    let mut p = f64::from(k) * x + f64::from(l) * th;
    p -= p.round();
    TAU * p
}

impl TrigPoly2 {
    pub fn new(terms: Vec<TrigTerm>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.2 == 0.0 && t.3 == 0.0)
    }

    pub fn max_degree(&self) -> i32 {
        self.terms
            .iter()
            .map(|t| t.0.abs() + t.1.abs())
            .max()
            .unwrap_or(0)
    }

    /// True when no term depends on θ.
    pub fn is_theta_free(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0 || (t.2 == 0.0 && t.3 == 0.0))
    }

    /// True when no term depends on x.
    pub fn is_x_free(&self) -> bool {
        self.terms.iter().all(|t| t.0 == 0 || (t.2 == 0.0 && t.3 == 0.0))
    }

    /// Constant Fourier mode, i.e. the Lebesgue mean over the torus.
    pub fn mean(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.0 == 0 && t.1 == 0)
            .map(|t| t.2)
            .sum()
    }

    pub fn eval(&self, x: f64, th: f64) -> f64 {
        let mut s = 0.0;
        for t in &self.terms {
            let (sn, cs) = phase(t.0, t.1, x, th).sin_cos();
            s += t.2 * cs + t.3 * sn;
        }
        s
    }

    /// Value and first partials `(u, ∂_x u, ∂_θ u)`.
    pub fn eval_grad(&self, x: f64, th: f64) -> (f64, f64, f64) {
        let (mut v, mut gx, mut gt) = (0.0, 0.0, 0.0);
        for t in &self.terms {
            let (sn, cs) = phase(t.0, t.1, x, th).sin_cos();
            v += t.2 * cs + t.3 * sn;
            let d = -t.2 * sn + t.3 * cs;
            gx += TAU * f64::from(t.0) * d;
            gt += TAU * f64::from(t.1) * d;
        }
        (v, gx, gt)
    }

    /// Exact jet to the requested order (at most 3); higher entries stay zero.
    pub fn eval_jet(&self, x: f64, th: f64, order: usize) -> Jet {
        let order = order.min(3);
        let mut jet = Jet::default();
        for t in &self.terms {
            let (sn, cs) = phase(t.0, t.1, x, th).sin_cos();
            // n-th derivative of a_c cos φ + a_s sin φ with respect to φ
            let dphi = [
                t.2 * cs + t.3 * sn,
                -t.2 * sn + t.3 * cs,
                -(t.2 * cs + t.3 * sn),
                t.2 * sn - t.3 * cs,
            ];
            let (wk, wl) = (TAU * f64::from(t.0), TAU * f64::from(t.1));
            for i in 0..=order {
                for j in 0..=(order - i) {
                    jet.d[i][j] += wk.powi(i as i32) * wl.powi(j as i32) * dphi[i + j];
                }
            }
        }
        jet
    }

    /// The trigonometric polynomial `∂_x^i ∂_θ^j u`.
    pub fn derivative(&self, i: u32, j: u32) -> TrigPoly2 {
        let n = i + j;
        let terms = self
            .terms
            .iter()
            .filter_map(|t| {
                let scale = (TAU * f64::from(t.0)).powi(i as i32) * (TAU * f64::from(t.1)).powi(j as i32);
                if scale == 0.0 && n > 0 {
                    return None;
                }
                let (c, s) = (t.2 * scale, t.3 * scale);
                // d/dφ maps (c, s) ↦ (s, −c)
                let (c, s) = match n % 4 {
                    0 => (c, s),
                    1 => (s, -c),
                    2 => (-c, -s),
                    _ => (-s, c),
                };
                Some(TrigTerm(t.0, t.1, c, s))
            })
            .collect();
        TrigPoly2 { terms }
    }

    /// Certified bound on `sup |∂_x^i ∂_θ^j u|` from the coefficients.
    pub fn partial_bound(&self, i: u32, j: u32) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.amplitude()
                    * (TAU * f64::from(t.0.abs())).powi(i as i32)
                    * (TAU * f64::from(t.1.abs())).powi(j as i32)
            })
            .sum()
    }

    /// Certified bound on the operator norm of the m-th derivative tensor.
    pub fn tensor_bound(&self, m: u32) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amplitude() * t.frequency_norm().powi(m as i32))
            .sum()
    }

    /// Sum of coefficient magnitudes; a coarse bound on `sup |u|`.
    pub fn coefficient_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.2.abs() + t.3.abs()).sum()
    }

    /// Adds a constant (as a `(0,0)` cosine term).
    pub fn plus_constant(&self, c: f64) -> TrigPoly2 {
        let mut out = self.clone();
        out.terms.push(TrigTerm(0, 0, c, 0.0));
        out
    }

    pub fn scaled(&self, c: f64) -> TrigPoly2 {
        TrigPoly2 {
            terms: self.terms.iter().map(|t| TrigTerm(t.0, t.1, c * t.2, c * t.3)).collect(),
        }
    }
}

/// Certified sup of `|u|` over the torus: the grid maximum plus the quadratic
/// margin `‖D²u‖ h²/4`, valid because `|u|` attains its max where `∇u = 0`.
pub fn certified_sup_abs(u: &TrigPoly2, grid: usize) -> f64 {
    let coarse = u.partial_bound(0, 0);
    if coarse == 0.0 {
        return 0.0;
    }
    let h = 1.0 / grid as f64;
    let mut m: f64 = 0.0;
    for a in 0..grid {
        let x = a as f64 * h;
        for b in 0..grid {
            m = m.max(u.eval(x, b as f64 * h).abs());
        }
    }
    (m + u.tensor_bound(2) * h * h / 4.0).min(coarse)
}

/// Certified sup of the Euclidean gradient norm `|∇u|`.
pub fn certified_sup_grad(u: &TrigPoly2, grid: usize) -> f64 {
    let coarse = u.tensor_bound(1);
    if coarse == 0.0 {
        return 0.0;
    }
    let h = 1.0 / grid as f64;
    let mut m: f64 = 0.0;
    for a in 0..grid {
        let x = a as f64 * h;
        for b in 0..grid {
            let (_, gx, gt) = u.eval_grad(x, b as f64 * h);
            m = m.max(gx * gx + gt * gt);
        }
    }
    // g = |∇u|², ‖D²g‖ ≤ 2(‖D²u‖² + ‖∇u‖‖D³u‖)
    let d2g = 2.0 * (u.tensor_bound(2).powi(2) + coarse * u.tensor_bound(3));
    (m + d2g * h * h / 4.0).sqrt().min(coarse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys_b_omega() -> TrigPoly2 {
        TrigPoly2::new(vec![TrigTerm(0, 1, 0.0, 1.0), TrigTerm(1, 0, 0.5, 0.0)])
    }

    #[test]
    fn jet_matches_finite_differences() {
        let u = TrigPoly2::new(vec![TrigTerm(1, 1, 0.3, -0.2), TrigTerm(2, -1, 0.1, 0.4)]);
        let (x, t, h) = (0.137, 0.611, 1e-5);
        let jet = u.eval_jet(x, t, 3);
        let fd_x = (u.eval(x + h, t) - u.eval(x - h, t)) / (2.0 * h);
        let fd_t = (u.eval(x, t + h) - u.eval(x, t - h)) / (2.0 * h);
        assert!((jet.dx() - fd_x).abs() < 1e-6);
        assert!((jet.dth() - fd_t).abs() < 1e-6);
        let j1 = |x: f64, t: f64| u.eval_jet(x, t, 3);
        let fd_xt = (j1(x, t + h).d[2][0] - j1(x, t - h).d[2][0]) / (2.0 * h);
        assert!((jet.d[2][1] - fd_xt).abs() < 1e-5 * (1.0 + jet.d[2][1].abs()));
    }

    #[test]
    fn derivative_poly_agrees_with_jet() {
        let u = sys_b_omega();
        let jet = u.eval_jet(0.3, 0.8, 3);
        for i in 0..=3u32 {
            for j in 0..=(3 - i) {
                let v = u.derivative(i, j).eval(0.3, 0.8);
                assert!((v - jet.d[i as usize][j as usize]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounds_are_exact_for_single_terms() {
        let u = TrigPoly2::new(vec![TrigTerm(0, 1, 0.0, 1.0)]);
        assert_eq!(u.partial_bound(0, 1), TAU);
        assert_eq!(u.tensor_bound(1), TAU);
        assert!((certified_sup_grad(&u, 128) - TAU).abs() < 1e-12);
    }

    #[test]
    fn certified_gradient_beats_coefficient_sum() {
        let u = sys_b_omega();
        let g = certified_sup_grad(&u, 512);
        let exact = (TAU * TAU + std::f64::consts::PI.powi(2)).sqrt();
        assert!(g >= exact - 1e-12);
        assert!(g < exact * 1.001);
        assert!(g < u.tensor_bound(1));
    }

    #[test]
    fn phase_reduction_keeps_lifts_accurate() {
        let u = TrigPoly2::new(vec![TrigTerm(3, 2, 0.7, 0.1)]);
        assert!((u.eval(0.2, 0.4) - u.eval(5.2, -7.6)).abs() < 1e-13);
    }
}
