//! Unstable and centre cone fields.

use crate::error::{Error, Result};
use crate::system::{FastSlowSystem, TorusPoint};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    #[serde(rename = "M")]
    pub m: f64,
    pub lambda: f64,
    pub chi_c: f64,
    pub chi_u: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cone {
    Unstable,
    Centre,
}

/// `c̄₁ = 2 sup|∇ω|`.
pub fn c1_bar(sys: &FastSlowSystem) -> f64 {
    2.0 * sys.norms().grad_omega
}

pub fn derive_cone_params(sys: &FastSlowSystem) -> Result<ConeParams> {
    let n = sys.norms();
    let m = n.wx.max(n.wth).max(n.fth);
    let lambda = n.lambda;
    let eps = sys.epsilon();
    if lambda <= 2.0 {
        return Err(Error::NotExpanding { lambda, required: 2.0 });
    }
    let chi_u = ((m + 1.0) / (lambda - 2.0)).max(c1_bar(sys));
    let small = if m > 0.0 { (lambda - 2.0) / (m * (m + 1.0)) } else { f64::INFINITY };
    let cap = if m > 0.0 { 1.0 / (chi_u * m) } else { f64::INFINITY };
    let bound = small.min(cap);
    if eps > bound {
        return Err(Error::EpsilonTooLarge { epsilon: eps, bound });
    }
    Ok(ConeParams { m, lambda, chi_c: m, chi_u })
}

/// Membership of `v` in the unstable cone `|β| ≤ εχ^u|α|` or the centre cone `|α| ≤ χ^c|β|`.
pub fn cone_check(sys: &FastSlowSystem, params: &ConeParams, v: [f64; 2], which: Cone) -> bool {
    let slack = 1.0 + 1e-12;
    match which {
        Cone::Unstable => v[1].abs() <= sys.epsilon() * params.chi_u * v[0].abs() * slack,
        Cone::Centre => v[0].abs() <= params.chi_c * v[1].abs() * slack,
    }
}

/// `|π₁ d_pF v| / |π₁ v|`.
pub fn expansion_check(sys: &FastSlowSystem, p: TorusPoint, v: [f64; 2]) -> f64 {
    let w = sys.jacobian(p).apply(v);
    w[0].abs() / v[0].abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_a, sys_b};
    use std::f64::consts::TAU;

    #[test]
    fn sys_a_params_follow_formulas() {
        let s = sys_a(0.01);
        let c = derive_cone_params(&s).unwrap();
        assert!((c.m - TAU).abs() < 1e-12);
        assert_eq!(c.lambda, 4.0);
        assert_eq!(c.chi_c, c.m);
        let expect = ((TAU + 1.0) / 2.0).max(2.0 * TAU);
        assert!((c.chi_u - expect).abs() < 1e-12);
    }

    #[test]
    fn sys_a_large_epsilon_rejected() {
        let s = sys_a(0.01).with_epsilon(1.0);
        match derive_cone_params(&s) {
            Err(Error::EpsilonTooLarge { bound, .. }) => assert!(bound < 0.0437),
            other => panic!("expected EpsilonTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn axis_vectors_are_in_their_cones() {
        let s = sys_b(0.01);
        let c = derive_cone_params(&s).unwrap();
        assert!(cone_check(&s, &c, [1.0, 0.0], Cone::Unstable));
        assert!(cone_check(&s, &c, [0.0, 1.0], Cone::Centre));
        assert!(!cone_check(&s, &c, [0.0, 1.0], Cone::Unstable));
    }
}
