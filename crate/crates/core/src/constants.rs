//! The constants used by standard pairs and patches, derived from certified map norms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slopes::lambda_c;
use crate::system::{FastSlowSystem, MapNorms};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_KAPPA: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 0.25;
pub const DEFAULT_FRAK_E: f64 = 4.0;
pub const DEFAULT_R_STAR: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub epsilon: f64,
    pub t0: f64,
    pub delta: f64,
    pub trim_kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c1bar: f64,
    pub c2bar: f64,
    pub c3bar: f64,
    #[serde(rename = "frakD")]
    pub frak_d: f64,
    pub r_star: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    #[serde(rename = "Z_under")]
    pub z_under: f64,
    #[serde(rename = "frakE")]
    pub frak_e: f64,
    #[serde(rename = "R_star")]
    pub big_r_star: f64,
    #[serde(rename = "Lambda_c")]
    pub lambda_c: f64,
    pub gamma: f64,
    #[serde(rename = "B_prop")]
    pub b_prop: f64,
    /// Lower bound on `f_G′` for prestandard curves.
    pub lambda1: f64,
    /// `q` in `r′ ≤ qr + r_*`; equals 1/3 whenever `Λ₁ ≥ 3`.
    pub r_contraction: f64,
    /// Bound on `|f_G″|` for prestandard curves.
    pub f2: f64,
    /// Bound on `|f_G‴|` for prestandard curves.
    pub f3: f64,
    pub provenance: BTreeMap<String, String>,
}

/// Tunable inputs of the derivation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerSettings {
    pub delta: f64,
    pub trim_kappa: f64,
    pub gamma: f64,
    pub frak_e: f64,
    pub r_star_patch: f64,
    /// `None` means `Z̲^γ`.
    pub b_prop: Option<f64>,
}

impl Default for LedgerSettings {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            trim_kappa: DEFAULT_KAPPA,
            gamma: DEFAULT_GAMMA,
            frak_e: DEFAULT_FRAK_E,
            r_star_patch: DEFAULT_R_STAR,
            b_prop: None,
        }
    }
}

impl ConstantsLedger {
    /// `δ/Δ`-thickness relation and the `c_i < c̄_i` ordering.
    pub fn check_relations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, (c, cb)) in [(self.c1, self.c1bar), (self.c2, self.c2bar), (self.c3, self.c3bar)].iter().enumerate() {
            if !(c < cb) {
                v.push(format!("c{} = {c} not below c{}bar = {cb}", i + 1, i + 1));
            }
        }
        if self.big_delta / self.z_under < 10.0 * self.delta * self.c1bar * (1.0 - 1e-12) {
            v.push("Delta/Z_under below 10 delta c1bar".into());
        }
        if self.z_under <= 4.0 * (self.lambda_c * self.t0).exp() {
            v.push("Z_under not above 4 exp(Lambda_c T0)".into());
        }
        v
    }

    /// `Δε`, the maximal centre height of a patch.
    pub fn max_height(&self) -> f64 {
        self.big_delta * self.epsilon
    }
}

pub fn derive_standard_constants(sys: &FastSlowSystem, t0: f64) -> Result<ConstantsLedger> {
    derive_with(sys, sys.norms(), t0, &LedgerSettings::default(), lambda_c(sys))
}

pub fn derive_standard_constants_with(sys: &FastSlowSystem, t0: f64, s: &LedgerSettings) -> Result<ConstantsLedger> {
    derive_with(sys, sys.norms(), t0, s, lambda_c(sys))
}

/// Derivation from explicit norms and `Λ_c`.
pub fn derive_with(
    sys: &FastSlowSystem,
    n: &MapNorms,
    t0: f64,
    s: &LedgerSettings,
    lam_c: f64,
) -> Result<ConstantsLedger> {
    let eps = sys.epsilon();
    let infeasible = |m: String| Err(Error::InfeasibleConstants(m));
    if !(s.delta > 0.0 && s.delta <= 5.0 / 12.0) {
        return infeasible(format!("delta = {} outside (0, 5/12]", s.delta));
    }
    if !(t0 > 0.0) {
        return infeasible(format!("T0 = {t0} must be positive"));
    }

    // first derivative: c̄₁ = 2𝔫₁, c₁ = 5c̄₁/6
    let c1bar = 2.0 * n.grad_omega;
    let c1 = 5.0 * c1bar / 6.0;
    let lambda1 = n.lambda - n.fth * eps * c1bar;
    if lambda1 <= 1.0 {
        return infeasible(format!("f_G' lower bound {lambda1} not above 1"));
    }
    let a1 = (1.0 + eps * n.wth) / lambda1;
    let b1 = n.wx / lambda1;
    if a1 * c1bar + b1 > c1 * (1.0 + 1e-12) {
        return infeasible("first-derivative contraction fails for c1bar = 2 sup|grad omega|".into());
    }
    let g1 = c1bar * (1.0 + eps * n.wth) + n.wx;
    let one = 1.0 + eps * c1bar;

    // second derivative: |G_j″|/ε ≤ a₂c̄₂ + b₂
    let a2 = (1.0 + eps * n.grad_omega) / lambda1.powi(2) + g1 * n.fth * eps / lambda1.powi(3);
    let b2 = n.hess_omega * one * one / lambda1.powi(2) + g1 * n.hess_f * one * one / lambda1.powi(3);
    if a2 >= 1.0 {
        return infeasible(format!("second-derivative recursion diverges (a2 = {a2})"));
    }
    let c2bar = (6.0 / 5.0 * b2 / (1.0 - a2)).max(1e-9);
    let c2 = a2 * c2bar + b2;

    // f_G″ and f_G‴ bounds on prestandard curves
    let f2 = n.hess_f * one * one + n.fth * eps * c2bar;
    let g2 = c2bar * (1.0 + eps * n.grad_omega) + n.hess_omega * one * one;

    // third derivative
    let a3 = (1.0 + eps * n.grad_omega) / lambda1.powi(3)
        + g1 * n.fth * eps / lambda1.powi(4);
    let b3 = (n.d3_omega * one.powi(3) + 3.0 * n.hess_omega * one * eps * c2bar) / lambda1.powi(3)
        + g1 * (n.d3_f * one.powi(3) + 3.0 * n.hess_f * one * eps * c2bar) / lambda1.powi(4)
        + 3.0 * f2 * (g2 / lambda1.powi(4) + g1 * f2 / lambda1.powi(5));
    if a3 >= 1.0 {
        return infeasible(format!("third-derivative recursion diverges (a3 = {a3})"));
    }
    let c3bar = (6.0 / 5.0 * b3 / (1.0 - a3)).max(1e-9);
    let c3 = a3 * c3bar + b3;
    let f3 = n.d3_f * one.powi(3) + 3.0 * n.hess_f * one * eps * c2bar + n.fth * eps * c3bar;

    // densities: r′ ≤ qr + F₂/Λ₁² with q = max{1/Λ₁, 1/3},
    // ‖ρ_j″/ρ_j‖ ≤ 𝔇r/Λ₁² + 3rF₂/Λ₁³ + F₃/Λ₁³ + 3F₂²/Λ₁⁴
    let r_contraction = (1.0 / lambda1).max(1.0 / 3.0);
    let r_star = (f2 / lambda1.powi(2)).max(1e-6);
    let slope_room = r_contraction - 1.0 / lambda1.powi(2);
    let frak_d = [
        1.0,
        3.0 * f2 / lambda1.powi(3) / slope_room,
        (f3 / lambda1.powi(3) + 3.0 * f2 * f2 / lambda1.powi(4)) / r_star,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);

    if s.delta * (n.fx_max + n.fth * eps * c1bar) > 0.5 {
        return infeasible(format!("delta = {} lets image curves exceed length 1/2", s.delta));
    }

    let z_under = (5.0 * (lam_c * t0).exp()).ceil();
    let b_prop = s.b_prop.unwrap_or_else(|| z_under.powf(s.gamma));
    let big_delta = (10.0 * s.delta * c1bar * z_under).max(10.0 * 8.0 * b_prop / 3.0);

    let mut provenance = BTreeMap::new();
    for k in ["c1bar", "c1", "c2bar", "c2", "c3bar", "c3", "frakD", "r_star", "Z_under", "Delta", "Lambda_c"] {
        provenance.insert(k.to_string(), "derived".to_string());
    }
    for k in ["delta", "trim_kappa", "gamma", "frakE", "R_star", "B_prop"] {
        provenance.insert(k.to_string(), "empirical".to_string());
    }

    Ok(ConstantsLedger {
        epsilon: eps,
        t0,
        delta: s.delta,
        trim_kappa: s.trim_kappa,
        c1,
        c2,
        c3,
        c1bar,
        c2bar,
        c3bar,
        frak_d,
        r_star,
        big_delta,
        z_under,
        frak_e: s.frak_e,
        big_r_star: s.r_star_patch,
        lambda_c: lam_c,
        gamma: s.gamma,
        b_prop,
        lambda1,
        r_contraction,
        f2,
        f3,
        provenance,
    })
}
