//! Named test systems and the parametric template used by the scan.

use crate::system::FastSlowSystem;
use crate::trig::{TrigPoly2, TrigTerm};

/// `f = 4x`, `ω = sin 2πθ`: a skew product with sink 1/2 and source 0.
pub fn sys_a(epsilon: f64) -> FastSlowSystem {
    FastSlowSystem::new(4, TrigPoly2::zero(), TrigPoly2::new(vec![TrigTerm(0, 1, 0.0, 1.0)]), epsilon)
        .expect("SYS-A is valid")
}

/// `f = 4x + 0.1 sin 2π(x+θ)`, `ω = sin 2πθ + 0.5 cos 2πx`.
pub fn sys_b(epsilon: f64) -> FastSlowSystem {
    FastSlowSystem::new(
        4,
        TrigPoly2::new(vec![TrigTerm(1, 1, 0.0, 0.1)]),
        TrigPoly2::new(vec![TrigTerm(0, 1, 0.0, 1.0), TrigTerm(1, 0, 0.5, 0.0)]),
        epsilon,
    )
    .expect("SYS-B is valid")
}

/// Template `f = 4x + a sin 2π(x+θ)`, `ω = μ sin 2πθ + c sin 2π(x+θ)`.
pub fn template(a: f64, mu: f64, c: f64, epsilon: f64) -> crate::Result<FastSlowSystem> {
    FastSlowSystem::new(
        4,
        TrigPoly2::new(vec![TrigTerm(1, 1, 0.0, a)]),
        TrigPoly2::new(vec![TrigTerm(0, 1, 0.0, mu), TrigTerm(1, 1, 0.0, c)]),
        epsilon,
    )
}

/// Template parameters of the mostly-expanding reference system.
pub const REFERENCE_PARAMS: (f64, f64, f64) = (0.14, 0.15, -2.5);

/// The mostly-expanding reference system found by scanning the template.
pub fn reference_expanding(epsilon: f64) -> FastSlowSystem {
    let (a, mu, c) = REFERENCE_PARAMS;
    template(a, mu, c, epsilon).expect("reference system is valid")
}
