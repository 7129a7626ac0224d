//! Experiment configuration: one TOML file with a block per subcommand.
//!
//! Every block has defaults and rejects unknown keys. A run writes the resolved
//! configuration next to its outputs; feeding it back reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{LyapunovSettings, MeasureSettings};
use crate::system::{FastSlowSystem, SystemSpec};
use crate::systems;
use crate::trig::{TrigPoly2, TrigTerm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    /// System file; relative paths resolve against the config file.
    pub system_file: Option<PathBuf>,
    /// `sys-a`, `sys-b` or `reference`, used when no system file is given.
    pub builtin: String,
    /// Overrides the system's ε.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub density: DensityBlock,
    pub average: AverageBlock,
    pub constants: ConstantsBlock,
    pub slopes: SlopesBlock,
    pub cones: ConesBlock,
    pub orbits: OrbitsBlock,
    pub pairs: PairsBlock,
    pub patches: PatchesBlock,
    pub telemetry: TelemetryBlock,
    pub lyapunov: LyapunovSettings,
    pub measure: MeasureSettings,
    pub correlations: CorrelationsBlock,
    pub rate_scaling: RateScalingBlock,
    pub sink: SinkBlock,
    pub tv: TvBlock,
    pub appendix: AppendixBlock,
    pub scan: ScanBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            system_file: None,
            builtin: "sys-b".into(),
            epsilon: None,
            seed: 20240611,
            threads: None,
            out: None,
            density: DensityBlock::default(),
            average: AverageBlock::default(),
            constants: ConstantsBlock::default(),
            slopes: SlopesBlock::default(),
            cones: ConesBlock::default(),
            orbits: OrbitsBlock::default(),
            pairs: PairsBlock::default(),
            patches: PatchesBlock::default(),
            telemetry: TelemetryBlock::default(),
            lyapunov: LyapunovSettings::default(),
            measure: MeasureSettings::default(),
            correlations: CorrelationsBlock::default(),
            rate_scaling: RateScalingBlock::default(),
            sink: SinkBlock::default(),
            tv: TvBlock::default(),
            appendix: AppendixBlock::default(),
            scan: ScanBlock::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityBlock {
    /// Number of fibres `θ = k/n_fibres`.
    pub n_fibres: usize,
    pub n: usize,
    pub tol: f64,
}

impl Default for DensityBlock {
    fn default() -> Self {
        Self { n_fibres: 8, n: crate::transfer::DEFAULT_N, tol: crate::transfer::DEFAULT_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AverageBlock {
    pub n_theta: usize,
    pub n: usize,
    pub tol: f64,
    pub theta0: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Ensemble size for the sup-deviation check; zero skips it.
    pub members: usize,
}

impl Default for AverageBlock {
    fn default() -> Self {
        Self { n_theta: 128, n: 128, tol: 1e-12, theta0: 0.1, t_end: 1.0, dt: 1e-3, members: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsBlock {
    pub t0: f64,
    pub delta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub frak_e: f64,
    pub r_star: f64,
    pub b_prop: Option<f64>,
}

impl Default for ConstantsBlock {
    fn default() -> Self {
        use crate::constants::*;
        Self {
            t0: 0.5,
            delta: DEFAULT_DELTA,
            kappa: DEFAULT_KAPPA,
            gamma: DEFAULT_GAMMA,
            frak_e: DEFAULT_FRAK_E,
            r_star: DEFAULT_R_STAR,
            b_prop: None,
        }
    }
}

impl ConstantsBlock {
    pub fn ledger_settings(&self) -> crate::constants::LedgerSettings {
        crate::constants::LedgerSettings {
            delta: self.delta,
            trim_kappa: self.kappa,
            gamma: self.gamma,
            frak_e: self.frak_e,
            r_star_patch: self.r_star,
            b_prop: self.b_prop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlopesBlock {
    pub points: usize,
    pub tol: f64,
    /// Length of the expansion-factor record at the first point.
    pub n: usize,
}

impl Default for SlopesBlock {
    fn default() -> Self {
        Self { points: 64, tol: 1e-12, n: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConesBlock {
    pub samples: usize,
}

impl Default for ConesBlock {
    fn default() -> Self {
        Self { samples: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitsBlock {
    pub n_theta: usize,
    pub max_period: usize,
    pub margin_threshold: f64,
}

impl Default for OrbitsBlock {
    fn default() -> Self {
        Self { n_theta: 8, max_period: 4, margin_threshold: crate::cohomology::DEFAULT_MARGIN_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsBlock {
    pub count: usize,
    pub steps: usize,
    pub weight_floor: f64,
}

impl Default for PairsBlock {
    fn default() -> Self {
        Self { count: 100, steps: 1, weight_floor: crate::pairs::DEFAULT_WEIGHT_FLOOR }
    }
}

/// A horizontal standard curve `θ = θ₀` on `[x₀, x₀ + length]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizontalCurve {
    pub x0: f64,
    pub theta0: f64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchesBlock {
    pub base: HorizontalCurve,
    pub height: f64,
    pub steps: usize,
}

impl Default for PatchesBlock {
    fn default() -> Self {
        Self { base: HorizontalCurve { x0: 0.2, theta0: 0.1, length: 0.04 }, height: 0.1, steps: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryBlock {
    pub horizon: usize,
    pub checkpoints: Vec<usize>,
    pub max_pieces: usize,
    /// Initial Lebesgue density up to normalization.
    pub density: TrigPoly2,
    pub kappa_max: f64,
}

impl Default for TelemetryBlock {
    fn default() -> Self {
        Self {
            horizon: 4,
            checkpoints: vec![0, 1, 2, 3, 4],
            max_pieces: 400,
            density: TrigPoly2::new(vec![TrigTerm(0, 0, 1.0, 0.0)]),
            kappa_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationsBlock {
    pub a: TrigPoly2,
    pub b: TrigPoly2,
    /// Largest lag in units of `1/ε`.
    pub lag_max_over_eps: f64,
    pub n_lags: usize,
    pub n_samples: usize,
    pub stationary: MeasureSettings,
}

impl Default for CorrelationsBlock {
    fn default() -> Self {
        Self {
            a: TrigPoly2::new(vec![TrigTerm(0, 1, 1.0, 0.0)]),
            b: TrigPoly2::new(vec![TrigTerm(0, 1, 1.0, 0.0)]),
            lag_max_over_eps: 3.0,
            n_lags: 24,
            n_samples: 20_000,
            stationary: MeasureSettings { n_orbits: 64, n_steps: 4000, ..MeasureSettings::default() },
        }
    }
}

impl CorrelationsBlock {
    pub fn settings(&self, eps: f64) -> crate::stats::CorrelationSettings {
        let lag_max = ((self.lag_max_over_eps / eps.max(1e-12)).ceil() as usize).max(self.n_lags);
        crate::stats::CorrelationSettings {
            lags: crate::stats::lag_grid(lag_max, self.n_lags),
            n_samples: self.n_samples,
            stationary: self.stationary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateScalingBlock {
    pub eps_grid: Vec<f64>,
}

impl Default for RateScalingBlock {
    fn default() -> Self {
        Self { eps_grid: vec![2e-2, 1e-2, 5e-3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkBlock {
    /// Horizon in units of `log(1/ε)/ε`.
    pub horizon_factor: f64,
    pub samples: usize,
    /// Fixed constant `C`; calibrated on an independent stream when absent.
    pub c: Option<f64>,
    pub calibration_samples: usize,
}

impl Default for SinkBlock {
    fn default() -> Self {
        Self { horizon_factor: 1.0, samples: 2000, c: None, calibration_samples: 2000 }
    }
}

impl SinkBlock {
    pub fn horizon(&self, eps: f64) -> usize {
        (self.horizon_factor * (1.0 / eps).ln() / eps).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvBlock {
    pub family1: Vec<HorizontalCurve>,
    pub family2: Vec<HorizontalCurve>,
    /// Horizon in units of `log(1/ε)/ε`.
    pub horizon_factor: f64,
    pub n_checkpoints: usize,
    pub bins: usize,
    pub n_points: usize,
}

impl Default for TvBlock {
    fn default() -> Self {
        Self {
            family1: vec![HorizontalCurve { x0: 0.1, theta0: 0.1, length: 0.04 }],
            family2: vec![
                HorizontalCurve { x0: 0.5, theta0: 0.6, length: 0.04 },
                HorizontalCurve { x0: 0.7, theta0: 0.85, length: 0.04 },
            ],
            horizon_factor: 5.0,
            n_checkpoints: 12,
            bins: 16,
            n_points: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppendixBlock {
    pub samples: usize,
    pub max_n: usize,
}

impl Default for AppendixBlock {
    fn default() -> Self {
        Self { samples: 100, max_n: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanBlock {
    pub a: Vec<f64>,
    pub mu: Vec<f64>,
    pub c: Vec<f64>,
}

impl Default for ScanBlock {
    fn default() -> Self {
        Self { a: vec![0.06, 0.1, 0.14], mu: vec![0.05, 0.1, 0.15], c: vec![-2.5, -1.0, 1.0] }
    }
}

impl ScanBlock {
    pub fn grid(&self) -> Vec<(f64, f64, f64)> {
        let mut g = Vec::new();
        for &a in &self.a {
            for &mu in &self.mu {
                for &c in &self.c {
                    g.push((a, mu, c));
                }
            }
        }
        g
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads a config file and makes its system path absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            e => e,
        })?;
        if let Some(f) = &c.system_file {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                c.system_file = Some(base.join(f));
            }
        }
        Ok(c)
    }

    /// The system with the ε override applied.
    pub fn system(&self) -> Result<FastSlowSystem> {
        let sys = match &self.system_file {
            Some(f) => {
                let text = std::fs::read_to_string(f)?;
                FastSlowSystem::from_spec(&SystemSpec::from_toml(&text).map_err(|e| match e {
                    Error::Parse(m) => Error::Parse(format!("{}: {m}", f.display())),
                    e => e,
                })?)?
            }
            None => builtin_system(&self.builtin, 0.01)?,
        };
        match self.epsilon {
            Some(e) if !(e >= 0.0 && e.is_finite()) => Err(Error::InvalidSystem(format!("epsilon {e}"))),
            Some(e) => Ok(sys.with_epsilon(e)),
            None => Ok(sys),
        }
    }
}

pub fn builtin_system(name: &str, eps: f64) -> Result<FastSlowSystem> {
    match name {
        "sys-a" => Ok(systems::sys_a(eps)),
        "sys-b" => Ok(systems::sys_b(eps)),
        "reference" => Ok(systems::reference_expanding(eps)),
        other => Err(Error::Parse(format!("unknown builtin system `{other}`"))),
    }
}
