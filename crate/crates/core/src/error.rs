use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("fibre map not expanding enough: certified lambda = {lambda} (need > {required})")]
    NotExpanding { lambda: f64, required: f64 },
    #[error("epsilon {epsilon} too large for the cone construction (bound {bound})")]
    EpsilonTooLarge { epsilon: f64, bound: f64 },
    #[error("no convergence in {what} after {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },
    #[error("slope contraction not certified: sigma = {sigma}")]
    ContractionNotCertified { sigma: f64 },
    #[error("centre expansion band violated at step {step}: log product {log_product}, band {band}")]
    BandViolated { step: usize, log_product: f64, band: f64 },
    #[error("averaged drift is not in the one-sink-one-source class: {0}")]
    NotOmega1(String),
    #[error("system is not mostly expanding: psi_bar_star(theta_minus) = {value}")]
    NotMostlyExpanding { value: f64 },
    #[error("infeasible constants: {0}")]
    InfeasibleConstants(String),
    #[error("image curve too long: |J| = {length} > 1/2")]
    CurveTooLong { length: f64 },
    #[error("target height {height} outside [{min}, {max}]")]
    HeightOutOfRange { height: f64, min: f64, max: f64 },
    #[error("leaf validation failed: {0}")]
    LeafValidationFailed(String),
    #[error("rectangle parameter Z = {z} too small (need > {required})")]
    ZTooSmall { z: f64, required: f64 },
    #[error("density log-gradient norm {kappa} exceeds bound {bound}")]
    KappaTooLarge { kappa: f64, bound: f64 },
    #[error("no significant window for the decay fit: {0}")]
    DegenerateFit(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 3 for numerical non-convergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. }
            | Error::ContractionNotCertified { .. }
            | Error::DegenerateFit(_)
            | Error::BandViolated { .. } => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSystem(_) => "InvalidSystem",
            Error::NotExpanding { .. } => "NotExpanding",
            Error::EpsilonTooLarge { .. } => "EpsilonTooLarge",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::ContractionNotCertified { .. } => "ContractionNotCertified",
            Error::BandViolated { .. } => "BandViolated",
            Error::NotOmega1(_) => "NotOmega1",
            Error::NotMostlyExpanding { .. } => "NotMostlyExpanding",
            Error::InfeasibleConstants(_) => "InfeasibleConstants",
            Error::CurveTooLong { .. } => "CurveTooLong",
            Error::HeightOutOfRange { .. } => "HeightOutOfRange",
            Error::LeafValidationFailed(_) => "LeafValidationFailed",
            Error::ZTooSmall { .. } => "ZTooSmall",
            Error::KappaTooLarge { .. } => "KappaTooLarge",
            Error::DegenerateFit(_) => "DegenerateFit",
            Error::Validation(_) => "Validation",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
