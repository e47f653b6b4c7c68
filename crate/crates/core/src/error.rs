use thiserror::Error;

/// Errors raised by the verification toolkit.
///
/// Variants map one-to-one onto the failure modes of the individual stages,
/// so callers (and the CLI exit-code taxonomy) can tell a falsified
/// structural assumption apart from a numerical breakdown.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate shock: endstates coincide")]
    DegenerateShock,

    #[error("state {state:?} lies outside the admissible state box")]
    OutOfDomain { state: Vec<f64> },

    #[error("model validation failed at {state:?}: jacobian error {error:.3e}")]
    ValidationFailed { state: Vec<f64>, error: f64 },

    #[error("closed-form profile not applicable: {0}")]
    NotApplicable(String),

    #[error("no unstable direction at the left endstate: {0}")]
    NoUnstableDirection(String),

    #[error("orbit does not connect the endstates: {0}")]
    NoConnection(String),

    #[error("tail below noise floor; decay rate is at least {rate_lower_bound:.4}")]
    TailBelowNoise { rate_lower_bound: f64 },

    #[error("matrix is not strictly hyperbolic{}: {reason}", at_suffix(*.x))]
    NotStrictlyHyperbolic { reason: String, x: Option<f64> },

    #[error("characteristic speed {lambda:.3e} below bound {c_min:.3e}{}", at_suffix(*.x))]
    Characteristic { lambda: f64, c_min: f64, x: Option<f64> },

    #[error("eigenvalue gap {gap:.3e} too small for the commutator solve")]
    GapTooSmall { gap: f64 },

    #[error("source is not dissipative at the endstates: E_{j}{j} = {value:.4} on the {side} side")]
    NotDissipative { side: String, j: usize, value: f64 },

    #[error("frequency scan too coarse near xi = {xi:.4}")]
    ScanTooCoarse { xi: f64 },

    #[error("branch pairing ambiguous at xi = {xi:.4}")]
    PairingAmbiguous { xi: f64 },

    #[error("perturbation C1 norm {norm:.3e} exceeds budget {budget:.3e}")]
    BudgetExceeded { norm: f64, budget: f64 },

    #[error("CFL number {cfl:.3} exceeds limit {limit:.3}")]
    CflViolation { cfl: f64, limit: f64 },

    #[error("perturbation blew up at t = {t:.4}: C0 norm {norm:.3e}")]
    BlowUp { t: f64, norm: f64 },

    #[error("characteristic exponent bound grows with the horizon: {c_short:.4e} -> {c_long:.4e}")]
    NotBounded { c_short: f64, c_long: f64 },

    #[error("smallness budget too large: no damping radius exists")]
    EpsilonTooLarge,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no feasible damping rate in the scanned grid (best C_min = {best_c:.4e})")]
    EmptyFeasible { best_c: f64 },
}

fn at_suffix(x: Option<f64>) -> String {
    match x {
        Some(x) => format!(" at x = {x:.4}"),
        None => String::new(),
    }
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParam { .. } => "InvalidParam",
            Error::Precondition(_) => "Precondition",
            Error::DegenerateShock => "DegenerateShock",
            Error::OutOfDomain { .. } => "OutOfDomain",
            Error::ValidationFailed { .. } => "ValidationFailed",
            Error::NotApplicable(_) => "NotApplicable",
            Error::NoUnstableDirection(_) => "NoUnstableDirection",
            Error::NoConnection(_) => "NoConnection",
            Error::TailBelowNoise { .. } => "TailBelowNoise",
            Error::NotStrictlyHyperbolic { .. } => "NotStrictlyHyperbolic",
            Error::Characteristic { .. } => "Characteristic",
            Error::GapTooSmall { .. } => "GapTooSmall",
            Error::NotDissipative { .. } => "NotDissipative",
            Error::ScanTooCoarse { .. } => "ScanTooCoarse",
            Error::PairingAmbiguous { .. } => "PairingAmbiguous",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::CflViolation { .. } => "CFLViolation",
            Error::BlowUp { .. } => "BlowUp",
            Error::NotBounded { .. } => "NotBounded",
            Error::EpsilonTooLarge => "EpsilonTooLarge",
            Error::Unsupported(_) => "Unsupported",
            Error::EmptyFeasible { .. } => "EmptyFeasible",
        }
    }

    /// Whether the error falsifies a structural assumption or a damping
    /// claim, as opposed to signalling a crash or bad input.
    pub fn is_certification_failure(&self) -> bool {
        matches!(
            self,
            Error::NotStrictlyHyperbolic { .. }
                | Error::Characteristic { .. }
                | Error::NotDissipative { .. }
                | Error::NoConnection(_)
                | Error::NoUnstableDirection(_)
                | Error::NotBounded { .. }
                | Error::EpsilonTooLarge
                | Error::EmptyFeasible { .. }
        )
    }

    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
