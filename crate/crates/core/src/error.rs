use std::fmt;

use thiserror::Error;

/// Which H-type axiom a candidate set of structure constants broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    /// `J_j^T = -J_j`
    Skew,
    /// `J_j^2 = -I`
    Square,
    /// `J_j J_k + J_k J_j = 0` for `j != k`
    Anticommutation,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Axiom::Skew => "skew",
            Axiom::Square => "square",
            Axiom::Anticommutation => "anticommutation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("axiom violation ({axiom}) at j={j}, k={k}: residual {residual:e}")]
    AxiomViolation {
        axiom: Axiom,
        /// 1-based indices into the J list.
        j: usize,
        k: usize,
        residual: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geodesic coordinates out of domain: {0}")]
    DomainViolation(String),

    #[error("point lies outside the geodesic chart (x = 0 or z = 0)")]
    OutsideChart,

    #[error("coordinates lie inside the unit ball (|u||eta| = {0})")]
    InsideBall(f64),

    #[error("quadrature failed to converge (estimated error {estimated_error:e}, requested {requested:e})")]
    QuadratureFailure { estimated_error: f64, requested: f64 },

    #[error("field has no growth certificate; convolution needs class-C membership or explicit bounds")]
    MissingGrowthCertificate,

    #[error("field evaluation failed at {0}")]
    FieldEvaluation(String),

    #[error("semigroup series did not terminate after {0} terms")]
    NonTermination(usize),

    #[error("group has no exact rational structure constants")]
    NonRationalGroup,

    #[error("denominator P_t(|grad f|)(0) = {0:e} is degenerate")]
    DegenerateDenominator(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
