use thiserror::Error;

/// Errors raised while reading `.pp` sources.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    #[error("unknown distribution `{0}`")]
    UnknownDistribution(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("variable `{0}` is assigned more than once in the same block")]
    RedeclaredVariable(String),
    #[error("variable `{0}` is used before it is defined")]
    UnknownVariable(String),
    #[error("invalid parameters for {name}: {reason}")]
    InvalidParameters { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("moment of order {0} diverges")]
    MomentDiverges(u32),
    #[error("derivative order {order} exceeds the supported maximum {max}")]
    UnsupportedOrder { order: u32, max: u32 },
    #[error("moment-generating function diverges at t = {0}")]
    MgfDiverges(f64),
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),
    #[error("imaginary residue {0:e} left in a real moment")]
    ImaginaryResidueTooLarge(f64),
    #[error("ill-conditioned basis: {0}")]
    IllConditionedBasis(String),
    #[error("error bound needs a bounded support")]
    UnboundedSupport,
    #[error("`{0}` is not an accumulator")]
    NotAnAccumulator(String),
    #[error("PCE conditions violated: {}", .0.join("; "))]
    ConditionsViolated(Vec<String>),
    #[error("degree {degree} exceeds the maximum {max}")]
    DegreeTooHigh { degree: usize, max: usize },
    #[error("moment closure exceeded {limit} monomials (while adding `{monomial}`)")]
    ClosureExplosion { limit: usize, monomial: String },
    #[error("non-linear cyclic dependency: {0}")]
    NonLinearCycle(String),
    #[error("program is not Prob-solvable: {0}")]
    NotProbSolvable(String),
    #[error("non-finite value in sample {sample} at iteration {iteration}")]
    NonFiniteSample { sample: u64, iteration: u64 },
    #[error("missing moment `{0}`")]
    MissingMoment(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
