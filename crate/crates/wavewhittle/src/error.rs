//! Unified error type for the whole crate.
//!
//! Every fallible operation returns [`Result`] with this [`Error`].  Variants
//! carry enough context (offending values, locations, budgets) that a caller
//! can produce an actionable message without re-deriving state, and the CLI
//! can serialize them into machine-readable error records.

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// All failure modes of the library.
#[derive(Debug, Clone, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A Daubechies order outside the supported range was requested.
    ///
    /// Order 1 (Haar) is excluded because the estimator requires more than
    /// one vanishing moment; orders above 10 are outside the tabulated
    /// construction range.
    #[error("unsupported Daubechies order M={order}: supported range is 2..=10 (Haar is excluded because at least two vanishing moments are required)")]
    UnsupportedOrder { order: usize },

    /// The series is too short for the deepest requested scale.
    #[error("series too short: {n_x} samples leave {available} boundary-free coefficients at scale {scale}, need at least {required}")]
    SeriesTooShort {
        n_x: usize,
        scale: usize,
        available: usize,
        required: usize,
    },

    /// A NaN or infinity was found in an input that must be finite.
    #[error("non-finite input: {context} contains {value} at index {index}")]
    NonFiniteInput {
        context: String,
        index: usize,
        value: f64,
    },

    /// An index does not address an existing element.
    #[error("index out of range: {context}: {index} not in 0..{len}")]
    IndexOutOfRange {
        context: String,
        index: usize,
        len: usize,
    },

    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {context}: value {value} outside ({lo}, {hi})")]
    DomainError {
        context: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A quadrature or iterative routine could not reach the requested
    /// tolerance.
    #[error("convergence failure in {context}: achieved error estimate {achieved:.3e} exceeds tolerance {tolerance:.3e}")]
    ConvergenceError {
        context: String,
        achieved: f64,
        tolerance: f64,
    },

    /// A kernel was evaluated at a non-integrable singular point.
    #[error("singularity: {context} is singular at frequency {frequency} for exponent {exponent}")]
    SingularityError {
        context: String,
        frequency: f64,
        exponent: f64,
    },

    /// An infinite scale-gap series failed to contract.
    #[error("divergent series: {context}: term at u={at_term} grew to {magnitude:.3e}; the infinite-gap aggregate requires max(delta1, delta2) < 1")]
    DivergentSeries {
        context: String,
        at_term: usize,
        magnitude: f64,
    },

    /// The scale-gap parameter admits no variance weighting.
    #[error("degenerate scale gap Delta={delta}: the weight variance kappa is zero, so the finite-gap aggregate is undefined; use Delta >= 1")]
    DegenerateDelta { delta: usize },

    /// A wavelet scale holds no coefficients.
    #[error("empty scale: no wavelet coefficients retained at scale {scale}")]
    EmptyScale { scale: usize },

    /// A variance that must be strictly positive is zero or negative.
    #[error("degenerate variance: {context}: component {component} has variance {value:.3e}")]
    DegenerateVariance {
        context: String,
        component: usize,
        value: f64,
    },

    /// A matrix that must be positive definite is not.
    #[error("matrix not positive definite in {context}: log-determinant sign {sign}")]
    NonPDMatrix { context: String, sign: f64 },

    /// The criterion optimizer exhausted its iteration budget.
    #[error("optimization failed: no convergence after {iterations} criterion evaluations (simplex diameter {diameter:.3e}, spread {spread:.3e})")]
    OptimFailed {
        iterations: usize,
        diameter: f64,
        spread: f64,
    },

    /// The phase factor of the long-run covariance vanished.
    #[error("cosine singularity: |d[{a}] - d[{b}]| = {gap:.6} puts cos(pi*gap/2) = {cosine:.3e} too close to zero to recover the long-run covariance")]
    CosineSingularity {
        a: usize,
        b: usize,
        gap: f64,
        cosine: f64,
    },

    /// A matrix inversion required by the asymptotics failed.
    #[error("singular matrix in {context}: {detail}")]
    SingularMatrix { context: String, detail: String },

    /// Malformed input data.
    #[error("parse error at row {row}, column {column}: {detail}")]
    ParseError {
        row: usize,
        column: usize,
        detail: String,
    },

    /// An input file held no data rows.
    #[error("empty file: {path} has a header but no data rows")]
    EmptyFile { path: String },

    /// A combination of individually valid options is not supported
    /// together.
    #[error("unsupported: {context}")]
    Unsupported { context: String },

    /// A configured resource budget would be exceeded.
    #[error("resource limit: {context} needs {requested} units, budget is {budget}")]
    ResourceLimit {
        context: String,
        requested: u64,
        budget: u64,
    },

    /// Filesystem or serialization failure surfaced by the IO layer.
    #[error("io error: {context}: {detail}")]
    Io { context: String, detail: String },
}

impl Error {
    /// Stable machine-readable kind identifier used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedOrder { .. } => "UnsupportedOrder",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::NonFiniteInput { .. } => "NonFiniteInput",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DomainError { .. } => "DomainError",
            Error::ConvergenceError { .. } => "ConvergenceError",
            Error::SingularityError { .. } => "SingularityError",
            Error::DivergentSeries { .. } => "DivergentSeries",
            Error::DegenerateDelta { .. } => "DegenerateDelta",
            Error::EmptyScale { .. } => "EmptyScale",
            Error::DegenerateVariance { .. } => "DegenerateVariance",
            Error::NonPDMatrix { .. } => "NonPDMatrix",
            Error::OptimFailed { .. } => "OptimFailed",
            Error::CosineSingularity { .. } => "CosineSingularity",
            Error::SingularMatrix { .. } => "SingularMatrix",
            Error::ParseError { .. } => "ParseError",
            Error::EmptyFile { .. } => "EmptyFile",
            Error::Unsupported { .. } => "Unsupported",
            Error::ResourceLimit { .. } => "ResourceLimit",
            Error::Io { .. } => "Io",
        }
    }
}
