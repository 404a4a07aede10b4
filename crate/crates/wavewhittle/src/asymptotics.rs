//! Limiting covariances for the estimation chain and Gaussian confidence
//! intervals built from them.
//!
//! Every estimator in [`crate::estimation`] has a closed-form limiting
//! covariance expressed through the scale-coupling aggregates of
//! [`crate::kernels`]: the empirical wavelet covariances across scale pairs
//! ([`wavelet_cov_asym_cov`]), the per-scale correlations
//! ([`scale_correlation_variance`]), the memory estimates ([`d_asym_cov`]),
//! the covariance amplitude ([`g_asym_cov`]), the long-run correlations
//! ([`r_asym_var`]), and the joint law of memory and amplitude deviations
//! ([`joint_dg_cov`]).  [`asymptotic_covariances`] bundles the matrices for
//! one plug-in parameter point, and [`confidence_intervals`] turns a fitted
//! [`InferenceResult`] into two-sided Gaussian intervals.
//!
//! All covariances describe `√n`-scaled deviations, so a variance read from
//! these matrices is divided by the coefficient count `n` before use.
//! Component indices are zero-based; stacked amplitude indices are row-major,
//! `(a, b) ↦ a·p + b`.  The formulas are plug-in evaluations: callers pass
//! the estimated memory vector and amplitude matrix, and every kernel
//! aggregate is evaluated at sums of those estimates.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI, TAU};
use std::fmt;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{
    estimate_d, g_hat, init_d_log_regression, long_run_correlations, omega_hat, InferenceResult,
    ScaleCovarianceSet,
};
use crate::kernels::{
    script_i, script_i_dg, script_i_g, script_i_inf, CouplingKernels, ModulusKernelSource,
    WeightConvention,
};

/// Variance constant `π/(2·ln²2)` of a single memory estimate: the
/// univariate limiting variance is this constant times the memory
/// aggregate at twice the memory parameter.
pub const MEMORY_VARIANCE_CONSTANT: f64 = PI / (2.0 * LN_2 * LN_2);

/// Maximum relative asymmetry tolerated in an assembled covariance matrix
/// before symmetrization; larger residues indicate kernel inconsistencies
/// rather than rounding.
const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// How many scale gaps the aggregate weights average over.
///
/// `Finite(Δ)` weights gaps `0 … Δ`; `Infinite` takes the limiting series.
/// The natural finite budget for fitted data is `j1 − j0`, the number of
/// scale gaps the pyramid actually spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleGap {
    /// Aggregate over gaps `0 … Δ`.
    Finite(usize),
    /// The infinite-budget limit of the aggregate series.
    Infinite,
}

impl ScaleGap {
    /// The finite budget, if there is one.
    pub fn finite(self) -> Option<usize> {
        match self {
            ScaleGap::Finite(delta) => Some(delta),
            ScaleGap::Infinite => None,
        }
    }
}

impl fmt::Display for ScaleGap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleGap::Finite(delta) => write!(f, "{delta}"),
            ScaleGap::Infinite => write!(f, "infinite"),
        }
    }
}

/// Which aggregate weighs the kernel terms inside [`r_asym_var`].
///
/// The long-run correlation is a smooth function of the covariance
/// amplitude, so its variance inherits the scale-average aggregate that
/// governs amplitude deviations; that is the default.  The scale-contrast
/// variant replaces it with the aggregate governing memory deviations and
/// is kept for comparison with that published form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationAggregate {
    /// Weigh with the amplitude (scale-average) aggregate.
    ScaleAverage,
    /// Weigh with the memory (scale-contrast) aggregate.
    ScaleContrast,
}

impl Default for CorrelationAggregate {
    fn default() -> Self {
        CorrelationAggregate::ScaleAverage
    }
}

/// Memory-contrast aggregate at a finite or infinite scale-gap budget.
pub fn memory_aggregate(
    kernels: &dyn CouplingKernels,
    gap: ScaleGap,
    delta1: f64,
    delta2: f64,
    convention: WeightConvention,
) -> Result<f64> {
    match gap {
        ScaleGap::Finite(delta) => script_i(kernels, delta, delta1, delta2, convention),
        ScaleGap::Infinite => script_i_inf(kernels, delta1, delta2),
    }
}

/// Scale-average aggregate at a finite or infinite scale-gap budget.
pub fn amplitude_aggregate(
    kernels: &dyn CouplingKernels,
    gap: ScaleGap,
    delta1: f64,
    delta2: f64,
    convention: WeightConvention,
) -> Result<f64> {
    match gap {
        ScaleGap::Finite(delta) => script_i_g(kernels, delta, delta1, delta2, convention),
        ScaleGap::Infinite => script_i_inf(kernels, delta1, delta2),
    }
}

/// Memoized aggregate evaluation over exponent pairs.
///
/// The covariance assemblies below query the same `(δ₁, δ₂)` pair once per
/// index combination — `p⁴` times for `p` components — while the number of
/// distinct exponent pairs only grows like `p²`.  Symmetric aggregates are
/// additionally keyed on the ordered pair, which pins the evaluation to one
/// argument order and removes the kernel grid's sub-tolerance asymmetry.
struct Memo<F> {
    eval: F,
    symmetric: bool,
    values: HashMap<(u64, u64), f64>,
}

impl<F: FnMut(f64, f64) -> Result<f64>> Memo<F> {
    fn new(symmetric: bool, eval: F) -> Self {
        Memo {
            eval,
            symmetric,
            values: HashMap::new(),
        }
    }

    fn get(&mut self, x: f64, y: f64) -> Result<f64> {
        let (kx, ky) = if self.symmetric && y < x { (y, x) } else { (x, y) };
        let key = (kx.to_bits(), ky.to_bits());
        if let Some(&v) = self.values.get(&key) {
            return Ok(v);
        }
        let v = (self.eval)(kx, ky)?;
        self.values.insert(key, v);
        Ok(v)
    }
}

/// Validate a memory vector / amplitude matrix pair, returning `p`.
fn check_params(d: &[f64], g: &DMatrix<f64>) -> Result<usize> {
    let p = d.len();
    if p == 0 {
        return Err(Error::DomainError {
            context: "component count".into(),
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    if g.nrows() != p || g.ncols() != p {
        return Err(Error::IndexOutOfRange {
            context: "amplitude matrix shape".into(),
            index: g.nrows().max(g.ncols()),
            len: p,
        });
    }
    for (index, &value) in d.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteInput {
                context: "memory parameter".into(),
                value,
                index,
            });
        }
    }
    for (index, &value) in g.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteInput {
                context: "amplitude matrix".into(),
                value,
                index,
            });
        }
    }
    Ok(p)
}

fn check_component(index: usize, p: usize) -> Result<()> {
    if index >= p {
        return Err(Error::IndexOutOfRange {
            context: "component index".into(),
            index,
            len: p,
        });
    }
    Ok(())
}

/// The inverse amplitude and the half-sandwich factor
/// `(G⁻¹ ∘ G + I)⁻¹` (`∘` is the entrywise product).
fn half_sandwich(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = g.nrows();
    let ginv = g.clone().try_inverse().ok_or_else(|| Error::SingularMatrix {
        context: "long-run amplitude".into(),
        detail: "the amplitude matrix is not invertible".into(),
    })?;
    let inner = ginv.component_mul(g) + DMatrix::identity(p, p);
    let shalf = inner.try_inverse().ok_or_else(|| Error::SingularMatrix {
        context: "half-sandwich factor".into(),
        detail: "entrywise(G⁻¹, G) + I is not invertible".into(),
    })?;
    Ok((ginv, shalf))
}

/// Assert near-symmetry, then return the symmetrized matrix.
///
/// The assemblies are symmetric in exact arithmetic; a residue above
/// [`SYMMETRY_TOLERANCE`] (relative to the largest entry) means the kernel
/// values themselves are inconsistent and is reported instead of averaged
/// away.
fn symmetrize_checked(m: DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let mt = m.transpose();
    let residue = (&m - &mt).abs().max();
    let scale = m.abs().max().max(1.0);
    if !(residue <= SYMMETRY_TOLERANCE * scale) {
        return Err(Error::ConvergenceError {
            context: format!("{context} symmetry"),
            achieved: residue,
            tolerance: SYMMETRY_TOLERANCE * scale,
        });
    }
    Ok(0.5 * (m + mt))
}

/// Limiting covariance of two `√n`-scaled empirical wavelet covariances,
/// indexed by scale offsets `u, u'` above the coarsest fitted scale and by
/// component pairs `(a, b)`, `(a', b')`.
///
/// The value is `2π · 2^{(d_a+d_b+d_{a'}+d_{b'})·max(u,u') − |u−u'|/2}`
/// times the two-product kernel combination
/// `G_{aa'}G_{bb'}·Ĩ_{|u−u'|}(d_a+d_{a'}, d_b+d_{b'}) +
/// G_{ab'}G_{ba'}·Ĩ_{|u−u'|}(d_a+d_{b'}, d_b+d_{a'})`, with the coupling
/// integral continued past the source's gap bound by its limit rule.
///
/// # Errors
///
/// [`Error::IndexOutOfRange`] for component indices outside `0..p`;
/// [`Error::NonFiniteInput`] for non-finite parameters; kernel errors pass
/// through.
pub fn wavelet_cov_asym_cov(
    kernels: &dyn CouplingKernels,
    u: usize,
    u_prime: usize,
    pair: (usize, usize),
    pair_prime: (usize, usize),
    d: &[f64],
    g: &DMatrix<f64>,
) -> Result<f64> {
    let p = check_params(d, g)?;
    let (a, b) = pair;
    let (ap, bp) = pair_prime;
    for index in [a, b, ap, bp] {
        check_component(index, p)?;
    }
    let gap = u.abs_diff(u_prime);
    let top = u.max(u_prime) as f64;
    let exponent = (d[a] + d[b] + d[ap] + d[bp]) * top - gap as f64 / 2.0;
    let direct = kernels.i_tilde_any_gap(gap, d[a] + d[ap], d[b] + d[bp])?;
    let crossed = kernels.i_tilde_any_gap(gap, d[a] + d[bp], d[b] + d[ap])?;
    Ok(TAU
        * 2f64.powf(exponent)
        * (g[(a, ap)] * g[(b, bp)] * direct + g[(a, bp)] * g[(b, ap)] * crossed))
}

/// The five-term correlation variance pattern shared by the per-scale and
/// long-run correlation laws: the kernel `t` is evaluated at sums of the
/// two memory parameters and weighted by powers of the correlation.  With
/// equal memory parameters every kernel value coincides and the bracket
/// collapses to `(1 − ρ²)²`.
fn five_term_variance<T>(mut t: T, d_a: f64, d_b: f64, rho: f64) -> Result<f64>
where
    T: FnMut(f64, f64) -> Result<f64>,
{
    let r2 = rho * rho;
    let daa = 2.0 * d_a;
    let dbb = 2.0 * d_b;
    let dmix = d_a + d_b;
    let value = t(daa, dbb)? + (r2 + r2 * r2) * t(dmix, dmix)?
        - 2.0 * r2 * (t(daa, dmix)? + t(dbb, dmix)?)
        + 0.5 * r2 * (t(daa, daa)? + t(dbb, dbb)?);
    Ok(TAU * value)
}

fn check_correlation(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(Error::DomainError {
            context: "correlation".into(),
            value: rho,
            lo: -1.0,
            hi: 1.0,
        });
    }
    Ok(())
}

fn check_memory_pair(d_a: f64, d_b: f64) -> Result<()> {
    for (index, value) in [(0usize, d_a), (1, d_b)] {
        if !value.is_finite() {
            return Err(Error::NonFiniteInput {
                context: "memory parameter".into(),
                value,
                index,
            });
        }
    }
    Ok(())
}

/// Limiting variance of a `√n`-scaled empirical wavelet correlation at a
/// single scale, for components with memory parameters `d_a, d_b` and
/// correlation `rho` at that scale.
///
/// The five gap-zero kernel terms weigh the coupling integral
/// `Ĩ_0` at the exponent pairs `(2d_a, 2d_b)`, `(δ, δ)`, `(2d_a, δ)`,
/// `(2d_b, δ)`, `(2d_a, 2d_a)` and `(2d_b, 2d_b)` with `δ = d_a + d_b`;
/// for `d_a = d_b` the bracket collapses to `Ĩ_0·(1 − ρ²)²`.
///
/// # Errors
///
/// [`Error::DomainError`] for `|rho| > 1`; [`Error::NonFiniteInput`] for
/// non-finite memory parameters; kernel errors pass through.
pub fn scale_correlation_variance(
    kernels: &dyn CouplingKernels,
    d_a: f64,
    d_b: f64,
    rho: f64,
) -> Result<f64> {
    check_memory_pair(d_a, d_b)?;
    check_correlation(rho)?;
    five_term_variance(|x, y| kernels.i_tilde(0, x, y), d_a, d_b, rho)
}

/// Limiting covariance matrix of the `√n`-scaled memory estimates.
///
/// The sandwich `(π/ln²2) · S · W · S` with half-sandwich factor
/// `S = (G⁻¹ ∘ G + I)⁻¹` and kernel matrix
/// `W_{aa'} = Σ_{b,b'} G⁻¹_{ab} G⁻¹_{a'b'} (G_{aa'}G_{bb'}·𝓘(d_a+d_{a'},
/// d_b+d_{b'}) + G_{ab'}G_{a'b}·𝓘(d_a+d_{b'}, d_{a'}+d_b))`, where `𝓘` is
/// the memory aggregate at the requested gap budget.  For one component
/// this collapses to [`MEMORY_VARIANCE_CONSTANT`]`·𝓘(2d, 2d)`,
/// independent of the amplitude.
///
/// # Errors
///
/// [`Error::SingularMatrix`] when the amplitude or the half-sandwich
/// factor is not invertible; [`Error::DegenerateDelta`] for a finite gap
/// budget of zero; kernel and validation errors pass through.
pub fn d_asym_cov(
    kernels: &dyn CouplingKernels,
    d: &[f64],
    g: &DMatrix<f64>,
    gap: ScaleGap,
    convention: WeightConvention,
) -> Result<DMatrix<f64>> {
    let p = check_params(d, g)?;
    let (ginv, shalf) = half_sandwich(g)?;
    let mut agg = Memo::new(true, |x, y| memory_aggregate(kernels, gap, x, y, convention));
    let mut w = DMatrix::zeros(p, p);
    for a in 0..p {
        for ap in 0..p {
            let mut acc = 0.0;
            for b in 0..p {
                for bp in 0..p {
                    let direct = g[(a, ap)] * g[(b, bp)] * agg.get(d[a] + d[ap], d[b] + d[bp])?;
                    let crossed = g[(a, bp)] * g[(ap, b)] * agg.get(d[a] + d[bp], d[ap] + d[b])?;
                    acc += ginv[(a, b)] * ginv[(ap, bp)] * (direct + crossed);
                }
            }
            w[(a, ap)] = acc;
        }
    }
    let sandwich = PI / (LN_2 * LN_2) * (&shalf * w * &shalf);
    symmetrize_checked(sandwich, "memory-estimate covariance")
}

/// Limiting covariance of the `√n`-scaled stacked amplitude estimates
/// `vec Ĝ`, a `p²×p²` matrix over row-major pair indices `(a, b) ↦ a·p+b`.
///
/// Entry `((a,b), (a',b'))` is `2π(G_{aa'}G_{bb'}·𝓘^G(d_a+d_{a'},
/// d_b+d_{b'}) + G_{ab'}G_{ba'}·𝓘^G(d_a+d_{b'}, d_b+d_{a'}))` with the
/// scale-average aggregate `𝓘^G` at the requested gap budget.  Rows for
/// `(a, b)` and `(b, a)` coincide, reflecting that the two matrix entries
/// are the same random variable.
///
/// # Errors
///
/// Validation and kernel errors pass through; a finite budget of zero is
/// allowed here (the aggregate degenerates to the gap-zero kernel).
pub fn g_asym_cov(
    kernels: &dyn CouplingKernels,
    d: &[f64],
    g: &DMatrix<f64>,
    gap: ScaleGap,
    convention: WeightConvention,
) -> Result<DMatrix<f64>> {
    let p = check_params(d, g)?;
    let mut agg = Memo::new(true, |x, y| {
        amplitude_aggregate(kernels, gap, x, y, convention)
    });
    let q = p * p;
    let mut w = DMatrix::zeros(q, q);
    for a in 0..p {
        for b in 0..p {
            let row = a * p + b;
            for ap in 0..p {
                for bp in 0..p {
                    let col = ap * p + bp;
                    let direct = g[(a, ap)] * g[(b, bp)] * agg.get(d[a] + d[ap], d[b] + d[bp])?;
                    let crossed = g[(a, bp)] * g[(b, ap)] * agg.get(d[a] + d[bp], d[b] + d[ap])?;
                    w[(row, col)] = TAU * (direct + crossed);
                }
            }
        }
    }
    symmetrize_checked(w, "amplitude-estimate covariance")
}

/// Limiting variance of a `√n`-scaled long-run correlation estimate
/// `r̂_{ab}`, given the memory parameters and the correlation itself.
///
/// Same five-term bracket as [`scale_correlation_variance`], with the
/// gap-zero kernel replaced by an aggregate over the gap budget: the
/// scale-average aggregate by default, or the scale-contrast aggregate
/// under [`CorrelationAggregate::ScaleContrast`].  For `d_a = d_b` the
/// value collapses to `2π·𝓘(2d, 2d)·(1 − r²)²`.
///
/// This closed form agrees exactly with propagating [`g_asym_cov`]
/// through the correlation's Jacobian (see
/// [`correlation_variance_from_amplitude`]); both routes are exposed
/// because the closed form needs no `p²×p²` matrix.
///
/// # Errors
///
/// As for [`scale_correlation_variance`], plus aggregate errors for the
/// gap budget.
pub fn r_asym_var(
    kernels: &dyn CouplingKernels,
    d_a: f64,
    d_b: f64,
    r: f64,
    gap: ScaleGap,
    convention: WeightConvention,
    aggregate: CorrelationAggregate,
) -> Result<f64> {
    check_memory_pair(d_a, d_b)?;
    check_correlation(r)?;
    match aggregate {
        CorrelationAggregate::ScaleAverage => five_term_variance(
            |x, y| amplitude_aggregate(kernels, gap, x, y, convention),
            d_a,
            d_b,
            r,
        ),
        CorrelationAggregate::ScaleContrast => five_term_variance(
            |x, y| memory_aggregate(kernels, gap, x, y, convention),
            d_a,
            d_b,
            r,
        ),
    }
}

/// Variance of a `√n`-scaled long-run correlation obtained by propagating
/// the stacked amplitude covariance through the correlation's Jacobian.
///
/// `r̂_{ab}` depends on `(Ĝ_aa, Ĝ_ab, Ĝ_bb)` with partial derivatives
/// `(−r/(2G_aa), 1/√(G_aa G_bb), −r/(2G_bb))`; the variance is the
/// corresponding quadratic form in `g_cov`.  The off-diagonal weight goes
/// entirely to the `(a, b)` coordinate, which is exact because `Ĝ_{ab}`
/// and `Ĝ_{ba}` are the same random variable.  `a == b` returns zero: the
/// diagonal correlation is identically one.
///
/// # Errors
///
/// [`Error::IndexOutOfRange`] for bad indices or a `g_cov` that is not
/// `p²×p²`; [`Error::DegenerateVariance`] for non-positive amplitude
/// diagonals.
pub fn correlation_variance_from_amplitude(
    g_cov: &DMatrix<f64>,
    g: &DMatrix<f64>,
    a: usize,
    b: usize,
) -> Result<f64> {
    let p = g.nrows();
    if g.ncols() != p {
        return Err(Error::IndexOutOfRange {
            context: "amplitude matrix shape".into(),
            index: g.ncols(),
            len: p,
        });
    }
    if g_cov.nrows() != p * p || g_cov.ncols() != p * p {
        return Err(Error::IndexOutOfRange {
            context: "amplitude covariance shape".into(),
            index: g_cov.nrows().max(g_cov.ncols()),
            len: p * p,
        });
    }
    check_component(a, p)?;
    check_component(b, p)?;
    if a == b {
        return Ok(0.0);
    }
    for (component, value) in [(a, g[(a, a)]), (b, g[(b, b)])] {
        if !(value > 0.0) {
            return Err(Error::DegenerateVariance {
                context: "correlation delta method".into(),
                component,
                value,
            });
        }
    }
    let gaa = g[(a, a)];
    let gbb = g[(b, b)];
    let root = (gaa * gbb).sqrt();
    let r = g[(a, b)] / root;
    let jac = [-r / (2.0 * gaa), 1.0 / root, -r / (2.0 * gbb)];
    let idx = [a * p + a, a * p + b, b * p + b];
    let mut var = 0.0;
    for (ji, &i) in jac.iter().zip(idx.iter()) {
        for (jk, &k) in jac.iter().zip(idx.iter()) {
            var += ji * jk * g_cov[(i, k)];
        }
    }
    Ok(var)
}

/// Joint limiting covariance of the `√n`-scaled stacked vector
/// `(d̂, vec Ĝ)`, a `(p+p²)×(p+p²)` matrix.
///
/// The diagonal blocks are [`d_asym_cov`] and [`g_asym_cov`] at the finite
/// budget `Δ`; the cross block couples memory row `ℓ` to amplitude pair
/// `(a, b)` through the asymmetric cross aggregate:
/// `(π/(2·ln2)) Σ_m S_{ℓm} (G_{ℓa}G_{mb}·𝓘^{dG}(d_ℓ+d_a, d_m+d_b) +
/// G_{ℓb}G_{am}·𝓘^{dG}(d_ℓ+d_b, d_m+d_a))` with the same half-sandwich
/// factor `S` as the memory block.  The cross aggregate's second exponent
/// carries the residual-mean term, so the argument order matters and is
/// preserved exactly as written.
///
/// # Errors
///
/// [`Error::DegenerateDelta`] for `Δ = 0` (the cross aggregate needs at
/// least one positive gap); [`Error::SingularMatrix`] from the sandwich
/// factors; validation and kernel errors pass through.
pub fn joint_dg_cov(
    kernels: &dyn CouplingKernels,
    d: &[f64],
    g: &DMatrix<f64>,
    delta: usize,
    convention: WeightConvention,
) -> Result<DMatrix<f64>> {
    let p = check_params(d, g)?;
    if delta == 0 {
        return Err(Error::DegenerateDelta { delta });
    }
    let memory_block = d_asym_cov(kernels, d, g, ScaleGap::Finite(delta), convention)?;
    let amplitude_block = g_asym_cov(kernels, d, g, ScaleGap::Finite(delta), convention)?;
    let (_ginv, shalf) = half_sandwich(g)?;
    let mut cross_agg = Memo::new(false, |x, y| script_i_dg(kernels, delta, x, y, convention));
    let q = p * p;
    let mut joint = DMatrix::zeros(p + q, p + q);
    joint.view_mut((0, 0), (p, p)).copy_from(&memory_block);
    joint.view_mut((p, p), (q, q)).copy_from(&amplitude_block);
    for l in 0..p {
        for a in 0..p {
            for b in 0..p {
                let col = a * p + b;
                let mut acc = 0.0;
                for m in 0..p {
                    let direct = g[(l, a)] * g[(m, b)] * cross_agg.get(d[l] + d[a], d[m] + d[b])?;
                    let crossed = g[(l, b)] * g[(a, m)] * cross_agg.get(d[l] + d[b], d[m] + d[a])?;
                    acc += shalf[(l, m)] * (direct + crossed);
                }
                let value = PI / (2.0 * LN_2) * acc;
                joint[(l, p + col)] = value;
                joint[(p + col, l)] = value;
            }
        }
    }
    Ok(joint)
}

/// The limiting covariance blocks for one plug-in parameter point.
///
/// Produced by [`asymptotic_covariances`]; all blocks describe
/// `√n`-scaled deviations.  The per-scale covariance process and per-scale
/// correlation variances remain available as functions
/// ([`wavelet_cov_asym_cov`], [`scale_correlation_variance`]) since they
/// are indexed by scale, not by the parameter point alone.
#[derive(Debug, Clone)]
pub struct AsymptoticCovariances {
    /// Covariance of the memory estimates, `p×p`.
    pub w_d: DMatrix<f64>,
    /// Covariance of the stacked amplitude estimates, `p²×p²` row-major.
    pub w_g: DMatrix<f64>,
    /// Joint covariance of `(d̂, vec Ĝ)`; `None` for an infinite gap
    /// budget, where the cross block is not defined.
    pub w_joint: Option<DMatrix<f64>>,
    /// Long-run correlation variances per pair; diagonal entries are zero
    /// because the diagonal correlation is identically one.
    pub r_var: DMatrix<f64>,
    /// The gap budget the aggregates were taken at.
    pub gap: ScaleGap,
    /// The weight convention used in the aggregates.
    pub convention: WeightConvention,
}

/// Assemble all covariance blocks at a plug-in parameter point, checking
/// that the memory block is positive semi-definite (within `1e−8` of its
/// largest eigenvalue).
///
/// # Errors
///
/// [`Error::NonPDMatrix`] if the memory covariance has an eigenvalue below
/// the tolerated floor; otherwise as the individual assemblies.
pub fn asymptotic_covariances(
    kernels: &dyn CouplingKernels,
    d: &[f64],
    g: &DMatrix<f64>,
    gap: ScaleGap,
    convention: WeightConvention,
) -> Result<AsymptoticCovariances> {
    let p = check_params(d, g)?;
    let w_d = d_asym_cov(kernels, d, g, gap, convention)?;
    assert_psd(&w_d, "memory-estimate covariance")?;
    let w_g = g_asym_cov(kernels, d, g, gap, convention)?;
    let w_joint = match gap {
        ScaleGap::Finite(delta) => Some(joint_dg_cov(kernels, d, g, delta, convention)?),
        ScaleGap::Infinite => None,
    };
    let r = long_run_correlations(g)?;
    let mut r_var = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            if a != b {
                r_var[(a, b)] = r_asym_var(
                    kernels,
                    d[a],
                    d[b],
                    r[(a, b)],
                    gap,
                    convention,
                    CorrelationAggregate::ScaleAverage,
                )?;
            }
        }
    }
    Ok(AsymptoticCovariances {
        w_d,
        w_g,
        w_joint,
        r_var,
        gap,
        convention,
    })
}

/// Reject covariance matrices with eigenvalues meaningfully below zero.
fn assert_psd(m: &DMatrix<f64>, context: &str) -> Result<()> {
    let eigs = m.clone().symmetric_eigenvalues();
    let min = eigs.min();
    let scale = eigs.max().max(1.0);
    if min < -SYMMETRY_TOLERANCE * scale {
        return Err(Error::NonPDMatrix {
            context: context.into(),
            sign: min,
        });
    }
    Ok(())
}

/// Standard deviation of a single memory estimate from `n` coefficients:
/// `√(π/(2·ln²2) · 𝓘(2d, 2d) / n)` with the memory aggregate `𝓘` at the
/// requested gap budget.
///
/// # Errors
///
/// [`Error::DomainError`] for `n = 0`; [`Error::NonPDMatrix`] if the
/// aggregate is negative; kernel errors pass through.
pub fn memory_estimate_sd(
    kernels: &dyn CouplingKernels,
    d: f64,
    gap: ScaleGap,
    convention: WeightConvention,
    n: usize,
) -> Result<f64> {
    check_sample_size(n)?;
    check_memory_pair(d, d)?;
    let aggregate = memory_aggregate(kernels, gap, 2.0 * d, 2.0 * d, convention)?;
    let variance = MEMORY_VARIANCE_CONSTANT * aggregate;
    nonnegative_variance(variance, "memory variance")?;
    Ok((variance / n as f64).sqrt())
}

/// Standard deviation of a long-run correlation estimate under the null
/// `r = 0`, from `n` coefficients: `√(2π · 𝓘^G(2d_a, 2d_b) / n)`.
///
/// # Errors
///
/// As for [`memory_estimate_sd`].
pub fn null_correlation_sd(
    kernels: &dyn CouplingKernels,
    d_a: f64,
    d_b: f64,
    gap: ScaleGap,
    convention: WeightConvention,
    n: usize,
) -> Result<f64> {
    check_sample_size(n)?;
    let variance = r_asym_var(
        kernels,
        d_a,
        d_b,
        0.0,
        gap,
        convention,
        CorrelationAggregate::ScaleAverage,
    )?;
    nonnegative_variance(variance, "null correlation variance")?;
    Ok((variance / n as f64).sqrt())
}

fn check_sample_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::DomainError {
            context: "coefficient count".into(),
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    Ok(())
}

/// Clamp rounding-level negative variances to zero; report anything worse.
fn nonnegative_variance(variance: f64, context: &str) -> Result<f64> {
    if variance < -1e-9 {
        return Err(Error::NonPDMatrix {
            context: context.into(),
            sign: variance,
        });
    }
    Ok(variance.max(0.0))
}

/// A two-sided interval around a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    /// The point estimate at the center.
    pub center: f64,
    /// Lower endpoint.
    pub lower: f64,
    /// Upper endpoint.
    pub upper: f64,
    /// The standard deviation the half-width is a multiple of.
    pub sd: f64,
}

impl Interval {
    fn from_center(center: f64, sd: f64, z: f64) -> Self {
        Interval {
            center,
            lower: center - z * sd,
            upper: center + z * sd,
            sd,
        }
    }

    /// Half the interval's length.
    pub fn half_width(&self) -> f64 {
        self.sd * (self.upper - self.lower) / (2.0 * self.sd.max(f64::MIN_POSITIVE))
    }
}

/// Two-sided Gaussian confidence intervals for a fitted model.
#[derive(Debug, Clone)]
pub struct ConfidenceIntervals {
    /// The nominal coverage in `(0, 1)`.
    pub level: f64,
    /// The Gaussian quantile `z_{(1+level)/2}` the half-widths use.
    pub z: f64,
    /// Intervals for the memory estimates, one per component.
    pub d: Vec<Interval>,
    /// Intervals for the amplitude entries, row-major `(a, b) ↦ a·p+b`.
    pub g: Vec<Interval>,
    /// Intervals for the long-run correlations, row-major; diagonal
    /// entries are the exact point `1`.
    pub r: Vec<Interval>,
}

/// Two-sided Gaussian confidence intervals at the given coverage level for
/// every memory, amplitude and correlation estimate in a fitted model.
///
/// Memory and amplitude intervals read the matching diagonal of the
/// `√n`-scaled covariances and divide by the coefficient count `n`;
/// correlation intervals propagate the amplitude covariance through the
/// correlation's Jacobian ([`correlation_variance_from_amplitude`]).
/// Correlation endpoints are reported as computed — they may leave
/// `[−1, 1]` near the boundary, which is informative about the Gaussian
/// approximation rather than an error.
///
/// # Errors
///
/// [`Error::DomainError`] unless `0 < level < 1` and `n ≥ 1`;
/// [`Error::NonPDMatrix`] for meaningfully negative plug-in variances;
/// [`Error::DegenerateVariance`] for non-positive amplitude diagonals.
pub fn confidence_intervals(
    result: &InferenceResult,
    n: usize,
    level: f64,
) -> Result<ConfidenceIntervals> {
    check_sample_size(n)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::DomainError {
            context: "confidence level".into(),
            value: level,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal parameters are valid");
    let z = normal.inverse_cdf(0.5 * (1.0 + level));
    let p = result.d_hat.len();
    let scale = n as f64;

    let mut d = Vec::with_capacity(p);
    for a in 0..p {
        let variance = nonnegative_variance(result.d_cov[(a, a)], "memory variance")?;
        d.push(Interval::from_center(
            result.d_hat[a],
            (variance / scale).sqrt(),
            z,
        ));
    }

    let mut g = Vec::with_capacity(p * p);
    for a in 0..p {
        for b in 0..p {
            let idx = a * p + b;
            let variance = nonnegative_variance(result.g_cov[(idx, idx)], "amplitude variance")?;
            g.push(Interval::from_center(
                result.g_hat[(a, b)],
                (variance / scale).sqrt(),
                z,
            ));
        }
    }

    let mut r = Vec::with_capacity(p * p);
    for a in 0..p {
        for b in 0..p {
            if a == b {
                r.push(Interval::from_center(1.0, 0.0, z));
                continue;
            }
            let variance = nonnegative_variance(
                correlation_variance_from_amplitude(&result.g_cov, &result.g_hat, a, b)?,
                "correlation variance",
            )?;
            r.push(Interval::from_center(
                result.r_hat[(a, b)],
                (variance / scale).sqrt(),
                z,
            ));
        }
    }

    Ok(ConfidenceIntervals { level, z, d, g, r })
}

/// Run the whole estimation chain on a set of per-scale covariances and
/// attach the plug-in limiting covariances.
///
/// Fits the memory vector from the log-regression start, profiles out the
/// amplitude, divides out the kernel normalization for `Omega`, and
/// evaluates the covariance blocks at the fitted point.  The gap budget
/// defaults to the number of scale gaps the data spans (`j1 − j0`);
/// `gap_override` substitutes a different finite budget or the infinite
/// limit, in which case the joint covariance is `None`.
///
/// # Errors
///
/// Everything the individual stages can report: optimizer failure,
/// singular or non-positive-definite matrices, kernel domain errors, the
/// cosine singularity in the `Omega` normalization.
pub fn full_inference(
    set: &ScaleCovarianceSet,
    coupling: &dyn CouplingKernels,
    modulus: &dyn ModulusKernelSource,
    convention: WeightConvention,
    gap_override: Option<ScaleGap>,
    bounds: (f64, f64),
) -> Result<InferenceResult> {
    let init = init_d_log_regression(set)?;
    let (d_hat, trace) = estimate_d(set, &init, bounds)?;
    let g = g_hat(set, &d_hat)?;
    let omega = omega_hat(&g, &d_hat, modulus)?;
    let r = long_run_correlations(&g)?;
    let gap = gap_override.unwrap_or(ScaleGap::Finite(set.j1 - set.j0));
    let covs = asymptotic_covariances(coupling, &d_hat, &g, gap, convention)?;
    let criterion_value = trace.criterion_value;
    Ok(InferenceResult {
        d_hat,
        g_hat: g,
        omega_hat: omega,
        r_hat: r,
        d_cov: covs.w_d,
        g_cov: covs.w_g,
        joint_cov: covs.w_joint,
        criterion_value,
        optimizer_trace: trace,
    })
}
