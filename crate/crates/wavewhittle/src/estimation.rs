//! Per-scale covariance summaries and the wavelet-domain memory estimator.
//!
//! The estimator works entirely from the [`ScaleCovarianceSet`]: the
//! empirical cross-covariance of the retained wavelet coefficients at each
//! scale, with the per-scale counts.  Profiling the Whittle likelihood over
//! the covariance amplitude leaves a `p`-dimensional criterion `R(d)` in
//! the memory parameters alone; its minimizer, together with the profiled
//! amplitude matrix, yields the long-run covariance and correlation
//! estimates.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::ModulusKernelSource;
use crate::optim::{minimize_simplex, SimplexOptions, SimplexOutcome};
use crate::wavelet::WaveletPyramid;

/// Default memory-parameter search box.
pub const DEFAULT_BOUNDS: (f64, f64) = (-1.0, 2.0);

/// Empirical wavelet covariances per scale, with the bookkeeping the
/// likelihood needs.
#[derive(Debug, Clone)]
pub struct ScaleCovarianceSet {
    /// Symmetric `p×p` covariance `Σ̂(j)` per scale, aligned `j0..=j1`.
    pub sigma_hat: Vec<DMatrix<f64>>,
    /// Coefficient counts `n_j`, aligned with [`ScaleCovarianceSet::sigma_hat`].
    pub counts: Vec<usize>,
    /// Finest retained scale.
    pub j0: usize,
    /// Deepest retained scale.
    pub j1: usize,
    /// Total coefficient count `n = Σ_j n_j`.
    pub n: usize,
    /// Count-weighted mean scale `⟨J⟩ = (1/n) Σ_j j·n_j`.
    pub mean_scale: f64,
}

impl ScaleCovarianceSet {
    /// Number of components.
    pub fn p(&self) -> usize {
        self.sigma_hat.first().map_or(0, DMatrix::nrows)
    }

    /// Covariance matrix at scale `j`.
    pub fn sigma(&self, j: usize) -> Result<&DMatrix<f64>> {
        if j < self.j0 || j > self.j1 {
            return Err(Error::IndexOutOfRange {
                context: "covariance scale".into(),
                index: j,
                len: self.j1 + 1,
            });
        }
        Ok(&self.sigma_hat[j - self.j0])
    }

    /// Scales as an iterator `j0..=j1`.
    pub fn scales(&self) -> impl Iterator<Item = usize> + '_ {
        self.j0..=self.j1
    }
}

/// Uncentered per-scale covariances of the pyramid's retained coefficients:
/// `σ̂_{a,b}(j) = (1/n_j) Σ_k W_{j,k}(a) W_{j,k}(b)`.
///
/// No mean is subtracted: wavelet coefficients of any constant (indeed any
/// low-order polynomial) component vanish by the vanishing moments, so the
/// raw cross-moment is already the covariance.
///
/// # Errors
///
/// [`Error::EmptyScale`] if a retained scale holds no coefficients.
pub fn scale_covariances(pyramid: &WaveletPyramid) -> Result<ScaleCovarianceSet> {
    let mut sigma_hat = Vec::with_capacity(pyramid.counts.len());
    for (offset, w) in pyramid.coefficients.iter().enumerate() {
        let n_j = pyramid.counts[offset];
        if n_j == 0 || w.nrows() == 0 {
            return Err(Error::EmptyScale {
                scale: pyramid.j0 + offset,
            });
        }
        let mut m = w.transpose() * w;
        m /= n_j as f64;
        // Symmetrize away the last-bit asymmetry of the accumulation.
        let sym = (&m + m.transpose()) * 0.5;
        sigma_hat.push(sym);
    }
    let n: usize = pyramid.counts.iter().sum();
    let mean_scale = pyramid
        .counts
        .iter()
        .enumerate()
        .map(|(offset, &n_j)| ((pyramid.j0 + offset) * n_j) as f64)
        .sum::<f64>()
        / n as f64;
    Ok(ScaleCovarianceSet {
        sigma_hat,
        counts: pyramid.counts.clone(),
        j0: pyramid.j0,
        j1: pyramid.j1,
        n,
        mean_scale,
    })
}

/// Per-scale correlation matrices
/// `ρ̂_{a,b}(j) = σ̂_{a,b}(j)/√(σ̂_{a,a}(j)·σ̂_{b,b}(j))`, aligned `j0..=j1`.
///
/// # Errors
///
/// [`Error::DegenerateVariance`] if any diagonal entry is not strictly
/// positive.
pub fn scale_correlations(set: &ScaleCovarianceSet) -> Result<Vec<DMatrix<f64>>> {
    let p = set.p();
    let mut out = Vec::with_capacity(set.sigma_hat.len());
    for (offset, sigma) in set.sigma_hat.iter().enumerate() {
        for a in 0..p {
            if sigma[(a, a)] <= 0.0 {
                return Err(Error::DegenerateVariance {
                    context: format!("scale {} correlation", set.j0 + offset),
                    component: a,
                    value: sigma[(a, a)],
                });
            }
        }
        let rho = DMatrix::from_fn(p, p, |a, b| {
            sigma[(a, b)] / (sigma[(a, a)] * sigma[(b, b)]).sqrt()
        });
        out.push(rho);
    }
    Ok(out)
}

/// The profiled covariance amplitude
/// `Ĝ_{a,b}(d) = (1/n) Σ_j n_j 2^{−j(d_a+d_b)} σ̂_{a,b}(j)`.
///
/// # Errors
///
/// [`Error::DomainError`] if `d` has the wrong length or a non-finite
/// entry.
pub fn g_hat(set: &ScaleCovarianceSet, d: &[f64]) -> Result<DMatrix<f64>> {
    scale_weighted_amplitude(set, d, false)
}

/// Shared kernel of [`g_hat`] and the analytic gradient: optionally
/// weights each scale's term by `j` (the derivative of the `2^{−j(…)}`
/// factor brings down `−j·ln 2`).
fn scale_weighted_amplitude(
    set: &ScaleCovarianceSet,
    d: &[f64],
    scale_weighted: bool,
) -> Result<DMatrix<f64>> {
    let p = set.p();
    if d.len() != p {
        return Err(Error::IndexOutOfRange {
            context: "memory parameter vector length".into(),
            index: d.len(),
            len: p,
        });
    }
    for &x in d {
        if !x.is_finite() {
            return Err(Error::DomainError {
                context: "memory parameter".into(),
                value: x,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            });
        }
    }
    let mut acc = DMatrix::zeros(p, p);
    for (offset, sigma) in set.sigma_hat.iter().enumerate() {
        let j = (set.j0 + offset) as f64;
        let weight = set.counts[offset] as f64 / set.n as f64
            * if scale_weighted { j } else { 1.0 };
        for a in 0..p {
            for b in 0..p {
                acc[(a, b)] += weight * 2f64.powf(-j * (d[a] + d[b])) * sigma[(a, b)];
            }
        }
    }
    Ok(acc)
}

/// The profile criterion
/// `R(d) = log det Ĝ(d) + 2·ln 2·⟨J⟩·Σ_ℓ d_ℓ`, minimized by the memory
/// estimate.
///
/// # Errors
///
/// [`Error::NonPDMatrix`] when `Ĝ(d)` is not positive definite (the
/// optimizer maps this to `+∞` instead of failing).
pub fn whittle_criterion_r(set: &ScaleCovarianceSet, d: &[f64]) -> Result<f64> {
    let g = g_hat(set, d)?;
    let logdet = positive_log_det(&g, "profile criterion")?;
    Ok(logdet + 2.0 * std::f64::consts::LN_2 * set.mean_scale * d.iter().sum::<f64>())
}

/// The unprofiled likelihood
/// `L(G, d) = log det G + tr(G^{−1} Ĝ(d)) + 2·ln 2·⟨J⟩·Σ_ℓ d_ℓ`.
///
/// At `G = Ĝ(d)` the trace collapses to `p`, so `L(Ĝ(d), d) = R(d) + p` —
/// the identity that justifies profiling.  Exposed for diagnostics.
///
/// # Errors
///
/// [`Error::NonPDMatrix`] when `G` is not positive definite.
pub fn whittle_likelihood(set: &ScaleCovarianceSet, g: &DMatrix<f64>, d: &[f64]) -> Result<f64> {
    let logdet = positive_log_det(g, "likelihood amplitude")?;
    let chol = nalgebra::Cholesky::new(g.clone()).ok_or(Error::NonPDMatrix {
        context: "likelihood amplitude".into(),
        sign: -1.0,
    })?;
    let g_at_d = g_hat(set, d)?;
    let trace = chol.solve(&g_at_d).trace();
    Ok(logdet + trace + 2.0 * std::f64::consts::LN_2 * set.mean_scale * d.iter().sum::<f64>())
}

/// Analytic gradient of [`whittle_criterion_r`]:
/// `∂R/∂d_a = 2·ln 2·(⟨J⟩ − (Ĝ(d)^{−1} M(d))_{a,a})` with
/// `M_{a,b}(d) = (1/n) Σ_j j·n_j 2^{−j(d_a+d_b)} σ̂_{a,b}(j)`.
///
/// The optimizer does not use it; it cross-checks the derivative-free
/// search and feeds the curvature diagnostics.
///
/// # Errors
///
/// [`Error::NonPDMatrix`] when `Ĝ(d)` is not positive definite.
pub fn criterion_gradient(set: &ScaleCovarianceSet, d: &[f64]) -> Result<Vec<f64>> {
    let g = g_hat(set, d)?;
    let chol = nalgebra::Cholesky::new(g).ok_or(Error::NonPDMatrix {
        context: "criterion gradient".into(),
        sign: -1.0,
    })?;
    let m = scale_weighted_amplitude(set, d, true)?;
    let ginv_m = chol.solve(&m);
    let ln2 = std::f64::consts::LN_2;
    Ok((0..set.p())
        .map(|a| 2.0 * ln2 * (set.mean_scale - ginv_m[(a, a)]))
        .collect())
}

/// Starting point for the search: per-component least-squares slope of
/// `log₂ σ̂_{a,a}(j)` on `j`, divided by two.
///
/// # Errors
///
/// [`Error::DomainError`] with fewer than two scales;
/// [`Error::DegenerateVariance`] if a diagonal entry is not strictly
/// positive (its logarithm would be undefined).
pub fn init_d_log_regression(set: &ScaleCovarianceSet) -> Result<Vec<f64>> {
    let scales = set.sigma_hat.len();
    if scales < 2 {
        return Err(Error::DomainError {
            context: "log-regression initializer scale count".into(),
            value: scales as f64,
            lo: 2.0,
            hi: f64::INFINITY,
        });
    }
    let p = set.p();
    let j_mean = set.scales().map(|j| j as f64).sum::<f64>() / scales as f64;
    let j_var: f64 = set
        .scales()
        .map(|j| (j as f64 - j_mean).powi(2))
        .sum::<f64>();
    let mut out = Vec::with_capacity(p);
    for a in 0..p {
        let mut cov = 0.0;
        let mut y_sum = 0.0;
        for (offset, sigma) in set.sigma_hat.iter().enumerate() {
            let v = sigma[(a, a)];
            if v <= 0.0 {
                return Err(Error::DegenerateVariance {
                    context: "log-regression initializer".into(),
                    component: a,
                    value: v,
                });
            }
            y_sum += v.log2();
            cov += (set.j0 as f64 + offset as f64 - j_mean) * v.log2();
        }
        let _ = y_sum;
        out.push(cov / j_var / 2.0);
    }
    Ok(out)
}

/// Diagnostics of one memory-parameter search.
#[derive(Debug, Clone)]
pub struct OptimizerTrace {
    /// Criterion evaluations consumed across both simplex passes.
    pub evaluations: usize,
    /// Criterion value at the minimizer.
    pub criterion_value: f64,
    /// Whether the minimizer sits within `1e−4` of the search box.
    pub boundary_hit: bool,
    /// Whether the search ever probed a point where `Ĝ(d)` was not
    /// positive definite (treated as `+∞`, not an error).
    pub non_pd_encountered: bool,
    /// Simplex milestones (one per iteration, both passes).
    pub milestones: Vec<crate::optim::SimplexMilestone>,
}

impl OptimizerTrace {
    fn from_outcome(outcome: &SimplexOutcome) -> Self {
        OptimizerTrace {
            evaluations: outcome.evaluations,
            criterion_value: outcome.value,
            boundary_hit: outcome.boundary_hit,
            non_pd_encountered: outcome.infeasible_seen,
            milestones: outcome.milestones.clone(),
        }
    }
}

/// Minimize the profile criterion over the box `bounds^p` by the
/// deterministic simplex search, restarted once.
///
/// # Errors
///
/// [`Error::DomainError`] for an invalid box or start;
/// [`Error::OptimFailed`] if the evaluation budget (`2000·p`) runs out.
pub fn estimate_d(
    set: &ScaleCovarianceSet,
    init: &[f64],
    bounds: (f64, f64),
) -> Result<(Vec<f64>, OptimizerTrace)> {
    let objective = |d: &[f64]| match whittle_criterion_r(set, d) {
        Ok(v) => v,
        Err(_) => f64::INFINITY,
    };
    let outcome = minimize_simplex(
        objective,
        init,
        bounds.0,
        bounds.1,
        &SimplexOptions::default(),
    )?;
    let trace = OptimizerTrace::from_outcome(&outcome);
    Ok((outcome.minimizer, trace))
}

/// Undo the phase and normalization factors relating the covariance
/// amplitude to the long-run covariance:
/// `Ω̂_{a,b} = Ĝ_{a,b} / (cos(π(d_a−d_b)/2) · K(d_a+d_b))`.
///
/// # Errors
///
/// * [`Error::CosineSingularity`] when `|d_a−d_b|` is so close to an odd
///   integer that the cosine factor (≤ `1e−6`) cannot be divided out;
/// * errors from the kernel source for out-of-range exponents.
pub fn omega_hat(
    g_hat_at_d: &DMatrix<f64>,
    d: &[f64],
    kernels: &dyn ModulusKernelSource,
) -> Result<DMatrix<f64>> {
    let p = g_hat_at_d.nrows();
    if d.len() != p {
        return Err(Error::IndexOutOfRange {
            context: "memory parameter vector length".into(),
            index: d.len(),
            len: p,
        });
    }
    let mut omega = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let gap = d[a] - d[b];
            let cosine = (std::f64::consts::FRAC_PI_2 * gap).cos();
            if cosine.abs() <= 1e-6 {
                return Err(Error::CosineSingularity {
                    a,
                    b,
                    gap: gap.abs(),
                    cosine,
                });
            }
            let k = kernels.kernel_value(d[a] + d[b])?;
            let value = g_hat_at_d[(a, b)] / (cosine * k);
            omega[(a, b)] = value;
            omega[(b, a)] = value;
        }
    }
    Ok(omega)
}

/// Long-run correlation matrix `r̂_{a,b} = Ĝ_{a,b}/√(Ĝ_{a,a}·Ĝ_{b,b})`.
///
/// The same definition applied to `Ω̂` gives identical off-diagonals: the
/// phase/normalization factors cancel between numerator and denominator
/// only when `d_a = d_b`, so the amplitude-based form is the primary one.
///
/// # Errors
///
/// [`Error::DegenerateVariance`] if a diagonal entry is not strictly
/// positive.
pub fn long_run_correlations(g_hat_at_d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = g_hat_at_d.nrows();
    for a in 0..p {
        if g_hat_at_d[(a, a)] <= 0.0 {
            return Err(Error::DegenerateVariance {
                context: "long-run correlation".into(),
                component: a,
                value: g_hat_at_d[(a, a)],
            });
        }
    }
    Ok(DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else {
            g_hat_at_d[(a, b)] / (g_hat_at_d[(a, a)] * g_hat_at_d[(b, b)]).sqrt()
        }
    }))
}

/// Everything one estimation run produces.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// Estimated memory parameters, one per component.
    pub d_hat: Vec<f64>,
    /// Profiled covariance amplitude `Ĝ(d̂)`.
    pub g_hat: DMatrix<f64>,
    /// Long-run covariance estimate `Ω̂`.
    pub omega_hat: DMatrix<f64>,
    /// Long-run correlation estimate with unit diagonal.
    pub r_hat: DMatrix<f64>,
    /// Asymptotic covariance of `√n·(d̂−d)`.
    pub d_cov: DMatrix<f64>,
    /// Asymptotic covariance of the stacked `√n·vec(Ĝ−G)` deviations,
    /// row-major pair order `(a,b) ↦ a·p + b`.
    pub g_cov: DMatrix<f64>,
    /// Joint asymptotic covariance of `√n·(d̂, vec Ĝ)` deviations; `None`
    /// when the scale-gap budget is infinite (the cross term is defined
    /// only for finite budgets).
    pub joint_cov: Option<DMatrix<f64>>,
    /// Criterion value at the minimizer.
    pub criterion_value: f64,
    /// Search diagnostics.
    pub optimizer_trace: OptimizerTrace,
}

/// Log-determinant of a symmetric positive definite matrix via Cholesky.
fn positive_log_det(m: &DMatrix<f64>, context: &str) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or_else(|| Error::NonPDMatrix {
        context: context.into(),
        sign: -1.0,
    })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{build_daubechies_filters, pyramid_transform, TimeSeriesPanel};
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Synthetic covariance set with `σ̂(j) = Λ_j(d) G Λ_j(d)` exactly.
    fn noise_free_set(d: &[f64], g: &DMatrix<f64>, j0: usize, j1: usize) -> ScaleCovarianceSet {
        let p = d.len();
        let counts: Vec<usize> = (j0..=j1).map(|j| 1usize << (10 - j)).collect();
        let n: usize = counts.iter().sum();
        let sigma_hat: Vec<DMatrix<f64>> = (j0..=j1)
            .map(|j| {
                DMatrix::from_fn(p, p, |a, b| {
                    g[(a, b)] * 2f64.powf(j as f64 * (d[a] + d[b]))
                })
            })
            .collect();
        let mean_scale = counts
            .iter()
            .zip(j0..=j1)
            .map(|(&c, j)| (c * j) as f64)
            .sum::<f64>()
            / n as f64;
        ScaleCovarianceSet {
            sigma_hat,
            counts,
            j0,
            j1,
            n,
            mean_scale,
        }
    }

    fn white_noise_panel(seed: u64, n_x: usize, p: usize) -> TimeSeriesPanel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let columns: Vec<Vec<f64>> = (0..p)
            .map(|_| {
                (0..n_x)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let v: f64 = rng.random();
                        (-2.0 * u.max(1e-12).ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * v).cos()
                    })
                    .collect()
            })
            .collect();
        let names = (0..p).map(|c| format!("x{c}")).collect();
        TimeSeriesPanel::from_columns(&columns, names).unwrap()
    }

    #[test]
    fn constant_coefficients_give_squared_covariance() {
        let w = DMatrix::from_element(16, 1, 0.75);
        let pyramid = WaveletPyramid {
            coefficients: vec![w],
            counts: vec![16],
            j0: 1,
            j1: 1,
            family: build_daubechies_filters(2).unwrap(),
        };
        let set = scale_covariances(&pyramid).unwrap();
        assert_abs_diff_eq!(set.sigma_hat[0][(0, 0)], 0.75 * 0.75, epsilon = 1e-15);
    }

    #[test]
    fn identical_components_have_equal_covariances_and_unit_correlation() {
        let data: Vec<f64> = (0..256).map(|k| (k as f64 * 0.37).sin()).collect();
        let panel = TimeSeriesPanel::from_columns(
            &[data.clone(), data],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 3).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        for sigma in &set.sigma_hat {
            assert_abs_diff_eq!(sigma[(0, 1)], sigma[(0, 0)], epsilon = 1e-12);
        }
        let rho = scale_correlations(&set).unwrap();
        for r in &rho {
            assert_abs_diff_eq!(r[(0, 1)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn covariances_are_symmetric_with_nonnegative_diagonal() {
        let panel = white_noise_panel(41, 1024, 3);
        let family = build_daubechies_filters(4).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        assert_eq!(set.n, pyramid.total_count());
        assert!(set.mean_scale >= set.j0 as f64 && set.mean_scale <= set.j1 as f64);
        for sigma in &set.sigma_hat {
            for a in 0..3 {
                assert!(sigma[(a, a)] >= 0.0);
                for b in 0..3 {
                    assert_abs_diff_eq!(sigma[(a, b)], sigma[(b, a)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn white_noise_covariances_are_flat_across_scales() {
        // The log₂-covariance slope over scales estimates 2d; white noise
        // has d = 0, so the initializer must be near zero.
        for seed in [11u64, 12, 13] {
            let panel = white_noise_panel(seed, 4096, 1);
            let family = build_daubechies_filters(2).unwrap();
            let pyramid = pyramid_transform(&panel, &family, 1, 5).unwrap();
            let set = scale_covariances(&pyramid).unwrap();
            let init = init_d_log_regression(&set).unwrap();
            assert!(
                init[0].abs() < 0.15,
                "white-noise initializer {} out of band",
                init[0]
            );
        }
    }

    #[test]
    fn correlations_bounded_with_degenerate_variance_rejected() {
        let panel = white_noise_panel(7, 512, 2);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 3).unwrap();
        let mut set = scale_covariances(&pyramid).unwrap();
        for rho in scale_correlations(&set).unwrap() {
            for a in 0..2 {
                for b in 0..2 {
                    assert!(rho[(a, b)].abs() <= 1.0 + 1e-12);
                }
            }
        }
        set.sigma_hat[0][(1, 1)] = 0.0;
        assert!(matches!(
            scale_correlations(&set),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn amplitude_at_zero_is_count_weighted_average() {
        let panel = white_noise_panel(3, 512, 2);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 3).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        let g0 = g_hat(&set, &[0.0, 0.0]).unwrap();
        let mut expect = DMatrix::zeros(2, 2);
        for (offset, sigma) in set.sigma_hat.iter().enumerate() {
            expect += sigma * (set.counts[offset] as f64 / set.n as f64);
        }
        assert_abs_diff_eq!((g0 - expect).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn scalar_amplitude_decreases_in_the_memory_parameter() {
        let set = noise_free_set(&[0.3], &DMatrix::from_element(1, 1, 2.0), 1, 5);
        let mut prev = f64::INFINITY;
        for step in 0..8 {
            let d = -0.5 + 0.25 * step as f64;
            let g = g_hat(&set, &[d]).unwrap()[(0, 0)];
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn amplitude_shift_matches_direct_recomputation() {
        let panel = white_noise_panel(5, 1024, 2);
        let family = build_daubechies_filters(3).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        let d = [0.2, -0.1];
        let c = 0.35;
        let shifted = g_hat(&set, &[d[0] + c, d[1] + c]).unwrap();
        // Direct recomputation with the shift folded into the weights.
        let p = set.p();
        let mut direct = DMatrix::zeros(p, p);
        for (offset, sigma) in set.sigma_hat.iter().enumerate() {
            let j = (set.j0 + offset) as f64;
            let w = set.counts[offset] as f64 / set.n as f64 * 2f64.powf(-2.0 * j * c);
            for a in 0..p {
                for b in 0..p {
                    direct[(a, b)] += w * 2f64.powf(-j * (d[a] + d[b])) * sigma[(a, b)];
                }
            }
        }
        assert_abs_diff_eq!((shifted - direct).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_criterion_reduces_to_log_plus_linear() {
        let set = noise_free_set(&[0.25], &DMatrix::from_element(1, 1, 1.7), 1, 5);
        let d = 0.1;
        let r = whittle_criterion_r(&set, &[d]).unwrap();
        let g = g_hat(&set, &[d]).unwrap()[(0, 0)];
        let expect = g.ln() + 2.0 * std::f64::consts::LN_2 * set.mean_scale * d;
        assert_abs_diff_eq!(r, expect, epsilon = 1e-12);
    }

    #[test]
    fn criterion_is_permutation_equivariant() {
        let panel = white_noise_panel(9, 1024, 3);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        let d = [0.2, -0.1, 0.4];
        let r = whittle_criterion_r(&set, &d).unwrap();

        // Permute the components of every covariance matrix and of d.
        let perm = [2usize, 0, 1];
        let mut permuted = set.clone();
        for sigma in &mut permuted.sigma_hat {
            *sigma = DMatrix::from_fn(3, 3, |a, b| sigma[(perm[a], perm[b])]);
        }
        let dp: Vec<f64> = perm.iter().map(|&i| d[i]).collect();
        let rp = whittle_criterion_r(&permuted, &dp).unwrap();
        assert_abs_diff_eq!(r, rp, epsilon = 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let panel = white_noise_panel(21, 2048, 2);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        for d in [[0.1, -0.2], [0.35, 0.05]] {
            let grad = criterion_gradient(&set, &d).unwrap();
            let h = 1e-6;
            for a in 0..2 {
                let mut up = d;
                up[a] += h;
                let mut down = d;
                down[a] -= h;
                let fd = (whittle_criterion_r(&set, &up).unwrap()
                    - whittle_criterion_r(&set, &down).unwrap())
                    / (2.0 * h);
                assert_abs_diff_eq!(grad[a], fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn likelihood_at_profiled_amplitude_exceeds_criterion_by_dimension() {
        let panel = white_noise_panel(33, 1024, 2);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        let d = [0.15, -0.05];
        let g = g_hat(&set, &d).unwrap();
        let l = whittle_likelihood(&set, &g, &d).unwrap();
        let r = whittle_criterion_r(&set, &d).unwrap();
        assert_abs_diff_eq!(l, r + 2.0, epsilon = 1e-12);
        // Any other PD amplitude does worse: profiling picks the minimum.
        let worse = whittle_likelihood(&set, &(&g * 1.5), &d).unwrap();
        assert!(worse > l);
    }

    #[test]
    fn exact_log_linear_covariances_invert_to_the_slope() {
        let d = [0.4, -0.2];
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let set = noise_free_set(&d, &g, 1, 6);
        let init = init_d_log_regression(&set).unwrap();
        assert_abs_diff_eq!(init[0], d[0], epsilon = 1e-12);
        assert_abs_diff_eq!(init[1], d[1], epsilon = 1e-12);

        // Scaling a component leaves its slope untouched.
        let mut scaled = set.clone();
        for sigma in &mut scaled.sigma_hat {
            sigma[(0, 0)] *= 100.0;
        }
        let init2 = init_d_log_regression(&scaled).unwrap();
        assert_abs_diff_eq!(init2[0], d[0], epsilon = 1e-12);
    }

    #[test]
    fn noise_free_synthetic_set_is_recovered_exactly() {
        let d = [0.3, -0.1];
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
        let set = noise_free_set(&d, &g, 1, 6);
        let init = init_d_log_regression(&set).unwrap();
        let (d_hat, trace) = estimate_d(&set, &init, DEFAULT_BOUNDS).unwrap();
        assert_abs_diff_eq!(d_hat[0], d[0], epsilon = 1e-5);
        assert_abs_diff_eq!(d_hat[1], d[1], epsilon = 1e-5);
        assert!(!trace.boundary_hit);

        let g_rec = g_hat(&set, &d_hat).unwrap();
        assert_abs_diff_eq!((g_rec - &g).norm(), 0.0, epsilon = 1e-4);
    }

    #[test]
    fn curvature_at_the_optimum_is_positive_semidefinite() {
        let d = [0.3, -0.1];
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
        let set = noise_free_set(&d, &g, 1, 6);
        let (d_hat, _) = estimate_d(&set, &[0.0, 0.0], DEFAULT_BOUNDS).unwrap();
        // Central-difference Hessian of R at the optimum.
        let h = 1e-4;
        let mut hess = DMatrix::zeros(2, 2);
        let base = whittle_criterion_r(&set, &d_hat).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let mut pp = d_hat.clone();
                pp[a] += h;
                pp[b] += h;
                let mut pm = d_hat.clone();
                pm[a] += h;
                pm[b] -= h;
                let mut mp = d_hat.clone();
                mp[a] -= h;
                mp[b] += h;
                let mut mm = d_hat.clone();
                mm[a] -= h;
                mm[b] -= h;
                hess[(a, b)] = (whittle_criterion_r(&set, &pp).unwrap()
                    - whittle_criterion_r(&set, &pm).unwrap()
                    - whittle_criterion_r(&set, &mp).unwrap()
                    + whittle_criterion_r(&set, &mm).unwrap())
                    / (4.0 * h * h);
            }
        }
        let _ = base;
        let sym = (&hess + hess.transpose()) * 0.5;
        let eigen = sym.symmetric_eigen();
        for ev in eigen.eigenvalues.iter() {
            assert!(*ev > -1e-6, "curvature eigenvalue {ev} negative");
        }
    }

    #[test]
    fn scaling_one_component_leaves_the_memory_estimate_unchanged() {
        let panel = white_noise_panel(55, 2048, 2);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        let init = init_d_log_regression(&set).unwrap();
        let (d_base, _) = estimate_d(&set, &init, DEFAULT_BOUNDS).unwrap();

        // Multiply component 0 by the constant c: σ̂ rows/cols scale, the
        // criterion shifts by a d-independent constant, d̂ is unchanged.
        let c = 7.0f64;
        let mut scaled = set.clone();
        for sigma in &mut scaled.sigma_hat {
            sigma[(0, 0)] *= c * c;
            sigma[(0, 1)] *= c;
            sigma[(1, 0)] *= c;
        }
        let init2 = init_d_log_regression(&scaled).unwrap();
        let (d_scaled, _) = estimate_d(&scaled, &init2, DEFAULT_BOUNDS).unwrap();
        assert_abs_diff_eq!(d_base[0], d_scaled[0], epsilon = 1e-4);
        assert_abs_diff_eq!(d_base[1], d_scaled[1], epsilon = 1e-4);

        let g_base = g_hat(&set, &d_base).unwrap();
        let g_scaled = g_hat(&scaled, &d_base).unwrap();
        assert_abs_diff_eq!(g_scaled[(0, 0)], c * c * g_base[(0, 0)], epsilon = 1e-10);
        assert_abs_diff_eq!(g_scaled[(0, 1)], c * g_base[(0, 1)], epsilon = 1e-10);
    }

    #[test]
    fn reversed_panel_estimates_stay_close() {
        // Time reversal conjugates the filter bank, so per-scale
        // covariances are equal only in distribution, not pathwise; the
        // estimates from a long sample still agree closely.
        let panel = white_noise_panel(77, 4096, 1);
        let family = build_daubechies_filters(2).unwrap();
        let forward = pyramid_transform(&panel, &family, 1, 5).unwrap();
        let reversed_data: Vec<f64> = panel.column(0).unwrap().into_iter().rev().collect();
        let reversed_panel =
            TimeSeriesPanel::from_columns(&[reversed_data], vec!["x0".into()]).unwrap();
        let reversed = pyramid_transform(&reversed_panel, &family, 1, 5).unwrap();

        let set_f = scale_covariances(&forward).unwrap();
        let set_r = scale_covariances(&reversed).unwrap();
        let (d_f, _) = estimate_d(&set_f, &[0.0], DEFAULT_BOUNDS).unwrap();
        let (d_r, _) = estimate_d(&set_r, &[0.0], DEFAULT_BOUNDS).unwrap();
        assert!(
            (d_f[0] - d_r[0]).abs() < 0.05,
            "forward {} vs reversed {}",
            d_f[0],
            d_r[0]
        );
    }

    #[test]
    fn amplitude_phase_inversion_and_cosine_guard() {
        struct FlatKernel;
        impl ModulusKernelSource for FlatKernel {
            fn kernel_value(&self, _delta: f64) -> crate::error::Result<f64> {
                Ok(2.0)
            }
        }
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        // Equal memory parameters: cosine factor is exactly one.
        let omega = omega_hat(&g, &[0.3, 0.3], &FlatKernel).unwrap();
        assert_abs_diff_eq!(omega[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(omega[(0, 1)], 0.25, epsilon = 1e-15);
        assert!(omega[(1, 1)] > 0.0);

        // A gap of one puts the phase factor at zero.
        assert!(matches!(
            omega_hat(&g, &[0.6, -0.4], &FlatKernel),
            Err(Error::CosineSingularity { .. })
        ));
    }

    #[test]
    fn diagonal_amplitude_gives_identity_correlations() {
        let g = DMatrix::from_row_slice(2, 2, &[1.3, 0.0, 0.0, 0.7]);
        let r = long_run_correlations(&g).unwrap();
        assert_abs_diff_eq!(r[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(1, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(0, 1)], 0.0, epsilon = 1e-15);

        let g_bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.0]);
        assert!(matches!(
            long_run_correlations(&g_bad),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn correlations_respect_cauchy_schwarz_for_psd_amplitudes() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..20 {
            let raw = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let psd = &raw * raw.transpose() + DMatrix::identity(3, 3) * 1e-6;
            let r = long_run_correlations(&psd).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    assert!(r[(a, b)].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_pd_amplitude_is_reported_not_panicked() {
        // A covariance set engineered so Ĝ(d) loses definiteness: strong
        // negative cross-covariance exceeding the diagonal.
        let mut set = noise_free_set(&[0.0, 0.0], &DMatrix::identity(2, 2), 1, 3);
        for sigma in &mut set.sigma_hat {
            sigma[(0, 1)] = -1.5;
            sigma[(1, 0)] = -1.5;
        }
        assert!(matches!(
            whittle_criterion_r(&set, &[0.0, 0.0]),
            Err(Error::NonPDMatrix { .. })
        ));
        // This set is indefinite for every d (the cross term violates
        // Cauchy–Schwarz uniformly in the scale weights), so the search
        // sees +∞ everywhere: the budget runs out and the failure is
        // reported as such instead of surfacing the matrix error.
        let err = estimate_d(&set, &[0.5, 0.5], DEFAULT_BOUNDS).unwrap_err();
        assert!(matches!(err, Error::OptimFailed { .. }));
    }

    #[test]
    fn pyramid_amplitudes_are_positive_definite_for_any_finite_d() {
        // Every per-scale covariance from data is W'W/n_j, hence PSD; the
        // amplitude is a positive combination of their diagonal
        // congruences, so the criterion is defined for all finite d.
        let panel = white_noise_panel(61, 1024, 2);
        let family = build_daubechies_filters(2).unwrap();
        let pyramid = pyramid_transform(&panel, &family, 1, 4).unwrap();
        let set = scale_covariances(&pyramid).unwrap();
        for d0 in [-0.9, 0.0, 0.7, 1.8] {
            for d1 in [-0.9, 0.0, 0.7, 1.8] {
                assert!(whittle_criterion_r(&set, &[d0, d1]).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn empty_scale_rejected() {
        let pyramid = WaveletPyramid {
            coefficients: vec![DMatrix::zeros(0, 1)],
            counts: vec![0],
            j0: 1,
            j1: 1,
            family: build_daubechies_filters(2).unwrap(),
        };
        assert!(matches!(
            scale_covariances(&pyramid),
            Err(Error::EmptyScale { scale: 1 })
        ));
    }
}
