//! Seeded synthesis of fractionally integrated panels and a parallel Monte
//! Carlo harness for the estimator's distributional claims.
//!
//! The generator realizes the linear model the estimator targets: a common
//! vector of iid unit-variance innovations is correlated across components
//! by a Cholesky factor, each component passes through a truncated
//! fractional integration filter `(1−B)^{−d}` with a warm-up burn-in, and
//! components with memory above the stationary range are integer-integrated
//! afterwards.  Innovations are drawn with covariance `2π · omega`, so the
//! long-run covariance of the synthesized panel — and hence the expected
//! value of its `Omega` estimate — is exactly the requested matrix.
//!
//! Three entry points matter:
//!
//! * [`simulate_mvlm`] turns a [`SimulationSpec`] into a
//!   [`TimeSeriesPanel`], bit-reproducibly for a fixed seed;
//! * [`simulate_arfima_exact`] draws a univariate fractional-noise sample
//!   whose finite-sample law is exact (circulant embedding of the
//!   closed-form autocovariance), kept as an independent reference
//!   distribution for the truncated filter;
//! * [`monte_carlo`] fans replicates over threads with splittable seed
//!   streams ([`replicate_seed`]), runs the full estimation chain per
//!   replicate, and aggregates empirical spread, confidence-interval
//!   coverage, and normality diagnostics against the closed-form limiting
//!   values.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::asymptotics::{
    confidence_intervals, d_asym_cov, full_inference, r_asym_var, CorrelationAggregate, ScaleGap,
};
use crate::error::{Error, Result};
use crate::estimation::{long_run_correlations, scale_covariances, DEFAULT_BOUNDS};
use crate::kernels::{CouplingKernels, ModulusKernelSource, WeightConvention};
use crate::wavelet::{build_daubechies_filters, pyramid_transform, TimeSeriesPanel, WaveletFamily};

/// Floor of the automatic MA truncation choice: even short panels keep at
/// least this much filter history so the spectral error of the truncation
/// stays far below sampling noise.
pub const DEFAULT_MA_TRUNCATION: usize = 1 << 16;

/// Ceiling on `n_x · ma_truncation` before synthesis refuses to run.
///
/// The truncated-filter generator is `O(n_x + trunc)` in memory and
/// `O((n_x + trunc) log(n_x + trunc))` in time per component, so the
/// product is a deliberately conservative proxy that catches runaway
/// configurations (gigantic panels with proportionally gigantic filters)
/// before they allocate.
pub const SIMULATION_WORK_BUDGET: u64 = 1 << 38;

/// How innovation vectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnovationKind {
    /// Standard Gaussian innovations: the limit theory's reference case.
    #[default]
    Gaussian,
    /// Centered unit-variance exponential innovations (`Exp(1) − 1`), for
    /// probing robustness of the Gaussian limit against skewed inputs.
    CenteredExponential,
}

/// Which sampling algorithm realizes the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Truncated MA(∞) filter with burn-in: works for any dimension and
    /// innovation family, with an `O(2^{−trunc·…})`-small spectral bias.
    #[default]
    TruncatedMa,
    /// Circulant embedding of the closed-form autocovariance: exact
    /// finite-sample law, but univariate, Gaussian, and pure fractional
    /// noise only.
    CirculantExact,
}

/// Full description of one synthetic panel.
///
/// `d` holds the observable memory parameters, each in `(−0.5, 1.25]`.
/// Components with `d ≥ 0.5` are synthesized as a stationary core with
/// memory `d − D` (the `differencing` entry `D`) and then integrated `D`
/// times, so `d − D` must land strictly inside `(−0.5, 0.5)`; the exact
/// half-integer boundary is rejected rather than silently shifted.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    /// Number of components.
    pub p: usize,
    /// Memory parameter per component, each in `(−0.5, 1.25]`.
    pub d: Vec<f64>,
    /// Long-run covariance of the panel (symmetric positive definite).
    pub omega: DMatrix<f64>,
    /// Integer differencing order `D ≥ 0` per component.
    pub differencing: Vec<usize>,
    /// Number of MA filter taps kept past lag zero.
    pub ma_truncation: usize,
    /// Seed of the innovation stream.
    pub seed: u64,
    /// Number of time points in the finished panel.
    pub n_x: usize,
    /// Sampling algorithm.
    pub generator: GeneratorKind,
    /// Innovation family.
    pub innovations: InnovationKind,
    /// Optional short-memory AR(1) filter coefficient `|φ| < 1`, applied to
    /// every component.  The filter multiplies the spectral density by
    /// `|1 − φe^{−iλ}|^{−2}`, so the effective long-run covariance becomes
    /// `omega / (1−φ)²`; useful for probing the estimator's short-memory
    /// bias, not for matching `omega` exactly.
    pub ar_coefficient: Option<f64>,
}

impl SimulationSpec {
    /// Spec with automatic differencing split, automatic truncation, and
    /// default generator and innovations, validated.
    ///
    /// `d` entries at or above `0.5` get one integer difference; the exact
    /// value `0.5` is rejected because its stationary core would sit on the
    /// open-interval boundary.
    ///
    /// # Errors
    ///
    /// Everything [`SimulationSpec::validate`] reports.
    pub fn new(d: Vec<f64>, omega: DMatrix<f64>, n_x: usize, seed: u64) -> Result<Self> {
        let p = d.len();
        let differencing = d
            .iter()
            .map(|&da| usize::from(da >= 0.5))
            .collect::<Vec<_>>();
        let spec = Self {
            p,
            d,
            omega,
            differencing,
            ma_truncation: Self::auto_truncation(n_x),
            seed,
            n_x,
            generator: GeneratorKind::default(),
            innovations: InnovationKind::default(),
            ar_coefficient: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default truncation for a panel of `n_x` samples:
    /// `max(`[`DEFAULT_MA_TRUNCATION`]`, 10·n_x)`.
    pub fn auto_truncation(n_x: usize) -> usize {
        DEFAULT_MA_TRUNCATION.max(n_x.saturating_mul(10))
    }

    /// The stationary core memory `d − D` per component.
    ///
    /// # Errors
    ///
    /// [`Error::DomainError`] if any core lands outside the open interval
    /// `(−0.5, 0.5)` — including exactly on its boundary.
    pub fn stationary_memory(&self) -> Result<Vec<f64>> {
        self.d
            .iter()
            .zip(&self.differencing)
            .enumerate()
            .map(|(a, (&da, &dd))| {
                let core = da - dd as f64;
                if core > -0.5 && core < 0.5 {
                    Ok(core)
                } else {
                    Err(Error::DomainError {
                        context: format!("differenced memory parameter of component {a}"),
                        value: core,
                        lo: -0.5,
                        hi: 0.5,
                    })
                }
            })
            .collect()
    }

    /// Check every structural invariant of the spec.
    ///
    /// # Errors
    ///
    /// * [`Error::IndexOutOfRange`] for mismatched field dimensions;
    /// * [`Error::DomainError`] for memory parameters outside
    ///   `(−0.5, 1.25]`, differenced cores outside `(−0.5, 0.5)`, zero
    ///   sample or tap counts, an AR coefficient with `|φ| ≥ 1`, or an
    ///   asymmetric `omega`;
    /// * [`Error::NonFiniteInput`] for NaN or infinite `omega` entries;
    /// * [`Error::NonPDMatrix`] when `omega` has no Cholesky factor;
    /// * [`Error::Unsupported`] for exact-generator requests outside its
    ///   univariate Gaussian pure-fractional scope;
    /// * [`Error::ResourceLimit`] when `n_x · ma_truncation` exceeds
    ///   [`SIMULATION_WORK_BUDGET`].
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::DomainError {
                context: "component count".into(),
                value: 0.0,
                lo: 1.0,
                hi: f64::INFINITY,
            });
        }
        if self.d.len() != self.p {
            return Err(Error::IndexOutOfRange {
                context: "memory parameter vector length".into(),
                index: self.d.len(),
                len: self.p,
            });
        }
        if self.differencing.len() != self.p {
            return Err(Error::IndexOutOfRange {
                context: "differencing vector length".into(),
                index: self.differencing.len(),
                len: self.p,
            });
        }
        if self.omega.nrows() != self.p || self.omega.ncols() != self.p {
            return Err(Error::IndexOutOfRange {
                context: "long-run covariance dimension".into(),
                index: self.omega.nrows().max(self.omega.ncols()),
                len: self.p,
            });
        }
        for (a, &da) in self.d.iter().enumerate() {
            if !(da > -0.5 && da <= 1.25) {
                return Err(Error::DomainError {
                    context: format!("memory parameter of component {a}"),
                    value: da,
                    lo: -0.5,
                    hi: 1.25,
                });
            }
        }
        self.stationary_memory()?;
        if self.n_x == 0 {
            return Err(Error::DomainError {
                context: "sample count".into(),
                value: 0.0,
                lo: 1.0,
                hi: f64::INFINITY,
            });
        }
        if let Some(phi) = self.ar_coefficient {
            if !(phi.is_finite() && phi.abs() < 1.0) {
                return Err(Error::DomainError {
                    context: "short-memory AR coefficient".into(),
                    value: phi,
                    lo: -1.0,
                    hi: 1.0,
                });
            }
        }
        self.check_omega()?;
        match self.generator {
            GeneratorKind::TruncatedMa => {
                if self.ma_truncation == 0 {
                    return Err(Error::DomainError {
                        context: "MA truncation".into(),
                        value: 0.0,
                        lo: 1.0,
                        hi: f64::INFINITY,
                    });
                }
                let work = self.n_x as u128 * self.ma_truncation as u128;
                if work > u128::from(SIMULATION_WORK_BUDGET) {
                    return Err(Error::ResourceLimit {
                        context: "panel synthesis work (samples times filter taps)".into(),
                        requested: u64::try_from(work).unwrap_or(u64::MAX),
                        budget: SIMULATION_WORK_BUDGET,
                    });
                }
            }
            GeneratorKind::CirculantExact => {
                if self.p != 1 {
                    return Err(Error::Unsupported {
                        context: format!(
                            "the exact circulant generator is univariate, got p = {}",
                            self.p
                        ),
                    });
                }
                if self.innovations != InnovationKind::Gaussian {
                    return Err(Error::Unsupported {
                        context: "the exact circulant generator draws Gaussian innovations only"
                            .into(),
                    });
                }
                if self.ar_coefficient.is_some() {
                    return Err(Error::Unsupported {
                        context: "the exact circulant generator produces pure fractional noise; \
                                  the AR(1) short-memory filter needs the truncated-MA generator"
                            .into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reject a non-finite, asymmetric, or non-positive-definite `omega`.
    fn check_omega(&self) -> Result<()> {
        let p = self.p;
        let mut top = 1.0f64;
        for a in 0..p {
            for b in 0..p {
                let v = self.omega[(a, b)];
                if !v.is_finite() {
                    return Err(Error::NonFiniteInput {
                        context: "long-run covariance".into(),
                        index: a * p + b,
                        value: v,
                    });
                }
                top = top.max(v.abs());
            }
        }
        let mut asym = 0.0f64;
        for a in 0..p {
            for b in (a + 1)..p {
                asym = asym.max((self.omega[(a, b)] - self.omega[(b, a)]).abs());
            }
        }
        let tol = 1e-10 * top;
        if asym > tol {
            return Err(Error::DomainError {
                context: "long-run covariance asymmetry".into(),
                value: asym,
                lo: 0.0,
                hi: tol,
            });
        }
        innovation_factor(&self.omega).map(drop)
    }
}

/// Coefficients of the fractional integration filter `(1−B)^{−d}`:
/// `ψ_0 = 1` and `ψ_k = ψ_{k−1}·(k−1+d)/k`, returned for lags
/// `0 ..= trunc`.
///
/// # Errors
///
/// [`Error::DomainError`] unless `|d| < 0.5` (finite) and `trunc ≥ 1`.
pub fn fractional_ma_coefficients(d: f64, trunc: usize) -> Result<Vec<f64>> {
    check_stationary_memory(d, "fractional filter memory")?;
    if trunc == 0 {
        return Err(Error::DomainError {
            context: "MA truncation".into(),
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let mut psi = Vec::with_capacity(trunc + 1);
    psi.push(1.0);
    for k in 1..=trunc {
        let k_f = k as f64;
        let prev = psi[k - 1];
        psi.push(prev * ((k_f - 1.0 + d) / k_f));
    }
    Ok(psi)
}

/// Closed-form autocovariances of unit-innovation fractional noise with
/// memory `d`, for lags `0 ..= max_lag`:
/// `γ_0 = Γ(1−2d)/Γ(1−d)²` and `γ_k = γ_{k−1}·(k−1+d)/(k−d)`.
///
/// # Errors
///
/// [`Error::DomainError`] unless `|d| < 0.5` (finite).
pub fn arfima_autocovariances(d: f64, max_lag: usize) -> Result<Vec<f64>> {
    check_stationary_memory(d, "autocovariance memory")?;
    let gamma0 = (ln_gamma(1.0 - 2.0 * d) - 2.0 * ln_gamma(1.0 - d)).exp();
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(gamma0);
    for k in 1..=max_lag {
        let k_f = k as f64;
        let prev = acf[k - 1];
        acf.push(prev * ((k_f - 1.0 + d) / (k_f - d)));
    }
    Ok(acf)
}

/// Eigenvalues of the circulant embedding of an autocovariance sequence.
///
/// `acf` holds lags `0 ..= N`; the embedded circulant has first row
/// `[γ_0, …, γ_N, γ_{N−1}, …, γ_1]` of length `2N` and its eigenvalues are
/// the real parts of that row's discrete Fourier transform.  Rounding
/// noise down to `−1e−8` (relative to the largest eigenvalue) is clamped
/// to zero; anything more negative means the sequence has no Gaussian
/// circulant extension and is rejected.
///
/// # Errors
///
/// * [`Error::DomainError`] for fewer than two lags;
/// * [`Error::NonFiniteInput`] for NaN or infinite entries;
/// * [`Error::NonPDMatrix`] for a meaningfully indefinite embedding.
pub fn circulant_eigenvalues(acf: &[f64]) -> Result<Vec<f64>> {
    if acf.len() < 2 {
        return Err(Error::DomainError {
            context: "circulant embedding lag count (need lags 0..=N with N >= 1)".into(),
            value: acf.len() as f64,
            lo: 2.0,
            hi: f64::INFINITY,
        });
    }
    for (i, &g) in acf.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteInput {
                context: "autocovariance sequence".into(),
                index: i,
                value: g,
            });
        }
    }
    let n = acf.len() - 1;
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = Vec::with_capacity(m);
    row.extend(acf.iter().map(|&g| Complex::new(g, 0.0)));
    row.extend(acf[1..n].iter().rev().map(|&g| Complex::new(g, 0.0)));
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let mut eigs: Vec<f64> = row.iter().map(|c| c.re).collect();
    let top = eigs.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    let floor = -1e-8 * top.max(1.0);
    let min = eigs.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
    if min < floor {
        return Err(Error::NonPDMatrix {
            context: "circulant embedding of the autocovariance".into(),
            sign: min,
        });
    }
    for e in eigs.iter_mut() {
        *e = e.max(0.0);
    }
    Ok(eigs)
}

/// Draw fractional noise with the exact finite-sample Gaussian law.
///
/// Embeds the closed-form autocovariance of memory-`d` fractional noise in
/// a `2·n_x` circulant, draws its spectral representation with Hermitian
/// symmetry, and returns the first `n_x` points scaled by
/// `innovation_sd`, so the sample has autocovariance
/// `innovation_sd² · γ_d(h)` exactly (up to floating-point rounding).
/// Reproducible: the same arguments always give the same sample.
///
/// # Errors
///
/// [`Error::DomainError`] unless `|d| < 0.5`, `n_x ≥ 1`, and
/// `innovation_sd` is positive and finite; [`Error::NonPDMatrix`] if the
/// embedding fails (not observed for this autocovariance family in the
/// supported memory range).
pub fn simulate_arfima_exact(
    d: f64,
    n_x: usize,
    innovation_sd: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_x == 0 {
        return Err(Error::DomainError {
            context: "sample count".into(),
            value: 0.0,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    if !(innovation_sd.is_finite() && innovation_sd > 0.0) {
        return Err(Error::DomainError {
            context: "innovation standard deviation".into(),
            value: innovation_sd,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let acf = arfima_autocovariances(d, n_x)?;
    let eigs = circulant_eigenvalues(&acf)?;
    let m = eigs.len();
    let m_f = m as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut modes = vec![Complex::new(0.0, 0.0); m];
    let g: f64 = StandardNormal.sample(&mut rng);
    modes[0] = Complex::new((eigs[0] / m_f).sqrt() * g, 0.0);
    let g: f64 = StandardNormal.sample(&mut rng);
    modes[n_x] = Complex::new((eigs[n_x] / m_f).sqrt() * g, 0.0);
    for k in 1..n_x {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let amp = (eigs[k] / (2.0 * m_f)).sqrt();
        modes[k] = Complex::new(amp * re, amp * im);
        modes[m - k] = modes[k].conj();
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut modes);
    Ok(modes[..n_x].iter().map(|c| c.re * innovation_sd).collect())
}

/// Seed of one replicate's innovation stream: the `(replicate+1)`-th
/// output of the splitmix64 generator started at `seed`.
///
/// Deriving every replicate seed by direct evaluation (rather than by
/// iterating a shared generator) makes parallel and serial Monte Carlo
/// runs draw identical streams in any execution order.
pub fn replicate_seed(seed: u64, replicate: u64) -> u64 {
    let mut z = seed.wrapping_add(replicate.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthesize a panel from a validated spec.
///
/// The truncated-MA path draws `n_x + ma_truncation` correlated innovation
/// vectors (Cholesky factor of `2π·omega`), filters each component with
/// its fractional MA coefficients by FFT convolution, applies the optional
/// AR(1) recursion, discards the `ma_truncation`-sample burn-in, and
/// finally integrates components with nonzero differencing order.  The
/// exact circulant path substitutes the closed-form univariate sampler for
/// the core.  Identical specs (seed included) give bit-identical panels.
///
/// # Errors
///
/// Everything [`SimulationSpec::validate`] reports, plus
/// [`Error::DomainError`] when the truncated-MA generator is asked to run
/// with `ma_truncation < 10·n_x` (too little burn-in to hide the missing
/// filter tail).
pub fn simulate_mvlm(spec: &SimulationSpec) -> Result<TimeSeriesPanel> {
    spec.validate()?;
    let core_d = spec.stationary_memory()?;
    let columns = match spec.generator {
        GeneratorKind::TruncatedMa => simulate_truncated_ma(spec, &core_d)?,
        GeneratorKind::CirculantExact => {
            let sd = (TAU * spec.omega[(0, 0)]).sqrt();
            vec![simulate_arfima_exact(core_d[0], spec.n_x, sd, spec.seed)?]
        }
    };
    let columns = integrate_differenced(columns, &spec.differencing);
    let names = (1..=spec.p).map(|a| format!("x{a}")).collect();
    TimeSeriesPanel::from_columns(&columns, names)
}

/// Truncated-MA synthesis of the stationary cores, one column per
/// component, burn-in already discarded.
fn simulate_truncated_ma(spec: &SimulationSpec, core_d: &[f64]) -> Result<Vec<Vec<f64>>> {
    let floor = spec.n_x.saturating_mul(10);
    if spec.ma_truncation < floor {
        return Err(Error::DomainError {
            context: "MA truncation (at least ten times the sample count)".into(),
            value: spec.ma_truncation as f64,
            lo: floor as f64,
            hi: f64::INFINITY,
        });
    }
    let p = spec.p;
    let trunc = spec.ma_truncation;
    let total = spec.n_x + trunc;
    let factor = innovation_factor(&spec.omega)?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    // Innovations are drawn time-major (one full vector per time point), so
    // the stream layout is a property of the spec alone, not of how the
    // filtering below happens to traverse components.
    let mut eta: Vec<Vec<f64>> = vec![vec![0.0; total]; p];
    let mut eps = vec![0.0f64; p];
    for t in 0..total {
        for e in eps.iter_mut() {
            *e = match spec.innovations {
                InnovationKind::Gaussian => StandardNormal.sample(&mut rng),
                InnovationKind::CenteredExponential => {
                    let draw: f64 = Exp1.sample(&mut rng);
                    draw - 1.0
                }
            };
        }
        for a in 0..p {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += factor[(a, b)] * eps[b];
            }
            eta[a][t] = acc;
        }
    }
    let mut planner = FftPlanner::new();
    let mut columns = Vec::with_capacity(p);
    for (stream, &core) in eta.iter().zip(core_d) {
        let taps = fractional_ma_coefficients(core, trunc)?;
        let mut filtered = circular_filter(&mut planner, stream, &taps);
        if let Some(phi) = spec.ar_coefficient {
            for t in 1..filtered.len() {
                filtered[t] += phi * filtered[t - 1];
            }
        }
        columns.push(filtered[trunc..].to_vec());
    }
    Ok(columns)
}

/// Lower Cholesky factor of `2π · omega`, the innovation covariance that
/// makes `omega` the panel's long-run covariance.
fn innovation_factor(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match omega.scale(TAU).cholesky() {
        Some(chol) => Ok(chol.l()),
        None => {
            let min = omega
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .fold(f64::INFINITY, |acc, &v| acc.min(v));
            Err(Error::NonPDMatrix {
                context: "long-run covariance".into(),
                sign: min,
            })
        }
    }
}

/// Prefix of the linear convolution `signal ∗ taps` via padded circular
/// FFT convolution.
///
/// Positions `taps.len()−1 ..` of the result equal the full-history filter
/// output exactly; earlier positions carry wrapped or partial history and
/// must fall inside the caller's burn-in.
fn circular_filter(planner: &mut FftPlanner<f64>, signal: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let len = n.next_power_of_two();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);
    let mut sig: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    sig.resize(len, Complex::new(0.0, 0.0));
    let mut tap: Vec<Complex<f64>> = taps.iter().map(|&x| Complex::new(x, 0.0)).collect();
    tap.resize(len, Complex::new(0.0, 0.0));
    fft.process(&mut sig);
    fft.process(&mut tap);
    for (s, t) in sig.iter_mut().zip(&tap) {
        *s *= *t;
    }
    ifft.process(&mut sig);
    let scale = 1.0 / len as f64;
    sig.truncate(n);
    sig.iter().map(|c| c.re * scale).collect()
}

/// Integrate each column `D` times (running sums started at the first
/// sample), realizing memory `d = core + D`.
fn integrate_differenced(mut columns: Vec<Vec<f64>>, differencing: &[usize]) -> Vec<Vec<f64>> {
    for (col, &dd) in columns.iter_mut().zip(differencing) {
        for _ in 0..dd {
            let mut acc = 0.0;
            for v in col.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
    }
    columns
}

/// The covariance amplitude implied by a long-run covariance and memory
/// vector: `G_{a,b} = omega_{a,b} · K(d_a+d_b) · cos(π(d_a−d_b)/2)`.
///
/// This is the forward map whose inverse the estimation stage applies when
/// it converts the fitted amplitude into an `Omega` estimate, so Monte
/// Carlo truth values and estimates live on the same scale.
///
/// # Errors
///
/// [`Error::IndexOutOfRange`] for mismatched dimensions; kernel-source
/// errors for exponents outside a table's range.
pub fn long_run_amplitude(
    omega: &DMatrix<f64>,
    d: &[f64],
    kernels: &dyn ModulusKernelSource,
) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    if omega.ncols() != p {
        return Err(Error::IndexOutOfRange {
            context: "long-run covariance shape".into(),
            index: omega.ncols(),
            len: p,
        });
    }
    if d.len() != p {
        return Err(Error::IndexOutOfRange {
            context: "memory parameter vector length".into(),
            index: d.len(),
            len: p,
        });
    }
    let mut g = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let k = kernels.kernel_value(d[a] + d[b])?;
            let phase = (FRAC_PI_2 * (d[a] - d[b])).cos();
            let value = omega[(a, b)] * k * phase;
            g[(a, b)] = value;
            g[(b, a)] = value;
        }
    }
    Ok(g)
}

/// How each Monte Carlo replicate is estimated.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    /// Daubechies vanishing moments of the analysis filters.
    pub vanishing_moments: usize,
    /// Finest analysis scale.
    pub j0: usize,
    /// Deepest analysis scale.
    pub j1: usize,
    /// Weight convention of the scale-aggregated kernels.
    pub convention: WeightConvention,
    /// Scale-gap budget override; `None` uses the data span `j1 − j0`.
    pub gap: Option<ScaleGap>,
    /// Aggregate form of the correlation variance.
    pub aggregate: CorrelationAggregate,
    /// Level of the per-replicate confidence intervals.
    pub ci_level: f64,
    /// Box constraints of the memory optimizer.
    pub bounds: (f64, f64),
}

impl EstimationConfig {
    /// Config with default convention, data-span gap, scale-average
    /// correlation aggregate, 95% intervals, and default optimizer bounds.
    pub fn new(vanishing_moments: usize, j0: usize, j1: usize) -> Self {
        Self {
            vanishing_moments,
            j0,
            j1,
            convention: WeightConvention::default(),
            gap: None,
            aggregate: CorrelationAggregate::default(),
            ci_level: 0.95,
            bounds: DEFAULT_BOUNDS,
        }
    }
}

/// Monte Carlo diagnostics for one scalar parameter.
///
/// Spread fields live on the `√n` scale (`n` = total wavelet coefficient
/// count), matching the limit statement for `√n(θ̂ − θ)`: `empirical_sd`
/// is the across-replicate standard deviation of `√n·θ̂` and
/// `theoretical_sd` the closed-form limiting standard deviation.
/// Normality statistics describe `√n(θ̂ − θ⁰)/theoretical_sd`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParameterSummary {
    /// Parameter label (`"d[a]"` or `"r[a,b]"`, zero-based).
    pub name: String,
    /// Value the panels were synthesized with.
    pub true_value: f64,
    /// Across-replicate mean of the estimates.
    pub mean_estimate: f64,
    /// Across-replicate standard deviation of `√n·θ̂`.
    pub empirical_sd: f64,
    /// Limiting standard deviation of `√n(θ̂−θ⁰)` at the true parameters.
    pub theoretical_sd: f64,
    /// Fraction of replicates whose confidence interval covered the truth.
    pub coverage: f64,
    /// Sample skewness of the estimates.
    pub skewness: f64,
    /// Sample excess kurtosis of the estimates.
    pub excess_kurtosis: f64,
    /// Kolmogorov–Smirnov distance of the standardized estimates from the
    /// standard Gaussian.
    pub ks_distance: f64,
}

/// Aggregated outcome of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MonteCarloSummary {
    /// Replicates that completed and entered the aggregates.
    pub replicates: usize,
    /// Replicates that failed (tolerated below a 5% fraction).
    pub failures: usize,
    /// Total wavelet coefficient count per replicate (the `n` of the
    /// `√n` scaling).
    pub n_coefficients: usize,
    /// Per-component memory parameter diagnostics.
    pub memory: Vec<ParameterSummary>,
    /// Long-run correlation diagnostics, upper off-diagonal pairs in
    /// lexicographic order.
    pub correlations: Vec<ParameterSummary>,
}

/// One completed replicate's contribution.
struct Replicate {
    n_coefficients: usize,
    d_hat: Vec<f64>,
    r_hat: Vec<f64>,
    d_covered: Vec<bool>,
    r_covered: Vec<bool>,
}

/// Run the full synthesize–transform–estimate chain over independent
/// replicates and compare the spread of the estimates with the
/// closed-form limit.
///
/// Replicate `i` draws its innovations from the stream seeded by
/// [`replicate_seed`]`(spec.seed, i)`, so the summary does not depend on
/// scheduling; replicates run in parallel.  Individual replicate failures
/// are tolerated up to 5% of the requested count and reported in the
/// summary.  Coverage uses each replicate's own plug-in confidence
/// intervals at `config.ci_level`; normality statistics standardize by the
/// limiting standard deviation evaluated at the true parameters.
///
/// # Errors
///
/// * [`Error::DomainError`] for `replicates < 50` (below that the
///   normality diagnostics are vacuous) or a config with `j1 ≤ j0`;
/// * [`Error::ConvergenceError`] when more than 5% of replicates fail
///   (the message carries the count and the first failure);
/// * spec validation errors, and kernel errors from evaluating the
///   limiting covariances at the true parameters.
pub fn monte_carlo(
    spec: &SimulationSpec,
    replicates: usize,
    config: &EstimationConfig,
    coupling: &dyn CouplingKernels,
    modulus: &dyn ModulusKernelSource,
) -> Result<MonteCarloSummary> {
    spec.validate()?;
    if replicates < 50 {
        return Err(Error::DomainError {
            context: "replicate count (normality statistics need at least 50)".into(),
            value: replicates as f64,
            lo: 50.0,
            hi: f64::INFINITY,
        });
    }
    if config.j1 <= config.j0 {
        return Err(Error::DomainError {
            context: "analysis scale range (j1 must exceed j0)".into(),
            value: config.j1 as f64,
            lo: config.j0 as f64 + 1.0,
            hi: f64::INFINITY,
        });
    }
    let family = build_daubechies_filters(config.vanishing_moments)?;
    let gap = config
        .gap
        .unwrap_or(ScaleGap::Finite(config.j1 - config.j0));
    let p = spec.p;
    let g_true = long_run_amplitude(&spec.omega, &spec.d, modulus)?;
    let r_true = long_run_correlations(&g_true)?;
    let d_cov = d_asym_cov(coupling, &spec.d, &g_true, gap, config.convention)?;
    let d_theory_sd: Vec<f64> = (0..p).map(|a| d_cov[(a, a)].max(0.0).sqrt()).collect();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|a| ((a + 1)..p).map(move |b| (a, b)))
        .collect();
    let mut r_theory_sd = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        let var = r_asym_var(
            coupling,
            spec.d[a],
            spec.d[b],
            r_true[(a, b)],
            gap,
            config.convention,
            config.aggregate,
        )?;
        r_theory_sd.push(var.max(0.0).sqrt());
    }

    let outcomes: Vec<Result<Replicate>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rep_spec = spec.clone();
            rep_spec.seed = replicate_seed(spec.seed, rep as u64);
            run_replicate(&rep_spec, config, &family, coupling, modulus, &r_true, &pairs)
        })
        .collect();

    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if 20 * failures > replicates {
        let first = outcomes
            .iter()
            .find_map(|o| o.as_ref().err())
            .expect("failure count is positive");
        return Err(Error::ConvergenceError {
            context: format!(
                "monte carlo run: {failures} of {replicates} replicates failed; \
                 first failure: {first}"
            ),
            achieved: failures as f64 / replicates as f64,
            tolerance: 0.05,
        });
    }
    let done: Vec<&Replicate> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let n = done.first().map_or(0, |r| r.n_coefficients);
    debug_assert!(
        done.iter().all(|r| r.n_coefficients == n),
        "coefficient count is a function of (n_x, j0, j1) alone"
    );
    let sqrt_n = (n as f64).sqrt();

    let mut memory = Vec::with_capacity(p);
    for a in 0..p {
        let estimates: Vec<f64> = done.iter().map(|r| r.d_hat[a]).collect();
        let covered = done.iter().filter(|r| r.d_covered[a]).count();
        memory.push(summarize_parameter(
            format!("d[{a}]"),
            spec.d[a],
            d_theory_sd[a],
            &estimates,
            covered,
            sqrt_n,
        ));
    }
    let mut correlations = Vec::with_capacity(pairs.len());
    for (idx, &(a, b)) in pairs.iter().enumerate() {
        let estimates: Vec<f64> = done.iter().map(|r| r.r_hat[idx]).collect();
        let covered = done.iter().filter(|r| r.r_covered[idx]).count();
        correlations.push(summarize_parameter(
            format!("r[{a},{b}]"),
            r_true[(a, b)],
            r_theory_sd[idx],
            &estimates,
            covered,
            sqrt_n,
        ));
    }
    Ok(MonteCarloSummary {
        replicates: done.len(),
        failures,
        n_coefficients: n,
        memory,
        correlations,
    })
}

/// Simulate, transform, estimate, and score one replicate.
fn run_replicate(
    spec: &SimulationSpec,
    config: &EstimationConfig,
    family: &WaveletFamily,
    coupling: &dyn CouplingKernels,
    modulus: &dyn ModulusKernelSource,
    r_true: &DMatrix<f64>,
    pairs: &[(usize, usize)],
) -> Result<Replicate> {
    let panel = simulate_mvlm(spec)?;
    let pyramid = pyramid_transform(&panel, family, config.j0, config.j1)?;
    let set = scale_covariances(&pyramid)?;
    let result = full_inference(
        &set,
        coupling,
        modulus,
        config.convention,
        config.gap,
        config.bounds,
    )?;
    let cis = confidence_intervals(&result, set.n, config.ci_level)?;
    let p = spec.p;
    let d_covered = (0..p)
        .map(|a| cis.d[a].lower <= spec.d[a] && spec.d[a] <= cis.d[a].upper)
        .collect();
    let r_hat = pairs.iter().map(|&(a, b)| result.r_hat[(a, b)]).collect();
    let r_covered = pairs
        .iter()
        .map(|&(a, b)| {
            let interval = &cis.r[a * p + b];
            interval.lower <= r_true[(a, b)] && r_true[(a, b)] <= interval.upper
        })
        .collect();
    Ok(Replicate {
        n_coefficients: set.n,
        d_hat: result.d_hat,
        r_hat,
        d_covered,
        r_covered,
    })
}

/// Fold one parameter's replicate estimates into a [`ParameterSummary`].
fn summarize_parameter(
    name: String,
    truth: f64,
    theory_sd: f64,
    estimates: &[f64],
    covered: usize,
    sqrt_n: f64,
) -> ParameterSummary {
    let reps = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / reps;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &v in estimates {
        let c = v - mean;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    m2 /= reps;
    m3 /= reps;
    m4 /= reps;
    let sd = (m2 * reps / (reps - 1.0)).sqrt();
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let ks_distance = if theory_sd > 0.0 {
        ks_distance_standard_normal(
            estimates
                .iter()
                .map(|&v| sqrt_n * (v - truth) / theory_sd)
                .collect(),
        )
    } else {
        f64::NAN
    };
    ParameterSummary {
        name,
        true_value: truth,
        mean_estimate: mean,
        empirical_sd: sqrt_n * sd,
        theoretical_sd: theory_sd,
        coverage: covered as f64 / reps,
        skewness,
        excess_kurtosis,
        ks_distance,
    }
}

/// Kolmogorov–Smirnov distance of a sample from the standard Gaussian.
fn ks_distance_standard_normal(mut z: Vec<f64>) -> f64 {
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("unit normal parameters are valid");
    let mut upper = f64::NEG_INFINITY;
    let mut lower = f64::NEG_INFINITY;
    for (i, &zi) in z.iter().enumerate() {
        let cdf = normal.cdf(zi);
        upper = upper.max((i as f64 + 1.0) / n - cdf);
        lower = lower.max(cdf - i as f64 / n);
    }
    upper.max(lower).max(0.0)
}

/// Shared domain guard for stationary memory parameters.
fn check_stationary_memory(d: f64, context: &str) -> Result<()> {
    if d.is_finite() && d.abs() < 0.5 {
        Ok(())
    } else {
        Err(Error::DomainError {
            context: context.into(),
            value: d,
            lo: -0.5,
            hi: 0.5,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::omega_hat;
    use crate::kernels::test_support::shared_engine_m4;
    use crate::kernels::{KernelMode, ModeBound};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use statrs::function::gamma::gamma;
    use std::collections::HashSet;

    fn exact_kernels() -> ModeBound<'static> {
        ModeBound {
            engine: shared_engine_m4(),
            mode: KernelMode::Exact,
        }
    }

    /// Lag-`0..=8` autocovariances of memory-0.3 fractional noise, from the
    /// gamma closed form evaluated independently of this crate.
    const ACF_D03: [f64; 9] = [
        1.3164560621300048,
        0.5641954551985735,
        0.43144358338714445,
        0.36752601547793778,
        0.32779347326410663,
        0.2998961563905656,
        0.27885081208245571,
        0.26220300240589117,
        0.24858206721597473,
    ];

    /// First nine circulant eigenvalues of the `N = 8` embedding of
    /// [`ACF_D03`]; the remaining seven mirror indices `7..=1`.
    const EIGS_D03: [f64; 9] = [
        6.6288551257593298,
        1.8934437070411434,
        1.1342776022012631,
        0.9582465597860641,
        0.80003628493499246,
        0.74590389664362244,
        0.68462476343426926,
        0.67390181618529088,
        0.65357260786745686,
    ];

    fn closed_form_variance(d: f64) -> f64 {
        (ln_gamma(1.0 - 2.0 * d) - 2.0 * ln_gamma(1.0 - d)).exp()
    }

    fn white_spec(n_x: usize, seed: u64) -> SimulationSpec {
        let mut spec =
            SimulationSpec::new(vec![0.0], DMatrix::identity(1, 1), n_x, seed).unwrap();
        spec.ma_truncation = 10 * n_x;
        spec
    }

    fn uncentered_autocorr(x: &[f64], lag: usize) -> f64 {
        let denom: f64 = x.iter().map(|v| v * v).sum();
        let num: f64 = x[..x.len() - lag]
            .iter()
            .zip(&x[lag..])
            .map(|(a, b)| a * b)
            .sum();
        num / denom
    }

    #[test]
    fn ma_coefficients_follow_the_recursion() {
        let zero = fractional_ma_coefficients(0.0, 6).unwrap();
        assert_eq!(zero[0], 1.0);
        assert!(zero[1..].iter().all(|&v| v == 0.0));
        assert_eq!(zero.len(), 7);

        let psi = fractional_ma_coefficients(0.4, 10).unwrap();
        assert_abs_diff_eq!(psi[1], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(psi[2], 0.28, epsilon = 1e-15);
        assert_eq!(psi.len(), 11);

        // Negative memory: every tap past lag zero is negative and the
        // magnitudes shrink monotonically (the recursion ratio stays in
        // (0, 1) from lag two on).
        let neg = fractional_ma_coefficients(-0.3, 50).unwrap();
        assert_eq!(neg[0], 1.0);
        assert!(neg[1..].iter().all(|&v| v < 0.0));
        for k in 2..neg.len() {
            assert!(neg[k].abs() <= neg[k - 1].abs());
        }
    }

    #[test]
    fn ma_energy_follows_the_closed_form() {
        let energy = |d: f64, trunc: usize| -> f64 {
            fractional_ma_coefficients(d, trunc)
                .unwrap()
                .iter()
                .map(|&v| v * v)
                .sum()
        };
        // Squared taps sum to the lag-0 autocovariance.  At d = 0.25 the
        // k^{2d−2} tail decays fast enough for 10^5 taps to land within
        // 1e−3 of the limit…
        let d = 0.25;
        assert_abs_diff_eq!(energy(d, 100_000), closed_form_variance(d), epsilon = 1e-3);
        // …while at d = 0.4 the same tap count still misses the limit by
        // ~0.1: the omitted tail is Σ_{k>K} k^{2d−2}/Γ(d)², i.e.
        // K^{2d−1}/((1−2d)Γ(d)²) to first order, and no feasible truncation
        // closes a K^{−0.2} gap.  Pin the deficit against that law instead.
        let d = 0.4;
        let trunc = 100_000;
        let deficit = closed_form_variance(d) - energy(d, trunc);
        let tail = (trunc as f64).powf(2.0 * d - 1.0) / ((1.0 - 2.0 * d) * gamma(d).powi(2));
        assert_relative_eq!(deficit, tail, max_relative = 1e-2);
    }

    #[test]
    fn ma_rejects_nonstationary_memory() {
        assert!(matches!(
            fractional_ma_coefficients(0.5, 10),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            fractional_ma_coefficients(-0.5, 10),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            fractional_ma_coefficients(f64::NAN, 10),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            fractional_ma_coefficients(0.2, 0),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn autocovariances_pin_the_closed_form() {
        let acf = arfima_autocovariances(0.3, 8).unwrap();
        for (got, want) in acf.iter().zip(ACF_D03) {
            assert_relative_eq!(got, &want, max_relative = 1e-12);
        }
        let white = arfima_autocovariances(0.0, 4).unwrap();
        assert_eq!(white[0], 1.0);
        assert!(white[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn autocovariance_agrees_with_tap_convolution() {
        // γ_h = Σ_k ψ_k ψ_{k+h}; at d = 0.2 twenty thousand taps put the
        // omitted tail near 2e−4, inside the 1e−3 budget.
        let d = 0.2;
        let taps = fractional_ma_coefficients(d, 20_000).unwrap();
        let acf = arfima_autocovariances(d, 3).unwrap();
        for (h, &gamma_h) in acf.iter().enumerate() {
            let conv: f64 = taps[..taps.len() - h]
                .iter()
                .zip(&taps[h..])
                .map(|(a, b)| a * b)
                .sum();
            assert_abs_diff_eq!(conv, gamma_h, epsilon = 1e-3);
        }
    }

    #[test]
    fn circulant_eigenvalues_match_the_transform() {
        let eigs = circulant_eigenvalues(&arfima_autocovariances(0.3, 8).unwrap()).unwrap();
        assert_eq!(eigs.len(), 16);
        let mut expected = EIGS_D03.to_vec();
        expected.extend(EIGS_D03[1..8].iter().rev());
        for (got, want) in eigs.iter().zip(expected) {
            assert_relative_eq!(got, &want, max_relative = 1e-12);
        }
        assert!(eigs.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn circulant_rejects_bad_sequences() {
        assert!(matches!(
            circulant_eigenvalues(&[1.0, 0.9, -0.5]),
            Err(Error::NonPDMatrix { .. })
        ));
        assert!(matches!(
            circulant_eigenvalues(&[1.0]),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            circulant_eigenvalues(&[1.0, f64::NAN, 0.2]),
            Err(Error::NonFiniteInput { .. })
        ));
    }

    #[test]
    fn exact_sampler_reproduces_and_scales() {
        let a = simulate_arfima_exact(0.3, 256, 1.0, 77).unwrap();
        let b = simulate_arfima_exact(0.3, 256, 1.0, 77).unwrap();
        assert_eq!(a.len(), 256);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // Doubling the innovation scale doubles every sample exactly.
        let c = simulate_arfima_exact(0.3, 256, 2.0, 77).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!((2.0 * x).to_bits(), y.to_bits());
        }
        // The mean square over independent seeds approaches the lag-0
        // autocovariance.
        let mut acc = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let x = simulate_arfima_exact(0.3, 2048, 1.0, seed).unwrap();
            acc += x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        }
        assert_abs_diff_eq!(acc / seeds as f64, closed_form_variance(0.3), epsilon = 0.06);
    }

    #[test]
    fn exact_sampler_rejects_bad_arguments() {
        assert!(simulate_arfima_exact(0.7, 64, 1.0, 0).is_err());
        assert!(simulate_arfima_exact(0.3, 0, 1.0, 0).is_err());
        assert!(simulate_arfima_exact(0.3, 64, 0.0, 0).is_err());
        assert!(simulate_arfima_exact(0.3, 64, f64::NAN, 0).is_err());
    }

    #[test]
    fn replicate_seed_matches_the_reference_stream() {
        // First output of the reference splitmix64 stream seeded at zero.
        assert_eq!(replicate_seed(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(replicate_seed(42, 0), 0xBDD7_3226_2FEB_6E95);
        assert_eq!(replicate_seed(42, 1), 0x28EF_E333_B266_F103);
        assert_eq!(replicate_seed(43, 0), 0xBA69_EC90_EB4F_EF88);
        let distinct: HashSet<u64> = (0..100).map(|r| replicate_seed(7, r)).collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn spec_constructor_splits_differencing() {
        let spec = SimulationSpec::new(vec![0.3], DMatrix::identity(1, 1), 256, 9).unwrap();
        assert_eq!(spec.differencing, vec![0]);
        assert_eq!(spec.ma_truncation, DEFAULT_MA_TRUNCATION);

        let spec = SimulationSpec::new(
            vec![0.9, 1.25, -0.2],
            DMatrix::identity(3, 3),
            256,
            9,
        )
        .unwrap();
        assert_eq!(spec.differencing, vec![1, 1, 0]);
        let core = spec.stationary_memory().unwrap();
        assert_abs_diff_eq!(core[0], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(core[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(core[2], -0.2, epsilon = 1e-15);

        // d = 0.5 exactly has no valid split: one difference lands on the
        // open boundary −0.5.
        assert!(matches!(
            SimulationSpec::new(vec![0.5], DMatrix::identity(1, 1), 256, 9),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            SimulationSpec::new(vec![1.3], DMatrix::identity(1, 1), 256, 9),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn spec_validation_rejects_malformed_input() {
        let base = SimulationSpec::new(
            vec![0.2, 0.2],
            DMatrix::identity(2, 2),
            128,
            1,
        )
        .unwrap();

        let mut bad = base.clone();
        bad.d = vec![0.2];
        assert!(matches!(bad.validate(), Err(Error::IndexOutOfRange { .. })));

        let mut bad = base.clone();
        bad.omega = DMatrix::identity(3, 3);
        assert!(matches!(bad.validate(), Err(Error::IndexOutOfRange { .. })));

        let mut bad = base.clone();
        bad.omega[(0, 1)] = 0.3;
        assert!(matches!(bad.validate(), Err(Error::DomainError { .. })));

        let mut bad = base.clone();
        bad.omega[(0, 1)] = 2.0;
        bad.omega[(1, 0)] = 2.0;
        assert!(matches!(bad.validate(), Err(Error::NonPDMatrix { .. })));

        let mut bad = base.clone();
        bad.omega[(0, 0)] = f64::NAN;
        assert!(matches!(bad.validate(), Err(Error::NonFiniteInput { .. })));

        let mut bad = base.clone();
        bad.ar_coefficient = Some(1.0);
        assert!(matches!(bad.validate(), Err(Error::DomainError { .. })));
        bad.ar_coefficient = Some(0.5);
        bad.validate().unwrap();

        let mut bad = base.clone();
        bad.n_x = 0;
        assert!(matches!(bad.validate(), Err(Error::DomainError { .. })));

        let mut bad = base.clone();
        bad.n_x = 1 << 20;
        bad.ma_truncation = 10 << 20;
        assert!(matches!(bad.validate(), Err(Error::ResourceLimit { .. })));

        let mut bad = base.clone();
        bad.generator = GeneratorKind::CirculantExact;
        assert!(matches!(bad.validate(), Err(Error::Unsupported { .. })));

        let mut bad = base;
        bad.p = 1;
        bad.d = vec![0.2];
        bad.differencing = vec![0];
        bad.omega = DMatrix::identity(1, 1);
        bad.generator = GeneratorKind::CirculantExact;
        bad.innovations = InnovationKind::CenteredExponential;
        assert!(matches!(bad.validate(), Err(Error::Unsupported { .. })));
        bad.innovations = InnovationKind::Gaussian;
        bad.ar_coefficient = Some(0.3);
        assert!(matches!(bad.validate(), Err(Error::Unsupported { .. })));
        bad.ar_coefficient = None;
        bad.validate().unwrap();
    }

    #[test]
    fn simulate_is_bitwise_deterministic() {
        let mut spec = SimulationSpec::new(
            vec![0.2, 0.4],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]),
            128,
            2024,
        )
        .unwrap();
        spec.ma_truncation = 1280;
        let a = simulate_mvlm(&spec).unwrap();
        let b = simulate_mvlm(&spec).unwrap();
        assert_eq!(a.n_x(), 128);
        assert_eq!(a.p(), 2);
        assert_eq!(a.component_names(), ["x1", "x2"]);
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let mut other = spec.clone();
        other.seed = 2025;
        let c = simulate_mvlm(&other).unwrap();
        assert!(a.values().iter().zip(c.values().iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn truncation_floor_is_enforced() {
        let mut spec = white_spec(1024, 5);
        spec.ma_truncation = 1024;
        assert!(matches!(
            simulate_mvlm(&spec),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn white_noise_matches_the_long_run_scale() {
        // d = 0, omega = 2.5 I: the panel is white with variance 2π·2.5.
        let mut acc = 0.0;
        let seeds = 10;
        for seed in 0..seeds {
            let mut spec = SimulationSpec::new(
                vec![0.0],
                DMatrix::from_element(1, 1, 2.5),
                4096,
                seed,
            )
            .unwrap();
            spec.ma_truncation = 40_960;
            let panel = simulate_mvlm(&spec).unwrap();
            let x = panel.column(0).unwrap();
            acc += x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        }
        let target = TAU * 2.5;
        assert_abs_diff_eq!(acc / seeds as f64, target, epsilon = 0.05 * target);
    }

    #[test]
    fn white_noise_lag_one_autocorrelation_is_small() {
        // For an iid panel the lag-1 autocorrelation is roughly Gaussian
        // with standard deviation N^{−1/2}; a |r| > 3/√N excursion has
        // probability ~0.3%, so 200 seeds should produce at most a few.
        let n = 1024;
        let bound = 3.0 / (n as f64).sqrt();
        let mut exceed = 0;
        for seed in 0..200 {
            let panel = simulate_mvlm(&white_spec(n, seed)).unwrap();
            let x = panel.column(0).unwrap();
            if uncentered_autocorr(&x, 1).abs() > bound {
                exceed += 1;
            }
        }
        assert!(exceed <= 5, "{exceed} of 200 draws exceeded 3/sqrt(N)");
    }

    #[test]
    fn integer_integration_recovers_the_core() {
        let omega = DMatrix::identity(1, 1);
        let mut unit_root = SimulationSpec::new(vec![1.0], omega.clone(), 512, 31).unwrap();
        unit_root.ma_truncation = 5120;
        let mut stationary = SimulationSpec::new(vec![0.0], omega, 512, 31).unwrap();
        stationary.ma_truncation = 5120;
        let x = simulate_mvlm(&unit_root).unwrap();
        let y = simulate_mvlm(&stationary).unwrap();
        let x = x.column(0).unwrap();
        let y = y.column(0).unwrap();
        // Same seed, same stationary core (memory zero): the unit-root
        // panel is the running sum of the stationary one.
        assert_eq!(x[0].to_bits(), y[0].to_bits());
        for t in 1..x.len() {
            assert_abs_diff_eq!(x[t] - x[t - 1], y[t], epsilon = 1e-9);
        }
    }

    #[test]
    fn cross_correlation_tracks_the_long_run_correlation() {
        // Equal memory: the lag-0 correlation of the panel equals the
        // long-run correlation (the common filter cancels in the ratio).
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let mut acc = 0.0;
        let seeds = 8;
        for seed in 0..seeds {
            let mut spec =
                SimulationSpec::new(vec![0.3, 0.3], omega.clone(), 4096, 100 + seed).unwrap();
            spec.ma_truncation = 40_960;
            let panel = simulate_mvlm(&spec).unwrap();
            let a = panel.column(0).unwrap();
            let b = panel.column(1).unwrap();
            let num: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let da: f64 = a.iter().map(|v| v * v).sum();
            let db: f64 = b.iter().map(|v| v * v).sum();
            acc += num / (da * db).sqrt();
        }
        assert_abs_diff_eq!(acc / seeds as f64, 0.5, epsilon = 0.05);
    }

    #[test]
    fn ar_filter_adds_short_memory() {
        let phi = 0.6;
        let mut spec = white_spec(8192, 4);
        spec.ar_coefficient = Some(phi);
        let panel = simulate_mvlm(&spec).unwrap();
        let x = panel.column(0).unwrap();
        // AR(1) filtering of white innovations: lag-1 autocorrelation φ and
        // variance inflated by 1/(1−φ²).
        assert_abs_diff_eq!(uncentered_autocorr(&x, 1), phi, epsilon = 0.05);
        let variance = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let target = TAU / (1.0 - phi * phi);
        assert_abs_diff_eq!(variance, target, epsilon = 0.1 * target);
    }

    #[test]
    fn exponential_innovations_shift_the_third_moment() {
        let mut spec = white_spec(16_384, 12);
        spec.innovations = InnovationKind::CenteredExponential;
        let panel = simulate_mvlm(&spec).unwrap();
        let x = panel.column(0).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 0.15);
        assert_abs_diff_eq!(m2, TAU, epsilon = 0.1 * TAU);
        // Centered exponential innovations keep their skewness 2 under the
        // (scalar) unit-lag filter.
        assert_abs_diff_eq!(m3 / m2.powf(1.5), 2.0, epsilon = 0.5);
    }

    #[test]
    fn long_run_amplitude_inverts_the_estimation_map() {
        let engine = shared_engine_m4();
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let d = [0.1, 0.3];
        let g = long_run_amplitude(&omega, &d, engine).unwrap();
        let back = omega_hat(&g, &d, engine).unwrap();
        for (got, want) in back.iter().zip(omega.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
        // Zero memory: the amplitude is 2π·omega up to grid error.
        let univariate =
            long_run_amplitude(&DMatrix::identity(1, 1), &[0.0], engine).unwrap();
        assert_relative_eq!(univariate[(0, 0)], TAU, max_relative = 1e-5);
    }

    #[test]
    fn monte_carlo_recovers_white_noise_theory() {
        let mut spec = SimulationSpec::new(vec![0.0], DMatrix::identity(1, 1), 512, 11).unwrap();
        spec.ma_truncation = 5120;
        let config = EstimationConfig::new(4, 2, 4);
        let kernels = exact_kernels();
        let engine = shared_engine_m4();
        let summary = monte_carlo(&spec, 60, &config, &kernels, engine).unwrap();

        assert_eq!(summary.failures, 0);
        assert_eq!(summary.replicates, 60);
        assert_eq!(summary.n_coefficients, 202);
        assert_eq!(summary.memory.len(), 1);
        assert!(summary.correlations.is_empty());

        let m = &summary.memory[0];
        assert_eq!(m.name, "d[0]");
        assert_eq!(m.true_value, 0.0);
        assert!(m.theoretical_sd > 0.5 && m.theoretical_sd < 2.5);
        let ratio = m.empirical_sd / m.theoretical_sd;
        assert!(
            (0.6..1.6).contains(&ratio),
            "empirical/theoretical sd ratio {ratio}"
        );
        assert!(m.mean_estimate.abs() < 0.06);
        assert!(m.coverage >= 0.75 && m.coverage <= 1.0);
        assert!(m.ks_distance < 0.25);
        assert!(m.skewness.abs() < 1.0);
        assert!(m.excess_kurtosis.abs() < 1.9);

        // Same spec, same seed: the parallel run aggregates identically.
        let again = monte_carlo(&spec, 60, &config, &kernels, engine).unwrap();
        assert_eq!(summary, again);
    }

    #[test]
    fn monte_carlo_rejects_inadequate_requests() {
        let spec = white_spec(512, 11);
        let config = EstimationConfig::new(4, 2, 4);
        let kernels = exact_kernels();
        let engine = shared_engine_m4();
        assert!(matches!(
            monte_carlo(&spec, 10, &config, &kernels, engine),
            Err(Error::DomainError { .. })
        ));
        let flat = EstimationConfig::new(4, 3, 3);
        assert!(matches!(
            monte_carlo(&spec, 60, &flat, &kernels, engine),
            Err(Error::DomainError { .. })
        ));
    }

    proptest! {
        #[test]
        fn prop_ma_energy_is_monotone_and_bounded(
            d in -0.45f64..0.45,
            half in 8usize..128,
        ) {
            let trunc = 2 * half;
            let taps = fractional_ma_coefficients(d, trunc).unwrap();
            let energy: f64 = taps.iter().map(|&v| v * v).sum();
            let partial: f64 = taps[..=half].iter().map(|&v| v * v).sum();
            prop_assert!(partial <= energy + 1e-12);
            prop_assert!(energy <= closed_form_variance(d) * (1.0 + 1e-9));
        }

        #[test]
        fn prop_circulant_embedding_is_nonnegative(
            d in -0.45f64..0.45,
            n in 2usize..48,
        ) {
            let eigs = circulant_eigenvalues(&arfima_autocovariances(d, n).unwrap()).unwrap();
            prop_assert_eq!(eigs.len(), 2 * n);
            prop_assert!(eigs.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn prop_simulation_is_seed_deterministic(
            seed in any::<u64>(),
            d in -0.45f64..0.45,
            n_x in 16usize..48,
        ) {
            let mut spec = SimulationSpec::new(
                vec![d], DMatrix::identity(1, 1), n_x, seed,
            ).unwrap();
            spec.ma_truncation = 10 * n_x;
            let a = simulate_mvlm(&spec).unwrap();
            let b = simulate_mvlm(&spec).unwrap();
            for (x, y) in a.values().iter().zip(b.values().iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
