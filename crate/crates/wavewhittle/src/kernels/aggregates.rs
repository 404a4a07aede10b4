//! Scale-averaged aggregates of the coupling integrals.
//!
//! The estimator pools wavelet scales `j₀ … j₁`, and its asymptotic
//! variance aggregates the per-gap integrals `Ĩ_u` with weights derived
//! from the geometric distribution of coefficient counts across scales
//! (`n_j ∝ 2^{−j}`).  With `Δ = j₁ − j₀` the weight of gap `u` involves the
//! mean `η_Δ` and variance `κ_Δ` of that distribution.
//!
//! Three aggregate families appear in the variance algebra:
//!
//! * [`script_i`] — the memory-parameter block (regression-adjusted
//!   weights);
//! * [`script_i_g`] — the long-run covariance block;
//! * [`script_i_dg`] — the cross block between the two.
//!
//! Each finite-gap aggregate exists in two published algebraic forms that
//! disagree slightly; both are implemented behind [`WeightConvention`],
//! with [`WeightConvention::Standard`] as the validated default.  The
//! infinite-gap limit [`script_i_inf`] sums the series directly and
//! converges only when both exponents are below one.

use crate::error::{Error, Result};

use super::engine::{KernelEngine, KernelMode};

/// Source of normalized scale-coupling integrals `Ĩ_u(δ₁, δ₂)`.
///
/// Implemented by the grid engine (one mode bound via [`ModeBound`]) and by
/// interpolating kernel tables, so variance assembly can run either from
/// first principles or from a precomputed table.
pub trait CouplingKernels: Sync {
    /// The kernel mode the values belong to.
    fn mode(&self) -> KernelMode;

    /// Largest scale gap served by [`CouplingKernels::i_tilde`].
    fn delta_max_scale_gap(&self) -> usize;

    /// Normalized coupling integral at scale gap `u`.
    fn i_tilde(&self, u: usize, delta1: f64, delta2: f64) -> Result<f64>;

    /// Coupling integral for arbitrarily large gaps, continuing past the
    /// served range by the mode's limit rule: replicated values plateau at
    /// gap 0, exact values follow a clamped geometric decay fitted on the
    /// last two served gaps.
    fn i_tilde_any_gap(&self, u: usize, delta1: f64, delta2: f64) -> Result<f64> {
        let dm = self.delta_max_scale_gap();
        if u <= dm {
            return self.i_tilde(u, delta1, delta2);
        }
        match self.mode() {
            KernelMode::Replicated => self.i_tilde(0, delta1, delta2),
            KernelMode::Exact => {
                let a = self.i_tilde(dm - 1, delta1, delta2)?;
                let b = self.i_tilde(dm, delta1, delta2)?;
                if a.abs() < 1e-300 {
                    Ok(0.0)
                } else {
                    let ratio = (b / a).clamp(0.0, 0.75);
                    Ok(b * ratio.powi((u - dm) as i32))
                }
            }
        }
    }
}

/// A [`KernelEngine`] with one kernel mode bound, viewed as a
/// [`CouplingKernels`] source.
#[derive(Clone, Copy)]
pub struct ModeBound<'a> {
    pub engine: &'a KernelEngine,
    pub mode: KernelMode,
}

impl CouplingKernels for ModeBound<'_> {
    fn mode(&self) -> KernelMode {
        self.mode
    }

    fn delta_max_scale_gap(&self) -> usize {
        self.engine.config().delta_max_scale_gap
    }

    fn i_tilde(&self, u: usize, delta1: f64, delta2: f64) -> Result<f64> {
        self.engine.tilde_i_u(u, delta1, delta2, self.mode)
    }

    fn i_tilde_any_gap(&self, u: usize, delta1: f64, delta2: f64) -> Result<f64> {
        self.engine
            .tilde_i_u_unchecked(u, delta1, delta2, self.mode)
    }
}

/// Which algebraic form of the finite-gap aggregate weights to use.
///
/// The two forms differ in the sign of the gap index inside the tail
/// weights; they agree in the infinite-gap limit but differ at small `Δ`.
/// `Standard` is the form whose covariance matrices validated as positive
/// semi-definite and matched simulation; `Alternate` is kept for
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightConvention {
    Standard,
    Alternate,
}

impl Default for WeightConvention {
    fn default() -> Self {
        WeightConvention::Standard
    }
}

/// Mean `η_Δ` of the gap distribution (defined for every `Δ ≥ 0`).
fn eta_of(delta: usize) -> f64 {
    let norm = 2.0 - 2f64.powi(-(delta as i32));
    (0..=delta)
        .map(|u| 2f64.powi(-(u as i32)) / norm * u as f64)
        .sum()
}

/// Mean and variance `(η_Δ, κ_Δ)` of the scale-gap weight distribution
/// `w_u ∝ 2^{−u}`, `u = 0 … Δ`.
///
/// # Errors
///
/// [`Error::DegenerateDelta`] for `Δ = 0`, where the distribution is a
/// point mass and `κ_0 = 0` would divide the aggregates by zero.
pub fn eta_kappa(delta: usize) -> Result<(f64, f64)> {
    if delta == 0 {
        return Err(Error::DegenerateDelta { delta });
    }
    let eta = eta_of(delta);
    let norm = 2.0 - 2f64.powi(-(delta as i32));
    let kappa = (0..=delta)
        .map(|u| {
            let w = 2f64.powi(-(u as i32)) / norm;
            w * (u as f64 - eta) * (u as f64 - eta)
        })
        .sum();
    Ok((eta, kappa))
}

/// Regression cross-weight `S(u, Δ) = Σ_{v=0}^{Δ−u} w_v (v − η_Δ)(v + u − η_Δ)`.
///
/// # Errors
///
/// [`Error::DomainError`] unless `1 ≤ u ≤ Δ`.
pub fn s_weight(u: usize, delta: usize) -> Result<f64> {
    if u == 0 || u > delta {
        return Err(Error::DomainError {
            context: "regression cross-weight gap".into(),
            value: u as f64,
            lo: 1.0,
            hi: delta as f64,
        });
    }
    let eta = eta_of(delta);
    let norm = 2.0 - 2f64.powi(-(delta as i32));
    Ok((0..=(delta - u))
        .map(|v| {
            let w = 2f64.powi(-(v as i32)) / norm;
            w * (v as f64 - eta) * ((v + u) as f64 - eta)
        })
        .sum())
}

/// Common gap-bound check for the finite aggregates.
fn check_gap(kernels: &dyn CouplingKernels, delta: usize) -> Result<()> {
    let dm = kernels.delta_max_scale_gap();
    if delta > dm {
        return Err(Error::DomainError {
            context: "aggregate scale gap".into(),
            value: delta as f64,
            lo: 0.0,
            hi: dm as f64,
        });
    }
    Ok(())
}

/// Memory-parameter aggregate `𝓘_Δ(δ₁, δ₂)`.
///
/// `(2/κ_Δ) Ĩ_0 + Σ_{u=1}^{Δ} (2/κ_Δ²)(2^{uδ₁} + 2^{uδ₂}) 2^{−u} S_w(u) Ĩ_u`,
/// where `S_w` is [`s_weight`] under the standard convention and the
/// closed-form product `((2−2^{u−Δ})/(2−2^{−Δ}))(u−η_Δ)(u−η_Δ−η_{Δ−u})`
/// under the alternate one.
///
/// # Errors
///
/// [`Error::DegenerateDelta`] at `Δ = 0`; [`Error::DomainError`] when `Δ`
/// exceeds the kernel source's gap bound.
pub fn script_i(
    kernels: &dyn CouplingKernels,
    delta: usize,
    delta1: f64,
    delta2: f64,
    convention: WeightConvention,
) -> Result<f64> {
    check_gap(kernels, delta)?;
    let (eta, kappa) = eta_kappa(delta)?;
    let mut acc = 2.0 / kappa * kernels.i_tilde(0, delta1, delta2)?;
    let norm = 2.0 - 2f64.powi(-(delta as i32));
    for u in 1..=delta {
        let iu = kernels.i_tilde(u, delta1, delta2)?;
        let growth = 2f64.powf(u as f64 * delta1) + 2f64.powf(u as f64 * delta2);
        let cross = match convention {
            WeightConvention::Standard => s_weight(u, delta)?,
            WeightConvention::Alternate => {
                (2.0 - 2f64.powi(u as i32 - delta as i32)) / norm
                    * (u as f64 - eta)
                    * (u as f64 - eta - eta_of(delta - u))
            }
        };
        acc += 2.0 / (kappa * kappa) * growth * 2f64.powi(-(u as i32)) * cross * iu;
    }
    Ok(acc)
}

/// Infinite-gap limit `𝓘_∞(δ₁, δ₂) = Ĩ_0 + Σ_{u≥1} (2^{uδ₁}+2^{uδ₂}) 2^{−u} Ĩ_u`.
///
/// The series is summed until a term drops below `1e−10` (at most 40
/// terms).
///
/// # Errors
///
/// * [`Error::DivergentSeries`] if term magnitudes grow three gaps in a
///   row: the limit exists only when `max(δ₁, δ₂) < 1`.
/// * [`Error::ConvergenceError`] if 40 terms pass without reaching the
///   cutoff.
pub fn script_i_inf(kernels: &dyn CouplingKernels, delta1: f64, delta2: f64) -> Result<f64> {
    let mut acc = kernels.i_tilde(0, delta1, delta2)?;
    let mut prev = f64::INFINITY;
    let mut growing = 0usize;
    let mut magnitude = 0.0;
    for u in 1..=40usize {
        let iu = kernels.i_tilde_any_gap(u, delta1, delta2)?;
        let term =
            (2f64.powf(u as f64 * delta1) + 2f64.powf(u as f64 * delta2)) * 2f64.powi(-(u as i32))
                * iu;
        acc += term;
        magnitude = term.abs();
        if magnitude < 1e-10 {
            return Ok(acc);
        }
        if magnitude > prev {
            growing += 1;
            if growing >= 3 && magnitude > 1e-8 {
                return Err(Error::DivergentSeries {
                    context: "infinite-gap memory aggregate".into(),
                    at_term: u,
                    magnitude,
                });
            }
        } else {
            growing = 0;
        }
        prev = magnitude;
    }
    Err(Error::ConvergenceError {
        context: "infinite-gap memory aggregate".into(),
        achieved: magnitude,
        tolerance: 1e-10,
    })
}

/// Covariance-block aggregate `𝓘^G_Δ(δ₁, δ₂)`.
///
/// `Ĩ_0 + Σ_{u=1}^{Δ} (2^{uδ₁}+2^{uδ₂}) 2^{−u} w_u Ĩ_u` with tail weight
/// `w_u = (2−2^{u−Δ})/(2−2^{−Δ})` (standard) or
/// `(2−2^{−Δ−u})/(2−2^{−Δ})` (alternate).  `Δ = 0` degenerates gracefully
/// to `Ĩ_0`.
pub fn script_i_g(
    kernels: &dyn CouplingKernels,
    delta: usize,
    delta1: f64,
    delta2: f64,
    convention: WeightConvention,
) -> Result<f64> {
    check_gap(kernels, delta)?;
    let norm = 2.0 - 2f64.powi(-(delta as i32));
    let mut acc = kernels.i_tilde(0, delta1, delta2)?;
    for u in 1..=delta {
        let iu = kernels.i_tilde(u, delta1, delta2)?;
        let growth = 2f64.powf(u as f64 * delta1) + 2f64.powf(u as f64 * delta2);
        let w = match convention {
            WeightConvention::Standard => (2.0 - 2f64.powi(u as i32 - delta as i32)) / norm,
            WeightConvention::Alternate => {
                (2.0 - 2f64.powi(-(delta as i32) - u as i32)) / norm
            }
        };
        acc += growth * 2f64.powi(-(u as i32)) * w * iu;
    }
    Ok(acc)
}

/// Cross-block aggregate `𝓘^{dG}_Δ(δ₁, δ₂)` coupling the memory and
/// covariance estimates.
///
/// The gap-0 term is `(2/κ_Δ)(2−2^{−Δ})^{−1}(0−η_Δ) Ĩ_0`; each positive
/// gap contributes `κ_Δ^{−1} 2^{−u} Ĩ_u` times a bracket combining decay
/// factors of both exponents with the tail weight.  The two conventions
/// differ in the tail weight and in the sign of the exponent scaling.
/// Unlike the other aggregates this one is *not* symmetric in
/// `(δ₁, δ₂)`: the second exponent carries the residual-mean term.
pub fn script_i_dg(
    kernels: &dyn CouplingKernels,
    delta: usize,
    delta1: f64,
    delta2: f64,
    convention: WeightConvention,
) -> Result<f64> {
    check_gap(kernels, delta)?;
    let (eta, kappa) = eta_kappa(delta)?;
    let norm = 2.0 - 2f64.powi(-(delta as i32));
    let mut acc = 2.0 / kappa / norm * (0.0 - eta) * kernels.i_tilde(0, delta1, delta2)?;
    for u in 1..=delta {
        let iu = kernels.i_tilde(u, delta1, delta2)?;
        let eta_tail = eta_of(delta - u);
        let bracket = match convention {
            WeightConvention::Standard => {
                let w = (2.0 - 2f64.powi(-(delta as i32) - u as i32)) / norm;
                (2f64.powf(-(u as f64) * delta1) + 2f64.powf(-(u as f64) * delta2))
                    * w
                    * (u as f64 - eta)
                    + 2f64.powf(-(u as f64) * delta2) * eta_tail
            }
            WeightConvention::Alternate => {
                let w = (2.0 - 2f64.powi(u as i32 - delta as i32)) / norm;
                (2f64.powf(u as f64 * delta1) + 2f64.powf(u as f64 * delta2))
                    * w
                    * (u as f64 - eta)
                    + 2f64.powf(u as f64 * delta2) * eta_tail
            }
        };
        acc += 1.0 / kappa * 2f64.powi(-(u as i32)) * iu * bracket;
    }
    Ok(acc)
}
