//! Spectral kernels of the wavelet estimator.
//!
//! Everything downstream of the transform works through a small set of
//! spectral quantities: the Fourier transform of the wavelet
//! ([`psihat`]), the normalization kernel `K(δ)` ([`quad`]), the
//! scale-coupling integrals `Ĩ_u` ([`engine`]), their scale-averaged
//! aggregates ([`aggregates`]), and precomputed interpolation tables
//! ([`table`]).

pub mod aggregates;
pub mod engine;
pub mod psihat;
pub mod quad;
pub mod spline;
pub mod table;

pub use aggregates::{
    eta_kappa, s_weight, script_i, script_i_dg, script_i_g, script_i_inf, CouplingKernels,
    ModeBound, WeightConvention,
};
pub use engine::{KernelEngine, KernelEngineConfig, KernelMode, U_QUAD_MAX};
pub use psihat::PsiHatEvaluator;
pub use quad::{adaptive_gk15, modulus_kernel, QuadResult};
pub use spline::{CubicSpline, GridSpline};
pub use table::{KernelTable, TableKernels};

/// A source of modulus-kernel values `K(δ)`, either measured on the grid
/// or interpolated from a table.
///
/// Estimation and asymptotics consume `K` through this trait so that a
/// one-off analysis can query the engine directly while bulk work (Monte
/// Carlo replicates) reads a prebuilt table.  The `Sync` bound lets
/// parallel replicate loops share one source.
pub trait ModulusKernelSource: Sync {
    /// The kernel value at exponent `delta`.
    ///
    /// # Errors
    ///
    /// Table-backed sources reject exponents outside their grid range
    /// with [`crate::error::Error::DomainError`]; the engine accepts any
    /// finite exponent.
    fn kernel_value(&self, delta: f64) -> crate::error::Result<f64>;
}

impl ModulusKernelSource for KernelEngine {
    fn kernel_value(&self, delta: f64) -> crate::error::Result<f64> {
        if !delta.is_finite() {
            return Err(crate::error::Error::DomainError {
                context: "modulus kernel exponent".into(),
                value: delta,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            });
        }
        Ok(self.grid_k(delta))
    }
}

impl ModulusKernelSource for TableKernels {
    fn kernel_value(&self, delta: f64) -> crate::error::Result<f64> {
        self.k(delta)
    }
}
