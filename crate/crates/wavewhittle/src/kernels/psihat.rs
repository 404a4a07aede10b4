//! Fourier transform of the wavelet via the refinement cascade.
//!
//! The wavelet's Fourier transform is evaluated as a truncated infinite
//! product: the high-pass transfer function at `λ/2` times normalized
//! low-pass transfers at `λ/4, λ/8, …`.  Truncation error decays
//! geometrically in the depth, and the depth is raised automatically for
//! large arguments so that the finest factor always sees an argument below
//! `π` — keeping the phase error uniform over the whole axis.

use std::collections::HashMap;
use std::sync::Mutex;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::wavelet::WaveletFamily;

/// Evaluator for `ψ̂(λ)` with memoization of scalar calls.
///
/// Construction captures the filter pair; evaluation is a pure function of
/// the frequency, so the internal cache is invisible to callers (guarded by
/// a lock for shared use from parallel sections).
#[derive(Debug)]
pub struct PsiHatEvaluator {
    /// Low-pass transfer taps `h/√2`, highest tap first (Horner order).
    c0: Vec<Complex64>,
    /// High-pass transfer taps `g/√2`, highest tap first.
    c1: Vec<Complex64>,
    /// Base truncation depth of the refinement product.
    product_depth: usize,
    /// Number of vanishing moments of the family.
    vanishing_moments: usize,
    /// Conservative decay exponent of the family (`|ψ̂| ≲ (1+|λ|)^{−α}`).
    regularity: f64,
    memo: Mutex<HashMap<u64, Complex64>>,
}

impl PsiHatEvaluator {
    /// Build an evaluator for a filter family.
    ///
    /// # Errors
    ///
    /// [`Error::DomainError`] if `product_depth < 20`: below that the
    /// truncated product is too short for full double-precision accuracy.
    pub fn new(family: &WaveletFamily, product_depth: usize) -> Result<Self> {
        if product_depth < 20 {
            return Err(Error::DomainError {
                context: "refinement product depth".into(),
                value: product_depth as f64,
                lo: 20.0,
                hi: f64::INFINITY,
            });
        }
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let to_horner = |taps: &[f64]| {
            taps.iter()
                .rev()
                .map(|&t| Complex64::new(t * inv_sqrt2, 0.0))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            c0: to_horner(&family.scaling_filter),
            c1: to_horner(&family.wavelet_filter),
            product_depth,
            vanishing_moments: family.vanishing_moments,
            regularity: family.regularity,
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// Default-depth evaluator (depth 30).
    pub fn with_default_depth(family: &WaveletFamily) -> Result<Self> {
        Self::new(family, 30)
    }

    /// Conservative decay exponent `α` inherited from the family.
    pub fn regularity(&self) -> f64 {
        self.regularity
    }

    /// Number of vanishing moments `M` of the family.
    pub fn vanishing_moments(&self) -> usize {
        self.vanishing_moments
    }

    /// Normalized transfer polynomial `Σ_k (tap_k/√2) e^{−ikx}` by Horner
    /// recursion in `E = e^{−ix}`.
    fn transfer(&self, x: f64, taps: &[Complex64]) -> Complex64 {
        let e = Complex64::from_polar(1.0, -x);
        let mut acc = taps[0];
        for &t in &taps[1..] {
            acc = acc * e + t;
        }
        acc
    }

    /// Effective product depth for arguments up to `max_abs` in magnitude:
    /// the base depth plus enough extra halvings to bring the deepest factor
    /// argument under `π`.
    pub fn depth_for(&self, max_abs: f64) -> usize {
        let amax = max_abs.max(1.0);
        let extra = ((amax / std::f64::consts::PI).log2().ceil() as i64 + 1).max(0);
        self.product_depth + extra as usize
    }

    /// Evaluate `ψ̂(λ)` at a fixed truncation depth, bypassing the cache.
    ///
    /// Bulk grid evaluations use this directly with a depth chosen from the
    /// grid's largest argument, so chunked evaluation stays bit-identical to
    /// whole-grid evaluation.
    pub fn eval_raw(&self, lambda: f64, depth: usize) -> Complex64 {
        let mut out = self.transfer(lambda / 2.0, &self.c1);
        let mut x = lambda / 2.0;
        for _ in 2..=depth {
            x /= 2.0;
            out *= self.transfer(x, &self.c0);
        }
        out
    }

    /// Evaluate `ψ̂(λ)`, memoizing the result.
    pub fn eval(&self, lambda: f64) -> Complex64 {
        let key = lambda.to_bits();
        if let Ok(memo) = self.memo.lock() {
            if let Some(&v) = memo.get(&key) {
                return v;
            }
        }
        let v = self.eval_raw(lambda, self.depth_for(lambda.abs()));
        if let Ok(mut memo) = self.memo.lock() {
            // Bound the cache so dense sweeps cannot exhaust memory; bulk
            // grid paths use eval_raw and never reach here.
            if memo.len() < 1 << 20 {
                memo.insert(key, v);
            }
        }
        v
    }

    /// `|ψ̂(λ)|²`.
    pub fn modulus_sq(&self, lambda: f64) -> f64 {
        self.eval(lambda).norm_sqr()
    }
}
