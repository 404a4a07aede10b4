//! Compactly supported wavelet filters and the decimated pyramid transform.
//!
//! This module builds Daubechies filter pairs with a prescribed number of
//! vanishing moments, applies the Mallat pyramid (filter + decimate by two)
//! to each component of a multivariate panel, and keeps exact bookkeeping of
//! how many coefficients at each scale are free of boundary effects.
//!
//! Scale indexing: scale `j` means `j` filter-and-decimate steps, so scale 1
//! is the finest detail level.  The boundary-free coefficient count at scale
//! `j` for a length-`N` series and filter support `T` is
//!
//! ```text
//! n_j = max(0, floor((N - T + 1) / 2^j) - (T - 1))
//! ```
//!
//! and [`pyramid_transform`] retains exactly the first `n_j` outputs of the
//! valid (no zero-padding) convolution cascade, which are provably interior.
//!
//! Two transform flavors exist: [`pyramid_transform`] (boundary-trimmed, the
//! estimator's input) and [`periodic_pyramid_transform`] (circular, no trim),
//! the latter used for energy-conservation diagnostics where orthonormality
//! holds exactly.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A Daubechies-type orthonormal filter pair.
///
/// Constructed by [`build_daubechies_filters`].  The scaling (low-pass)
/// filter `h` has unit sum after dividing by `sqrt(2)`; the wavelet
/// (high-pass) filter is its quadrature mirror `g[k] = (-1)^k h[2M-1-k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFamily {
    /// Number of vanishing moments `M` (2..=10).
    pub vanishing_moments: usize,
    /// Low-pass decomposition taps, length `2M`, sum `sqrt(2)`.
    pub scaling_filter: Vec<f64>,
    /// High-pass decomposition taps, length `2M`.
    pub wavelet_filter: Vec<f64>,
    /// Filter support length `T = 2M - 1` (filter length minus one).
    pub support_length: usize,
    /// Conservative Fourier-decay exponent `alpha`: `|psi_hat(lambda)|`
    /// decays at least like `(1 + |lambda|)^(-alpha)`.  Computed from the
    /// classical binomial bound `alpha = M - log2(binom(2M-1, M-1)) / 2`.
    pub regularity: f64,
}

/// A multivariate time-series panel: rows are time points, columns are
/// components.
#[derive(Debug, Clone)]
pub struct TimeSeriesPanel {
    values: DMatrix<f64>,
    component_names: Vec<String>,
}

impl TimeSeriesPanel {
    /// Wrap a matrix of observations (`N x p`) with component names.
    ///
    /// The name list length must match the column count.  Finiteness is
    /// checked lazily at transform time so that loading and inspecting
    /// malformed data is still possible.
    pub fn new(values: DMatrix<f64>, component_names: Vec<String>) -> Result<Self> {
        if component_names.len() != values.ncols() {
            return Err(Error::IndexOutOfRange {
                context: format!(
                    "panel has {} columns but {} component names",
                    values.ncols(),
                    component_names.len()
                ),
                index: component_names.len(),
                len: values.ncols(),
            });
        }
        Ok(Self {
            values,
            component_names,
        })
    }

    /// Build a panel from per-component columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>], component_names: Vec<String>) -> Result<Self> {
        let p = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        for (i, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::ParseError {
                    row: c.len(),
                    column: i,
                    detail: format!("ragged columns: column {i} has {} rows, expected {n}", c.len()),
                });
            }
        }
        let values = DMatrix::from_fn(n, p, |r, c| columns[c][r]);
        Self::new(values, component_names)
    }

    /// Number of time points.
    pub fn n_x(&self) -> usize {
        self.values.nrows()
    }

    /// Number of components.
    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Observation matrix (`N x p`).
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Component names, one per column.
    pub fn component_names(&self) -> &[String] {
        &self.component_names
    }

    /// One component as a contiguous vector.
    pub fn column(&self, c: usize) -> Result<Vec<f64>> {
        if c >= self.p() {
            return Err(Error::IndexOutOfRange {
                context: "panel column".into(),
                index: c,
                len: self.p(),
            });
        }
        Ok(self.values.column(c).iter().copied().collect())
    }

    fn check_finite(&self) -> Result<()> {
        for c in 0..self.p() {
            for (r, v) in self.values.column(c).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteInput {
                        context: format!("panel component {:?}", self.component_names[c]),
                        index: r,
                        value: *v,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-scale, per-component wavelet detail coefficients with boundary
/// bookkeeping.
///
/// `coefficients[i]` is the `n_j x p` matrix of retained (boundary-free)
/// coefficients at scale `j = j0 + i`; `counts[i]` is `n_j`.
#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    /// Retained detail coefficients per scale, finest first (`j0..=j1`).
    pub coefficients: Vec<DMatrix<f64>>,
    /// Boundary-free counts `n_j`, aligned with `coefficients`.
    pub counts: Vec<usize>,
    /// Finest retained scale index.
    pub j0: usize,
    /// Deepest retained scale index.
    pub j1: usize,
    /// Filters that produced the transform.
    pub family: WaveletFamily,
}

impl WaveletPyramid {
    /// Scales as an iterator `j0..=j1`.
    pub fn scales(&self) -> impl Iterator<Item = usize> + '_ {
        self.j0..=self.j1
    }

    /// Total number of retained coefficients across scales (per component).
    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Coefficient matrix at scale `j`.
    pub fn at_scale(&self, j: usize) -> Result<&DMatrix<f64>> {
        if j < self.j0 || j > self.j1 {
            return Err(Error::IndexOutOfRange {
                context: "pyramid scale".into(),
                index: j,
                len: self.j1 + 1,
            });
        }
        Ok(&self.coefficients[j - self.j0])
    }
}

/// Binomial coefficient as `f64` (exact for the small arguments used here).
fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Evaluate a polynomial with ascending coefficients at a complex point.
fn poly_eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * z + c;
    }
    acc
}

/// Derivative of a polynomial with ascending coefficients at a complex point.
fn poly_eval_deriv(coeffs: &[f64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * z + c * k as f64;
    }
    acc
}

/// Roots of a real polynomial (ascending coefficients) via the companion
/// matrix, polished by two Newton steps.
fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = coeffs.len() - 1;
    let lead = coeffs[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let eigen = companion.complex_eigenvalues();
    eigen
        .iter()
        .map(|&z0| {
            let mut z = Complex64::new(z0.re, z0.im);
            for _ in 0..2 {
                let d = poly_eval_deriv(coeffs, z);
                if d.norm() > 1e-300 {
                    z -= poly_eval(coeffs, z) / d;
                }
            }
            z
        })
        .collect()
}

/// Linear convolution of two real sequences.
fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn convolve_c(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Build the orthonormal Daubechies filter pair with `m` vanishing moments.
///
/// The construction follows the classical spectral factorization: the
/// half-band polynomial `Q(z) = z^(M-1) P((2 - z - 1/z)/4)` with
/// `P(y) = sum_{k<M} binom(M-1+k, k) y^k` is factored over its roots inside
/// the unit circle, the minimum-phase factor is normalized to one at `z = 1`,
/// and the low-pass transfer is `((1+z)/2)^M` times that factor, scaled by
/// `sqrt(2)`.  Tap ordering matches the usual decomposition convention (for
/// `m = 2`: `[-0.12941, 0.22414, 0.83652, 0.48296]`).
///
/// # Errors
///
/// [`Error::UnsupportedOrder`] unless `2 <= m <= 10`.  Order 1 (Haar) is
/// rejected because the estimator requires more than one vanishing moment.
pub fn build_daubechies_filters(m: usize) -> Result<WaveletFamily> {
    if !(2..=10).contains(&m) {
        return Err(Error::UnsupportedOrder { order: m });
    }

    // Q(z) coefficients (ascending), degree 2M-2: place binom(M-1+k, k) times
    // the k-th convolution power of (-1 + 2z - z^2)/4 at offset M-1-k.
    let base = [-0.25, 0.5, -0.25];
    let mut q = vec![0.0f64; 2 * m - 1];
    for k in 0..m {
        let coeff = binomial(m - 1 + k, k);
        let mut t = vec![1.0f64];
        for _ in 0..k {
            t = convolve(&t, &base);
        }
        for (i, &v) in t.iter().enumerate() {
            q[m - 1 - k + i] += coeff * v;
        }
    }

    // Keep the M-1 roots strictly inside the unit circle (minimum phase).
    let inside: Vec<Complex64> = poly_roots(&q)
        .into_iter()
        .filter(|z| z.norm() < 1.0)
        .collect();
    debug_assert_eq!(inside.len(), m - 1, "spectral factorization root count");

    let mut l = vec![Complex64::new(1.0, 0.0)];
    for r in &inside {
        l = convolve_c(&l, &[-r, Complex64::new(1.0, 0.0)]);
    }
    let mut l_real: Vec<f64> = l.iter().map(|z| z.re).collect();
    let sum: f64 = l_real.iter().sum();
    for v in &mut l_real {
        *v /= sum;
    }

    // m0(z) = ((1+z)/2)^M * L(z); h = sqrt(2) * coefficients of m0.
    let mut m0 = vec![1.0f64];
    for _ in 0..m {
        m0 = convolve(&m0, &[0.5, 0.5]);
    }
    m0 = convolve(&m0, &l_real);
    let h: Vec<f64> = m0.iter().map(|v| v * std::f64::consts::SQRT_2).collect();

    let len = h.len();
    debug_assert_eq!(len, 2 * m);
    let g: Vec<f64> = (0..len)
        .map(|k| if k % 2 == 0 { h[len - 1 - k] } else { -h[len - 1 - k] })
        .collect();

    let regularity = m as f64 - 0.5 * binomial(2 * m - 1, m - 1).log2();

    Ok(WaveletFamily {
        vanishing_moments: m,
        scaling_filter: h,
        wavelet_filter: g,
        support_length: 2 * m - 1,
        regularity,
    })
}

/// Number of boundary-free wavelet coefficients at scale `j`.
///
/// Evaluates `max(0, floor((n_x - t_psi + 1) / 2^j) - (t_psi - 1))`, the
/// count of coefficients unaffected by the finite sample boundary.  The
/// floor makes the count an integer lower bound on what the valid-mode
/// cascade can deliver.
pub fn coefficient_count(n_x: usize, j: usize, t_psi: usize) -> usize {
    if j >= 63 {
        return 0;
    }
    let numer = n_x as i64 - t_psi as i64 + 1;
    if numer <= 0 {
        return 0;
    }
    let v = (numer >> j) - (t_psi as i64 - 1);
    v.max(0) as usize
}

/// One filter-and-decimate step in valid mode (no extension):
/// `out[k] = sum_m filter[m] * input[2k + m]`.
fn analysis_step(input: &[f64], filter: &[f64]) -> Vec<f64> {
    let lf = filter.len();
    if input.len() < lf {
        return Vec::new();
    }
    let full = input.len() - lf + 1; // valid positions at stride 1
    let count = full.div_ceil(2); // stride-2 positions
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let base = 2 * k;
        let mut acc = 0.0;
        for (m, &f) in filter.iter().enumerate() {
            acc += f * input[base + m];
        }
        out.push(acc);
    }
    out
}

/// Mallat pyramid of a panel, retaining the boundary-free coefficients.
///
/// Applies the filter-and-decimate cascade independently to every component
/// column and keeps, at each scale `j` in `j0..=j1`, exactly the first
/// [`coefficient_count`] outputs (which are interior by construction).  The
/// result is deterministic for a fixed input.
///
/// # Errors
///
/// * [`Error::DomainError`] if `j0 < 1` or `j1 < j0` (scale indices count
///   decimation steps, so the finest scale is 1);
/// * [`Error::SeriesTooShort`] if fewer than 4 boundary-free coefficients
///   remain at `j1`, or the panel is shorter than `2^(j0+1) * T`;
/// * [`Error::NonFiniteInput`] on NaN or infinite samples.
pub fn pyramid_transform(
    panel: &TimeSeriesPanel,
    family: &WaveletFamily,
    j0: usize,
    j1: usize,
) -> Result<WaveletPyramid> {
    if j0 < 1 || j1 < j0 {
        return Err(Error::DomainError {
            context: "pyramid scale range (j0, j1)".into(),
            value: if j0 < 1 { j0 as f64 } else { j1 as f64 },
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let t = family.support_length;
    let n_x = panel.n_x();
    let deepest = coefficient_count(n_x, j1, t);
    if deepest < 4 {
        return Err(Error::SeriesTooShort {
            n_x,
            scale: j1,
            available: deepest,
            required: 4,
        });
    }
    if n_x < (1usize << (j0 + 1)) * t {
        return Err(Error::SeriesTooShort {
            n_x,
            scale: j0,
            available: n_x,
            required: (1usize << (j0 + 1)) * t,
        });
    }
    panel.check_finite()?;

    let counts: Vec<usize> = (j0..=j1).map(|j| coefficient_count(n_x, j, t)).collect();
    let p = panel.p();
    let mut per_scale: Vec<DMatrix<f64>> = counts
        .iter()
        .map(|&c| DMatrix::zeros(c, p))
        .collect();

    for c in 0..p {
        let mut approx: Vec<f64> = panel.values.column(c).iter().copied().collect();
        for j in 1..=j1 {
            let detail = analysis_step(&approx, &family.wavelet_filter);
            approx = analysis_step(&approx, &family.scaling_filter);
            if j >= j0 {
                let idx = j - j0;
                let nj = counts[idx];
                debug_assert!(
                    detail.len() >= nj,
                    "valid cascade yields at least n_j coefficients"
                );
                for k in 0..nj {
                    per_scale[idx][(k, c)] = detail[k];
                }
            }
        }
    }

    Ok(WaveletPyramid {
        coefficients: per_scale,
        counts,
        j0,
        j1,
        family: family.clone(),
    })
}

/// Equivalent level-`j` filters of the cascade, by upsampled convolution.
///
/// Returns `(h_j, d_j)`: the low-pass and high-pass filters whose direct
/// stride-`2^j` correlation with the raw series reproduces approximation and
/// detail coefficients at level `j`.
fn equivalent_filters(family: &WaveletFamily, j: usize) -> (Vec<f64>, Vec<f64>) {
    let mut h_eq = vec![1.0f64];
    let mut d_eq = family.wavelet_filter.clone();
    for level in 1..=j {
        if level == 1 {
            h_eq = family.scaling_filter.clone();
            d_eq = family.wavelet_filter.clone();
            continue;
        }
        let stride = 1usize << (level - 1);
        let up = |f: &[f64]| {
            let mut u = vec![0.0; (f.len() - 1) * stride + 1];
            for (i, &v) in f.iter().enumerate() {
                u[i * stride] = v;
            }
            u
        };
        d_eq = convolve(&up(&family.wavelet_filter), &h_eq);
        h_eq = convolve(&up(&family.scaling_filter), &h_eq);
    }
    (h_eq, d_eq)
}

/// Brute-force oracle for a single interior wavelet coefficient.
///
/// Computes `W_{j,k}` for one component by explicit convolution of the raw
/// series with the level-`j` equivalent filter (an upsampled cascade built
/// without pyramid recursion), so pyramid and oracle share no code path.
///
/// # Errors
///
/// [`Error::IndexOutOfRange`] if `component` does not exist, `j < 1`, or
/// `(j, k)` does not index a boundary-free coefficient.
pub fn direct_transform_oracle(
    panel: &TimeSeriesPanel,
    family: &WaveletFamily,
    j: usize,
    k: usize,
    component: usize,
) -> Result<f64> {
    if component >= panel.p() {
        return Err(Error::IndexOutOfRange {
            context: "oracle component".into(),
            index: component,
            len: panel.p(),
        });
    }
    if j < 1 {
        return Err(Error::IndexOutOfRange {
            context: "oracle scale (scales count decimation steps, finest is 1)".into(),
            index: j,
            len: 0,
        });
    }
    let nj = coefficient_count(panel.n_x(), j, family.support_length);
    if k >= nj {
        return Err(Error::IndexOutOfRange {
            context: format!("oracle interior coefficient at scale {j}"),
            index: k,
            len: nj,
        });
    }
    let (_, d_eq) = equivalent_filters(family, j);
    let base = k << j;
    let col = panel.values.column(component);
    let mut acc = 0.0;
    for (t, &f) in d_eq.iter().enumerate() {
        acc += f * col[base + t];
    }
    Ok(acc)
}

/// Full-depth periodic (circular) pyramid of a panel: no boundary trimming.
///
/// Used by energy-conservation diagnostics: with circular extension the
/// transform is exactly orthonormal, so detail plus smooth energy equals
/// input energy.  Requires the series length to be divisible by `2^j_max`.
#[derive(Debug, Clone)]
pub struct PeriodicPyramid {
    /// Detail coefficients per level (level `j` has `N / 2^j` rows).
    pub details: Vec<DMatrix<f64>>,
    /// Final smooth (approximation) coefficients, `N / 2^j_max` rows.
    pub smooth: DMatrix<f64>,
}

/// Circular filter-and-decimate cascade to depth `j_max` (diagnostic mode).
///
/// # Errors
///
/// [`Error::DomainError`] if `n_x` is not divisible by `2^j_max`;
/// [`Error::NonFiniteInput`] on NaN or infinite samples.
pub fn periodic_pyramid_transform(
    panel: &TimeSeriesPanel,
    family: &WaveletFamily,
    j_max: usize,
) -> Result<PeriodicPyramid> {
    let n_x = panel.n_x();
    if j_max == 0 || n_x == 0 || n_x % (1usize << j_max) != 0 {
        return Err(Error::DomainError {
            context: format!("periodic transform needs n_x divisible by 2^{j_max}"),
            value: n_x as f64,
            lo: (1u64 << j_max) as f64,
            hi: f64::INFINITY,
        });
    }
    panel.check_finite()?;
    let p = panel.p();
    let mut details: Vec<DMatrix<f64>> = (1..=j_max)
        .map(|j| DMatrix::zeros(n_x >> j, p))
        .collect();
    let mut smooth = DMatrix::zeros(n_x >> j_max, p);

    for c in 0..p {
        let mut approx: Vec<f64> = panel.values.column(c).iter().copied().collect();
        for j in 1..=j_max {
            let len = approx.len();
            let half = len / 2;
            let mut next = vec![0.0; half];
            for k in 0..half {
                let mut acc_d = 0.0;
                let mut acc_a = 0.0;
                for m in 0..family.wavelet_filter.len() {
                    let idx = (2 * k + m) % len;
                    acc_d += family.wavelet_filter[m] * approx[idx];
                    acc_a += family.scaling_filter[m] * approx[idx];
                }
                details[j - 1][(k, c)] = acc_d;
                next[k] = acc_a;
            }
            approx = next;
        }
        for (k, &v) in approx.iter().enumerate() {
            smooth[(k, c)] = v;
        }
    }
    Ok(PeriodicPyramid { details, smooth })
}
