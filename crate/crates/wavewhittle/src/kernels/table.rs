//! Precomputed kernel tables with interpolating queries.
//!
//! Variance assembly inside Monte Carlo loops evaluates the coupling
//! integrals at estimate-dependent exponents thousands of times; grid
//! quadrature per query would dominate the runtime.  A [`KernelTable`]
//! samples `K(δ)` and `Ĩ_u(δ₁, δ₂)` once on an exponent grid (one spectral
//! sweep per scale gap, shared across all grid points), and
//! [`TableKernels`] answers queries by natural cubic interpolation.
//!
//! Tables serialize to a structured text format and import back
//! bit-exactly, so a table built once can ship alongside results.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::aggregates::{eta_kappa, CouplingKernels};
use super::engine::{KernelEngine, KernelMode};
use super::spline::{CubicSpline, GridSpline};

/// Serialized form of one scale-gap level of coupling integrals.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TableLevel {
    /// Scale gap `u` of this level.
    pub scale_gap: usize,
    /// Row-major `Ĩ_u(δ_grid[i], δ_grid[j])`.
    pub values: Vec<f64>,
}

/// Sampled kernel values for one wavelet family and kernel mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelTable {
    /// Format version of the serialized table.
    pub schema_version: u32,
    /// Filter family name (currently always `"daubechies"`).
    pub family: String,
    /// Vanishing moments of the family.
    pub vanishing_moments: usize,
    /// Kernel mode the values were computed in.
    pub mode: KernelMode,
    /// Consistency tolerance the table was built and checked with.
    pub quad_tolerance: f64,
    /// Spectral folding truncation of the underlying grid sweeps.
    pub trunc_terms: usize,
    /// Largest scale gap stored.
    pub delta_max_scale_gap: usize,
    /// Exponent grid shared by all sampled values.
    pub delta_grid: Vec<f64>,
    /// Normalization kernel `K(δ)` on the grid.
    pub k_values: Vec<f64>,
    /// Gap-distribution means `η_Δ` for `Δ = 1 ..= delta_max_scale_gap`.
    pub eta: Vec<f64>,
    /// Gap-distribution variances `κ_Δ`, same indexing as `eta`.
    pub kappa: Vec<f64>,
    /// Coupling integrals per scale gap `u = 0 ..= delta_max_scale_gap`.
    pub i_tilde_values: Vec<TableLevel>,
}

impl KernelTable {
    /// Sample a table from an engine over `delta_grid` in `mode`.
    ///
    /// Build work parallelizes inside each spectral sweep.  The finished
    /// table is verified against its structural invariants (positive
    /// normalization, gap-0 values at most one, symmetry within the
    /// tolerance); violations surface as [`Error::ConvergenceError`].
    ///
    /// # Errors
    ///
    /// [`Error::DomainError`] for a grid with fewer than four knots or one
    /// that is not strictly increasing ([`Error::NonFiniteInput`] for NaN
    /// knots).
    pub fn build(engine: &KernelEngine, mode: KernelMode, delta_grid: &[f64]) -> Result<Self> {
        if delta_grid.len() < 4 {
            return Err(Error::DomainError {
                context: "kernel table grid size".into(),
                value: delta_grid.len() as f64,
                lo: 4.0,
                hi: f64::INFINITY,
            });
        }
        for (i, &d) in delta_grid.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::NonFiniteInput {
                    context: "kernel table grid".into(),
                    index: i,
                    value: d,
                });
            }
        }
        for win in delta_grid.windows(2) {
            if !(win[1] > win[0]) {
                return Err(Error::DomainError {
                    context: "kernel table grid must increase strictly".into(),
                    value: win[1],
                    lo: win[0],
                    hi: f64::INFINITY,
                });
            }
        }
        let config = engine.config();
        let k_values = engine.grid_k_many(delta_grid);
        let dm = config.delta_max_scale_gap;
        let mut levels = Vec::with_capacity(dm + 1);
        for u in 0..=dm {
            let m = engine.itilde_matrix(u, delta_grid, mode)?;
            levels.push(TableLevel {
                scale_gap: u,
                values: m.transpose().as_slice().to_vec(),
            });
        }
        let mut eta = Vec::with_capacity(dm);
        let mut kappa = Vec::with_capacity(dm);
        for delta in 1..=dm {
            let (e, k) = eta_kappa(delta)?;
            eta.push(e);
            kappa.push(k);
        }
        let table = Self {
            schema_version: 1,
            family: "daubechies".into(),
            vanishing_moments: engine.family().vanishing_moments,
            mode,
            quad_tolerance: config.quad_tolerance,
            trunc_terms: config.t0,
            delta_max_scale_gap: dm,
            delta_grid: delta_grid.to_vec(),
            k_values,
            eta,
            kappa,
            i_tilde_values: levels,
        };
        table.check_invariants()?;
        Ok(table)
    }

    /// Grid dimension.
    fn grid_len(&self) -> usize {
        self.delta_grid.len()
    }

    /// Stored value `Ĩ_u` at grid indices `(i, j)`.
    fn at(&self, u: usize, i: usize, j: usize) -> f64 {
        self.i_tilde_values[u].values[i * self.grid_len() + j]
    }

    /// Verify the structural invariants of the stored values.
    ///
    /// * every `K(δ)` is strictly positive;
    /// * every gap-0 integral is at most one (plus tolerance);
    /// * every level is symmetric within the tolerance;
    /// * shapes are consistent.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.grid_len();
        if self.k_values.len() != n
            || self.i_tilde_values.len() != self.delta_max_scale_gap + 1
            || self.eta.len() != self.delta_max_scale_gap
            || self.kappa.len() != self.delta_max_scale_gap
        {
            return Err(Error::IndexOutOfRange {
                context: "kernel table shape".into(),
                index: self.k_values.len(),
                len: n,
            });
        }
        for (i, &k) in self.k_values.iter().enumerate() {
            if !(k > 0.0) {
                return Err(Error::ConvergenceError {
                    context: format!(
                        "kernel table invariant: K({}) must be positive",
                        self.delta_grid[i]
                    ),
                    achieved: k,
                    tolerance: 0.0,
                });
            }
        }
        for (u, level) in self.i_tilde_values.iter().enumerate() {
            if level.values.len() != n * n || level.scale_gap != u {
                return Err(Error::IndexOutOfRange {
                    context: format!("kernel table level {u} shape"),
                    index: level.values.len(),
                    len: n * n,
                });
            }
            for i in 0..n {
                for j in 0..n {
                    let v = self.at(u, i, j);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteInput {
                            context: format!("kernel table level {u}"),
                            index: i * n + j,
                            value: v,
                        });
                    }
                    let gap = (v - self.at(u, j, i)).abs();
                    if gap > self.quad_tolerance {
                        return Err(Error::ConvergenceError {
                            context: format!("kernel table invariant: level {u} symmetry"),
                            achieved: gap,
                            tolerance: self.quad_tolerance,
                        });
                    }
                    if u == 0 && v > 1.0 + self.quad_tolerance {
                        return Err(Error::ConvergenceError {
                            context: "kernel table invariant: gap-0 integral at most one"
                                .into(),
                            achieved: v,
                            tolerance: 1.0,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize to the structured text format.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io {
            context: "kernel table export".into(),
            detail: e.to_string(),
        })
    }

    /// Parse a table from its structured text format and verify its
    /// invariants.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Self = toml::from_str(text).map_err(|e| Error::Io {
            context: "kernel table import".into(),
            detail: e.to_string(),
        })?;
        table.check_invariants()?;
        Ok(table)
    }
}

/// Interpolating query layer over a [`KernelTable`].
pub struct TableKernels {
    table: KernelTable,
    k_spline: CubicSpline,
    levels: Vec<GridSpline>,
}

impl TableKernels {
    /// Build query splines for a table.
    pub fn new(table: KernelTable) -> Result<Self> {
        table.check_invariants()?;
        let k_spline = CubicSpline::new(table.delta_grid.clone(), table.k_values.clone())?;
        let n = table.delta_grid.len();
        let levels = table
            .i_tilde_values
            .iter()
            .map(|level| {
                let m = DMatrix::from_fn(n, n, |i, j| level.values[i * n + j]);
                GridSpline::new(table.delta_grid.clone(), table.delta_grid.clone(), &m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            table,
            k_spline,
            levels,
        })
    }

    /// The underlying table.
    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    /// Interpolated normalization kernel `K(δ)`.
    pub fn k(&self, delta: f64) -> Result<f64> {
        self.k_spline.eval(delta)
    }
}

impl CouplingKernels for TableKernels {
    fn mode(&self) -> KernelMode {
        self.table.mode
    }

    fn delta_max_scale_gap(&self) -> usize {
        self.table.delta_max_scale_gap
    }

    fn i_tilde(&self, u: usize, delta1: f64, delta2: f64) -> Result<f64> {
        if u > self.table.delta_max_scale_gap {
            return Err(Error::DomainError {
                context: "scale gap".into(),
                value: u as f64,
                lo: 0.0,
                hi: self.table.delta_max_scale_gap as f64,
            });
        }
        self.levels[u].eval(delta1, delta2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::engine::KernelEngineConfig;
    use crate::wavelet::build_daubechies_filters;
    use approx::assert_abs_diff_eq;

    fn small_engine() -> KernelEngine {
        KernelEngine::new(
            build_daubechies_filters(4).unwrap(),
            KernelEngineConfig {
                n0: 1 << 11,
                t0: 16,
                delta_max_scale_gap: 5,
                ..KernelEngineConfig::default()
            },
        )
        .unwrap()
    }

    fn grid() -> Vec<f64> {
        (0..13).map(|i| -0.6 + i as f64 * 0.2).collect()
    }

    #[test]
    fn build_respects_invariants_and_shapes() {
        let engine = small_engine();
        let t = KernelTable::build(&engine, KernelMode::Exact, &grid()).unwrap();
        assert_eq!(t.i_tilde_values.len(), 6);
        assert_eq!(t.k_values.len(), 13);
        assert_eq!(t.eta.len(), 5);
        t.check_invariants().unwrap();
    }

    #[test]
    fn interpolation_matches_direct_quadrature_between_knots() {
        let engine = small_engine();
        let t = KernelTable::build(&engine, KernelMode::Exact, &grid()).unwrap();
        let q = TableKernels::new(t).unwrap();
        // Off-grid exponent pair several knots inside the grid, where the
        // natural-spline boundary layer has died out; compare against the
        // engine directly.
        let (d1, d2) = (0.37, 0.93);
        for u in [0usize, 1, 3] {
            let direct = engine
                .tilde_i_u(u, d1, d2, KernelMode::Exact)
                .unwrap();
            let interp = q.i_tilde(u, d1, d2).unwrap();
            assert_abs_diff_eq!(interp, direct, epsilon = 2e-4);
        }
        // K is steep and convex toward the left knots, so the spline's
        // edge error bleeds further inward than for the flat integrals.
        let kq = q.k(0.37).unwrap();
        let kd = engine.grid_k(0.37);
        assert!((kq - kd).abs() / kd < 1e-3);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let engine = small_engine();
        let t = KernelTable::build(&engine, KernelMode::Replicated, &grid()).unwrap();
        let text = t.to_toml_string().unwrap();
        let back = KernelTable::from_toml_str(&text).unwrap();
        assert_eq!(t, back, "serialized table must round-trip bit-exactly");
        for (a, b) in t.k_values.iter().zip(&back.k_values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_table_rejected_on_import() {
        let engine = small_engine();
        let mut t = KernelTable::build(&engine, KernelMode::Exact, &grid()).unwrap();
        t.k_values[0] = -1.0;
        let text = t.to_toml_string().unwrap();
        assert!(matches!(
            KernelTable::from_toml_str(&text),
            Err(Error::ConvergenceError { .. })
        ));
        assert!(matches!(
            KernelTable::from_toml_str("not toml at all ["),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn bad_grids_rejected() {
        let engine = small_engine();
        assert!(KernelTable::build(&engine, KernelMode::Exact, &[0.0, 0.1, 0.2]).is_err());
        assert!(
            KernelTable::build(&engine, KernelMode::Exact, &[0.0, 0.1, 0.1, 0.2]).is_err()
        );
        assert!(KernelTable::build(
            &engine,
            KernelMode::Exact,
            &[0.0, 0.1, f64::NAN, 0.2]
        )
        .is_err());
    }

    #[test]
    fn queries_outside_grid_rejected() {
        let engine = small_engine();
        let t = KernelTable::build(&engine, KernelMode::Exact, &grid()).unwrap();
        let q = TableKernels::new(t).unwrap();
        assert!(q.i_tilde(0, 5.0, 0.2).is_err());
        assert!(q.i_tilde(6, 0.2, 0.2).is_err());
        assert!(q.k(-3.0).is_err());
    }
}
