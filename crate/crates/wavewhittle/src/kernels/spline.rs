//! Natural cubic spline interpolation, one- and two-dimensional.
//!
//! Kernel tables are sampled on modest exponent grids and queried at
//! arbitrary estimated exponents; the integrands are analytic in the
//! exponent, so natural cubic interpolation reaches table accuracy with a
//! coarse grid.  Queries outside the knot range are refused rather than
//! extrapolated.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    d2: Vec<f64>,
}

impl CubicSpline {
    /// Fit a natural cubic spline.
    ///
    /// # Errors
    ///
    /// [`Error::DomainError`] if fewer than two knots are supplied, and
    /// [`Error::NonFiniteInput`] or [`Error::DomainError`] for non-finite
    /// or non-increasing knots.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::DomainError {
                context: "spline knot count".into(),
                value: xs.len().min(ys.len()) as f64,
                lo: 2.0,
                hi: f64::INFINITY,
            });
        }
        for (i, win) in xs.windows(2).enumerate() {
            if !(win[1] > win[0]) {
                return Err(Error::DomainError {
                    context: format!("spline knots must increase strictly at index {i}"),
                    value: win[1],
                    lo: win[0],
                    hi: f64::INFINITY,
                });
            }
        }
        for (i, &y) in ys.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFiniteInput {
                    context: "spline values".into(),
                    index: i,
                    value: y,
                });
            }
        }
        let n = xs.len();
        let mut d2 = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the tridiagonal natural-spline system.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = (h0 + h1) / 3.0;
                upper[i] = h1 / 6.0;
                rhs[i] = (ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0;
            }
            for i in 1..m {
                let h0 = xs[i + 1] - xs[i];
                let w = (h0 / 6.0) / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            d2[m] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                d2[i + 1] = (rhs[i] - upper[i] * d2[i + 2]) / diag[i];
            }
        }
        Ok(Self { xs, ys, d2 })
    }

    /// Knot range covered by the spline.
    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().expect("non-empty knots"))
    }

    /// Evaluate at `x`.
    ///
    /// # Errors
    ///
    /// [`Error::DomainError`] if `x` lies outside the knot range.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(Error::DomainError {
                context: "spline query".into(),
                value: x,
                lo,
                hi,
            });
        }
        // partition_point returns the first knot strictly greater than x,
        // so seg is the left knot of the bracketing interval.
        let seg = self.xs.partition_point(|&k| k <= x).clamp(1, self.xs.len() - 1) - 1;
        let h = self.xs[seg + 1] - self.xs[seg];
        let a = (self.xs[seg + 1] - x) / h;
        let b = (x - self.xs[seg]) / h;
        Ok(a * self.ys[seg]
            + b * self.ys[seg + 1]
            + ((a * a * a - a) * self.d2[seg] + (b * b * b - b) * self.d2[seg + 1]) * h * h
                / 6.0)
    }
}

/// Tensor-product natural cubic interpolation on a rectangular grid.
#[derive(Debug, Clone)]
pub struct GridSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// One row spline per x-knot, each over the y-grid.
    rows: Vec<CubicSpline>,
}

impl GridSpline {
    /// Fit to values `z[(i, j)] = f(xs[i], ys[j])`.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, z: &DMatrix<f64>) -> Result<Self> {
        if z.nrows() != xs.len() || z.ncols() != ys.len() {
            return Err(Error::IndexOutOfRange {
                context: "grid spline value shape".into(),
                index: z.nrows() * z.ncols(),
                len: xs.len() * ys.len(),
            });
        }
        let rows = (0..xs.len())
            .map(|i| {
                CubicSpline::new(ys.clone(), z.row(i).iter().copied().collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { xs, ys, rows })
    }

    /// Evaluate at `(x, y)` by splining each row at `y`, then the resulting
    /// column at `x`.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let col = self
            .rows
            .iter()
            .map(|r| r.eval(y))
            .collect::<Result<Vec<_>>>()?;
        CubicSpline::new(self.xs.clone(), col)?.eval(x)
    }

    /// Knot ranges `((x_lo, x_hi), (y_lo, y_hi))`.
    pub fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.xs[0], *self.xs.last().expect("non-empty")),
            (self.ys[0], *self.ys.last().expect("non-empty")),
        )
    }
}
