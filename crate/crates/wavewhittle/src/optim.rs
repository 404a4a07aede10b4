//! Deterministic derivative-free simplex minimization over a box.
//!
//! The criterion this crate minimizes is smooth but guarded: outside the
//! feasible region (non-positive-definite profile covariance, out-of-box
//! memory parameters) it evaluates to `+∞` rather than erroring, so the
//! search needs nothing beyond function values.  A hand-rolled Nelder–Mead
//! keeps the dependency surface flat and, more importantly, makes every
//! run bit-reproducible: ties are broken by vertex index, floats are
//! ordered by total order, and no randomness enters the update.

use crate::error::{Error, Result};

/// Reflection, expansion, contraction and shrink coefficients of the
/// standard simplex update.
const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

/// Tuning knobs for [`minimize_simplex`].
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Edge length of the initial axis-aligned simplex.
    pub initial_step: f64,
    /// Convergence requires the simplex diameter below this.
    pub diameter_tolerance: f64,
    /// … and the best-to-worst criterion spread below this.
    pub spread_tolerance: f64,
    /// Total criterion-evaluation budget across both passes; `0` chooses
    /// `2000·p`.
    pub max_evaluations: usize,
    /// Coordinate offset applied to the first minimizer before the
    /// confirmation restart.
    pub restart_offset: f64,
    /// A final coordinate within this distance of a box face sets the
    /// boundary flag on the outcome.
    pub boundary_margin: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            initial_step: 0.1,
            diameter_tolerance: 1e-6,
            spread_tolerance: 1e-10,
            max_evaluations: 0,
            restart_offset: 0.05,
            boundary_margin: 1e-4,
        }
    }
}

/// One convergence milestone in the iteration log.
#[derive(Debug, Clone)]
pub struct SimplexMilestone {
    /// Criterion evaluations consumed so far.
    pub evaluations: usize,
    /// Best criterion value at this point.
    pub best_value: f64,
    /// Simplex diameter at this point.
    pub diameter: f64,
    /// Which pass (0 = initial, 1 = restart) produced the milestone.
    pub pass: usize,
}

/// Outcome of a simplex minimization.
#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    /// Best point found.
    pub minimizer: Vec<f64>,
    /// Criterion value at [`SimplexOutcome::minimizer`].
    pub value: f64,
    /// Criterion evaluations consumed.
    pub evaluations: usize,
    /// True when some final coordinate sits within the boundary margin of
    /// the box.
    pub boundary_hit: bool,
    /// True when the criterion returned a non-finite value at least once
    /// during the search (the point was treated as infeasible).
    pub infeasible_seen: bool,
    /// Sparse iteration log: one milestone per simplex iteration.
    pub milestones: Vec<SimplexMilestone>,
}

/// Minimize `f` over the box `[lower, upper]^p` by Nelder–Mead restarted
/// once from the first minimizer.
///
/// Points outside the box are never evaluated: they count as `+∞`
/// directly, which keeps the simplex inside the feasible region without
/// projections.  Convergence requires the simplex diameter and the
/// criterion spread to drop below their tolerances; after the first
/// convergence the search restarts from the minimizer shifted by
/// `restart_offset` on every coordinate (clamped into the box) and the
/// better of the two passes is returned.
///
/// # Errors
///
/// [`Error::DomainError`] for an empty/invalid box or a start outside it;
/// [`Error::OptimFailed`] when the evaluation budget (default `2000·p`)
/// runs out before both passes converge.
pub fn minimize_simplex(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    lower: f64,
    upper: f64,
    options: &SimplexOptions,
) -> Result<SimplexOutcome> {
    let p = start.len();
    if p == 0 || !(lower < upper) {
        return Err(Error::DomainError {
            context: "simplex search box".into(),
            value: lower,
            lo: f64::NEG_INFINITY,
            hi: upper,
        });
    }
    for &x in start {
        if !x.is_finite() || x < lower || x > upper {
            return Err(Error::DomainError {
                context: "simplex start point".into(),
                value: x,
                lo: lower,
                hi: upper,
            });
        }
    }
    let budget = if options.max_evaluations == 0 {
        2000 * p
    } else {
        options.max_evaluations
    };

    let mut evaluations = 0usize;
    let mut infeasible_seen = false;
    let mut milestones = Vec::new();
    // Budget-aware guarded evaluation: out-of-box or non-finite is +∞.
    let mut eval = |x: &[f64], evaluations: &mut usize, infeasible: &mut bool| -> f64 {
        if x.iter().any(|&c| c < lower || c > upper) {
            *infeasible = true;
            return f64::INFINITY;
        }
        *evaluations += 1;
        let v = f(x);
        if !v.is_finite() {
            *infeasible = true;
            f64::INFINITY
        } else {
            v
        }
    };

    let mut run_pass = |origin: &[f64],
                        pass: usize,
                        evaluations: &mut usize,
                        infeasible: &mut bool,
                        milestones: &mut Vec<SimplexMilestone>|
     -> Result<(Vec<f64>, f64)> {
        // Axis-aligned initial simplex, stepping inward where the box
        // would be crossed.
        let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
        vertices.push(origin.to_vec());
        for i in 0..p {
            let mut v = origin.to_vec();
            let step = if v[i] + options.initial_step <= upper {
                options.initial_step
            } else {
                -options.initial_step
            };
            v[i] = (v[i] + step).clamp(lower, upper);
            vertices.push(v);
        }
        let mut values: Vec<f64> = vertices
            .iter()
            .map(|v| eval(v, evaluations, infeasible))
            .collect();

        loop {
            // Order vertices best→worst; index breaks ties so the path is
            // reproducible.
            let mut order: Vec<usize> = (0..=p).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let reorder_v: Vec<Vec<f64>> = order.iter().map(|&i| vertices[i].clone()).collect();
            let reorder_f: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            vertices = reorder_v;
            values = reorder_f;

            let diameter = simplex_diameter(&vertices);
            let spread = if values[p].is_finite() {
                values[p] - values[0]
            } else {
                f64::INFINITY
            };
            milestones.push(SimplexMilestone {
                evaluations: *evaluations,
                best_value: values[0],
                diameter,
                pass,
            });
            if diameter < options.diameter_tolerance && spread < options.spread_tolerance {
                return Ok((vertices[0].clone(), values[0]));
            }
            if *evaluations >= budget {
                return Err(Error::OptimFailed {
                    iterations: *evaluations,
                    diameter,
                    spread,
                });
            }

            // Centroid of all but the worst vertex.
            let mut centroid = vec![0.0; p];
            for v in vertices.iter().take(p) {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / p as f64;
                }
            }
            let worst = vertices[p].clone();
            let reflected: Vec<f64> = centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + ALPHA * (c - w))
                .collect();
            let fr = eval(&reflected, evaluations, infeasible);

            if fr < values[0] {
                // Try to expand past the reflection.
                let expanded: Vec<f64> = centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c + GAMMA * ALPHA * (c - w))
                    .collect();
                let fe = eval(&expanded, evaluations, infeasible);
                if fe < fr {
                    vertices[p] = expanded;
                    values[p] = fe;
                } else {
                    vertices[p] = reflected;
                    values[p] = fr;
                }
            } else if fr < values[p - 1] {
                vertices[p] = reflected;
                values[p] = fr;
            } else {
                // Contract toward the better of worst/reflected.
                let (anchor, fa) = if fr < values[p] {
                    (&reflected, fr)
                } else {
                    (&worst, values[p])
                };
                let contracted: Vec<f64> = centroid
                    .iter()
                    .zip(anchor)
                    .map(|(c, a)| c + RHO * (a - c))
                    .collect();
                let fc = eval(&contracted, evaluations, infeasible);
                if fc < fa {
                    vertices[p] = contracted;
                    values[p] = fc;
                } else {
                    // Shrink everything toward the best vertex.
                    for i in 1..=p {
                        let best = vertices[0].clone();
                        for (x, b) in vertices[i].iter_mut().zip(&best) {
                            *x = b + SIGMA * (*x - b);
                        }
                        values[i] = eval(&vertices[i].clone(), evaluations, infeasible);
                    }
                }
            }
        }
    };

    let (first_point, first_value) = run_pass(
        start,
        0,
        &mut evaluations,
        &mut infeasible_seen,
        &mut milestones,
    )?;

    // Confirmation restart from a shifted copy of the first minimizer.
    let shifted: Vec<f64> = first_point
        .iter()
        .map(|&x| (x + options.restart_offset).clamp(lower, upper))
        .collect();
    let (second_point, second_value) = run_pass(
        &shifted,
        1,
        &mut evaluations,
        &mut infeasible_seen,
        &mut milestones,
    )?;

    let (minimizer, value) = if second_value < first_value {
        (second_point, second_value)
    } else {
        (first_point, first_value)
    };
    let boundary_hit = minimizer
        .iter()
        .any(|&x| x - lower < options.boundary_margin || upper - x < options.boundary_margin);
    Ok(SimplexOutcome {
        minimizer,
        value,
        evaluations,
        boundary_hit,
        infeasible_seen,
        milestones,
    })
}

/// Largest pairwise max-norm distance between simplex vertices.
fn simplex_diameter(vertices: &[Vec<f64>]) -> f64 {
    let mut diameter = 0.0f64;
    for i in 0..vertices.len() {
        for j in (i + 1)..vertices.len() {
            let d = vertices[i]
                .iter()
                .zip(&vertices[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            diameter = diameter.max(d);
        }
    }
    diameter
}
