//! Exact solver for the small dense strictly convex quadratic program
//!
//! ```text
//!     minimize    ½‖w + g‖²
//!     subject to  G·w ≤ h
//! ```
//!
//! i.e. the Euclidean projection of `-g` onto a polytope. The solver is a
//! dual active-set iteration: starting from the unconstrained minimum it
//! repeatedly adds the most violated constraint, taking partial dual steps
//! that drop blocking constraints when the incoming row conflicts with the
//! working set. Ties break on the lowest index, so identical inputs produce
//! bit-identical outputs.
//!
//! An equality constraint encoded as two exactly-opposing inequality rows
//! needs no special casing: once one side is active the other is never
//! violated beyond round-off.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Constraint violations above this threshold (relative to the bound
/// magnitude) trigger an active-set change.
const FEAS_TOL: f64 = 1e-9;
/// Relative norm below which the projected incoming row counts as linearly
/// dependent on the working set.
const DEPENDENT_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    /// No point satisfies all constraints. In the station this signals a
    /// demand outside the compressor limits.
    #[error("constraints are infeasible")]
    Infeasible,
    /// The active-set iteration did not settle within its cycle guard. Not
    /// expected for the problem sizes this solver is built for.
    #[error("active-set iteration exceeded {0} steps")]
    IterationLimit(usize),
}

/// `minimize ½‖w + g‖² subject to constraints·w ≤ bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub g: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl QpProblem {
    pub fn new(g: DVector<f64>, constraints: DMatrix<f64>, bounds: DVector<f64>) -> Self {
        assert_eq!(constraints.ncols(), g.len(), "constraint/variable mismatch");
        assert_eq!(constraints.nrows(), bounds.len(), "row/bound mismatch");
        assert!(!g.is_empty(), "empty problem");
        Self {
            g,
            constraints,
            bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    /// The minimizer.
    pub w: DVector<f64>,
    /// One multiplier per constraint row; zero on inactive rows.
    pub multipliers: DVector<f64>,
    /// Indices of binding constraints, in activation order.
    pub active_set: Vec<usize>,
    /// Max violation over stationarity, feasibility, dual feasibility and
    /// complementary slackness.
    pub kkt_residual: f64,
}

/// Solves the projection QP.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    let n_rows = p.constraints.nrows();
    let outer_limit = 10 * (n_rows + 1);

    let mut w = -&p.g;
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    // Rows proven redundant against the current working set; cleared on any
    // working-set change.
    let mut dormant = vec![false; n_rows];

    for _ in 0..outer_limit {
        // Most violated constraint, scaled by the bound magnitude; lowest
        // index wins ties.
        let residual = &p.constraints * &w - &p.bounds;
        let mut incoming: Option<usize> = None;
        let mut worst = FEAS_TOL;
        for (i, &r) in residual.iter().enumerate() {
            let scaled = r / (1.0 + p.bounds[i].abs());
            if scaled > worst && !active.contains(&i) && !dormant[i] {
                worst = scaled;
                incoming = Some(i);
            }
        }
        let Some(r_idx) = incoming else {
            let mut multipliers = DVector::zeros(n_rows);
            for (slot, &row) in active.iter().enumerate() {
                multipliers[row] = lambda[slot];
            }
            let kkt_residual = kkt_residual(p, &w, &multipliers);
            return Ok(QpSolution {
                w,
                multipliers,
                active_set: active,
                kkt_residual,
            });
        };

        let n_r = p.constraints.row(r_idx).transpose();
        let mut lambda_r = 0.0;

        // Inner loop: drive the violation of row `r_idx` to zero, dropping
        // blocking working-set constraints along the way.
        let inner_limit = n_rows + 1;
        let mut resolved = false;
        for _ in 0..=inner_limit {
            let (z, rho) = step_directions(p, &active, &n_r);

            // Dual blocking step: smallest λ_j / ρ_j over ρ_j > 0.
            let mut t1 = f64::INFINITY;
            let mut blocking: Option<usize> = None;
            for (slot, (&lam, &rh)) in lambda.iter().zip(rho.iter()).enumerate() {
                if rh > DEPENDENT_TOL {
                    let ratio = lam / rh;
                    if ratio < t1 {
                        t1 = ratio;
                        blocking = Some(slot);
                    }
                }
            }

            let z_norm2 = z.norm_squared();
            let dependent = z_norm2.sqrt() <= DEPENDENT_TOL * (1.0 + n_r.norm());
            if dependent {
                // No primal progress possible along this row.
                let Some(slot) = blocking else {
                    // The incoming row is a combination of the working set
                    // with every coefficient ρ_j ≤ 0, so any point feasible
                    // for the working set satisfies n_rᵀw ≥ Σ ρ_j h_j. The
                    // problem is infeasible exactly when that implied lower
                    // bound exceeds h_r; otherwise the row is redundant here
                    // and its apparent violation is cancellation noise.
                    let implied: f64 = active
                        .iter()
                        .zip(rho.iter())
                        .map(|(&row, &rh)| rh * p.bounds[row])
                        .sum();
                    if implied > p.bounds[r_idx] + FEAS_TOL * (1.0 + p.bounds[r_idx].abs()) {
                        return Err(QpError::Infeasible);
                    }
                    dormant[r_idx] = true;
                    resolved = true;
                    break;
                };
                // Partial dual step up to the blocking constraint.
                for (l, &rh) in lambda.iter_mut().zip(rho.iter()) {
                    *l -= t1 * rh;
                }
                lambda_r += t1;
                active.remove(slot);
                lambda.remove(slot);
                dormant.fill(false);
                continue;
            }

            // Full primal step length that zeroes the violation.
            let violation = n_r.dot(&w) - p.bounds[r_idx];
            let t2 = violation / z_norm2;
            let t = t1.min(t2);
            w -= t * &z;
            for (l, &rh) in lambda.iter_mut().zip(rho.iter()) {
                *l -= t * rh;
            }
            lambda_r += t;

            if t2 <= t1 {
                active.push(r_idx);
                lambda.push(lambda_r);
                dormant.fill(false);
                resolved = true;
                break;
            }
            let slot = blocking.expect("finite t1 implies a blocking constraint");
            active.remove(slot);
            lambda.remove(slot);
            dormant.fill(false);
        }
        if !resolved {
            return Err(QpError::IterationLimit(outer_limit));
        }
    }
    Err(QpError::IterationLimit(outer_limit))
}

/// Primal and dual step directions for an incoming row `n_r` against the
/// working set: `z` is the projection of `n_r` onto the null space of the
/// active rows, `ρ` the least-squares coefficients of `n_r` in them.
fn step_directions(
    p: &QpProblem,
    active: &[usize],
    n_r: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    if active.is_empty() {
        return (n_r.clone(), DVector::zeros(0));
    }
    let dim = p.g.len();
    let mut g_act = DMatrix::zeros(active.len(), dim);
    for (slot, &row) in active.iter().enumerate() {
        g_act.row_mut(slot).copy_from(&p.constraints.row(row));
    }
    let gram = &g_act * g_act.transpose();
    let rhs = &g_act * n_r;
    let svd = gram.svd(true, true);
    let cutoff = (svd.singular_values.max() * 1e-12).max(f64::MIN_POSITIVE);
    let rho = svd
        .solve(&rhs, cutoff)
        .expect("SVD solve on a symmetric PSD system");
    let z = n_r - g_act.transpose() * &rho;
    (z, rho)
}

/// Max violation of the KKT conditions at `(w, multipliers)`.
pub fn kkt_residual(p: &QpProblem, w: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
    let stationarity = (w + &p.g + p.constraints.transpose() * multipliers).amax();
    let slack = &p.constraints * w - &p.bounds;
    let primal = slack.iter().fold(0.0_f64, |acc, &v| acc.max(v));
    let dual = multipliers.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
    let complementarity = slack
        .iter()
        .zip(multipliers.iter())
        .fold(0.0_f64, |acc, (&s, &l)| acc.max((s * l).abs()));
    stationarity.max(primal).max(dual).max(complementarity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn problem(g: &[f64], rows: &[&[f64]], h: &[f64]) -> QpProblem {
        let dim = g.len();
        let mut constraints = DMatrix::zeros(rows.len(), dim);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                constraints[(i, j)] = v;
            }
        }
        QpProblem::new(
            DVector::from_column_slice(g),
            constraints,
            DVector::from_column_slice(h),
        )
    }

    #[test]
    fn unconstrained_optimum_feasible() {
        let p = problem(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, 2.0]);
        let sol = solve(&p).unwrap();
        assert_eq!(sol.w.as_slice(), &[0.0, 0.0]);
        assert!(sol.active_set.is_empty());
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn projects_onto_half_line() {
        // minimize ½(w+2)² subject to w ≤ -3.
        let p = problem(&[2.0], &[&[1.0]], &[-3.0]);
        let sol = solve(&p).unwrap();
        assert_relative_eq!(sol.w[0], -3.0, epsilon = 1e-12);
        assert_eq!(sol.active_set, vec![0]);
        assert!(sol.multipliers[0] >= -1e-10);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn opposing_rows_enforce_equality() {
        // w1 + w2 = 5 written as two opposing inequalities, plus box rows.
        let p = problem(
            &[3.0, 1.0],
            &[&[1.0, 1.0], &[-1.0, -1.0], &[1.0, 0.0], &[0.0, 1.0]],
            &[5.0, -5.0, 10.0, 10.0],
        );
        let sol = solve(&p).unwrap();
        assert_relative_eq!(sol.w[0] + sol.w[1], 5.0, epsilon = 1e-9);
        assert_relative_eq!(sol.w[0], 1.5, epsilon = 1e-9);
        assert_relative_eq!(sol.w[1], 3.5, epsilon = 1e-9);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn detects_infeasible_box() {
        // w ≤ -1 and w ≥ 1 cannot hold together.
        let p = problem(&[0.0], &[&[1.0], &[-1.0]], &[-1.0, -1.0]);
        assert_eq!(solve(&p).unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn detects_infeasible_equality_vs_bounds() {
        // w1 + w2 = 10 but both variables capped at 4.
        let p = problem(
            &[0.0, 0.0],
            &[&[1.0, 1.0], &[-1.0, -1.0], &[1.0, 0.0], &[0.0, 1.0]],
            &[10.0, -10.0, 4.0, 4.0],
        );
        assert_eq!(solve(&p).unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn equality_with_binding_box_is_still_solved() {
        // w1 + w2 + w3 = 9, w ≤ 4 component-wise, strong pull onto w1.
        let p = problem(
            &[-10.0, 0.0, 0.0],
            &[
                &[1.0, 1.0, 1.0],
                &[-1.0, -1.0, -1.0],
                &[1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[0.0, 0.0, 1.0],
            ],
            &[9.0, -9.0, 4.0, 4.0, 4.0],
        );
        let sol = solve(&p).unwrap();
        assert_relative_eq!(sol.w[0], 4.0, epsilon = 1e-9);
        assert_relative_eq!(sol.w[1] + sol.w[2], 5.0, epsilon = 1e-9);
        assert_relative_eq!(sol.w[1], 2.5, epsilon = 1e-9);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn solution_is_deterministic() {
        let p = problem(
            &[1.0, -2.0, 0.5],
            &[
                &[1.0, 0.0, 0.0],
                &[-1.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0],
                &[0.0, -1.0, 0.0],
                &[0.0, 0.0, 1.0],
                &[0.0, 0.0, -1.0],
                &[1.0, 1.0, 1.0],
                &[-1.0, -1.0, -1.0],
            ],
            &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, -0.5],
        );
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        for i in 0..3 {
            assert_eq!(a.w[i].to_bits(), b.w[i].to_bits());
        }
        assert_eq!(a.active_set, b.active_set);
    }

    #[test]
    fn active_bound_multipliers_stay_admissible() {
        let p = problem(&[5.0, 5.0], &[&[-1.0, 0.0], &[0.0, -1.0]], &[1.0, 1.0]);
        let sol = solve(&p).unwrap();
        assert_relative_eq!(sol.w[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.w[1], -1.0, epsilon = 1e-12);
        for lam in sol.multipliers.iter() {
            assert!(*lam >= -1e-10);
        }
    }

    #[test]
    fn controller_scaled_problem_with_large_demand_drop() {
        // ν-scaled rows, gradients of order 1e5 and a demand step that
        // forces several bounds active at once.
        let nu = 1e-3;
        let u = [67.0, 68.0, 67.0];
        let demand: f64 = 185.0;
        let total: f64 = u.iter().sum();
        let g = [1.6e5, 1.2e5, 1.6e5];
        let p = problem(
            &g,
            &[
                &[nu, 0.0, 0.0],
                &[-nu, 0.0, 0.0],
                &[0.0, nu, 0.0],
                &[0.0, -nu, 0.0],
                &[0.0, 0.0, nu],
                &[0.0, 0.0, -nu],
                &[-nu, -nu, -nu],
                &[nu, nu, nu],
            ],
            &[
                125.0 - u[0],
                u[0] - 60.0,
                125.0 - u[1],
                u[1] - 60.0,
                125.0 - u[2],
                u[2] - 60.0,
                total - demand,
                demand - total,
            ],
        );
        let sol = solve(&p).unwrap();
        let flows: Vec<f64> = (0..3).map(|i| u[i] + nu * sol.w[i]).collect();
        let delivered: f64 = flows.iter().sum();
        assert_relative_eq!(delivered, demand, epsilon = 1e-6);
        for f in &flows {
            assert!(*f >= 60.0 - 1e-6 && *f <= 125.0 + 1e-6);
        }
        // At this scaling (multipliers ~1e8) the KKT conditions hold
        // relative to the gradient and multiplier magnitudes.
        let stationarity = (&sol.w + &p.g + p.constraints.transpose() * &sol.multipliers).amax();
        assert!(stationarity <= 1e-9 * p.g.amax());
        for lam in sol.multipliers.iter() {
            assert!(*lam >= -1e-10);
        }
    }
}
