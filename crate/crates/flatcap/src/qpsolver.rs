//! Dense convex quadratic programming.
//!
//! Solves `min ½ xᵀHx + fᵀx  s.t.  A x ≤ b` with symmetric positive definite
//! `H` using a primal active-set method: the Hessian is factored once per
//! solve, equality-constrained subproblems are resolved through the Schur
//! complement of the working set, and iterates stay primal feasible
//! throughout. That makes the method deterministic and cheap to warm start
//! across successive MPC steps, which is the intended workload (a few dozen
//! variables, a few hundred rows).
//!
//! Feasible starting points come from the warm start, the unconstrained
//! minimizer, or an exact-penalty phase-1 problem; an irreducibly positive
//! phase-1 slack certifies infeasibility.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("hessian is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// No point satisfies the constraints (phase-1 slack stays positive).
    Infeasible,
    /// Iteration cap hit; `x` is the last (feasible) iterate.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Inequality rows, `a · x ≤ b`. May be empty.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = hessian.nrows();
        if hessian.ncols() != n || linear.len() != n {
            return Err(QpError::Dimensions(format!(
                "hessian {}x{}, linear {}",
                hessian.nrows(),
                hessian.ncols(),
                linear.len()
            )));
        }
        if a.nrows() != b.len() || (a.nrows() > 0 && a.ncols() != n) {
            return Err(QpError::Dimensions(format!(
                "constraints {}x{}, rhs {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let scale = hessian.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (hessian[(i, j)] - hessian[(j, i)]).abs() > 1e-10 * scale {
                    return Err(QpError::NotPositiveDefinite);
                }
            }
        }
        Ok(Self { hessian, linear, a, b })
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self, QpError> {
        let n = linear.len();
        Self::new(hessian, linear, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.hessian * x)[(0, 0)] + self.linear.dot(x)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row, non-negative at an optimum.
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    /// Worst of stationarity, primal feasibility, dual feasibility and
    /// complementarity violations.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Default)]
pub struct QpSolver {
    /// Override for the iteration cap; defaults to `50 + 10(n + m)`.
    pub max_iterations: Option<usize>,
}

const STEP_TOL: f64 = 1e-11;
const MULT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(
        &mut self,
        problem: &QpProblem,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<QpSolution, QpError> {
        let chol =
            Cholesky::new(problem.hessian.clone()).ok_or(QpError::NotPositiveDefinite)?;
        let max_iter = self
            .max_iterations
            .unwrap_or(50 + 10 * (problem.n() + problem.m()));

        let x0 = match self.feasible_start(problem, &chol, warm_start)? {
            Some(x0) => x0,
            None => {
                return Ok(QpSolution {
                    x: DVector::zeros(problem.n()),
                    multipliers: DVector::zeros(problem.m()),
                    status: QpStatus::Infeasible,
                    kkt_residual: f64::INFINITY,
                    iterations: 0,
                })
            }
        };
        Ok(active_set(problem, &chol, x0, max_iter))
    }

    fn feasible_start(
        &self,
        problem: &QpProblem,
        chol: &Cholesky<f64, Dyn>,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<Option<DVector<f64>>, QpError> {
        if let Some(w) = warm_start {
            if w.len() == problem.n() && w.iter().all(|v| v.is_finite()) && is_feasible(problem, w)
            {
                return Ok(Some(w.clone()));
            }
        }
        let unconstrained = chol.solve(&(-&problem.linear));
        if is_feasible(problem, &unconstrained) {
            return Ok(Some(unconstrained));
        }
        let origin = DVector::zeros(problem.n());
        if is_feasible(problem, &origin) {
            return Ok(Some(origin));
        }
        self.phase1(problem, &unconstrained)
    }

    /// Exact-penalty phase 1: minimize the original objective plus `w·s`
    /// subject to `a·x - s ≤ b`, `s ≥ 0`. A vanishing worst violation of the
    /// recovered point yields a feasible start; a stubbornly positive one
    /// under escalating weights certifies infeasibility.
    fn phase1(
        &self,
        problem: &QpProblem,
        x_init: &DVector<f64>,
    ) -> Result<Option<DVector<f64>>, QpError> {
        let n = problem.n();
        let m = problem.m();
        let scale = 1.0 + problem.b.amax().max(problem.linear.amax());

        let mut hess = DMatrix::zeros(n + 1, n + 1);
        hess.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
        // Comparable to the original curvature: keeps the augmented system
        // well conditioned so the penalty steps land accurately.
        hess[(n, n)] = 1.0 + problem.hessian.amax();

        let mut a = DMatrix::zeros(m + 1, n + 1);
        a.view_mut((0, 0), (m, n)).copy_from(&problem.a);
        for i in 0..m {
            a[(i, n)] = -1.0;
        }
        a[(m, n)] = -1.0;
        let mut b = DVector::zeros(m + 1);
        b.rows_mut(0, m).copy_from(&problem.b);

        let max_violation = |x: &DVector<f64>| -> f64 {
            (&problem.a * x - &problem.b).iter().cloned().fold(0.0f64, f64::max)
        };

        let mut start = DVector::zeros(n + 1);
        start.rows_mut(0, n).copy_from(x_init);
        start[n] = max_violation(x_init) * 1.01 + 1.0;

        let mut weight = 100.0 * scale;
        for _ in 0..4 {
            let mut linear = DVector::zeros(n + 1);
            linear.rows_mut(0, n).copy_from(&problem.linear);
            linear[n] = weight;
            let aug = QpProblem::new(hess.clone(), linear, a.clone(), b.clone())?;
            let chol = Cholesky::new(aug.hessian.clone()).ok_or(QpError::NotPositiveDefinite)?;
            let max_iter = self.max_iterations.unwrap_or(50 + 10 * (n + 1 + m + 1));
            let sol = active_set(&aug, &chol, start.clone(), max_iter);
            let x = sol.x.rows(0, n).into_owned();
            let violation = max_violation(&x);
            if violation <= 1e-9 * scale {
                return Ok(Some(x));
            }
            start = sol.x;
            start[n] = violation * 1.01 + 1e-9;
            weight *= 30.0;
        }
        Ok(None)
    }
}

fn is_feasible(problem: &QpProblem, x: &DVector<f64>) -> bool {
    if problem.m() == 0 {
        return true;
    }
    let r = &problem.a * x - &problem.b;
    (0..problem.m()).all(|i| r[i] <= FEAS_TOL * (1.0 + problem.b[i].abs()))
}

fn kkt_residual(problem: &QpProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let stationarity = if problem.m() == 0 {
        (&problem.hessian * x + &problem.linear).amax()
    } else {
        (&problem.hessian * x + &problem.linear + problem.a.transpose() * lambda).amax()
    };
    let mut worst = stationarity;
    for i in 0..problem.m() {
        let slack = problem.a.row(i).transpose().dot(x) - problem.b[i];
        worst = worst.max(slack).max(-lambda[i]).max((lambda[i] * slack).abs());
    }
    worst
}

/// Primal active-set iteration from a feasible point.
fn active_set(
    problem: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    mut x: DVector<f64>,
    max_iter: usize,
) -> QpSolution {
    let m = problem.m();
    let mut working: Vec<usize> = Vec::new();
    // Seed the working set with constraints active at the start, keeping the
    // rows independent.
    for i in 0..m {
        let slack = problem.b[i] - problem.a.row(i).transpose().dot(&x);
        if slack.abs() <= FEAS_TOL * (1.0 + problem.b[i].abs()) {
            working.push(i);
            if schur(problem, chol, &working).is_none() {
                working.pop();
            }
        }
    }

    let mut iterations = 0;
    let mut zero_steps = 0usize;
    // Rows numerically dependent on the working set are parked here until
    // the iterate moves; their step direction is tangential, so skipping
    // them cannot lose feasibility beyond roundoff.
    let mut banned: Vec<usize> = Vec::new();
    while iterations < max_iter {
        iterations += 1;
        let gradient = &problem.hessian * &x + &problem.linear;
        let (step, mu) = match eqp_step(problem, chol, &working, &gradient) {
            Some(v) => v,
            None => {
                // Working set degenerated numerically; drop the oldest row.
                working.remove(0);
                continue;
            }
        };

        if step.amax() <= STEP_TOL * (1.0 + x.amax()) {
            // Under heavy degeneracy fall back to Bland's rule (drop the
            // lowest-index violating row) to break cycles.
            let blandish = zero_steps > 12;
            let mut drop: Option<(f64, usize)> = None;
            for (k, &v) in mu.iter().enumerate() {
                if v < -MULT_TOL {
                    let better = match drop {
                        None => true,
                        Some((best, bk)) => {
                            if blandish {
                                working[k] < working[bk]
                            } else {
                                v < best
                            }
                        }
                    };
                    if better {
                        drop = Some((v, k));
                    }
                }
            }
            match drop {
                None => {
                    let mut lambda = DVector::zeros(m);
                    for (k, &ci) in working.iter().enumerate() {
                        lambda[ci] = mu[k].max(0.0);
                    }
                    let residual = kkt_residual(problem, &x, &lambda);
                    return QpSolution {
                        x,
                        multipliers: lambda,
                        status: QpStatus::Optimal,
                        kkt_residual: residual,
                        iterations,
                    };
                }
                Some((_, k)) => {
                    zero_steps += 1;
                    working.remove(k);
                    continue;
                }
            }
        }

        // Ratio test against rows not in the working set. Any strictly
        // positive direction participates; slightly negative slacks from
        // roundoff clamp to a zero-length step, so iterates never lose
        // feasibility.
        let mut alpha = 1.0f64;
        let mut blocking = None;
        for i in 0..m {
            if working.contains(&i) || banned.contains(&i) {
                continue;
            }
            let direction = problem.a.row(i).transpose().dot(&step);
            if direction <= 0.0 {
                continue;
            }
            let slack = problem.b[i] - problem.a.row(i).transpose().dot(&x);
            let t = (slack / direction).max(0.0);
            if t < alpha - 1e-15 {
                alpha = t;
                blocking = Some(i);
            }
        }

        x += alpha * &step;
        if alpha > 1e-14 {
            zero_steps = 0;
            banned.clear();
        } else {
            zero_steps += 1;
        }
        if let Some(i) = blocking {
            working.push(i);
            if schur(problem, chol, &working).is_none() {
                working.pop();
                banned.push(i);
            }
        }
    }

    let lambda = DVector::zeros(m);
    let residual = kkt_residual(problem, &x, &lambda);
    QpSolution { x, multipliers: lambda, status: QpStatus::MaxIterations, kkt_residual: residual, iterations }
}

/// Cholesky factor of `A_W H⁻¹ A_Wᵀ`, or `None` if the working set rows are
/// (numerically) dependent.
fn schur(
    problem: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    working: &[usize],
) -> Option<Cholesky<f64, Dyn>> {
    if working.is_empty() {
        return Cholesky::new(DMatrix::identity(0, 0));
    }
    let k = working.len();
    let n = problem.n();
    let mut at = DMatrix::zeros(n, k);
    for (col, &ci) in working.iter().enumerate() {
        at.set_column(col, &problem.a.row(ci).transpose());
    }
    let y = chol.solve(&at);
    let s = at.transpose() * y;
    Cholesky::new(s)
}

/// Step and working-set multipliers of the equality-constrained subproblem
/// `min ½(x+p)ᵀH(x+p) + fᵀ(x+p)  s.t.  A_W p = 0`.
fn eqp_step(
    problem: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    working: &[usize],
    gradient: &DVector<f64>,
) -> Option<(DVector<f64>, Vec<f64>)> {
    if working.is_empty() {
        return Some((chol.solve(&(-gradient)), Vec::new()));
    }
    let n = problem.n();
    let k = working.len();
    let mut at = DMatrix::zeros(n, k);
    for (col, &ci) in working.iter().enumerate() {
        at.set_column(col, &problem.a.row(ci).transpose());
    }
    let hinv_g = chol.solve(gradient);
    let s_chol = schur(problem, chol, working)?;
    let mu = s_chol.solve(&(-(at.transpose() * &hinv_g)));
    let step = -chol.solve(&(gradient + &at * &mu));
    Some((step, mu.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(problem: &QpProblem) -> QpSolution {
        QpSolver::new().solve(problem, None).unwrap()
    }

    #[test]
    fn active_bound_is_respected() {
        // min (x-1)^2 s.t. x <= 0
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        let sol = solve(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.multipliers[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(
            DMatrix::identity(3, 3) * 2.0,
            DVector::zeros(3),
        )
        .unwrap();
        let sol = solve(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x.amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_onto_halfspace() {
        // min ||x - (2,2)||^2 s.t. x1 + x2 <= 2 -> (1,1)
        let p = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![-4.0, -4.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
        )
        .unwrap();
        let sol = solve(&p);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-9);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        // x <= 0 and x >= 1
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        )
        .unwrap();
        let sol = solve(&p);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let p = QpProblem::unconstrained(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert!(matches!(
            QpSolver::new().solve(&p, None),
            Err(QpError::NotPositiveDefinite)
        ));
    }

    /// Exhaustive active-set enumeration: try every constraint subset, solve
    /// the equality-constrained KKT system, keep the best feasible candidate
    /// with non-negative multipliers. Independent of the solver's path.
    pub(crate) fn enumeration_oracle(problem: &QpProblem) -> Option<DVector<f64>> {
        let n = problem.n();
        let m = problem.m();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = subset.len();
            if k > n {
                continue;
            }
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
            for (row, &ci) in subset.iter().enumerate() {
                for col in 0..n {
                    kkt[(n + row, col)] = problem.a[(ci, col)];
                    kkt[(col, n + row)] = problem.a[(ci, col)];
                }
            }
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
            for (row, &ci) in subset.iter().enumerate() {
                rhs[n + row] = problem.b[ci];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let lambda = sol.rows(n, k).into_owned();
            if lambda.iter().any(|&l| l < -1e-9) {
                continue;
            }
            if !is_feasible(problem, &x) {
                continue;
            }
            let obj = problem.objective(&x);
            if best.as_ref().map_or(true, |(b, _)| obj < *b - 0.0) {
                best = Some((obj, x));
            }
        }
        best.map(|(_, x)| x)
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(0..=6);
        // PD hessian via M^T M + eps I
        let mmat = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let hessian = mmat.transpose() * &mmat + DMatrix::identity(n, n) * 0.3;
        let linear = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-0.5..2.0));
        QpProblem::new(hessian, linear, a, b).unwrap()
    }

    #[test]
    fn matches_enumeration_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut solved = 0;
        for _ in 0..200 {
            let p = random_problem(&mut rng);
            let expected = enumeration_oracle(&p);
            let sol = solve(&p);
            match expected {
                Some(x) => {
                    assert_eq!(sol.status, QpStatus::Optimal);
                    assert!(
                        (sol.x - &x).amax() <= 1e-6,
                        "solver and oracle disagree: {:?} vs {:?}",
                        p,
                        x
                    );
                    assert!(sol.kkt_residual <= 1e-6);
                    solved += 1;
                }
                None => assert_eq!(sol.status, QpStatus::Infeasible),
            }
        }
        assert!(solved > 100, "too few feasible cases exercised: {solved}");
    }

    #[test]
    fn warm_start_does_not_degrade() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_problem(&mut rng);
            let cold = solve(&p);
            if cold.status != QpStatus::Optimal {
                continue;
            }
            let perturbed = &cold.x + DVector::from_fn(p.n(), |_, _| rng.random_range(-0.05..0.05));
            let warm = QpSolver::new().solve(&p, Some(&perturbed)).unwrap();
            assert_eq!(warm.status, QpStatus::Optimal);
            let delta = p.objective(&warm.x) - p.objective(&cold.x);
            assert!(delta.abs() <= 1e-9 * (1.0 + p.objective(&cold.x).abs()));
        }
    }

    #[test]
    fn argmin_is_invariant_to_objective_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let p = random_problem(&mut rng);
            let base = solve(&p);
            if base.status != QpStatus::Optimal {
                continue;
            }
            for t in [0.05, 3.0, 400.0] {
                let scaled = QpProblem::new(
                    &p.hessian * t,
                    &p.linear * t,
                    p.a.clone(),
                    p.b.clone(),
                )
                .unwrap();
                let sol = solve(&scaled);
                assert_eq!(sol.status, QpStatus::Optimal);
                assert!((sol.x - &base.x).amax() <= 1e-8 * (1.0 + base.x.amax()));
            }
        }
    }
}
