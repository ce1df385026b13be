//! Polytopic inner approximation of the convex flat-space input set.
//!
//! The approximation inflates zonotopes from a fixed generator basis inside
//! the ball-cone body: for a list of anchor points spread along the symmetry
//! axis, the scaling optimization finds per-generator scalings and a center
//! that maximize the explicit zonotope volume subject to every sign-pattern
//! point staying inside the body and the anchor staying inside the zonotope.
//! The convex hull of all inflated zonotopes is the final constraint set
//! consumed by the flat-space MPC.
//!
//! The scaling problem has a multilinear objective and convex constraints.
//! It is solved by sequential linearization with a box trust region: the
//! anchor-membership constraint is eliminated exactly by parameterizing the
//! center as `c = anchor − Σ βᵢ δᵢ gᵢ` with `|βᵢ| ≤ 1`, each iteration
//! linearizes the body constraints at every sign-pattern point and solves a
//! small QP, and steps are accepted on true feasibility plus objective
//! improvement. A per-coordinate inflation polish runs afterwards so that no
//! single scaling can grow by more than 0.1% without leaving the body, and a
//! final shrink toward the anchor clears any residual boundary violation.
//!
//! Anchors on the boundary of the body (the first and last schedule points)
//! pin the zonotope so hard that only degenerate scalings survive; those
//! solves legitimately return flat or point-like bodies whose sole hull
//! contribution is the extreme point itself.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec;
use crate::flatmap::ConstraintParams;
use crate::geomhull::{GeomError, Polytope};
use crate::qpsolver::{QpProblem, QpSolver, QpStatus};
use crate::zonotope::{subset_determinants, Zonotope, ZonotopeError};

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("anchor {0:?} lies outside the closed constraint body (residual {1:.3e})")]
    InfeasibleStart(Vector3<f64>, f64),
    #[error("feasibility residual {0:.3e} above 1e-6 at exit")]
    Tolerance(f64),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Zonotope(#[from] ZonotopeError),
}

/// Configuration of the inflation procedure.
#[derive(Debug, Clone)]
pub struct ApproxConfig {
    pub generators: Matrix3xX<f64>,
    /// Number of schedule intervals; the schedule has `n0 + 1` anchors.
    pub n0: usize,
    /// Feasibility allowance (linear units, m/s²) when classifying an
    /// iterate as acceptable during the search.
    pub feas_tol: f64,
    /// Relative objective stall threshold terminating the search.
    pub stall_tol: f64,
    pub max_iterations: usize,
    /// Number of random restarts on top of the three deterministic ones.
    pub random_starts: usize,
    /// Facet-merge tolerance forwarded to the hull construction.
    pub merge_tol: f64,
    pub seed: u64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            generators: crate::zonotope::default_generator_basis(),
            n0: 2,
            feas_tol: 1e-8,
            stall_tol: 1e-8,
            max_iterations: 150,
            random_starts: 5,
            merge_tol: crate::geomhull::MERGE_TOL,
            seed: 0,
        }
    }
}

/// Extra constraints on a single scaling solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Freeze the center at the anchor point instead of optimizing it.
    pub fix_center: bool,
    /// Force all scalings equal (the inflation becomes one-dimensional).
    pub tie_scalings: bool,
}

#[derive(Debug, Clone)]
pub struct SolveLog {
    pub anchor: Vector3<f64>,
    pub starts: usize,
    pub iterations: usize,
    pub objective: f64,
    /// Worst body residual over sign-pattern points at exit (linear units).
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub schedule: Vec<Vector3<f64>>,
    pub zonotopes: Vec<Zonotope>,
    pub hull: Polytope,
    pub euclidean_volume: f64,
    pub n_vertices: usize,
    pub n_halfspaces: usize,
    pub logs: Vec<SolveLog>,
    /// Hull vertices and facet samples re-checked against the body.
    pub containment_verified: bool,
}

/// Anchor schedule: `n0 + 1` points on the vertical axis from the top of the
/// ball down to the cone apex, `(1 - k/n0)·t_max - g` for `k = 0..n0`.
pub fn interior_schedule(params: &ConstraintParams, n0: usize) -> Vec<Vector3<f64>> {
    if n0 == 0 {
        return vec![Vector3::new(0.0, 0.0, params.t_max() - params.g())];
    }
    (0..=n0)
        .map(|k| {
            let fraction = 1.0 - k as f64 / n0 as f64;
            Vector3::new(0.0, 0.0, fraction * params.t_max() - params.g())
        })
        .collect()
}

/// Largest zonotope of the family anchored at `anchor`.
pub fn maximize_zonotope(
    generators: &Matrix3xX<f64>,
    anchor: &Vector3<f64>,
    params: &ConstraintParams,
    cfg: &ApproxConfig,
) -> Result<Zonotope, ApproxError> {
    maximize_zonotope_with(generators, anchor, params, cfg, SolveOptions::default()).map(|r| r.0)
}

pub fn maximize_zonotope_with(
    generators: &Matrix3xX<f64>,
    anchor: &Vector3<f64>,
    params: &ConstraintParams,
    cfg: &ApproxConfig,
    options: SolveOptions,
) -> Result<(Zonotope, SolveLog), ApproxError> {
    let anchor_residual = params.flat_convex_residual(anchor);
    if anchor_residual > cfg.feas_tol {
        return Err(ApproxError::InfeasibleStart(*anchor, anchor_residual));
    }
    let problem = Inflation::new(generators, *anchor, params, options);

    // Each start pins the anchor coefficients: the anchor sits at a chosen
    // relative position inside the zonotope and the scalings are optimized
    // around it. Deterministic starts put the anchor at the bottom, the top
    // and the center; random starts scatter it. Freezing the coefficients
    // per start keeps sign-pattern points that coincide with a boundary
    // anchor exactly glued to it, which the inflation relies on.
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let n = problem.n;
    starts.push(vec![0.0; n]);
    if !options.fix_center {
        let vertical_sign = |z: f64| if z.abs() < 1e-12 { 0.0 } else { -z.signum() };
        let up: Vec<f64> = (0..n).map(|i| vertical_sign(problem.gens[i].z)).collect();
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        let half_up: Vec<f64> = up.iter().map(|v| 0.5 * v).collect();
        let half_down: Vec<f64> = down.iter().map(|v| 0.5 * v).collect();
        starts.push(up);
        starts.push(down);
        starts.push(half_up);
        starts.push(half_down);
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                ^ anchor.x.to_bits().rotate_left(1)
                ^ anchor.y.to_bits().rotate_left(3)
                ^ anchor.z.to_bits().rotate_left(7),
        );
        for _ in 0..cfg.random_starts {
            starts.push((0..n).map(|_| rng.random_range(-0.6..0.6)).collect());
        }
    }

    let n_starts = starts.len();
    let mut best: Option<State> = None;
    let mut total_iterations = 0;
    for beta0 in starts {
        let state0 = problem.uniform_start(&beta0);
        let (state, iters) = problem.improve(state0, cfg);
        total_iterations += iters;
        let better = match &best {
            None => true,
            Some(b) => {
                // Lexicographic: volume, then flat content, then reach.
                let key = |s: &State| {
                    (problem.objective(&s.delta), problem.content2(&s.delta), s.spread(&problem))
                };
                let (new, old) = (key(&state), key(b));
                let close = |a: f64, b: f64| (a - b).abs() <= b.abs() * 1e-9 + 1e-12;
                if !close(new.0, old.0) {
                    new.0 > old.0
                } else if !close(new.1, old.1) {
                    new.1 > old.1
                } else {
                    new.2 > old.2 + 1e-12
                }
            }
        };
        if better {
            best = Some(state);
        }
    }

    let state = best.expect("at least one start always runs");
    let residual = problem.worst_residual(&state.delta, &state.beta);
    if residual > 1e-6 {
        return Err(ApproxError::Tolerance(residual));
    }
    let center = problem.center(&state.delta, &state.beta);
    let zonotope = Zonotope::new(generators.clone(), center, state.delta.clone())?;
    let log = SolveLog {
        anchor: *anchor,
        starts: n_starts,
        iterations: total_iterations,
        objective: problem.objective(&state.delta),
        residual,
    };
    Ok((zonotope, log))
}

/// Full inflation procedure: one scaling solve per schedule anchor, hull of
/// the union of all sign-pattern points.
pub fn approximate_input_set(
    params: &ConstraintParams,
    cfg: &ApproxConfig,
) -> Result<ApproxResult, ApproxError> {
    let schedule = interior_schedule(params, cfg.n0);
    let solved = exec::map_indexed(schedule.len(), |k| {
        maximize_zonotope_with(&cfg.generators, &schedule[k], params, cfg, SolveOptions::default())
    });

    let mut zonotopes = Vec::with_capacity(solved.len());
    let mut logs = Vec::with_capacity(solved.len());
    for item in solved {
        let (z, log) = item?;
        zonotopes.push(z);
        logs.push(log);
    }

    let mut points = Vec::new();
    for z in &zonotopes {
        points.extend(z.vertex_candidates()?);
    }
    let hull = Polytope::convex_hull_with_tolerance(&points, cfg.merge_tol)?;
    let containment_verified = verify_hull_in_body(&hull, params, cfg.seed) <= 1e-9;

    Ok(ApproxResult {
        schedule,
        euclidean_volume: hull.volume(),
        n_vertices: hull.n_vertices(),
        n_halfspaces: hull.n_halfspaces(),
        zonotopes,
        hull,
        logs,
        containment_verified,
    })
}

/// Largest origin-centered cube (equal half-widths on all axes) inside the
/// body, found by bisection on the corner residual.
pub fn inscribed_cube(params: &ConstraintParams) -> Result<(f64, Polytope), ApproxError> {
    let corners_feasible = |a: f64| -> bool {
        box_corners(&Vector3::new(a, a, a))
            .iter()
            .all(|v| params.flat_convex_residual(v) <= 0.0)
    };
    let a = bisect_largest(params.t_max(), corners_feasible);
    let hull = Polytope::convex_hull(&box_corners(&Vector3::new(a, a, a)))?;
    Ok((a, hull))
}

/// Largest origin-centered box with equal lateral half-widths inside the
/// body. When the thrust ball is slack at the optimum the solution is
/// closed-form: the vertical half-width is `g/3` and the lateral ones put
/// the bottom corners on the cone.
pub fn inscribed_box(params: &ConstraintParams) -> Result<(Vector3<f64>, Polytope), ApproxError> {
    let g = params.g();
    let tan_eps = params.eps_max().tan();
    let lateral_limit = |w3: f64| -> f64 {
        let cone = (g - w3) * tan_eps / std::f64::consts::SQRT_2;
        let ball2 = params.t_max().powi(2) - (w3 + g).powi(2);
        if ball2 <= 0.0 {
            return 0.0;
        }
        cone.min((ball2 / 2.0).sqrt()).max(0.0)
    };

    let analytic_w3 = g / 3.0;
    let analytic_w12 = (g - analytic_w3) * tan_eps / std::f64::consts::SQRT_2;
    let ball_slack =
        2.0 * analytic_w12.powi(2) + (analytic_w3 + g).powi(2) <= params.t_max().powi(2);

    let w3 = if ball_slack {
        analytic_w3
    } else {
        // Ball active: maximize w12(w3)^2 · w3 numerically.
        golden_max(0.0, g, |w3| lateral_limit(w3).powi(2) * w3)
    };
    let half = Vector3::new(lateral_limit(w3), lateral_limit(w3), w3);
    let hull = Polytope::convex_hull(&box_corners(&half))?;
    Ok((half, hull))
}

/// Monte Carlo containment report.
#[derive(Debug, Clone, Copy)]
pub struct ContainmentReport {
    pub samples: usize,
    pub violations: usize,
    pub worst: f64,
}

/// Samples points uniformly inside `hull` (rejection from its bounding box)
/// and reports violations of the convex body beyond `tol`.
pub fn check_polytope_in_body(
    hull: &Polytope,
    params: &ConstraintParams,
    samples: usize,
    tol: f64,
    seed: u64,
) -> ContainmentReport {
    let (lo, hi) = hull.bounding_box();
    let chunks = 64usize;
    let per_chunk = samples.div_ceil(chunks);
    let reports = exec::map_indexed(chunks, |c| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut taken = 0;
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        while taken < per_chunk {
            let p = Vector3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            );
            if !hull.contains(&p, 0.0) {
                continue;
            }
            taken += 1;
            let r = params.flat_convex_residual(&p);
            worst = worst.max(r);
            if r > tol {
                violations += 1;
            }
        }
        (taken, violations, worst)
    });
    let mut total = ContainmentReport { samples: 0, violations: 0, worst: f64::NEG_INFINITY };
    for (s, v, w) in reports {
        total.samples += s;
        total.violations += v;
        total.worst = total.worst.max(w);
    }
    total
}

/// Samples points uniformly inside the convex body and checks that the
/// original-input image is feasible for every yaw value on a grid: the
/// containment that justifies using the body as a constraint set at all.
pub fn check_body_in_exact_preimage(
    params: &ConstraintParams,
    samples: usize,
    n_psi: usize,
    seed: u64,
) -> ContainmentReport {
    let radius = params.t_max() * params.eps_max().sin();
    let lo = Vector3::new(-radius, -radius, -params.g());
    let hi = Vector3::new(radius, radius, params.t_max() - params.g());
    let psis: Vec<f64> = (0..n_psi)
        .map(|i| -std::f64::consts::PI + std::f64::consts::TAU * i as f64 / n_psi as f64)
        .collect();
    let chunks = 64usize;
    let per_chunk = samples.div_ceil(chunks);
    let reports = exec::map_indexed(chunks, |c| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64).wrapping_mul(0x2545F4914F6CDD1D));
        let mut taken = 0;
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        while taken < per_chunk {
            let v = Vector3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            );
            if params.flat_convex_residual(&v) > 0.0 {
                continue;
            }
            taken += 1;
            for &psi in &psis {
                match params.flat_to_body(&v, psi) {
                    Ok(u) => {
                        let r = params.body_residual(&u);
                        worst = worst.max(r);
                        if r > 1e-6 {
                            violations += 1;
                        }
                    }
                    Err(_) => violations += 1,
                }
            }
        }
        (taken * psis.len(), violations, worst)
    });
    let mut total = ContainmentReport { samples: 0, violations: 0, worst: f64::NEG_INFINITY };
    for (s, v, w) in reports {
        total.samples += s;
        total.violations += v;
        total.worst = total.worst.max(w);
    }
    total
}

/// Worst body residual over hull vertices and random points on every facet.
pub fn verify_hull_in_body(hull: &Polytope, params: &ConstraintParams, seed: u64) -> f64 {
    let scale = hull.vertices().iter().map(|v| v.amax()).fold(1.0f64, f64::max);
    let tol = 1e-9 * scale;
    let mut worst = f64::NEG_INFINITY;
    for v in hull.vertices() {
        worst = worst.max(params.flat_convex_residual(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for hs in hull.halfspaces() {
        let supporters: Vec<&Vector3<f64>> = hull
            .vertices()
            .iter()
            .filter(|v| (hs.normal.dot(v) - hs.offset).abs() <= tol)
            .collect();
        if supporters.len() < 3 {
            continue;
        }
        for _ in 0..48 {
            let mut weights: Vec<f64> =
                (0..supporters.len()).map(|_| -rng.random_range(1e-9..1.0f64).ln()).collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            let p: Vector3<f64> = supporters.iter().zip(&weights).map(|(v, w)| **v * *w).sum();
            worst = worst.max(params.flat_convex_residual(&p));
        }
    }
    worst
}

fn box_corners(half: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let mut corners = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                corners.push(Vector3::new(sx * half.x, sy * half.y, sz * half.z));
            }
        }
    }
    corners
}

/// Largest `t ∈ [0, hi]` with `feasible(t)` true, assuming the feasible set
/// is an interval containing 0.
fn bisect_largest(hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    if !feasible(0.0) {
        return 0.0;
    }
    if feasible(hi) {
        return hi;
    }
    let mut lo = 0.0;
    let mut hi_bound = hi;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi_bound);
        if feasible(mid) {
            lo = mid;
        } else {
            hi_bound = mid;
        }
    }
    lo
}

fn golden_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

// --- the inflation problem and its sequential linearization ---

#[derive(Debug, Clone)]
struct State {
    delta: Vec<f64>,
    beta: Vec<f64>,
}

impl State {
    fn spread(&self, problem: &Inflation) -> f64 {
        self.delta.iter().enumerate().map(|(i, d)| d * problem.gens[i].norm()).sum()
    }
}

/// Objective being inflated. The volume objective ties at zero whenever the
/// anchor pins the zonotope onto the body's boundary (only rank-deficient
/// scalings survive there); ties are broken by the 2-D content so that flat
/// solutions still stretch as far as the body allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Goal {
    Content3,
    Content2,
}

struct Inflation<'a> {
    gens: Vec<Vector3<f64>>,
    weights: Vec<([usize; 3], f64)>,
    pair_weights: Vec<([usize; 2], f64)>,
    anchor: Vector3<f64>,
    params: &'a ConstraintParams,
    options: SolveOptions,
    signs: Vec<Vec<f64>>,
    n: usize,
}

impl<'a> Inflation<'a> {
    fn new(
        generators: &Matrix3xX<f64>,
        anchor: Vector3<f64>,
        params: &'a ConstraintParams,
        options: SolveOptions,
    ) -> Self {
        let n = generators.ncols();
        let gens: Vec<Vector3<f64>> = (0..n).map(|i| generators.column(i).into_owned()).collect();
        let weights: Vec<([usize; 3], f64)> = subset_determinants(generators).collect();
        let mut pair_weights = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                pair_weights.push(([i, j], gens[i].cross(&gens[j]).norm()));
            }
        }
        let signs = (0..(1usize << n))
            .map(|mask| {
                (0..n).map(|i| if mask & (1 << i) != 0 { 1.0 } else { -1.0 }).collect()
            })
            .collect();
        Self { gens, weights, pair_weights, anchor, params, options, signs, n }
    }

    fn objective(&self, delta: &[f64]) -> f64 {
        self.goal_objective(Goal::Content3, delta)
    }

    fn content2(&self, delta: &[f64]) -> f64 {
        self.goal_objective(Goal::Content2, delta)
    }

    fn goal_objective(&self, goal: Goal, delta: &[f64]) -> f64 {
        match goal {
            Goal::Content3 => self
                .weights
                .iter()
                .map(|([i, j, k], w)| w * delta[*i] * delta[*j] * delta[*k])
                .sum(),
            Goal::Content2 => self
                .pair_weights
                .iter()
                .map(|([i, j], w)| w * delta[*i] * delta[*j])
                .sum(),
        }
    }

    fn goal_gradient(&self, goal: Goal, delta: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n];
        match goal {
            Goal::Content3 => {
                for ([i, j, k], w) in &self.weights {
                    grad[*i] += w * delta[*j] * delta[*k];
                    grad[*j] += w * delta[*i] * delta[*k];
                    grad[*k] += w * delta[*i] * delta[*j];
                }
            }
            Goal::Content2 => {
                for ([i, j], w) in &self.pair_weights {
                    grad[*i] += w * delta[*j];
                    grad[*j] += w * delta[*i];
                }
            }
        }
        grad
    }

    fn center(&self, delta: &[f64], beta: &[f64]) -> Vector3<f64> {
        let mut c = self.anchor;
        for i in 0..self.n {
            c -= self.gens[i] * (beta[i] * delta[i]);
        }
        c
    }

    fn candidate(&self, delta: &[f64], beta: &[f64], pattern: &[f64]) -> Vector3<f64> {
        let mut x = self.anchor;
        for i in 0..self.n {
            x += self.gens[i] * ((pattern[i] - beta[i]) * delta[i]);
        }
        x
    }

    fn worst_residual(&self, delta: &[f64], beta: &[f64]) -> f64 {
        self.signs
            .iter()
            .map(|pattern| {
                self.params.flat_convex_residual(&self.candidate(delta, beta, pattern))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest uniform scaling feasible for the given anchor coefficients.
    fn uniform_start(&self, beta0: &[f64]) -> State {
        let feasible = |t: f64| -> bool {
            let delta = vec![t; self.n];
            self.worst_residual(&delta, beta0) <= 0.0
        };
        let t = bisect_largest(2.0 * self.params.t_max(), feasible);
        State { delta: vec![t; self.n], beta: beta0.to_vec() }
    }

    fn improve(&self, start: State, cfg: &ApproxConfig) -> (State, usize) {
        let mut state = start;
        if self.options.tie_scalings {
            // One degree of freedom; the bisection start is already maximal.
            return (state, 1);
        }
        let mut iterations = self.pursue(Goal::Content3, &mut state, cfg, 0);
        if self.objective(&state.delta) <= 1e-12 {
            iterations = self.pursue(Goal::Content2, &mut state, cfg, iterations);
        }
        self.restore_feasibility(&mut state);
        (state, iterations)
    }

    fn pursue(&self, goal: Goal, state: &mut State, cfg: &ApproxConfig, start_iter: usize) -> usize {
        let mut iterations = start_iter;
        for _round in 0..6 {
            let before = self.goal_objective(goal, &state.delta);
            let mut radius = 0.1 * self.params.t_max();
            let radius_min = 1e-9 * self.params.t_max();
            let mut last_gain_iter = iterations;
            while iterations < cfg.max_iterations && radius > radius_min {
                iterations += 1;
                match self.slp_step(goal, state, radius) {
                    Some(gain) => {
                        radius = (radius * 1.6).min(0.5 * self.params.t_max());
                        if gain > cfg.stall_tol * self.goal_objective(goal, &state.delta).max(1.0) {
                            last_gain_iter = iterations;
                        }
                    }
                    None => radius *= 0.5,
                }
                if iterations - last_gain_iter > 25 {
                    break;
                }
            }
            self.polish(goal, state);
            let after = self.goal_objective(goal, &state.delta);
            if after <= before * (1.0 + 1e-6) + 1e-12 || iterations >= cfg.max_iterations {
                break;
            }
        }
        iterations
    }

    /// One trust-region step over the scalings: constrain every sign-pattern
    /// point by support planes of the body, solve the QP, pull the candidate
    /// back inside, and accept on objective improvement. Returns the gain on
    /// acceptance.
    ///
    /// Support planes (an azimuth fan for the cone, a fan of sphere supports
    /// around each point's radial direction) are globally valid, unlike
    /// pointwise linearizations whose gradients degenerate at the cone
    /// vertex and the ball pole.
    fn slp_step(&self, goal: Goal, state: &mut State, radius: f64) -> Option<f64> {
        let n = self.n;
        let grad = self.goal_gradient(goal, &state.delta);
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));

        // Proximal curvature keeps the QP strictly convex and the step from
        // jumping wall to wall inside the trust box.
        let rho = (grad_norm / (2.0 * radius)).max(1e-9);
        let hessian = DMatrix::identity(n, n) * rho;
        let linear = DVector::from_fn(n, |i, _| -grad[i]);

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let tan_eps = self.params.eps_max().tan();
        let g = self.params.g();
        let t_max = self.params.t_max();
        let ball_center = Vector3::new(0.0, 0.0, -g);
        const AZIMUTHS: usize = 12;
        // A row whose slack cannot be consumed inside the trust box is
        // irrelevant for this step; dropping it keeps the QP small.
        let mut push_row = |normal: Vector3<f64>, slack: f64, pattern: &[f64]| {
            let mut row = vec![0.0; n];
            let mut reach = 0.0;
            for i in 0..n {
                row[i] = normal.dot(&self.gens[i]) * (pattern[i] - state.beta[i]);
                reach += row[i].abs() * radius;
            }
            if slack > 1.05 * reach {
                return;
            }
            rows.push(row);
            rhs.push(slack);
        };
        for pattern in &self.signs {
            let x = self.candidate(&state.delta, &state.beta, pattern);
            let vz = x.z + g;
            // floor
            push_row(Vector3::new(0.0, 0.0, -1.0), vz, pattern);
            // cone fan: u·(x, y) ≤ tan(eps)·(z + g) for all azimuths
            for j in 0..AZIMUTHS {
                let phi = std::f64::consts::TAU * j as f64 / AZIMUTHS as f64;
                let normal = Vector3::new(phi.cos(), phi.sin(), -tan_eps);
                let value = normal.x * x.x + normal.y * x.y - tan_eps * vz;
                push_row(normal, -value, pattern);
            }
            // ball supports: the point's own radial direction plus tilts
            let w = x - ball_center;
            let radial = w.norm();
            if radial > 1e-9 * t_max {
                let u0 = w / radial;
                let mut dirs = vec![u0];
                let seed = if u0.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
                let t1 = (seed - u0 * seed.dot(&u0)).normalize();
                let t2 = u0.cross(&t1);
                let chi = 0.35f64; // ~20 degrees
                for k in 0..8 {
                    let ang = std::f64::consts::TAU * k as f64 / 8.0;
                    let tangent = t1 * ang.cos() + t2 * ang.sin();
                    dirs.push(u0 * chi.cos() + tangent * chi.sin());
                }
                for u in dirs {
                    let value = u.dot(&w) - t_max;
                    push_row(u, -value, pattern);
                }
            }
        }
        // Trust region and non-negativity.
        for i in 0..n {
            let mut up = vec![0.0; n];
            up[i] = 1.0;
            rows.push(up.clone());
            rhs.push(radius);
            let mut down = up;
            down[i] = -1.0;
            rows.push(down);
            rhs.push(radius.min(state.delta[i]));
        }

        // Degenerate scalings make many sign patterns coincide, producing
        // exact duplicate rows that would stall the active set.
        let mut seen = std::collections::HashSet::new();
        let mut unique_rows = Vec::with_capacity(rows.len());
        let mut unique_rhs = Vec::with_capacity(rhs.len());
        for (row, b) in rows.iter().zip(&rhs) {
            let key: Vec<u64> = row
                .iter()
                .chain(std::iter::once(b))
                .map(|v| (v * 1e14).round().to_bits())
                .collect();
            if seen.insert(key) {
                unique_rows.push(row.clone());
                unique_rhs.push(*b);
            }
        }
        let m = unique_rows.len();
        let mut a = DMatrix::zeros(m, n);
        for (r, row) in unique_rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                a[(r, c)] = v;
            }
        }
        let problem = QpProblem::new(hessian, linear, a, DVector::from_vec(unique_rhs)).ok()?;
        let solution = QpSolver::new().solve(&problem, None).ok()?;
        if solution.status == QpStatus::Infeasible {
            return None;
        }

        let mut candidate = state.clone();
        for i in 0..n {
            candidate.delta[i] = (candidate.delta[i] + solution.x[i]).max(0.0);
        }
        // Linearized steps leave the curved boundary by O(step²); pulling
        // the candidate back toward the anchor keeps acceptance possible at
        // useful step sizes.
        self.restore_feasibility(&mut candidate);
        let old = self.goal_objective(goal, &state.delta);
        let new = self.goal_objective(goal, &candidate.delta);
        if new > old {
            *state = candidate;
            Some(new - old)
        } else {
            None
        }
    }

    /// Per-coordinate inflation until no scaling can grow by 0.1%, visiting
    /// the coordinates the goal cares most about first.
    fn polish(&self, goal: Goal, state: &mut State) {
        for _round in 0..40 {
            let grad = self.goal_gradient(goal, &state.delta);
            let mut order: Vec<usize> = (0..self.n).collect();
            order.sort_by(|&a, &b| grad[b].partial_cmp(&grad[a]).unwrap().then(a.cmp(&b)));
            let mut grew = false;
            for &i in &order {
                let base = state.delta[i];
                let feasible = |t: f64| -> bool {
                    let mut d = state.delta.clone();
                    d[i] = base + t;
                    self.worst_residual(&d, &state.beta) <= 0.0
                };
                let headroom = bisect_largest(2.0 * self.params.t_max(), feasible);
                if headroom > 1e-3 * base.max(1e-6) {
                    state.delta[i] = base + 0.999 * headroom;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
    }

    /// Shrink toward the anchor until every sign-pattern point is inside the
    /// closed body. The body residual is convex along the shrink, so the
    /// feasible scalings form an interval.
    fn restore_feasibility(&self, state: &mut State) {
        if self.worst_residual(&state.delta, &state.beta) <= 0.0 {
            return;
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let delta: Vec<f64> = state.delta.iter().map(|d| d * mid).collect();
            if self.worst_residual(&delta, &state.beta) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for d in &mut state.delta {
            *d *= lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> ConstraintParams {
        ConstraintParams::default()
    }

    #[test]
    fn schedule_endpoints_and_spacing() {
        let p = params();
        let s = interior_schedule(&p, 2);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], Vector3::new(0.0, 0.0, 9.81));
        assert_eq!(s[1], Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(s[2], Vector3::new(0.0, 0.0, -9.81));

        let s1 = interior_schedule(&p, 1);
        assert_eq!(s1.len(), 2);
        assert_eq!(s1[0].z, 9.81);
        assert_eq!(s1[1].z, -9.81);

        assert_eq!(interior_schedule(&p, 0), vec![Vector3::new(0.0, 0.0, 9.81)]);

        for v in interior_schedule(&p, 7) {
            assert!(p.flat_convex_residual(&v) <= 1e-12);
        }
    }

    #[test]
    fn inscribed_cube_half_width() {
        let (a, hull) = inscribed_cube(&params()).unwrap();
        assert_abs_diff_eq!(a, 1.0875, epsilon = 5e-4);
        assert_abs_diff_eq!(hull.volume(), 10.29, epsilon = 0.02);
        assert_eq!(hull.n_vertices(), 8);
        assert_eq!(hull.n_halfspaces(), 6);
    }

    #[test]
    fn inscribed_box_half_widths() {
        let p = params();
        let (half, hull) = inscribed_box(&p).unwrap();
        assert_abs_diff_eq!(half.x, 0.815, epsilon = 5e-3);
        assert_abs_diff_eq!(half.y, 0.815, epsilon = 5e-3);
        assert_abs_diff_eq!(half.z, 3.270, epsilon = 5e-3);
        assert_abs_diff_eq!(hull.volume(), 17.39, epsilon = 0.05);
        for c in box_corners(&half) {
            assert!(p.flat_convex_residual(&c) <= 1e-9);
        }
        // the worst corner sits essentially on the cone
        let worst = Vector3::new(half.x, half.y, -half.z);
        assert!(p.flat_convex_residual(&worst).abs() <= 1e-2);
    }

    #[test]
    fn box_solve_matches_analytic_construction() {
        // The general scaling optimizer with the center frozen at the origin
        // must find the same box the closed form gives.
        let p = params();
        let cfg = ApproxConfig::default();
        let gens = Matrix3xX::identity(3);
        let (z, log) = maximize_zonotope_with(
            &gens,
            &Vector3::zeros(),
            &p,
            &cfg,
            SolveOptions { fix_center: true, tie_scalings: false },
        )
        .unwrap();
        assert!(log.residual <= 1e-9);
        assert_abs_diff_eq!(z.scaling()[0], 0.815, epsilon = 5e-3);
        assert_abs_diff_eq!(z.scaling()[1], 0.815, epsilon = 5e-3);
        assert_abs_diff_eq!(z.scaling()[2], 3.270, epsilon = 5e-3);
        assert!(z.center().norm() <= 1e-12);
    }

    #[test]
    fn tied_solve_matches_cube() {
        let p = params();
        let cfg = ApproxConfig::default();
        let gens = Matrix3xX::identity(3);
        let (z, _) = maximize_zonotope_with(
            &gens,
            &Vector3::zeros(),
            &p,
            &cfg,
            SolveOptions { fix_center: true, tie_scalings: true },
        )
        .unwrap();
        for d in z.scaling() {
            assert_abs_diff_eq!(*d, 1.0875, epsilon = 5e-4);
        }
    }

    #[test]
    fn anchor_outside_body_is_rejected() {
        let p = params();
        let cfg = ApproxConfig::default();
        let err = maximize_zonotope(&cfg.generators, &Vector3::new(5.0, 5.0, 5.0), &p, &cfg);
        assert!(matches!(err, Err(ApproxError::InfeasibleStart(_, _))));
    }

    #[test]
    fn boundary_anchor_yields_degenerate_zonotope_containing_it() {
        let p = params();
        let cfg = ApproxConfig::default();
        let apex = Vector3::new(0.0, 0.0, -p.g());
        let z = maximize_zonotope(&cfg.generators, &apex, &p, &cfg).unwrap();
        assert!(z.contains(&apex, 1e-9));
        assert!(z.volume_objective() <= 1e-9);
        for v in z.vertex_candidates().unwrap() {
            assert!(p.flat_convex_residual(&v) <= 1e-9);
        }
    }

    #[test]
    fn interior_anchor_zonotope_is_fat_and_feasible() {
        let p = params();
        let cfg = ApproxConfig::default();
        let (z, log) = maximize_zonotope_with(
            &cfg.generators,
            &Vector3::zeros(),
            &p,
            &cfg,
            SolveOptions::default(),
        )
        .unwrap();
        assert!(log.objective > 1.0, "objective {} too small", log.objective);
        assert!(z.contains(&Vector3::zeros(), 1e-9));
        for v in z.vertex_candidates().unwrap() {
            let r = p.flat_convex_residual(&v);
            assert!(r <= 1e-12, "residual {r}");
        }
        // local maximality: no single scaling grows by 0.25% and stays inside
        for i in 0..z.n_generators() {
            let mut scaled: Vec<f64> = z.scaling().to_vec();
            if scaled[i] <= 1e-9 {
                continue;
            }
            scaled[i] *= 1.0025;
            let bigger = Zonotope::new(z.generators().clone(), z.center(), scaled).unwrap();
            let worst = bigger
                .vertex_candidates()
                .unwrap()
                .iter()
                .map(|v| p.flat_convex_residual(v))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst > 0.0, "scaling {i} can still grow");
        }
    }

    #[test]
    fn containment_checks_run() {
        let p = params();
        let (_, hull) = inscribed_box(&p).unwrap();
        let inside = check_polytope_in_body(&hull, &p, 5_000, 1e-6, 1);
        assert_eq!(inside.violations, 0);
        assert!(inside.worst <= 1e-6);
        let preimage = check_body_in_exact_preimage(&p, 2_000, 16, 2);
        assert_eq!(preimage.violations, 0);
    }
}
