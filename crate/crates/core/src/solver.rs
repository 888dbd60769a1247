//! Alternating-minimization safety filter.
//!
//! Minimizes `1/2 ||xi - xi_bar||^2` subject to `A xi = b` and
//! `F xi = e(alpha, beta, d)` with `d` box-bounded, by cycling through the
//! closed-form spherical step, the multiplier update and the
//! equality-constrained `xi` step. Each iteration is a fixed-point map
//! `(xi, lambda) -> (xi', lambda')`.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisMatrices, CoefficientLayout};
use crate::constraints::{
    build_e, build_equality, build_f, spherical_fit, ConstraintError, EqualitySystem,
    PairwiseOperator, SphericalVars,
};
use crate::problem::SwarmProblem;
use crate::projection::{BoundaryProjector, ProjectionError};
use crate::proposals::WarmStart;
use crate::serde_vec;

pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL_RESIDUAL: f64 = 1e-3;
pub const DEFAULT_TOL_EQ: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub max_iters: usize,
    /// Threshold on `||r_p||_inf` for convergence.
    pub tol_residual: f64,
    /// Boundary residual bound, relative to `1 + ||b||_inf`.
    pub tol_eq: f64,
    /// Stop as soon as the residual threshold is met. Disable to always run
    /// `max_iters` iterations.
    pub early_stop: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            max_iters: DEFAULT_MAX_ITERS,
            tol_residual: DEFAULT_TOL_RESIDUAL,
            tol_eq: DEFAULT_TOL_EQ,
            early_stop: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.tol_residual.is_nan() || self.tol_eq.is_nan() || self.tol_residual <= 0.0 || self.tol_eq <= 0.0 {
            return Err(SolverError::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} has length {actual}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("KKT system is singular")]
    SingularKkt,
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Factorized KKT system `[[I + rho F^T F, A^T], [A, 0]]`, solved by the
/// range-space method: Cholesky of the (1,1) block and of the Schur
/// complement `A Q^{-1} A^T`.
#[derive(Debug, Clone)]
pub struct KktSystem {
    rho: f64,
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    q_chol: Cholesky<f64, Dyn>,
    schur_chol: Cholesky<f64, Dyn>,
    /// `Q^{-1} A^T`, obtained column-wise from the Cholesky factor.
    q_inv_at: DMatrix<f64>,
}

impl KktSystem {
    /// `rho = 0` is allowed here and reduces the step to a plain boundary
    /// projection.
    pub fn new(eq: &EqualitySystem, op: &PairwiseOperator, rho: f64) -> Result<Self, SolverError> {
        let n = eq.a.ncols();
        if op.cols() != n {
            return Err(SolverError::DimensionMismatch {
                what: "pairwise operator width",
                expected: n,
                actual: op.cols(),
            });
        }
        let mut q = op.gram() * rho;
        for i in 0..n {
            q[(i, i)] += 1.0;
        }
        let q_chol = q.clone().cholesky().ok_or(SolverError::SingularKkt)?;
        let q_inv_at = q_chol.solve(&eq.a.transpose());
        let schur = &eq.a * &q_inv_at;
        let schur_chol = schur.cholesky().ok_or(SolverError::SingularKkt)?;
        let diag = schur_chol.l_dirty().diagonal();
        if diag.min() <= diag.max() * 1e-10 {
            return Err(SolverError::SingularKkt);
        }
        Ok(Self {
            rho,
            a: eq.a.clone(),
            q,
            q_chol,
            schur_chol,
            q_inv_at,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The (1,1) block `I + rho F^T F`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Solves for `(xi, nu)` with `Q xi + A^T nu = top`, `A xi = b`.
    pub fn solve(&self, top: &DVector<f64>, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let y = self.q_chol.solve(top);
        let mut nu = self.schur_chol.solve(&(&self.a * &y - b));
        let mut xi = y - &self.q_inv_at * &nu;
        // one refinement pass on the equality block
        let correction = self.schur_chol.solve(&(&self.a * &xi - b));
        xi -= &self.q_inv_at * &correction;
        nu += correction;
        (xi, nu)
    }
}

/// Residual norms of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub inf: f64,
    pub l2: f64,
}

impl ResidualNorms {
    pub fn of(r: &DVector<f64>) -> Self {
        Self {
            inf: r.amax(),
            l2: r.norm(),
        }
    }
}

/// Iterate of the fixed-point map.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub xi: DVector<f64>,
    pub lambda: DVector<f64>,
    pub vars: SphericalVars,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    #[serde(with = "serde_vec")]
    pub xi_final: DVector<f64>,
    #[serde(with = "serde_vec")]
    pub lambda_final: DVector<f64>,
    pub vars_final: SphericalVars,
    pub residual_history: Vec<ResidualNorms>,
    pub iterations_run: usize,
    pub converged: bool,
    /// `||xi* - xi_bar||_2`.
    pub displacement: f64,
    /// `||A xi* - b||_inf`.
    pub boundary_residual: f64,
}

impl SolveResult {
    pub fn final_residual(&self) -> Option<ResidualNorms> {
        self.residual_history.last().copied()
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            xi0: self.xi_final.clone(),
            lambda0: self.lambda_final.clone(),
        }
    }
}

/// How the iteration is seeded when solving one proposal.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// `xi0 = project_to_boundary(xi_bar)`, `lambda0 = 0`.
    Projected,
    /// `xi0 = 0`, `lambda0 = 0`.
    Zero,
    /// Raw proposal as `xi0`, `lambda0 = 0`.
    Proposal,
    Warm(WarmStart),
}

/// Closed-form minimization of the penalty over the spherical variables given
/// `F xi`. Pair distances are clamped below at 1, workspace distances to
/// `[0, 1]`.
pub fn spherical_step_from_image(fxi: &DVector<f64>, op: &PairwiseOperator, problem: &SwarmProblem) -> SphericalVars {
    let s = op.samples();
    let axis_rows = op.axis_rows();
    let pair_terms = op.pairs.len() * s;
    let ws_terms = op.robots() * s;
    let rel = |idx: usize| Vector3::new(fxi[idx], fxi[axis_rows + idx], fxi[2 * axis_rows + idx]);

    let mut vars = SphericalVars::zeros(pair_terms, ws_terms);
    let (a, b) = (problem.shape.a, problem.shape.b);
    for idx in 0..pair_terms {
        let (al, be, d) = spherical_fit(&rel(idx), a, b);
        vars.pairs.alpha[idx] = al;
        vars.pairs.beta[idx] = be;
        vars.pairs.d[idx] = d.max(1.0);
    }
    let ws = &problem.workspace;
    for idx in 0..ws_terms {
        let (al, be, d) = spherical_fit(&(rel(pair_terms + idx) - ws.center), ws.a_w, ws.b_w);
        vars.workspace.alpha[idx] = al;
        vars.workspace.beta[idx] = be;
        vars.workspace.d[idx] = d.clamp(0.0, 1.0);
    }
    vars
}

pub fn spherical_step(xi: &DVector<f64>, op: &PairwiseOperator, problem: &SwarmProblem) -> SphericalVars {
    spherical_step_from_image(&op.apply(xi), op, problem)
}

/// Multiplier update `lambda - rho F^T (F xi - e)`.
pub fn lambda_update(
    state: &SolverState,
    e: &DVector<f64>,
    rho: f64,
    op: &PairwiseOperator,
) -> DVector<f64> {
    lambda_update_with_image(&state.lambda, &op.apply(&state.xi), e, rho, op)
}

fn lambda_update_with_image(
    lambda: &DVector<f64>,
    fxi: &DVector<f64>,
    e: &DVector<f64>,
    rho: f64,
    op: &PairwiseOperator,
) -> DVector<f64> {
    lambda - op.apply_transpose(&(fxi - e)) * rho
}

/// Problem-specific solver with all factorizations prepared.
#[derive(Debug, Clone)]
pub struct SafetyFilter {
    problem: SwarmProblem,
    basis: BasisMatrices,
    op: PairwiseOperator,
    projector: BoundaryProjector,
    kkt: KktSystem,
    config: SolverConfig,
}

impl SafetyFilter {
    pub fn new(problem: SwarmProblem, basis: BasisMatrices, config: SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let eq = build_equality(&problem, &basis)?;
        let op = build_f(&problem, &basis);
        let kkt = KktSystem::new(&eq, &op, config.rho)?;
        let projector = BoundaryProjector::new(eq)?;
        Ok(Self {
            problem,
            basis,
            op,
            projector,
            kkt,
            config,
        })
    }

    pub fn problem(&self) -> &SwarmProblem {
        &self.problem
    }

    pub fn basis(&self) -> &BasisMatrices {
        &self.basis
    }

    pub fn operator(&self) -> &PairwiseOperator {
        &self.op
    }

    pub fn equality(&self) -> &EqualitySystem {
        self.projector.system()
    }

    pub fn projector(&self) -> &BoundaryProjector {
        &self.projector
    }

    pub fn kkt(&self) -> &KktSystem {
        &self.kkt
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn layout(&self) -> CoefficientLayout {
        self.op.layout
    }

    /// Same problem and factorizations with different iteration settings.
    /// Changing `rho` refactorizes the KKT system.
    pub fn with_config(&self, config: SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let kkt = if config.rho == self.config.rho {
            self.kkt.clone()
        } else {
            KktSystem::new(self.equality(), &self.op, config.rho)?
        };
        Ok(Self {
            kkt,
            config,
            ..self.clone()
        })
    }

    fn check_len(&self, what: &'static str, v: &DVector<f64>) -> Result<(), SolverError> {
        let expected = self.layout().dim();
        if v.len() == expected {
            Ok(())
        } else {
            Err(SolverError::DimensionMismatch {
                what,
                expected,
                actual: v.len(),
            })
        }
    }

    pub fn build_e(&self, vars: &SphericalVars) -> Result<DVector<f64>, SolverError> {
        Ok(build_e(vars, &self.problem)?)
    }

    /// Equality-constrained minimization of the augmented Lagrangian over `xi`.
    pub fn xi_step(
        &self,
        xi_bar: &DVector<f64>,
        e: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> DVector<f64> {
        xi_step(xi_bar, e, lambda, self.equality(), &self.op, &self.kkt).0
    }

    /// One pass of the fixed-point map. Returns the new state and the primal
    /// residual `F xi^{k+1} - e^{k+1}`.
    pub fn iterate(&self, state: &SolverState, xi_bar: &DVector<f64>) -> (SolverState, DVector<f64>) {
        let fxi = self.op.apply(&state.xi);
        let vars = spherical_step_from_image(&fxi, &self.op, &self.problem);
        let e = build_e(&vars, &self.problem).expect("spherical variables sized by the operator");
        let lambda = lambda_update_with_image(&state.lambda, &fxi, &e, self.config.rho, &self.op);
        let xi = self.xi_step(xi_bar, &e, &lambda);
        let residual = self.op.apply(&xi) - e;
        (
            SolverState {
                xi,
                lambda,
                vars,
                k: state.k + 1,
            },
            residual,
        )
    }

    pub fn initial_state(&self, xi_bar: &DVector<f64>, init: &Initialization) -> Result<SolverState, SolverError> {
        let dim = self.layout().dim();
        let (xi, lambda) = match init {
            Initialization::Projected => (self.projector.project(xi_bar)?, DVector::zeros(dim)),
            Initialization::Zero => (DVector::zeros(dim), DVector::zeros(dim)),
            Initialization::Proposal => (xi_bar.clone(), DVector::zeros(dim)),
            Initialization::Warm(ws) => {
                self.check_len("warm-start xi0", &ws.xi0)?;
                self.check_len("warm-start lambda0", &ws.lambda0)?;
                (ws.xi0.clone(), ws.lambda0.clone())
            }
        };
        let terms = self.op.samples();
        Ok(SolverState {
            xi,
            lambda,
            vars: SphericalVars::zeros(self.op.pairs.len() * terms, self.op.robots() * terms),
            k: 0,
        })
    }

    /// Filters one proposal. Uses the projected proposal as `xi0` and
    /// `lambda0 = 0` unless a warm start is given.
    pub fn solve(&self, xi_bar: &DVector<f64>, init: Option<&WarmStart>) -> Result<SolveResult, SolverError> {
        match init {
            Some(ws) => self.solve_with(xi_bar, &Initialization::Warm(ws.clone())),
            None => self.solve_with(xi_bar, &Initialization::Projected),
        }
    }

    pub fn solve_with(&self, xi_bar: &DVector<f64>, init: &Initialization) -> Result<SolveResult, SolverError> {
        self.check_len("proposal", xi_bar)?;
        let mut state = self.initial_state(xi_bar, init)?;
        let mut history = Vec::with_capacity(self.config.max_iters);
        for _ in 0..self.config.max_iters {
            let (next, residual) = self.iterate(&state, xi_bar);
            state = next;
            let norms = ResidualNorms::of(&residual);
            history.push(norms);
            if self.config.early_stop && norms.inf <= self.config.tol_residual {
                break;
            }
        }
        let converged = history
            .last()
            .is_some_and(|r| r.inf <= self.config.tol_residual);
        let boundary_residual = self.equality().residual_inf(&state.xi);
        Ok(SolveResult {
            displacement: (&state.xi - xi_bar).norm(),
            boundary_residual,
            iterations_run: history.len(),
            residual_history: history,
            converged,
            xi_final: state.xi,
            lambda_final: state.lambda,
            vars_final: state.vars,
        })
    }

    /// Solves every proposal independently. Results keep the input order and
    /// do not depend on the degree of parallelism; a failing item does not
    /// affect the others.
    pub fn batch_solve(
        &self,
        proposals: &[DVector<f64>],
        inits: Option<&[Initialization]>,
        threads: Option<usize>,
    ) -> Result<BatchSolve, SolverError> {
        if let Some(inits) = inits {
            if inits.len() != proposals.len() {
                return Err(SolverError::DimensionMismatch {
                    what: "initialization list",
                    expected: proposals.len(),
                    actual: inits.len(),
                });
            }
        }
        let started = Instant::now();
        let run = || -> Vec<Result<SolveResult, SolverError>> {
            proposals
                .par_iter()
                .enumerate()
                .map(|(idx, xi_bar)| {
                    let init = inits.map_or(&Initialization::Projected, |all| &all[idx]);
                    self.solve_with(xi_bar, init)
                })
                .collect()
        };
        let results = match threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| SolverError::InvalidConfig(e.to_string()))?
                .install(run),
            None => run(),
        };
        Ok(BatchSolve {
            results,
            wall_clock: started.elapsed(),
        })
    }
}

/// Solves the `xi` step through a prepared KKT factorization. Returns the
/// primal block and the equality multipliers `nu`.
pub fn xi_step(
    xi_bar: &DVector<f64>,
    e: &DVector<f64>,
    lambda: &DVector<f64>,
    eq: &EqualitySystem,
    op: &PairwiseOperator,
    kkt: &KktSystem,
) -> (DVector<f64>, DVector<f64>) {
    let top = op.apply_transpose(e) * kkt.rho() + lambda + xi_bar;
    kkt.solve(&top, &eq.b)
}

#[derive(Debug)]
pub struct BatchSolve {
    pub results: Vec<Result<SolveResult, SolverError>>,
    pub wall_clock: Duration,
}

impl BatchSolve {
    pub fn successes(&self) -> impl Iterator<Item = &SolveResult> {
        self.results.iter().filter_map(|r| r.as_ref().ok())
    }
}
