//! Assembly of the boundary equality system, the pairwise/workspace operator
//! `F`, the spherical right-hand side `e`, and direct checks of the original
//! quadratic constraints.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisMatrices, CoefficientLayout, Trajectory};
use crate::problem::SwarmProblem;

/// Default tolerance on the dimensionless constraint margins.
pub const DEFAULT_MARGIN_TOL: f64 = 1e-3;
/// Boundary residual tolerance used by the constraint check, relative to
/// `1 + max|b|`.
pub const BOUNDARY_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstraintError {
    #[error("boundary system is rank deficient (smallest singular value ratio {0:.3e})")]
    RankDeficient(f64),
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

/// Boundary conditions written as `A xi = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualitySystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub layout: CoefficientLayout,
}

impl EqualitySystem {
    pub fn residual_inf(&self, xi: &DVector<f64>) -> f64 {
        (&self.a * xi - &self.b).amax()
    }

    /// Tolerance scale `1 + ||b||_inf`.
    pub fn scale(&self) -> f64 {
        1.0 + self.b.amax()
    }
}

/// Stacks position, velocity and acceleration rows at `t = 0` and `t = T` for
/// every robot and axis.
pub fn build_equality(
    problem: &SwarmProblem,
    basis: &BasisMatrices,
) -> Result<EqualitySystem, ConstraintError> {
    let layout = CoefficientLayout::new(problem.n, basis);
    let k = layout.per_axis;
    let last = basis.samples() - 1;
    let derivs = [&basis.w, &basis.wd, &basis.wdd];

    // Every (robot, axis) block uses the same 6 x k row block.
    let mut block = DMatrix::zeros(6, k);
    for (order, mat) in derivs.iter().enumerate() {
        block.row_mut(order).copy_from(&mat.row(0));
        block.row_mut(3 + order).copy_from(&mat.row(last));
    }
    let sv = block.clone().singular_values();
    let ratio = if sv.max() > 0.0 { sv.min() / sv.max() } else { 0.0 };
    if sv.len() < 6 || ratio < 1e-12 {
        return Err(ConstraintError::RankDeficient(ratio));
    }

    let rows = 18 * problem.n;
    let mut a = DMatrix::zeros(rows, layout.dim());
    let mut b = DVector::zeros(rows);
    for axis in 0..3 {
        for robot in 0..problem.n {
            let row0 = (axis * problem.n + robot) * 6;
            let col0 = layout.offset(axis, robot);
            a.view_mut((row0, col0), (6, k)).copy_from(&block);
            let bc = &problem.boundary[robot];
            for order in 0..3 {
                b[row0 + order] = bc.start.derivative(order)[axis];
                b[row0 + 3 + order] = bc.goal.derivative(order)[axis];
            }
        }
    }
    Ok(EqualitySystem { a, b, layout })
}

/// The operator `F`: per axis, pairwise position differences (lexicographic
/// pairs, one block of `samples` rows each) followed by every robot's
/// position samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseOperator {
    pub layout: CoefficientLayout,
    pub pairs: Vec<(usize, usize)>,
    /// Position sampling matrix applied to each coefficient block.
    pub sampling: DMatrix<f64>,
    sampling_t: DMatrix<f64>,
}

pub fn build_f(problem: &SwarmProblem, basis: &BasisMatrices) -> PairwiseOperator {
    PairwiseOperator {
        layout: CoefficientLayout::new(problem.n, basis),
        pairs: problem.pairs(),
        sampling: basis.w.clone(),
        sampling_t: basis.w.transpose(),
    }
}

impl PairwiseOperator {
    pub fn samples(&self) -> usize {
        self.sampling.nrows()
    }

    pub fn robots(&self) -> usize {
        self.layout.robots
    }

    /// Rows per axis.
    pub fn axis_rows(&self) -> usize {
        (self.pairs.len() + self.robots()) * self.samples()
    }

    pub fn rows(&self) -> usize {
        3 * self.axis_rows()
    }

    pub fn cols(&self) -> usize {
        self.layout.dim()
    }

    /// Offset of the first workspace row within one axis block.
    pub fn workspace_offset(&self) -> usize {
        self.pairs.len() * self.samples()
    }

    pub fn apply(&self, xi: &DVector<f64>) -> DVector<f64> {
        let s = self.samples();
        let k = self.layout.per_axis;
        let n = self.robots();
        let mut out = DVector::zeros(self.rows());
        for axis in 0..3 {
            let base = axis * self.axis_rows();
            let positions: Vec<DVector<f64>> = (0..n)
                .map(|r| &self.sampling * xi.rows(self.layout.offset(axis, r), k))
                .collect();
            for (p, &(i, j)) in self.pairs.iter().enumerate() {
                out.rows_mut(base + p * s, s)
                    .copy_from(&(&positions[i] - &positions[j]));
            }
            let ws = base + self.workspace_offset();
            for (r, pos) in positions.iter().enumerate() {
                out.rows_mut(ws + r * s, s).copy_from(pos);
            }
        }
        out
    }

    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        let s = self.samples();
        let k = self.layout.per_axis;
        let n = self.robots();
        let mut out = DVector::zeros(self.cols());
        for axis in 0..3 {
            let base = axis * self.axis_rows();
            let ws = base + self.workspace_offset();
            let mut acc: Vec<DVector<f64>> = (0..n)
                .map(|r| v.rows(ws + r * s, s).into_owned())
                .collect();
            for (p, &(i, j)) in self.pairs.iter().enumerate() {
                let block = v.rows(base + p * s, s);
                acc[i] += block;
                acc[j] -= block;
            }
            for (r, sum) in acc.iter().enumerate() {
                out.rows_mut(self.layout.offset(axis, r), k)
                    .copy_from(&(&self.sampling_t * sum));
            }
        }
        out
    }

    /// Explicit dense matrix; intended for checks and small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.samples();
        let k = self.layout.per_axis;
        let mut f = DMatrix::zeros(self.rows(), self.cols());
        for axis in 0..3 {
            let base = axis * self.axis_rows();
            for (p, &(i, j)) in self.pairs.iter().enumerate() {
                f.view_mut((base + p * s, self.layout.offset(axis, i)), (s, k))
                    .copy_from(&self.sampling);
                f.view_mut((base + p * s, self.layout.offset(axis, j)), (s, k))
                    .copy_from(&(-&self.sampling));
            }
            let ws = base + self.workspace_offset();
            for r in 0..self.robots() {
                f.view_mut((ws + r * s, self.layout.offset(axis, r)), (s, k))
                    .copy_from(&self.sampling);
            }
        }
        f
    }

    /// `F^T F`, assembled from `W^T W`: each robot appears in `n - 1` pair
    /// blocks plus its own workspace block.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.layout.per_axis;
        let n = self.robots();
        let g = &self.sampling_t * &self.sampling;
        let mut out = DMatrix::zeros(self.cols(), self.cols());
        for axis in 0..3 {
            for i in 0..n {
                for j in 0..n {
                    let scale = if i == j { n as f64 } else { -1.0 };
                    out.view_mut((self.layout.offset(axis, i), self.layout.offset(axis, j)), (k, k))
                        .copy_from(&(&g * scale));
                }
            }
        }
        out
    }
}

/// Angles and normalized distances of one family of spherical terms, indexed
/// `term * samples + t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SphericalBlock {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub d: Vec<f64>,
}

impl SphericalBlock {
    pub fn zeros(len: usize) -> Self {
        Self {
            alpha: vec![0.0; len],
            beta: vec![0.0; len],
            d: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Cartesian offset `d * (s_a cos(alpha) sin(beta), s_a sin(alpha) sin(beta), s_b cos(beta))`.
    pub fn offset(&self, idx: usize, a_scale: f64, b_scale: f64) -> Vector3<f64> {
        let (al, be, d) = (self.alpha[idx], self.beta[idx], self.d[idx]);
        Vector3::new(
            a_scale * d * al.cos() * be.sin(),
            a_scale * d * al.sin() * be.sin(),
            b_scale * d * be.cos(),
        )
    }
}

/// Spherical variables for all pair terms and all workspace terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SphericalVars {
    pub pairs: SphericalBlock,
    pub workspace: SphericalBlock,
}

impl SphericalVars {
    pub fn zeros(pair_terms: usize, workspace_terms: usize) -> Self {
        Self {
            pairs: SphericalBlock::zeros(pair_terms),
            workspace: SphericalBlock::zeros(workspace_terms),
        }
    }
}

/// Right-hand side `e(alpha, beta, d)` laid out like `F xi`.
pub fn build_e(vars: &SphericalVars, problem: &SwarmProblem) -> Result<DVector<f64>, ConstraintError> {
    let s = problem.samples();
    let pair_terms = problem.pair_count() * s;
    let ws_terms = problem.n * s;
    if vars.pairs.len() != pair_terms {
        return Err(ConstraintError::DimensionMismatch {
            what: "pair spherical variables",
            expected: pair_terms,
            actual: vars.pairs.len(),
        });
    }
    if vars.workspace.len() != ws_terms {
        return Err(ConstraintError::DimensionMismatch {
            what: "workspace spherical variables",
            expected: ws_terms,
            actual: vars.workspace.len(),
        });
    }
    let axis_rows = pair_terms + ws_terms;
    let (a, b) = (problem.shape.a, problem.shape.b);
    let ws = &problem.workspace;
    let mut e = DVector::zeros(3 * axis_rows);
    for idx in 0..pair_terms {
        let v = vars.pairs.offset(idx, a, b);
        for axis in 0..3 {
            e[axis * axis_rows + idx] = v[axis];
        }
    }
    for idx in 0..ws_terms {
        let v = ws.center + vars.workspace.offset(idx, ws.a_w, ws.b_w);
        for axis in 0..3 {
            e[axis * axis_rows + pair_terms + idx] = v[axis];
        }
    }
    Ok(e)
}

/// Closed-form spherical fit of one relative vector. Returns `(alpha, beta,
/// d*)` with `d*` unclamped. A zero vector falls back to `alpha = 0`,
/// `beta = pi/2`, `d* = 0`.
pub fn spherical_fit(rel: &Vector3<f64>, a_scale: f64, b_scale: f64) -> (f64, f64, f64) {
    let rxy = rel.x.hypot(rel.y);
    if rxy == 0.0 && rel.z == 0.0 {
        return (0.0, FRAC_PI_2, 0.0);
    }
    let alpha = rel.y.atan2(rel.x);
    let beta = (rxy / a_scale).atan2(rel.z / b_scale);
    let (sb, cb) = beta.sin_cos();
    let d = (a_scale * sb * rxy + b_scale * cb * rel.z)
        / (a_scale * a_scale * sb * sb + b_scale * b_scale * cb * cb);
    (alpha, beta, d)
}

/// Margins of the original quadratic constraints for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMargins {
    pub i: usize,
    pub j: usize,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub tol: f64,
    /// `[robot][t]`; feasible when `<= tol`.
    pub workspace: Vec<Vec<f64>>,
    /// Feasible when every margin is `>= -tol`.
    pub pairs: Vec<PairMargins>,
    /// `max |A xi - b|`, evaluated from the trajectory endpoints.
    pub boundary_residual: f64,
    pub boundary_tol: f64,
    pub worst_workspace: f64,
    pub worst_pair: f64,
    pub feasible: bool,
}

impl ViolationReport {
    /// Largest violation of either inequality family (0 when satisfied).
    pub fn worst_violation(&self) -> f64 {
        self.worst_workspace.max(-self.worst_pair).max(0.0)
    }

    pub const CSV_HEADER: &'static str =
        "id,feasible,worst_workspace_margin,worst_pair_margin,boundary_residual";

    pub fn csv_row(&self, id: usize) -> String {
        format!(
            "{id},{},{:?},{:?},{:?}",
            self.feasible, self.worst_workspace, self.worst_pair, self.boundary_residual
        )
    }
}

pub fn check_original_constraints(traj: &Trajectory, problem: &SwarmProblem, tol: f64) -> ViolationReport {
    let workspace: Vec<Vec<f64>> = traj
        .robots
        .iter()
        .map(|r| r.position.iter().map(|p| problem.workspace.margin(p)).collect())
        .collect();
    let pairs: Vec<PairMargins> = problem
        .pairs()
        .into_iter()
        .filter(|&(_, j)| j < traj.robots.len())
        .map(|(i, j)| PairMargins {
            i,
            j,
            margins: traj.robots[i]
                .position
                .iter()
                .zip(&traj.robots[j].position)
                .map(|(pi, pj)| problem.shape.margin(&(pi - pj)))
                .collect(),
        })
        .collect();

    let mut boundary_residual: f64 = 0.0;
    let mut b_max: f64 = 0.0;
    let last = traj.samples().saturating_sub(1);
    for (r, bc) in traj.robots.iter().zip(&problem.boundary) {
        let observed = [
            (&r.position[0], &bc.start.p),
            (&r.velocity[0], &bc.start.v),
            (&r.acceleration[0], &bc.start.a),
            (&r.position[last], &bc.goal.p),
            (&r.velocity[last], &bc.goal.v),
            (&r.acceleration[last], &bc.goal.a),
        ];
        for (got, want) in observed {
            boundary_residual = boundary_residual.max((got - want).amax());
            b_max = b_max.max(want.amax());
        }
    }
    let boundary_tol = BOUNDARY_CHECK_TOL * (1.0 + b_max);

    let worst_workspace = workspace
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_pair = pairs
        .iter()
        .flat_map(|p| p.margins.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let feasible = traj.robots.len() == problem.n
        && worst_workspace <= tol
        && (pairs.is_empty() || worst_pair >= -tol)
        && boundary_residual <= boundary_tol;
    ViolationReport {
        tol,
        workspace,
        pairs,
        boundary_residual,
        boundary_tol,
        worst_workspace,
        worst_pair,
        feasible,
    }
}
