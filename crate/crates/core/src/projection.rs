//! Minimal correction of a coefficient vector onto `A xi = b`.
//!
//! The projection `xi - A^T (A A^T)^{-1} (A xi - b)` is the closed-form
//! solution of `min 1/2 ||xi - xi'||^2 s.t. A xi = b`. The Cholesky factor of
//! `A A^T` depends only on the problem configuration and is shared by every
//! proposal of a batch.

use nalgebra::{Cholesky, DVector, Dyn};
use thiserror::Error;

use crate::constraints::EqualitySystem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("A A^T is numerically singular")]
    SingularSystem,
    #[error("coefficient length {actual} does not match system width {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone)]
pub struct BoundaryProjector {
    eq: EqualitySystem,
    gram: Cholesky<f64, Dyn>,
}

impl BoundaryProjector {
    pub fn new(eq: EqualitySystem) -> Result<Self, ProjectionError> {
        let aat = &eq.a * eq.a.transpose();
        let gram = aat.cholesky().ok_or(ProjectionError::SingularSystem)?;
        let diag = gram.l_dirty().diagonal();
        if diag.min() <= diag.max() * 1e-10 {
            return Err(ProjectionError::SingularSystem);
        }
        Ok(Self { eq, gram })
    }

    pub fn system(&self) -> &EqualitySystem {
        &self.eq
    }

    pub fn project(&self, xi_raw: &DVector<f64>) -> Result<DVector<f64>, ProjectionError> {
        if xi_raw.len() != self.eq.a.ncols() {
            return Err(ProjectionError::DimensionMismatch {
                expected: self.eq.a.ncols(),
                actual: xi_raw.len(),
            });
        }
        let violation = &self.eq.a * xi_raw - &self.eq.b;
        let nu = self.gram.solve(&violation);
        Ok(xi_raw - self.eq.a.tr_mul(&nu))
    }
}

/// One-shot projection; prefer [`BoundaryProjector`] when projecting many
/// vectors against the same system.
pub fn project_to_boundary(
    xi_raw: &DVector<f64>,
    eq: &EqualitySystem,
) -> Result<DVector<f64>, ProjectionError> {
    BoundaryProjector::new(eq.clone())?.project(xi_raw)
}
