//! Proposal batches and warm starts: a seeded smooth sampler plus JSON file
//! exchange with external generators.
//!
//! File schema (proposals):
//!
//! ```json
//! { "dim": 132, "count": 2, "n": 4, "m": 10, "H": 50,
//!   "source": "sampled", "seed": 7, "spread": 0.2,
//!   "data": [[...132 numbers...], [...]] }
//! ```
//!
//! Warm starts use the same sidecar fields with `xi0` and optional `lambda0`
//! arrays of arrays in place of `data`. `n`, `m` and `H` are optional on
//! input but checked against the active problem when present.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenarios::straight_line;
use crate::solver::SafetyFilter;

/// Per-mode variance ratio of the sampler's sine perturbation.
pub const VARIANCE_DECAY: f64 = 0.7;
pub const DEFAULT_SPREAD: f64 = 0.2;
/// Raw boundary residual (relative to `1 + ||b||_inf`) above which loaded
/// proposals are projected.
pub const LOAD_PROJECTION_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid sampler argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Projection(#[from] crate::projection::ProjectionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Sampled { seed: u64, spread: f64 },
    /// `projected` lists entries that arrived off the boundary manifold and
    /// were projected on load.
    Loaded { projected: Vec<usize> },
}

/// Boundary-feasible proposals ready for filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBatch {
    pub proposals: Vec<DVector<f64>>,
    pub provenance: Provenance,
}

impl ProposalBatch {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }
}

/// Initial `(xi, lambda)` for the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub xi0: DVector<f64>,
    pub lambda0: DVector<f64>,
}

impl WarmStart {
    pub fn zeros(dim: usize) -> Self {
        Self {
            xi0: DVector::zeros(dim),
            lambda0: DVector::zeros(dim),
        }
    }
}

/// Draws `count` smooth perturbations of the straight start-to-goal motion and
/// projects each onto the boundary conditions.
///
/// Each robot/axis coefficient block receives
/// `sum_j g_j sin(j pi k / m)` with `g_j ~ N(0, (spread * extent)^2 * 0.7^(j-1))`,
/// where `extent` is the workspace semi-axis of that axis. The sine modes
/// vanish at both ends so the perturbation leaves endpoints in place.
pub fn sample_proposals(
    filter: &SafetyFilter,
    count: usize,
    seed: u64,
    spread: f64,
) -> Result<ProposalBatch, ProposalError> {
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(ProposalError::InvalidArgument(format!(
            "spread must be non-negative, got {spread}"
        )));
    }
    let problem = filter.problem();
    let basis = filter.basis();
    let layout = filter.layout();
    let m = basis.degree;
    let base = straight_line(problem, basis);
    let extents = [problem.workspace.a_w, problem.workspace.a_w, problem.workspace.b_w];

    // modes[j][k] = sin((j + 1) pi k / m)
    let modes: Vec<Vec<f64>> = (1..=m)
        .map(|j| {
            (0..=m)
                .map(|k| (j as f64 * std::f64::consts::PI * k as f64 / m as f64).sin())
                .collect()
        })
        .collect();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut proposals = Vec::with_capacity(count);
    for _ in 0..count {
        let mut xi = base.clone();
        for (axis, extent) in extents.iter().enumerate() {
            for robot in 0..problem.n {
                let off = layout.offset(axis, robot);
                for (j, mode) in modes.iter().enumerate() {
                    let sigma = spread * extent * VARIANCE_DECAY.powi(j as i32).sqrt();
                    let g = sigma * std_normal.sample(&mut rng);
                    for (k, &phi) in mode.iter().enumerate() {
                        xi[off + k] += g * phi;
                    }
                }
            }
        }
        proposals.push(filter.projector().project(&xi)?);
    }
    Ok(ProposalBatch {
        proposals,
        provenance: Provenance::Sampled { seed, spread },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalFile {
    dim: usize,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    data: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WarmStartFile {
    dim: usize,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    xi0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda0: Option<Vec<Vec<f64>>>,
}

fn read(path: &Path) -> Result<String, ProposalError> {
    fs::read_to_string(path).map_err(|source| ProposalError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: String) -> Result<(), ProposalError> {
    fs::write(path, text).map_err(|source| ProposalError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn check_sidecar(filter: &SafetyFilter, n: Option<usize>, m: Option<usize>, h: Option<usize>) -> Result<(), ProposalError> {
    let expected = [
        ("n", n, filter.problem().n),
        ("m", m, filter.basis().degree),
        ("H", h, filter.problem().horizon),
    ];
    for (what, got, want) in expected {
        if let Some(got) = got {
            if got != want {
                return Err(ProposalError::DimensionMismatch {
                    what: format!("sidecar field {what}"),
                    expected: want,
                    actual: got,
                });
            }
        }
    }
    Ok(())
}

fn check_rows(rows: &[Vec<f64>], dim: usize, count: usize, field: &str, expected: usize) -> Result<(), ProposalError> {
    if dim != expected {
        return Err(ProposalError::DimensionMismatch {
            what: "coefficient length (dim)".into(),
            expected,
            actual: dim,
        });
    }
    if rows.len() != count {
        return Err(ProposalError::SchemaMismatch(format!(
            "count is {count} but {field} holds {} rows",
            rows.len()
        )));
    }
    for (idx, row) in rows.iter().enumerate() {
        if row.len() != expected {
            return Err(ProposalError::DimensionMismatch {
                what: format!("{field}[{idx}] length"),
                expected,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ProposalError::SchemaMismatch(format!("{field}[{idx}] has non-finite entries")));
        }
    }
    Ok(())
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ProposalError> {
    serde_json::from_str(text).map_err(|e| ProposalError::SchemaMismatch(e.to_string()))
}

pub fn save_proposals(
    batch: &ProposalBatch,
    filter: &SafetyFilter,
    meta: Option<serde_json::Value>,
    path: &Path,
) -> Result<(), ProposalError> {
    let file = ProposalFile {
        dim: filter.layout().dim(),
        count: batch.len(),
        n: Some(filter.problem().n),
        m: Some(filter.basis().degree),
        horizon: Some(filter.problem().horizon),
        provenance: Some(batch.provenance.clone()),
        meta,
        data: batch.proposals.iter().map(|p| p.as_slice().to_vec()).collect(),
    };
    write(path, serde_json::to_string_pretty(&file).expect("serializable"))
}

/// Parses a proposal document against the active problem, projecting entries
/// whose raw boundary residual exceeds the load tolerance.
pub fn parse_proposals(text: &str, filter: &SafetyFilter) -> Result<ProposalBatch, ProposalError> {
    let file: ProposalFile = parse(text)?;
    check_sidecar(filter, file.n, file.m, file.horizon)?;
    check_rows(&file.data, file.dim, file.count, "data", filter.layout().dim())?;
    let eq = filter.equality();
    let tol = LOAD_PROJECTION_TOL * eq.scale();
    let mut projected = Vec::new();
    let mut proposals = Vec::with_capacity(file.count);
    for (idx, row) in file.data.into_iter().enumerate() {
        let xi = DVector::from_vec(row);
        if eq.residual_inf(&xi) > tol {
            projected.push(idx);
            proposals.push(filter.projector().project(&xi)?);
        } else {
            proposals.push(xi);
        }
    }
    Ok(ProposalBatch {
        proposals,
        provenance: Provenance::Loaded { projected },
    })
}

pub fn load_proposals(path: &Path, filter: &SafetyFilter) -> Result<ProposalBatch, ProposalError> {
    parse_proposals(&read(path)?, filter)
}

pub fn save_warmstart(
    starts: &[WarmStart],
    filter: &SafetyFilter,
    meta: Option<serde_json::Value>,
    path: &Path,
) -> Result<(), ProposalError> {
    let file = WarmStartFile {
        dim: filter.layout().dim(),
        count: starts.len(),
        n: Some(filter.problem().n),
        m: Some(filter.basis().degree),
        horizon: Some(filter.problem().horizon),
        meta,
        xi0: starts.iter().map(|w| w.xi0.as_slice().to_vec()).collect(),
        lambda0: Some(starts.iter().map(|w| w.lambda0.as_slice().to_vec()).collect()),
    };
    write(path, serde_json::to_string_pretty(&file).expect("serializable"))
}

pub fn parse_warmstart(text: &str, filter: &SafetyFilter) -> Result<Vec<WarmStart>, ProposalError> {
    let file: WarmStartFile = parse(text)?;
    check_sidecar(filter, file.n, file.m, file.horizon)?;
    let dim = filter.layout().dim();
    check_rows(&file.xi0, file.dim, file.count, "xi0", dim)?;
    let lambdas = match file.lambda0 {
        Some(rows) => {
            check_rows(&rows, file.dim, file.count, "lambda0", dim)?;
            rows.into_iter().map(DVector::from_vec).collect()
        }
        None => vec![DVector::zeros(dim); file.count],
    };
    Ok(file
        .xi0
        .into_iter()
        .zip(lambdas)
        .map(|(xi, lambda0)| WarmStart {
            xi0: DVector::from_vec(xi),
            lambda0,
        })
        .collect())
}

pub fn load_warmstart(path: &Path, filter: &SafetyFilter) -> Result<Vec<WarmStart>, ProposalError> {
    parse_warmstart(&read(path)?, filter)
}
