//! Scenario description: robots, workspace spheroid, horizon and boundary states.

use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative margin applied to the strict workspace-membership test.
pub const WORKSPACE_MARGIN: f64 = 1e-9;

/// Pairwise safety spheroid. `a` and `b` are the summed semi-axis scales used
/// directly in the inter-robot constraint `(x/a)^2 + (y/a)^2 + (z/b)^2 >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotShape {
    pub a: f64,
    pub b: f64,
}

impl RobotShape {
    /// Signed margin of the inter-robot constraint for relative position `r`.
    /// Negative values are violations.
    pub fn margin(&self, r: &Vector3<f64>) -> f64 {
        (r.x / self.a).powi(2) + (r.y / self.a).powi(2) + (r.z / self.b).powi(2) - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSpec {
    pub center: Vector3<f64>,
    pub a_w: f64,
    pub b_w: f64,
}

impl WorkspaceSpec {
    /// Signed containment margin; positive values are outside the workspace.
    pub fn margin(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.center;
        (d.x / self.a_w).powi(2) + (d.y / self.a_w).powi(2) + (d.z / self.b_w).powi(2) - 1.0
    }

    pub fn strictly_contains(&self, p: &Vector3<f64>) -> bool {
        self.margin(p) < -WORKSPACE_MARGIN
    }
}

/// Position, velocity and acceleration at one end of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointState {
    pub p: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub v: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub a: Vector3<f64>,
}

impl EndpointState {
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            a: Vector3::zeros(),
        }
    }

    /// Derivative of order `order` (0 = position, 1 = velocity, 2 = acceleration).
    pub fn derivative(&self, order: usize) -> &Vector3<f64> {
        match order {
            0 => &self.p,
            1 => &self.v,
            2 => &self.a,
            _ => panic!("derivative order {order} out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotBoundary {
    pub start: EndpointState,
    pub goal: EndpointState,
}

/// Immutable scenario description. `horizon` is the index of the last sample,
/// so trajectories are sampled at `horizon + 1` uniformly spaced instants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmProblem {
    pub n: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "T")]
    pub duration: f64,
    #[serde(flatten)]
    pub shape: RobotShape,
    pub workspace: WorkspaceSpec,
    pub boundary: Vec<RobotBoundary>,
}

impl SwarmProblem {
    pub fn samples(&self) -> usize {
        self.horizon + 1
    }

    /// Number of unordered robot pairs.
    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    /// Robot pairs `(i, j)` with `i < j` in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        lexicographic_pairs(self.n)
    }

    /// Checks every invariant and returns the problem unchanged when all hold.
    pub fn validated(self) -> Result<Self, ProblemError> {
        validate_problem(&self)?;
        Ok(self)
    }
}

pub fn lexicographic_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    Goal,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Start => f.write_str("start"),
            Endpoint::Goal => f.write_str("goal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemIssue {
    #[error("non-positive geometry: {field} = {value}")]
    NonPositiveGeometry { field: &'static str, value: f64 },
    #[error("robot count must be at least 1")]
    NoRobots,
    #[error("horizon must be at least 1 (got {0})")]
    HorizonTooShort(usize),
    #[error("duration must be positive and finite (got {0})")]
    NonPositiveDuration(f64),
    #[error("expected {expected} boundary entries, found {found}")]
    BoundaryCount { expected: usize, found: usize },
    #[error("robot {robot}: start position lies outside the workspace")]
    StartOutsideWorkspace { robot: usize },
    #[error("robot {robot}: goal position lies outside the workspace")]
    GoalOutsideWorkspace { robot: usize },
    #[error("robots {i} and {j} collide at their {endpoint} positions (margin {margin:.3e})")]
    EndpointCollision {
        i: usize,
        j: usize,
        endpoint: Endpoint,
        margin: f64,
    },
}

/// All invariant violations found in a problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ProblemError {
    pub issues: Vec<ProblemIssue>,
}

impl fmt::Display for ProblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid problem ({} issue(s))", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "; {issue}")?;
        }
        Ok(())
    }
}

pub fn validate_problem(problem: &SwarmProblem) -> Result<(), ProblemError> {
    let mut issues = Vec::new();
    let positive = |field: &'static str, value: f64, issues: &mut Vec<ProblemIssue>| {
        if !(value > 0.0 && value.is_finite()) {
            issues.push(ProblemIssue::NonPositiveGeometry { field, value });
        }
    };
    positive("a", problem.shape.a, &mut issues);
    positive("b", problem.shape.b, &mut issues);
    positive("a_w", problem.workspace.a_w, &mut issues);
    positive("b_w", problem.workspace.b_w, &mut issues);
    let geometry_ok = issues.is_empty();

    if problem.n == 0 {
        issues.push(ProblemIssue::NoRobots);
    }
    if problem.horizon < 1 {
        issues.push(ProblemIssue::HorizonTooShort(problem.horizon));
    }
    if !(problem.duration > 0.0 && problem.duration.is_finite()) {
        issues.push(ProblemIssue::NonPositiveDuration(problem.duration));
    }
    if problem.boundary.len() != problem.n {
        issues.push(ProblemIssue::BoundaryCount {
            expected: problem.n,
            found: problem.boundary.len(),
        });
    }

    // Spheroid tests are meaningless with degenerate axes.
    if geometry_ok {
        let ws = &problem.workspace;
        for (robot, bc) in problem.boundary.iter().enumerate() {
            if !ws.strictly_contains(&bc.start.p) {
                issues.push(ProblemIssue::StartOutsideWorkspace { robot });
            }
            if !ws.strictly_contains(&bc.goal.p) {
                issues.push(ProblemIssue::GoalOutsideWorkspace { robot });
            }
        }
        let m = problem.boundary.len();
        for (i, j) in lexicographic_pairs(m) {
            let (bi, bj) = (&problem.boundary[i], &problem.boundary[j]);
            for (endpoint, pi, pj) in [
                (Endpoint::Start, &bi.start.p, &bj.start.p),
                (Endpoint::Goal, &bi.goal.p, &bj.goal.p),
            ] {
                let margin = problem.shape.margin(&(pi - pj));
                if margin < -WORKSPACE_MARGIN {
                    issues.push(ProblemIssue::EndpointCollision {
                        i,
                        j,
                        endpoint,
                        margin,
                    });
                }
            }
        }
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(ProblemError { issues })
    }
}

/// Optional solver and sampler settings a problem file may carry. Command-line
/// flags take precedence over these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileSettings {
    #[serde(default, rename = "m", skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    #[serde(flatten)]
    pub problem: SwarmProblem,
    #[serde(flatten)]
    pub settings: FileSettings,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed problem document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ProblemError),
}

impl ProblemFile {
    /// Parses and validates a problem document.
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let file: ProblemFile = serde_json::from_str(text)?;
        validate_problem(&file.problem)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
