//! Built-in scenarios used by the tests, the benchmark and the CLI demos.

use nalgebra::{DVector, Vector3};

use crate::basis::{BasisMatrices, CoefficientLayout};
use crate::problem::{EndpointState, RobotBoundary, RobotShape, SwarmProblem, WorkspaceSpec};

fn at_rest(start: [f64; 3], goal: [f64; 3]) -> RobotBoundary {
    RobotBoundary {
        start: EndpointState::at_rest(Vector3::from(start)),
        goal: EndpointState::at_rest(Vector3::from(goal)),
    }
}

/// Two robots swapping places along the x axis: starts `(+-2, 0, 1)`, goals
/// mirrored.
pub fn antipodal_pair() -> SwarmProblem {
    SwarmProblem {
        n: 2,
        horizon: 50,
        duration: 5.0,
        shape: RobotShape { a: 0.6, b: 0.4 },
        workspace: WorkspaceSpec {
            center: Vector3::zeros(),
            a_w: 5.0,
            b_w: 5.0,
        },
        boundary: vec![
            at_rest([2.0, 0.0, 1.0], [-2.0, 0.0, 1.0]),
            at_rest([-2.0, 0.0, 1.0], [2.0, 0.0, 1.0]),
        ],
    }
}

/// Four robots on a circle of radius 2 crossing to the antipodal position,
/// inside a flattened workspace centered at `(0, 0, 1)`.
pub fn demo_four() -> SwarmProblem {
    SwarmProblem {
        n: 4,
        horizon: 50,
        duration: 5.0,
        shape: RobotShape { a: 0.6, b: 0.4 },
        workspace: WorkspaceSpec {
            center: Vector3::new(0.0, 0.0, 1.0),
            a_w: 4.0,
            b_w: 2.5,
        },
        boundary: vec![
            at_rest([2.0, 0.0, 1.0], [-2.0, 0.0, 1.0]),
            at_rest([0.0, 2.0, 1.0], [0.0, -2.0, 1.0]),
            at_rest([-2.0, 0.0, 1.0], [2.0, 0.0, 1.0]),
            at_rest([0.0, -2.0, 1.0], [0.0, 2.0, 1.0]),
        ],
    }
}

/// Goal shift used to build the neighbouring problem whose solutions seed the
/// warm-start comparisons.
pub const NEIGHBOUR_OFFSET: [f64; 3] = [0.15, -0.1, 0.05];

/// Copy of `problem` with every goal shifted by `offset`.
pub fn shifted_goals(problem: &SwarmProblem, offset: Vector3<f64>) -> SwarmProblem {
    let mut out = problem.clone();
    for bc in &mut out.boundary {
        bc.goal.p += offset;
    }
    out
}

/// Straight start-to-goal segments for every robot.
pub fn straight_line(problem: &SwarmProblem, basis: &BasisMatrices) -> DVector<f64> {
    let layout = CoefficientLayout::new(problem.n, basis);
    let mut xi = DVector::zeros(layout.dim());
    for (robot, bc) in problem.boundary.iter().enumerate() {
        for axis in 0..3 {
            let line = basis.line_coefficients(bc.start.p[axis], bc.goal.p[axis]);
            xi.rows_mut(layout.offset(axis, robot), layout.per_axis)
                .copy_from(&line);
        }
    }
    xi
}
