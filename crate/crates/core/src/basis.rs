//! Sampled Bernstein basis and the mapping from stacked coefficients to
//! time-stamped trajectories.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest degree for which the six boundary rows per axis stay independent.
pub const MIN_DEGREE: usize = 5;
pub const DEFAULT_DEGREE: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("degree {0} is below the minimum of {MIN_DEGREE}")]
    DegreeTooLow(usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Bernstein basis of one degree sampled on a uniform grid over `[0, T]`,
/// with analytic first and second time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrices {
    pub degree: usize,
    pub duration: f64,
    pub time_grid: Vec<f64>,
    pub w: DMatrix<f64>,
    pub wd: DMatrix<f64>,
    pub wdd: DMatrix<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `B_{k,deg}(s)`, zero when `k` is outside `0..=deg` or `deg < 0`.
fn bernstein(deg: isize, k: isize, s: f64) -> f64 {
    if deg < 0 || k < 0 || k > deg {
        return 0.0;
    }
    let (deg, k) = (deg as usize, k as usize);
    binomial(deg, k) * s.powi(k as i32) * (1.0 - s).powi((deg - k) as i32)
}

/// Builds the trajectory basis, enforcing the minimum degree.
pub fn build_basis(degree: usize, samples: usize, duration: f64) -> Result<BasisMatrices, BasisError> {
    if degree < MIN_DEGREE {
        return Err(BasisError::DegreeTooLow(degree));
    }
    BasisMatrices::bernstein(degree, samples, duration)
}

impl BasisMatrices {
    /// Bernstein basis of any degree. Trajectory code should go through
    /// [`build_basis`].
    pub fn bernstein(degree: usize, samples: usize, duration: f64) -> Result<Self, BasisError> {
        if samples < 2 {
            return Err(BasisError::TooFewSamples(samples));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(BasisError::NonPositiveDuration(duration));
        }
        let k = degree + 1;
        let m = degree as isize;
        let md = degree as f64;
        let time_grid: Vec<f64> = (0..samples)
            .map(|i| duration * i as f64 / (samples - 1) as f64)
            .collect();
        let mut w = DMatrix::zeros(samples, k);
        let mut wd = DMatrix::zeros(samples, k);
        let mut wdd = DMatrix::zeros(samples, k);
        for (row, &t) in time_grid.iter().enumerate() {
            let s = t / duration;
            for col in 0..k {
                let j = col as isize;
                w[(row, col)] = bernstein(m, j, s);
                wd[(row, col)] =
                    md * (bernstein(m - 1, j - 1, s) - bernstein(m - 1, j, s)) / duration;
                wdd[(row, col)] = md
                    * (md - 1.0)
                    * (bernstein(m - 2, j - 2, s) - 2.0 * bernstein(m - 2, j - 1, s)
                        + bernstein(m - 2, j, s))
                    / (duration * duration);
            }
        }
        Ok(Self {
            degree,
            duration,
            time_grid,
            w,
            wd,
            wdd,
        })
    }

    pub fn samples(&self) -> usize {
        self.time_grid.len()
    }

    /// Coefficients per robot per axis (`degree + 1`).
    pub fn coeffs_per_axis(&self) -> usize {
        self.degree + 1
    }

    /// Coefficients of the straight line from `start` to `goal` (degree
    /// elevation reproduces linear functions exactly).
    pub fn line_coefficients(&self, start: f64, goal: f64) -> DVector<f64> {
        let m = self.degree.max(1) as f64;
        DVector::from_fn(self.coeffs_per_axis(), |j, _| {
            start + (goal - start) * j as f64 / m
        })
    }
}

/// Index bookkeeping for the stacked coefficient vector
/// `(c_{1,x}..c_{n,x}, c_{1,y}..c_{n,y}, c_{1,z}..c_{n,z})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefficientLayout {
    pub robots: usize,
    pub per_axis: usize,
}

impl CoefficientLayout {
    pub fn new(robots: usize, basis: &BasisMatrices) -> Self {
        Self {
            robots,
            per_axis: basis.coeffs_per_axis(),
        }
    }

    pub fn dim(&self) -> usize {
        3 * self.robots * self.per_axis
    }

    /// Offset of the block holding robot `robot`'s coefficients on `axis`.
    pub fn offset(&self, axis: usize, robot: usize) -> usize {
        (axis * self.robots + robot) * self.per_axis
    }

    pub fn check(&self, xi: &DVector<f64>) -> Result<(), BasisError> {
        if xi.len() == self.dim() {
            Ok(())
        } else {
            Err(BasisError::DimensionMismatch {
                expected: self.dim(),
                actual: xi.len(),
            })
        }
    }
}

/// Samples of one robot's motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotTrajectory {
    pub position: Vec<Vector3<f64>>,
    pub velocity: Vec<Vector3<f64>>,
    pub acceleration: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub robots: Vec<RobotTrajectory>,
}

impl Trajectory {
    pub fn samples(&self) -> usize {
        self.time.len()
    }

    /// All positions flattened robot-major, then time, then axis.
    pub fn flattened_positions(&self) -> DVector<f64> {
        let data: Vec<f64> = self
            .robots
            .iter()
            .flat_map(|r| r.position.iter().flat_map(|p| [p.x, p.y, p.z]))
            .collect();
        DVector::from_vec(data)
    }

    /// Writes CSV rows `robot,t,x,y,z,vx,vy,vz,ax,ay,az` without a header line.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W, id: Option<usize>) -> io::Result<()> {
        for (robot, r) in self.robots.iter().enumerate() {
            for (idx, &t) in self.time.iter().enumerate() {
                let (p, v, a) = (r.position[idx], r.velocity[idx], r.acceleration[idx]);
                if let Some(id) = id {
                    write!(out, "{id},")?;
                }
                writeln!(
                    out,
                    "{robot},{t:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                    p.x, p.y, p.z, v.x, v.y, v.z, a.x, a.y, a.z
                )?;
            }
        }
        Ok(())
    }
}

pub const TRAJECTORY_CSV_HEADER: &str = "robot,t,x,y,z,vx,vy,vz,ax,ay,az";

/// Evaluates positions, velocities and accelerations of every robot.
pub fn coeffs_to_trajectory(
    xi: &DVector<f64>,
    basis: &BasisMatrices,
    n: usize,
) -> Result<Trajectory, BasisError> {
    let layout = CoefficientLayout::new(n, basis);
    layout.check(xi)?;
    let k = layout.per_axis;
    let samples = basis.samples();
    let robots = (0..n)
        .map(|robot| {
            let axes: Vec<[DVector<f64>; 3]> = (0..3)
                .map(|axis| {
                    let c = xi.rows(layout.offset(axis, robot), k);
                    [&basis.w * c, &basis.wd * c, &basis.wdd * c]
                })
                .collect();
            let pick = |order: usize| -> Vec<Vector3<f64>> {
                (0..samples)
                    .map(|t| Vector3::new(axes[0][order][t], axes[1][order][t], axes[2][order][t]))
                    .collect()
            };
            RobotTrajectory {
                position: pick(0),
                velocity: pick(1),
                acceleration: pick(2),
            }
        })
        .collect();
    Ok(Trajectory {
        time: basis.time_grid.clone(),
        robots,
    })
}
