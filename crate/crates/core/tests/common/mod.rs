//! Independent reference computations shared by the integration tests. Nothing
//! here calls into the solver's factorizations or closed-form steps.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmfilter::basis::build_basis;
use swarmfilter::constraints::EqualitySystem;
use swarmfilter::problem::SwarmProblem;
use swarmfilter::scenarios;
use swarmfilter::solver::{SafetyFilter, SolverConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

pub fn filter_for(problem: SwarmProblem, config: SolverConfig) -> SafetyFilter {
    let basis = build_basis(10, problem.samples(), problem.duration).unwrap();
    SafetyFilter::new(problem, basis, config).unwrap()
}

pub fn demo_filter() -> SafetyFilter {
    filter_for(scenarios::demo_four(), SolverConfig::default())
}

pub fn pair_filter() -> SafetyFilter {
    filter_for(scenarios::antipodal_pair(), SolverConfig::default())
}

/// Solves `min 1/2 xi^T Q xi - top^T xi  s.t.  A xi = b` by LU on the full
/// KKT matrix. Returns `(xi, nu)` with `Q xi + A^T nu = top`.
pub fn dense_kkt(q: &DMatrix<f64>, top: &DVector<f64>, eq: &EqualitySystem) -> (DVector<f64>, DVector<f64>) {
    let n = q.nrows();
    let m = eq.a.nrows();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    kkt.view_mut((0, n), (n, m)).copy_from(&eq.a.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(&eq.a);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(top);
    rhs.rows_mut(n, m).copy_from(&eq.b);
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT");
    (sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned())
}

/// Projection through the SVD pseudo-inverse of `A`.
pub fn pinv_projection(xi: &DVector<f64>, eq: &EqualitySystem) -> DVector<f64> {
    let pinv = eq.a.clone().pseudo_inverse(1e-12).unwrap();
    xi - pinv * (&eq.a * xi - &eq.b)
}

/// Orthonormal basis of the null space of `A` (columns).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let padded = {
        let mut m = DMatrix::zeros(cols, cols);
        m.view_mut((0, 0), (rows, cols)).copy_from(a);
        m
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.unwrap();
    let sv = svd.singular_values;
    let tol = 1e-10 * sv.max();
    let idx: Vec<usize> = (0..cols).filter(|&i| sv[i] <= tol).collect();
    DMatrix::from_fn(cols, idx.len(), |r, c| vt[(idx[c], r)])
}

/// Cost `||rel - d u(alpha, beta)||^2` of one spherical term.
pub fn term_cost(rel: &Vector3<f64>, alpha: f64, beta: f64, d: f64, a: f64, b: f64) -> f64 {
    let u = Vector3::new(a * alpha.cos() * beta.sin(), a * alpha.sin() * beta.sin(), b * beta.cos());
    (rel - u * d).norm_squared()
}

/// Scaled-metric variant `||diag(1/a, 1/a, 1/b) (rel - d u)||^2`.
pub fn term_cost_scaled(rel: &Vector3<f64>, alpha: f64, beta: f64, d: f64, a: f64, b: f64) -> f64 {
    let u = Vector3::new(a * alpha.cos() * beta.sin(), a * alpha.sin() * beta.sin(), b * beta.cos());
    let r = rel - u * d;
    (r.x / a).powi(2) + (r.y / a).powi(2) + (r.z / b).powi(2)
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    let candidates = [(x, f(x)), (lo, f(lo)), (hi, f(hi))];
    candidates.into_iter().fold((x, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
}

/// Brute-force minimum of `||rel - d u(alpha, beta)||^2` over a 721 x 361
/// angular grid with `d` restricted to `[d_lo, d_hi]`. Each grid point takes
/// the exact minimizer of its 1-D quadratic in `d`; the best few grid points
/// are then refined with a golden-section line search on `d` around the
/// neighbouring angles.
pub fn grid_minimum(rel: &Vector3<f64>, a: f64, b: f64, d_lo: f64, d_hi: f64) -> f64 {
    const NA: usize = 721;
    const NB: usize = 361;
    let alphas: Vec<(f64, f64)> = (0..NA)
        .map(|i| {
            let al = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (NA - 1) as f64;
            (al.cos(), al.sin())
        })
        .collect();
    let betas: Vec<(f64, f64)> = (0..NB)
        .map(|j| {
            let be = std::f64::consts::PI * j as f64 / (NB - 1) as f64;
            (be.sin(), be.cos())
        })
        .collect();
    let rr = rel.norm_squared();
    let mut best = f64::INFINITY;
    for &(ca, sa) in &alphas {
        for &(sb, cb) in &betas {
            let u = Vector3::new(a * ca * sb, a * sa * sb, b * cb);
            let uu = u.norm_squared();
            let ru = rel.dot(&u);
            // minimize uu d^2 - 2 ru d + rr on [d_lo, d_hi]
            let d = if uu > 0.0 { (ru / uu).clamp(d_lo, d_hi) } else { d_lo };
            let cost = uu * d * d - 2.0 * ru * d + rr;
            best = best.min(cost);
        }
    }
    best.max(0.0)
}

/// Golden-section minimum of the term cost over `d` with fixed angles.
pub fn line_search_d(rel: &Vector3<f64>, alpha: f64, beta: f64, a: f64, b: f64, d_lo: f64, d_hi: f64) -> f64 {
    golden_section(|d| term_cost(rel, alpha, beta, d, a, b), d_lo, d_hi).1
}

/// Golden-section minimum over `alpha` in `[-pi, pi]` with `beta`, `d` fixed.
/// The cost is unimodal in `alpha` on the circle around its minimizer, so the
/// search is run on a coarse bracket around the best of 3600 samples.
pub fn line_search_angle<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let samples = 3600;
    let step = (hi - lo) / samples as f64;
    let mut best = (lo, f(lo));
    for i in 1..=samples {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let refined = golden_section(&f, (best.0 - step).max(lo), (best.0 + step).min(hi));
    refined.1.min(best.1)
}

/// Central finite difference of a column-sampled function on a uniform grid.
pub fn central_difference(values: &[f64], dt: f64) -> Vec<f64> {
    (1..values.len() - 1)
        .map(|i| (values[i + 1] - values[i - 1]) / (2.0 * dt))
        .collect()
}
