mod common;

use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

use common::{demo_filter, filter_for, random_vector, rng};
use swarmfilter::basis::{coeffs_to_trajectory, Trajectory};
use swarmfilter::metrics::{
    benchmark, count_distinct, diversity_cosine, feasible_fraction, mean_pairwise_cosine, primal_residual,
    BenchGrid, MetricsError, Strategy,
};
use swarmfilter::proposals::sample_proposals;
use swarmfilter::scenarios;
use swarmfilter::solver::{spherical_step, SafetyFilter, SolverConfig};

fn shifted_filter() -> SafetyFilter {
    let mut problem = scenarios::demo_four();
    for bc in &mut problem.boundary {
        bc.goal.p = bc.start.p + Vector3::new(0.5, 0.5, 0.0);
    }
    filter_for(problem, SolverConfig::default())
}

fn translated(traj: &Trajectory, offset: Vector3<f64>) -> Trajectory {
    let mut out = traj.clone();
    for robot in &mut out.robots {
        for p in &mut robot.position {
            *p += offset;
        }
    }
    out
}

#[test]
fn primal_residual_matches_dense_product() {
    let filter = demo_filter();
    let op = filter.operator();
    let dense = op.to_dense();
    let mut r = rng(41);
    for _ in 0..10 {
        let xi = random_vector(&mut r, 132, 3.0);
        let vars = spherical_step(&random_vector(&mut r, 132, 3.0), op, filter.problem());
        let e = filter.build_e(&vars).unwrap();
        let got = primal_residual(&xi, &vars, op, filter.problem()).unwrap();
        let expected = &dense * &xi - &e;
        assert!((&got.vector - &expected).amax() <= 1e-12 * (1.0 + expected.amax()));
        assert!((got.inf - expected.amax()).abs() <= 1e-12 * (1.0 + expected.amax()));
        assert!((got.l2 - expected.norm()).abs() <= 1e-12 * (1.0 + expected.norm()));
    }
}

#[test]
fn exact_fit_of_feasible_interior_state_has_no_residual() {
    let filter = shifted_filter();
    let line = scenarios::straight_line(filter.problem(), filter.basis());
    let xi = filter.projector().project(&line).unwrap();
    let vars = spherical_step(&xi, filter.operator(), filter.problem());
    let r = primal_residual(&xi, &vars, filter.operator(), filter.problem()).unwrap();
    assert!(r.inf <= 1e-9, "{}", r.inf);
}

#[test]
fn feasible_fraction_counts_converged_and_checked() {
    let filter = shifted_filter();
    let line = scenarios::straight_line(filter.problem(), filter.basis());
    let good = filter.solve(&filter.projector().project(&line).unwrap(), None).unwrap();
    let mut bad = good.clone();
    bad.converged = false;
    let (p, b) = (filter.problem(), filter.basis());

    assert_eq!(feasible_fraction(&[], p, b, 1e-3), None);
    assert_eq!(feasible_fraction(&vec![good.clone(); 2], p, b, 1e-3), Some(1.0));
    let mixed = vec![good.clone(), good.clone(), bad.clone(), good.clone()];
    assert_eq!(feasible_fraction(&mixed, p, b, 1e-3), Some(0.75));
    let permuted = vec![bad, good.clone(), good.clone(), good];
    assert_eq!(feasible_fraction(&permuted, p, b, 1e-3), Some(0.75));
}

#[test]
fn analytic_cosine_cases() {
    let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let diag = DVector::from_vec(vec![1.0, 1.0, 0.0]).normalize();
    assert!((mean_pairwise_cosine(&[e1.clone(), e1.clone()]).unwrap() - 1.0).abs() < 1e-15);
    assert!(mean_pairwise_cosine(&[e1.clone(), e2]).unwrap().abs() < 1e-15);
    assert!((mean_pairwise_cosine(&[e1.clone(), diag]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert!(matches!(mean_pairwise_cosine(&[e1]), Err(MetricsError::TooFewSamples(1))));
}

#[test]
fn duplicated_trajectories_are_degenerate_after_centering() {
    let filter = shifted_filter();
    let line = scenarios::straight_line(filter.problem(), filter.basis());
    let traj = coeffs_to_trajectory(&line, filter.basis(), 4).unwrap();
    assert!(matches!(
        diversity_cosine(&[traj.clone(), traj.clone()]),
        Err(MetricsError::Degenerate(_))
    ));
    assert!(matches!(diversity_cosine(&[traj]), Err(MetricsError::TooFewSamples(1))));
}

#[test]
fn diversity_of_solved_batch_is_translation_invariant() {
    let filter = demo_filter();
    let batch = sample_proposals(&filter, 6, 8, 0.3).unwrap();
    let trajs: Vec<Trajectory> = batch
        .proposals
        .iter()
        .map(|xi| coeffs_to_trajectory(xi, filter.basis(), 4).unwrap())
        .collect();
    let base = diversity_cosine(&trajs).unwrap();
    assert!((-1.0..=1.0).contains(&base));
    let moved: Vec<Trajectory> = trajs.iter().map(|t| translated(t, Vector3::new(3.0, -1.0, 0.5))).collect();
    assert!((diversity_cosine(&moved).unwrap() - base).abs() < 1e-10);
    let mut reversed = trajs.clone();
    reversed.reverse();
    assert!((diversity_cosine(&reversed).unwrap() - base).abs() < 1e-12);
    assert!(count_distinct(&trajs, 0.99) >= 1);
}

#[test]
fn benchmark_table_shapes() {
    let filter = demo_filter();
    let grid = BenchGrid {
        batch_sizes: vec![1, 10, 50],
        iteration_counts: vec![50, 100, 200, 400],
        strategies: vec![Strategy::Zero, Strategy::Projected],
        repeats: 2,
        ..BenchGrid::default()
    };
    let tables = benchmark(&filter.with_config(SolverConfig { max_iters: 50, ..SolverConfig::default() }).unwrap(), &grid, None).unwrap();
    assert_eq!(tables.feasibility.len(), 3);
    let batch_rows: Vec<_> = tables.timing.iter().filter(|r| r.sweep == "batch").collect();
    assert_eq!(batch_rows.len(), 3);
    assert!(batch_rows.iter().all(|r| r.per_proposal_seconds > 0.0));
    let iter_rows: Vec<_> = tables.timing.iter().filter(|r| r.sweep == "iters").collect();
    assert_eq!(iter_rows.iter().map(|r| r.iters).collect::<Vec<_>>(), vec![50, 100, 200, 400]);
    assert!(iter_rows.windows(2).all(|w| w[1].seconds >= w[0].seconds));
    assert_eq!(tables.residuals.len(), 2 * 50);
    assert!(tables.fig7_csv().lines().any(|l| l.starts_with("zero,")));

    let missing = BenchGrid { strategies: vec![Strategy::Warmstart], ..grid };
    assert!(benchmark(&filter, &missing, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mean_cosine_is_permutation_invariant(seed in 0u64..1000, k in 2usize..7) {
        let mut r = rng(seed);
        let vs: Vec<DVector<f64>> = (0..k).map(|_| random_vector(&mut r, 12, 1.0)).collect();
        let base = mean_pairwise_cosine(&vs).unwrap();
        let mut rev = vs.clone();
        rev.reverse();
        rev.rotate_left(1);
        prop_assert!((mean_pairwise_cosine(&rev).unwrap() - base).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base));
    }
}
