//! Evaluation quantities: primal residual, feasible fraction, cosine
//! diversity, and the timing/residual benchmark tables.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{coeffs_to_trajectory, BasisMatrices, Trajectory};
use crate::constraints::{build_e, check_original_constraints, ConstraintError, PairwiseOperator, SphericalVars};
use crate::problem::SwarmProblem;
use crate::scenarios::{shifted_goals, NEIGHBOUR_OFFSET};
use crate::proposals::{sample_proposals, ProposalError, WarmStart};
use crate::solver::{BatchSolve, Initialization, SafetyFilter, SolveResult, SolverConfig, SolverError};

/// How the diversity score is computed; written into every output that
/// reports it.
pub const DIVERSITY_DEFINITION: &str = "mean over unordered pairs of cosine similarity between \
    position-only flattened trajectories after subtracting the batch mean vector; lower is more diverse";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate input: vector {0} has zero norm")]
    Degenerate(usize),
    #[error("vectors have unequal lengths")]
    LengthMismatch,
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalResidual {
    pub vector: DVector<f64>,
    pub inf: f64,
    pub l2: f64,
}

/// `r_p = F xi - e(vars)`.
pub fn primal_residual(
    xi: &DVector<f64>,
    vars: &SphericalVars,
    op: &PairwiseOperator,
    problem: &SwarmProblem,
) -> Result<PrimalResidual, MetricsError> {
    let e = build_e(vars, problem)?;
    let vector = op.apply(xi) - e;
    Ok(PrimalResidual {
        inf: vector.amax(),
        l2: vector.norm(),
        vector,
    })
}

/// Converged and passing the original-constraint check at `tol`.
pub fn is_feasible(result: &SolveResult, problem: &SwarmProblem, basis: &BasisMatrices, tol: f64) -> bool {
    result.converged
        && coeffs_to_trajectory(&result.xi_final, basis, problem.n)
            .map(|t| check_original_constraints(&t, problem, tol).feasible)
            .unwrap_or(false)
}

/// Fraction of results that converged and satisfy the original constraints.
/// `None` for an empty input.
pub fn feasible_fraction(results: &[SolveResult], problem: &SwarmProblem, basis: &BasisMatrices, tol: f64) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    let ok = results
        .iter()
        .filter(|r| is_feasible(r, problem, basis, tol))
        .count();
    Some(ok as f64 / results.len() as f64)
}

fn cosine(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    u.dot(v) / (u.norm() * v.norm())
}

/// Mean cosine similarity over all unordered pairs, without centering.
pub fn mean_pairwise_cosine(vectors: &[DVector<f64>]) -> Result<f64, MetricsError> {
    if vectors.len() < 2 {
        return Err(MetricsError::TooFewSamples(vectors.len()));
    }
    let len = vectors[0].len();
    if vectors.iter().any(|v| v.len() != len) {
        return Err(MetricsError::LengthMismatch);
    }
    if let Some(idx) = vectors.iter().position(|v| v.norm() == 0.0) {
        return Err(MetricsError::Degenerate(idx));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sum += cosine(&vectors[i], &vectors[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Flattened position vectors with the batch mean subtracted.
pub fn centered_positions(trajs: &[Trajectory]) -> Vec<DVector<f64>> {
    let flat: Vec<DVector<f64>> = trajs.iter().map(Trajectory::flattened_positions).collect();
    if flat.is_empty() {
        return flat;
    }
    let mean = flat.iter().fold(DVector::zeros(flat[0].len()), |acc, v| acc + v) / flat.len() as f64;
    flat.into_iter().map(|v| v - &mean).collect()
}

/// Diversity score of a set of trajectories; see [`DIVERSITY_DEFINITION`].
pub fn diversity_cosine(trajs: &[Trajectory]) -> Result<f64, MetricsError> {
    if trajs.len() < 2 {
        return Err(MetricsError::TooFewSamples(trajs.len()));
    }
    mean_pairwise_cosine(&centered_positions(trajs))
}

/// Size of a greedily selected subset whose members have pairwise centered
/// cosine similarity at most `max_cosine`.
pub fn count_distinct(trajs: &[Trajectory], max_cosine: f64) -> usize {
    let centered = centered_positions(trajs);
    let mut chosen: Vec<&DVector<f64>> = Vec::new();
    for v in centered.iter().filter(|v| v.norm() > 0.0) {
        if chosen.iter().all(|c| cosine(c, v) <= max_cosine) {
            chosen.push(v);
        }
    }
    chosen.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub per_proposal_seconds: f64,
}

/// Summary of one filtered batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch_size: usize,
    pub converged: usize,
    pub feasible: usize,
    pub failed: usize,
    /// `None` for an empty batch.
    pub feasible_fraction: Option<f64>,
    /// `None` when fewer than two distinct feasible solutions exist.
    pub mean_pairwise_cosine: Option<f64>,
    pub diversity_definition: String,
    pub margin_tol: f64,
    /// Last `||r_p||_inf` per proposal (`None` for failed items).
    pub final_residuals: Vec<Option<f64>>,
    pub displacement_mean: Option<f64>,
    pub displacement_max: Option<f64>,
    pub total_iterations: usize,
    pub timing: Timing,
}

impl BatchReport {
    /// Builds the report and returns the indices of feasible results.
    pub fn from_batch(batch: &BatchSolve, filter: &SafetyFilter, margin_tol: f64) -> (Self, Vec<usize>) {
        let problem = filter.problem();
        let basis = filter.basis();
        let size = batch.results.len();
        let ok: Vec<&SolveResult> = batch.successes().collect();
        let feasible_idx: Vec<usize> = batch
            .results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Ok(r) if is_feasible(r, problem, basis, margin_tol) => Some(i),
                _ => None,
            })
            .collect();
        let trajs: Vec<Trajectory> = feasible_idx
            .iter()
            .filter_map(|&i| batch.results[i].as_ref().ok())
            .filter_map(|r| coeffs_to_trajectory(&r.xi_final, basis, problem.n).ok())
            .collect();
        let displacements: Vec<f64> = ok.iter().map(|r| r.displacement).collect();
        let total = batch.wall_clock.as_secs_f64();
        let report = Self {
            batch_size: size,
            converged: ok.iter().filter(|r| r.converged).count(),
            feasible: feasible_idx.len(),
            failed: size - ok.len(),
            feasible_fraction: (size > 0).then(|| feasible_idx.len() as f64 / size as f64),
            mean_pairwise_cosine: diversity_cosine(&trajs).ok(),
            diversity_definition: DIVERSITY_DEFINITION.to_string(),
            margin_tol,
            final_residuals: batch
                .results
                .iter()
                .map(|r| r.as_ref().ok().and_then(|r| r.final_residual()).map(|n| n.inf))
                .collect(),
            displacement_mean: (!displacements.is_empty())
                .then(|| displacements.iter().sum::<f64>() / displacements.len() as f64),
            displacement_max: displacements.iter().copied().reduce(f64::max),
            total_iterations: ok.iter().map(|r| r.iterations_run).sum(),
            timing: Timing {
                total_seconds: total,
                per_proposal_seconds: if size > 0 { total / size as f64 } else { 0.0 },
            },
        };
        (report, feasible_idx)
    }
}

/// Reproducibility header carried by every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub rho: f64,
    pub tol_residual: f64,
    pub tol_eq: f64,
    pub margin_tol: f64,
    pub max_iters: usize,
    pub early_stop: bool,
    pub degree: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub n: usize,
}

impl RunMeta {
    pub fn new(filter: &SafetyFilter, seed: Option<u64>, margin_tol: f64) -> Self {
        let c = filter.config();
        Self {
            tool_version: crate::VERSION.to_string(),
            seed,
            rho: c.rho,
            tol_residual: c.tol_residual,
            tol_eq: c.tol_eq,
            margin_tol,
            max_iters: c.max_iters,
            early_stop: c.early_stop,
            degree: filter.basis().degree,
            horizon: filter.problem().horizon,
            n: filter.problem().n,
        }
    }

    /// `# key=value` comment lines, prefixed with `prefix` (`#` for CSV and
    /// gnuplot).
    pub fn comment_block(&self, prefix: &str) -> String {
        let mut out = String::new();
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        let _ = writeln!(out, "{prefix} swarmfilter {}", self.tool_version);
        let _ = writeln!(
            out,
            "{prefix} seed={seed} rho={:?} tol_residual={:?} tol_eq={:?} margin_tol={:?} max_iters={} early_stop={}",
            self.rho, self.tol_residual, self.tol_eq, self.margin_tol, self.max_iters, self.early_stop
        );
        let _ = writeln!(out, "{prefix} degree={} H={} n={}", self.degree, self.horizon, self.n);
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// Initialization strategies compared by the residual-vs-iteration table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Zero,
    Projected,
    Warmstart,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Zero => "zero",
            Strategy::Projected => "projected",
            Strategy::Warmstart => "warmstart",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub batch_sizes: Vec<usize>,
    pub iteration_counts: Vec<usize>,
    pub strategies: Vec<Strategy>,
    /// Batch used for the iteration sweep and the residual curves.
    pub timing_batch: usize,
    /// Repetitions per timing point; the minimum is reported.
    pub repeats: usize,
    pub seed: u64,
    pub spread: f64,
    pub margin_tol: f64,
    pub threads: Option<usize>,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 10, 50],
            iteration_counts: vec![50, 100, 200, 400],
            strategies: vec![Strategy::Zero, Strategy::Projected, Strategy::Warmstart],
            timing_batch: 10,
            repeats: 3,
            seed: 0,
            spread: crate::proposals::DEFAULT_SPREAD,
            margin_tol: crate::constraints::DEFAULT_MARGIN_TOL,
            threads: Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityRow {
    pub n: usize,
    pub batch: usize,
    pub feasible_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityRow {
    pub n: usize,
    pub mean_pairwise_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    /// `batch` or `iters`: which sweep produced the row.
    pub sweep: &'static str,
    pub batch: usize,
    pub iters: usize,
    pub seconds: f64,
    pub per_proposal_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub strategy: Strategy,
    pub iter: usize,
    pub res_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchTables {
    pub feasibility: Vec<FeasibilityRow>,
    pub diversity: Vec<DiversityRow>,
    pub timing: Vec<TimingRow>,
    pub residuals: Vec<ResidualRow>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error("warm-start strategy requested but {0}")]
    WarmStart(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |v| format!("{v:?}"))
}

impl BenchTables {
    pub fn fig5a_csv(&self) -> String {
        let mut s = String::from("n,batch,feasible_fraction\n");
        for r in &self.feasibility {
            let _ = writeln!(s, "{},{},{}", r.n, r.batch, fmt_opt(r.feasible_fraction));
        }
        s
    }

    pub fn fig5b_csv(&self) -> String {
        let mut s = String::from("n,mean_pairwise_cosine\n");
        for r in &self.diversity {
            let _ = writeln!(s, "{},{}", r.n, fmt_opt(r.mean_pairwise_cosine));
        }
        s
    }

    pub fn fig6_csv(&self) -> String {
        let mut s = String::from("sweep,batch,iters,seconds,per_proposal_seconds\n");
        for r in &self.timing {
            let _ = writeln!(s, "{},{},{},{:?},{:?}", r.sweep, r.batch, r.iters, r.seconds, r.per_proposal_seconds);
        }
        s
    }

    pub fn fig7_csv(&self) -> String {
        let mut s = String::from("strategy,iter,res_inf\n");
        for r in &self.residuals {
            let _ = writeln!(s, "{},{},{:?}", r.strategy.name(), r.iter, r.res_inf);
        }
        s
    }

    /// Writes `fig5a.csv`, `fig5b.csv`, `fig6.csv`, `fig7.csv` and a gnuplot
    /// script next to each, all headed by `meta`.
    pub fn write_all(&self, dir: &Path, meta: &RunMeta) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let header = meta.comment_block("#");
        let diversity = format!("# diversity: {DIVERSITY_DEFINITION}\n");
        let files: [(&str, String, String, &str); 4] = [
            ("fig5a", self.fig5a_csv(), String::new(), "plot 'fig5a.csv' using 2:3 with linespoints title 'feasible fraction'"),
            ("fig5b", self.fig5b_csv(), diversity, "plot 'fig5b.csv' using 1:2 with boxes title 'mean pairwise cosine'"),
            ("fig6", self.fig6_csv(), String::new(),
             "plot \"< grep '^batch' fig6.csv\" using 2:4 with linespoints title 'seconds vs batch', \\\n     \"< grep '^iters' fig6.csv\" using 3:4 with linespoints title 'seconds vs iterations'"),
            ("fig7", self.fig7_csv(), String::new(),
             "set logscale y\nplot for [s in 'zero projected warmstart'] \"< grep '^\".s.\"' fig7.csv\" using 2:3 with lines title s"),
        ];
        for (name, body, extra, plot) in files {
            fs::write(dir.join(format!("{name}.csv")), format!("{header}{extra}{body}"))?;
            let script = format!(
                "{header}set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 800,600\nset output '{name}.png'\n{plot}\n"
            );
            fs::write(dir.join(format!("{name}.gp")), script)?;
        }
        Ok(())
    }
}

fn fixed_iterations(filter: &SafetyFilter, iters: usize) -> Result<SafetyFilter, SolverError> {
    filter.with_config(SolverConfig {
        max_iters: iters,
        early_stop: false,
        ..*filter.config()
    })
}

fn timed(filter: &SafetyFilter, proposals: &[DVector<f64>], repeats: usize, threads: Option<usize>) -> Result<f64, SolverError> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let out = filter.batch_solve(proposals, None, threads)?;
        best = best.min(out.wall_clock.as_secs_f64());
    }
    Ok(best)
}

/// Runs the feasibility, diversity, timing and initialization sweeps.
/// `warm_starts` feeds the warm-start strategy and must cover
/// `grid.timing_batch` proposals.
pub fn benchmark(
    filter: &SafetyFilter,
    grid: &BenchGrid,
    warm_starts: Option<&[WarmStart]>,
) -> Result<BenchTables, BenchError> {
    let n = filter.problem().n;
    let largest = grid
        .batch_sizes
        .iter()
        .copied()
        .chain([grid.timing_batch])
        .max()
        .unwrap_or(0);
    let pool = sample_proposals(filter, largest, grid.seed, grid.spread)?;
    let mut tables = BenchTables::default();

    // Feasibility and diversity use the configured early-stopping solver.
    let full = filter.batch_solve(&pool.proposals, None, grid.threads)?;
    let solved: Vec<Option<&SolveResult>> = full.results.iter().map(|r| r.as_ref().ok()).collect();
    for &batch in &grid.batch_sizes {
        let feasible = solved[..batch]
            .iter()
            .filter(|r| r.is_some_and(|r| is_feasible(r, filter.problem(), filter.basis(), grid.margin_tol)))
            .count();
        tables.feasibility.push(FeasibilityRow {
            n,
            batch,
            feasible_fraction: (batch > 0).then(|| feasible as f64 / batch as f64),
        });
    }
    let cap = grid.batch_sizes.iter().copied().max().unwrap_or(0);
    let trajs: Vec<Trajectory> = solved[..cap]
        .iter()
        .flatten()
        .filter(|r| is_feasible(r, filter.problem(), filter.basis(), grid.margin_tol))
        .filter_map(|r| coeffs_to_trajectory(&r.xi_final, filter.basis(), n).ok())
        .collect();
    tables.diversity.push(DiversityRow {
        n,
        mean_pairwise_cosine: diversity_cosine(&trajs).ok(),
    });

    // Timing: early stopping disabled so every proposal does the same work.
    let base_iters = filter.config().max_iters;
    let fixed = fixed_iterations(filter, base_iters)?;
    for &batch in &grid.batch_sizes {
        let seconds = timed(&fixed, &pool.proposals[..batch], grid.repeats, grid.threads)?;
        tables.timing.push(TimingRow {
            sweep: "batch",
            batch,
            iters: base_iters,
            seconds,
            per_proposal_seconds: if batch > 0 { seconds / batch as f64 } else { 0.0 },
        });
    }
    let timing_set = &pool.proposals[..grid.timing_batch];
    let sweep: Vec<SafetyFilter> = grid
        .iteration_counts
        .iter()
        .map(|&iters| fixed_iterations(filter, iters))
        .collect::<Result<_, _>>()?;
    // Repeats are interleaved across the sweep so machine noise spreads evenly.
    let mut best = vec![f64::INFINITY; sweep.len()];
    for _ in 0..grid.repeats.max(1) {
        for (slot, solver) in best.iter_mut().zip(&sweep) {
            *slot = slot.min(timed(solver, timing_set, 1, grid.threads)?);
        }
    }
    for (&iters, &seconds) in grid.iteration_counts.iter().zip(&best) {
        tables.timing.push(TimingRow {
            sweep: "iters",
            batch: grid.timing_batch,
            iters,
            seconds,
            per_proposal_seconds: if grid.timing_batch > 0 { seconds / grid.timing_batch as f64 } else { 0.0 },
        });
    }

    // Mean residual per iteration for each initialization strategy.
    for &strategy in &grid.strategies {
        let inits: Vec<Initialization> = match strategy {
            Strategy::Zero => vec![Initialization::Zero; timing_set.len()],
            Strategy::Projected => vec![Initialization::Projected; timing_set.len()],
            Strategy::Warmstart => {
                let ws = warm_starts.ok_or_else(|| BenchError::WarmStart("no warm starts supplied".into()))?;
                if ws.len() < timing_set.len() {
                    return Err(BenchError::WarmStart(format!(
                        "{} warm starts for {} proposals",
                        ws.len(),
                        timing_set.len()
                    )));
                }
                ws[..timing_set.len()].iter().cloned().map(Initialization::Warm).collect()
            }
        };
        let out = fixed.batch_solve(timing_set, Some(&inits), grid.threads)?;
        let histories: Vec<&SolveResult> = out.successes().collect();
        if histories.is_empty() {
            continue;
        }
        for iter in 0..base_iters {
            let mean = histories.iter().map(|r| r.residual_history[iter].inf).sum::<f64>() / histories.len() as f64;
            tables.residuals.push(ResidualRow {
                strategy,
                iter: iter + 1,
                res_inf: mean,
            });
        }
    }
    Ok(tables)
}

/// Warm starts taken from solutions of a neighbouring problem (goals shifted
/// by [`NEIGHBOUR_OFFSET`]) for the proposals the sampler draws with the same
/// `seed` and `spread`.
pub fn neighbour_warm_starts(
    filter: &SafetyFilter,
    count: usize,
    seed: u64,
    spread: f64,
    threads: Option<usize>,
) -> Result<Vec<WarmStart>, BenchError> {
    let problem = shifted_goals(filter.problem(), Vector3::from(NEIGHBOUR_OFFSET))
        .validated()
        .map_err(|e| BenchError::WarmStart(format!("neighbouring problem is invalid: {e}")))?;
    let neighbour = SafetyFilter::new(problem, filter.basis().clone(), *filter.config())?;
    let pool = sample_proposals(&neighbour, count, seed, spread)?;
    let solved = neighbour.batch_solve(&pool.proposals, None, threads)?;
    Ok(solved
        .results
        .iter()
        .map(|r| match r {
            Ok(r) => r.warm_start(),
            Err(_) => WarmStart::zeros(filter.layout().dim()),
        })
        .collect())
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (my + slope * (a - mx))).powi(2))
        .sum();
    1.0 - ss_res / syy
}
