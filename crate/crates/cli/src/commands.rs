use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;
use swarmfilter::basis::{build_basis, coeffs_to_trajectory, DEFAULT_DEGREE, TRAJECTORY_CSV_HEADER};
use swarmfilter::constraints::{check_original_constraints, ViolationReport, DEFAULT_MARGIN_TOL};
use swarmfilter::metrics::{benchmark, neighbour_warm_starts, BatchReport, BenchGrid, RunMeta, Strategy};
use swarmfilter::problem::{FileSettings, LoadError, ProblemFile};
use swarmfilter::proposals::{
    load_proposals, load_warmstart, sample_proposals, save_proposals, save_warmstart, ProposalError, WarmStart,
    DEFAULT_SPREAD,
};
use swarmfilter::solver::{BatchSolve, Initialization, SafetyFilter, SolverConfig};

use crate::grid::parse_grid;
use crate::{BenchArgs, FilterArgs, GenerateArgs, SolverArgs};

const DEFAULT_COUNT: usize = 20;
const DEFAULT_SEED: u64 = 0;

pub struct CliError {
    pub code: u8,
    pub message: String,
}

fn invalid(message: impl Display) -> CliError {
    CliError {
        code: 2,
        message: message.to_string(),
    }
}

fn failure(message: impl Display) -> CliError {
    CliError {
        code: 1,
        message: message.to_string(),
    }
}

fn infeasible(message: impl Display) -> CliError {
    CliError {
        code: 3,
        message: message.to_string(),
    }
}

fn proposal_error(err: ProposalError) -> CliError {
    match err {
        ProposalError::Io { .. } | ProposalError::SchemaMismatch(_) | ProposalError::DimensionMismatch { .. } => {
            invalid(err)
        }
        other => failure(other),
    }
}

struct Setup {
    filter: SafetyFilter,
    settings: FileSettings,
    margin_tol: f64,
    threads: Option<usize>,
}

fn setup(problem: &Path, args: &SolverArgs) -> Result<Setup, CliError> {
    let file = ProblemFile::load(problem).map_err(|e| match e {
        LoadError::Invalid(issues) => invalid(format!("invalid problem {}: {issues}", problem.display())),
        other => invalid(format!("{}: {other}", problem.display())),
    })?;
    let settings = file.settings;
    let degree = args.degree.or(settings.degree).unwrap_or(DEFAULT_DEGREE);
    let basis = build_basis(degree, file.problem.samples(), file.problem.duration).map_err(invalid)?;
    let defaults = SolverConfig::default();
    let config = SolverConfig {
        rho: args.rho.or(settings.rho).unwrap_or(defaults.rho),
        max_iters: args.max_iters.or(settings.max_iters).unwrap_or(defaults.max_iters),
        tol_residual: args.tol.or(settings.tol).unwrap_or(defaults.tol_residual),
        early_stop: !args.full_iters,
        ..defaults
    };
    config.validate().map_err(invalid)?;
    let margin_tol = args.margin_tol.unwrap_or(DEFAULT_MARGIN_TOL);
    if !(margin_tol >= 0.0 && margin_tol.is_finite()) {
        return Err(invalid(format!("--margin-tol must be a finite non-negative number, got {margin_tol}")));
    }
    if args.threads == Some(0) {
        return Err(invalid("--threads must be at least 1"));
    }
    let filter = SafetyFilter::new(file.problem, basis, config).map_err(invalid)?;
    log::info!(
        "problem {}: n={}, H={}, degree={}, rho={}, max_iters={}, tol={}",
        problem.display(),
        filter.problem().n,
        filter.problem().horizon,
        degree,
        config.rho,
        config.max_iters,
        config.tol_residual
    );
    Ok(Setup {
        filter,
        settings,
        margin_tol,
        threads: args.threads,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| failure(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let fail = |e: std::io::Error| failure(format!("cannot write {}: {e}", path.display()));
    let file = fs::File::create(path).map_err(fail)?;
    let mut out = BufWriter::new(file);
    body(&mut out).and_then(|_| out.flush()).map_err(fail)
}

/// Writes trajectories.csv, residuals.csv, violations.csv, results.json and
/// report.json. Returns the number of feasible solutions.
fn write_batch_outputs(
    setup: &Setup,
    batch: &BatchSolve,
    meta: &RunMeta,
    out_dir: &Path,
    extra: serde_json::Value,
) -> Result<usize, CliError> {
    let filter = &setup.filter;
    let n = filter.problem().n;
    let (report, feasible_idx) = BatchReport::from_batch(batch, filter, setup.margin_tol);
    let header = meta.comment_block("#");

    write_file(&out_dir.join("trajectories.csv"), |out| {
        write!(out, "{header}")?;
        writeln!(out, "proposal_id,{TRAJECTORY_CSV_HEADER}")?;
        for &id in &feasible_idx {
            if let Ok(r) = &batch.results[id] {
                if let Ok(traj) = coeffs_to_trajectory(&r.xi_final, filter.basis(), n) {
                    traj.write_csv_rows(&mut &mut *out, Some(id))?;
                }
            }
        }
        Ok(())
    })?;

    write_file(&out_dir.join("residuals.csv"), |out| {
        write!(out, "{header}")?;
        writeln!(out, "proposal_id,iter,res_inf,res_l2")?;
        for (id, r) in batch.results.iter().enumerate() {
            if let Ok(r) = r {
                for (k, norms) in r.residual_history.iter().enumerate() {
                    writeln!(out, "{id},{},{:?},{:?}", k + 1, norms.inf, norms.l2)?;
                }
            }
        }
        Ok(())
    })?;

    write_file(&out_dir.join("violations.csv"), |out| {
        write!(out, "{header}")?;
        writeln!(out, "{}", ViolationReport::CSV_HEADER)?;
        for (id, r) in batch.results.iter().enumerate() {
            if let Ok(r) = r {
                if let Ok(traj) = coeffs_to_trajectory(&r.xi_final, filter.basis(), n) {
                    writeln!(out, "{}", check_original_constraints(&traj, filter.problem(), setup.margin_tol).csv_row(id))?;
                }
            }
        }
        Ok(())
    })?;

    let results: Vec<serde_json::Value> = batch
        .results
        .iter()
        .enumerate()
        .map(|(id, r)| match r {
            Ok(r) => json!({ "id": id, "result": r }),
            Err(e) => json!({ "id": id, "error": e.to_string() }),
        })
        .collect();
    let errors: Vec<serde_json::Value> = batch
        .results
        .iter()
        .enumerate()
        .filter_map(|(id, r)| r.as_ref().err().map(|e| json!({ "id": id, "error": e.to_string() })))
        .collect();
    write_json(&out_dir.join("results.json"), &json!({ "meta": meta.to_json(), "results": results }))?;
    write_json(
        &out_dir.join("report.json"),
        &json!({
            "meta": meta.to_json(),
            "report": report,
            "feasible_ids": feasible_idx,
            "errors": errors,
            "run": extra,
        }),
    )?;

    log::info!(
        "{} proposals: {} converged, {} feasible, {} failed, {} iterations in {:.3}s",
        report.batch_size,
        report.converged,
        report.feasible,
        report.failed,
        report.total_iterations,
        report.timing.total_seconds
    );
    if let (Some(mean), Some(max)) = (report.displacement_mean, report.displacement_max) {
        log::info!("displacement ||xi* - xi_bar||: mean {mean:.3e}, max {max:.3e}");
    }
    if let Some(c) = report.mean_pairwise_cosine {
        log::info!("diversity (mean centered cosine): {c:.4}");
    }
    Ok(report.feasible)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| failure(format!("cannot write {}: {e}", path.display())))
}

fn solutions(batch: &BatchSolve, dim: usize) -> Vec<WarmStart> {
    batch
        .results
        .iter()
        .map(|r| r.as_ref().map_or_else(|_| WarmStart::zeros(dim), |r| r.warm_start()))
        .collect()
}

fn finish(feasible: usize, out_dir: &Path) -> Result<(), CliError> {
    if feasible == 0 {
        return Err(infeasible(format!(
            "no feasible solution; outputs written to {}",
            out_dir.display()
        )));
    }
    log::info!("outputs written to {}", out_dir.display());
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let setup = setup(&args.problem, &args.solver)?;
    let count = args.count.or(setup.settings.count).unwrap_or(DEFAULT_COUNT);
    let seed = args.seed.or(setup.settings.seed).unwrap_or(DEFAULT_SEED);
    let spread = args.spread.or(setup.settings.spread).unwrap_or(DEFAULT_SPREAD);
    if count == 0 {
        return Err(infeasible("--count 0 requests no proposals, so no feasible solution can be produced"));
    }
    let filter = &setup.filter;
    let batch = sample_proposals(filter, count, seed, spread).map_err(invalid)?;
    log::info!("sampled {count} proposals (seed {seed}, spread {spread})");
    let meta = RunMeta::new(filter, Some(seed), setup.margin_tol);

    create_dir(&args.out_dir)?;
    let solved = filter
        .batch_solve(&batch.proposals, None, setup.threads)
        .map_err(failure)?;
    save_proposals(&batch, filter, Some(meta.to_json()), &args.out_dir.join("proposals.json")).map_err(failure)?;
    save_warmstart(
        &solutions(&solved, filter.layout().dim()),
        filter,
        Some(meta.to_json()),
        &args.out_dir.join("solutions.json"),
    )
    .map_err(failure)?;
    let extra = json!({ "command": "generate", "count": count, "seed": seed, "spread": spread });
    let feasible = write_batch_outputs(&setup, &solved, &meta, &args.out_dir, extra)?;
    finish(feasible, &args.out_dir)
}

pub fn filter(args: &FilterArgs) -> Result<(), CliError> {
    let setup = setup(&args.problem, &args.solver)?;
    let filter = &setup.filter;
    let batch = load_proposals(&args.proposals, filter).map_err(proposal_error)?;
    log::info!("loaded {} proposals from {}", batch.len(), args.proposals.display());
    if batch.is_empty() {
        return Err(infeasible("proposal file is empty, so no feasible solution can be produced"));
    }
    let inits = match &args.warmstart {
        Some(path) => {
            let starts = load_warmstart(path, filter).map_err(proposal_error)?;
            if starts.len() != batch.len() {
                return Err(invalid(format!(
                    "warm-start file {} has {} entries for {} proposals",
                    path.display(),
                    starts.len(),
                    batch.len()
                )));
            }
            log::info!("warm-starting from {}", path.display());
            Some(starts.into_iter().map(Initialization::Warm).collect::<Vec<_>>())
        }
        None => None,
    };
    let meta = RunMeta::new(filter, None, setup.margin_tol);
    create_dir(&args.out_dir)?;
    let solved = filter
        .batch_solve(&batch.proposals, inits.as_deref(), setup.threads)
        .map_err(failure)?;
    save_warmstart(
        &solutions(&solved, filter.layout().dim()),
        filter,
        Some(meta.to_json()),
        &args.out_dir.join("solutions.json"),
    )
    .map_err(failure)?;
    let extra = json!({
        "command": "filter",
        "proposals": args.proposals.display().to_string(),
        "warmstart": args.warmstart.as_ref().map(|p| p.display().to_string()),
        "provenance": batch.provenance,
    });
    let feasible = write_batch_outputs(&setup, &solved, &meta, &args.out_dir, extra)?;
    finish(feasible, &args.out_dir)
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let setup = setup(&args.problem, &args.solver)?;
    let filter = &setup.filter;
    let defaults = BenchGrid {
        seed: args.seed.or(setup.settings.seed).unwrap_or(DEFAULT_SEED),
        spread: args.spread.or(setup.settings.spread).unwrap_or(DEFAULT_SPREAD),
        margin_tol: setup.margin_tol,
        threads: setup.threads.or(BenchGrid::default().threads),
        ..BenchGrid::default()
    };
    let grid = parse_grid(&args.grid, defaults).map_err(|e| invalid(format!("invalid --grid: {e}")))?;
    let warm = if grid.strategies.contains(&Strategy::Warmstart) {
        let starts = match &args.warmstart {
            Some(path) => load_warmstart(path, filter).map_err(proposal_error)?,
            None => {
                log::info!("solving the neighbouring problem for warm starts");
                neighbour_warm_starts(filter, grid.timing_batch, grid.seed, grid.spread, grid.threads).map_err(failure)?
            }
        };
        if starts.len() < grid.timing_batch {
            return Err(invalid(format!(
                "{} warm starts for a timing batch of {}",
                starts.len(),
                grid.timing_batch
            )));
        }
        Some(starts)
    } else {
        None
    };
    log::info!(
        "benchmark: batches {:?}, iterations {:?}, timing batch {}, repeats {}",
        grid.batch_sizes,
        grid.iteration_counts,
        grid.timing_batch,
        grid.repeats
    );
    let tables = benchmark(filter, &grid, warm.as_deref()).map_err(failure)?;
    let meta = RunMeta::new(filter, Some(grid.seed), setup.margin_tol);
    tables
        .write_all(&args.out_dir, &meta)
        .map_err(|e| failure(format!("cannot write to {}: {e}", args.out_dir.display())))?;
    for row in &tables.feasibility {
        log::info!("batch {}: feasible fraction {:?}", row.batch, row.feasible_fraction);
    }
    log::info!("outputs written to {}", args.out_dir.display());
    Ok(())
}
