//! `--grid` specification for the benchmark command.
//!
//! Whitespace- or `;`-separated `key=value` items. Values are comma lists or
//! inclusive `start:stop:step` ranges:
//!
//! ```text
//! iters=50:400:50 batch=1,10,50 strategies=zero,projected timing-batch=10 repeats=3
//! ```

use swarmfilter::metrics::{BenchGrid, Strategy};

fn parse_count(key: &str, raw: &str) -> Result<usize, String> {
    let v: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{key}: '{raw}' is not a non-negative integer"))?;
    if v == 0 {
        return Err(format!("{key}: values must be positive"));
    }
    Ok(v)
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>, String> {
    let parts: Vec<&str> = raw.split(':').collect();
    let values = match parts.as_slice() {
        [single] => single
            .split(',')
            .map(|p| parse_count(key, p))
            .collect::<Result<Vec<_>, _>>()?,
        [start, stop, step] => {
            let (start, stop, step) = (parse_count(key, start)?, parse_count(key, stop)?, parse_count(key, step)?);
            if stop < start {
                return Err(format!("{key}: range end {stop} is below its start {start}"));
            }
            (start..=stop).step_by(step).collect()
        }
        _ => return Err(format!("{key}: expected a comma list or start:stop:step, got '{raw}'")),
    };
    if values.is_empty() {
        return Err(format!("{key}: empty list"));
    }
    Ok(values)
}

fn parse_strategy(raw: &str) -> Result<Strategy, String> {
    match raw.trim() {
        "zero" => Ok(Strategy::Zero),
        "projected" => Ok(Strategy::Projected),
        "warmstart" => Ok(Strategy::Warmstart),
        other => Err(format!("strategies: unknown strategy '{other}' (zero, projected, warmstart)")),
    }
}

fn single(key: &str, raw: &str) -> Result<usize, String> {
    match parse_list(key, raw)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(format!("{key}: expected a single value")),
    }
}

/// Applies `spec` on top of `grid`.
pub fn parse_grid(spec: &str, mut grid: BenchGrid) -> Result<BenchGrid, String> {
    for item in spec.split(|c: char| c == ';' || c.is_whitespace()).filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| format!("grid item '{item}' is not key=value"))?;
        match key {
            "iters" => grid.iteration_counts = parse_list(key, value)?,
            "batch" => grid.batch_sizes = parse_list(key, value)?,
            "strategies" => {
                grid.strategies = value.split(',').map(parse_strategy).collect::<Result<_, _>>()?;
            }
            "timing-batch" => grid.timing_batch = single(key, value)?,
            "repeats" => grid.repeats = single(key, value)?,
            other => {
                return Err(format!(
                    "unknown grid key '{other}' (iters, batch, strategies, timing-batch, repeats)"
                ))
            }
        }
    }
    Ok(grid)
}
