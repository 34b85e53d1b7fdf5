//! Shared parsing and output helpers for the subcommands.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use driftwatch_core::distances::DistanceKind;
use driftwatch_core::estimator::FitForm;

/// Parse "start:end:step" (inclusive of `end` when it lands on the grid) or
/// a comma-separated list of integers.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            bail!("size range must be start:end:step, got {spec:?}");
        }
        let start: usize = parts[0].trim().parse().context("bad range start")?;
        let end: usize = parts[1].trim().parse().context("bad range end")?;
        let step: usize = parts[2].trim().parse().context("bad range step")?;
        if step == 0 || start == 0 || end < start {
            bail!("size range must satisfy 0 < start <= end with step > 0");
        }
        Ok((start..=end).step_by(step).collect())
    } else {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad size {s:?}"))
            })
            .collect()
    }
}

/// Parse "start:end:step" or a comma list of reals in [0, 1].
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            bail!("threshold range must be start:end:step, got {spec:?}");
        }
        let start: f64 = parts[0].trim().parse().context("bad range start")?;
        let end: f64 = parts[1].trim().parse().context("bad range end")?;
        let step: f64 = parts[2].trim().parse().context("bad range step")?;
        let valid = step.is_finite() && step > 0.0 && end >= start;
        if !valid {
            bail!("threshold range must satisfy start <= end with step > 0");
        }
        // Walk on integer multiples so the grid is exact and terminates.
        let count = ((end - start) / step).round() as usize;
        (0..=count)
            .map(|k| start + k as f64 * step)
            .filter(|t| *t <= end + 1e-12)
            .collect()
    } else {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad threshold {s:?}"))
            })
            .collect::<Result<_>>()?
    };
    if values.iter().any(|t| !(0.0..=1.0).contains(t)) {
        bail!("thresholds must lie in [0, 1]");
    }
    Ok(values)
}

pub fn parse_kind(spec: &str) -> Result<DistanceKind> {
    spec.trim().parse::<DistanceKind>().map_err(Into::into)
}

pub fn parse_kinds(spec: &str) -> Result<Vec<DistanceKind>> {
    let kinds: Vec<DistanceKind> = spec
        .split(',')
        .map(parse_kind)
        .collect::<Result<_>>()
        .context("parsing --kinds")?;
    if kinds.is_empty() {
        bail!("--kinds must name at least one distance kind");
    }
    Ok(kinds)
}

/// Parse "kind=form" pairs, e.g. "es=sigmoid3,ks=poly2".
pub fn parse_forms(spec: &str) -> Result<BTreeMap<DistanceKind, FitForm>> {
    let mut out = BTreeMap::new();
    for pair in spec.split(',') {
        let (kind, form) = pair
            .split_once('=')
            .with_context(|| format!("--forms entries must be kind=form, got {pair:?}"))?;
        let kind = parse_kind(kind)?;
        let form: FitForm = form.trim().parse()?;
        out.insert(kind, form);
    }
    Ok(out)
}

/// Write via a sibling temp file and atomic rename; failures leave no
/// partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut temp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file next to {}", path.display()))?;
    temp.write_all(bytes)?;
    temp.flush()?;
    temp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Emit to the given path atomically, or to stdout when no path is set.
pub fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(path) => write_atomic(path, content.as_bytes()),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Read the `correct` column (0/1) from a CSV; other columns are ignored so
/// the stream CSV itself can double as the truth file.
pub fn read_correct_column(path: &Path) -> Result<Vec<u8>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = headers
        .iter()
        .position(|h| h == "correct")
        .with_context(|| format!("{}: no `correct` column", path.display()))?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match record.get(column).unwrap_or("") {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => bail!(
                "{}:{line}: `correct` must be 0 or 1, got {other:?}",
                path.display()
            ),
        }
    }
    Ok(labels)
}

/// Read per-window truth rows (window_id, true_inaccuracy).
pub fn read_window_truth(path: &Path) -> Result<BTreeMap<u64, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "window_id")
        .with_context(|| format!("{}: no `window_id` column", path.display()))?;
    let inacc_col = headers
        .iter()
        .position(|h| h == "true_inaccuracy")
        .with_context(|| format!("{}: no `true_inaccuracy` column", path.display()))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id: u64 = record
            .get(id_col)
            .unwrap_or("")
            .parse()
            .with_context(|| format!("{}:{line}: bad window_id", path.display()))?;
        let inaccuracy: f64 = record
            .get(inacc_col)
            .unwrap_or("")
            .parse()
            .with_context(|| format!("{}:{line}: bad true_inaccuracy", path.display()))?;
        if !(0.0..=1.0).contains(&inaccuracy) {
            bail!(
                "{}:{line}: true_inaccuracy must lie in [0, 1]",
                path.display()
            );
        }
        out.insert(id, inaccuracy);
    }
    Ok(out)
}
