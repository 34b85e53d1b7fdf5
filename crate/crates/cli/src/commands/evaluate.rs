use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use driftwatch_core::distances::DistanceKind;
use driftwatch_core::monitor::{
    score_outcomes, threshold_sweep, AggregateRule, Decision, KindReading, ReportLine, WindowReport,
};

use crate::args::EvaluateArgs;
use crate::common::{emit, parse_thresholds, read_window_truth};

pub fn run(args: &EvaluateArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.reports)
        .with_context(|| format!("reading {}", args.reports.display()))?;
    let mut lines: Vec<ReportLine> = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw)
            .with_context(|| format!("{}:{}: invalid JSON", args.reports.display(), number + 1))?;
        if value.get("summary").is_some() {
            continue; // trailing confusion summary from `monitor --truth`
        }
        let line: ReportLine = serde_json::from_value(value).with_context(|| {
            format!(
                "{}:{}: invalid report line",
                args.reports.display(),
                number + 1
            )
        })?;
        lines.push(line);
    }

    let truth = read_window_truth(&args.truth)?;
    let missing: BTreeSet<u64> = lines
        .iter()
        .map(|l| l.window_id)
        .filter(|id| !truth.contains_key(id))
        .collect();
    if !missing.is_empty() {
        let ids: Vec<String> = missing.iter().map(|id| id.to_string()).collect();
        bail!(
            "{}: no truth for window ids [{}]",
            args.truth.display(),
            ids.join(", ")
        );
    }

    // Per-kind confusion: each line carries its kind's own verdict.
    let mut by_kind: BTreeMap<DistanceKind, Vec<(Decision, f64)>> = BTreeMap::new();
    for line in &lines {
        by_kind
            .entry(line.kind)
            .or_default()
            .push((line.decision, truth[&line.window_id]));
    }
    let mut confusion = String::from("kind,rejected,false_rejects,missed,total\n");
    for (kind, outcomes) in &by_kind {
        let summary = score_outcomes(outcomes, args.threshold);
        writeln!(
            confusion,
            "{kind},{},{},{},{}",
            summary.rejected, summary.false_rejects, summary.missed, summary.total
        )
        .unwrap();
    }
    emit(args.confusion_out.as_deref(), &confusion)?;

    if args.sweep {
        let thresholds = parse_thresholds(&args.thresholds)?;
        let rule: AggregateRule = args.aggregate.parse()?;

        // Regroup lines into per-window reports for re-decision.
        let mut by_window: BTreeMap<u64, WindowReport> = BTreeMap::new();
        for line in &lines {
            let report = by_window
                .entry(line.window_id)
                .or_insert_with(|| WindowReport {
                    window_id: line.window_id,
                    per_kind: BTreeMap::new(),
                    decision: Decision::Accept,
                    first_index: line.first_index,
                    last_index: line.last_index,
                });
            report.per_kind.insert(
                line.kind,
                KindReading {
                    sdd: line.sdd,
                    uncertainty: line.uncertainty,
                },
            );
        }
        let reports: Vec<(WindowReport, f64)> = by_window
            .into_values()
            .map(|report| {
                let inaccuracy = truth[&report.window_id];
                (report, inaccuracy)
            })
            .collect();

        let rows = threshold_sweep(&reports, &thresholds, rule);
        let mut table = String::from("threshold,cutoff,mean_accuracy,rejected\n");
        for row in rows {
            let cutoff = row.cutoff.map(|v| v.to_string()).unwrap_or_default();
            let mean = row.mean_accuracy.map(|v| v.to_string()).unwrap_or_default();
            writeln!(table, "{},{cutoff},{mean},{}", row.threshold, row.rejected).unwrap();
        }
        if args.sweep_out.is_none() && args.confusion_out.is_none() {
            println!(); // separate the two stdout tables
        }
        emit(args.sweep_out.as_deref(), &table)?;
    }

    Ok(ExitCode::SUCCESS)
}
