use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use driftwatch_core::bundle::MonitorModel;
use driftwatch_core::features::{pca_transform, read_features_csv};
use driftwatch_core::monitor::{
    score_confusion, AggregateRule, DriftMonitor, MonitorConfig, WindowReport,
};

use crate::args::MonitorArgs;
use crate::common::{emit, parse_kinds, read_correct_column, write_atomic};

pub fn run(args: &MonitorArgs) -> Result<ExitCode> {
    let model = MonitorModel::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let model_dir = args
        .model
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let reference = model.operational_reference(model_dir)?;

    let kinds = match &args.kinds {
        Some(spec) => {
            let kinds = parse_kinds(spec)?;
            for kind in &kinds {
                if !model.estimators.contains_key(kind) {
                    bail!("model has no calibrated estimator for kind {kind}");
                }
            }
            kinds
        }
        None => model.estimators.keys().copied().collect(),
    };
    let aggregate_rule: AggregateRule = args.aggregate.parse()?;
    let config = MonitorConfig {
        window: model.window,
        stride: args.stride.unwrap_or(model.window),
        kinds,
        threshold: args.threshold,
        aggregate_rule,
    };

    let stream_raw = read_features_csv(&args.stream_csv)
        .with_context(|| format!("reading {}", args.stream_csv.display()))?;
    let stream = pca_transform(&model.pca, &stream_raw).with_context(|| {
        format!(
            "stream feature dimension must match the model's PCA input ({})",
            model.pca.input_dim()
        )
    })?;

    let mut monitor = DriftMonitor::new(reference, model.estimators.clone(), config)?;
    let mut output = String::new();
    let mut reports: Vec<WindowReport> = Vec::new();
    for i in 0..stream.rows() {
        if let Some(report) = monitor.push(stream.row(i))? {
            for line in report.lines(args.threshold) {
                writeln!(output, "{}", serde_json::to_string(&line)?).unwrap();
            }
            reports.push(report);
        }
    }

    if let Some(truth_path) = &args.truth {
        let labels = read_correct_column(truth_path)?;
        if labels.len() != stream.rows() {
            bail!(
                "{}: {} truth rows for {} stream samples",
                truth_path.display(),
                labels.len(),
                stream.rows()
            );
        }
        let scored: Vec<(WindowReport, f64)> = reports
            .iter()
            .map(|report| {
                let span = &labels[report.first_index as usize..=report.last_index as usize];
                let accuracy = span.iter().map(|l| *l as f64).sum::<f64>() / span.len() as f64;
                (report.clone(), 1.0 - accuracy)
            })
            .collect();
        let summary = score_confusion(&scored, args.threshold);
        writeln!(
            output,
            "{}",
            serde_json::to_string(&serde_json::json!({ "summary": summary }))?
        )
        .unwrap();

        if let Some(truth_out) = &args.truth_out {
            let mut table = String::from("window_id,true_inaccuracy\n");
            for (report, inaccuracy) in &scored {
                writeln!(table, "{},{}", report.window_id, inaccuracy).unwrap();
            }
            write_atomic(truth_out, table.as_bytes())?;
        }
    } else if args.truth_out.is_some() {
        bail!("--truth-out needs --truth");
    }

    emit(args.out.as_deref(), &output)?;
    Ok(ExitCode::SUCCESS)
}
