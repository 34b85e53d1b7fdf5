use std::fmt::Write as _;
use std::process::ExitCode;

use anyhow::{Context, Result};
use driftwatch_core::features::read_features_csv;
use driftwatch_core::resampling::{power_analysis, RngSeed};

use crate::args::PowerArgs;
use crate::common::{emit, parse_kind, parse_sizes, write_atomic};

pub fn run(args: &PowerArgs) -> Result<ExitCode> {
    let kind = parse_kind(&args.kind)?;
    let sizes = parse_sizes(&args.sizes)?;
    let train = read_features_csv(&args.train_csv)
        .with_context(|| format!("reading {}", args.train_csv.display()))?;
    let ood = read_features_csv(&args.ood_csv)
        .with_context(|| format!("reading {}", args.ood_csv.display()))?;

    // The training set doubles as the reference the batches are tested
    // against; in-scope batches are drawn from it.
    let curve = power_analysis(
        &train,
        &ood,
        &train,
        &sizes,
        kind,
        args.alpha,
        args.trials,
        RngSeed(args.seed),
    )?;

    let mut json = serde_json::to_string_pretty(&curve)?;
    json.push('\n');
    emit(args.json.as_deref(), &json)?;

    if let Some(csv_path) = &args.csv {
        let mut table = String::from("size,power\n");
        for (size, power) in curve.sizes.iter().zip(&curve.power) {
            writeln!(table, "{size},{power}").unwrap();
        }
        write_atomic(csv_path, table.as_bytes())?;
    }

    if curve.n_star.is_some() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("no candidate size reached full power; n_star absent");
        Ok(ExitCode::from(2))
    }
}
