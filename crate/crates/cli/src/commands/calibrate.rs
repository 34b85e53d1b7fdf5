use std::collections::BTreeMap;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use driftwatch_core::bundle::{sha256_hex, MonitorModel, ReferenceStore, FORMAT_VERSION};
use driftwatch_core::estimator::{
    build_calibration_set, fit_estimator, measure_calibration, write_calibration_csv, FitForm,
};
use driftwatch_core::features::{fit_pca_with, pca_transform, read_features_csv, PcaOptions};
use driftwatch_core::resampling::RngSeed;

use crate::args::CalibrateArgs;
use crate::common::{parse_forms, parse_kinds};

pub fn run(args: &CalibrateArgs) -> Result<ExitCode> {
    let kinds = parse_kinds(&args.kinds)?;
    let forms = match &args.forms {
        Some(spec) => parse_forms(spec)?,
        None => BTreeMap::new(),
    };

    let cal_raw = read_features_csv(&args.cal_csv)
        .with_context(|| format!("reading {}", args.cal_csv.display()))?;
    if cal_raw.correctness().is_none() {
        bail!(
            "{}: calibration data needs a `correct` column",
            args.cal_csv.display()
        );
    }
    let ref_raw = read_features_csv(&args.ref_csv)
        .with_context(|| format!("reading {}", args.ref_csv.display()))?;

    let pca = fit_pca_with(
        &ref_raw,
        args.target_variance,
        PcaOptions {
            standardize: args.standardize,
        },
    )
    .context("fitting PCA on the reference set")?;
    let reference = pca_transform(&pca, &ref_raw)?;
    let cal = pca_transform(&pca, &cal_raw)?;

    let set = build_calibration_set(&cal, args.n, args.m, RngSeed(args.seed))?;

    let mut estimators = BTreeMap::new();
    let mut summary = String::new();
    for kind in kinds {
        let points = measure_calibration(&set, &reference, kind)
            .with_context(|| format!("measuring calibration batches for {kind}"))?;
        let form = forms
            .get(&kind)
            .copied()
            .unwrap_or_else(|| FitForm::default_for(kind));
        let estimator = fit_estimator(&points, kind, form)
            .with_context(|| format!("fitting the {form} estimator for {kind}"))?;
        summary.push_str(&format!(
            "kind={kind} form={form} rmse={:.6} r2={:.6}\n",
            estimator.fit_rmse, estimator.fit_r2
        ));
        if let Some(dir) = &args.points_out {
            std::fs::create_dir_all(dir)?;
            write_calibration_csv(&dir.join(format!("points_{kind}.csv")), &points)?;
        }
        estimators.insert(kind, estimator);
    }

    let reference_features = if args.ref_by_path {
        let absolute = std::fs::canonicalize(&args.ref_csv)
            .with_context(|| format!("resolving {}", args.ref_csv.display()))?;
        let bytes = std::fs::read(&absolute)?;
        ReferenceStore::ByPath {
            path: absolute.display().to_string(),
            sha256: sha256_hex(&bytes),
        }
    } else {
        ReferenceStore::Embedded { matrix: reference }
    };

    let model = MonitorModel {
        format_version: FORMAT_VERSION,
        pca,
        reference_features,
        estimators,
        window: args.window.unwrap_or(args.n),
        created_with_seed: RngSeed(args.seed),
    };
    model
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}
