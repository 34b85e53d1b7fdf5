//! The runtime engine: operational samples accumulate in a sliding window,
//! each full window is scored against the reference with the configured
//! distance kinds, distances map to uncertainties through the calibrated
//! estimators, and a threshold turns the result into accept/reject. Offline
//! helpers count confusion outcomes and sweep thresholds.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::distances::{aggregate_distance, DistanceKind};
use crate::error::{Error, Result};
use crate::estimator::UncertaintyEstimator;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "accept")]
    Accept,
    #[serde(rename = "reject")]
    Reject,
}

/// How multiple distance kinds combine into one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregateRule {
    /// Reject when any kind's uncertainty exceeds the threshold.
    #[serde(rename = "per-kind")]
    PerKind,
    /// Reject when the maximum uncertainty exceeds the threshold.
    #[serde(rename = "max")]
    MaxOverKinds,
    /// Reject when the mean uncertainty exceeds the threshold.
    #[serde(rename = "mean")]
    MeanOverKinds,
}

impl std::str::FromStr for AggregateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-kind" => Ok(AggregateRule::PerKind),
            "max" => Ok(AggregateRule::MaxOverKinds),
            "mean" => Ok(AggregateRule::MeanOverKinds),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregate rule {other:?} (expected per-kind, max or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    /// Window size, typically the n* selected by power analysis.
    pub window: usize,
    /// Samples between reports; `stride == window` tumbles, smaller slides.
    pub stride: usize,
    pub kinds: Vec<DistanceKind>,
    /// Uncertainty above which a window is rejected (strict inequality).
    pub threshold: f64,
    pub aggregate_rule: AggregateRule,
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be positive".into()));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::InvalidConfig(format!(
                "stride must lie in 1..={}, got {}",
                self.window, self.stride
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one distance kind is required".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.kinds.iter().all(|k| seen.insert(*k)) {
            return Err(Error::InvalidConfig("duplicate distance kinds".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Distance and mapped uncertainty for one kind over one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindReading {
    pub sdd: f64,
    pub uncertainty: f64,
}

/// One emitted window evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_id: u64,
    pub per_kind: BTreeMap<DistanceKind, KindReading>,
    /// Joint decision under the monitor's aggregation rule and threshold.
    pub decision: Decision,
    /// Absolute stream index of the first sample in the window.
    pub first_index: u64,
    /// Absolute stream index of the last sample in the window.
    pub last_index: u64,
}

/// One JSON line of the report stream: a (window, kind) pair. The decision
/// on a line is that kind's own verdict against the threshold, which is what
/// per-kind confusion tables consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub window_id: u64,
    pub kind: DistanceKind,
    pub sdd: f64,
    pub uncertainty: f64,
    pub decision: Decision,
    pub first_index: u64,
    pub last_index: u64,
}

impl WindowReport {
    /// Expand into one line per kind; each line decides for its kind alone.
    pub fn lines(&self, threshold: f64) -> Vec<ReportLine> {
        self.per_kind
            .iter()
            .map(|(kind, reading)| ReportLine {
                window_id: self.window_id,
                kind: *kind,
                sdd: reading.sdd,
                uncertainty: reading.uncertainty,
                decision: if reading.uncertainty > threshold {
                    Decision::Reject
                } else {
                    Decision::Accept
                },
                first_index: self.first_index,
                last_index: self.last_index,
            })
            .collect()
    }
}

/// Apply the aggregation rule to a report's uncertainties and decide.
/// Strict inequality: an aggregate exactly at the threshold accepts.
pub fn decide(report: &WindowReport, config: &MonitorConfig) -> Decision {
    let values: Vec<f64> = report
        .per_kind
        .values()
        .map(|reading| reading.uncertainty)
        .collect();
    let aggregate = match config.aggregate_rule {
        AggregateRule::PerKind | AggregateRule::MaxOverKinds => {
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
        AggregateRule::MeanOverKinds => values.iter().sum::<f64>() / values.len() as f64,
    };
    if aggregate > config.threshold {
        Decision::Reject
    } else {
        Decision::Accept
    }
}

/// Single-stream monitor state. One writer per stream; replaying the same
/// sample sequence yields bit-identical reports.
#[derive(Debug, Clone)]
pub struct DriftMonitor {
    config: MonitorConfig,
    reference: FeatureMatrix,
    estimators: BTreeMap<DistanceKind, UncertaintyEstimator>,
    buffer: VecDeque<Vec<f64>>,
    total: u64,
    next_window_id: u64,
}

impl DriftMonitor {
    pub fn new(
        reference: FeatureMatrix,
        estimators: BTreeMap<DistanceKind, UncertaintyEstimator>,
        config: MonitorConfig,
    ) -> Result<Self> {
        config.validate()?;
        for kind in &config.kinds {
            if !estimators.contains_key(kind) {
                return Err(Error::InvalidConfig(format!(
                    "no calibrated estimator for distance kind {kind}"
                )));
            }
        }
        if reference.rows() == 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self {
            buffer: VecDeque::with_capacity(config.window),
            config,
            reference,
            estimators,
            total: 0,
            next_window_id: 0,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    /// Feed one operational sample. A report is emitted for every stride-th
    /// sample once the buffer holds a full window; otherwise `None`.
    pub fn push(&mut self, sample: &[f64]) -> Result<Option<WindowReport>> {
        if sample.len() != self.reference.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.reference.cols(),
                got: sample.len(),
            });
        }
        if let Some((index, &value)) = sample.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index, value });
        }
        if self.buffer.len() == self.config.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sample.to_vec());
        self.total += 1;

        let window = self.config.window as u64;
        if self.total < window || !(self.total - window).is_multiple_of(self.config.stride as u64) {
            return Ok(None);
        }

        let rows: Vec<Vec<f64>> = self.buffer.iter().cloned().collect();
        let matrix = FeatureMatrix::from_rows(self.reference.cols(), rows, None)?;
        let mut per_kind = BTreeMap::new();
        for kind in &self.config.kinds {
            let sdd = aggregate_distance(&self.reference, &matrix, *kind)?.aggregate;
            let uncertainty = self.estimators[kind].evaluate(sdd);
            per_kind.insert(*kind, KindReading { sdd, uncertainty });
        }

        let mut report = WindowReport {
            window_id: self.next_window_id,
            per_kind,
            decision: Decision::Accept,
            first_index: self.total - window,
            last_index: self.total - 1,
        };
        report.decision = decide(&report, &self.config);
        self.next_window_id += 1;
        Ok(Some(report))
    }
}

/// Confusion counts over scored reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    /// Windows rejected.
    pub rejected: usize,
    /// Rejected windows whose true inaccuracy was below the threshold.
    pub false_rejects: usize,
    /// Accepted windows whose true inaccuracy exceeded the threshold.
    pub missed: usize,
    pub total: usize,
}

/// Score decisions against true window inaccuracies. Boundary cases (true
/// inaccuracy exactly at the threshold) count as neither false reject nor
/// miss.
pub fn score_outcomes(outcomes: &[(Decision, f64)], threshold: f64) -> ConfusionSummary {
    let mut summary = ConfusionSummary {
        rejected: 0,
        false_rejects: 0,
        missed: 0,
        total: outcomes.len(),
    };
    for (decision, inaccuracy) in outcomes {
        match decision {
            Decision::Reject => {
                summary.rejected += 1;
                if *inaccuracy < threshold {
                    summary.false_rejects += 1;
                }
            }
            Decision::Accept => {
                if *inaccuracy > threshold {
                    summary.missed += 1;
                }
            }
        }
    }
    summary
}

/// Score full reports by their joint decision.
pub fn score_confusion(reports: &[(WindowReport, f64)], threshold: f64) -> ConfusionSummary {
    let outcomes: Vec<(Decision, f64)> = reports
        .iter()
        .map(|(report, inaccuracy)| (report.decision, *inaccuracy))
        .collect();
    score_outcomes(&outcomes, threshold)
}

/// One row of a threshold sweep: the accuracy guarantee implied by
/// accepting everything at or below the uncertainty threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Minimum true accuracy among accepted windows (the empirical
    /// cut-off); absent when everything is rejected.
    pub cutoff: Option<f64>,
    /// Mean true accuracy among accepted windows.
    pub mean_accuracy: Option<f64>,
    pub rejected: usize,
}

/// Re-decide every report at each candidate threshold under the given rule
/// and record the accuracy cut-off among accepted windows.
pub fn threshold_sweep(
    reports: &[(WindowReport, f64)],
    thresholds: &[f64],
    rule: AggregateRule,
) -> Vec<SweepRow> {
    thresholds
        .iter()
        .map(|&threshold| {
            let config = MonitorConfig {
                window: 1,
                stride: 1,
                kinds: vec![DistanceKind::KolmogorovSmirnov],
                threshold,
                aggregate_rule: rule,
            };
            let mut accepted_acc = Vec::new();
            let mut rejected = 0usize;
            for (report, inaccuracy) in reports {
                match decide(report, &config) {
                    Decision::Reject => rejected += 1,
                    Decision::Accept => accepted_acc.push(1.0 - inaccuracy),
                }
            }
            let cutoff = accepted_acc.iter().copied().reduce(f64::min);
            let mean_accuracy = if accepted_acc.is_empty() {
                None
            } else {
                Some(accepted_acc.iter().sum::<f64>() / accepted_acc.len() as f64)
            };
            SweepRow {
                threshold,
                cutoff,
                mean_accuracy,
                rejected,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::FitForm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_estimator(kind: DistanceKind, sdd_max: f64) -> UncertaintyEstimator {
        UncertaintyEstimator {
            kind,
            form: FitForm::Poly2,
            coeffs: vec![0.0, 1.0 / sdd_max, 0.0],
            sdd_min: 0.0,
            sdd_max,
            fit_rmse: 0.0,
            fit_r2: 1.0,
        }
    }

    fn normal_matrix(seed: u64, rows: usize, cols: usize, shift: f64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = StandardNormal
            .sample_iter(&mut rng)
            .take(rows * cols)
            .map(|x: f64| x + shift)
            .collect();
        FeatureMatrix::new(rows, cols, data, None).unwrap()
    }

    fn basic_monitor(window: usize, stride: usize) -> DriftMonitor {
        let reference = normal_matrix(1, 100, 1, 0.0);
        let kind = DistanceKind::KolmogorovSmirnov;
        let mut estimators = BTreeMap::new();
        estimators.insert(kind, identity_estimator(kind, 1.0));
        DriftMonitor::new(
            reference,
            estimators,
            MonitorConfig {
                window,
                stride,
                kinds: vec![kind],
                threshold: 0.5,
                aggregate_rule: AggregateRule::PerKind,
            },
        )
        .unwrap()
    }

    fn report_with(uncertainties: &[f64]) -> WindowReport {
        let kinds = [
            DistanceKind::KolmogorovSmirnov,
            DistanceKind::CramerVonMises,
            DistanceKind::AndersonDarling,
        ];
        let per_kind: BTreeMap<_, _> = uncertainties
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                (
                    kinds[i],
                    KindReading {
                        sdd: u,
                        uncertainty: u,
                    },
                )
            })
            .collect();
        WindowReport {
            window_id: 0,
            per_kind,
            decision: Decision::Accept,
            first_index: 0,
            last_index: 0,
        }
    }

    #[test]
    fn tumbling_reports_at_exact_multiples() {
        let mut monitor = basic_monitor(50, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut emitted = Vec::new();
        for i in 0..170u64 {
            let x: f64 = StandardNormal.sample(&mut rng);
            if let Some(report) = monitor.push(&[x]).unwrap() {
                emitted.push((i + 1, report));
            }
        }
        let positions: Vec<u64> = emitted.iter().map(|(pos, _)| *pos).collect();
        assert_eq!(positions, vec![50, 100, 150]);
        assert_eq!(emitted[0].1.window_id, 0);
        assert_eq!(emitted[1].1.window_id, 1);
        assert_eq!((emitted[0].1.first_index, emitted[0].1.last_index), (0, 49));
        assert_eq!(
            (emitted[1].1.first_index, emitted[1].1.last_index),
            (50, 99)
        );
    }

    #[test]
    fn sliding_reports_every_sample_after_fill() {
        let mut monitor = basic_monitor(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut positions = Vec::new();
        for i in 0..55u64 {
            let x: f64 = StandardNormal.sample(&mut rng);
            if monitor.push(&[x]).unwrap().is_some() {
                positions.push(i + 1);
            }
        }
        assert_eq!(positions, vec![50, 51, 52, 53, 54, 55]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let samples: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            StandardNormal.sample_iter(&mut rng).take(120).collect()
        };
        let run = |samples: &[f64]| {
            let mut monitor = basic_monitor(40, 20);
            let mut out = Vec::new();
            for &x in samples {
                if let Some(r) = monitor.push(&[x]).unwrap() {
                    out.push(serde_json::to_string(&r).unwrap());
                }
            }
            out
        };
        assert_eq!(run(&samples), run(&samples));
    }

    #[test]
    fn push_rejects_wrong_dimension() {
        let mut monitor = basic_monitor(10, 10);
        assert!(matches!(
            monitor.push(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
        assert!(monitor.push(&[f64::NAN]).is_err());
    }

    #[test]
    fn decide_applies_rules_with_strict_inequality() {
        let config = |rule, threshold| MonitorConfig {
            window: 1,
            stride: 1,
            kinds: vec![DistanceKind::KolmogorovSmirnov],
            threshold,
            aggregate_rule: rule,
        };
        let report = report_with(&[0.7, 0.3]);
        assert_eq!(
            decide(&report, &config(AggregateRule::MaxOverKinds, 0.5)),
            Decision::Reject
        );
        assert_eq!(
            decide(&report, &config(AggregateRule::MeanOverKinds, 0.5)),
            Decision::Accept
        );
        assert_eq!(
            decide(&report, &config(AggregateRule::PerKind, 0.5)),
            Decision::Reject
        );
        // Exactly at the threshold accepts.
        let boundary = report_with(&[0.5, 0.5]);
        for rule in [
            AggregateRule::PerKind,
            AggregateRule::MaxOverKinds,
            AggregateRule::MeanOverKinds,
        ] {
            assert_eq!(decide(&boundary, &config(rule, 0.5)), Decision::Accept);
        }
    }

    #[test]
    fn confusion_counts_follow_strict_definitions() {
        let outcomes = [
            (Decision::Reject, 0.3), // false reject
            (Decision::Reject, 0.8), // justified reject
            (Decision::Accept, 0.8), // miss
            (Decision::Accept, 0.2), // fine
            (Decision::Reject, 0.5), // boundary: neither
            (Decision::Accept, 0.5), // boundary: neither
        ];
        let summary = score_outcomes(&outcomes, 0.5);
        assert_eq!(summary.rejected, 3);
        assert_eq!(summary.false_rejects, 1);
        assert_eq!(summary.missed, 1);
        assert_eq!(summary.total, 6);
        assert!(summary.false_rejects <= summary.rejected);
        assert!(summary.missed <= summary.total - summary.rejected);
    }

    #[test]
    fn sweep_monotone_fixture_crosses_at_expected_threshold() {
        // Uncertainty exactly 1 - accuracy, windows spread over [0, 1].
        let reports: Vec<(WindowReport, f64)> = (0..=10)
            .map(|i| {
                let u = i as f64 / 10.0;
                let mut report = report_with(&[u]);
                report.window_id = i as u64;
                (report, u)
            })
            .collect();
        let thresholds: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows = threshold_sweep(&reports, &thresholds, AggregateRule::PerKind);
        // Cut-off decreases as the threshold rises and crosses 0.6 at 0.4.
        let at_04 = rows.iter().find(|r| r.threshold == 0.4).unwrap();
        assert_eq!(at_04.cutoff, Some(0.6));
        let mut last = f64::INFINITY;
        for row in &rows {
            if let Some(cutoff) = row.cutoff {
                assert!(cutoff <= last + 1e-12);
                last = cutoff;
            }
        }
        // Threshold 1: nothing is rejected, so the cut-off is the overall
        // minimum accuracy.
        let at_1 = rows.last().unwrap();
        assert_eq!(at_1.rejected, 0);
        assert_eq!(at_1.cutoff, Some(0.0));
    }

    #[test]
    fn sweep_degenerate_threshold_zero() {
        // All uncertainties strictly positive: everything is rejected.
        let reports: Vec<(WindowReport, f64)> = (1..=5)
            .map(|i| {
                let u = i as f64 / 10.0;
                (report_with(&[u]), u)
            })
            .collect();
        let rows = threshold_sweep(&reports, &[0.0], AggregateRule::PerKind);
        assert_eq!(rows[0].rejected, 5);
        assert_eq!(rows[0].cutoff, None);
        assert_eq!(rows[0].mean_accuracy, None);
    }

    #[test]
    fn in_scope_stream_has_low_uncertainty() {
        // Calibrate a KS estimator on a synthetic mixture, then feed pure
        // reference-distribution samples.
        use crate::estimator::{build_calibration_set, fit_estimator, measure_calibration};
        use crate::resampling::RngSeed;

        let reference = normal_matrix(10, 300, 2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..300 {
            rows.push(vec![
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ]);
            labels.push(1u8);
        }
        for _ in 0..300 {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![a + 3.0, b + 3.0]);
            labels.push(0u8);
        }
        let cal = FeatureMatrix::from_rows(2, rows, Some(labels)).unwrap();
        let set = build_calibration_set(&cal, 50, 10, RngSeed(12)).unwrap();
        let kind = DistanceKind::KolmogorovSmirnov;
        let points = measure_calibration(&set, &reference, kind).unwrap();
        let estimator = fit_estimator(&points, kind, FitForm::Poly2).unwrap();

        let mut estimators = BTreeMap::new();
        estimators.insert(kind, estimator);
        let mut monitor = DriftMonitor::new(
            reference,
            estimators,
            MonitorConfig {
                window: 50,
                stride: 50,
                kinds: vec![kind],
                threshold: 0.5,
                aggregate_rule: AggregateRule::PerKind,
            },
        )
        .unwrap();

        let mut report = None;
        for _ in 0..50 {
            let sample = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            if let Some(r) = monitor.push(&sample).unwrap() {
                report = Some(r);
            }
        }
        let report = report.expect("window should fill");
        let reading = report.per_kind[&kind];
        assert!(
            reading.uncertainty <= 0.2,
            "in-scope uncertainty {}",
            reading.uncertainty
        );
        assert_eq!(report.decision, Decision::Accept);
    }

    #[test]
    fn report_lines_decide_per_kind() {
        let report = report_with(&[0.7, 0.3, 0.5]);
        let lines = report.lines(0.5);
        assert_eq!(lines.len(), 3);
        let decisions: Vec<Decision> = lines.iter().map(|l| l.decision).collect();
        assert_eq!(
            decisions,
            vec![Decision::Reject, Decision::Accept, Decision::Accept]
        );
        let json = serde_json::to_string(&lines[0]).unwrap();
        assert!(json.contains("\"window_id\":0"));
        assert!(json.contains("\"decision\":\"reject\""));
        assert!(json.contains("\"kind\":\"ks\""));
    }
}
