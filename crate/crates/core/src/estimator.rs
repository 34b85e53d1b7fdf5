//! Calibrated estimators mapping a measured distance to an expected
//! inaccuracy in `[0, 1]`.
//!
//! Calibration batches mix correctly and incorrectly handled samples in
//! controlled ratios so the observed accuracy sweeps the full range; the
//! correlation between each batch's distance to the reference and its
//! inaccuracy is then captured by a fitted curve (quadratic by default,
//! logarithmic or sigmoidal for the characteristic-function statistic).
//! Evaluation clamps to 0 below the calibrated distance range, to 1 above
//! it, and applies a running-maximum envelope in between so the output is
//! globally monotone.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distances::{aggregate_distance, DistanceKind};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::fitting::{levenberg_marquardt, linear_least_squares, LmOutcome, ResidualModel};
use crate::resampling::RngSeed;
use crate::util::{quantile_sorted, r_squared, rmse};

/// Functional form of a fitted estimator. Each carries three coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitForm {
    /// `u = p0 + p1 x + p2 x^2`
    #[serde(rename = "poly2")]
    Poly2,
    /// `u = a ln(x + b) + c`
    #[serde(rename = "log3")]
    Log3,
    /// `u = L / (1 + exp(-k (x - x0)))`
    #[serde(rename = "sigmoid3")]
    Sigmoid3,
}

impl FitForm {
    pub fn as_str(self) -> &'static str {
        match self {
            FitForm::Poly2 => "poly2",
            FitForm::Log3 => "log3",
            FitForm::Sigmoid3 => "sigmoid3",
        }
    }

    /// Default form per distance kind: quadratic for the ECDF statistics,
    /// logarithmic for Epps-Singleton.
    pub fn default_for(kind: DistanceKind) -> FitForm {
        if kind == DistanceKind::EppsSingleton {
            FitForm::Log3
        } else {
            FitForm::Poly2
        }
    }
}

impl std::fmt::Display for FitForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FitForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poly2" => Ok(FitForm::Poly2),
            "log3" => Ok(FitForm::Log3),
            "sigmoid3" => Ok(FitForm::Sigmoid3),
            other => Err(Error::InvalidConfig(format!(
                "unknown fit form {other:?} (expected poly2, log3 or sigmoid3)"
            ))),
        }
    }
}

/// Batches mixing labelled-correct and labelled-incorrect rows in ratios
/// `i/m` for `i = 0..=m`, each of exactly `n` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub batches: Vec<FeatureMatrix>,
    /// Nominal correct ratio `i/m` per batch.
    pub nominal_ratio: Vec<f64>,
    /// Fraction of rows actually labelled correct per batch.
    pub observed_accuracy: Vec<f64>,
}

/// One calibration measurement: a batch's aggregate distance to the
/// reference and its observed inaccuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub sdd: f64,
    pub inaccuracy: f64,
}

/// Options for [`build_calibration_set_with`].
#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    /// Draw batch rows with replacement (default). Without replacement each
    /// batch needs enough distinct rows of each label.
    pub with_replacement: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            with_replacement: true,
        }
    }
}

/// Build the calibration set: batch `i` holds `ceil(i*n/m)` rows sampled
/// from the correct pool and the remainder from the incorrect pool, then is
/// shuffled so the mixture is not ordered. Every batch has exactly `n` rows.
pub fn build_calibration_set(
    x_cal: &FeatureMatrix,
    n: usize,
    m: usize,
    seed: RngSeed,
) -> Result<CalibrationSet> {
    build_calibration_set_with(x_cal, n, m, seed, CalibrationOptions::default())
}

pub fn build_calibration_set_with(
    x_cal: &FeatureMatrix,
    n: usize,
    m: usize,
    seed: RngSeed,
    options: CalibrationOptions,
) -> Result<CalibrationSet> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidConfig(
            "batch size n and batch count m must be positive".into(),
        ));
    }
    if x_cal.correctness().is_none() {
        return Err(Error::InvalidConfig(
            "calibration data needs a correctness label per row".into(),
        ));
    }
    let correct_pool = x_cal.rows_with_label(1);
    let incorrect_pool = x_cal.rows_with_label(0);

    let mut batches = Vec::with_capacity(m + 1);
    let mut nominal_ratio = Vec::with_capacity(m + 1);
    let mut observed_accuracy = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let correct_count = (i * n).div_ceil(m);
        let incorrect_count = n - correct_count;

        let mut rng_correct = stream(seed, 3 * i as u64);
        let mut rng_incorrect = stream(seed, 3 * i as u64 + 1);
        let mut rng_shuffle = stream(seed, 3 * i as u64 + 2);

        let mut indices = draw_pool(
            &correct_pool,
            correct_count,
            1,
            &mut rng_correct,
            options.with_replacement,
        )?;
        indices.extend(draw_pool(
            &incorrect_pool,
            incorrect_count,
            0,
            &mut rng_incorrect,
            options.with_replacement,
        )?);
        indices.shuffle(&mut rng_shuffle);

        let batch = x_cal.select_rows(&indices);
        observed_accuracy.push(batch.accuracy().unwrap_or(0.0));
        nominal_ratio.push(i as f64 / m as f64);
        batches.push(batch);
    }
    Ok(CalibrationSet {
        batches,
        nominal_ratio,
        observed_accuracy,
    })
}

fn stream(seed: RngSeed, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    // Calibration draws live in their own stream namespace.
    rng.set_stream(stream ^ 0x5CA1_AB1E_0000_0000);
    rng
}

fn draw_pool(
    pool: &[usize],
    count: usize,
    label: u8,
    rng: &mut ChaCha8Rng,
    with_replacement: bool,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if pool.is_empty() || (!with_replacement && pool.len() < count) {
        return Err(Error::InsufficientLabelled {
            label,
            required: count,
            available: pool.len(),
        });
    }
    if with_replacement {
        Ok((0..count)
            .map(|_| pool[rand::Rng::random_range(rng, 0..pool.len())])
            .collect())
    } else {
        Ok(rand::seq::index::sample(rng, pool.len(), count)
            .into_iter()
            .map(|i| pool[i])
            .collect())
    }
}

/// Measure one `(distance, inaccuracy)` point per calibration batch, where
/// inaccuracy is `1 - observed accuracy`.
pub fn measure_calibration(
    cal: &CalibrationSet,
    reference: &FeatureMatrix,
    kind: DistanceKind,
) -> Result<Vec<CalibrationPoint>> {
    cal.batches
        .iter()
        .zip(&cal.observed_accuracy)
        .map(|(batch, accuracy)| {
            let sdd = aggregate_distance(reference, batch, kind)?.aggregate;
            Ok(CalibrationPoint {
                sdd,
                inaccuracy: 1.0 - accuracy,
            })
        })
        .collect()
}

/// Export calibration points as CSV (columns batch, sdd, inaccuracy).
pub fn write_calibration_csv(path: &std::path::Path, points: &[CalibrationPoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["batch", "sdd", "inaccuracy"])?;
    for (i, p) in points.iter().enumerate() {
        writer.write_record(&[i.to_string(), p.sdd.to_string(), p.inaccuracy.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// A fitted, clamped, monotone map from measured distance to uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimator {
    pub kind: DistanceKind,
    pub form: FitForm,
    pub coeffs: Vec<f64>,
    /// Smallest distance seen during calibration; anything below maps to 0.
    pub sdd_min: f64,
    /// Largest distance seen during calibration; anything above maps to 1.
    pub sdd_max: f64,
    pub fit_rmse: f64,
    pub fit_r2: f64,
}

const LOG_B_MARGIN: f64 = 1e-8;
const SIGMOID_L_MAX: f64 = 1.5;
const PARAM_FLOOR: f64 = 1e-9;

/// Fit an estimator of the given form to calibration points by least
/// squares. The quadratic form is solved linearly; the logarithmic and
/// sigmoidal forms run bounded Levenberg-Marquardt from a grid of starts
/// (log-spaced in the offset for the logarithm).
pub fn fit_estimator(
    points: &[CalibrationPoint],
    kind: DistanceKind,
    form: FitForm,
) -> Result<UncertaintyEstimator> {
    if points.len() < 5 {
        return Err(Error::DegeneratePoints(format!(
            "need at least 5 calibration points, got {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.sdd).collect();
    let us: Vec<f64> = points.iter().map(|p| p.inaccuracy).collect();
    if xs.iter().any(|x| !x.is_finite()) || us.iter().any(|u| !u.is_finite()) {
        return Err(Error::DegeneratePoints(
            "calibration points contain non-finite values".into(),
        ));
    }
    let sdd_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let sdd_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if sdd_min == sdd_max {
        return Err(Error::DegeneratePoints(
            "all calibration distances are equal; nothing to fit".into(),
        ));
    }

    let coeffs = match form {
        FitForm::Poly2 => {
            let design = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i].powi(j as i32));
            let y = DVector::from_column_slice(&us);
            linear_least_squares(&design, &y)?
        }
        FitForm::Log3 => fit_log3(&xs, &us, sdd_min, sdd_max)?,
        FitForm::Sigmoid3 => fit_sigmoid3(&xs, &us, sdd_min, sdd_max)?,
    };

    let residuals: Vec<f64> = xs
        .iter()
        .zip(&us)
        .map(|(&x, &u)| raw_value(form, &coeffs, x) - u)
        .collect();
    Ok(UncertaintyEstimator {
        kind,
        form,
        coeffs,
        sdd_min,
        sdd_max,
        fit_rmse: rmse(&residuals),
        fit_r2: r_squared(&us, &residuals),
    })
}

/// The fitted curve before envelope and clamping.
fn raw_value(form: FitForm, coeffs: &[f64], x: f64) -> f64 {
    match form {
        FitForm::Poly2 => coeffs[0] + coeffs[1] * x + coeffs[2] * x * x,
        FitForm::Log3 => coeffs[0] * (x + coeffs[1]).ln() + coeffs[2],
        FitForm::Sigmoid3 => coeffs[0] / (1.0 + (-coeffs[1] * (x - coeffs[2])).exp()),
    }
}

struct Log3Model<'a> {
    xs: &'a [f64],
    us: &'a [f64],
    b_floor: f64,
}

impl ResidualModel for Log3Model<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn len(&self) -> usize {
        self.xs.len()
    }
    fn eval(&self, params: &[f64], residuals: &mut [f64], jacobian: &mut DMatrix<f64>) {
        let (a, b, c) = (params[0], params[1], params[2]);
        for (i, (&x, &u)) in self.xs.iter().zip(self.us).enumerate() {
            let shifted = x + b;
            let log = shifted.ln();
            residuals[i] = a * log + c - u;
            jacobian[(i, 0)] = log;
            jacobian[(i, 1)] = a / shifted;
            jacobian[(i, 2)] = 1.0;
        }
    }
    fn project(&self, params: &mut [f64]) {
        if params[1] < self.b_floor {
            params[1] = self.b_floor;
        }
    }
}

fn fit_log3(xs: &[f64], us: &[f64], sdd_min: f64, sdd_max: f64) -> Result<Vec<f64>> {
    let span = sdd_max - sdd_min;
    let b_floor = -sdd_min + LOG_B_MARGIN * span.max(1.0);
    let model = Log3Model { xs, us, b_floor };

    // For a fixed offset the problem is linear in (a, c), which makes the
    // log-spaced offset grid an effective set of starts.
    let mut best: Option<LmOutcome> = None;
    let mut iterations_seen = 0;
    for exponent in [-4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        let b0 = b_floor + span * 10f64.powf(exponent);
        let design = DMatrix::from_fn(
            xs.len(),
            2,
            |i, j| {
                if j == 0 {
                    (xs[i] + b0).ln()
                } else {
                    1.0
                }
            },
        );
        let y = DVector::from_column_slice(us);
        let (a0, c0) = match linear_least_squares(&design, &y) {
            Ok(beta) => (beta[0], beta[1]),
            Err(_) => (1.0, 0.0),
        };
        let outcome = levenberg_marquardt(&model, &[a0, b0, c0]);
        iterations_seen = iterations_seen.max(outcome.iterations);
        if outcome.converged
            && outcome.cost.is_finite()
            && best.as_ref().map(|b| outcome.cost < b.cost).unwrap_or(true)
        {
            best = Some(outcome);
        }
    }
    match best {
        Some(outcome) => Ok(outcome.params),
        None => Err(Error::NonConvergence {
            iterations: iterations_seen,
            residual: f64::NAN,
        }),
    }
}

struct Sigmoid3Model<'a> {
    xs: &'a [f64],
    us: &'a [f64],
}

impl ResidualModel for Sigmoid3Model<'_> {
    fn dim(&self) -> usize {
        3
    }
    fn len(&self) -> usize {
        self.xs.len()
    }
    fn eval(&self, params: &[f64], residuals: &mut [f64], jacobian: &mut DMatrix<f64>) {
        let (l, k, x0) = (params[0], params[1], params[2]);
        for (i, (&x, &u)) in self.xs.iter().zip(self.us).enumerate() {
            let s = 1.0 / (1.0 + (-k * (x - x0)).exp());
            residuals[i] = l * s - u;
            jacobian[(i, 0)] = s;
            jacobian[(i, 1)] = l * s * (1.0 - s) * (x - x0);
            jacobian[(i, 2)] = -l * s * (1.0 - s) * k;
        }
    }
    fn project(&self, params: &mut [f64]) {
        params[0] = params[0].clamp(PARAM_FLOOR, SIGMOID_L_MAX);
        params[1] = params[1].max(PARAM_FLOOR);
    }
}

fn fit_sigmoid3(xs: &[f64], us: &[f64], sdd_min: f64, sdd_max: f64) -> Result<Vec<f64>> {
    let span = sdd_max - sdd_min;
    let model = Sigmoid3Model { xs, us };
    let mut sorted_x = xs.to_vec();
    sorted_x.sort_by(|a, b| a.total_cmp(b));
    let u_max = us.iter().copied().fold(0.0f64, f64::max);
    let l0 = u_max.clamp(0.1, SIGMOID_L_MAX);

    let mut best: Option<LmOutcome> = None;
    let mut iterations_seen = 0;
    for quantile in [0.25, 0.5, 0.75] {
        let x0 = quantile_sorted(&sorted_x, quantile);
        for steepness in [1.0, 5.0, 20.0] {
            let k0 = steepness / span;
            let outcome = levenberg_marquardt(&model, &[l0, k0, x0]);
            iterations_seen = iterations_seen.max(outcome.iterations);
            if outcome.converged
                && outcome.cost.is_finite()
                && best.as_ref().map(|b| outcome.cost < b.cost).unwrap_or(true)
            {
                best = Some(outcome);
            }
        }
    }
    match best {
        Some(outcome) => Ok(outcome.params),
        None => Err(Error::NonConvergence {
            iterations: iterations_seen,
            residual: f64::NAN,
        }),
    }
}

impl UncertaintyEstimator {
    /// Evaluate the estimator: exactly 0 below the calibrated range, exactly
    /// 1 above it, and the clamped monotone envelope of the fitted curve in
    /// between. Non-decreasing everywhere.
    pub fn evaluate(&self, x: f64) -> f64 {
        if x > self.sdd_max {
            return 1.0;
        }
        if x < self.sdd_min {
            return 0.0;
        }
        self.envelope(x).clamp(0.0, 1.0)
    }

    /// Running maximum of the fitted curve from `sdd_min` up to `x`,
    /// computed analytically per form (each has at most one turning point).
    fn envelope(&self, x: f64) -> f64 {
        let c = &self.coeffs;
        match self.form {
            FitForm::Poly2 => {
                let (p1, p2) = (c[1], c[2]);
                if p2 > 0.0 {
                    // Downward vertex: the running max is either the left
                    // endpoint or the current value.
                    let at_min = raw_value(self.form, c, self.sdd_min);
                    raw_value(self.form, c, x).max(at_min)
                } else if p2 < 0.0 {
                    // Upward vertex at v: constant after passing it.
                    let v = (-p1 / (2.0 * p2)).max(self.sdd_min);
                    raw_value(self.form, c, x.min(v))
                } else if p1 >= 0.0 {
                    raw_value(self.form, c, x)
                } else {
                    raw_value(self.form, c, self.sdd_min)
                }
            }
            FitForm::Log3 => {
                if c[0] >= 0.0 {
                    raw_value(self.form, c, x)
                } else {
                    raw_value(self.form, c, self.sdd_min)
                }
            }
            // L and k are constrained positive: already monotone.
            FitForm::Sigmoid3 => raw_value(self.form, c, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::DistanceKind;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn labelled_fixture(seed: u64, correct: usize, incorrect: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..correct {
            rows.push(
                StandardNormal
                    .sample_iter(&mut rng)
                    .take(d)
                    .collect::<Vec<f64>>(),
            );
            labels.push(1);
        }
        for _ in 0..incorrect {
            rows.push(
                StandardNormal
                    .sample_iter(&mut rng)
                    .take(d)
                    .map(|x: f64| x + 3.0)
                    .collect::<Vec<f64>>(),
            );
            labels.push(0);
        }
        FeatureMatrix::from_rows(d, rows, Some(labels)).unwrap()
    }

    fn reference_fixture(seed: u64, rows: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = StandardNormal
            .sample_iter(&mut rng)
            .take(rows * d)
            .collect();
        FeatureMatrix::new(rows, d, data, None).unwrap()
    }

    fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
        fn ranks(values: &[f64]) -> Vec<f64> {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let mut out = vec![0.0; values.len()];
            let mut i = 0;
            while i < order.len() {
                let mut j = i;
                while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
                    j += 1;
                }
                let rank = (i + j) as f64 / 2.0 + 1.0;
                for &idx in &order[i..=j] {
                    out[idx] = rank;
                }
                i = j + 1;
            }
            out
        }
        let rx = ranks(xs);
        let ry = ranks(ys);
        let mx = rx.iter().sum::<f64>() / rx.len() as f64;
        let my = ry.iter().sum::<f64>() / ry.len() as f64;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn batch_counts_follow_the_ceiling_convention() {
        let cal = labelled_fixture(1, 200, 200, 2);
        let set = build_calibration_set(&cal, 50, 10, RngSeed(3)).unwrap();
        assert_eq!(set.batches.len(), 11);
        // i = 5 of m = 10: exactly half correct.
        let counts: Vec<usize> = set.batches[5]
            .correctness()
            .unwrap()
            .iter()
            .map(|l| *l as usize)
            .collect();
        assert_eq!(counts.iter().sum::<usize>(), 25);
        assert_eq!(set.batches[5].rows(), 50);
        // Boundary batches.
        assert_eq!(set.batches[0].rows_with_label(1).len(), 0);
        assert_eq!(set.batches[10].rows_with_label(1).len(), 50);
        assert_relative_eq!(set.observed_accuracy[0], 0.0);
        assert_relative_eq!(set.observed_accuracy[10], 1.0);

        // m = 4, n = 10, i = 1: ceil(2.5) = 3 correct, 7 incorrect.
        let set = build_calibration_set(&cal, 10, 4, RngSeed(4)).unwrap();
        assert_eq!(set.batches[1].rows(), 10);
        assert_eq!(set.batches[1].rows_with_label(1).len(), 3);
        assert_eq!(set.batches[1].rows_with_label(0).len(), 7);
        assert_relative_eq!(set.nominal_ratio[1], 0.25);
    }

    #[test]
    fn batches_are_shuffled_but_preserve_membership() {
        let cal = labelled_fixture(2, 100, 100, 1);
        let set = build_calibration_set(&cal, 40, 4, RngSeed(9)).unwrap();
        let mid = &set.batches[2];
        let labels = mid.correctness().unwrap();
        // Shuffled: correct rows are not all at the front.
        let first_half_correct = labels[..20].iter().filter(|l| **l == 1).count();
        assert!(first_half_correct != 20, "batch left unshuffled");
        // Membership: exactly the prescribed label counts survive.
        assert_eq!(labels.iter().filter(|l| **l == 1).count(), 20);
    }

    #[test]
    fn build_is_deterministic_and_checks_pools() {
        let cal = labelled_fixture(3, 60, 60, 2);
        let a = build_calibration_set(&cal, 20, 5, RngSeed(1)).unwrap();
        let b = build_calibration_set(&cal, 20, 5, RngSeed(1)).unwrap();
        assert_eq!(a, b);

        let unlabelled = reference_fixture(4, 30, 2);
        assert!(build_calibration_set(&unlabelled, 10, 5, RngSeed(0)).is_err());

        let only_correct = labelled_fixture(5, 50, 0, 1);
        assert!(matches!(
            build_calibration_set(&only_correct, 10, 5, RngSeed(0)),
            Err(Error::InsufficientLabelled { label: 0, .. })
        ));

        // Without replacement, pools must physically cover each batch.
        let small = labelled_fixture(6, 8, 8, 1);
        let without = CalibrationOptions {
            with_replacement: false,
        };
        assert!(matches!(
            build_calibration_set_with(&small, 10, 5, RngSeed(0), without),
            Err(Error::InsufficientLabelled { .. })
        ));
    }

    #[test]
    fn measurement_produces_one_point_per_batch() {
        let cal = labelled_fixture(7, 150, 150, 3);
        let reference = reference_fixture(8, 200, 3);
        let set = build_calibration_set(&cal, 30, 8, RngSeed(2)).unwrap();
        let points =
            measure_calibration(&set, &reference, DistanceKind::KolmogorovSmirnov).unwrap();
        assert_eq!(points.len(), 9);
        // The all-correct batch draws from the reference distribution.
        let last = points.last().unwrap();
        assert!(last.inaccuracy == 0.0);
        assert!(last.sdd < 0.3, "in-scope batch distance {}", last.sdd);
    }

    #[test]
    fn calibration_correlates_distance_with_inaccuracy() {
        let cal = labelled_fixture(9, 400, 400, 3);
        let reference = reference_fixture(10, 300, 3);
        let set = build_calibration_set(&cal, 50, 20, RngSeed(5)).unwrap();
        for kind in DistanceKind::ALL {
            let points = measure_calibration(&set, &reference, kind).unwrap();
            let xs: Vec<f64> = points.iter().map(|p| p.sdd).collect();
            let us: Vec<f64> = points.iter().map(|p| p.inaccuracy).collect();
            let rho = spearman(&xs, &us);
            assert!(rho >= 0.9, "{kind}: Spearman {rho}");
        }
    }

    #[test]
    fn poly2_exact_recovery() {
        let points: Vec<CalibrationPoint> = (0..=10)
            .map(|i| {
                let x = i as f64 / 10.0;
                CalibrationPoint {
                    sdd: x,
                    inaccuracy: 0.1 + 0.2 * x + 0.3 * x * x,
                }
            })
            .collect();
        let est = fit_estimator(&points, DistanceKind::KolmogorovSmirnov, FitForm::Poly2).unwrap();
        assert_relative_eq!(est.coeffs[0], 0.1, epsilon = 1e-9);
        assert_relative_eq!(est.coeffs[1], 0.2, epsilon = 1e-9);
        assert_relative_eq!(est.coeffs[2], 0.3, epsilon = 1e-9);
        assert!(est.fit_rmse < 1e-9);
        assert!(est.fit_r2 > 1.0 - 1e-9);
    }

    #[test]
    fn log3_recovery_from_multistart() {
        let points: Vec<CalibrationPoint> = (0..=20)
            .map(|i| {
                let x = 0.05 + i as f64 * 0.05;
                CalibrationPoint {
                    sdd: x,
                    inaccuracy: 0.5 * (x + 0.2).ln() + 1.0,
                }
            })
            .collect();
        let est = fit_estimator(&points, DistanceKind::EppsSingleton, FitForm::Log3).unwrap();
        assert_relative_eq!(est.coeffs[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(est.coeffs[1], 0.2, epsilon = 1e-6);
        assert_relative_eq!(est.coeffs[2], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn sigmoid3_recovery() {
        let points: Vec<CalibrationPoint> = (0..=20)
            .map(|i| {
                let x = i as f64 * 0.1;
                CalibrationPoint {
                    sdd: x,
                    inaccuracy: 0.9 / (1.0 + (-4.0 * (x - 1.0)).exp()),
                }
            })
            .collect();
        let est = fit_estimator(&points, DistanceKind::Dts, FitForm::Sigmoid3).unwrap();
        assert_relative_eq!(est.coeffs[0], 0.9, epsilon = 1e-5);
        assert_relative_eq!(est.coeffs[1], 4.0, epsilon = 1e-4);
        assert_relative_eq!(est.coeffs[2], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn fitting_rejects_degenerate_points() {
        let too_few: Vec<CalibrationPoint> = (0..4)
            .map(|i| CalibrationPoint {
                sdd: i as f64,
                inaccuracy: 0.1,
            })
            .collect();
        assert!(matches!(
            fit_estimator(&too_few, DistanceKind::KolmogorovSmirnov, FitForm::Poly2),
            Err(Error::DegeneratePoints(_))
        ));
        let flat: Vec<CalibrationPoint> = (0..6)
            .map(|i| CalibrationPoint {
                sdd: 0.5,
                inaccuracy: i as f64 / 6.0,
            })
            .collect();
        assert!(matches!(
            fit_estimator(&flat, DistanceKind::KolmogorovSmirnov, FitForm::Poly2),
            Err(Error::DegeneratePoints(_))
        ));
    }

    #[test]
    fn evaluation_clamps_outside_the_calibrated_range() {
        let est = UncertaintyEstimator {
            kind: DistanceKind::KolmogorovSmirnov,
            form: FitForm::Poly2,
            coeffs: vec![0.0, 1.0, 0.0],
            sdd_min: 0.0,
            sdd_max: 1.0,
            fit_rmse: 0.0,
            fit_r2: 1.0,
        };
        assert_eq!(est.evaluate(2.0), 1.0);
        assert_eq!(est.evaluate(-1.0), 0.0);
        // Identity polynomial inside the range.
        assert_relative_eq!(est.evaluate(0.35), 0.35);
    }

    #[test]
    fn envelope_flattens_decreasing_sections() {
        // f(x) = 0.5 - x + x^2 dips to 0.25 at x = 0.5 and recovers to 0.5
        // at x = 1; the envelope holds the left endpoint value until then.
        let est = UncertaintyEstimator {
            kind: DistanceKind::Wasserstein,
            form: FitForm::Poly2,
            coeffs: vec![0.5, -1.0, 1.0],
            sdd_min: 0.0,
            sdd_max: 2.0,
            fit_rmse: 0.0,
            fit_r2: 1.0,
        };
        assert_relative_eq!(est.evaluate(0.0), 0.5);
        assert_relative_eq!(est.evaluate(0.5), 0.5);
        assert_relative_eq!(est.evaluate(0.9), 0.5);
        assert_relative_eq!(est.evaluate(1.0), 0.5);
        assert_relative_eq!(est.evaluate(1.5), 1.25_f64.min(1.0));

        // Downward parabola: flat after its maximum.
        let cap = UncertaintyEstimator {
            kind: DistanceKind::Wasserstein,
            form: FitForm::Poly2,
            coeffs: vec![0.0, 1.0, -0.5],
            sdd_min: 0.0,
            sdd_max: 3.0,
            fit_rmse: 0.0,
            fit_r2: 1.0,
        };
        assert_relative_eq!(cap.evaluate(1.0), 0.5);
        assert_relative_eq!(cap.evaluate(2.0), 0.5);
        assert_relative_eq!(cap.evaluate(2.9), 0.5);

        // Decreasing logarithm is held at its left endpoint value.
        let declog = UncertaintyEstimator {
            kind: DistanceKind::EppsSingleton,
            form: FitForm::Log3,
            coeffs: vec![-0.3, 1.0, 0.4],
            sdd_min: 0.0,
            sdd_max: 1.0,
            fit_rmse: 0.0,
            fit_r2: 1.0,
        };
        let left = declog.evaluate(0.0);
        assert_relative_eq!(declog.evaluate(0.7), left);
    }

    #[test]
    fn evaluation_is_globally_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let form = match rng.random_range(0..3) {
                0 => FitForm::Poly2,
                1 => FitForm::Log3,
                _ => FitForm::Sigmoid3,
            };
            let sdd_min = rng.random_range(-1.0..1.0);
            let sdd_max = sdd_min + rng.random_range(0.1..3.0);
            let coeffs = match form {
                FitForm::Poly2 => vec![
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                ],
                FitForm::Log3 => vec![
                    rng.random_range(-2.0..2.0),
                    -sdd_min + rng.random_range(0.01..2.0),
                    rng.random_range(-1.0..1.0),
                ],
                FitForm::Sigmoid3 => vec![
                    rng.random_range(0.01..1.5),
                    rng.random_range(0.1..20.0),
                    rng.random_range(-1.0..3.0),
                ],
            };
            let est = UncertaintyEstimator {
                kind: DistanceKind::KolmogorovSmirnov,
                form,
                coeffs,
                sdd_min,
                sdd_max,
                fit_rmse: 0.0,
                fit_r2: 0.0,
            };
            let mut probes: Vec<f64> = (0..200)
                .map(|_| rng.random_range((sdd_min - 1.0)..(sdd_max + 1.0)))
                .collect();
            probes.sort_by(|a, b| a.total_cmp(b));
            let mut last = -f64::INFINITY;
            for &x in &probes {
                let u = est.evaluate(x);
                assert!((0.0..=1.0).contains(&u), "{form}: out of bounds {u}");
                assert!(
                    u >= last - 1e-12,
                    "{form}: not monotone at {x}: {u} < {last}"
                );
                last = u;
            }
        }
    }

    #[test]
    fn refitting_a_monotone_fit_is_idempotent() {
        let source = UncertaintyEstimator {
            kind: DistanceKind::KolmogorovSmirnov,
            form: FitForm::Poly2,
            coeffs: vec![0.05, 0.4, 0.3],
            sdd_min: 0.0,
            sdd_max: 1.0,
            fit_rmse: 0.0,
            fit_r2: 1.0,
        };
        let points: Vec<CalibrationPoint> = (0..=20)
            .map(|i| {
                let x = i as f64 / 20.0;
                CalibrationPoint {
                    sdd: x,
                    inaccuracy: source.evaluate(x),
                }
            })
            .collect();
        let refit =
            fit_estimator(&points, DistanceKind::KolmogorovSmirnov, FitForm::Poly2).unwrap();
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!(
                (refit.evaluate(x) - source.evaluate(x)).abs() < 1e-6,
                "diverged at {x}"
            );
        }
    }

    #[test]
    fn calibration_points_export_as_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("points.csv");
        let points = vec![
            CalibrationPoint {
                sdd: 0.25,
                inaccuracy: 1.0,
            },
            CalibrationPoint {
                sdd: 0.5,
                inaccuracy: 0.5,
            },
        ];
        write_calibration_csv(&path, &points).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "batch,sdd,inaccuracy\n0,0.25,1\n1,0.5,0.5\n");
    }

    #[test]
    fn estimator_serde_round_trip_evaluates_identically() {
        let points: Vec<CalibrationPoint> = (0..=15)
            .map(|i| {
                let x = i as f64 / 15.0;
                CalibrationPoint {
                    sdd: x,
                    inaccuracy: (0.2 + 0.9 * x * x).min(1.0),
                }
            })
            .collect();
        let est = fit_estimator(&points, DistanceKind::Dts, FitForm::Poly2).unwrap();
        let json = serde_json::to_string(&est).unwrap();
        let back: UncertaintyEstimator = serde_json::from_str(&json).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let x = rng.random_range(-0.5..1.5);
            let a = est.evaluate(x);
            let b = back.evaluate(x);
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
