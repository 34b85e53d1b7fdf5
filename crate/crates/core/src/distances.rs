//! Univariate two-sample distance statistics and their per-feature aggregation.
//!
//! Five statistics compare empirical cumulative distribution functions
//! (Kolmogorov-Smirnov, Cramer-von Mises, Anderson-Darling, 1-Wasserstein,
//! DTS); the sixth (Epps-Singleton) compares empirical characteristic
//! functions and comes with an asymptotic chi-squared p-value. All of them
//! treat ties as right-continuous ECDF jumps of `k/n`; nothing is jittered.
//!
//! For multi-feature data every statistic is computed column by column and
//! averaged, which is what the rest of the crate consumes as the scalar
//! dissimilarity between a reference set and an operational window.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::util::{mean, quantile_sorted};

/// A validated, ascending-sorted sample of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSample {
    values: Vec<f64>,
}

impl SortedSample {
    /// Sort and validate a raw sample. Rejects empty input and non-finite
    /// values (reporting the offending index in the original ordering).
    pub fn new(mut sample: Vec<f64>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some((index, &value)) = sample.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index, value });
        }
        sample.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { values: sample })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty samples
    }

    /// Right-continuous ECDF: (count of values <= x) / len.
    pub fn ecdf(&self, x: f64) -> f64 {
        let count = self.values.partition_point(|v| *v <= x);
        count as f64 / self.values.len() as f64
    }
}

/// The supported two-sample distance statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistanceKind {
    #[serde(rename = "ks")]
    KolmogorovSmirnov,
    #[serde(rename = "cvm")]
    CramerVonMises,
    #[serde(rename = "ad")]
    AndersonDarling,
    #[serde(rename = "ws")]
    Wasserstein,
    #[serde(rename = "dts")]
    Dts,
    #[serde(rename = "es")]
    EppsSingleton,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 6] = [
        DistanceKind::KolmogorovSmirnov,
        DistanceKind::CramerVonMises,
        DistanceKind::AndersonDarling,
        DistanceKind::Wasserstein,
        DistanceKind::Dts,
        DistanceKind::EppsSingleton,
    ];

    /// The ECDF-based statistics, i.e. everything except Epps-Singleton.
    pub const ECDF: [DistanceKind; 5] = [
        DistanceKind::KolmogorovSmirnov,
        DistanceKind::CramerVonMises,
        DistanceKind::AndersonDarling,
        DistanceKind::Wasserstein,
        DistanceKind::Dts,
    ];

    pub fn is_ecdf(self) -> bool {
        self != DistanceKind::EppsSingleton
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::KolmogorovSmirnov => "ks",
            DistanceKind::CramerVonMises => "cvm",
            DistanceKind::AndersonDarling => "ad",
            DistanceKind::Wasserstein => "ws",
            DistanceKind::Dts => "dts",
            DistanceKind::EppsSingleton => "es",
        }
    }
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ks" => Ok(DistanceKind::KolmogorovSmirnov),
            "cvm" => Ok(DistanceKind::CramerVonMises),
            "ad" => Ok(DistanceKind::AndersonDarling),
            "ws" => Ok(DistanceKind::Wasserstein),
            "dts" => Ok(DistanceKind::Dts),
            "es" => Ok(DistanceKind::EppsSingleton),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance kind {other:?} (expected one of ks, cvm, ad, ws, dts, es)"
            ))),
        }
    }
}

/// Evaluation points for the Epps-Singleton characteristic-function test.
///
/// The points are divided by the semi-interquartile range of the pooled
/// sample before use, so the defaults `(0.4, 0.8)` are scale-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsParams {
    pub t: Vec<f64>,
}

impl Default for EsParams {
    fn default() -> Self {
        Self { t: vec![0.4, 0.8] }
    }
}

impl EsParams {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::InvalidConfig(
                "Epps-Singleton needs at least one evaluation point".into(),
            ));
        }
        if t.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidConfig(
                "Epps-Singleton evaluation points must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { t })
    }

    /// Number of evaluation points J.
    pub fn count(&self) -> usize {
        self.t.len()
    }

    /// Minimum sample size needed for the covariance estimate (2J + 1).
    pub fn min_sample_size(&self) -> usize {
        2 * self.t.len() + 1
    }
}

/// Epps-Singleton test outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsResult {
    /// Quadratic-form statistic over the stacked ECF differences.
    pub w2: f64,
    /// Upper tail of chi-squared with `df` degrees of freedom at `w2`.
    pub p_value: f64,
    /// Rank of the estimated ECF covariance, nominally `2J`.
    pub df: usize,
}

/// Per-feature distances between two feature matrices plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub kind: DistanceKind,
    pub per_feature: Vec<f64>,
    /// Arithmetic mean of `per_feature`.
    pub aggregate: f64,
    /// Left unset here; the resampling layer fills it in where defined.
    pub p_value: Option<f64>,
}

/// One distinct pooled value with both ECDFs evaluated at it.
struct Breakpoint {
    value: f64,
    f_a: f64,
    f_b: f64,
    /// Pooled observations <= value.
    cum: usize,
    /// Pooled observations equal to value.
    mult: usize,
}

/// Walk the two sorted samples in merged order, emitting one entry per
/// distinct pooled value.
fn breakpoints(a: &SortedSample, b: &SortedSample) -> Vec<Breakpoint> {
    let (va, vb) = (a.values(), b.values());
    let (na, nb) = (va.len() as f64, vb.len() as f64);
    let mut out = Vec::with_capacity(va.len() + vb.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    while ia < va.len() || ib < vb.len() {
        let value = match (va.get(ia), vb.get(ib)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let mut mult = 0usize;
        while ia < va.len() && va[ia] == value {
            ia += 1;
            mult += 1;
        }
        while ib < vb.len() && vb[ib] == value {
            ib += 1;
            mult += 1;
        }
        out.push(Breakpoint {
            value,
            f_a: ia as f64 / na,
            f_b: ib as f64 / nb,
            cum: ia + ib,
            mult,
        });
    }
    out
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
///
/// The supremum of a difference of step functions is attained at a pooled
/// sample point, so scanning the breakpoints is exact. Result in [0, 1].
pub fn ks_distance(a: &SortedSample, b: &SortedSample) -> f64 {
    breakpoints(a, b)
        .iter()
        .map(|bp| (bp.f_a - bp.f_b).abs())
        .fold(0.0, f64::max)
}

/// Two-sample Cramer-von Mises statistic in its rank form:
/// `T = nm/(n+m)^2 * sum over pooled order statistics of (F_a - F_b)^2`,
/// with tied values contributing once per pooled observation.
pub fn cvm_distance(a: &SortedSample, b: &SortedSample) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let total = n + m;
    let sum: f64 = breakpoints(a, b)
        .iter()
        .map(|bp| {
            let d = bp.f_a - bp.f_b;
            bp.mult as f64 * d * d
        })
        .sum();
    n * m / (total * total) * sum
}

/// Two-sample Anderson-Darling statistic in its rank form:
/// `A^2 = nm/N^2 * sum (F_a - F_b)^2 / (H (1 - H))` over pooled order
/// statistics, where `H` is the pooled ECDF. Observations equal to the pooled
/// maximum are excluded (there `H = 1` and the weight is singular).
///
/// Matches the right-continuous variant of the k-sample statistic for k = 2.
pub fn ad_distance(a: &SortedSample, b: &SortedSample) -> Result<f64> {
    let bps = breakpoints(a, b);
    if bps.len() < 2 {
        return Err(Error::DegenerateSample(
            "all pooled values identical; Anderson-Darling weight undefined".into(),
        ));
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let total = n + m;
    let sum: f64 = bps
        .iter()
        .filter(|bp| bp.cum < (n + m) as usize)
        .map(|bp| {
            let h = bp.cum as f64 / total;
            let d = bp.f_a - bp.f_b;
            bp.mult as f64 * d * d / (h * (1.0 - h))
        })
        .sum();
    Ok(n * m / (total * total) * sum)
}

/// 1-Wasserstein distance between the two ECDFs: the exact integral of
/// `|F_a - F_b|` over the real line, evaluated piecewise on pooled
/// breakpoint intervals.
pub fn wasserstein_distance(a: &SortedSample, b: &SortedSample) -> f64 {
    let bps = breakpoints(a, b);
    let mut acc = 0.0;
    for pair in bps.windows(2) {
        let dx = pair[1].value - pair[0].value;
        acc += (pair[0].f_a - pair[0].f_b).abs() * dx;
    }
    acc
}

/// DTS statistic: squared ECDF difference integrated over x with the
/// variance weight `1 / (H(x) (1 - H(x)))` on pooled breakpoint intervals.
/// Zero iff the ECDFs coincide on the pooled breakpoints.
pub fn dts_distance(a: &SortedSample, b: &SortedSample) -> Result<f64> {
    let bps = breakpoints(a, b);
    if bps.len() < 2 {
        return Err(Error::DegenerateSample(
            "all pooled values identical; DTS weight undefined".into(),
        ));
    }
    let total = (a.len() + b.len()) as f64;
    let mut acc = 0.0;
    for pair in bps.windows(2) {
        let dx = pair[1].value - pair[0].value;
        let h = pair[0].cum as f64 / total;
        let d = pair[0].f_a - pair[0].f_b;
        acc += d * d / (h * (1.0 - h)) * dx;
    }
    Ok(acc)
}

/// Epps-Singleton two-sample test on empirical characteristic functions.
///
/// Evaluation points are scaled by the semi-interquartile range of the pooled
/// sample; the statistic is the quadratic form of the stacked cos/sin ECF
/// differences under the empirically estimated covariance, and is referred to
/// chi-squared with degrees of freedom equal to the covariance rank
/// (nominally `2J`). No small-sample correction is applied.
pub fn es_statistic(a: &SortedSample, b: &SortedSample, params: &EsParams) -> Result<EsResult> {
    let dim = 2 * params.count();
    let required = params.min_sample_size();
    let smallest = a.len().min(b.len());
    if smallest < required {
        return Err(Error::InsufficientSamples {
            required,
            got: smallest,
        });
    }

    let mut pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    pooled.sort_by(|x, y| x.total_cmp(y));
    let sigma = (quantile_sorted(&pooled, 0.75) - quantile_sorted(&pooled, 0.25)) / 2.0;
    if sigma <= 0.0 {
        return Err(Error::DegenerateSample(
            "pooled semi-interquartile range is zero".into(),
        ));
    }
    let scaled: Vec<f64> = params.t.iter().map(|t| t / sigma).collect();

    let ecf = |sample: &SortedSample| -> (DVector<f64>, DMatrix<f64>) {
        let n = sample.len();
        let mut rows = DMatrix::zeros(n, dim);
        for (i, &x) in sample.values().iter().enumerate() {
            for (j, &t) in scaled.iter().enumerate() {
                let arg = t * x;
                rows[(i, 2 * j)] = arg.cos();
                rows[(i, 2 * j + 1)] = arg.sin();
            }
        }
        let mean = rows.row_mean().transpose();
        let mut cov = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let centered = rows.row(i).transpose() - &mean;
            cov += &centered * centered.transpose();
        }
        cov /= n as f64;
        (mean, cov)
    };

    let (mean_a, cov_a) = ecf(a);
    let (mean_b, cov_b) = ecf(b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let total = n1 + n2;
    let omega = cov_a * (total / n1) + cov_b * (total / n2);

    let svd = omega.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if s_max <= 0.0 {
        return Err(Error::DegenerateSample(
            "characteristic-function covariance has rank zero".into(),
        ));
    }
    let eps = s_max * 1e-12;
    let df = svd.singular_values.iter().filter(|s| **s > eps).count();
    let pinv = svd
        .pseudo_inverse(eps)
        .map_err(|e| Error::DegenerateSample(format!("covariance pseudo-inverse failed: {e}")))?;

    let diff = mean_a - mean_b;
    let w2 = (total * (diff.transpose() * pinv * diff)[(0, 0)]).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1 checked above");
    let p_value = if w2 == 0.0 { 1.0 } else { chi.sf(w2) };
    Ok(EsResult { w2, p_value, df })
}

/// Univariate distance of the requested kind. For Epps-Singleton the value
/// is the W2 statistic (its p-value is dropped at this level).
pub fn distance(a: &SortedSample, b: &SortedSample, kind: DistanceKind) -> Result<f64> {
    match kind {
        DistanceKind::KolmogorovSmirnov => Ok(ks_distance(a, b)),
        DistanceKind::CramerVonMises => Ok(cvm_distance(a, b)),
        DistanceKind::AndersonDarling => ad_distance(a, b),
        DistanceKind::Wasserstein => Ok(wasserstein_distance(a, b)),
        DistanceKind::Dts => dts_distance(a, b),
        DistanceKind::EppsSingleton => es_statistic(a, b, &EsParams::default()).map(|r| r.w2),
    }
}

/// Column-by-column distance between two feature matrices, averaged into one
/// scalar. Feature `i` of the result compares column `i` of `reference`
/// against column `i` of `window`; errors are annotated with the feature
/// index they arose in.
pub fn aggregate_distance(
    reference: &FeatureMatrix,
    window: &FeatureMatrix,
    kind: DistanceKind,
) -> Result<DistanceResult> {
    if reference.cols() != window.cols() {
        return Err(Error::DimensionMismatch {
            expected: reference.cols(),
            got: window.cols(),
        });
    }
    if reference.rows() == 0 || window.rows() == 0 {
        return Err(Error::EmptySample);
    }
    let mut per_feature = Vec::with_capacity(reference.cols());
    for feature in 0..reference.cols() {
        let a = SortedSample::new(reference.column(feature)).map_err(|e| e.for_feature(feature))?;
        let b = SortedSample::new(window.column(feature)).map_err(|e| e.for_feature(feature))?;
        let d = distance(&a, &b, kind).map_err(|e| e.for_feature(feature))?;
        per_feature.push(d);
    }
    let aggregate = mean(&per_feature);
    Ok(DistanceResult {
        kind,
        per_feature,
        aggregate,
        p_value: None,
    })
}

/// Epps-Singleton over a whole feature matrix: per-feature W2 statistics are
/// summed (as are their degrees of freedom) and referred to one chi-squared
/// upper tail, which is exact when features are independent. Returns the
/// per-feature mean W2 alongside that combined p-value.
pub fn es_aggregate_p(
    reference: &FeatureMatrix,
    window: &FeatureMatrix,
    params: &EsParams,
) -> Result<(f64, f64)> {
    if reference.cols() != window.cols() {
        return Err(Error::DimensionMismatch {
            expected: reference.cols(),
            got: window.cols(),
        });
    }
    let mut total_w2 = 0.0;
    let mut total_df = 0usize;
    for feature in 0..reference.cols() {
        let a = SortedSample::new(reference.column(feature)).map_err(|e| e.for_feature(feature))?;
        let b = SortedSample::new(window.column(feature)).map_err(|e| e.for_feature(feature))?;
        let res = es_statistic(&a, &b, params).map_err(|e| e.for_feature(feature))?;
        total_w2 += res.w2;
        total_df += res.df;
    }
    let chi = ChiSquared::new(total_df as f64)
        .map_err(|_| Error::DegenerateSample("zero combined degrees of freedom".into()))?;
    let p = if total_w2 == 0.0 {
        1.0
    } else {
        chi.sf(total_w2)
    };
    Ok((total_w2 / reference.cols() as f64, p))
}
