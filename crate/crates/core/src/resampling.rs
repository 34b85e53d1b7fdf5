//! Permutation p-values, critical values, and bootstrapped power analysis.
//!
//! Everything here is seeded and bit-reproducible: replicates draw from
//! deterministically derived RNG streams and results are reduced in
//! replicate-index order, so the same seed and inputs always produce the same
//! numbers regardless of timing.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distances::{
    aggregate_distance, distance, es_aggregate_p, DistanceKind, EsParams, SortedSample,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Seed for all randomized operations. The same seed on the same inputs
/// yields bit-identical outputs across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

/// One RNG per (seed, stream) pair; streams are independent, so replicates
/// can be evaluated in any order without changing their draws.
fn stream_rng(seed: RngSeed, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed for a nested seeded operation (splitmix64 step).
fn sub_seed(seed: RngSeed, tag: u64) -> RngSeed {
    let mut z = seed.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    RngSeed(z ^ (z >> 31))
}

/// Power fraction per candidate window size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub kind: DistanceKind,
    pub sizes: Vec<usize>,
    /// Fraction of passed trials per size, each in [0, 1].
    pub power: Vec<f64>,
    pub alpha: f64,
    pub trials: usize,
    /// Bonferroni-adjusted per-trial level, exactly `alpha / trials`.
    pub adjusted_alpha: f64,
    /// Smallest size whose power reached 1.0, if any.
    pub n_star: Option<usize>,
}

/// A (1 - alpha) null quantile for a two-sample statistic at given sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub kind: DistanceKind,
    pub alpha: f64,
    pub n: usize,
    pub m2: usize,
    pub value: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Permutation p-value for the ECDF-based statistics: the pooled sample is
/// randomly split into the original sizes `n_boot` times and the add-one
/// estimator `p = (1 + #{resampled >= observed}) / (n_boot + 1)` is returned,
/// so `p` always lies in `[1/(n_boot+1), 1]`.
pub fn bootstrap_p_value(
    a: &SortedSample,
    b: &SortedSample,
    kind: DistanceKind,
    n_boot: usize,
    seed: RngSeed,
) -> Result<f64> {
    if kind == DistanceKind::EppsSingleton {
        return Err(Error::UnsupportedKind {
            kind,
            reason: "Epps-Singleton has an analytic p-value; use es_statistic".into(),
        });
    }
    if n_boot < 100 {
        return Err(Error::InvalidConfig(format!(
            "n_boot must be at least 100, got {n_boot}"
        )));
    }
    let observed = distance(a, b, kind)?;
    let pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    let split = a.len();

    let mut exceed = 0usize;
    let mut perm = pooled.clone();
    for replicate in 0..n_boot {
        let mut rng = stream_rng(seed, replicate as u64);
        perm.copy_from_slice(&pooled);
        perm.shuffle(&mut rng);
        let ra = SortedSample::new(perm[..split].to_vec())?;
        let rb = SortedSample::new(perm[split..].to_vec())?;
        if distance(&ra, &rb, kind)? >= observed {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (n_boot + 1) as f64)
}

/// Asymptotic two-sample Kolmogorov-Smirnov critical value:
/// `c(alpha) * sqrt((n + m2) / (n * m2))` with
/// `c(alpha) = sqrt(-ln(alpha/2) / 2)`.
pub fn ks_critical_value(n: usize, m2: usize, alpha: f64) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    if n == 0 || m2 == 0 {
        return Err(Error::InvalidConfig("sample sizes must be positive".into()));
    }
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let value = c * ((n + m2) as f64 / (n as f64 * m2 as f64)).sqrt();
    Ok(CriticalValue {
        kind: DistanceKind::KolmogorovSmirnov,
        alpha,
        n,
        m2,
        value,
    })
}

const AD_NULL_DRAWS: usize = 10_000;

/// Memoized AD critical values, keyed by (alpha bits, n, m2, seed).
type AdCache = Mutex<HashMap<(u64, usize, usize, u64), f64>>;

fn ad_cache() -> &'static AdCache {
    static CACHE: OnceLock<AdCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Anderson-Darling critical value by seeded Monte Carlo: the `(1 - alpha)`
/// empirical quantile of the null statistic over 10000 replicates, each a
/// fresh pooled standard-uniform sample split into sizes `n` and `m2`. The
/// statistic is rank-based, so the uniform null covers every continuous
/// distribution. Values are memoized per (alpha, n, m2, seed).
pub fn ad_critical_value(alpha: f64, n: usize, m2: usize, seed: RngSeed) -> Result<CriticalValue> {
    check_alpha(alpha)?;
    if n == 0 || m2 == 0 {
        return Err(Error::InvalidConfig("sample sizes must be positive".into()));
    }
    let key = (alpha.to_bits(), n, m2, seed.0);
    if let Some(&value) = ad_cache().lock().unwrap().get(&key) {
        return Ok(CriticalValue {
            kind: DistanceKind::AndersonDarling,
            alpha,
            n,
            m2,
            value,
        });
    }

    let mut stats = Vec::with_capacity(AD_NULL_DRAWS);
    for replicate in 0..AD_NULL_DRAWS {
        let mut rng = stream_rng(seed, replicate as u64);
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(m2);
        for _ in 0..n {
            first.push(rng.random::<f64>());
        }
        for _ in 0..m2 {
            second.push(rng.random::<f64>());
        }
        let sa = SortedSample::new(first)?;
        let sb = SortedSample::new(second)?;
        stats.push(crate::distances::ad_distance(&sa, &sb)?);
    }
    stats.sort_by(|a, b| a.total_cmp(b));
    let position = ((1.0 - alpha) * AD_NULL_DRAWS as f64).ceil() as usize;
    let value = stats[position.clamp(1, AD_NULL_DRAWS) - 1];

    ad_cache().lock().unwrap().insert(key, value);
    Ok(CriticalValue {
        kind: DistanceKind::AndersonDarling,
        alpha,
        n,
        m2,
        value,
    })
}

/// Options for [`power_analysis_with`].
#[derive(Debug, Clone)]
pub struct PowerOptions {
    /// Trials draw batch rows with replacement (bootstrap) by default;
    /// without replacement a size larger than the data is an error.
    pub with_replacement: bool,
    pub es_params: EsParams,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            with_replacement: true,
            es_params: EsParams::default(),
        }
    }
}

fn draw_rows(
    source: &FeatureMatrix,
    size: usize,
    rng: &mut ChaCha8Rng,
    with_replacement: bool,
) -> Result<FeatureMatrix> {
    let rows = source.rows();
    if rows == 0 {
        return Err(Error::EmptySample);
    }
    let indices: Vec<usize> = if with_replacement {
        (0..size).map(|_| rng.random_range(0..rows)).collect()
    } else {
        if size > rows {
            return Err(Error::SizeExceedsData {
                requested: size,
                available: rows,
            });
        }
        rand::seq::index::sample(rng, rows, size).into_vec()
    };
    Ok(source.select_rows(&indices))
}

/// Bootstrapped power analysis over candidate window sizes.
///
/// For each size and trial, one batch is drawn from the in-scope pool and one
/// from the out-of-scope pool, both compared against `reference`. A trial
/// passes when the in-scope batch is accepted AND the out-of-scope batch is
/// rejected at the Bonferroni-adjusted per-trial level `alpha / trials`
/// (KS/AD compare the aggregate distance to the critical value; ES compares
/// its analytic p-value to the level). `n_star` is the smallest size whose
/// pass fraction reaches 1.0.
#[allow(clippy::too_many_arguments)]
pub fn power_analysis(
    in_scope: &FeatureMatrix,
    out_scope: &FeatureMatrix,
    reference: &FeatureMatrix,
    sizes: &[usize],
    kind: DistanceKind,
    alpha: f64,
    trials: usize,
    seed: RngSeed,
) -> Result<PowerCurve> {
    power_analysis_with(
        in_scope,
        out_scope,
        reference,
        sizes,
        kind,
        alpha,
        trials,
        seed,
        &PowerOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn power_analysis_with(
    in_scope: &FeatureMatrix,
    out_scope: &FeatureMatrix,
    reference: &FeatureMatrix,
    sizes: &[usize],
    kind: DistanceKind,
    alpha: f64,
    trials: usize,
    seed: RngSeed,
    options: &PowerOptions,
) -> Result<PowerCurve> {
    if !matches!(
        kind,
        DistanceKind::KolmogorovSmirnov
            | DistanceKind::AndersonDarling
            | DistanceKind::EppsSingleton
    ) {
        return Err(Error::UnsupportedKind {
            kind,
            reason: "power analysis needs a computable critical value or p-value (ks, ad, es)"
                .into(),
        });
    }
    check_alpha(alpha)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidConfig(
            "sizes must be a non-empty strictly ascending list of positive integers".into(),
        ));
    }
    if in_scope.cols() != reference.cols() || out_scope.cols() != reference.cols() {
        return Err(Error::DimensionMismatch {
            expected: reference.cols(),
            got: if in_scope.cols() != reference.cols() {
                in_scope.cols()
            } else {
                out_scope.cols()
            },
        });
    }

    let adjusted_alpha = alpha / trials as f64;
    let mut power = Vec::with_capacity(sizes.len());
    for (size_index, &size) in sizes.iter().enumerate() {
        let critical = match kind {
            DistanceKind::KolmogorovSmirnov => {
                Some(ks_critical_value(reference.rows(), size, adjusted_alpha)?.value)
            }
            DistanceKind::AndersonDarling => Some(
                ad_critical_value(
                    adjusted_alpha,
                    reference.rows(),
                    size,
                    sub_seed(seed, size_index as u64),
                )?
                .value,
            ),
            _ => None,
        };

        let mut passed = 0usize;
        for trial in 0..trials {
            let base = 2 * (size_index * trials + trial) as u64;
            let mut rng_in = stream_rng(seed, base);
            let mut rng_out = stream_rng(seed, base + 1);
            let batch_in = draw_rows(in_scope, size, &mut rng_in, options.with_replacement)?;
            let batch_out = draw_rows(out_scope, size, &mut rng_out, options.with_replacement)?;

            let pass = match kind {
                DistanceKind::EppsSingleton => {
                    let (_, p_in) = es_aggregate_p(reference, &batch_in, &options.es_params)?;
                    let (_, p_out) = es_aggregate_p(reference, &batch_out, &options.es_params)?;
                    p_in > adjusted_alpha && p_out < adjusted_alpha
                }
                _ => {
                    let crit = critical.expect("critical value computed for ks/ad");
                    let in_sdd = aggregate_distance(reference, &batch_in, kind)?.aggregate;
                    let out_sdd = aggregate_distance(reference, &batch_out, kind)?.aggregate;
                    in_sdd < crit && out_sdd > crit
                }
            };
            if pass {
                passed += 1;
            }
        }
        power.push(passed as f64 / trials as f64);
    }

    let n_star = sizes
        .iter()
        .zip(&power)
        .find(|(_, p)| **p == 1.0)
        .map(|(s, _)| *s);
    Ok(PowerCurve {
        kind,
        sizes: sizes.to_vec(),
        power,
        alpha,
        trials,
        adjusted_alpha,
        n_star,
    })
}
