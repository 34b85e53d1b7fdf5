//! Small numeric helpers shared across modules.

/// Arithmetic mean; 0.0 on empty input is never needed here, callers
/// guarantee non-empty slices.
pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation quantile (the numpy/R type-7 default) of an already
/// sorted slice. `p` in [0, 1].
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Root mean squared error of residuals.
pub(crate) fn rmse(residuals: &[f64]) -> f64 {
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// Coefficient of determination for observed values and residuals.
pub(crate) fn r_squared(observed: &[f64], residuals: &[f64]) -> f64 {
    let mean = mean(observed);
    let tss: f64 = observed.iter().map(|u| (u - mean) * (u - mean)).sum();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    if tss == 0.0 {
        if rss == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - rss / tss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_relative_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_relative_eq!(quantile_sorted(&v, 0.25), 1.75);
    }

    #[test]
    fn r2_of_perfect_fit_is_one() {
        let obs = [1.0, 2.0, 3.0];
        assert_relative_eq!(r_squared(&obs, &[0.0, 0.0, 0.0]), 1.0);
    }
}
