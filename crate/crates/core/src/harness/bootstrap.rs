use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

pub const BOOTSTRAP_METHOD: &str = "percentile";

/// Running mean; exact for constant input.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, x) in values.into_iter().enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonparametric percentile bootstrap interval for the mean: `resamples`
/// seeded resamples with replacement, then the `(1 - level) / 2` and
/// `(1 + level) / 2` quantiles of the resampled means.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<(f64, f64), HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Empty("bootstrap input".into()));
    }
    if resamples == 0 {
        return Err(HarnessError::Config("bootstrap needs at least one resample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(HarnessError::Config(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| mean((0..n).map(|_| values[rng.gen_range(0..n)])))
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&means, alpha), quantile(&means, 1.0 - alpha)))
}
