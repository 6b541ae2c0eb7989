//! Small statistical helpers shared by the estimators and the test suites.

/// Standard error of a Bernoulli proportion `p` estimated from `n` trials.
pub fn proportion_se(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// Standard error of the mean of a correlated series by non-overlapping batch
/// means. Falls back to the i.i.d. formula when fewer than two full batches
/// fit.
pub fn batch_means_se(values: &[f64], n_batches: usize) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let size = n / n_batches.max(1);
    if n_batches < 2 || size == 0 {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        return (var / n as f64).sqrt();
    }
    let means: Vec<f64> = values
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let b = means.len() as f64;
    let grand = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

/// Asymptotic Kolmogorov tail probability `Pr{K > lambda}`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a fully specified CDF.
/// Returns the statistic `D` and its approximate p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let en = n.sqrt();
    (d, kolmogorov_tail((en + 0.12 + 0.11 / en) * d))
}

/// KS test against the unit-mean exponential law.
pub fn ks_exponential(samples: &[f64]) -> (f64, f64) {
    ks_test(samples, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_matches_iid_for_independent_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let iid = batch_means_se(&v, 1);
        let bm = batch_means_se(&v, 50);
        assert!((bm / iid - 1.0).abs() < 0.3, "{bm} vs {iid}");
    }

    #[test]
    fn ks_rejects_wrong_law() {
        let uniform: Vec<f64> = (0..5000).map(|i| (i as f64 + 0.5) / 5000.0).collect();
        let (_, p) = ks_exponential(&uniform);
        assert!(p < 1e-6);
        let (d, p) = ks_test(&uniform, |x| x.clamp(0.0, 1.0));
        assert!(d < 1e-3 && p > 0.99);
    }
}
