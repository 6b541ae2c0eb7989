//! Connection-outage and secrecy-outage probabilities.
//!
//! Three routes are provided: Monte Carlo over full channel realizations,
//! single-sub-channel closed forms, and a numerical evaluation of the
//! eavesdropper sum-rate law `sum_d log2(1 + snr G_d)` with `G_d` i.i.d.
//! Exp(1), obtained by convolving per-sub-channel rate distributions on a
//! uniform grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::{select_alice_best, select_bob_greedy};
use crate::channel::ChannelSampler;
use crate::config::Config;
use crate::rate::{link_rate, secrecy_rate, LinkRates, SubchannelRates};
use crate::stats::proportion_se;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OutageError {
    #[error("grid of {n_points} points is too coarse for {n_subchannels} sub-channels")]
    GridTooCoarse { n_points: usize, n_subchannels: usize },
    #[error("truncated tail mass {0:e} exceeds 1e-6")]
    TruncatedTail(f64),
    #[error("need at least one sub-channel")]
    NoSubchannels,
}

/// Monte Carlo estimate of an outage probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageEstimate {
    pub probability: f64,
    pub trials: u64,
    pub std_error: f64,
}

impl OutageEstimate {
    pub fn from_counts(events: u64, trials: u64) -> Self {
        let probability = if trials == 0 {
            0.0
        } else {
            events as f64 / trials as f64
        };
        Self {
            probability,
            trials,
            std_error: proportion_se(probability, trials),
        }
    }

    pub fn events(&self) -> u64 {
        (self.probability * self.trials as f64).round() as u64
    }

    /// Pools two estimates by trial count.
    pub fn merge(&self, other: &Self) -> Self {
        Self::from_counts(self.events() + other.events(), self.trials + other.trials)
    }
}

/// Which link an outage refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

/// How the sub-channel set is chosen in each realization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubsetPolicy {
    /// Alice's `n` strongest sub-channels.
    AliceBest(usize),
    /// Bob's `n` best by the key-selection metric.
    BobBest(usize),
    /// Everything except Alice's `n` strongest.
    ComplementOfAliceBest(usize),
    /// Everything except Bob's `n` best.
    ComplementOfBobBest(usize),
    All,
    Fixed(Vec<usize>),
}

impl SubsetPolicy {
    pub fn select(&self, rates: &LinkRates, cfg: &Config) -> Vec<usize> {
        let n = rates.n_subchannels();
        let without = |taken: Vec<usize>| -> Vec<usize> {
            (0..n).filter(|k| taken.binary_search(k).is_err()).collect()
        };
        match self {
            SubsetPolicy::AliceBest(m) => select_alice_best(&rates.gains, *m),
            SubsetPolicy::BobBest(m) => select_bob_greedy(&rates.gains, *m, cfg),
            SubsetPolicy::ComplementOfAliceBest(m) => without(select_alice_best(&rates.gains, *m)),
            SubsetPolicy::ComplementOfBobBest(m) => without(select_bob_greedy(&rates.gains, *m, cfg)),
            SubsetPolicy::All => (0..n).collect(),
            SubsetPolicy::Fixed(set) => set.clone(),
        }
    }
}

const BATCH: u64 = 1024;

/// Seeded RNG for batch `index` of a run.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Counts realizations satisfying `event`, split into fixed batches so the
/// result does not depend on the thread count.
pub fn count_events<F>(cfg: &Config, trials: u64, seed: u64, event: F) -> OutageEstimate
where
    F: Fn(&LinkRates) -> bool + Sync,
{
    let sampler = ChannelSampler::new(cfg);
    let batches = trials.div_ceil(BATCH);
    let events: u64 = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b);
            let n = BATCH.min(trials - b * BATCH);
            (0..n)
                .filter(|_| event(&LinkRates::new(sampler.sample(&mut rng).gains(), cfg)))
                .count() as u64
        })
        .sum();
    OutageEstimate::from_counts(events, trials)
}

/// `Pr{sum over the data set of R_AB < R_data}`.
pub fn connection_outage_mc(
    cfg: &Config,
    policy: &SubsetPolicy,
    trials: u64,
    seed: u64,
) -> OutageEstimate {
    count_events(cfg, trials, seed, |r| {
        let set = policy.select(r, cfg);
        link_rate(&r.data, &set).expect("policy yields valid indices") < cfg.rate_data
    })
}

/// `Pr{secrecy rate over the chosen set < target}` with wiretap coding.
pub fn sop_wiretap_mc(
    cfg: &Config,
    direction: Direction,
    policy: &SubsetPolicy,
    target_rate: f64,
    trials: u64,
    seed: u64,
) -> OutageEstimate {
    count_events(cfg, trials, seed, |r| {
        let set = policy.select(r, cfg);
        let rates = match direction {
            Direction::AliceToBob => &r.data,
            Direction::BobToAlice => &r.key,
        };
        secrecy_rate(rates, &set) < target_rate
    })
}

/// Key-sharing SOP for a single SISO key sub-channel and one eavesdropper:
/// `1 - exp(-(2^{R(N+N_cp)} - 1) / (snr/gap)) / (1 + 2^{R(N+N_cp)})`.
pub fn sop_ba_closed_form(snr: f64, gap: f64, r_key: f64, n: usize, n_cp: usize) -> f64 {
    let t = (r_key * (n + n_cp) as f64).exp2();
    1.0 - (-(t - 1.0) / (snr / gap)).exp() / (1.0 + t)
}

/// High-SNR limit with the cyclic prefix neglected: `1 - 2^{-R N}`.
pub fn sop_ba_high_snr(r_key: f64, n: usize) -> f64 {
    1.0 - (-r_key * n as f64).exp2()
}

/// Secrecy margin of the data link under the large-array approximation:
/// `N_data/(N+N_cp) log2(1 + snr_A N_A / gap_AB) - R_data`.
pub fn r_threshold(cfg: &Config, n_data: usize) -> f64 {
    n_data as f64 / cfg.symbol_len() as f64
        * (1.0 + cfg.snr_alice * cfg.n_tx_alice as f64 / cfg.gap_ab).log2()
        - cfg.rate_data
}

/// Same margin for the key link with `n_key` sub-channels and target `r_key`.
pub fn r_threshold_key(cfg: &Config, n_key: usize, r_key: f64) -> f64 {
    n_key as f64 / cfg.symbol_len() as f64
        * (1.0 + cfg.snr_bob * cfg.n_tx_bob as f64 / cfg.gap_ba).log2()
        - r_key
}

/// Per-variable tail mass left beyond the grid.
const TAIL_EPS: f64 = 1e-9;

/// Law of `S = sum_{d=1}^{n} log2(1 + snr G_d)` (bits), `G_d` i.i.d. Exp(1).
///
/// Each term is rounded to a lattice of step `h` spanning
/// `[0, n * z_hi]` with `n_points` points, where `z_hi` leaves a tail of
/// 1e-9 per term. The lattice law of the sum is the `n`-fold convolution; its
/// CDF is read at half-lattice points (exact for `n = 1`) and interpolated
/// linearly in between.
#[derive(Debug, Clone)]
pub struct LogRateSum {
    step: f64,
    cdf: Vec<f64>,
    truncated: f64,
}

impl LogRateSum {
    pub fn new(snr: f64, n: usize, n_points: usize) -> Result<Self, OutageError> {
        if n == 0 {
            return Err(OutageError::NoSubchannels);
        }
        let z_hi = (1.0 + snr * (1.0 / TAIL_EPS).ln()).log2();
        let step = n as f64 * z_hi / (n_points.max(2) - 1) as f64;
        let m = (z_hi / step).ceil() as usize + 1;
        if m < 4 {
            return Err(OutageError::GridTooCoarse {
                n_points,
                n_subchannels: n,
            });
        }
        let cdf_one = |z: f64| {
            if z <= 0.0 {
                0.0
            } else {
                -(-(z.exp2() - 1.0) / snr).exp_m1()
            }
        };
        let pmf: Vec<f64> = (0..m)
            .map(|i| cdf_one((i as f64 + 0.5) * step) - cdf_one((i as f64 - 0.5) * step))
            .collect();
        let kept: f64 = pmf.iter().sum();
        let truncated = n as f64 * (1.0 - kept).max(0.0);
        if truncated > 1e-6 {
            return Err(OutageError::TruncatedTail(truncated));
        }
        let mut law = pmf.clone();
        for _ in 1..n {
            let mut next = vec![0.0; law.len() + m - 1];
            for (i, &a) in law.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in pmf.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            law = next;
        }
        let mut acc = 0.0;
        let cdf = law
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            step,
            cdf,
            truncated,
        })
    }

    /// Probability mass dropped beyond the grid.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated
    }

    /// `Pr{S <= c}`.
    pub fn cdf(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        // cdf[j] sits at (j + 1/2) h; the law starts at -h/2 with mass 0.
        let x = c / self.step - 0.5;
        let at = |j: isize| -> f64 {
            if j < 0 {
                0.0
            } else {
                *self.cdf.get(j as usize).unwrap_or(self.cdf.last().unwrap())
            }
        };
        let j = x.floor();
        let frac = x - j;
        let j = j as isize;
        (at(j) * (1.0 - frac) + at(j + 1) * frac).clamp(0.0, 1.0)
    }

    /// `Pr{S > c}`.
    pub fn tail(&self, c: f64) -> f64 {
        1.0 - self.cdf(c)
    }
}

/// Combines a single-eavesdropper exceedance probability over `m`
/// independent eavesdroppers: `1 - (1 - p)^m`.
pub fn any_of_independent(p: f64, m: usize) -> f64 {
    1.0 - (1.0 - p).powi(m as i32)
}

/// Data-link SOP under wiretap coding from the numerical sum-rate law:
/// `Pr{max_m sum_d R_AE_m^d > R_th}` for `n_data` independent sub-channels.
pub fn sop_ab_product_numeric(
    cfg: &Config,
    n_data: usize,
    n_points: usize,
) -> Result<f64, OutageError> {
    let r_th = r_threshold(cfg, n_data);
    if r_th <= 0.0 {
        return Ok(1.0);
    }
    let law = LogRateSum::new(cfg.snr_alice, n_data, n_points)?;
    Ok(any_of_independent(law.tail(r_th * cfg.symbol_len() as f64), cfg.n_eves))
}

/// Key-link counterpart of [`sop_ab_product_numeric`] with target `r_key`.
pub fn sop_ba_product_numeric(
    cfg: &Config,
    n_key: usize,
    r_key: f64,
    n_points: usize,
) -> Result<f64, OutageError> {
    if n_key == 0 {
        return Ok(1.0);
    }
    let r_th = r_threshold_key(cfg, n_key, r_key);
    if r_th <= 0.0 {
        return Ok(1.0);
    }
    let law = LogRateSum::new(cfg.snr_bob, n_key, n_points)?;
    Ok(any_of_independent(law.tail(r_th * cfg.symbol_len() as f64), cfg.n_eves))
}

/// Data-link rates when every legitimate gain is replaced by `N_A`.
pub fn large_array_data_rates(cfg: &Config) -> SubchannelRates {
    let r = crate::rate::subchannel_rate(
        cfg.n_tx_alice as f64,
        cfg.snr_alice,
        cfg.gap_ab,
        cfg.n_subchannels,
        cfg.n_cp,
    );
    SubchannelRates {
        main: vec![r; cfg.n_subchannels],
        eves: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use rand::Rng;
    use rand_distr::Exp1;

    fn defaults() -> Config {
        SystemConfig::default().validate().unwrap()
    }

    #[test]
    fn estimate_merge_pools_counts() {
        let a = OutageEstimate::from_counts(10, 100);
        let b = OutageEstimate::from_counts(30, 300);
        let m = a.merge(&b);
        assert_eq!(m.trials, 400);
        assert!((m.probability - 0.1).abs() < 1e-15);
        assert_eq!(a.merge(&b), b.merge(&a));
        assert!((m.std_error - (0.1f64 * 0.9 / 400.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_target_never_in_outage() {
        let cfg = SystemConfig {
            rate_data: 0.0,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let e = connection_outage_mc(&cfg, &SubsetPolicy::AliceBest(11), 2000, 1);
        assert_eq!(e.probability, 0.0);
    }

    #[test]
    fn vanishing_snr_always_in_outage() {
        let cfg = SystemConfig {
            snr_alice: 1e-9,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let e = connection_outage_mc(&cfg, &SubsetPolicy::AliceBest(11), 2000, 1);
        assert_eq!(e.probability, 1.0);
    }

    #[test]
    fn default_data_link_rarely_in_outage() {
        // Large-array margin: 1666.7 >= 2^(1.5*72/11) - 1 ~ 901.
        let margin = 1000.0 * 2.0 / 1.2;
        assert!(margin >= (1.5f64 * 72.0 / 11.0).exp2() - 1.0);
        let e = connection_outage_mc(&defaults(), &SubsetPolicy::AliceBest(11), 20_000, 2);
        assert!(e.probability < 0.05, "{e:?}");
    }

    #[test]
    fn no_eavesdropper_sop_is_connection_outage() {
        let cfg = SystemConfig {
            n_eves: 0,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let policy = SubsetPolicy::AliceBest(10);
        let sop = sop_wiretap_mc(&cfg, Direction::AliceToBob, &policy, cfg.rate_data, 5000, 3);
        let op = connection_outage_mc(&cfg, &policy, 5000, 3);
        assert_eq!(sop, op);
    }

    #[test]
    fn zero_target_sop_counts_only_strict_negatives() {
        // secrecy < 0 never happens, so the zero-target SOP is 0.
        let e = sop_wiretap_mc(&defaults(), Direction::AliceToBob, &SubsetPolicy::All, 0.0, 2000, 4);
        assert_eq!(e.probability, 0.0);
    }

    #[test]
    fn single_siso_key_subchannel_is_almost_surely_in_outage() {
        let cfg = SystemConfig {
            n_tx_alice: 1,
            n_tx_bob: 1,
            n_eves: 1,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let e = sop_wiretap_mc(&cfg, Direction::BobToAlice, &SubsetPolicy::BobBest(1), 2.0, 20_000, 5);
        assert!(e.probability >= 0.999, "{e:?}");
        assert!(sop_ba_closed_form(1000.0, 1.2, 2.0, 64, 8) > 0.999_999);
    }

    #[test]
    fn closed_forms() {
        assert!((sop_ba_closed_form(1000.0, 1.2, 0.0, 64, 8) - 0.5).abs() < 1e-15);
        let t = (0.05f64 * 72.0).exp2();
        assert!((sop_ba_closed_form(1e12, 1.0, 0.05, 64, 8) - (1.0 - 1.0 / (1.0 + t))).abs() < 1e-9);
        assert_eq!(sop_ba_high_snr(0.0, 64), 0.0);
        assert_eq!(sop_ba_high_snr(2.0, 64), 1.0 - (-128f64).exp2());
        let mut prev = -1.0;
        for i in 0..20 {
            let p = sop_ba_high_snr(i as f64 * 0.01, 64);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn threshold_examples() {
        let cfg = defaults();
        let r = r_threshold(&cfg, 11);
        let want = 11.0 / 72.0 * (1.0 + 2000.0 / 1.2f64).log2() - 1.5;
        assert!((r - want).abs() < 1e-15);
        assert!((r - 0.135).abs() < 1e-3, "{r}");
        let full = SystemConfig {
            rate_data: 11.0 / 72.0 * (1.0 + 2000.0 / 1.2f64).log2(),
            ..Default::default()
        }
        .validate()
        .unwrap();
        assert!(r_threshold(&full, 11).abs() < 1e-12);
        let higher = SystemConfig {
            rate_data: 2.5,
            ..Default::default()
        }
        .validate()
        .unwrap();
        assert!((r_threshold(&cfg, 11) - r_threshold(&higher, 11) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_law_single_term_matches_closed_form() {
        for &snr in &[1.0, 10.0, 1000.0] {
            let law = LogRateSum::new(snr, 1, 4096).unwrap();
            for &c in &[0.1, 0.7, 1.5, 3.0, 6.0] {
                let exact = (-((c as f64).exp2() - 1.0) / snr).exp();
                assert!((law.tail(c) - exact).abs() < 1e-5, "snr {snr} c {c}: {} vs {exact}", law.tail(c));
            }
        }
    }

    #[test]
    fn numeric_law_two_terms_against_sampling() {
        let law = LogRateSum::new(10.0, 2, 2048).unwrap();
        let mut rng = stream_rng(9, 0);
        let n = 200_000;
        let c = 6.0;
        let hits = (0..n)
            .filter(|_| {
                let a: f64 = rng.sample(Exp1);
                let b: f64 = rng.sample(Exp1);
                (1.0 + 10.0 * a).log2() + (1.0 + 10.0 * b).log2() > c
            })
            .count();
        let mc = hits as f64 / n as f64;
        assert!((law.tail(c) - mc).abs() < 0.005, "{} vs {mc}", law.tail(c));
    }

    #[test]
    fn numeric_sop_edge_cases() {
        let cfg = SystemConfig {
            rate_data: 100.0,
            ..Default::default()
        }
        .validate()
        .unwrap();
        assert_eq!(sop_ab_product_numeric(&cfg, 3, 512).unwrap(), 1.0);
        assert!(matches!(
            LogRateSum::new(10.0, 64, 64),
            Err(OutageError::GridTooCoarse { .. })
        ));
        assert!(LogRateSum::new(10.0, 0, 64).is_err());
    }

    #[test]
    fn numeric_tail_is_monotone() {
        let law = LogRateSum::new(10.0, 4, 2048).unwrap();
        let mut prev = 1.0;
        for i in 0..200 {
            let t = law.tail(i as f64 * 0.1);
            assert!(t <= prev + 1e-15);
            prev = t;
        }
    }

    #[test]
    fn more_eavesdroppers_never_lower_the_sop() {
        for m in 0..5 {
            assert!(any_of_independent(0.3, m + 1) >= any_of_independent(0.3, m));
        }
        let base = SystemConfig {
            snr_alice: 10.0,
            rate_data: 0.1,
            n_eves: 1,
            ..Default::default()
        };
        let one = sop_ab_product_numeric(&base.validate().unwrap(), 4, 1024).unwrap();
        let two = sop_ab_product_numeric(
            &SystemConfig { n_eves: 2, ..base }.validate().unwrap(),
            4,
            1024,
        )
        .unwrap();
        assert!(two >= one);
    }
}
