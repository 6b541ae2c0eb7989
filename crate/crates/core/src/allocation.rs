//! Splitting the N sub-channels between Alice's data and Bob's key sharing.
//!
//! Ties are always broken towards the lowest sub-channel index.

use std::cmp::Ordering;

use crate::channel::LinkGains;
use crate::config::Config;
use crate::keyqueue::KeyQueueState;
use crate::rate::{link_rate, secrecy_rate, LinkRates};

/// Data and key sub-channel sets of one slot, each sorted ascending.
///
/// When key sharing is dropped for the slot, `key` is empty and `data`
/// holds every sub-channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub data: Vec<usize>,
    pub key: Vec<usize>,
}

impl Allocation {
    pub fn all_data(n: usize) -> Self {
        Self {
            data: (0..n).collect(),
            key: Vec::new(),
        }
    }

    /// `data` plus its complement as the key set.
    pub fn with_data(mut data: Vec<usize>, n: usize) -> Self {
        data.sort_unstable();
        let key = complement(&data, n);
        Self { data, key }
    }

    /// `key` plus its complement as the data set.
    pub fn with_key(mut key: Vec<usize>, n: usize) -> Self {
        key.sort_unstable();
        let data = complement(&key, n);
        Self { data, key }
    }

    pub fn key_sharing(&self) -> bool {
        !self.key.is_empty()
    }
}

fn complement(sorted: &[usize], n: usize) -> Vec<usize> {
    let mut taken = vec![false; n];
    for &k in sorted {
        taken[k] = true;
    }
    (0..n).filter(|&k| !taken[k]).collect()
}

/// Indices ordered by decreasing score; equal scores keep index order.
fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn top(scores: &[f64], n: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = rank_desc(scores).into_iter().take(n).collect();
    chosen.sort_unstable();
    chosen
}

/// The `n_data` sub-channels with the largest `||h_ab||^2`.
pub fn select_alice_best(gains: &LinkGains, n_data: usize) -> Vec<usize> {
    top(&gains.ab, n_data)
}

/// Bob's per-sub-channel selection metric,
/// `log2(1 + g_B ||h_ba||^2 / G_BA) - max_m log2(1 + g_B |h_be_m p_B|^2)`.
pub fn bob_metric(gains: &LinkGains, cfg: &Config) -> Vec<f64> {
    let snr = cfg.snr_bob;
    (0..gains.n_subchannels())
        .map(|k| {
            let main = (snr * gains.ba[k] / cfg.gap_ba).ln_1p();
            let eve = gains.be.iter().map(|e| (snr * e[k]).ln_1p()).fold(0.0, f64::max);
            (main - eve) / std::f64::consts::LN_2
        })
        .collect()
}

/// High-SNR form of [`bob_metric`]: `||h_ba||^2 / max_m |h_be_m p_B|^2`.
/// Without eavesdroppers the metric is `||h_ba||^2`.
pub fn bob_metric_high_snr(gains: &LinkGains) -> Vec<f64> {
    (0..gains.n_subchannels())
        .map(|k| {
            if gains.be.is_empty() {
                return gains.ba[k];
            }
            let eve = gains.be.iter().map(|e| e[k]).fold(0.0, f64::max);
            gains.ba[k] / eve
        })
        .collect()
}

/// Picks `n` indices one at a time, each the best unchosen by `metric`.
fn greedy(metric: &[f64], n: usize) -> Vec<usize> {
    let mut chosen = vec![false; metric.len()];
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n.min(metric.len()) {
        let best = (0..metric.len())
            .filter(|&k| !chosen[k])
            .fold(None, |best: Option<usize>, k| match best {
                Some(b) if metric[k].total_cmp(&metric[b]) != Ordering::Greater => Some(b),
                _ => Some(k),
            })
            .expect("fewer picks than candidates");
        chosen[best] = true;
        picked.push(best);
    }
    picked
}

pub fn select_bob_greedy(gains: &LinkGains, n_key: usize, cfg: &Config) -> Vec<usize> {
    let mut set = greedy(&bob_metric(gains, cfg), n_key);
    set.sort_unstable();
    set
}

pub fn select_bob_high_snr(gains: &LinkGains, n_key: usize) -> Vec<usize> {
    let mut set = greedy(&bob_metric_high_snr(gains), n_key);
    set.sort_unstable();
    set
}

fn key_condition(rates: &LinkRates, key: &[usize], cfg: &Config) -> bool {
    !key.is_empty() && secrecy_rate(&rates.key, key) >= cfg.rate_key()
}

/// Fixed split of `N_data` / `N_key` sub-channels.
///
/// With enough keys for OTP, Alice picks her best `N_data` sub-channels and
/// Bob gets the rest; otherwise Bob picks his `N_key` first. Either way, if
/// Bob's secrecy rate over his set misses the key target, every sub-channel
/// goes to data.
pub fn allocate_fixed(rates: &LinkRates, queue: &KeyQueueState, cfg: &Config) -> Allocation {
    let n = rates.n_subchannels();
    let alloc = if queue.otp_ready() {
        Allocation::with_data(select_alice_best(&rates.gains, cfg.n_data_fixed), n)
    } else {
        Allocation::with_key(select_bob_greedy(&rates.gains, cfg.n_key(), cfg), n)
    };
    if key_condition(rates, &alloc.key, cfg) {
        alloc
    } else {
        Allocation::all_data(n)
    }
}

/// Per-slot minimal split.
///
/// With OTP keys available, Alice takes her strongest sub-channels until her
/// link rate reaches the data target (at least one sub-channel) and Bob gets
/// the remainder. Otherwise Bob takes sub-channels in metric order until his
/// secrecy rate reaches the key target and Alice gets the remainder; if no
/// prefix satisfies the target, every sub-channel goes to data.
pub fn allocate_dynamic(rates: &LinkRates, queue: &KeyQueueState, cfg: &Config) -> Allocation {
    let n = rates.n_subchannels();
    if queue.otp_ready() {
        let order = rank_desc(&rates.gains.ab);
        let mut sum = 0.0;
        for (i, &k) in order.iter().enumerate() {
            sum += rates.data.main[k];
            if sum >= cfg.rate_data {
                return Allocation::with_data(order[..=i].to_vec(), n);
            }
        }
        Allocation::all_data(n)
    } else {
        let order = greedy(&bob_metric(&rates.gains, cfg), n);
        let mut main = 0.0;
        let mut eves = vec![0.0; rates.key.eves.len()];
        for (i, &k) in order.iter().enumerate() {
            main += rates.key.main[k];
            for (acc, e) in eves.iter_mut().zip(&rates.key.eves) {
                *acc += e[k];
            }
            let secrecy = eves.iter().fold(main, |s, &e| s.min((main - e).max(0.0)));
            if secrecy >= cfg.rate_key() {
                return Allocation::with_key(order[..=i].to_vec(), n);
            }
        }
        Allocation::all_data(n)
    }
}

/// Rate Alice achieves over her data set.
pub fn data_link_rate(rates: &LinkRates, alloc: &Allocation) -> f64 {
    link_rate(&rates.data, &alloc.data).expect("allocation indices are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSampler;
    use crate::config::SystemConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gains_with(ab: Vec<f64>, ba: Vec<f64>, be: Vec<Vec<f64>>) -> LinkGains {
        let n = ab.len();
        LinkGains {
            ab,
            ba,
            ae: be.iter().map(|_| vec![1.0; n]).collect(),
            be,
        }
    }

    fn small_cfg(n: usize, n_data: usize) -> Config {
        SystemConfig {
            n_subchannels: n,
            n_cp: 1,
            n_taps: 1,
            n_data_fixed: n_data,
            n_eves: 1,
            ..Default::default()
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn alice_best_examples() {
        let g = gains_with(vec![1.0, 5.0, 3.0, 5.0], vec![1.0; 4], vec![]);
        assert_eq!(select_alice_best(&g, 2), vec![1, 3]);
        assert_eq!(select_alice_best(&g, 4), vec![0, 1, 2, 3]);
        let flat = gains_with(vec![2.0; 6], vec![1.0; 6], vec![]);
        assert_eq!(select_alice_best(&flat, 3), vec![0, 1, 2]);
    }

    #[test]
    fn bob_selection_examples() {
        let cfg = small_cfg(4, 2);
        let g = gains_with(vec![1.0; 4], vec![4.0, 1.0, 9.0, 2.0], vec![]);
        assert!(select_bob_greedy(&g, 0, &cfg).is_empty());
        assert!(select_bob_high_snr(&g, 0).is_empty());
        // No eavesdroppers: top by ||h_ba||^2.
        assert_eq!(select_bob_greedy(&g, 2, &cfg), vec![0, 2]);
        assert_eq!(select_bob_high_snr(&g, 2), vec![0, 2]);

        // A near-zero eavesdropper gain dominates the high-SNR metric.
        let g = gains_with(vec![1.0; 4], vec![4.0, 1.0, 9.0, 2.0], vec![vec![1.0, 1e-300, 1.0, 1.0]]);
        assert_eq!(greedy(&bob_metric_high_snr(&g), 1), vec![1]);
    }

    #[test]
    fn greedy_equals_sorting_by_metric() {
        let cfg = SystemConfig {
            n_subchannels: 6,
            n_cp: 2,
            n_taps: 2,
            n_data_fixed: 2,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let sampler = ChannelSampler::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = sampler.sample(&mut rng).gains();
            // Oracle: evaluate the metric from scratch and sort.
            let metric: Vec<f64> = (0..6)
                .map(|k| {
                    let eve = g
                        .be
                        .iter()
                        .map(|e| (1.0 + cfg.snr_bob * e[k]).log2())
                        .fold(f64::NEG_INFINITY, f64::max);
                    (1.0 + cfg.snr_bob * g.ba[k] / cfg.gap_ba).log2() - eve
                })
                .collect();
            let mut order: Vec<usize> = (0..6).collect();
            order.sort_by(|&a, &b| metric[b].partial_cmp(&metric[a]).unwrap().then(a.cmp(&b)));
            for n_key in 0..=6 {
                let mut want = order[..n_key].to_vec();
                want.sort_unstable();
                assert_eq!(select_bob_greedy(&g, n_key, &cfg), want);
            }
        }
    }

    #[test]
    fn high_snr_agrees_with_exact_metric_at_40_db() {
        let cfg = SystemConfig {
            snr_bob: 1e4,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let sampler = ChannelSampler::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (mut agree, mut total) = (0usize, 0usize);
        for _ in 0..100 {
            let g = sampler.sample(&mut rng).gains();
            let exact = select_bob_greedy(&g, cfg.n_key(), &cfg);
            let approx = select_bob_high_snr(&g, cfg.n_key());
            agree += exact.iter().filter(|k| approx.binary_search(k).is_ok()).count();
            total += exact.len();
        }
        let frac = agree as f64 / total as f64;
        assert!(frac >= 0.9, "{frac}");
    }

    fn rates_for(cfg: &Config, ab: Vec<f64>, ba: Vec<f64>, be: Vec<Vec<f64>>) -> LinkRates {
        LinkRates::new(gains_with(ab, ba, be), cfg)
    }

    #[test]
    fn fixed_allocation_branches() {
        let cfg = small_cfg(4, 2);
        let rk = cfg.rate_key();
        // Strong key link, silent eavesdropper: Bob's two best carry the key.
        let strong = rates_for(&cfg, vec![1.0, 2.0, 3.0, 4.0], vec![1e9, 1e9, 1.0, 1e9], vec![vec![0.0; 4]]);
        assert!(crate::rate::secrecy_rate(&strong.key, &[0, 1]) >= rk);
        let empty = KeyQueueState::new(1, 10);
        let a = allocate_fixed(&strong, &empty, &cfg);
        assert_eq!(a.key, vec![0, 1]);
        assert_eq!(a.data, vec![2, 3]);

        // OTP ready: Alice takes her best two even though Bob liked 0 and 1 more.
        let full = KeyQueueState::with_occupancy(1, 10, 1);
        let a = allocate_fixed(&strong, &full, &cfg);
        assert_eq!(a.data, vec![2, 3]);
        let strong_mixed = rates_for(&cfg, vec![4.0, 3.0, 2.0, 1.0], vec![1e9; 4], vec![vec![0.0; 4]]);
        let a = allocate_fixed(&strong_mixed, &full, &cfg);
        assert_eq!(a.data, vec![0, 1]);
        assert_eq!(a.key, vec![2, 3]);

        // Hopeless key link: everything to data.
        let weak = rates_for(&cfg, vec![1.0; 4], vec![1e-6; 4], vec![vec![1.0; 4]]);
        assert_eq!(allocate_fixed(&weak, &empty, &cfg), Allocation::all_data(4));
        assert_eq!(allocate_fixed(&weak, &full, &cfg), Allocation::all_data(4));
    }

    #[test]
    fn dynamic_allocation_minimal_sets() {
        let cfg = SystemConfig {
            n_subchannels: 64,
            n_eves: 1,
            ..Default::default()
        }
        .validate()
        .unwrap();
        // Large-array approximation: every A-B gain equals N_A.
        let r = rates_for(&cfg, vec![2.0; 64], vec![1e9; 64], vec![vec![0.0; 64]]);
        let full = KeyQueueState::with_occupancy(1, 10, 1);
        let a = allocate_dynamic(&r, &full, &cfg);
        let per = crate::rate::subchannel_rate(2.0, 1000.0, 1.2, 64, 8);
        assert_eq!(a.data.len(), (1.5 / per).ceil() as usize);
        assert_eq!(a.data.len(), 11);
        assert_eq!(a.data, (0..11).collect::<Vec<_>>());
        assert!(data_link_rate(&r, &a) >= 1.5);

        // Zero data target still assigns one sub-channel.
        let zero = SystemConfig {
            rate_data: 0.0,
            ..cfg.params().clone()
        }
        .validate()
        .unwrap();
        assert_eq!(allocate_dynamic(&r, &full, &zero).data.len(), 1);

        // Unsatisfiable key target with every sub-channel: all data.
        let weak = rates_for(&cfg, vec![2.0; 64], vec![1e-6; 64], vec![vec![1.0; 64]]);
        let empty = KeyQueueState::new(1, 10);
        assert_eq!(allocate_dynamic(&weak, &empty, &cfg), Allocation::all_data(64));

        // Satisfiable: Bob's set is the shortest metric-ordered prefix.
        let a = allocate_dynamic(&r, &empty, &cfg);
        assert!(crate::rate::secrecy_rate(&r.key, &a.key) >= cfg.rate_key());
        let mut shorter = a.key.clone();
        shorter.pop();
        assert!(crate::rate::secrecy_rate(&r.key, &shorter) < cfg.rate_key());
    }

    #[test]
    fn allocations_partition_subchannels() {
        let cfg = SystemConfig::default().validate().unwrap();
        let sampler = ChannelSampler::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..100 {
            let rates = LinkRates::new(sampler.sample(&mut rng).gains(), &cfg);
            let q = KeyQueueState::with_occupancy(1, 10, i % 2);
            for a in [allocate_fixed(&rates, &q, &cfg), allocate_dynamic(&rates, &q, &cfg)] {
                let mut all: Vec<usize> = a.data.iter().chain(&a.key).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..64).collect::<Vec<_>>());
            }
            assert_eq!(allocate_fixed(&rates, &q, &cfg), allocate_fixed(&rates, &q, &cfg));
        }
    }

    #[test]
    fn dynamic_otp_branch_meets_target_when_possible() {
        let cfg = SystemConfig::default().validate().unwrap();
        let sampler = ChannelSampler::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let full = KeyQueueState::with_occupancy(1, 10, 5);
        for _ in 0..100 {
            let rates = LinkRates::new(sampler.sample(&mut rng).gains(), &cfg);
            let a = allocate_dynamic(&rates, &full, &cfg);
            let all: Vec<usize> = (0..64).collect();
            if link_rate(&rates.data, &all).unwrap() >= cfg.rate_data {
                assert!(data_link_rate(&rates, &a) >= cfg.rate_data);
                // Dropping the weakest chosen sub-channel breaks the target.
                let weakest = *a
                    .data
                    .iter()
                    .min_by(|&&x, &&y| rates.gains.ab[x].total_cmp(&rates.gains.ab[y]))
                    .unwrap();
                let rest: Vec<usize> = a.data.iter().copied().filter(|&k| k != weakest).collect();
                assert!(rest.is_empty() || link_rate(&rates.data, &rest).unwrap() < cfg.rate_data);
            }
        }
    }
}
