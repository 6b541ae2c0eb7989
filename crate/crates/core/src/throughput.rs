//! Analytic secure throughput, key arrival rate and the `(N_data, K)` grid search.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::allocation::bob_metric;
use crate::channel::ChannelSampler;
use crate::config::Config;
use crate::outage::{self, stream_rng, OutageError};
use crate::rate::LinkRates;

/// Outage probabilities and queue parameters feeding the throughput formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputInputs {
    /// Connection outage of Alice's data set.
    pub p_op_ndata: f64,
    /// Connection outage with every sub-channel carrying data.
    pub p_op_n: f64,
    /// Wiretap-coded data SOP over the data set.
    pub p_sop_ab_ndata: f64,
    /// Wiretap-coded data SOP over all sub-channels.
    pub p_sop_ab_n: f64,
    /// Key-link SOP over the key set.
    pub p_sop_ba_nkey: f64,
    pub lambda: f64,
    pub k: usize,
    pub rate_data: f64,
}

/// Mean key-packet arrival rate per slot:
/// `(1 - P_BA(N_key)) (1 - P_OP(N_data)) + (1 - P_BA(N)) P_OP(N_data)`.
pub fn arrival_rate(p_sop_ba_nkey: f64, p_sop_ba_n: f64, p_op_ab_ndata: f64) -> f64 {
    (1.0 - p_sop_ba_nkey) * (1.0 - p_op_ab_ndata) + (1.0 - p_sop_ba_n) * p_op_ab_ndata
}

/// Secure throughput in bits per channel use, with `Pr{q >= K} = lambda / K`.
pub fn secure_throughput(x: &ThroughputInputs) -> f64 {
    assert!(x.k >= 1, "K must be at least one");
    let otp = x.lambda / x.k as f64;
    assert!((0.0..=1.0).contains(&otp), "lambda/K = {otp} is not a probability");
    let key_ok = 1.0 - x.p_sop_ba_nkey;
    let with_otp = (1.0 - x.p_op_ndata) * key_ok + (1.0 - x.p_op_n) * x.p_sop_ba_nkey;
    let wiretap = (1.0 - x.p_sop_ab_ndata) * key_ok + (1.0 - x.p_sop_ab_n) * x.p_sop_ba_nkey;
    (otp * with_otp + (1.0 - otp) * wiretap) * x.rate_data
}

/// Supplies the outage probabilities for one `(N_data, K)` cell.
pub trait OutageProvider: Sync {
    fn inputs(&self, n_data: usize, k: usize) -> Result<ThroughputInputs, OutageError>;
}

/// Per-realization sums, indexed by set size, over the orderings that the
/// fixed scheme uses.
#[derive(Debug, Clone)]
struct Realization {
    /// Alice's data rate over her best `n` sub-channels.
    alice_prefix: Vec<f64>,
    /// Key secrecy over the complement of Alice's best `n`, before clipping,
    /// per eavesdropper: `(main, [eve_m])`.
    alice_complement_key: Vec<(f64, Vec<f64>)>,
    /// Data secrecy ingredients over the complement of Bob's best `n_key`.
    bob_complement_data: Vec<(f64, Vec<f64>)>,
    /// Key ingredients over Bob's best `n`.
    bob_prefix_key: Vec<(f64, Vec<f64>)>,
}

fn clipped(main: f64, eves: &[f64]) -> f64 {
    eves.iter().fold(main, |s, &e| s.min((main - e).max(0.0)))
}

fn prefix_sums(order: &[usize], main: &[f64], eves: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let mut acc = (0.0, vec![0.0; eves.len()]);
    let mut out = Vec::with_capacity(order.len() + 1);
    out.push(acc.clone());
    for &k in order {
        acc.0 += main[k];
        for (a, e) in acc.1.iter_mut().zip(eves) {
            *a += e[k];
        }
        out.push(acc.clone());
    }
    out
}

impl Realization {
    fn new(r: &LinkRates, cfg: &Config) -> Self {
        let n = r.n_subchannels();
        let mut alice_order: Vec<usize> = (0..n).collect();
        alice_order.sort_by(|&a, &b| r.gains.ab[b].total_cmp(&r.gains.ab[a]));
        let metric = bob_metric(&r.gains, cfg);
        let mut bob_order: Vec<usize> = (0..n).collect();
        bob_order.sort_by(|&a, &b| metric[b].total_cmp(&metric[a]));

        let alice_data = prefix_sums(&alice_order, &r.data.main, &[]);
        let alice_key = prefix_sums(&alice_order, &r.key.main, &r.key.eves);
        let bob_data = prefix_sums(&bob_order, &r.data.main, &r.data.eves);
        let bob_key = prefix_sums(&bob_order, &r.key.main, &r.key.eves);
        let (key_total, data_total) = (&alice_key[n], &bob_data[n]);
        let minus = |total: &(f64, Vec<f64>), part: &(f64, Vec<f64>)| {
            (
                total.0 - part.0,
                total.1.iter().zip(&part.1).map(|(t, p)| t - p).collect(),
            )
        };
        Self {
            alice_prefix: alice_data.iter().map(|p| p.0).collect(),
            alice_complement_key: alice_key.iter().map(|p| minus(key_total, p)).collect(),
            bob_complement_data: bob_data.iter().map(|p| minus(data_total, p)).collect(),
            bob_prefix_key: bob_key,
        }
    }
}

/// Monte Carlo provider over one shared set of channel realizations.
///
/// For cell `(N_data, K)`: the connection outage uses Alice's best `N_data`
/// sub-channels, the data SOP uses the complement of Bob's best `N - N_data`,
/// and the key SOP uses the complement of Alice's best `N_data` at target
/// `R_data / K`.
#[derive(Debug, Clone)]
pub struct MonteCarloProvider {
    cfg: Config,
    samples: Vec<Realization>,
}

impl MonteCarloProvider {
    pub fn new(cfg: &Config, n_samples: usize, seed: u64) -> Self {
        let sampler = ChannelSampler::new(cfg);
        let chunk = 256;
        let samples = (0..n_samples.div_ceil(chunk))
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = stream_rng(seed, c as u64);
                let count = chunk.min(n_samples - c * chunk);
                (0..count)
                    .map(|_| {
                        let r = LinkRates::new(sampler.sample(&mut rng).gains(), cfg);
                        Realization::new(&r, cfg)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            samples,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    fn fraction(&self, event: impl Fn(&Realization) -> bool) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| event(s)).count() as f64 / self.samples.len() as f64
    }
}

impl OutageProvider for MonteCarloProvider {
    fn inputs(&self, n_data: usize, k: usize) -> Result<ThroughputInputs, OutageError> {
        let cfg = &self.cfg;
        let n = cfg.n_subchannels;
        let n_data = n_data.min(n);
        let n_key = n - n_data;
        let r_data = cfg.rate_data;
        let r_key = r_data / k as f64;
        let key_fails = |(main, eves): &(f64, Vec<f64>), size: usize| {
            size == 0 || clipped(*main, eves) < r_key
        };
        let p_op_ndata = self.fraction(|s| s.alice_prefix[n_data] < r_data);
        let p_sop_ba_n = self.fraction(|s| key_fails(&s.bob_prefix_key[n], n));
        let p_sop_ba_nkey = self.fraction(|s| key_fails(&s.alice_complement_key[n_data], n_key));
        Ok(ThroughputInputs {
            p_op_ndata,
            p_op_n: self.fraction(|s| s.alice_prefix[n] < r_data),
            p_sop_ab_ndata: self.fraction(|s| {
                let (main, eves) = &s.bob_complement_data[n_key];
                n_data == 0 || clipped(*main, eves) < r_data
            }),
            p_sop_ab_n: self.fraction(|s| {
                let (main, eves) = &s.bob_complement_data[0];
                clipped(*main, eves) < r_data
            }),
            p_sop_ba_nkey,
            lambda: arrival_rate(p_sop_ba_nkey, p_sop_ba_n, p_op_ndata),
            k,
            rate_data: r_data,
        })
    }
}

/// Provider built from the large-array approximations: every legitimate gain
/// is replaced by its antenna count, so connection outage becomes a
/// deterministic threshold, and the SOPs come from the numerical law of the
/// eavesdropper sum rate.
#[derive(Debug, Clone)]
pub struct AnalyticProvider {
    cfg: Config,
    n_points: usize,
}

impl AnalyticProvider {
    pub fn new(cfg: &Config, n_points: usize) -> Self {
        Self {
            cfg: cfg.clone(),
            n_points,
        }
    }

    fn connection_outage(&self, n_data: usize) -> f64 {
        let cfg = &self.cfg;
        let rate = n_data as f64 / cfg.symbol_len() as f64
            * (1.0 + cfg.snr_alice * cfg.n_tx_alice as f64 / cfg.gap_ab).log2();
        if rate < cfg.rate_data {
            1.0
        } else {
            0.0
        }
    }
}

impl OutageProvider for AnalyticProvider {
    fn inputs(&self, n_data: usize, k: usize) -> Result<ThroughputInputs, OutageError> {
        let cfg = &self.cfg;
        let n = cfg.n_subchannels;
        let n_data = n_data.min(n);
        let r_key = cfg.rate_data / k as f64;
        let p_op_ndata = self.connection_outage(n_data);
        let p_sop_ba_nkey = outage::sop_ba_product_numeric(cfg, n - n_data, r_key, self.n_points)?;
        let p_sop_ba_n = outage::sop_ba_product_numeric(cfg, n, r_key, self.n_points)?;
        let p_sop_ab_ndata = if n_data == 0 {
            1.0
        } else {
            outage::sop_ab_product_numeric(cfg, n_data, self.n_points)?
        };
        Ok(ThroughputInputs {
            p_op_ndata,
            p_op_n: self.connection_outage(n),
            p_sop_ab_ndata,
            p_sop_ab_n: outage::sop_ab_product_numeric(cfg, n, self.n_points)?,
            p_sop_ba_nkey,
            lambda: arrival_rate(p_sop_ba_nkey, p_sop_ba_n, p_op_ndata),
            k,
            rate_data: cfg.rate_data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_n_data: usize,
    pub best_k: usize,
    pub best_throughput: f64,
    /// `(n_data, k, throughput)` in row-major order.
    pub surface: Vec<(usize, usize, f64)>,
}

impl OptimizationResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_data,k,throughput\n");
        for (n, k, t) in &self.surface {
            writeln!(out, "{n},{k},{t}").unwrap();
        }
        out
    }
}

/// Evaluates the throughput on `n_data_grid x k_grid` and returns the
/// maximizer. Ties go to the smallest `(n_data, k)`.
pub fn optimize_over(
    provider: &dyn OutageProvider,
    n_data_grid: &[usize],
    k_grid: &[usize],
) -> Result<OptimizationResult, OutageError> {
    let cells: Vec<(usize, usize)> = n_data_grid
        .iter()
        .flat_map(|&n| k_grid.iter().map(move |&k| (n, k)))
        .collect();
    let surface = cells
        .par_iter()
        .map(|&(n, k)| Ok((n, k, secure_throughput(&provider.inputs(n, k)?))))
        .collect::<Result<Vec<_>, OutageError>>()?;
    let &(best_n_data, best_k, best_throughput) = surface
        .iter()
        .fold(None, |best: Option<&(usize, usize, f64)>, cell| match best {
            Some(b) if cell.2 > b.2 || (cell.2 == b.2 && (cell.0, cell.1) < (b.0, b.1)) => Some(cell),
            Some(b) => Some(b),
            None => Some(cell),
        })
        .expect("grid is never empty here");
    Ok(OptimizationResult {
        best_n_data,
        best_k,
        best_throughput,
        surface,
    })
}

/// Full search over `N_data in 1..=N` and `K in 1..=Q_max`.
pub fn optimize_grid(
    cfg: &Config,
    provider: &dyn OutageProvider,
) -> Result<OptimizationResult, OutageError> {
    let n: Vec<usize> = (1..=cfg.n_subchannels).collect();
    let k: Vec<usize> = (1..=cfg.q_max).collect();
    optimize_over(provider, &n, &k)
}

/// Best `N_data` for the configured `K`, using `samples` shared realizations.
pub fn best_n_data(cfg: &Config, samples: usize, seed: u64) -> usize {
    let provider = MonteCarloProvider::new(cfg, samples, seed);
    let n: Vec<usize> = (1..=cfg.n_subchannels).collect();
    optimize_over(&provider, &n, &[cfg.key_ratio])
        .expect("the Monte Carlo provider never fails")
        .best_n_data
}
