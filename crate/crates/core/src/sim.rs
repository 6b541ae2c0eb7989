//! Slot-driven simulation of the fixed, dynamic and benchmark schemes, and
//! parameter sweeps over them.
//!
//! Every slot draws an independent channel realization. Under OTP only
//! reliability matters; otherwise data is wiretap coded. A key packet joins
//! the queue only when Bob's secrecy rate over his sub-channels reaches the
//! key target, since he stays silent otherwise.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::allocation::{
    allocate_dynamic, allocate_fixed, data_link_rate, select_alice_best, select_bob_greedy,
    Allocation,
};
use crate::channel::ChannelSampler;
use crate::config::{Config, ConfigError, SystemConfig};
use crate::keyqueue::KeyQueueState;
use crate::rate::{link_rate, secrecy_rate, LinkRates};
use crate::stats::proportion_se;
use crate::throughput::{best_n_data, ThroughputInputs};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("value {value} is not valid for `{parameter}`")]
    BadValue { parameter: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Fixed,
    Dynamic,
    Benchmark,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Fixed, Scheme::Dynamic, Scheme::Benchmark];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Fixed => "fixed",
            Scheme::Dynamic => "dynamic",
            Scheme::Benchmark => "benchmark",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| SimError::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMode {
    Otp,
    Wiretap,
    /// Wiretap-coded data on every sub-channel, no key sharing.
    NoKeySharing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub mode: SlotMode,
    pub data_secured: bool,
    pub key_arrived: bool,
    pub queue_before: usize,
    pub queue_after: usize,
    pub allocation: Allocation,
}

/// Per-slot counts of the outage events behind the analytic throughput,
/// evaluated on every slot whatever branch the queue selected. Only the
/// fixed scheme records them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    /// Link rate over Alice's best `N_data` below the data target.
    pub op_ndata: u64,
    pub op_n: u64,
    /// Data secrecy over the complement of Bob's best `N_key` below target.
    pub sop_ab_ndata: u64,
    pub sop_ab_n: u64,
    /// Key secrecy over the complement of Alice's best `N_data` below `R_key`.
    pub sop_ba_nkey: u64,
    pub sop_ba_n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub scheme: Scheme,
    pub secure_throughput: f64,
    pub std_error: f64,
    pub ci95: f64,
    pub slots: u64,
    pub secured_slots: u64,
    pub otp_slots: u64,
    pub otp_fraction: f64,
    /// Wiretap-coded slots whose data secrecy missed the target.
    pub sop_events: u64,
    /// OTP slots whose link rate missed the target.
    pub outage_events: u64,
    pub key_arrivals: u64,
    pub events: EventCounts,
}

impl ThroughputReport {
    /// Throughput-formula inputs estimated from this run, with the measured
    /// key arrival fraction as `lambda`.
    pub fn empirical_inputs(&self, cfg: &Config) -> ThroughputInputs {
        let n = self.slots.max(1) as f64;
        let e = &self.events;
        ThroughputInputs {
            p_op_ndata: e.op_ndata as f64 / n,
            p_op_n: e.op_n as f64 / n,
            p_sop_ab_ndata: e.sop_ab_ndata as f64 / n,
            p_sop_ab_n: e.sop_ab_n as f64 / n,
            p_sop_ba_nkey: e.sop_ba_nkey as f64 / n,
            lambda: self.key_arrivals as f64 / n,
            k: cfg.key_ratio,
            rate_data: cfg.rate_data,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Fixed scheme only: keep the split even when the key link is insecure,
    /// so the key sub-channels are never handed back to data.
    pub transmit_anyway: bool,
}

/// One scheme's slot loop with its key queue.
pub struct Simulator<'a> {
    cfg: &'a Config,
    scheme: Scheme,
    options: SimOptions,
    sampler: ChannelSampler,
    queue: KeyQueueState,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a Config, scheme: Scheme, options: SimOptions) -> Self {
        Self {
            cfg,
            scheme,
            options,
            sampler: ChannelSampler::new(cfg),
            queue: KeyQueueState::new(cfg.key_ratio, cfg.q_max),
        }
    }

    pub fn queue(&self) -> KeyQueueState {
        self.queue
    }

    fn allocate(&self, rates: &LinkRates) -> Allocation {
        let n = rates.n_subchannels();
        match self.scheme {
            Scheme::Benchmark => Allocation::all_data(n),
            Scheme::Dynamic => allocate_dynamic(rates, &self.queue, self.cfg),
            Scheme::Fixed if self.options.transmit_anyway => {
                if self.queue.otp_ready() {
                    Allocation::with_data(select_alice_best(&rates.gains, self.cfg.n_data_fixed), n)
                } else {
                    Allocation::with_key(select_bob_greedy(&rates.gains, self.cfg.n_key(), self.cfg), n)
                }
            }
            Scheme::Fixed => allocate_fixed(rates, &self.queue, self.cfg),
        }
    }

    /// Runs one slot on a given realization.
    pub fn step_with(&mut self, rates: &LinkRates) -> SlotOutcome {
        let cfg = self.cfg;
        let before = self.queue;
        let allocation = self.allocate(rates);
        let key_arrived =
            allocation.key_sharing() && secrecy_rate(&rates.key, &allocation.key) >= cfg.rate_key();
        let (mode, data_secured) = if self.scheme != Scheme::Benchmark && before.otp_ready() {
            (SlotMode::Otp, data_link_rate(rates, &allocation) >= cfg.rate_data)
        } else {
            let mode = if allocation.key_sharing() {
                SlotMode::Wiretap
            } else {
                SlotMode::NoKeySharing
            };
            (mode, secrecy_rate(&rates.data, &allocation.data) >= cfg.rate_data)
        };
        let mut q = before;
        if mode == SlotMode::Otp && data_secured {
            q = q.dequeue_data().expect("OTP slots start with at least K keys");
        }
        if key_arrived {
            q = q.enqueue_key();
        }
        self.queue = q;
        SlotOutcome {
            mode,
            data_secured,
            key_arrived,
            queue_before: before.occupancy(),
            queue_after: q.occupancy(),
            allocation,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SlotOutcome {
        let rates = LinkRates::new(self.sampler.sample(rng).gains(), self.cfg);
        self.step_with(&rates)
    }
}

fn count_events(rates: &LinkRates, cfg: &Config, acc: &mut EventCounts) {
    let n = rates.n_subchannels();
    let r_data = cfg.rate_data;
    let alice = Allocation::with_data(select_alice_best(&rates.gains, cfg.n_data_fixed), n);
    let bob = Allocation::with_key(select_bob_greedy(&rates.gains, cfg.n_key(), cfg), n);
    let all: Vec<usize> = (0..n).collect();
    let rate = |set: &[usize]| link_rate(&rates.data, set).expect("indices in range");
    let key_fails = |set: &[usize]| set.is_empty() || secrecy_rate(&rates.key, set) < cfg.rate_key();
    let data_fails = |set: &[usize]| set.is_empty() || secrecy_rate(&rates.data, set) < r_data;
    acc.op_ndata += u64::from(rate(&alice.data) < r_data);
    acc.op_n += u64::from(rate(&all) < r_data);
    acc.sop_ab_ndata += u64::from(data_fails(&bob.data));
    acc.sop_ab_n += u64::from(data_fails(&all));
    acc.sop_ba_nkey += u64::from(key_fails(&alice.key));
    acc.sop_ba_n += u64::from(key_fails(&all));
}

/// Runs `slots` slots of `scheme` from an empty queue.
pub fn run<R: Rng + ?Sized>(
    cfg: &Config,
    scheme: Scheme,
    slots: u64,
    rng: &mut R,
    options: SimOptions,
) -> ThroughputReport {
    let mut sim = Simulator::new(cfg, scheme, options);
    let mut events = EventCounts::default();
    let (mut secured, mut otp, mut sop, mut outage, mut keys) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for _ in 0..slots {
        let rates = LinkRates::new(sim.sampler.sample(rng).gains(), cfg);
        if scheme == Scheme::Fixed {
            count_events(&rates, cfg, &mut events);
        }
        let out = sim.step_with(&rates);
        secured += u64::from(out.data_secured);
        keys += u64::from(out.key_arrived);
        if out.mode == SlotMode::Otp {
            otp += 1;
            outage += u64::from(!out.data_secured);
        } else {
            sop += u64::from(!out.data_secured);
        }
    }
    let p = if slots == 0 { 0.0 } else { secured as f64 / slots as f64 };
    let std_error = cfg.rate_data * proportion_se(p, slots);
    ThroughputReport {
        scheme,
        secure_throughput: p * cfg.rate_data,
        std_error,
        ci95: 1.96 * std_error,
        slots,
        secured_slots: secured,
        otp_slots: otp,
        otp_fraction: if slots == 0 { 0.0 } else { otp as f64 / slots as f64 },
        sop_events: sop,
        outage_events: outage,
        key_arrivals: keys,
        events,
    }
}

pub fn run_fixed<R: Rng + ?Sized>(cfg: &Config, slots: u64, rng: &mut R) -> ThroughputReport {
    run(cfg, Scheme::Fixed, slots, rng, SimOptions::default())
}

pub fn run_dynamic<R: Rng + ?Sized>(cfg: &Config, slots: u64, rng: &mut R) -> ThroughputReport {
    run(cfg, Scheme::Dynamic, slots, rng, SimOptions::default())
}

pub fn run_benchmark<R: Rng + ?Sized>(cfg: &Config, slots: u64, rng: &mut R) -> ThroughputReport {
    run(cfg, Scheme::Benchmark, slots, rng, SimOptions::default())
}

/// Runs `scheme` with a fresh ChaCha8 generator seeded from `seed`.
pub fn run_seeded(cfg: &Config, scheme: Scheme, slots: u64, seed: u64) -> ThroughputReport {
    run(cfg, scheme, slots, &mut ChaCha8Rng::seed_from_u64(seed), SimOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Both link SNRs, linear.
    Snr,
    NB,
    RateData,
    GapAb,
    NData,
    K,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 6] = [
        SweepParameter::Snr,
        SweepParameter::NB,
        SweepParameter::RateData,
        SweepParameter::GapAb,
        SweepParameter::NData,
        SweepParameter::K,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Snr => "snr",
            SweepParameter::NB => "n_b",
            SweepParameter::RateData => "rate_data",
            SweepParameter::GapAb => "gap_ab",
            SweepParameter::NData => "n_data",
            SweepParameter::K => "k",
        }
    }

    /// Returns `base` with this parameter set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<Config, SimError> {
        let mut cfg = base.clone();
        let count = || -> Result<usize, SimError> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(SimError::BadValue {
                    parameter: self.name(),
                    value,
                })
            }
        };
        match self {
            SweepParameter::Snr => {
                cfg.snr_alice = value;
                cfg.snr_bob = value;
            }
            SweepParameter::NB => cfg.n_tx_bob = count()?,
            SweepParameter::RateData => cfg.rate_data = value,
            SweepParameter::GapAb => cfg.gap_ab = value,
            SweepParameter::NData => cfg.n_data_fixed = count()?,
            SweepParameter::K => cfg.key_ratio = count()?,
        }
        Ok(cfg.validate()?)
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        SweepParameter::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::UnknownParameter(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub slots: u64,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    /// When set, the fixed scheme picks its best `N_data` at every grid point
    /// (except in `n_data` sweeps) from this many shared realizations.
    pub reoptimize_samples: Option<usize>,
    /// Reuse the master seed at every grid point, so neighbouring points see
    /// the same channel draws.
    pub common_random_numbers: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            slots: 10_000,
            seed: 1,
            schemes: Scheme::ALL.to_vec(),
            reoptimize_samples: None,
            common_random_numbers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub n_data: usize,
    /// Seed of this row's generator; rerun with it to reproduce the row.
    pub seed: u64,
    pub report: ThroughputReport,
}

/// Seed used at grid point `index`; all schemes at a point share it.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Runs every scheme at every grid point.
pub fn sweep(
    base: &SystemConfig,
    parameter: SweepParameter,
    grid: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>, SimError> {
    if grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let points = grid
        .iter()
        .map(|&v| parameter.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, Scheme)> = (0..grid.len())
        .flat_map(|i| settings.schemes.iter().map(move |&s| (i, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, scheme)| {
            let seed = if settings.common_random_numbers {
                settings.seed
            } else {
                point_seed(settings.seed, i)
            };
            let mut cfg = points[i].clone();
            if let (Scheme::Fixed, Some(samples)) = (scheme, settings.reoptimize_samples) {
                if parameter != SweepParameter::NData {
                    let n_data = best_n_data(&cfg, samples, seed);
                    cfg = SystemConfig {
                        n_data_fixed: n_data,
                        ..cfg.params().clone()
                    }
                    .validate()?;
                }
            }
            Ok(SweepRow {
                parameter,
                value: grid[i],
                n_data: cfg.n_data_fixed,
                seed,
                report: run_seeded(&cfg, scheme, settings.slots, seed),
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str =
    "parameter,value,scheme,throughput,ci95,otp_fraction,sop_events,slots,seed";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.parameter,
            r.value,
            r.report.scheme,
            r.report.secure_throughput,
            r.report.ci95,
            r.report.otp_fraction,
            r.report.sop_events,
            r.report.slots,
            r.seed
        )
        .unwrap();
    }
    out
}

/// Grid value whose row for `scheme` has the highest throughput; ties go to
/// the first.
pub fn argmax(rows: &[SweepRow], scheme: Scheme) -> Option<f64> {
    rows.iter()
        .filter(|r| r.report.scheme == scheme)
        .fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if r.report.secure_throughput <= b.report.secure_throughput => Some(b),
            _ => Some(r),
        })
        .map(|r| r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn no_adversary_reaches_the_target() {
        let cfg = SystemConfig {
            n_eves: 0,
            snr_alice: 1e5,
            snr_bob: 1e5,
            ..defaults()
        }
        .validate()
        .unwrap();
        for scheme in Scheme::ALL {
            let r = run_seeded(&cfg, scheme, 500, 1);
            assert!(r.secure_throughput > 1.45, "{scheme}: {r:?}");
        }
    }

    #[test]
    fn vanishing_snr_secures_nothing() {
        let cfg = SystemConfig {
            snr_alice: 1e-9,
            snr_bob: 1e-9,
            ..defaults()
        }
        .validate()
        .unwrap();
        for scheme in Scheme::ALL {
            let r = run_seeded(&cfg, scheme, 300, 2);
            assert_eq!(r.secure_throughput, 0.0);
            assert_eq!(r.key_arrivals, 0);
        }
    }

    #[test]
    fn unsatisfiable_key_condition_gives_an_all_data_slot() {
        let cfg = SystemConfig {
            rate_data: 50.0,
            ..defaults()
        }
        .validate()
        .unwrap();
        let mut sim = Simulator::new(&cfg, Scheme::Dynamic, SimOptions::default());
        let out = sim.step(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out.allocation, Allocation::all_data(64));
        assert_eq!(out.mode, SlotMode::NoKeySharing);
        assert!(!out.key_arrived);
    }

    #[test]
    fn queue_rules_hold_along_a_run() {
        let cfg = SystemConfig {
            key_ratio: 2,
            q_max: 4,
            ..defaults()
        }
        .validate()
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for scheme in [Scheme::Fixed, Scheme::Dynamic] {
            let mut sim = Simulator::new(&cfg, scheme, SimOptions::default());
            for _ in 0..400 {
                let o = sim.step(&mut rng);
                assert!(o.queue_after <= 4);
                if o.queue_after < o.queue_before {
                    assert!(o.mode == SlotMode::Otp && o.data_secured, "{o:?}");
                }
                let mut q = o.queue_before;
                if o.mode == SlotMode::Otp && o.data_secured {
                    q -= 2;
                }
                if o.key_arrived {
                    q = (q + 1).min(4);
                }
                assert_eq!(q, o.queue_after);
                if o.mode == SlotMode::Otp {
                    assert!(o.queue_before >= 2);
                }
            }
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = defaults().validate().unwrap();
        for scheme in Scheme::ALL {
            assert_eq!(run_seeded(&cfg, scheme, 200, 9), run_seeded(&cfg, scheme, 200, 9));
        }
    }

    #[test]
    fn sweep_errors() {
        let s = SweepSettings {
            slots: 10,
            ..Default::default()
        };
        assert_eq!(sweep(&defaults(), SweepParameter::Snr, &[], &s), Err(SimError::EmptyGrid));
        assert!("bogus".parse::<SweepParameter>().is_err());
        assert!(matches!(
            sweep(&defaults(), SweepParameter::K, &[1.5], &s),
            Err(SimError::BadValue { .. })
        ));
        assert!(matches!(
            sweep(&defaults(), SweepParameter::K, &[11.0], &s),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn single_point_sweep_matches_direct_runs() {
        let s = SweepSettings {
            slots: 300,
            seed: 11,
            ..Default::default()
        };
        let rows = sweep(&defaults(), SweepParameter::Snr, &[1000.0], &s).unwrap();
        let cfg = defaults().validate().unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.report, run_seeded(&cfg, r.report.scheme, 300, 11));
        }
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with(SWEEP_CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }
}
