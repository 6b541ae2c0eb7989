//! Per-sub-channel achievable rates, link sums and instantaneous secrecy
//! rates. All rates are in bits per channel use and include the
//! `1/(N + N_cp)` cyclic-prefix overhead.

use statrs::function::erf::erfc_inv;
use thiserror::Error;

use crate::channel::LinkGains;
use crate::config::Config;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("target error probability {0} is outside (0, 1)")]
    ErrorProbability(f64),
    #[error("coding gain and margin must be positive")]
    NonPositiveGain,
    #[error("sub-channel index {index} out of range for {n} sub-channels")]
    IndexOutOfRange { index: usize, n: usize },
}

/// Inverse Gaussian tail function, `Q^{-1}(p)`.
pub fn q_inv(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// SNR gap of coded QAM at symbol error rate `p_e`, coding gain `gamma_c`
/// and design margin `gamma_m`: `gamma_m / (3 gamma_c) * Q^{-1}(p_e/4)^2`.
pub fn snr_gap(p_e: f64, gamma_c: f64, gamma_m: f64) -> Result<f64, RateError> {
    if !(p_e > 0.0 && p_e < 1.0) {
        return Err(RateError::ErrorProbability(p_e));
    }
    if !(gamma_c > 0.0 && gamma_m > 0.0) {
        return Err(RateError::NonPositiveGain);
    }
    Ok(gamma_m / (3.0 * gamma_c) * q_inv(p_e / 4.0).powi(2))
}

pub fn subchannel_rate(gain: f64, snr: f64, gap: f64, n: usize, n_cp: usize) -> f64 {
    (snr * gain / gap).ln_1p() / std::f64::consts::LN_2 / (n + n_cp) as f64
}

/// Eavesdropper rate: no SNR gap is applied.
pub fn eve_subchannel_rate(gain: f64, snr: f64, n: usize, n_cp: usize) -> f64 {
    subchannel_rate(gain, snr, 1.0, n, n_cp)
}

/// Rates of one transmission direction: the legitimate link and every
/// eavesdropper, indexed `[sub-channel]` and `[eve][sub-channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubchannelRates {
    pub main: Vec<f64>,
    pub eves: Vec<Vec<f64>>,
}

impl SubchannelRates {
    fn from_gains(main: &[f64], eves: &[Vec<f64>], snr: f64, gap: f64, cfg: &Config) -> Self {
        let (n, cp) = (cfg.n_subchannels, cfg.n_cp);
        Self {
            main: main.iter().map(|&g| subchannel_rate(g, snr, gap, n, cp)).collect(),
            eves: eves
                .iter()
                .map(|e| e.iter().map(|&g| eve_subchannel_rate(g, snr, n, cp)).collect())
                .collect(),
        }
    }

    /// Alice-to-Bob data direction.
    pub fn data(gains: &LinkGains, cfg: &Config) -> Self {
        Self::from_gains(&gains.ab, &gains.ae, cfg.snr_alice, cfg.gap_ab, cfg)
    }

    /// Bob-to-Alice key direction.
    pub fn key(gains: &LinkGains, cfg: &Config) -> Self {
        Self::from_gains(&gains.ba, &gains.be, cfg.snr_bob, cfg.gap_ba, cfg)
    }

    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    /// Per-sub-channel secrecy margin against the strongest eavesdropper,
    /// `main[k] - max_m eves[m][k]`.
    pub fn margin(&self, k: usize) -> f64 {
        self.main[k] - self.eves.iter().map(|e| e[k]).fold(0.0, f64::max)
    }
}

/// Sum of the legitimate rates over `subset`.
pub fn link_rate(rates: &SubchannelRates, subset: &[usize]) -> Result<f64, RateError> {
    subset.iter().try_fold(0.0, |acc, &k| {
        rates
            .main
            .get(k)
            .map(|r| acc + r)
            .ok_or(RateError::IndexOutOfRange {
                index: k,
                n: rates.main.len(),
            })
    })
}

/// Where the `[.]^+` clipping is applied in the secrecy rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecrecyMode {
    /// `min_m [sum_k (main_k - eve_mk)]^+`.
    #[default]
    SumClipped,
    /// `min_m sum_k [main_k - eve_mk]^+`.
    PerSubchannelClipped,
}

/// Instantaneous secrecy rate over `subset` against the worst eavesdropper,
/// clipped at the sum level. Zero for an empty subset.
pub fn secrecy_rate(rates: &SubchannelRates, subset: &[usize]) -> f64 {
    secrecy_rate_with(rates, subset, SecrecyMode::SumClipped)
}

pub fn secrecy_rate_with(rates: &SubchannelRates, subset: &[usize], mode: SecrecyMode) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let main: f64 = subset.iter().map(|&k| rates.main[k]).sum();
    let per_eve = |eve: &Vec<f64>| -> f64 {
        match mode {
            SecrecyMode::SumClipped => {
                (main - subset.iter().map(|&k| eve[k]).sum::<f64>()).max(0.0)
            }
            SecrecyMode::PerSubchannelClipped => subset
                .iter()
                .map(|&k| (rates.main[k] - eve[k]).max(0.0))
                .sum(),
        }
    };
    rates.eves.iter().map(per_eve).fold(main, f64::min)
}

/// Gains and rates of both directions for one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRates {
    pub gains: LinkGains,
    pub data: SubchannelRates,
    pub key: SubchannelRates,
}

impl LinkRates {
    pub fn new(gains: LinkGains, cfg: &Config) -> Self {
        let data = SubchannelRates::data(&gains, cfg);
        let key = SubchannelRates::key(&gains, cfg);
        Self { gains, data, key }
    }

    pub fn n_subchannels(&self) -> usize {
        self.data.len()
    }
}
