//! System parameters, their validation, and the `key = value` file format.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Deref;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invariant(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing config key `{0}`")]
    MissingKey(&'static str),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
}

/// Raw, unchecked system parameters.
///
/// SNRs and gaps are linear power ratios. Rates are in bits per channel use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub n_subchannels: usize,
    pub n_cp: usize,
    pub n_taps: usize,
    pub n_tx_alice: usize,
    pub n_tx_bob: usize,
    pub n_eves: usize,
    pub snr_alice: f64,
    pub snr_bob: f64,
    pub gap_ab: f64,
    pub gap_ba: f64,
    pub rate_data: f64,
    pub key_ratio: usize,
    pub q_max: usize,
    pub n_data_fixed: usize,
    /// Bandwidth `W` (Hz) and slot duration `T` (s); only used to report packet sizes.
    pub bandwidth_time: Option<(f64, f64)>,
}

impl Default for SystemConfig {
    /// N = 64, N_cp = L = 8, two Alice antennas, eight Bob antennas, two
    /// eavesdroppers, 30 dB on both links, gaps of 1.2, 1.5 bits/channel-use,
    /// K = 1 and a ten-packet key buffer.
    fn default() -> Self {
        Self {
            n_subchannels: 64,
            n_cp: 8,
            n_taps: 8,
            n_tx_alice: 2,
            n_tx_bob: 8,
            n_eves: 2,
            snr_alice: 1000.0,
            snr_bob: 1000.0,
            gap_ab: 1.2,
            gap_ba: 1.2,
            rate_data: 1.5,
            key_ratio: 1,
            q_max: 10,
            n_data_fixed: 11,
            bandwidth_time: None,
        }
    }
}

/// Packet sizes in bits, available when `W` and `T` are configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacketSizes {
    pub data_bits: f64,
    pub key_bits: f64,
}

/// A validated configuration with its derived quantities.
///
/// Immutable; share it freely between worker threads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    params: SystemConfig,
    n_key: usize,
    rate_key: f64,
    packet_sizes: Option<PacketSizes>,
}

impl Deref for Config {
    type Target = SystemConfig;

    fn deref(&self) -> &SystemConfig {
        &self.params
    }
}

impl Config {
    pub fn params(&self) -> &SystemConfig {
        &self.params
    }

    /// Number of key sub-channels of the fixed scheme, `N - N_data`.
    pub fn n_key(&self) -> usize {
        self.n_key
    }

    /// Target key rate `R_data / K`.
    pub fn rate_key(&self) -> f64 {
        self.rate_key
    }

    pub fn packet_sizes(&self) -> Option<PacketSizes> {
        self.packet_sizes
    }

    /// OFDM symbol length in channel uses, `N + N_cp`.
    pub fn symbol_len(&self) -> usize {
        self.params.n_subchannels + self.params.n_cp
    }
}

fn invariant(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invariant(msg()))
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<Config, ConfigError> {
        let c = self;
        invariant(c.n_subchannels >= 1, || "N must be at least 1".into())?;
        invariant(c.n_taps >= 1, || "L must be at least 1".into())?;
        invariant(c.n_cp >= c.n_taps, || {
            format!("cyclic prefix N_cp = {} is shorter than the channel L = {}", c.n_cp, c.n_taps)
        })?;
        invariant(c.n_subchannels >= c.n_taps, || {
            format!("N = {} must be at least L = {}", c.n_subchannels, c.n_taps)
        })?;
        invariant(c.n_tx_alice >= 1, || "N_A must be at least 1".into())?;
        invariant(c.n_tx_bob >= 1, || "N_B must be at least 1".into())?;
        invariant(
            (1..=c.n_subchannels).contains(&c.n_data_fixed),
            || format!("N_data = {} must lie in 1..={}", c.n_data_fixed, c.n_subchannels),
        )?;
        invariant(c.key_ratio >= 1, || "K must be at least 1".into())?;
        invariant(c.key_ratio <= c.q_max, || {
            format!("K = {} exceeds the key buffer Q_max = {}", c.key_ratio, c.q_max)
        })?;
        for (name, v) in [("snr_alice", c.snr_alice), ("snr_bob", c.snr_bob)] {
            invariant(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))?;
        }
        for (name, v) in [("gap_ab", c.gap_ab), ("gap_ba", c.gap_ba)] {
            invariant(v.is_finite() && v >= 1.0, || format!("{name} must be at least 1, got {v}"))?;
        }
        invariant(c.rate_data.is_finite() && c.rate_data >= 0.0, || {
            format!("rate_data must be non-negative, got {}", c.rate_data)
        })?;
        if let Some((w, t)) = c.bandwidth_time {
            invariant(w > 0.0 && t > 0.0, || "bandwidth and slot duration must be positive".into())?;
        }

        let rate_key = c.rate_data / c.key_ratio as f64;
        let packet_sizes = c.bandwidth_time.map(|(w, t)| {
            let data_bits = c.rate_data * w * t;
            PacketSizes {
                data_bits,
                key_bits: data_bits / c.key_ratio as f64,
            }
        });
        Ok(Config {
            params: c.clone(),
            n_key: c.n_subchannels - c.n_data_fixed,
            rate_key,
            packet_sizes,
        })
    }
}

/// Keys understood by the config file format, in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "n_subchannels",
    "n_cp",
    "n_taps",
    "n_tx_alice",
    "n_tx_bob",
    "n_eves",
    "snr_alice",
    "snr_bob",
    "gap_ab",
    "gap_ba",
    "rate_data",
    "key_ratio",
    "q_max",
    "n_data_fixed",
    "bandwidth",
    "slot_duration",
];

const OPTIONAL_KEYS: &[&str] = &["bandwidth", "slot_duration"];

/// Parses a linear ratio, accepting a `dB` suffix.
pub fn parse_ratio(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (num, db) = match t
        .strip_suffix("dB")
        .or_else(|| t.strip_suffix("db"))
        .or_else(|| t.strip_suffix("DB"))
    {
        Some(rest) => (rest.trim(), true),
        None => (t, false),
    };
    let v: f64 = num.parse().map_err(|e| format!("{e}"))?;
    Ok(if db { db_to_linear(v) } else { v })
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn bad(key: &str, value: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_count(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.trim().parse().map_err(|e| bad(key, value, e))
}

impl SystemConfig {
    /// Sets a single field by its config-file name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let ratio = |v: &str| parse_ratio(v).map_err(|e| bad(key, v, e));
        match key {
            "n_subchannels" => self.n_subchannels = parse_count(key, value)?,
            "n_cp" => self.n_cp = parse_count(key, value)?,
            "n_taps" => self.n_taps = parse_count(key, value)?,
            "n_tx_alice" => self.n_tx_alice = parse_count(key, value)?,
            "n_tx_bob" => self.n_tx_bob = parse_count(key, value)?,
            "n_eves" => self.n_eves = parse_count(key, value)?,
            "snr_alice" => self.snr_alice = ratio(value)?,
            "snr_bob" => self.snr_bob = ratio(value)?,
            "gap_ab" => self.gap_ab = ratio(value)?,
            "gap_ba" => self.gap_ba = ratio(value)?,
            "rate_data" => {
                self.rate_data = value.trim().parse().map_err(|e| bad(key, value, e))?
            }
            "key_ratio" => self.key_ratio = parse_count(key, value)?,
            "q_max" => self.q_max = parse_count(key, value)?,
            "n_data_fixed" => self.n_data_fixed = parse_count(key, value)?,
            "bandwidth" => {
                let w: f64 = value.trim().parse().map_err(|e| bad(key, value, e))?;
                let t = self.bandwidth_time.map_or(1.0, |(_, t)| t);
                self.bandwidth_time = Some((w, t));
            }
            "slot_duration" => {
                let t: f64 = value.trim().parse().map_err(|e| bad(key, value, e))?;
                let w = self.bandwidth_time.map_or(1.0, |(w, _)| w);
                self.bandwidth_time = Some((w, t));
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a complete config file. Every non-optional key must be present;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SystemConfig::default();
        let mut seen = BTreeSet::new();
        let mut bandwidth = None;
        let mut slot = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            match key {
                "bandwidth" => bandwidth = Some(value.trim().to_string()),
                "slot_duration" => slot = Some(value.trim().to_string()),
                _ => cfg.set(key, value)?,
            }
            seen.insert(key.to_string());
        }
        for key in CONFIG_KEYS {
            if !OPTIONAL_KEYS.contains(key) && !seen.contains(*key) {
                return Err(ConfigError::MissingKey(key));
            }
        }
        match (bandwidth, slot) {
            (Some(w), Some(t)) => {
                cfg.set("bandwidth", &w)?;
                cfg.set("slot_duration", &t)?;
            }
            (None, None) => {}
            (Some(_), None) => return Err(ConfigError::MissingKey("slot_duration")),
            (None, Some(_)) => return Err(ConfigError::MissingKey("bandwidth")),
        }
        Ok(cfg)
    }

    /// Renders the config in the file format read by [`SystemConfig::parse`].
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("n_subchannels", self.n_subchannels.to_string());
        line("n_cp", self.n_cp.to_string());
        line("n_taps", self.n_taps.to_string());
        line("n_tx_alice", self.n_tx_alice.to_string());
        line("n_tx_bob", self.n_tx_bob.to_string());
        line("n_eves", self.n_eves.to_string());
        // `{:?}` on f64 prints the shortest round-tripping representation.
        line("snr_alice", format!("{:?}", self.snr_alice));
        line("snr_bob", format!("{:?}", self.snr_bob));
        line("gap_ab", format!("{:?}", self.gap_ab));
        line("gap_ba", format!("{:?}", self.gap_ba));
        line("rate_data", format!("{:?}", self.rate_data));
        line("key_ratio", self.key_ratio.to_string());
        line("q_max", self.q_max.to_string());
        line("n_data_fixed", self.n_data_fixed.to_string());
        if let Some((w, t)) = self.bandwidth_time {
            line("bandwidth", format!("{w:?}"));
            line("slot_duration", format!("{t:?}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_accepted() {
        let cfg = SystemConfig::default().validate().unwrap();
        assert_eq!(cfg.n_subchannels, 64);
        assert_eq!(cfg.n_key(), 53);
        assert_eq!(cfg.rate_key(), 1.5);
        assert_eq!(cfg.symbol_len(), 72);
        assert!(cfg.packet_sizes().is_none());
    }

    #[test]
    fn short_cyclic_prefix_is_rejected() {
        let cfg = SystemConfig {
            n_cp: 4,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("cyclic prefix"), "{err}");
    }

    #[test]
    fn key_ratio_above_buffer_is_rejected() {
        let cfg = SystemConfig {
            key_ratio: 11,
            q_max: 10,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("Q_max"));
        let cfg = SystemConfig {
            key_ratio: 10,
            q_max: 10,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn other_invariants() {
        let bad = [
            SystemConfig { n_data_fixed: 0, ..Default::default() },
            SystemConfig { n_data_fixed: 65, ..Default::default() },
            SystemConfig { gap_ab: 0.9, ..Default::default() },
            SystemConfig { snr_bob: 0.0, ..Default::default() },
            SystemConfig { key_ratio: 0, ..Default::default() },
            SystemConfig { rate_data: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn rate_key_times_k_recovers_rate_data() {
        let cfg = SystemConfig {
            rate_data: 4.0,
            key_ratio: 2,
            ..Default::default()
        }
        .validate()
        .unwrap();
        assert_eq!(cfg.rate_key() * 2.0, 4.0);
    }

    #[test]
    fn validate_is_idempotent() {
        let once = SystemConfig::default().validate().unwrap();
        let twice = once.params().validate().unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn packet_sizes_follow_bandwidth_time() {
        let cfg = SystemConfig {
            key_ratio: 3,
            rate_data: 1.5,
            bandwidth_time: Some((1e6, 1e-3)),
            ..Default::default()
        }
        .validate()
        .unwrap();
        let p = cfg.packet_sizes().unwrap();
        assert!((p.data_bits - 1500.0).abs() < 1e-9);
        assert!((p.key_bits - 500.0).abs() < 1e-9);
    }

    #[test]
    fn file_roundtrip_and_db_values() {
        let text = SystemConfig::default().to_file_string();
        assert_eq!(SystemConfig::parse(&text).unwrap(), SystemConfig::default());

        let text = text.replace("snr_alice = 1000.0", "snr_alice = 20dB # comment");
        let cfg = SystemConfig::parse(&text).unwrap();
        assert!((cfg.snr_alice - 100.0).abs() < 1e-9);
    }

    #[test]
    fn missing_and_unknown_keys() {
        let text = SystemConfig::default().to_file_string();
        let without_n: String = text
            .lines()
            .filter(|l| !l.starts_with("n_subchannels"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(
            SystemConfig::parse(&without_n).unwrap_err(),
            ConfigError::MissingKey("n_subchannels")
        );
        let extra = format!("{text}colour = blue\n");
        assert!(matches!(
            SystemConfig::parse(&extra).unwrap_err(),
            ConfigError::UnknownKey(_)
        ));
        assert!(matches!(
            SystemConfig::parse("n_cp 8").unwrap_err(),
            ConfigError::Syntax { .. }
        ));
    }
}
