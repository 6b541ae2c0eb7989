//! Key-assisted physical-layer secure transmission over OFDM.
//!
//! Alice sends data to Bob over `N` sub-channels while `M` passive
//! eavesdroppers listen. When a one-time-pad key is buffered, data goes out
//! over Alice's strongest sub-channels and Bob uses the rest to return fresh
//! key bits; otherwise everything carries wiretap-coded data.

pub mod allocation;
pub mod channel;
pub mod cli;
pub mod config;
pub mod keyqueue;
pub mod outage;
pub mod rate;
pub mod sim;
pub mod stats;
pub mod throughput;

pub use allocation::{allocate_dynamic, allocate_fixed, Allocation};
pub use channel::{ChannelSampler, ChannelSet, LinkGains};
pub use config::{Config, ConfigError, SystemConfig};
pub use keyqueue::{KeyQueueState, MarkovParams, StationaryDistribution};
pub use outage::OutageEstimate;
pub use rate::{LinkRates, SubchannelRates};
pub use sim::{Scheme, ThroughputReport};
