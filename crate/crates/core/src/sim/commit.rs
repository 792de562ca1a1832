//! Monte-Carlo model of atomic-commitment latency as a throughput bound.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitProtocol {
    /// Centralized two-phase commit: a coordinator waits for `N` parallel
    /// round trips.
    C2pc,
    /// Decentralized two-phase commit: `N` parallel broadcasts; every server
    /// waits for the slowest of the one-way messages it receives.
    D2pc,
}

impl std::str::FromStr for CommitProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2pc" => Ok(CommitProtocol::C2pc),
            "d2pc" => Ok(CommitProtocol::D2pc),
            _ => Err(Error::ConfigInvalid(format!("unknown commit protocol `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommitEstimate {
    pub servers: usize,
    pub protocol: CommitProtocol,
    /// Commits per second when each commit waits for the previous one.
    pub throughput: f64,
    pub mean_latency_ms: f64,
}

/// Estimates serial commit throughput over `rounds` rounds.
///
/// Samples are round-trip times in milliseconds. A c2pc round waits for the
/// maximum of `N` round trips; a d2pc round waits for the maximum of the
/// `N²` one-way (half round-trip) messages of the broadcast exchange, since
/// commit completes when the slowest server has heard from every server.
/// Each round draws from its own random stream, so the samples of a smaller
/// `N` are a prefix of those of a larger one: estimates for different `N`
/// with the same seed use common random numbers and are exactly monotone.
pub fn model_commit_throughput(
    servers: usize,
    protocol: CommitProtocol,
    rtt_samples_ms: &[f64],
    rounds: usize,
    seed: u64,
) -> Result<CommitEstimate> {
    if rtt_samples_ms.is_empty() {
        return Err(Error::EmptySamples);
    }
    if servers < 2 {
        return Err(Error::ConfigInvalid("commit model needs at least 2 servers".into()));
    }
    if rounds == 0 {
        return Err(Error::ConfigInvalid("commit model needs at least 1 round".into()));
    }
    if rtt_samples_ms.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::ConfigInvalid("latency samples must be nonnegative".into()));
    }
    let (draws, scale) = match protocol {
        CommitProtocol::C2pc => (servers, 1.0),
        CommitProtocol::D2pc => (servers * servers, 0.5),
    };
    let mut total_ms = 0.0;
    for round in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        let latency = (0..draws)
            .map(|_| rtt_samples_ms[rng.random_range(0..rtt_samples_ms.len())])
            .fold(0.0, f64::max)
            * scale;
        total_ms += latency;
    }
    let mean = total_ms / rounds as f64;
    Ok(CommitEstimate {
        servers,
        protocol,
        throughput: if total_ms > 0.0 {
            rounds as f64 * 1000.0 / total_ms
        } else {
            f64::INFINITY
        },
        mean_latency_ms: mean,
    })
}
