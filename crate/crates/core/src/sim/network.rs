//! Message delay and partition model.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

/// Simulated time in microseconds.
pub type Micros = u64;

pub fn micros(ms: f64) -> Micros {
    (ms * 1000.0).round().max(0.0) as Micros
}

pub fn millis(us: Micros) -> f64 {
    us as f64 / 1000.0
}

/// Random component added to the base delay of every message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Jitter {
    Constant,
    Uniform { lo_ms: f64, hi_ms: f64 },
    /// Draws uniformly from measured samples.
    Empirical { samples_ms: Vec<f64> },
    /// Long-tailed preset.
    LogNormal { median_ms: f64, sigma: f64 },
}

/// Messages between `a` and `b` (either direction) sent during
/// `[start_ms, end_ms)` are dropped or held until the partition heals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub a: usize,
    pub b: usize,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub base_delay_ms: f64,
    pub jitter: Jitter,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<Partition>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel::constant(1.0)
    }
}

impl NetworkModel {
    pub fn constant(delay_ms: f64) -> Self {
        NetworkModel {
            base_delay_ms: delay_ms,
            jitter: Jitter::Constant,
            partitions: Vec::new(),
        }
    }

    pub fn uniform(lo_ms: f64, hi_ms: f64) -> Self {
        NetworkModel {
            base_delay_ms: 0.0,
            jitter: Jitter::Uniform { lo_ms, hi_ms },
            partitions: Vec::new(),
        }
    }

    pub fn empirical(samples_ms: Vec<f64>) -> Self {
        NetworkModel {
            base_delay_ms: 0.0,
            jitter: Jitter::Empirical { samples_ms },
            partitions: Vec::new(),
        }
    }

    pub fn lognormal(median_ms: f64, sigma: f64) -> Self {
        NetworkModel {
            base_delay_ms: 0.0,
            jitter: Jitter::LogNormal { median_ms, sigma },
            partitions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(format!("network: {m}")));
        if !(self.base_delay_ms >= 0.0) {
            return bad("base delay must be nonnegative");
        }
        match &self.jitter {
            Jitter::Constant => {}
            Jitter::Uniform { lo_ms, hi_ms } => {
                if !(*lo_ms >= 0.0 && lo_ms <= hi_ms) {
                    return bad("uniform jitter needs 0 <= lo <= hi");
                }
            }
            Jitter::Empirical { samples_ms } => {
                if samples_ms.is_empty() {
                    return Err(Error::EmptySamples);
                }
                if samples_ms.iter().any(|s| !(*s >= 0.0)) {
                    return bad("latency samples must be nonnegative");
                }
            }
            Jitter::LogNormal { median_ms, sigma } => {
                if !(*median_ms > 0.0 && *sigma >= 0.0) {
                    return bad("log-normal jitter needs median > 0 and sigma >= 0");
                }
            }
        }
        for p in &self.partitions {
            if p.a == p.b || !(p.start_ms >= 0.0 && p.start_ms <= p.end_ms) {
                return bad("partitions need two distinct replicas and start <= end");
            }
        }
        Ok(())
    }

    /// One message delay (never negative).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Micros {
        let jitter = match &self.jitter {
            Jitter::Constant => 0.0,
            Jitter::Uniform { lo_ms, hi_ms } => {
                if lo_ms == hi_ms {
                    *lo_ms
                } else {
                    rng.random_range(*lo_ms..*hi_ms)
                }
            }
            Jitter::Empirical { samples_ms } => samples_ms[rng.random_range(0..samples_ms.len())],
            Jitter::LogNormal { median_ms, sigma } => LogNormal::new(median_ms.ln(), *sigma)
                .expect("validated log-normal parameters")
                .sample(rng),
        };
        micros(self.base_delay_ms + jitter)
    }

    /// If `a` and `b` are partitioned at time `t`, the time the partition
    /// (including any overlapping ones) heals.
    pub fn partitioned(&self, a: usize, b: usize, t: Micros) -> Option<Micros> {
        let mut heal = None;
        let mut at = t;
        loop {
            let next = self
                .partitions
                .iter()
                .filter(|p| (p.a, p.b) == (a, b) || (p.a, p.b) == (b, a))
                .filter(|p| micros(p.start_ms) <= at && at < micros(p.end_ms))
                .map(|p| micros(p.end_ms))
                .max();
            match next {
                Some(end) => {
                    heal = Some(end);
                    at = end;
                }
                None => return heal,
            }
        }
    }
}

/// Parses latency samples, one number of milliseconds per line. Blank lines
/// and `#` comments are ignored.
pub fn load_samples(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("line {}: not a number: {line}", i + 1)))?;
        if !(v >= 0.0) {
            return Err(Error::ConfigInvalid(format!("line {}: negative sample {v}", i + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(out)
}
