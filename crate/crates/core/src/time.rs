//! Simulation clock values with nanosecond resolution.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Nanoseconds since the start of a run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_nanos(ns: u64) -> Self {
        Self(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        Self(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        Self(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        Self(s * 1_000_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Elapsed time since `earlier`, zero if `earlier` is later.
    pub fn saturating_since(self, earlier: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.as_nanos() as u64)
    }
}

impl Sub<Duration> for Timestamp {
    type Output = Timestamp;

    fn sub(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_sub(rhs.as_nanos() as u64))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}s", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

/// Transmission time of `bits` at `rate_bps`, rounded up to whole
/// nanoseconds.
pub fn serialization_ns(bits: u64, rate_bps: u64) -> u64 {
    assert!(rate_bps > 0, "serialization at zero rate");
    let num = u128::from(bits) * 1_000_000_000;
    num.div_ceil(u128::from(rate_bps)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_rounds_up() {
        assert_eq!(serialization_ns(1200, 100_000_000), 12_000);
        assert_eq!(serialization_ns(1, 3_000_000_000), 1);
        assert_eq!(serialization_ns(0, 1), 0);
    }

    #[test]
    fn arithmetic() {
        let t = Timestamp::from_millis(5) + Duration::from_micros(10);
        assert_eq!(t.as_nanos(), 5_010_000);
        assert_eq!(
            Timestamp::from_secs(1).saturating_since(t),
            Duration::from_nanos(994_990_000)
        );
        assert_eq!(t.saturating_since(Timestamp::from_secs(1)), Duration::ZERO);
        assert_eq!(Timestamp::from_micros(1500).to_string(), "0.001500000s");
    }
}
