//! Time and rate units used throughout the simulator.
//!
//! Simulation time is an integer nanosecond count. All model delays
//! (propagation, serialization, snapshot periods, probe intervals) are
//! expressed in this unit so that event times never accumulate
//! floating-point error.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// Simulation time in integer nanoseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

pub const NS_PER_US: u64 = 1_000;
pub const NS_PER_MS: u64 = 1_000_000;
pub const NS_PER_SEC: u64 = 1_000_000_000;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }
    pub fn from_us(us: u64) -> Self {
        SimTime(us * NS_PER_US)
    }
    pub fn from_ms(ms: u64) -> Self {
        SimTime(ms * NS_PER_MS)
    }
    pub fn from_secs(s: u64) -> Self {
        SimTime(s * NS_PER_SEC)
    }

    pub fn as_ns(self) -> u64 {
        self.0
    }
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NS_PER_SEC as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Link or NIC rate in bits per second.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Rate(pub u64);

impl Rate {
    pub const ZERO: Rate = Rate(0);

    pub fn from_gbps(gbps: u64) -> Self {
        Rate(gbps * 1_000_000_000)
    }
    pub fn bps(self) -> u64 {
        self.0
    }
    pub fn as_gbps_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Time to serialize `bytes` at this rate, rounded toward zero.
    pub fn serialize_time(self, bytes: u64) -> SimTime {
        assert!(self.0 > 0, "serialization over a zero-rate link");
        let bits = (bytes as u128) * 8 * (NS_PER_SEC as u128);
        SimTime((bits / self.0 as u128) as u64)
    }

    /// Bytes transferable in `dur` at this rate, rounded toward zero.
    pub fn bytes_in(self, dur: SimTime) -> u64 {
        ((self.0 as u128) * (dur.0 as u128) / 8 / (NS_PER_SEC as u128)) as u64
    }

    pub fn scale(self, num: u64, den: u64) -> Rate {
        Rate(((self.0 as u128) * (num as u128) / (den as u128)) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_rounds_toward_zero() {
        // 1500 B at 100 Gbps: 1500*8/100e9 s = 120 ns exactly.
        assert_eq!(Rate::from_gbps(100).serialize_time(1500), SimTime(120));
        // 4096 B at 200 Gbps: 163.84 ns -> 163 ns.
        assert_eq!(Rate::from_gbps(200).serialize_time(4096), SimTime(163));
    }

    #[test]
    fn bytes_in_inverts_serialize() {
        let r = Rate::from_gbps(400);
        let t = r.serialize_time(1_000_000);
        let b = r.bytes_in(t);
        assert!(b <= 1_000_000 && b >= 999_000);
    }
}
