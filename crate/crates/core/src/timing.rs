//! Transfer-time bounds per message class, and the bandwidth demand a
//! traffic profile places on the link.
//!
//! The default bounds follow the usual IEC 61850-5 transfer-time classes:
//! trip-class GOOSE and SV at 3 ms, time sync at 100 ms, MMS supervision at
//! 500 ms, and no bound for background traffic. Every value is configurable.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::classify::MessageClass;

pub const MIN_FRAME_OCTETS: u32 = 60;
pub const MAX_FRAME_OCTETS: u32 = 1514;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("invalid traffic profile: {0}")]
    InvalidProfile(String),
    #[error("invalid timing table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimingClass {
    pub class: MessageClass,
    /// `None` means the class has no bound.
    pub max_transfer_time: Option<Duration>,
    pub description: &'static str,
}

/// Maximum transfer time per class. `None` marks an unbounded class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingTable {
    pub goose: Option<Duration>,
    pub sv: Option<Duration>,
    pub mms: Option<Duration>,
    pub time_sync: Option<Duration>,
    pub other: Option<Duration>,
}

impl Default for TimingTable {
    fn default() -> Self {
        Self {
            goose: Some(Duration::from_millis(3)),
            sv: Some(Duration::from_millis(3)),
            mms: Some(Duration::from_millis(500)),
            time_sync: Some(Duration::from_millis(100)),
            other: None,
        }
    }
}

impl TimingTable {
    pub fn bound(&self, class: MessageClass) -> Option<Duration> {
        match class {
            MessageClass::Goose => self.goose,
            MessageClass::Sv => self.sv,
            MessageClass::Mms => self.mms,
            MessageClass::TimeSync => self.time_sync,
            MessageClass::Other => self.other,
        }
    }

    pub fn set_bound(&mut self, class: MessageClass, bound: Option<Duration>) {
        let slot = match class {
            MessageClass::Goose => &mut self.goose,
            MessageClass::Sv => &mut self.sv,
            MessageClass::Mms => &mut self.mms,
            MessageClass::TimeSync => &mut self.time_sync,
            MessageClass::Other => &mut self.other,
        };
        *slot = bound;
    }

    /// Every bound is positive, priority classes are bounded, and each
    /// priority bound is strictly tighter than every non-priority bound.
    pub fn validate(&self) -> Result<(), TimingError> {
        for class in MessageClass::ALL {
            if self.bound(class) == Some(Duration::ZERO) {
                return Err(TimingError::InvalidTable(format!(
                    "{class} bound must be positive"
                )));
            }
        }
        let mut loosest_priority = Duration::ZERO;
        for class in MessageClass::ALL.into_iter().filter(|c| c.is_priority()) {
            let bound = self.bound(class).ok_or_else(|| {
                TimingError::InvalidTable(format!("{class} must have a bound"))
            })?;
            loosest_priority = loosest_priority.max(bound);
        }
        for class in MessageClass::ALL.into_iter().filter(|c| !c.is_priority()) {
            if let Some(bound) = self.bound(class) {
                if bound <= loosest_priority {
                    return Err(TimingError::InvalidTable(format!(
                        "{class} bound {bound:?} is not looser than the priority bound {loosest_priority:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn lookup_timing(class: MessageClass, table: &TimingTable) -> TimingClass {
    let description = match class {
        MessageClass::Goose => "horizontal protection and control events",
        MessageClass::Sv => "sampled measurement streams",
        MessageClass::Mms => "vertical client/server supervision",
        MessageClass::TimeSync => "PTP/SNTP time synchronisation",
        MessageClass::Other => "background traffic",
    };
    TimingClass {
        class,
        max_transfer_time: table.bound(class),
        description,
    }
}

/// GOOSE publisher timing: a heartbeat when idle, and after each state
/// change a burst of retransmissions at doubling gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct GooseSchedule {
    pub heartbeat: Duration,
    /// Mean state changes per second (Poisson).
    pub event_rate: f64,
    pub min_gap: Duration,
    pub retransmissions: u32,
}

impl GooseSchedule {
    /// Gaps between the frames following a state change: `min_gap`
    /// doubling per step, each capped at the heartbeat.
    pub fn gaps(&self) -> Vec<Duration> {
        (0..self.retransmissions)
            .map(|i| {
                let factor = 1u32.checked_shl(i).unwrap_or(u32::MAX);
                self.min_gap
                    .checked_mul(factor)
                    .unwrap_or(self.heartbeat)
                    .min(self.heartbeat)
            })
            .collect()
    }
}

impl Default for GooseSchedule {
    fn default() -> Self {
        Self {
            heartbeat: Duration::from_secs(1),
            event_rate: 0.0,
            min_gap: Duration::from_millis(4),
            retransmissions: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrafficPattern {
    /// Constant-rate sampled values.
    Sampled { sample_rate: u32 },
    Goose(GooseSchedule),
    /// Open-loop load with exponential inter-arrival times.
    Poisson { load_bps: u64 },
    Periodic { interval: Duration },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub class: MessageClass,
    pub frame_octets: u32,
    pub pattern: TrafficPattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemandEstimate {
    pub steady_bps: f64,
    pub peak_bps: f64,
    pub burst_bits: f64,
}

impl DemandEstimate {
    pub const ZERO: DemandEstimate = DemandEstimate {
        steady_bps: 0.0,
        peak_bps: 0.0,
        burst_bits: 0.0,
    };

    /// A constant-rate demand with a one-frame burst.
    pub fn constant(rate_bps: f64, frame_bits: f64) -> Self {
        Self {
            steady_bps: rate_bps,
            peak_bps: rate_bps,
            burst_bits: frame_bits,
        }
    }
}

impl TrafficProfile {
    pub fn frame_bits(&self) -> u64 {
        u64::from(self.frame_octets) * 8
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        let invalid = |msg: String| Err(TimingError::InvalidProfile(msg));
        if !(MIN_FRAME_OCTETS..=MAX_FRAME_OCTETS).contains(&self.frame_octets) {
            return invalid(format!(
                "frame size {} outside {MIN_FRAME_OCTETS}..={MAX_FRAME_OCTETS} octets",
                self.frame_octets
            ));
        }
        match (&self.pattern, self.class) {
            (TrafficPattern::Sampled { sample_rate }, MessageClass::Sv) => {
                if *sample_rate == 0 {
                    return invalid("sample rate must be positive".into());
                }
            }
            (TrafficPattern::Goose(g), MessageClass::Goose) => {
                if g.heartbeat.is_zero() || g.min_gap.is_zero() {
                    return invalid("GOOSE heartbeat and minimum gap must be positive".into());
                }
                if g.min_gap > g.heartbeat {
                    return invalid("GOOSE minimum gap exceeds the heartbeat".into());
                }
                if !g.event_rate.is_finite() || g.event_rate < 0.0 {
                    return invalid("GOOSE event rate must be a non-negative number".into());
                }
            }
            (TrafficPattern::Poisson { .. }, c) if !c.is_priority() => {}
            (TrafficPattern::Periodic { interval }, c) if !c.is_priority() => {
                if interval.is_zero() {
                    return invalid("interval must be positive".into());
                }
            }
            (pattern, class) => {
                return invalid(format!("{class} traffic cannot use pattern {pattern:?}"));
            }
        }
        Ok(())
    }
}

/// Bandwidth demand implied by a profile. Priority classes derive it from
/// their publishing schedule; the rest pass their declared rate through.
pub fn estimate_demand(profile: &TrafficProfile) -> Result<DemandEstimate, TimingError> {
    profile.validate()?;
    let bits = profile.frame_bits() as f64;
    Ok(match &profile.pattern {
        TrafficPattern::Sampled { sample_rate } => {
            DemandEstimate::constant(bits * f64::from(*sample_rate), bits)
        }
        TrafficPattern::Goose(g) => DemandEstimate {
            steady_bps: bits / g.heartbeat.as_secs_f64(),
            peak_bps: bits / g.min_gap.as_secs_f64(),
            burst_bits: bits * f64::from(g.retransmissions),
        },
        TrafficPattern::Poisson { load_bps } => DemandEstimate::constant(*load_bps as f64, bits),
        TrafficPattern::Periodic { interval } => {
            DemandEstimate::constant(bits / interval.as_secs_f64(), bits)
        }
    })
}
