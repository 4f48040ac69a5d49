//! Discrete-event model of substations joined by constrained links.
//!
//! Hop model: an IED reaches its switch over an edge link modelled as a pure
//! serialization delay at the switch's edge capacity. Switches are
//! store-and-forward. Only the egress ports onto inter-switch links queue.
//! A frame crossing one link therefore takes
//! `edge_src + link serialization + propagation + edge_dst`, plus the
//! control-channel delay if it was the frame that triggered a PacketIn.

mod engine;
mod port;
mod report;
mod traffic;

use std::time::Duration;

use thiserror::Error;

use crate::broker::{Bps, BrokerConfig};
use crate::classify::{FlowKey, MessageClass};
use crate::codec::MacAddress;
use crate::time::Timestamp;
use crate::timing::{TimingTable, TrafficProfile};

pub use engine::{run, SimOutput, ShapedTx, Trace};
pub use port::{Discipline, Next, PortModel, QueueCounters, TokenBucket};
pub use report::{
    events_csv, verify_timing, ClassReport, ControlCounters, DelayStats, EventRecord,
    LedgerReport, LinkReport, Outcome, SimReport, TimingViolation, SCHEMA_VERSION,
};

pub const DEFAULT_BUFFER_OCTETS: u64 = 256 * 1024;
pub const DEFAULT_BUCKET_OCTETS: u64 = 16 * 1024;
pub const DEFAULT_CONTROL_DELAY: Duration = Duration::from_millis(1);
pub const DEFAULT_TICK: Duration = Duration::from_millis(100);
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(5);
/// Edge links run at this multiple of the fastest attached link.
pub const EDGE_SPEEDUP: u64 = 10;
const FALLBACK_EDGE_CAPACITY: Bps = 1_000_000_000;
const MAX_ETH_FRAME: u64 = 1514;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    pub a: String,
    pub b: String,
    pub capacity: Bps,
    pub propagation: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchSpec {
    pub name: String,
    /// Per-queue buffer on each link egress port.
    pub buffer_octets: u64,
    /// Token-bucket depth of the shared queue.
    pub bucket_octets: u64,
    pub edge_capacity: Option<Bps>,
}

impl SwitchSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            buffer_octets: DEFAULT_BUFFER_OCTETS,
            bucket_octets: DEFAULT_BUCKET_OCTETS,
            edge_capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub name: String,
    /// Receiving IED.
    pub to: String,
    pub appid: Option<u16>,
    /// First emission time; random within one period when unset.
    pub start: Option<Duration>,
    pub profile: TrafficProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IedSpec {
    pub name: String,
    pub switch: String,
    pub mac: Option<MacAddress>,
    pub traffic: Vec<TrafficSpec>,
}

/// Broker settings shared by every managed link port. Unset rates default
/// to fractions of the link capacity: 20% shared maximum, 5% shared floor,
/// 1% best-effort floor.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokerSettings {
    pub enabled: bool,
    pub shared_cap_max: Option<Bps>,
    pub shared_cap_floor: Option<Bps>,
    pub best_effort_floor: Option<Bps>,
    pub idle_timeout: Duration,
}

impl Default for BrokerSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            shared_cap_max: None,
            shared_cap_floor: None,
            best_effort_floor: None,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

impl BrokerSettings {
    pub fn config_for(&self, capacity: Bps) -> BrokerConfig {
        BrokerConfig {
            link_capacity: capacity,
            shared_cap_max: self.shared_cap_max.unwrap_or(capacity / 5),
            shared_cap_floor: self.shared_cap_floor.unwrap_or(capacity / 20),
            best_effort_floor: self.best_effort_floor.unwrap_or(capacity / 100),
            idle_timeout: self.idle_timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: Duration,
    pub seed: u64,
    pub control_delay: Duration,
    /// Period of flow-statistics polling and soft-state expiry.
    pub tick: Duration,
    pub broker: BrokerSettings,
    pub timing: TimingTable,
    pub links: Vec<LinkSpec>,
    pub switches: Vec<SwitchSpec>,
    pub ieds: Vec<IedSpec>,
}

impl Scenario {
    pub fn switch_index(&self, name: &str) -> Option<usize> {
        self.switches.iter().position(|s| s.name == name)
    }

    pub fn ied_index(&self, name: &str) -> Option<usize> {
        self.ieds.iter().position(|i| i.name == name)
    }

    /// Edge capacity of a switch: explicit, else ten times its fastest
    /// link.
    pub fn edge_capacity(&self, switch: usize) -> Bps {
        let spec = &self.switches[switch];
        spec.edge_capacity.unwrap_or_else(|| {
            self.links
                .iter()
                .filter(|l| l.a == spec.name || l.b == spec.name)
                .map(|l| l.capacity.saturating_mul(EDGE_SPEEDUP))
                .max()
                .unwrap_or(FALLBACK_EDGE_CAPACITY)
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidScenario(m));
        if self.duration.is_zero() {
            return invalid("duration must be positive".into());
        }
        if self.broker.enabled && self.tick.is_zero() {
            return invalid("tick must be positive".into());
        }
        self.timing
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        let mut names = std::collections::BTreeSet::new();
        for s in &self.switches {
            if !names.insert(("switch", s.name.as_str())) {
                return invalid(format!("switch `{}` declared twice", s.name));
            }
            if s.buffer_octets < MAX_ETH_FRAME {
                return invalid(format!(
                    "switch `{}`: buffer must hold one {MAX_ETH_FRAME}-octet frame",
                    s.name
                ));
            }
            if s.bucket_octets < MAX_ETH_FRAME {
                return invalid(format!(
                    "switch `{}`: bucket must hold one {MAX_ETH_FRAME}-octet frame",
                    s.name
                ));
            }
            if s.edge_capacity == Some(0) {
                return invalid(format!("switch `{}`: edge capacity must be positive", s.name));
            }
        }
        for l in &self.links {
            if !names.insert(("link", l.name.as_str())) {
                return invalid(format!("link `{}` declared twice", l.name));
            }
            for end in [&l.a, &l.b] {
                if self.switch_index(end).is_none() {
                    return invalid(format!("link `{}`: unknown switch `{end}`", l.name));
                }
            }
            if l.a == l.b {
                return invalid(format!("link `{}` connects a switch to itself", l.name));
            }
            if l.capacity == 0 {
                return invalid(format!("link `{}`: capacity must be positive", l.name));
            }
            if self.broker.enabled {
                self.broker
                    .config_for(l.capacity)
                    .validate()
                    .map_err(|e| SimError::InvalidScenario(format!("link `{}`: {e}", l.name)))?;
            }
        }
        let mut macs = std::collections::BTreeSet::new();
        for ied in &self.ieds {
            if !names.insert(("ied", ied.name.as_str())) {
                return invalid(format!("IED `{}` declared twice", ied.name));
            }
            if self.switch_index(&ied.switch).is_none() {
                return invalid(format!(
                    "IED `{}`: unknown switch `{}`",
                    ied.name, ied.switch
                ));
            }
            if let Some(mac) = ied.mac {
                if mac.is_multicast() {
                    return invalid(format!("IED `{}`: MAC {mac} is multicast", ied.name));
                }
                if !macs.insert(mac) {
                    return invalid(format!("IED `{}`: MAC {mac} already in use", ied.name));
                }
            }
            for t in &ied.traffic {
                if !names.insert(("traffic", t.name.as_str())) {
                    return invalid(format!("traffic `{}` declared twice", t.name));
                }
                if self.ied_index(&t.to).is_none() {
                    return invalid(format!("traffic `{}`: unknown IED `{}`", t.name, t.to));
                }
                if t.to == ied.name {
                    return invalid(format!("traffic `{}` is addressed to its sender", t.name));
                }
                t.profile
                    .validate()
                    .map_err(|e| SimError::InvalidScenario(format!("traffic `{}`: {e}", t.name)))?;
                if t.appid.is_some() && !t.profile.class.is_priority() {
                    return invalid(format!(
                        "traffic `{}`: only GOOSE and SV carry an APPID",
                        t.name
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A frame in flight. Wire bytes are only materialised when the frame is
/// shown to the controller.
#[derive(Debug, Clone)]
pub struct Frame {
    pub source: usize,
    pub class: MessageClass,
    pub key: FlowKey,
    pub octets: u32,
    pub generated_at: Timestamp,
    /// (stNum, sqNum) for GOOSE, (smpCnt, 0) for SV.
    pub counters: (u32, u32),
    pub dst_ied: usize,
    /// Queue used on the last link egress port.
    pub queue: Option<u8>,
    /// Arrival at the current egress port and the longest the frame may
    /// wait there under non-preemptive priority.
    pub enqueued_at: Timestamp,
    pub wait_bound_ns: u64,
}
