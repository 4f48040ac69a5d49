//! Bandwidth broker for a single constrained link.
//!
//! The ledger splits link capacity three ways: per-flow reservations for
//! priority traffic (GOOSE, SV), a shared cap for MMS and time sync, and a
//! best-effort floor. A priority admission that does not fit takes exactly
//! the missing bandwidth from the shared cap, never below its floor; when
//! reservations expire the shared cap grows back toward its maximum.
//!
//! Ledger safety, checked by [`Broker::check_invariants`]:
//!
//! * `reserved_total` is the sum of per-flow reservations;
//! * `shared_cap_floor <= shared_cap_current <= shared_cap_max`;
//! * `reserved_total + shared_cap_current + best_effort_floor <= link_capacity`.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::classify::{FlowKey, MessageClass};
use crate::time::Timestamp;
use crate::timing::DemandEstimate;

/// Bits per second.
pub type Bps = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PortNo(pub u32);

impl fmt::Display for PortNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "port{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("flow {0} is already admitted with a different class")]
    DuplicateFlow(FlowKey),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowKey),
    #[error("invalid broker configuration: {0}")]
    InvalidConfig(String),
    #[error("ledger invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BrokerConfig {
    pub link_capacity: Bps,
    pub shared_cap_max: Bps,
    pub shared_cap_floor: Bps,
    pub best_effort_floor: Bps,
    #[serde(serialize_with = "serialize_secs")]
    pub idle_timeout: Duration,
}

fn serialize_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl BrokerConfig {
    pub fn validate(&self) -> Result<(), BrokerError> {
        let fail = |m: &str| Err(BrokerError::InvalidConfig(m.to_string()));
        if self.link_capacity == 0
            || self.shared_cap_max == 0
            || self.shared_cap_floor == 0
            || self.best_effort_floor == 0
            || self.idle_timeout.is_zero()
        {
            return fail("all rates and the idle timeout must be positive");
        }
        if self.shared_cap_floor > self.shared_cap_max {
            return fail("shared cap floor exceeds shared cap maximum");
        }
        if self.shared_cap_max + self.best_effort_floor >= self.link_capacity {
            return fail("shared cap maximum plus best-effort floor must be below link capacity");
        }
        Ok(())
    }

    /// Total bandwidth available to priority reservations.
    pub fn reservable(&self) -> Bps {
        self.link_capacity - self.shared_cap_floor - self.best_effort_floor
    }

    /// Shared cap the ledger settles at for a given reservation total.
    fn restored_cap(&self, reserved_total: Bps) -> Bps {
        self.shared_cap_max.min(
            self.link_capacity
                .saturating_sub(reserved_total)
                .saturating_sub(self.best_effort_floor),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    InsufficientCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "decision")]
pub enum Decision {
    AcceptedReserved { reserved: Bps, plan_changed: bool },
    AcceptedShared,
    AcceptedBestEffort,
    Rejected { reason: RejectReason },
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        !matches!(self, Decision::Rejected { .. })
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::AcceptedReserved { reserved, .. } => {
                write!(f, "accepted-reserved({reserved} b/s)")
            }
            Decision::AcceptedShared => f.write_str("accepted-shared"),
            Decision::AcceptedBestEffort => f.write_str("accepted-best-effort"),
            Decision::Rejected { reason } => write!(f, "rejected({reason:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub class: MessageClass,
    pub demand: DemandEstimate,
    /// Zero for non-priority classes.
    pub reserved: Bps,
    pub admitted_at: Timestamp,
    pub last_seen: Timestamp,
    /// Decision returned at admission; replayed on re-admission.
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AllocationState {
    pub flows: BTreeMap<FlowKey, FlowRecord>,
    pub reserved_total: Bps,
    pub shared_cap_current: Bps,
}

impl AllocationState {
    /// Exportable view of the ledger.
    pub fn snapshot(&self) -> AllocationSnapshot {
        AllocationSnapshot {
            reserved_total: self.reserved_total,
            shared_cap_current: self.shared_cap_current,
            flows: self
                .flows
                .values()
                .map(|r| FlowSnapshot {
                    key: r.key.to_string(),
                    class: r.class,
                    reserved: r.reserved,
                    admitted_at_ns: r.admitted_at.as_nanos(),
                    last_seen_ns: r.last_seen.as_nanos(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowSnapshot {
    pub key: String,
    pub class: MessageClass,
    pub reserved: Bps,
    pub admitted_at_ns: u64,
    pub last_seen_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AllocationSnapshot {
    pub reserved_total: Bps,
    pub shared_cap_current: Bps,
    pub flows: Vec<FlowSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueueSpec {
    pub id: u8,
    pub classes: Vec<MessageClass>,
    pub min_rate: Bps,
    pub max_rate: Bps,
}

/// Per-port queue configuration: a port rate split across three strict
/// priority queues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueuePlan {
    pub port: PortNo,
    pub max_rate: Bps,
    /// Ordered q2, q1, q0.
    pub queues: Vec<QueueSpec>,
}

impl QueuePlan {
    pub fn queue(&self, id: u8) -> Option<&QueueSpec> {
        self.queues.iter().find(|q| q.id == id)
    }

    pub fn check(&self) -> Result<(), String> {
        let ids: Vec<u8> = self.queues.iter().map(|q| q.id).collect();
        if ids != [2, 1, 0] {
            return Err(format!("expected queues [2, 1, 0], found {ids:?}"));
        }
        for q in &self.queues {
            let expected: Vec<MessageClass> = MessageClass::ALL
                .into_iter()
                .filter(|c| c.queue_id() == q.id)
                .collect();
            if q.classes != expected {
                return Err(format!("queue {} carries {:?}", q.id, q.classes));
            }
            if q.min_rate > q.max_rate || q.max_rate > self.max_rate {
                return Err(format!("queue {} rates out of order", q.id));
            }
        }
        let min_sum: Bps = self.queues.iter().map(|q| q.min_rate).sum();
        if min_sum > self.max_rate {
            return Err(format!(
                "minimum rates {min_sum} exceed port rate {}",
                self.max_rate
            ));
        }
        Ok(())
    }
}

/// Decides the per-flow reservation for a priority flow. This is the hook
/// where an adaptive allocation policy plugs in.
pub trait AllocationPolicy: fmt::Debug {
    fn reservation(&self, class: MessageClass, demand: &DemandEstimate) -> Bps;
}

/// GOOSE reserves its retransmission peak, SV its constant rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct StaticPolicy;

impl AllocationPolicy for StaticPolicy {
    fn reservation(&self, class: MessageClass, demand: &DemandEstimate) -> Bps {
        let rate = match class {
            MessageClass::Goose => demand.peak_bps,
            MessageClass::Sv => demand.steady_bps,
            _ => return 0,
        };
        (rate.ceil() as Bps).max(1)
    }
}

#[derive(Debug)]
pub struct Broker<P: AllocationPolicy = StaticPolicy> {
    config: BrokerConfig,
    state: AllocationState,
    policy: P,
}

impl Broker<StaticPolicy> {
    pub fn new(config: BrokerConfig) -> Result<Self, BrokerError> {
        Self::with_policy(config, StaticPolicy)
    }
}

impl<P: AllocationPolicy> Broker<P> {
    pub fn with_policy(config: BrokerConfig, policy: P) -> Result<Self, BrokerError> {
        config.validate()?;
        Ok(Self {
            config,
            state: AllocationState {
                flows: BTreeMap::new(),
                reserved_total: 0,
                shared_cap_current: config.shared_cap_max,
            },
            policy,
        })
    }

    /// Resumes from an existing ledger, which must satisfy the safety
    /// invariants.
    pub fn from_state(
        config: BrokerConfig,
        state: AllocationState,
        policy: P,
    ) -> Result<Self, BrokerError> {
        config.validate()?;
        let broker = Self {
            config,
            state,
            policy,
        };
        broker.check_invariants()?;
        Ok(broker)
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn state(&self) -> &AllocationState {
        &self.state
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn contains(&self, key: &FlowKey) -> bool {
        self.state.flows.contains_key(key)
    }

    /// Admits the first frame of a flow. Re-admitting a known key refreshes
    /// it and returns the original decision. A rejection leaves the ledger
    /// untouched.
    pub fn admit(
        &mut self,
        key: FlowKey,
        class: MessageClass,
        demand: DemandEstimate,
        now: Timestamp,
    ) -> Result<Decision, BrokerError> {
        if let Some(record) = self.state.flows.get_mut(&key) {
            if record.class != class {
                return Err(BrokerError::DuplicateFlow(key));
            }
            record.last_seen = record.last_seen.max(now);
            return Ok(record.decision);
        }

        let (decision, reserved) = if class.is_priority() {
            let rate = self.policy.reservation(class, &demand);
            match self.reserve(rate) {
                Some(plan_changed) => (
                    Decision::AcceptedReserved {
                        reserved: rate,
                        plan_changed,
                    },
                    rate,
                ),
                None => {
                    return Ok(Decision::Rejected {
                        reason: RejectReason::InsufficientCapacity,
                    })
                }
            }
        } else if class.is_shared() {
            (Decision::AcceptedShared, 0)
        } else {
            (Decision::AcceptedBestEffort, 0)
        };

        self.state.flows.insert(
            key,
            FlowRecord {
                key,
                class,
                demand,
                reserved,
                admitted_at: now,
                last_seen: now,
                decision,
            },
        );
        Ok(decision)
    }

    /// Books `rate` against the link, shrinking the shared cap by exactly
    /// the deficit if needed. Returns whether the queue plan changed, or
    /// `None` if even the floor cannot make room.
    fn reserve(&mut self, rate: Bps) -> Option<bool> {
        let c = &self.config;
        let s = &mut self.state;
        let demand = s.reserved_total + rate + s.shared_cap_current + c.best_effort_floor;
        let deficit = demand.saturating_sub(c.link_capacity);
        if deficit > s.shared_cap_current - c.shared_cap_floor {
            return None;
        }
        s.shared_cap_current -= deficit;
        s.reserved_total += rate;
        Some(rate > 0 || deficit > 0)
    }

    pub fn touch(&mut self, key: &FlowKey, now: Timestamp) -> Result<(), BrokerError> {
        let record = self
            .state
            .flows
            .get_mut(key)
            .ok_or(BrokerError::UnknownFlow(*key))?;
        record.last_seen = record.last_seen.max(now);
        Ok(())
    }

    /// Removes every flow idle for longer than the idle timeout, returns
    /// their reservations, and lets the shared cap grow back.
    pub fn expire(&mut self, now: Timestamp) -> Vec<FlowKey> {
        let timeout = self.config.idle_timeout;
        let removed: Vec<FlowKey> = self
            .state
            .flows
            .values()
            .filter(|r| now.saturating_since(r.last_seen) > timeout)
            .map(|r| r.key)
            .collect();
        if removed.is_empty() {
            return removed;
        }
        for key in &removed {
            if let Some(record) = self.state.flows.remove(key) {
                self.state.reserved_total -= record.reserved;
            }
        }
        let restored = self.config.restored_cap(self.state.reserved_total);
        self.state.shared_cap_current = self.state.shared_cap_current.max(restored);
        removed
    }

    pub fn current_plan(&self, port: PortNo) -> QueuePlan {
        let c = &self.config;
        let classes = |id: u8| -> Vec<MessageClass> {
            MessageClass::ALL
                .into_iter()
                .filter(|cl| cl.queue_id() == id)
                .collect()
        };
        QueuePlan {
            port,
            max_rate: c.link_capacity,
            queues: vec![
                QueueSpec {
                    id: 2,
                    classes: classes(2),
                    min_rate: self.state.reserved_total,
                    max_rate: c.link_capacity,
                },
                QueueSpec {
                    id: 1,
                    classes: classes(1),
                    min_rate: 0,
                    max_rate: self.state.shared_cap_current,
                },
                QueueSpec {
                    id: 0,
                    classes: classes(0),
                    min_rate: c.best_effort_floor,
                    max_rate: c.link_capacity,
                },
            ],
        }
    }

    pub fn check_invariants(&self) -> Result<(), BrokerError> {
        let c = &self.config;
        let s = &self.state;
        let fail = |m: String| Err(BrokerError::Invariant(m));
        let sum: Bps = s.flows.values().map(|r| r.reserved).sum();
        if sum != s.reserved_total {
            return fail(format!(
                "reserved_total {} but flows sum to {sum}",
                s.reserved_total
            ));
        }
        if s.shared_cap_current < c.shared_cap_floor || s.shared_cap_current > c.shared_cap_max {
            return fail(format!(
                "shared cap {} outside [{}, {}]",
                s.shared_cap_current, c.shared_cap_floor, c.shared_cap_max
            ));
        }
        let committed = s.reserved_total + s.shared_cap_current + c.best_effort_floor;
        if committed > c.link_capacity {
            return fail(format!(
                "committed {committed} exceeds capacity {}",
                c.link_capacity
            ));
        }
        for r in s.flows.values() {
            if (r.reserved > 0) != r.class.is_priority() {
                return fail(format!("flow {} has reservation {}", r.key, r.reserved));
            }
            if r.last_seen < r.admitted_at {
                return fail(format!("flow {} seen before admission", r.key));
            }
        }
        Ok(())
    }
}

/// Whether a set of priority reservations fits the link with both floors
/// intact.
pub fn feasible(reservations: &[Bps], config: &BrokerConfig) -> bool {
    let total: u128 = reservations.iter().map(|r| u128::from(*r)).sum();
    total
        <= u128::from(config.link_capacity)
            - u128::from(config.shared_cap_floor)
            - u128::from(config.best_effort_floor)
}
