//! Controller side of the control loop.
//!
//! The first frame of every unknown flow reaches the controller as a
//! [`PacketIn`]. The controller classifies it, asks the broker of the egress
//! port for a decision, and answers with one [`FlowMod`] plus a [`QueueSet`]
//! whenever the port's queue plan moved. Later frames match in the switch.
//! Switches report per-entry activity through [`FlowStats`]; on every tick
//! the controller expires idle flows with the same rule the switch applies
//! to its own entries, so both sides drop a flow at the same instant.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::Duration;

use serde::Serialize;

use crate::broker::{Broker, BrokerConfig, BrokerError, Decision, PortNo, QueuePlan};
use crate::classify::{classify_frame, FlowKey, MessageClass};
use crate::codec::MacAddress;
use crate::time::Timestamp;
use crate::timing::DemandEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SwitchId(pub u32);

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sw{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketIn {
    pub switch_id: SwitchId,
    pub in_port: PortNo,
    pub frame: Vec<u8>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Output(PortNo),
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowMod {
    pub switch_id: SwitchId,
    pub matching: FlowKey,
    pub queue_id: u8,
    pub idle_timeout: Duration,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueSet {
    pub switch_id: SwitchId,
    pub port: PortNo,
    pub plan: QueuePlan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    FlowMod(FlowMod),
    QueueSet(QueueSet),
}

/// Activity report for one flow entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowStats {
    pub switch_id: SwitchId,
    pub key: FlowKey,
    pub last_hit: Timestamp,
}

/// What the controller needs from a switch.
pub trait SwitchInterface {
    fn apply(&mut self, cmd: &Command);
}

/// Static forwarding: exact (switch, destination MAC) entries with an
/// optional per-switch default port.
#[derive(Debug, Clone, Default)]
pub struct ForwardingTable {
    entries: BTreeMap<(SwitchId, MacAddress), PortNo>,
    defaults: BTreeMap<SwitchId, PortNo>,
}

impl ForwardingTable {
    pub fn insert(&mut self, switch: SwitchId, dst: MacAddress, port: PortNo) -> Option<PortNo> {
        self.entries.insert((switch, dst), port)
    }

    pub fn set_default(&mut self, switch: SwitchId, port: PortNo) {
        self.defaults.insert(switch, port);
    }

    pub fn lookup(&self, switch: SwitchId, dst: MacAddress) -> Option<PortNo> {
        self.entries
            .get(&(switch, dst))
            .or_else(|| self.defaults.get(&switch))
            .copied()
    }
}

/// Declared demand per flow, with per-class fallbacks for flows nobody
/// declared.
#[derive(Debug, Clone)]
pub struct DemandTable {
    by_key: HashMap<FlowKey, DemandEstimate>,
    fallback: BTreeMap<MessageClass, DemandEstimate>,
}

impl Default for DemandTable {
    fn default() -> Self {
        let mut fallback = BTreeMap::new();
        // 150-octet GOOSE retransmitting at a 4 ms minimum gap.
        fallback.insert(
            MessageClass::Goose,
            DemandEstimate {
                steady_bps: 1200.0,
                peak_bps: 300_000.0,
                burst_bits: 4800.0,
            },
        );
        // 126-octet SV at 4000 samples/s.
        fallback.insert(MessageClass::Sv, DemandEstimate::constant(4_032_000.0, 1008.0));
        Self {
            by_key: HashMap::new(),
            fallback,
        }
    }
}

impl DemandTable {
    pub fn declare(&mut self, key: FlowKey, demand: DemandEstimate) {
        self.by_key.insert(key, demand);
    }

    pub fn set_fallback(&mut self, class: MessageClass, demand: DemandEstimate) {
        self.fallback.insert(class, demand);
    }

    pub fn lookup(&self, key: &FlowKey, class: MessageClass) -> DemandEstimate {
        self.by_key
            .get(key)
            .or_else(|| self.fallback.get(&class))
            .copied()
            .unwrap_or(DemandEstimate::ZERO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome")]
pub enum AdmissionOutcome {
    /// Egress is a managed link port; the broker decided.
    Broker { decision: Decision },
    /// Egress is not a managed port; installed without a reservation.
    Unmanaged,
    /// No forwarding entry; negatively cached.
    NoRoute,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissionEvent {
    pub at_ns: u64,
    pub switch: SwitchId,
    pub flow: String,
    pub class: MessageClass,
    #[serde(flatten)]
    pub outcome: AdmissionOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManagedPort {
    pub switch_id: SwitchId,
    pub port: PortNo,
    pub config: BrokerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Installed {
    switch_id: SwitchId,
    managed: Option<(SwitchId, PortNo)>,
    rejected: bool,
    last_seen: Timestamp,
}

#[derive(Debug)]
pub struct Controller {
    brokers: BTreeMap<(SwitchId, PortNo), Broker>,
    forwarding: ForwardingTable,
    demands: DemandTable,
    idle_timeout: Duration,
    installed: BTreeMap<FlowKey, Installed>,
    log: Vec<AdmissionEvent>,
    malformed: u64,
}

impl Controller {
    pub fn new(
        managed: &[ManagedPort],
        forwarding: ForwardingTable,
        demands: DemandTable,
        idle_timeout: Duration,
    ) -> Result<Self, BrokerError> {
        let mut brokers = BTreeMap::new();
        for m in managed {
            brokers.insert((m.switch_id, m.port), Broker::new(m.config)?);
        }
        Ok(Self {
            brokers,
            forwarding,
            demands,
            idle_timeout,
            installed: BTreeMap::new(),
            log: Vec::new(),
            malformed: 0,
        })
    }

    /// Initial queue configuration for every managed port.
    pub fn start(&self) -> Vec<Command> {
        self.brokers
            .iter()
            .map(|((switch_id, port), broker)| {
                Command::QueueSet(QueueSet {
                    switch_id: *switch_id,
                    port: *port,
                    plan: broker.current_plan(*port),
                })
            })
            .collect()
    }

    pub fn on_packet_in(&mut self, ev: &PacketIn) -> Vec<Command> {
        let Ok(c) = classify_frame(&ev.frame) else {
            self.malformed += 1;
            return Vec::new();
        };
        if let Some(inst) = self.installed.get_mut(&c.key) {
            inst.last_seen = inst.last_seen.max(ev.at);
            if let (Some(port), false) = (inst.managed, inst.rejected) {
                if let Some(broker) = self.brokers.get_mut(&port) {
                    let _ = broker.touch(&c.key, ev.at);
                }
            }
            return Vec::new();
        }

        let mut commands = Vec::new();
        let egress = self.forwarding.lookup(ev.switch_id, c.key.dst);
        let managed = egress
            .map(|p| (ev.switch_id, p))
            .filter(|m| self.brokers.contains_key(m));
        let outcome = match (egress, managed) {
            (None, _) => AdmissionOutcome::NoRoute,
            (Some(_), None) => AdmissionOutcome::Unmanaged,
            (Some(port), Some(m)) => {
                let broker = self.brokers.get_mut(&m).expect("managed port has a broker");
                let before = broker.current_plan(port);
                let demand = self.demands.lookup(&c.key, c.class);
                let decision = match broker.admit(c.key, c.class, demand, ev.at) {
                    Ok(d) => d,
                    Err(_) => {
                        self.malformed += 1;
                        return Vec::new();
                    }
                };
                let after = broker.current_plan(port);
                if after != before {
                    commands.push(Command::QueueSet(QueueSet {
                        switch_id: m.0,
                        port,
                        plan: after,
                    }));
                }
                AdmissionOutcome::Broker { decision }
            }
        };
        let action = match (outcome, egress) {
            (AdmissionOutcome::Broker { decision }, Some(port)) if decision.is_accepted() => {
                Action::Output(port)
            }
            (AdmissionOutcome::Unmanaged, Some(port)) => Action::Output(port),
            _ => Action::Drop,
        };
        commands.insert(
            0,
            Command::FlowMod(FlowMod {
                switch_id: ev.switch_id,
                matching: c.key,
                queue_id: c.class.queue_id(),
                idle_timeout: self.idle_timeout,
                action,
            }),
        );
        self.installed.insert(
            c.key,
            Installed {
                switch_id: ev.switch_id,
                managed,
                rejected: action == Action::Drop,
                last_seen: ev.at,
            },
        );
        self.log.push(AdmissionEvent {
            at_ns: ev.at.as_nanos(),
            switch: ev.switch_id,
            flow: c.key.to_string(),
            class: c.class,
            outcome,
        });
        commands
    }

    /// Folds switch-side activity into the ledgers.
    pub fn on_flow_stats(&mut self, stats: &[FlowStats]) {
        for s in stats {
            let Some(inst) = self.installed.get_mut(&s.key) else {
                continue;
            };
            if inst.switch_id != s.switch_id {
                continue;
            }
            inst.last_seen = inst.last_seen.max(s.last_hit);
            if let (Some(port), false) = (inst.managed, inst.rejected) {
                if let Some(broker) = self.brokers.get_mut(&port) {
                    let _ = broker.touch(&s.key, s.last_hit);
                }
            }
        }
    }

    /// Expires idle flows and republishes any queue plan that changed.
    pub fn tick(&mut self, now: Timestamp) -> Vec<Command> {
        let mut commands = Vec::new();
        for ((switch_id, port), broker) in &mut self.brokers {
            let before = broker.current_plan(*port);
            broker.expire(now);
            let after = broker.current_plan(*port);
            if after != before {
                commands.push(Command::QueueSet(QueueSet {
                    switch_id: *switch_id,
                    port: *port,
                    plan: after,
                }));
            }
        }
        let timeout = self.idle_timeout;
        self.installed
            .retain(|_, inst| now.saturating_since(inst.last_seen) <= timeout);
        commands
    }

    pub fn broker(&self, switch_id: SwitchId, port: PortNo) -> Option<&Broker> {
        self.brokers.get(&(switch_id, port))
    }

    pub fn brokers(&self) -> impl Iterator<Item = (&(SwitchId, PortNo), &Broker)> {
        self.brokers.iter()
    }

    pub fn is_installed(&self, key: &FlowKey) -> bool {
        self.installed.contains_key(key)
    }

    /// Keys the controller believes are installed on `switch_id`.
    pub fn installed_on(&self, switch_id: SwitchId) -> Vec<FlowKey> {
        self.installed
            .iter()
            .filter(|(_, i)| i.switch_id == switch_id)
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn admission_log(&self) -> &[AdmissionEvent] {
        &self.log
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowEntry {
    pub queue_id: u8,
    pub action: Action,
    pub idle_timeout: Duration,
    pub last_hit: Timestamp,
}

/// Switch-side state: the flow table and per-port queue plans. Used by the
/// simulator's switches and as a mock switch in tests.
#[derive(Debug, Clone)]
pub struct FlowTable {
    pub switch_id: SwitchId,
    entries: BTreeMap<FlowKey, FlowEntry>,
    plans: BTreeMap<PortNo, QueuePlan>,
    flow_mods: u64,
}

impl FlowTable {
    pub fn new(switch_id: SwitchId) -> Self {
        Self {
            switch_id,
            entries: BTreeMap::new(),
            plans: BTreeMap::new(),
            flow_mods: 0,
        }
    }

    /// Matches a frame's key, refreshing the entry's idle timer.
    pub fn hit(&mut self, key: &FlowKey, now: Timestamp) -> Option<FlowEntry> {
        let entry = self.entries.get_mut(key)?;
        entry.last_hit = entry.last_hit.max(now);
        Some(*entry)
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowEntry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> Vec<FlowKey> {
        self.entries.keys().copied().collect()
    }

    pub fn plan(&self, port: PortNo) -> Option<&QueuePlan> {
        self.plans.get(&port)
    }

    pub fn flow_mods_applied(&self) -> u64 {
        self.flow_mods
    }

    pub fn stats(&self) -> Vec<FlowStats> {
        self.entries
            .iter()
            .map(|(key, e)| FlowStats {
                switch_id: self.switch_id,
                key: *key,
                last_hit: e.last_hit,
            })
            .collect()
    }

    /// Removes entries idle longer than their timeout.
    pub fn expire(&mut self, now: Timestamp) -> Vec<FlowKey> {
        let removed: Vec<FlowKey> = self
            .entries
            .iter()
            .filter(|(_, e)| now.saturating_since(e.last_hit) > e.idle_timeout)
            .map(|(k, _)| *k)
            .collect();
        for k in &removed {
            self.entries.remove(k);
        }
        removed
    }

    /// Applies a command; `now` starts the idle timer of new entries.
    pub fn apply_at(&mut self, cmd: &Command, now: Timestamp) {
        match cmd {
            Command::FlowMod(fm) if fm.switch_id == self.switch_id => {
                self.flow_mods += 1;
                self.entries.insert(
                    fm.matching,
                    FlowEntry {
                        queue_id: fm.queue_id,
                        action: fm.action,
                        idle_timeout: fm.idle_timeout,
                        last_hit: now,
                    },
                );
            }
            Command::QueueSet(qs) if qs.switch_id == self.switch_id => {
                self.plans.insert(qs.port, qs.plan.clone());
            }
            _ => {}
        }
    }
}

impl SwitchInterface for FlowTable {
    fn apply(&mut self, cmd: &Command) {
        self.apply_at(cmd, Timestamp::ZERO);
    }
}
