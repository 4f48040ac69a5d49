//! Run results: the JSON report, the per-frame event log, and the timing
//! check the exit code is based on.

use std::fmt::Write as _;

use serde::Serialize;

use crate::broker::{AllocationSnapshot, BrokerConfig, PortNo};
use crate::classify::MessageClass;
use crate::sdn::{AdmissionEvent, SwitchId};
use crate::timing::TimingTable;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayStats {
    pub min: f64,
    pub mean: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl DelayStats {
    /// Nearest-rank percentiles over integer nanosecond delays, reported in
    /// microseconds.
    pub fn from_nanos(delays: &mut [u64]) -> Option<Self> {
        if delays.is_empty() {
            return None;
        }
        delays.sort_unstable();
        let n = delays.len();
        let rank = |p: u64| {
            let r = (p as usize * n).div_ceil(100);
            delays[r.clamp(1, n) - 1]
        };
        let sum: u128 = delays.iter().map(|d| u128::from(*d)).sum();
        let us = |ns: u64| ns as f64 / 1000.0;
        Some(Self {
            min: us(delays[0]),
            mean: sum as f64 / n as f64 / 1000.0,
            p95: us(rank(95)),
            p99: us(rank(99)),
            max: us(delays[n - 1]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: MessageClass,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub delay_us: Option<DelayStats>,
    pub bound_us: Option<f64>,
    /// Deliveries later than the bound. Drops are counted separately.
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub link: String,
    pub from: String,
    pub to: String,
    pub capacity_bps: u64,
    pub discipline: &'static str,
    pub utilization: f64,
    pub offered_octets: u64,
    pub transmitted_octets: u64,
    pub dropped_octets: u64,
    pub dropped_frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerReport {
    pub switch: String,
    pub switch_id: SwitchId,
    pub port: PortNo,
    pub link: String,
    pub config: BrokerConfig,
    pub ledger: AllocationSnapshot,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ControlCounters {
    pub packet_ins: u64,
    pub duplicate_packet_ins: u64,
    pub flow_mods: u64,
    pub queue_sets: u64,
    pub expired_entries: u64,
    pub malformed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub broker_enabled: bool,
    pub classes: Vec<ClassReport>,
    pub links: Vec<LinkReport>,
    pub control: ControlCounters,
    pub admissions: Vec<AdmissionEvent>,
    pub ledgers: Vec<LedgerReport>,
}

impl SimReport {
    pub fn class(&self, class: MessageClass) -> &ClassReport {
        self.classes
            .iter()
            .find(|c| c.class == class)
            .expect("every class is reported")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Short human-readable summary.
    pub fn summary(&self, violations: &[TimingViolation]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {}  seed {}  duration {} s  broker {}",
            self.scenario,
            self.seed,
            self.duration_s,
            if self.broker_enabled { "on" } else { "off" }
        );
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>8} {:>6} {:>10} {:>10} {:>10} {:>10} {:>6}",
            "class", "generated", "delivered", "dropped", "flight", "mean_us", "p99_us",
            "max_us", "bound_us", "late"
        );
        for c in &self.classes {
            let d = |f: fn(&DelayStats) -> f64| {
                c.delay_us.as_ref().map_or("-".into(), |s| format!("{:.1}", f(s)))
            };
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>9} {:>8} {:>6} {:>10} {:>10} {:>10} {:>10} {:>6}",
                c.class.as_str(),
                c.generated,
                c.delivered,
                c.dropped,
                c.in_flight,
                d(|s| s.mean),
                d(|s| s.p99),
                d(|s| s.max),
                c.bound_us.map_or("none".into(), |b| format!("{b:.0}")),
                c.violations
            );
        }
        for l in &self.links {
            let _ = writeln!(
                out,
                "link {} {}->{}: utilization {:.1}%, dropped {} frames",
                l.link,
                l.from,
                l.to,
                l.utilization * 100.0,
                l.dropped_frames
            );
        }
        let c = &self.control;
        let _ = writeln!(
            out,
            "control: {} packet-ins ({} duplicate), {} flow-mods, {} queue-sets, {} expired",
            c.packet_ins, c.duplicate_packet_ins, c.flow_mods, c.queue_sets, c.expired_entries
        );
        if violations.is_empty() {
            let _ = writeln!(out, "timing: all bounds met");
        } else {
            for v in violations {
                let _ = writeln!(
                    out,
                    "timing: {} max {:.1} us exceeds bound {:.0} us",
                    v.class, v.max_delay_us, v.bound_us
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingViolation {
    pub class: MessageClass,
    pub max_delay_us: f64,
    pub bound_us: f64,
}

/// One entry per class whose maximum delay exceeds its bound.
pub fn verify_timing(report: &SimReport, timing: &TimingTable) -> Vec<TimingViolation> {
    report
        .classes
        .iter()
        .filter_map(|c| {
            let bound_us = timing.bound(c.class)?.as_nanos() as f64 / 1000.0;
            let max = c.delay_us?.max;
            (max > bound_us).then_some(TimingViolation {
                class: c.class,
                max_delay_us: max,
                bound_us,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    /// Tail drop at a full egress queue.
    DroppedBuffer,
    /// The controller refused the flow.
    DroppedRejected,
    DroppedNoRoute,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::DroppedBuffer => "dropped_buffer",
            Outcome::DroppedRejected => "dropped_rejected",
            Outcome::DroppedNoRoute => "dropped_no_route",
        }
    }
}

/// One delivered or dropped frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub class: MessageClass,
    pub source: usize,
    pub generated_ns: u64,
    /// Delivery or drop time.
    pub at_ns: u64,
    pub queue: Option<u8>,
    pub outcome: Outcome,
}

fn push_us(out: &mut String, ns: u64) {
    let _ = write!(out, "{}.{:03}", ns / 1000, ns % 1000);
}

/// CSV event log; `flows` maps source indices to names.
pub fn events_csv(events: &[EventRecord], flows: &[String]) -> String {
    let mut out = String::with_capacity(events.len() * 64 + 80);
    out.push_str("class,flow,generated_at_us,delivered_at_us,delay_us,queue,outcome\n");
    for e in events {
        out.push_str(e.class.as_str());
        out.push(',');
        out.push_str(&flows[e.source]);
        out.push(',');
        push_us(&mut out, e.generated_ns);
        out.push(',');
        if e.outcome == Outcome::Delivered {
            push_us(&mut out, e.at_ns);
            out.push(',');
            push_us(&mut out, e.at_ns - e.generated_ns);
        } else {
            out.push(',');
        }
        out.push(',');
        if let Some(q) = e.queue {
            let _ = write!(out, "{q}");
        }
        out.push(',');
        out.push_str(e.outcome.as_str());
        out.push('\n');
    }
    out
}
