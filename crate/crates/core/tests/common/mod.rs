//! Generators and reference models shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use rand::Rng;

use gridlink::broker::{Bps, BrokerConfig, Decision, RejectReason};
use gridlink::classify::{synthetic_ipv4_frame, Transport};
use gridlink::codec::{
    encode_goose, encode_sv, DataValue, GoosePdu, LinkHeader, MacAddress, SvPdu, UtcTime,
    VlanTag,
};
use gridlink::{FlowKey, MessageClass, Timestamp};

pub const MBPS: Bps = 1_000_000;

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn visible_string() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[ -~]{0,64}").expect("valid regex")
}

pub fn utc_time() -> impl Strategy<Value = UtcTime> {
    (any::<u32>(), 0..=0xFF_FFFFu32, any::<u8>()).prop_map(|(seconds, fraction, quality)| {
        UtcTime {
            seconds,
            fraction,
            quality,
        }
    })
}

pub fn data_value() -> impl Strategy<Value = DataValue> {
    prop_oneof![
        any::<bool>().prop_map(DataValue::Boolean),
        any::<i64>().prop_map(DataValue::Integer),
        (0..=32u8, any::<u32>()).prop_map(|(len, bits)| {
            let bits = if len == 32 { bits } else { bits & ((1u32 << len) - 1) };
            DataValue::BitString { len, bits }
        }),
        visible_string().prop_map(DataValue::VisibleString),
        utc_time().prop_map(DataValue::Timestamp),
    ]
}

pub fn mac() -> impl Strategy<Value = MacAddress> {
    any::<[u8; 6]>().prop_map(MacAddress::new)
}

pub fn link_header() -> impl Strategy<Value = LinkHeader> {
    let vlan = proptest::option::of((0..=7u8, 0..=0x0FFFu16).prop_map(|(pcp, vid)| VlanTag { pcp, vid }));
    (mac(), mac(), vlan).prop_map(|(dst, src, vlan)| LinkHeader { dst, src, vlan })
}

pub fn goose_pdu() -> impl Strategy<Value = GoosePdu> {
    let names = (visible_string(), visible_string(), visible_string());
    let counters = (any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>());
    let flags = (any::<bool>(), any::<bool>());
    let data = proptest::collection::vec(data_value(), 0..12);
    (names, counters, flags, utc_time(), data).prop_map(
        |((gocb_ref, dat_set, go_id), (ttl, st_num, sq_num, conf_rev), (test, nds_com), timestamp, all_data)| {
            GoosePdu {
                gocb_ref,
                time_allowed_to_live: ttl,
                dat_set,
                go_id,
                timestamp,
                st_num,
                sq_num,
                test,
                conf_rev,
                nds_com,
                num_dat_set_entries: all_data.len() as u32,
                all_data,
            }
        },
    )
}

pub fn sv_pdu() -> impl Strategy<Value = SvPdu> {
    (
        visible_string(),
        any::<u16>(),
        any::<u32>(),
        any::<u8>(),
        proptest::collection::vec(any::<u8>(), 0..1200),
    )
        .prop_map(|(sv_id, smp_cnt, conf_rev, smp_synch, sample_data)| SvPdu {
            sv_id,
            smp_cnt,
            conf_rev,
            smp_synch,
            sample_data,
        })
}

/// Valid frames of every kind the classifier knows, for fuzz seeds.
pub fn seed_frame(rng: &mut impl Rng, runner: &mut TestRunner) -> Vec<u8> {
    let mut draw_link = || link_header().new_tree(runner).expect("link").current();
    match rng.random_range(0..3) {
        0 => {
            let link = draw_link();
            let pdu = goose_pdu().new_tree(runner).expect("pdu").current();
            encode_goose(&link, rng.random(), &pdu).expect("generated GOOSE encodes")
        }
        1 => {
            let link = draw_link();
            let mut pdu = sv_pdu().new_tree(runner).expect("pdu").current();
            pdu.sample_data.truncate(256);
            encode_sv(&link, rng.random(), &pdu).expect("generated SV encodes")
        }
        _ => {
            let proto = if rng.random() { Transport::Tcp } else { Transport::Udp };
            let ports = [102u16, 123, 319, 320, 80, rng.random()];
            let port = ports[rng.random_range(0..ports.len())];
            synthetic_ipv4_frame(
                MacAddress::new(rng.random()),
                MacAddress::new(rng.random()),
                proto,
                rng.random(),
                port,
            )
        }
    }
}

/// One random corruption of a valid frame, or an unrelated random buffer.
pub fn mutate(rng: &mut impl Rng, mut buf: Vec<u8>) -> Vec<u8> {
    match rng.random_range(0..7) {
        0 => {
            for _ in 0..rng.random_range(1..=8) {
                let bit = rng.random_range(0..buf.len() * 8);
                buf[bit / 8] ^= 1 << (bit % 8);
            }
        }
        1 => buf.truncate(rng.random_range(0..buf.len())),
        2 => {
            let i = rng.random_range(0..buf.len());
            buf[i] = [0x00, 0x7F, 0x80, 0x81, 0x82, 0x84, 0xFF][rng.random_range(0..7)];
        }
        3 => {
            let i = rng.random_range(0..=buf.len());
            let n = rng.random_range(1..16);
            let extra: Vec<u8> = (0..n).map(|_| rng.random()).collect();
            buf.splice(i..i, extra);
        }
        4 => {
            // scramble a header length field
            if buf.len() > 21 {
                let i = rng.random_range(14..22);
                buf[i] = rng.random();
            }
        }
        5 => {
            let n = rng.random_range(0..128);
            buf = vec![0; n];
            rng.fill_bytes(&mut buf);
        }
        _ => {
            let n = rng.random_range(1..buf.len().max(2));
            buf.truncate(buf.len().saturating_sub(n));
            buf.extend((0..rng.random_range(0..4)).map(|_| rng.random::<u8>()));
        }
    }
    buf
}

pub fn config(capacity: Bps, max: Bps, floor: Bps, be: Bps, idle: Duration) -> BrokerConfig {
    BrokerConfig {
        link_capacity: capacity,
        shared_cap_max: max,
        shared_cap_floor: floor,
        best_effort_floor: be,
        idle_timeout: idle,
    }
}

pub fn key(n: u16) -> FlowKey {
    FlowKey {
        src: MacAddress::new([2, 0, 0, 0, (n >> 8) as u8, n as u8]),
        dst: MacAddress::new([1, 0x0C, 0xCD, 1, 0, 1]),
        ethertype: 0x88B8,
        appid: Some(n),
        l4: None,
    }
}

#[derive(Debug, Clone)]
struct ModelFlow {
    reserved: Bps,
    last_seen: Timestamp,
    decision: Decision,
}

/// A plain reference ledger: admission is a feasibility check on the
/// reservation total, the shared cap follows the committed total directly.
#[derive(Debug, Clone)]
pub struct LedgerModel {
    pub config: BrokerConfig,
    flows: BTreeMap<FlowKey, ModelFlow>,
    pub shared: Bps,
}

impl LedgerModel {
    pub fn new(config: BrokerConfig) -> Self {
        Self {
            config,
            flows: BTreeMap::new(),
            shared: config.shared_cap_max.min(
                config.link_capacity - config.best_effort_floor,
            ),
        }
    }

    pub fn reserved(&self) -> Bps {
        self.flows.values().map(|f| f.reserved).sum()
    }

    pub fn keys(&self) -> Vec<FlowKey> {
        self.flows.keys().copied().collect()
    }

    pub fn admit(&mut self, key: FlowKey, class: MessageClass, rate: Bps, now: Timestamp) -> Decision {
        if let Some(f) = self.flows.get_mut(&key) {
            f.last_seen = f.last_seen.max(now);
            return f.decision;
        }
        let c = self.config;
        let (decision, reserved) = if class.is_priority() {
            let total = self.reserved() + rate;
            if total + c.shared_cap_floor + c.best_effort_floor > c.link_capacity {
                return Decision::Rejected {
                    reason: RejectReason::InsufficientCapacity,
                };
            }
            let before = self.shared;
            self.shared = self.shared.min(c.link_capacity - c.best_effort_floor - total);
            (
                Decision::AcceptedReserved {
                    reserved: rate,
                    plan_changed: rate > 0 || self.shared != before,
                },
                rate,
            )
        } else if class.is_shared() {
            (Decision::AcceptedShared, 0)
        } else {
            (Decision::AcceptedBestEffort, 0)
        };
        self.flows.insert(
            key,
            ModelFlow {
                reserved,
                last_seen: now,
                decision,
            },
        );
        decision
    }

    pub fn touch(&mut self, key: &FlowKey, now: Timestamp) -> bool {
        match self.flows.get_mut(key) {
            Some(f) => {
                f.last_seen = f.last_seen.max(now);
                true
            }
            None => false,
        }
    }

    pub fn expire(&mut self, now: Timestamp) -> Vec<FlowKey> {
        let timeout = self.config.idle_timeout;
        let gone: Vec<FlowKey> = self
            .flows
            .iter()
            .filter(|(_, f)| now.saturating_since(f.last_seen) > timeout)
            .map(|(k, _)| *k)
            .collect();
        for k in &gone {
            self.flows.remove(k);
        }
        if !gone.is_empty() {
            let c = self.config;
            let room = c.link_capacity - c.best_effort_floor - self.reserved();
            self.shared = self.shared.max(c.shared_cap_max.min(room));
        }
        gone
    }
}
