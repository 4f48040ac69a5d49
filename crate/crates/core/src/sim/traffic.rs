//! Traffic publishers. Each source owns its own random stream, derived from
//! the scenario seed and the source index.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::classify::{synthetic_ipv4_frame, FlowKey, MessageClass, Transport};
use crate::codec::{
    encode_goose, encode_sv, CodecError, DataValue, GoosePdu, LinkHeader, MacAddress, SvPdu,
    UtcTime,
};
use crate::time::Timestamp;
use crate::timing::{GooseSchedule, TrafficPattern, TrafficProfile};

const NS: u64 = 1_000_000_000;

/// What a source wants the event loop to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wake {
    /// Emit the next frame at this time.
    Frame(Timestamp),
    /// A GOOSE state change happens at this time.
    StateChange(Timestamp),
}

#[derive(Debug)]
enum Publisher {
    Sampled {
        rate: u64,
        start: u64,
        index: u64,
    },
    Goose {
        schedule: GooseSchedule,
        gaps: Vec<Duration>,
        events: Option<Exp<f64>>,
        st_num: u32,
        sq_num: u32,
        retransmit: usize,
    },
    Poisson {
        gaps: Option<Exp<f64>>,
    },
    Periodic {
        interval: Duration,
    },
}

#[derive(Debug)]
pub struct Source {
    pub name: String,
    pub class: MessageClass,
    pub key: FlowKey,
    pub octets: u32,
    pub src_ied: usize,
    pub dst_ied: usize,
    appid: u16,
    link: LinkHeader,
    rng: ChaCha8Rng,
    publisher: Publisher,
    /// Bumped whenever a GOOSE state change reschedules the frame timer.
    pub generation: u64,
    /// Fixed first emission; a random phase otherwise.
    offset: Option<u64>,
}

/// Counters stamped into a frame at emission: (stNum, sqNum) for GOOSE,
/// (smpCnt, 0) for SV.
pub type PduCounters = (u32, u32);

impl Source {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        profile: &TrafficProfile,
        appid: u16,
        src: MacAddress,
        dst: MacAddress,
        src_ied: usize,
        dst_ied: usize,
        seed: u64,
        index: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let publisher = match &profile.pattern {
            TrafficPattern::Sampled { sample_rate } => Publisher::Sampled {
                rate: u64::from(*sample_rate),
                start: 0,
                index: 0,
            },
            TrafficPattern::Goose(schedule) => Publisher::Goose {
                gaps: schedule.gaps(),
                events: (schedule.event_rate > 0.0)
                    .then(|| Exp::new(schedule.event_rate).expect("positive rate")),
                schedule: schedule.clone(),
                st_num: 1,
                sq_num: 0,
                retransmit: usize::MAX,
            },
            TrafficPattern::Poisson { load_bps } => {
                let fps = *load_bps as f64 / (f64::from(profile.frame_octets) * 8.0);
                Publisher::Poisson {
                    gaps: (fps > 0.0).then(|| Exp::new(fps).expect("positive rate")),
                }
            }
            TrafficPattern::Periodic { interval } => Publisher::Periodic {
                interval: *interval,
            },
        };
        let key = provisional_key(profile.class, src, dst, appid, index);
        Self {
            name,
            class: profile.class,
            key,
            octets: profile.frame_octets,
            src_ied,
            dst_ied,
            appid,
            link: LinkHeader {
                dst,
                src,
                vlan: None,
            },
            rng,
            publisher,
            generation: 0,
            offset: None,
        }
    }

    pub fn with_start(mut self, start: Option<Duration>) -> Self {
        self.offset = start.map(|d| d.as_nanos() as u64);
        self
    }

    fn exp_ns(rng: &mut ChaCha8Rng, dist: &Exp<f64>) -> u64 {
        let secs: f64 = dist.sample(rng);
        ((secs * NS as f64).round() as u64).max(1)
    }

    fn random_phase(&mut self, period: Duration) -> u64 {
        if let Some(offset) = self.offset {
            return offset;
        }
        let ns = period.as_nanos() as u64;
        if ns == 0 {
            0
        } else {
            self.rng.random_range(0..ns)
        }
    }

    /// First wake-ups of the source.
    pub fn start(&mut self) -> Vec<Wake> {
        let mut wakes = Vec::new();
        match &self.publisher {
            Publisher::Sampled { rate, .. } => {
                let phase = self.random_phase(Duration::from_nanos(NS / *rate));
                if let Publisher::Sampled { start, .. } = &mut self.publisher {
                    *start = phase;
                }
                wakes.push(Wake::Frame(Timestamp::from_nanos(phase)));
            }
            Publisher::Goose {
                schedule, events, ..
            } => {
                let heartbeat = schedule.heartbeat;
                let first_event = events.map(|d| Self::exp_ns(&mut self.rng, &d));
                wakes.push(Wake::Frame(Timestamp::from_nanos(
                    self.random_phase(heartbeat),
                )));
                if let Some(t) = first_event {
                    wakes.push(Wake::StateChange(Timestamp::from_nanos(t)));
                }
            }
            Publisher::Poisson { gaps } => {
                if let Some(d) = gaps {
                    let t = self.offset.unwrap_or(0) + Self::exp_ns(&mut self.rng, d);
                    wakes.push(Wake::Frame(Timestamp::from_nanos(t)));
                }
            }
            Publisher::Periodic { interval } => {
                let interval = *interval;
                wakes.push(Wake::Frame(Timestamp::from_nanos(
                    self.random_phase(interval),
                )));
            }
        }
        wakes
    }

    /// Emits one frame at `now`; returns its counters and the next frame
    /// time.
    pub fn emit(&mut self, now: Timestamp) -> (PduCounters, Option<Timestamp>) {
        match &mut self.publisher {
            Publisher::Sampled { rate, start, index } => {
                let counters = ((*index % *rate) as u32, 0);
                *index += 1;
                let next = *start + (u128::from(*index) * u128::from(NS) / u128::from(*rate)) as u64;
                (counters, Some(Timestamp::from_nanos(next)))
            }
            Publisher::Goose {
                schedule,
                gaps,
                st_num,
                sq_num,
                retransmit,
                ..
            } => {
                let counters = (*st_num, *sq_num);
                *sq_num = sq_num.wrapping_add(1);
                let gap = match gaps.get(*retransmit) {
                    Some(g) => {
                        *retransmit += 1;
                        *g
                    }
                    None => schedule.heartbeat,
                };
                (counters, Some(now + gap))
            }
            Publisher::Poisson { gaps } => {
                let next = gaps.map(|d| now.as_nanos() + Self::exp_ns(&mut self.rng, &d));
                ((0, 0), next.map(Timestamp::from_nanos))
            }
            Publisher::Periodic { interval } => ((0, 0), Some(now + *interval)),
        }
    }

    /// Applies a GOOSE state change: new stNum, sqNum back to zero, and the
    /// retransmission ladder restarts. Returns the next state-change time.
    pub fn state_change(&mut self, now: Timestamp) -> Option<Timestamp> {
        let Publisher::Goose {
            events,
            st_num,
            sq_num,
            retransmit,
            ..
        } = &mut self.publisher
        else {
            return None;
        };
        *st_num = st_num.checked_add(1).unwrap_or(1);
        *sq_num = 0;
        *retransmit = 0;
        self.generation += 1;
        let events = *events;
        events.map(|d| Timestamp::from_nanos(now.as_nanos() + Self::exp_ns(&mut self.rng, &d)))
    }

    /// Wire bytes of a frame with the given counters; used when the frame
    /// has to be shown to the controller.
    pub fn encode(&self, counters: PduCounters, at: Timestamp) -> Result<Vec<u8>, CodecError> {
        match self.class {
            MessageClass::Goose => {
                let heartbeat_ms = match &self.publisher {
                    Publisher::Goose { schedule, .. } => schedule.heartbeat.as_millis() as u32,
                    _ => 1000,
                };
                let name: String = self.name.chars().take(32).collect();
                let pdu = GoosePdu {
                    gocb_ref: format!("{name}LD0/LLN0$GO$gcb"),
                    time_allowed_to_live: heartbeat_ms.saturating_mul(2),
                    dat_set: format!("{name}LD0/LLN0$ds"),
                    go_id: name,
                    timestamp: utc(at),
                    st_num: counters.0,
                    sq_num: counters.1,
                    test: false,
                    conf_rev: 1,
                    nds_com: false,
                    num_dat_set_entries: 2,
                    all_data: vec![
                        DataValue::Boolean(counters.0.is_multiple_of(2)),
                        DataValue::Timestamp(utc(at)),
                    ],
                };
                encode_goose(&self.link, self.appid, &pdu)
            }
            MessageClass::Sv => {
                let pdu = SvPdu {
                    sv_id: self.name.chars().take(64).collect(),
                    smp_cnt: counters.0 as u16,
                    ..SvPdu::default()
                };
                encode_sv(&self.link, self.appid, &pdu)
            }
            MessageClass::Mms => Ok(synthetic_ipv4_frame(
                self.link.src,
                self.link.dst,
                Transport::Tcp,
                self.l4_src_port(),
                crate::classify::MMS_TCP_PORT,
            )),
            MessageClass::TimeSync => Ok(synthetic_ipv4_frame(
                self.link.src,
                self.link.dst,
                Transport::Udp,
                crate::classify::PTP_EVENT_UDP_PORT,
                crate::classify::PTP_EVENT_UDP_PORT,
            )),
            MessageClass::Other => Ok(synthetic_ipv4_frame(
                self.link.src,
                self.link.dst,
                Transport::Udp,
                self.l4_src_port(),
                self.l4_src_port(),
            )),
        }
    }

    fn l4_src_port(&self) -> u16 {
        self.key.l4.map_or(5000, |l4| l4.dst_port)
    }

    pub fn set_key(&mut self, key: FlowKey) {
        self.key = key;
    }
}

/// Key the source's frames will classify to; confirmed against the
/// classifier when the simulation is built.
fn provisional_key(
    class: MessageClass,
    src: MacAddress,
    dst: MacAddress,
    appid: u16,
    index: u64,
) -> FlowKey {
    use crate::classify::L4Key;
    use crate::codec::ethertype;
    let (ethertype, appid, l4) = match class {
        MessageClass::Goose => (ethertype::GOOSE, Some(appid), None),
        MessageClass::Sv => (ethertype::SV, Some(appid), None),
        MessageClass::Mms => (
            ethertype::IPV4,
            None,
            Some(L4Key {
                proto: Transport::Tcp,
                dst_port: crate::classify::MMS_TCP_PORT,
            }),
        ),
        MessageClass::TimeSync => (
            ethertype::IPV4,
            None,
            Some(L4Key {
                proto: Transport::Udp,
                dst_port: crate::classify::PTP_EVENT_UDP_PORT,
            }),
        ),
        MessageClass::Other => (
            ethertype::IPV4,
            None,
            Some(L4Key {
                proto: Transport::Udp,
                dst_port: 5000 + (index % 1000) as u16,
            }),
        ),
    };
    FlowKey {
        src,
        dst,
        ethertype,
        appid,
        l4,
    }
}

fn utc(at: Timestamp) -> UtcTime {
    let ns = at.as_nanos();
    UtcTime {
        seconds: (ns / NS) as u32,
        fraction: (((ns % NS) << 24) / NS) as u32,
        quality: 0x0A,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(profile: TrafficProfile, index: u64) -> Source {
        Source::new(
            "s".into(),
            &profile,
            1,
            MacAddress::new([2, 0, 0, 0, 0, 1]),
            MacAddress::new([1, 0x0C, 0xCD, 1, 0, 1]),
            0,
            1,
            42,
            index,
        )
    }

    #[test]
    fn sample_counter_wraps_at_rate() {
        let mut s = source(
            TrafficProfile {
                class: MessageClass::Sv,
                frame_octets: 126,
                pattern: TrafficPattern::Sampled { sample_rate: 4000 },
            },
            0,
        );
        let Wake::Frame(mut t) = s.start()[0] else {
            panic!()
        };
        let first = t;
        let mut counters = Vec::new();
        for _ in 0..4001 {
            let (c, next) = s.emit(t);
            counters.push(c.0);
            t = next.unwrap();
        }
        assert_eq!(counters[3999], 3999);
        assert_eq!(counters[4000], 0);
        // 4000 samples span exactly one second
        assert_eq!(t.as_nanos() - first.as_nanos(), 1_000_250_000);
    }

    #[test]
    fn goose_ladder_after_state_change() {
        let mut s = source(
            TrafficProfile {
                class: MessageClass::Goose,
                frame_octets: 150,
                pattern: TrafficPattern::Goose(GooseSchedule {
                    heartbeat: Duration::from_secs(1),
                    event_rate: 0.0,
                    min_gap: Duration::from_millis(4),
                    retransmissions: 4,
                }),
            },
            0,
        );
        assert_eq!(s.start().len(), 1);
        let (c, next) = s.emit(Timestamp::ZERO);
        assert_eq!(c, (1, 0));
        assert_eq!(next, Some(Timestamp::from_secs(1)));
        s.state_change(Timestamp::from_millis(100));
        let mut t = Timestamp::from_millis(100);
        let mut seen = Vec::new();
        for _ in 0..6 {
            let (c, next) = s.emit(t);
            let next = next.unwrap();
            seen.push((c, (next.as_nanos() - t.as_nanos()) / 1_000_000));
            t = next;
        }
        assert_eq!(
            seen,
            [
                ((2, 0), 4),
                ((2, 1), 8),
                ((2, 2), 16),
                ((2, 3), 32),
                ((2, 4), 1000),
                ((2, 5), 1000)
            ]
        );
        assert_eq!(s.generation, 1);
    }

    #[test]
    fn streams_are_independent_of_other_sources() {
        let profile = TrafficProfile {
            class: MessageClass::Mms,
            frame_octets: 1000,
            pattern: TrafficPattern::Poisson {
                load_bps: 10_000_000,
            },
        };
        let times = |index| {
            let mut s = source(profile.clone(), index);
            let Wake::Frame(mut t) = s.start()[0] else {
                panic!()
            };
            let mut v = vec![t];
            for _ in 0..20 {
                t = s.emit(t).1.unwrap();
                v.push(t);
            }
            v
        };
        assert_eq!(times(3), times(3));
        assert_ne!(times(3), times(4));
    }

    #[test]
    fn encoded_frames_classify_to_the_key() {
        use crate::classify::classify_frame;
        for (class, pattern) in [
            (MessageClass::Goose, TrafficPattern::Goose(GooseSchedule::default())),
            (MessageClass::Sv, TrafficPattern::Sampled { sample_rate: 4000 }),
            (MessageClass::Mms, TrafficPattern::Poisson { load_bps: 1000 }),
            (
                MessageClass::TimeSync,
                TrafficPattern::Periodic {
                    interval: Duration::from_secs(1),
                },
            ),
            (MessageClass::Other, TrafficPattern::Poisson { load_bps: 1000 }),
        ] {
            let s = source(
                TrafficProfile {
                    class,
                    frame_octets: 200,
                    pattern,
                },
                7,
            );
            let bytes = s.encode((1, 0), Timestamp::from_millis(1500)).unwrap();
            let c = classify_frame(&bytes).unwrap();
            assert_eq!((c.class, c.key), (class, s.key), "{class}");
        }
    }
}
