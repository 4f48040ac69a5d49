//! Egress port of the constrained link.
//!
//! Two disciplines: a single drop-tail FIFO (no broker), or three strict
//! priority queues q2 > q1 > q0 where q1 is capped by a token bucket whose
//! rate follows the deployed queue plan. Scheduling is non-preemptive.

use std::collections::VecDeque;

use crate::broker::{Bps, QueuePlan};
use crate::time::{serialization_ns, Timestamp};

use super::Frame;

const NS_PER_SEC: u128 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    Fifo,
    StrictPriority,
}

/// Token bucket with exact integer accounting. One token is one bit; the
/// level is kept in bit-nanosecond-per-second units so refills never round.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate: Bps,
    capacity: u128,
    level: u128,
    updated: Timestamp,
}

impl TokenBucket {
    pub fn new(rate: Bps, bucket_bits: u64) -> Self {
        let capacity = u128::from(bucket_bits) * NS_PER_SEC;
        Self {
            rate,
            capacity,
            level: capacity,
            updated: Timestamp::ZERO,
        }
    }

    pub fn rate(&self) -> Bps {
        self.rate
    }

    fn refill(&mut self, now: Timestamp) {
        let elapsed = u128::from(now.as_nanos().saturating_sub(self.updated.as_nanos()));
        self.level = (self.level + elapsed * u128::from(self.rate)).min(self.capacity);
        self.updated = self.updated.max(now);
    }

    /// Changes the fill rate; tokens accrued so far are kept.
    pub fn set_rate(&mut self, rate: Bps, now: Timestamp) {
        self.refill(now);
        self.rate = rate;
    }

    pub fn conforms(&mut self, bits: u64, now: Timestamp) -> bool {
        self.refill(now);
        self.level >= u128::from(bits) * NS_PER_SEC
    }

    pub fn consume(&mut self, bits: u64, now: Timestamp) {
        self.refill(now);
        self.level = self.level.saturating_sub(u128::from(bits) * NS_PER_SEC);
    }

    /// Earliest time at which `bits` will conform, or `None` at zero rate.
    pub fn ready_at(&mut self, bits: u64, now: Timestamp) -> Option<Timestamp> {
        self.refill(now);
        let need = u128::from(bits) * NS_PER_SEC;
        if self.level >= need {
            return Some(now);
        }
        if self.rate == 0 || need > self.capacity {
            return None;
        }
        let wait = (need - self.level).div_ceil(u128::from(self.rate));
        Some(Timestamp::from_nanos(now.as_nanos() + wait as u64))
    }
}

#[derive(Debug, Clone)]
pub struct InService {
    pub frame: Frame,
    pub queue: u8,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Result of asking an idle port to pick its next frame.
#[derive(Debug)]
pub enum Next {
    Started(Timestamp),
    /// Only q1 holds frames and the shaper is empty; retry at this time.
    WaitUntil(Timestamp),
    Idle,
}

#[derive(Debug, Clone, Default)]
pub struct QueueCounters {
    pub enqueued_octets: u64,
    pub transmitted_octets: u64,
    pub dropped_octets: u64,
    pub transmitted_frames: u64,
    pub dropped_frames: u64,
}

#[derive(Debug, Clone)]
pub struct PortModel {
    rate: Bps,
    discipline: Discipline,
    buffer_octets: u64,
    queues: [VecDeque<Frame>; 3],
    resident: [u64; 3],
    shaper: TokenBucket,
    in_service: Option<InService>,
    pub counters: [QueueCounters; 3],
    pub busy_ns: u64,
}

impl PortModel {
    pub fn new(rate: Bps, discipline: Discipline, buffer_octets: u64, bucket_octets: u64) -> Self {
        Self {
            rate,
            discipline,
            buffer_octets,
            queues: Default::default(),
            resident: [0; 3],
            // q1 is unshaped until a plan arrives
            shaper: TokenBucket::new(rate, bucket_octets * 8),
            in_service: None,
            counters: Default::default(),
            busy_ns: 0,
        }
    }

    pub fn rate(&self) -> Bps {
        self.rate
    }

    pub fn discipline(&self) -> Discipline {
        self.discipline
    }

    pub fn shaper_rate(&self) -> Bps {
        self.shaper.rate()
    }

    pub fn apply_plan(&mut self, plan: &QueuePlan, now: Timestamp) {
        if let Some(q1) = plan.queue(1) {
            self.shaper.set_rate(q1.max_rate, now);
        }
    }

    fn queue_index(&self, queue: u8) -> usize {
        match self.discipline {
            Discipline::Fifo => 0,
            Discipline::StrictPriority => usize::from(queue.min(2)),
        }
    }

    /// Drop-tail enqueue. Returns the frame back if the queue is full.
    pub fn enqueue(&mut self, frame: Frame, queue: u8) -> Result<(), Frame> {
        let q = self.queue_index(queue);
        let size = u64::from(frame.octets);
        if self.resident[q] + size > self.buffer_octets {
            self.counters[q].dropped_octets += size;
            self.counters[q].dropped_frames += 1;
            return Err(frame);
        }
        self.resident[q] += size;
        self.counters[q].enqueued_octets += size;
        self.queues[q].push_back(frame);
        Ok(())
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn in_service(&self) -> Option<&InService> {
        self.in_service.as_ref()
    }

    pub fn backlog(&self, queue: u8) -> impl Iterator<Item = &Frame> {
        self.queues[self.queue_index(queue)].iter()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn resident_frames(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum::<usize>() + usize::from(self.is_busy())
    }

    fn serialization(&self, frame: &Frame) -> u64 {
        serialization_ns(u64::from(frame.octets) * 8, self.rate)
    }

    /// Residual transmission time of the frame in service.
    pub fn residual(&self, now: Timestamp) -> u64 {
        self.in_service
            .as_ref()
            .map_or(0, |s| s.end.as_nanos().saturating_sub(now.as_nanos()))
    }

    /// Serialization time of everything queued in `queue`.
    pub fn backlog_ns(&self, queue: u8) -> u64 {
        self.backlog(queue).map(|f| self.serialization(f)).sum()
    }

    /// Whether some frame could start right now.
    pub fn has_eligible(&mut self, now: Timestamp) -> bool {
        match self.discipline {
            Discipline::Fifo => !self.queues[0].is_empty(),
            Discipline::StrictPriority => {
                !self.queues[2].is_empty()
                    || !self.queues[0].is_empty()
                    || self.queues[1]
                        .front()
                        .map(|f| u64::from(f.octets) * 8)
                        .is_some_and(|bits| self.shaper.conforms(bits, now))
            }
        }
    }

    /// Starts the next frame if the port is idle.
    pub fn try_start(&mut self, now: Timestamp) -> Next {
        if self.in_service.is_some() {
            return Next::Idle;
        }
        let pick = match self.discipline {
            Discipline::Fifo => (!self.queues[0].is_empty()).then_some(0),
            Discipline::StrictPriority => {
                if !self.queues[2].is_empty() {
                    Some(2)
                } else if let Some(head) = self.queues[1].front() {
                    let bits = u64::from(head.octets) * 8;
                    if self.shaper.conforms(bits, now) {
                        Some(1)
                    } else if !self.queues[0].is_empty() {
                        Some(0)
                    } else {
                        return match self.shaper.ready_at(bits, now) {
                            Some(t) => Next::WaitUntil(t),
                            None => Next::Idle,
                        };
                    }
                } else if !self.queues[0].is_empty() {
                    Some(0)
                } else {
                    None
                }
            }
        };
        let Some(q) = pick else {
            return Next::Idle;
        };
        let frame = self.queues[q].pop_front().expect("picked queue is non-empty");
        let size = u64::from(frame.octets);
        self.resident[q] -= size;
        if q == 1 && self.discipline == Discipline::StrictPriority {
            self.shaper.consume(size * 8, now);
        }
        let end = Timestamp::from_nanos(now.as_nanos() + self.serialization(&frame));
        self.in_service = Some(InService {
            frame,
            queue: q as u8,
            start: now,
            end,
        });
        Next::Started(end)
    }

    /// Completes the frame in service.
    pub fn finish(&mut self, horizon: Timestamp) -> Option<InService> {
        let done = self.in_service.take()?;
        let q = usize::from(done.queue);
        self.counters[q].transmitted_octets += u64::from(done.frame.octets);
        self.counters[q].transmitted_frames += 1;
        let end = done.end.min(horizon).as_nanos();
        self.busy_ns += end.saturating_sub(done.start.as_nanos());
        Some(done)
    }

    /// Busy time of a frame still in service at the horizon.
    pub fn busy_ns_until(&self, horizon: Timestamp) -> u64 {
        let partial = self.in_service.as_ref().map_or(0, |s| {
            horizon
                .as_nanos()
                .min(s.end.as_nanos())
                .saturating_sub(s.start.as_nanos())
        });
        self.busy_ns + partial
    }

    pub fn resident_octets(&self, queue: u8) -> u64 {
        self.resident[self.queue_index(queue)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{FlowKey, MessageClass};
    use crate::codec::MacAddress;

    fn frame(octets: u32, class: MessageClass) -> Frame {
        Frame {
            source: 0,
            class,
            key: FlowKey {
                src: MacAddress::default(),
                dst: MacAddress::default(),
                ethertype: 0,
                appid: None,
                l4: None,
            },
            octets,
            generated_at: Timestamp::ZERO,
            counters: (0, 0),
            dst_ied: 0,
            queue: None,
            enqueued_at: Timestamp::ZERO,
            wait_bound_ns: 0,
        }
    }

    #[test]
    fn bucket_refill_is_exact() {
        let mut tb = TokenBucket::new(1_000_000, 12_000);
        assert!(tb.conforms(12_000, Timestamp::ZERO));
        tb.consume(12_000, Timestamp::ZERO);
        assert!(!tb.conforms(1, Timestamp::ZERO));
        // 1 Mb/s refills 1 bit per microsecond
        assert_eq!(
            tb.ready_at(1000, Timestamp::ZERO),
            Some(Timestamp::from_millis(1))
        );
        assert!(tb.conforms(1000, Timestamp::from_millis(1)));
        assert!(!tb.conforms(1001, Timestamp::from_millis(1)));
        // never above capacity
        assert!(!tb.conforms(12_001, Timestamp::from_secs(10)));
    }

    #[test]
    fn oversize_frame_never_conforms() {
        let mut tb = TokenBucket::new(1_000, 100);
        assert_eq!(tb.ready_at(101, Timestamp::ZERO), None);
        let mut tb = TokenBucket::new(0, 100);
        tb.consume(100, Timestamp::ZERO);
        assert_eq!(tb.ready_at(1, Timestamp::ZERO), None);
    }

    #[test]
    fn strict_priority_order() {
        let mut p = PortModel::new(100_000_000, Discipline::StrictPriority, 1 << 20, 1 << 14);
        p.enqueue(frame(1000, MessageClass::Other), 0).unwrap();
        p.enqueue(frame(1000, MessageClass::Mms), 1).unwrap();
        p.enqueue(frame(150, MessageClass::Goose), 2).unwrap();
        let mut order = Vec::new();
        let mut now = Timestamp::ZERO;
        while let Next::Started(end) = p.try_start(now) {
            now = end;
            order.push(p.finish(Timestamp::from_secs(1)).unwrap().queue);
        }
        assert_eq!(order, [2, 1, 0]);
        assert_eq!(p.busy_ns, 12_000 + 80_000 + 80_000);
    }

    #[test]
    fn fifo_ignores_queue_ids() {
        let mut p = PortModel::new(100_000_000, Discipline::Fifo, 1 << 20, 1 << 14);
        p.enqueue(frame(1000, MessageClass::Other), 0).unwrap();
        p.enqueue(frame(150, MessageClass::Goose), 2).unwrap();
        assert!(matches!(p.try_start(Timestamp::ZERO), Next::Started(_)));
        assert_eq!(p.in_service().unwrap().frame.class, MessageClass::Other);
    }

    #[test]
    fn drop_tail_at_buffer_limit() {
        let mut p = PortModel::new(100_000_000, Discipline::StrictPriority, 2000, 1 << 14);
        p.enqueue(frame(1000, MessageClass::Mms), 1).unwrap();
        p.enqueue(frame(1000, MessageClass::Mms), 1).unwrap();
        assert!(p.enqueue(frame(60, MessageClass::Mms), 1).is_err());
        // queues are buffered independently
        p.enqueue(frame(1000, MessageClass::Goose), 2).unwrap();
        assert_eq!(p.counters[1].dropped_frames, 1);
        assert_eq!(p.resident_octets(1), 2000);
    }

    #[test]
    fn shaped_queue_waits_for_tokens() {
        let mut p = PortModel::new(100_000_000, Discipline::StrictPriority, 1 << 20, 1000);
        let plan_rate = 1_000_000;
        p.shaper.set_rate(plan_rate, Timestamp::ZERO);
        p.enqueue(frame(1000, MessageClass::Mms), 1).unwrap();
        p.enqueue(frame(1000, MessageClass::Mms), 1).unwrap();
        let Next::Started(end) = p.try_start(Timestamp::ZERO) else {
            panic!()
        };
        p.finish(Timestamp::from_secs(1));
        // 8000 bits at 1 Mb/s
        match p.try_start(end) {
            Next::WaitUntil(t) => assert_eq!(t, Timestamp::from_millis(8)),
            other => panic!("{other:?}"),
        }
        // best effort is not held back by the shaper
        p.enqueue(frame(100, MessageClass::Other), 0).unwrap();
        assert!(matches!(p.try_start(end), Next::Started(_)));
        assert_eq!(p.in_service().unwrap().queue, 0);
    }
}
