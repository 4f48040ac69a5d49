use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use crate::broker::{Bps, PortNo};
use crate::classify::{classify_frame, FlowKey, MessageClass};
use crate::codec::MacAddress;
use crate::sdn::{
    Action, Command, Controller, DemandTable, FlowTable, ForwardingTable, ManagedPort, PacketIn,
    SwitchId,
};
use crate::time::{serialization_ns, Timestamp};
use crate::timing::estimate_demand;

use super::port::{Discipline, Next, PortModel};
use super::report::{
    events_csv, ClassReport, ControlCounters, DelayStats, EventRecord, LedgerReport, LinkReport,
    Outcome, SimReport, SCHEMA_VERSION,
};
use super::traffic::{Source, Wake};
use super::{Frame, Scenario, SimError};

/// One frame started from the shaped queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapedTx {
    pub port: usize,
    pub start_ns: u64,
    pub bits: u64,
    /// Shaper rate in force when the frame started.
    pub rate: Bps,
}

/// Internal checks recorded during a run. All counters are expected to stay
/// at zero.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub flow_mods_per_key: BTreeMap<FlowKey, u64>,
    /// FlowMods that targeted a key the switch already had.
    pub flow_mods_on_live_keys: u64,
    /// Commands emitted in answer to a PacketIn for an installed key.
    pub duplicate_commands: u64,
    /// q2 frames that waited longer than the residual of the frame in
    /// service plus the q2 backlog ahead of them.
    pub priority_wait_violations: u64,
    /// Instants where a port sat idle with an eligible frame queued.
    pub work_conservation_violations: u64,
    /// Ticks after which controller and switch disagreed on installed keys.
    pub table_mismatches: u64,
    pub ledger_invariant_failures: u64,
    pub shaped: Vec<ShapedTx>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: SimReport,
    pub events: Vec<EventRecord>,
    /// Traffic names indexed by source.
    pub flows: Vec<String>,
    pub trace: Trace,
}

impl SimOutput {
    pub fn events_csv(&self) -> String {
        events_csv(&self.events, &self.flows)
    }
}

#[derive(Debug)]
enum Event {
    Fire { source: usize, generation: u64 },
    StateChange { source: usize },
    AtSwitch { switch: usize, in_port: PortNo, frame: Frame },
    PacketIn { switch: usize, in_port: PortNo, frame: Frame, bytes: Vec<u8> },
    TxDone { port: usize },
    ShaperWake { port: usize },
    Deliver { frame: Frame },
    Tick,
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // BinaryHeap is a max-heap; earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug)]
struct LinkPort {
    link: usize,
    switch: usize,
    port: PortNo,
    peer_switch: usize,
    peer_port: PortNo,
    propagation_ns: u64,
    model: PortModel,
    wake: Option<Timestamp>,
}

fn class_index(class: MessageClass) -> usize {
    MessageClass::ALL
        .iter()
        .position(|c| *c == class)
        .expect("class is listed")
}

fn switch_id(index: usize) -> SwitchId {
    SwitchId(index as u32 + 1)
}

fn ied_mac(index: usize) -> MacAddress {
    let n = index + 1;
    MacAddress::new([0x02, 0, 0, 0, (n >> 8) as u8, n as u8])
}

fn stream_mac(kind: u8, index: usize) -> MacAddress {
    MacAddress::new([0x01, 0x0C, 0xCD, kind, (index >> 8) as u8, index as u8])
}

struct Sim<'a> {
    scenario: &'a Scenario,
    now: Timestamp,
    horizon: Timestamp,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    sources: Vec<Source>,
    ied_switch: Vec<usize>,
    ied_port: Vec<PortNo>,
    host_ports: Vec<u32>,
    edge: Vec<Bps>,
    link_ports: Vec<LinkPort>,
    port_index: BTreeMap<(usize, PortNo), usize>,
    forwarding: ForwardingTable,
    tables: Vec<FlowTable>,
    controller: Option<Controller>,
    bounds: [Option<u64>; 5],
    generated: [u64; 5],
    delivered: [u64; 5],
    dropped: [u64; 5],
    late: [u64; 5],
    delays: [Vec<u64>; 5],
    events: Vec<EventRecord>,
    control: ControlCounters,
    trace: Trace,
}

/// Runs a scenario to its horizon.
pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    scenario.validate()?;
    let mut sim = Sim::build(scenario)?;
    sim.start();
    sim.run_loop();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn build(scenario: &'a Scenario) -> Result<Self, SimError> {
        let n_sw = scenario.switches.len();
        let mut host_ports = vec![0u32; n_sw];
        let mut ied_switch = Vec::new();
        let mut ied_port = Vec::new();
        for ied in &scenario.ieds {
            let sw = scenario.switch_index(&ied.switch).expect("validated");
            host_ports[sw] += 1;
            ied_switch.push(sw);
            ied_port.push(PortNo(host_ports[sw]));
        }

        let discipline = if scenario.broker.enabled {
            Discipline::StrictPriority
        } else {
            Discipline::Fifo
        };
        let mut next_port = host_ports.clone();
        let mut link_ports = Vec::new();
        let mut port_index = BTreeMap::new();
        for (li, link) in scenario.links.iter().enumerate() {
            let a = scenario.switch_index(&link.a).expect("validated");
            let b = scenario.switch_index(&link.b).expect("validated");
            next_port[a] += 1;
            next_port[b] += 1;
            let (pa, pb) = (PortNo(next_port[a]), PortNo(next_port[b]));
            for (sw, port, peer, peer_port) in [(a, pa, b, pb), (b, pb, a, pa)] {
                let spec = &scenario.switches[sw];
                port_index.insert((sw, port), link_ports.len());
                link_ports.push(LinkPort {
                    link: li,
                    switch: sw,
                    port,
                    peer_switch: peer,
                    peer_port,
                    propagation_ns: link.propagation.as_nanos() as u64,
                    model: PortModel::new(
                        link.capacity,
                        discipline,
                        spec.buffer_octets,
                        spec.bucket_octets,
                    ),
                    wake: None,
                });
            }
        }

        // next hop from every switch toward every switch
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_sw];
        for (i, lp) in link_ports.iter().enumerate() {
            adjacency[lp.switch].push(i);
        }
        let next_hop = |target: usize| -> Vec<Option<usize>> {
            let mut dist = vec![usize::MAX; n_sw];
            dist[target] = 0;
            let mut queue = VecDeque::from([target]);
            while let Some(s) = queue.pop_front() {
                for &lp in &adjacency[s] {
                    let peer = link_ports[lp].peer_switch;
                    if dist[peer] == usize::MAX {
                        dist[peer] = dist[s] + 1;
                        queue.push_back(peer);
                    }
                }
            }
            (0..n_sw)
                .map(|s| {
                    if s == target || dist[s] == usize::MAX {
                        return None;
                    }
                    adjacency[s]
                        .iter()
                        .copied()
                        .find(|&lp| dist[link_ports[lp].peer_switch] + 1 == dist[s])
                })
                .collect()
        };
        let routes: Vec<Vec<Option<usize>>> = (0..n_sw).map(next_hop).collect();

        let macs: Vec<MacAddress> = scenario
            .ieds
            .iter()
            .enumerate()
            .map(|(i, ied)| ied.mac.unwrap_or_else(|| ied_mac(i)))
            .collect();

        let mut forwarding = ForwardingTable::default();
        let mut demands = DemandTable::default();
        let mut sources = Vec::new();
        for (src_ied, ied) in scenario.ieds.iter().enumerate() {
            for t in &ied.traffic {
                let index = sources.len();
                let dst_ied = scenario.ied_index(&t.to).expect("validated");
                let (appid, dst) = match t.profile.class {
                    MessageClass::Goose => (t.appid.unwrap_or(index as u16 + 1), stream_mac(0x01, index)),
                    MessageClass::Sv => (
                        t.appid.unwrap_or(0x4000 + index as u16 + 1),
                        stream_mac(0x04, index),
                    ),
                    _ => (0, macs[dst_ied]),
                };
                let mut source = Source::new(
                    t.name.clone(),
                    &t.profile,
                    appid,
                    macs[src_ied],
                    dst,
                    src_ied,
                    dst_ied,
                    scenario.seed,
                    index as u64,
                )
                .with_start(t.start);
                let probe = source
                    .encode((1, 0), Timestamp::ZERO)
                    .map_err(|e| SimError::InvalidScenario(format!("traffic `{}`: {e}", t.name)))?;
                let classified = classify_frame(&probe)
                    .map_err(|e| SimError::InvalidScenario(format!("traffic `{}`: {e}", t.name)))?;
                source.set_key(classified.key);
                let demand = estimate_demand(&t.profile)
                    .map_err(|e| SimError::InvalidScenario(format!("traffic `{}`: {e}", t.name)))?;
                demands.declare(classified.key, demand);

                let target = ied_switch[dst_ied];
                for sw in 0..n_sw {
                    let port = if sw == target {
                        Some(ied_port[dst_ied])
                    } else {
                        routes[target][sw].map(|lp| link_ports[lp].port)
                    };
                    if let Some(port) = port {
                        forwarding.insert(switch_id(sw), dst, port);
                    }
                }
                sources.push(source);
            }
        }

        let controller = if scenario.broker.enabled {
            let managed: Vec<ManagedPort> = link_ports
                .iter()
                .map(|lp| ManagedPort {
                    switch_id: switch_id(lp.switch),
                    port: lp.port,
                    config: scenario
                        .broker
                        .config_for(scenario.links[lp.link].capacity),
                })
                .collect();
            Some(
                Controller::new(
                    &managed,
                    forwarding.clone(),
                    demands,
                    scenario.broker.idle_timeout,
                )
                .map_err(|e| SimError::InvalidScenario(e.to_string()))?,
            )
        } else {
            None
        };

        let mut bounds = [None; 5];
        for (i, class) in MessageClass::ALL.into_iter().enumerate() {
            bounds[i] = scenario.timing.bound(class).map(|d| d.as_nanos() as u64);
        }

        Ok(Self {
            scenario,
            now: Timestamp::ZERO,
            horizon: Timestamp::from_nanos(scenario.duration.as_nanos() as u64),
            heap: BinaryHeap::new(),
            seq: 0,
            sources,
            ied_switch,
            ied_port,
            host_ports,
            edge: (0..n_sw).map(|s| scenario.edge_capacity(s)).collect(),
            link_ports,
            port_index,
            forwarding,
            tables: (0..n_sw).map(|s| FlowTable::new(switch_id(s))).collect(),
            controller,
            bounds,
            generated: [0; 5],
            delivered: [0; 5],
            dropped: [0; 5],
            late: [0; 5],
            delays: Default::default(),
            events: Vec::new(),
            control: ControlCounters::default(),
            trace: Trace::default(),
        })
    }

    fn schedule(&mut self, at: Timestamp, event: Event) {
        self.seq += 1;
        self.heap.push(Scheduled {
            at: at.as_nanos(),
            seq: self.seq,
            event,
        });
    }

    fn after(&self, ns: u64) -> Timestamp {
        Timestamp::from_nanos(self.now.as_nanos() + ns)
    }

    fn start(&mut self) {
        if let Some(ctl) = &self.controller {
            for cmd in ctl.start() {
                self.apply_command(cmd);
            }
            self.schedule(Timestamp::ZERO + self.scenario.tick, Event::Tick);
        }
        for source in 0..self.sources.len() {
            for wake in self.sources[source].start() {
                match wake {
                    Wake::Frame(t) => self.schedule(t, Event::Fire { source, generation: 0 }),
                    Wake::StateChange(t) => self.schedule(t, Event::StateChange { source }),
                }
            }
        }
    }

    fn run_loop(&mut self) {
        while let Some(top) = self.heap.peek() {
            if top.at >= self.horizon.as_nanos() {
                break;
            }
            let Scheduled { at, event, .. } = self.heap.pop().expect("peeked");
            self.now = Timestamp::from_nanos(at);
            self.handle(event);
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Fire { source, generation } => self.fire(source, generation),
            Event::StateChange { source } => {
                if let Some(next) = self.sources[source].state_change(self.now) {
                    self.schedule(next, Event::StateChange { source });
                }
                let generation = self.sources[source].generation;
                self.schedule(self.now, Event::Fire { source, generation });
            }
            Event::AtSwitch {
                switch,
                in_port,
                frame,
            } => self.at_switch(switch, in_port, frame),
            Event::PacketIn {
                switch,
                in_port,
                frame,
                bytes,
            } => self.packet_in(switch, in_port, frame, bytes),
            Event::TxDone { port } => {
                let done = self.link_ports[port]
                    .model
                    .finish(self.horizon)
                    .expect("a frame was in service");
                let lp = &self.link_ports[port];
                let (switch, in_port) = (lp.peer_switch, lp.peer_port);
                let at = self.after(lp.propagation_ns);
                self.schedule(
                    at,
                    Event::AtSwitch {
                        switch,
                        in_port,
                        frame: done.frame,
                    },
                );
                self.start_port(port);
            }
            Event::ShaperWake { port } => {
                if self.link_ports[port].wake == Some(self.now) {
                    self.link_ports[port].wake = None;
                }
                self.start_port(port);
            }
            Event::Deliver { frame } => self.deliver(frame),
            Event::Tick => self.tick(),
        }
    }

    fn fire(&mut self, source: usize, generation: u64) {
        let src = &mut self.sources[source];
        if generation != src.generation {
            return;
        }
        let (counters, next) = src.emit(self.now);
        let frame = Frame {
            source,
            class: src.class,
            key: src.key,
            octets: src.octets,
            generated_at: self.now,
            counters,
            dst_ied: src.dst_ied,
            queue: None,
            enqueued_at: self.now,
            wait_bound_ns: 0,
        };
        let src_ied = src.src_ied;
        if let Some(next) = next {
            self.schedule(next, Event::Fire { source, generation });
        }
        self.generated[class_index(frame.class)] += 1;
        let switch = self.ied_switch[src_ied];
        let at = self.after(serialization_ns(u64::from(frame.octets) * 8, self.edge[switch]));
        self.schedule(
            at,
            Event::AtSwitch {
                switch,
                in_port: self.ied_port[src_ied],
                frame,
            },
        );
    }

    fn is_host_port(&self, switch: usize, port: PortNo) -> bool {
        port.0 >= 1 && port.0 <= self.host_ports[switch]
    }

    fn at_switch(&mut self, switch: usize, in_port: PortNo, frame: Frame) {
        let ingress = self.is_host_port(switch, in_port);
        if self.controller.is_some() && ingress {
            match self.tables[switch].hit(&frame.key, self.now) {
                Some(entry) => self.act(switch, entry.action, entry.queue_id, frame),
                None => {
                    self.control.packet_ins += 1;
                    match self.sources[frame.source].encode(frame.counters, frame.generated_at) {
                        Ok(bytes) => {
                            let at = self.now + self.scenario.control_delay;
                            self.schedule(
                                at,
                                Event::PacketIn {
                                    switch,
                                    in_port,
                                    frame,
                                    bytes,
                                },
                            );
                        }
                        Err(_) => {
                            self.control.malformed += 1;
                            self.drop_frame(frame, Outcome::DroppedNoRoute);
                        }
                    }
                }
            }
        } else {
            match self.forwarding.lookup(switch_id(switch), frame.key.dst) {
                Some(port) => {
                    let queue = frame.class.queue_id();
                    self.act(switch, Action::Output(port), queue, frame);
                }
                None => self.drop_frame(frame, Outcome::DroppedNoRoute),
            }
        }
    }

    fn packet_in(&mut self, switch: usize, in_port: PortNo, frame: Frame, bytes: Vec<u8>) {
        let ctl = self.controller.as_mut().expect("PacketIn only with a controller");
        let known = ctl.is_installed(&frame.key);
        let commands = ctl.on_packet_in(&PacketIn {
            switch_id: switch_id(switch),
            in_port,
            frame: bytes,
            at: self.now,
        });
        if known {
            self.control.duplicate_packet_ins += 1;
            self.trace.duplicate_commands += commands.len() as u64;
        }
        for cmd in commands {
            self.apply_command(cmd);
        }
        // re-inject the frame that triggered the PacketIn
        match self.tables[switch].hit(&frame.key, self.now) {
            Some(entry) => self.act(switch, entry.action, entry.queue_id, frame),
            None => {
                self.control.malformed += 1;
                self.drop_frame(frame, Outcome::DroppedNoRoute);
            }
        }
    }

    fn apply_command(&mut self, cmd: Command) {
        match &cmd {
            Command::FlowMod(fm) => {
                let sw = fm.switch_id.0 as usize - 1;
                if self.tables[sw].get(&fm.matching).is_some() {
                    self.trace.flow_mods_on_live_keys += 1;
                }
                *self.trace.flow_mods_per_key.entry(fm.matching).or_default() += 1;
                self.control.flow_mods += 1;
                self.tables[sw].apply_at(&cmd, self.now);
            }
            Command::QueueSet(qs) => {
                let sw = qs.switch_id.0 as usize - 1;
                self.control.queue_sets += 1;
                self.tables[sw].apply_at(&cmd, self.now);
                if let Some(&lp) = self.port_index.get(&(sw, qs.port)) {
                    self.link_ports[lp].model.apply_plan(&qs.plan, self.now);
                    self.start_port(lp);
                }
            }
        }
    }

    fn act(&mut self, switch: usize, action: Action, queue: u8, mut frame: Frame) {
        match action {
            Action::Drop => {
                let outcome = if self
                    .forwarding
                    .lookup(switch_id(switch), frame.key.dst)
                    .is_some()
                {
                    Outcome::DroppedRejected
                } else {
                    Outcome::DroppedNoRoute
                };
                self.drop_frame(frame, outcome);
            }
            Action::Output(port) => match self.port_index.get(&(switch, port)) {
                Some(&lp) => {
                    let now = self.now;
                    let model = &mut self.link_ports[lp].model;
                    frame.enqueued_at = now;
                    frame.wait_bound_ns = model.residual(now) + model.backlog_ns(2);
                    frame.queue = Some(match model.discipline() {
                        Discipline::Fifo => 0,
                        Discipline::StrictPriority => queue.min(2),
                    });
                    match model.enqueue(frame, queue) {
                        Ok(()) => self.start_port(lp),
                        Err(frame) => self.drop_frame(frame, Outcome::DroppedBuffer),
                    }
                }
                None => {
                    let at = self.after(serialization_ns(
                        u64::from(frame.octets) * 8,
                        self.edge[switch],
                    ));
                    self.schedule(at, Event::Deliver { frame });
                }
            },
        }
    }

    fn start_port(&mut self, index: usize) {
        let now = self.now;
        let lp = &mut self.link_ports[index];
        if lp.model.is_busy() {
            return;
        }
        let prioritized = lp.model.discipline() == Discipline::StrictPriority;
        match lp.model.try_start(now) {
            Next::Started(end) => {
                let s = lp.model.in_service().expect("just started");
                if prioritized && s.queue == 2 {
                    let waited = now.as_nanos() - s.frame.enqueued_at.as_nanos();
                    if waited > s.frame.wait_bound_ns {
                        self.trace.priority_wait_violations += 1;
                    }
                }
                if prioritized && s.queue == 1 {
                    self.trace.shaped.push(ShapedTx {
                        port: index,
                        start_ns: now.as_nanos(),
                        bits: u64::from(s.frame.octets) * 8,
                        rate: lp.model.shaper_rate(),
                    });
                }
                self.schedule(end, Event::TxDone { port: index });
            }
            Next::WaitUntil(t) => {
                if lp.model.has_eligible(now) {
                    self.trace.work_conservation_violations += 1;
                }
                if lp.wake != Some(t) {
                    lp.wake = Some(t);
                    self.schedule(t, Event::ShaperWake { port: index });
                }
            }
            Next::Idle => {
                if lp.model.has_eligible(now) {
                    self.trace.work_conservation_violations += 1;
                }
            }
        }
    }

    fn deliver(&mut self, frame: Frame) {
        let ci = class_index(frame.class);
        let delay = self.now.as_nanos() - frame.generated_at.as_nanos();
        self.delivered[ci] += 1;
        self.delays[ci].push(delay);
        if self.bounds[ci].is_some_and(|b| delay > b) {
            self.late[ci] += 1;
        }
        self.events.push(EventRecord {
            class: frame.class,
            source: frame.source,
            generated_ns: frame.generated_at.as_nanos(),
            at_ns: self.now.as_nanos(),
            queue: frame.queue,
            outcome: Outcome::Delivered,
        });
    }

    fn drop_frame(&mut self, frame: Frame, outcome: Outcome) {
        self.dropped[class_index(frame.class)] += 1;
        self.events.push(EventRecord {
            class: frame.class,
            source: frame.source,
            generated_ns: frame.generated_at.as_nanos(),
            at_ns: self.now.as_nanos(),
            queue: frame.queue,
            outcome,
        });
    }

    fn tick(&mut self) {
        let now = self.now;
        let ctl = self.controller.as_mut().expect("ticks only with a controller");
        for table in &self.tables {
            ctl.on_flow_stats(&table.stats());
        }
        let commands = ctl.tick(now);
        for cmd in commands {
            self.apply_command(cmd);
        }
        for table in &mut self.tables {
            self.control.expired_entries += table.expire(now).len() as u64;
        }
        let ctl = self.controller.as_ref().expect("checked above");
        for table in &self.tables {
            if ctl.installed_on(table.switch_id) != table.keys() {
                self.trace.table_mismatches += 1;
            }
        }
        for (_, broker) in ctl.brokers() {
            if broker.check_invariants().is_err() {
                self.trace.ledger_invariant_failures += 1;
            }
        }
        self.schedule(now + self.scenario.tick, Event::Tick);
    }

    fn finish(self) -> SimOutput {
        let scenario = self.scenario;
        let mut in_flight = [0u64; 5];
        for s in self.heap.iter() {
            match &s.event {
                Event::AtSwitch { frame, .. }
                | Event::PacketIn { frame, .. }
                | Event::Deliver { frame } => in_flight[class_index(frame.class)] += 1,
                _ => {}
            }
        }
        for lp in &self.link_ports {
            let queues: &[u8] = match lp.model.discipline() {
                Discipline::Fifo => &[0],
                Discipline::StrictPriority => &[0, 1, 2],
            };
            for &q in queues {
                for f in lp.model.backlog(q) {
                    in_flight[class_index(f.class)] += 1;
                }
            }
            if let Some(s) = lp.model.in_service() {
                in_flight[class_index(s.frame.class)] += 1;
            }
        }

        let mut delays = self.delays;
        let classes = MessageClass::ALL
            .into_iter()
            .enumerate()
            .map(|(i, class)| ClassReport {
                class,
                generated: self.generated[i],
                delivered: self.delivered[i],
                dropped: self.dropped[i],
                in_flight: in_flight[i],
                delay_us: DelayStats::from_nanos(&mut delays[i]),
                bound_us: self.bounds[i].map(|b| b as f64 / 1000.0),
                violations: self.late[i],
            })
            .collect();

        let horizon = self.horizon.as_nanos();
        let links = self
            .link_ports
            .iter()
            .map(|lp| {
                let c = &lp.model.counters;
                let sum = |f: fn(&super::QueueCounters) -> u64| c.iter().map(f).sum::<u64>();
                LinkReport {
                    link: scenario.links[lp.link].name.clone(),
                    from: scenario.switches[lp.switch].name.clone(),
                    to: scenario.switches[lp.peer_switch].name.clone(),
                    capacity_bps: lp.model.rate(),
                    discipline: match lp.model.discipline() {
                        Discipline::Fifo => "fifo",
                        Discipline::StrictPriority => "strict_priority",
                    },
                    utilization: lp.model.busy_ns_until(self.horizon) as f64 / horizon as f64,
                    offered_octets: sum(|q| q.enqueued_octets + q.dropped_octets),
                    transmitted_octets: sum(|q| q.transmitted_octets),
                    dropped_octets: sum(|q| q.dropped_octets),
                    dropped_frames: sum(|q| q.dropped_frames),
                }
            })
            .collect();

        let mut control = self.control;
        let (admissions, ledgers) = match &self.controller {
            Some(ctl) => {
                control.malformed += ctl.malformed();
                let ledgers = ctl
                    .brokers()
                    .map(|((sid, port), broker)| {
                        let sw = sid.0 as usize - 1;
                        let lp = self.port_index[&(sw, *port)];
                        LedgerReport {
                            switch: scenario.switches[sw].name.clone(),
                            switch_id: *sid,
                            port: *port,
                            link: scenario.links[self.link_ports[lp].link].name.clone(),
                            config: *broker.config(),
                            ledger: broker.state().snapshot(),
                        }
                    })
                    .collect();
                (ctl.admission_log().to_vec(), ledgers)
            }
            None => (Vec::new(), Vec::new()),
        };

        let report = SimReport {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            duration_s: scenario.duration.as_secs_f64(),
            broker_enabled: scenario.broker.enabled,
            classes,
            links,
            control,
            admissions,
            ledgers,
        };
        SimOutput {
            report,
            events: self.events,
            flows: self.sources.iter().map(|s| s.name.clone()).collect(),
            trace: self.trace,
        }
    }
}

