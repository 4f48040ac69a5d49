//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridlink::broker::{feasible, Bps, Broker, PortNo};
use gridlink::codec::{decode_goose, decode_sv, encode_goose, encode_sv, CodecError};
use gridlink::scenario::load_scenario;
use gridlink::sdn::{
    Command, Controller, DemandTable, FlowTable, ForwardingTable, ManagedPort, PacketIn, SwitchId,
};
use gridlink::sim::{self, verify_timing};
use gridlink::{classify_frame, DemandEstimate, MessageClass, Timestamp};

use common::*;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("codec round-trip and fuzzing", codec, Duration::from_secs(60)),
        ("ledger safety under random operations", ledger, Duration::from_secs(10)),
        ("admission matches the feasibility oracle", oracle, Duration::from_secs(10)),
        ("one FlowMod per flow key", first_message, Duration::from_secs(120)),
        ("soft-state expiry restores the shared cap", soft_state, Duration::from_secs(10)),
        ("idle-link calibration", calibration, Duration::from_secs(10)),
        ("broker protects GOOSE/SV under MMS load", comparative, Duration::from_secs(240)),
        ("deterministic outputs", determinism, Duration::from_secs(240)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(panic_text(&p)));
        let took = start.elapsed();
        let verdict = match verdict {
            Ok(detail) if took > *budget => {
                Err(format!("{detail}; took {took:.1?}, budget {budget:?}"))
            }
            v => v,
        };
        match verdict {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail} ({took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {why} ({took:.2?})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    let msg = p
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "non-string panic".into());
    format!("panicked: {msg}")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const ROUND_TRIPS: u32 = 1_000;
const FUZZ_CASES: usize = 100_000;

fn codec() -> Verdict {
    let runner = |seed: u8| {
        TestRunner::new_with_rng(
            Config {
                cases: ROUND_TRIPS,
                failure_persistence: None,
                ..Config::default()
            },
            proptest::test_runner::TestRng::from_seed(
                proptest::test_runner::RngAlgorithm::ChaCha,
                &[seed; 32],
            ),
        )
    };
    runner(1)
        .run(&(link_header(), goose_pdu()), |(link, pdu)| {
            let bytes = encode_goose(&link, 0x0001, &pdu).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = decode_goose(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back.pdu != pdu || back.link != link {
                return Err(TestCaseError::fail("GOOSE round-trip differs"));
            }
            Ok(())
        })
        .map_err(|e| format!("GOOSE: {e}"))?;
    runner(2)
        .run(&(link_header(), sv_pdu()), |(link, pdu)| {
            let bytes = encode_sv(&link, 0x4000, &pdu).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = decode_sv(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back.pdu != pdu || back.link != link {
                return Err(TestCaseError::fail("SV round-trip differs"));
            }
            Ok(())
        })
        .map_err(|e| format!("SV: {e}"))?;

    let documented = |e: &CodecError| {
        matches!(
            e,
            CodecError::Truncated { .. }
                | CodecError::BadEtherType { .. }
                | CodecError::MalformedBer { .. }
                | CodecError::LengthMismatch { .. }
                | CodecError::FieldTooLong { .. }
                | CodecError::InvalidDataValue(_)
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x88B8);
    let mut seeds = TestRunner::deterministic();
    let mut rejected = 0usize;
    // silence the default hook so a panic is reported once, by us
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let outcome = (|| {
        for i in 0..FUZZ_CASES {
            let seed = seed_frame(&mut rng, &mut seeds);
            let buf = mutate(&mut rng, seed);
            let results = panic::catch_unwind(|| {
                [
                    decode_goose(&buf).err(),
                    decode_sv(&buf).err(),
                    classify_frame(&buf).err(),
                ]
            })
            .map_err(|_| format!("panic on fuzz case {i}: {buf:02x?}"))?;
            if results[0].is_some() && results[1].is_some() {
                rejected += 1;
            }
            for e in results.iter().flatten() {
                ensure(documented(e), || format!("undocumented error {e:?}"))?;
            }
        }
        Ok::<(), String>(())
    })();
    panic::set_hook(hook);
    outcome?;
    Ok(format!(
        "{ROUND_TRIPS} GOOSE + {ROUND_TRIPS} SV round-trips exact, {FUZZ_CASES} mutated buffers without a panic ({rejected} rejected by both decoders)"
    ))
}

const LEDGER_OPS: usize = 20_000;

fn ledger() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ED6E2);
    let mut ops = 0;
    let mut rejections = 0;
    let mut expired = 0;
    let mut sequences = 0;
    while ops < LEDGER_OPS {
        sequences += 1;
        let capacity = rng.random_range(10..=1_000) * MBPS;
        let max = capacity * rng.random_range(1..=30) / 100;
        let cfg = config(
            capacity,
            max,
            (max * rng.random_range(1..=100) / 100).max(1),
            capacity * rng.random_range(1..=10) / 100,
            Duration::from_secs(rng.random_range(1..=5)),
        );
        let mut broker = Broker::new(cfg).map_err(|e| e.to_string())?;
        let mut model = LedgerModel::new(cfg);
        let mut now = Timestamp::ZERO;
        for _ in 0..500 {
            ops += 1;
            match rng.random_range(0..10) {
                0..=4 => {
                    let flow = rng.random_range(0..32u16);
                    let class = MessageClass::ALL[usize::from(flow) % 5];
                    let rate = rng.random_range(1..=capacity / 4);
                    let d = DemandEstimate::constant(rate as f64, 1200.0);
                    let got = broker.admit(key(flow), class, d, now).map_err(|e| e.to_string())?;
                    let want = model.admit(key(flow), class, rate, now);
                    ensure(got == want, || format!("op {ops}: admit gave {got:?}, reference {want:?}"))?;
                    rejections += usize::from(!got.is_accepted());
                }
                5 | 6 => {
                    let flow = rng.random_range(0..32u16);
                    let known = model.touch(&key(flow), now);
                    ensure(broker.touch(&key(flow), now).is_ok() == known, || format!("op {ops}: touch disagrees"))?;
                }
                7 | 8 => now = Timestamp::from_nanos(now.as_nanos() + rng.random_range(0..2_000) * 1_000_000),
                _ => {
                    let gone = broker.expire(now);
                    ensure(gone == model.expire(now), || format!("op {ops}: expiry disagrees"))?;
                    expired += gone.len();
                }
            }
            let s = broker.state();
            let sum: Bps = s.flows.values().map(|r| r.reserved).sum();
            ensure(sum == s.reserved_total, || format!("op {ops}: reserved_total {} but flows sum to {sum}", s.reserved_total))?;
            ensure(
                (cfg.shared_cap_floor..=cfg.shared_cap_max).contains(&s.shared_cap_current),
                || format!("op {ops}: shared cap {} out of range", s.shared_cap_current),
            )?;
            ensure(
                s.reserved_total + s.shared_cap_current + cfg.best_effort_floor <= cfg.link_capacity,
                || format!("op {ops}: link overcommitted"),
            )?;
            ensure(s.shared_cap_current == model.shared, || format!("op {ops}: shared cap differs from reference"))?;
            broker.check_invariants().map_err(|e| format!("op {ops}: {e}"))?;
        }
    }
    Ok(format!(
        "{ops} operations in {sequences} sequences, 0 violations ({rejections} rejections, {expired} expiries)"
    ))
}

fn oracle() -> Verdict {
    let configs = [
        config(100 * MBPS, 20 * MBPS, 5 * MBPS, MBPS, Duration::from_secs(5)),
        config(10 * MBPS, 3 * MBPS, MBPS, 500_000, Duration::from_secs(5)),
    ];
    let mut instances = 0u64;
    let mut admits = 0u64;
    let mut rejects = 0u64;
    for cfg in configs {
        let room = cfg.reservable();
        // grid hits the exact boundary (room/2 twice, room - 1 then 1) and overshoots it
        let grid = [1, room / 3, room / 2, room - 1, room + 1];
        for n in 1..=6u32 {
            for index in 0..grid.len().pow(n) {
                instances += 1;
                let mut broker = Broker::new(cfg).map_err(|e| e.to_string())?;
                let mut accepted: Vec<Bps> = Vec::new();
                let mut rest = index;
                for i in 0..n {
                    let rate = grid[rest % grid.len()];
                    rest /= grid.len();
                    let mut candidate = accepted.clone();
                    candidate.push(rate);
                    let expect = feasible(&candidate, &cfg);
                    let d = DemandEstimate::constant(rate as f64, 1200.0);
                    let got = broker
                        .admit(key(i as u16), MessageClass::Sv, d, Timestamp::ZERO)
                        .map_err(|e| e.to_string())?
                        .is_accepted();
                    admits += 1;
                    ensure(got == expect, || {
                        format!("prefix {accepted:?} + {rate}: admit {got}, oracle {expect}")
                    })?;
                    if got {
                        accepted = candidate;
                    } else {
                        rejects += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{instances} instances, {admits} admissions ({rejects} rejected), all match"))
}

fn shipped_scenarios() -> Result<Vec<(String, String)>, String> {
    let dir = scenarios_dir();
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), text));
        }
    }
    out.sort();
    ensure(!out.is_empty(), || "no shipped scenarios".into())?;
    Ok(out)
}

fn load(text: &str, overrides: &[(&str, &str)]) -> Result<sim::Scenario, String> {
    let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    load_scenario(text, &o).map_err(|e| e.to_string())
}

fn first_message() -> Verdict {
    let mut runs = 0;
    let mut keys = 0;
    let mut duplicates = 0;
    for (name, text) in shipped_scenarios()? {
        for seed in ["1", "2", "61850"] {
            let s = load(&text, &[("broker.enabled", "true"), ("run.seed", seed)])?;
            let out = sim::run(&s).map_err(|e| e.to_string())?;
            let t = &out.trace;
            runs += 1;
            for (k, n) in &t.flow_mods_per_key {
                ensure(*n == 1, || format!("{name} seed {seed}: {n} FlowMods for {k}"))?;
            }
            ensure(t.flow_mods_on_live_keys == 0, || format!("{name}: FlowMod for an installed key"))?;
            ensure(t.duplicate_commands == 0, || {
                format!("{name}: {} commands answered duplicate PacketIns", t.duplicate_commands)
            })?;
            ensure(out.report.control.flow_mods == t.flow_mods_per_key.len() as u64, || {
                format!("{name}: FlowMod count differs from distinct keys")
            })?;
            keys += t.flow_mods_per_key.len();
            duplicates += out.report.control.duplicate_packet_ins;
        }
    }
    ensure(duplicates > 0, || "no duplicate PacketIn was exercised".into())?;
    Ok(format!(
        "{runs} runs, {keys} keys each installed once, {duplicates} duplicate PacketIns answered with no commands"
    ))
}

fn soft_state() -> Verdict {
    const SW: SwitchId = SwitchId(1);
    const UP: PortNo = PortNo(3);
    let cfg = config(100 * MBPS, 20 * MBPS, 5 * MBPS, MBPS, Duration::from_secs(5));
    let mut fwd = ForwardingTable::default();
    fwd.set_default(SW, UP);
    let mut demands = DemandTable::default();
    let mut frames = Vec::new();
    for (i, mbps) in [78u64, 12, 3].into_iter().enumerate() {
        let link = gridlink::codec::LinkHeader {
            dst: gridlink::codec::MacAddress::new([1, 0x0C, 0xCD, 4, 0, i as u8]),
            src: gridlink::codec::MacAddress::new([2, 0, 0, 0, 0, i as u8 + 1]),
            vlan: None,
        };
        let frame = encode_sv(&link, 0x4000 + i as u16, &Default::default()).map_err(|e| e.to_string())?;
        let k = classify_frame(&frame).map_err(|e| e.to_string())?.key;
        demands.declare(k, DemandEstimate::constant((mbps * MBPS) as f64, 1008.0));
        frames.push((k, frame));
    }
    let managed = [ManagedPort { switch_id: SW, port: UP, config: cfg }];
    let mut ctl = Controller::new(&managed, fwd, demands, cfg.idle_timeout).map_err(|e| e.to_string())?;
    let mut switch = FlowTable::new(SW);
    for c in ctl.start() {
        switch.apply_at(&c, Timestamp::ZERO);
    }
    for (_, frame) in &frames {
        for c in ctl.on_packet_in(&PacketIn { switch_id: SW, in_port: PortNo(1), frame: frame.clone(), at: Timestamp::ZERO }) {
            switch.apply_at(&c, Timestamp::ZERO);
        }
    }
    let q1 = |t: &FlowTable| t.plan(UP).and_then(|p| p.queue(1)).map(|q| q.max_rate);
    let q2 = |t: &FlowTable| t.plan(UP).and_then(|p| p.queue(2)).map(|q| q.min_rate);
    // 78 + 12 + 3 reserved leaves 100 - 93 - 1 = 6 for the shared pool
    ensure(q2(&switch) == Some(93 * MBPS) && q1(&switch) == Some(6 * MBPS), || {
        format!("after admission q2 min {:?}, q1 max {:?}", q2(&switch), q1(&switch))
    })?;

    // the 78 and 3 Mb/s flows keep sending, the 12 Mb/s one goes quiet
    let mut now = Timestamp::ZERO;
    let mut restored_at = None;
    while now < Timestamp::from_secs(7) {
        now = Timestamp::from_nanos(now.as_nanos() + 100_000_000);
        switch.hit(&frames[0].0, now);
        switch.hit(&frames[2].0, now);
        ctl.on_flow_stats(&switch.stats());
        let cmds = ctl.tick(now);
        for c in &cmds {
            switch.apply_at(c, now);
        }
        switch.expire(now);
        if cmds.iter().any(|c| matches!(c, Command::QueueSet(_))) {
            restored_at.get_or_insert(now);
        }
    }
    let restored_at = restored_at.ok_or("no QueueSet after the flow went idle")?;
    ensure(restored_at == Timestamp::from_nanos(5_100_000_000), || {
        format!("restored at {} ns, expected the first tick past 5 s", restored_at.as_nanos())
    })?;
    ensure(switch.get(&frames[1].0).is_none(), || "idle entry still on the switch".into())?;
    ensure(!ctl.is_installed(&frames[1].0), || "controller still tracks the idle flow".into())?;
    let b = ctl.broker(SW, UP).ok_or("no broker")?;
    ensure(!b.contains(&frames[1].0), || "idle flow still holds a reservation".into())?;
    // min(20, 100 - 81 - 1) = 18
    let expected = cfg.shared_cap_max.min(cfg.link_capacity - 81 * MBPS - cfg.best_effort_floor);
    ensure(b.state().reserved_total == 81 * MBPS, || format!("reserved {}", b.state().reserved_total))?;
    ensure(q1(&switch) == Some(expected) && q2(&switch) == Some(81 * MBPS), || {
        format!("after expiry q2 min {:?}, q1 max {:?}, want q1 {expected}", q2(&switch), q1(&switch))
    })?;
    Ok(format!(
        "12 Mb/s reservation returned at {:.1} s; QueueSet q1 max 6 -> {} Mb/s exactly",
        restored_at.as_nanos() as f64 / 1e9,
        expected / MBPS
    ))
}

fn calibration() -> Verdict {
    let text = fs::read_to_string(scenarios_dir().join("calibration.toml")).map_err(|e| e.to_string())?;
    let s = load(&text, &[])?;
    let out = sim::run(&s).map_err(|e| e.to_string())?;
    let g = out.report.class(MessageClass::Goose);
    ensure(g.generated == 1 && g.delivered == 1, || format!("{} generated, {} delivered", g.generated, g.delivered))?;
    let measured = g.delay_us.ok_or("no delay recorded")?.max;

    // store-and-forward: host edge, inter-switch link, far edge
    let link = &s.links[0];
    let bits = f64::from(s.ieds[0].traffic[0].profile.frame_octets) * 8.0;
    let edge = 10.0 * link.capacity as f64;
    let analytic_us = (bits / edge + bits / link.capacity as f64 + bits / edge) * 1e6
        + link.propagation.as_secs_f64() * 1e6;
    let err = (measured - analytic_us).abs() / analytic_us;
    ensure(err <= 0.01, || format!("measured {measured} us, model {analytic_us} us"))?;
    Ok(format!("measured {measured:.3} us, analytic {analytic_us:.3} us, error {:.3}%", err * 100.0))
}

const RATIO_FLOOR: f64 = 5.0;

fn comparative() -> Verdict {
    let text = fs::read_to_string(scenarios_dir().join("inter-substation-100m.toml")).map_err(|e| e.to_string())?;
    let on = load(&text, &[("broker.enabled", "true")])?;
    let off = load(&text, &[("broker.enabled", "false")])?;
    let mms = on.ieds.iter().flat_map(|i| &i.traffic).find(|t| t.name == "mms").ok_or("no mms source")?;
    ensure(
        matches!(mms.profile.pattern, gridlink::timing::TrafficPattern::Poisson { load_bps } if load_bps >= 90 * MBPS),
        || "MMS offered load below 90 Mb/s".into(),
    )?;
    ensure(on.links[0].capacity == 100 * MBPS, || "link is not 100 Mb/s".into())?;

    let r_on = sim::run(&on).map_err(|e| e.to_string())?.report;
    let r_off = sim::run(&off).map_err(|e| e.to_string())?.report;
    let late = |r: &sim::SimReport| {
        r.class(MessageClass::Goose).violations + r.class(MessageClass::Sv).violations
    };
    let fails = |r: &sim::SimReport, t| {
        verify_timing(r, t)
            .iter()
            .filter(|v| v.class.is_priority())
            .count()
    };
    ensure(late(&r_on) == 0 && fails(&r_on, &on.timing) == 0, || {
        format!("broker on: {} GOOSE/SV deliveries late", late(&r_on))
    })?;
    for c in [MessageClass::Goose, MessageClass::Sv] {
        let cr = r_on.class(c);
        ensure(cr.delivered > 0, || format!("broker on: no {c} delivered"))?;
    }
    ensure(late(&r_off) > 0, || "broker off: no violations".into())?;
    let p99 = |r: &sim::SimReport| r.class(MessageClass::Goose).delay_us.map(|d| d.p99);
    let (Some(p_on), Some(p_off)) = (p99(&r_on), p99(&r_off)) else {
        return Err("missing GOOSE delays".into());
    };
    let ratio = p_off / p_on;
    ensure(ratio >= RATIO_FLOOR, || format!("GOOSE p99 ratio {ratio:.2} below {RATIO_FLOOR}"))?;
    Ok(format!(
        "on: 0 late, GOOSE p99 {p_on:.1} us; off: {} late, GOOSE p99 {p_off:.1} us; ratio {ratio:.2}",
        late(&r_off)
    ))
}

fn determinism() -> Verdict {
    let mut names = Vec::new();
    for (name, text) in shipped_scenarios()? {
        let s = load(&text, &[])?;
        let a = sim::run(&s).map_err(|e| e.to_string())?;
        // the second run happens on another thread to rule out thread-local state
        let b = std::thread::scope(|sc| sc.spawn(|| sim::run(&s)).join())
            .map_err(|_| "second run panicked".to_string())?
            .map_err(|e| e.to_string())?;
        ensure(a.report.to_json() == b.report.to_json(), || format!("{name}: report.json differs"))?;
        ensure(a.events_csv() == b.events_csv(), || format!("{name}: events.csv differs"))?;
        names.push(format!("{name} ({} events)", a.events.len()));
    }
    Ok(format!("byte-identical report.json and events.csv: {}", names.join(", ")))
}
