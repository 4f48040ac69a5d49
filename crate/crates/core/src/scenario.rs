//! Scenario files.
//!
//! A scenario is a TOML document with `[run]`, `[broker]`, `[timing]`
//! sections and `[[switch]]`, `[[link]]`, `[[ied]]` / `[[ied.traffic]]`
//! entries. Quantities carry units: rates in `bps`/`kbps`/`mbps`/`gbps`,
//! durations in `ns`/`us`/`ms`/`s`, sizes in `B`/`kB`/`KiB`/`MB`/`MiB`.
//! Unknown keys and unresolved names are errors with a line and column.
//!
//! ```toml
//! [run]
//! duration = "2s"
//!
//! [[switch]]
//! name = "s1"
//!
//! [[switch]]
//! name = "s2"
//!
//! [[link]]
//! name = "wan"
//! a = "s1"
//! b = "s2"
//! capacity = "100mbps"
//!
//! [[ied]]
//! name = "relay"
//! switch = "s1"
//!
//! [[ied.traffic]]
//! name = "trip"
//! class = "GOOSE"
//! to = "breaker"
//! frame = "150B"
//! heartbeat = "1s"
//!
//! [[ied]]
//! name = "breaker"
//! switch = "s2"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::time::Duration;

use serde::Deserialize;
use toml::Spanned;

use crate::broker::Bps;
use crate::classify::MessageClass;
use crate::codec::MacAddress;
use crate::sim::{
    BrokerSettings, IedSpec, LinkSpec, Scenario, SwitchSpec, TrafficSpec, DEFAULT_CONTROL_DELAY,
    DEFAULT_TICK,
};
use crate::timing::{GooseSchedule, TimingTable, TrafficPattern, TrafficProfile};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    /// 1-based line and column, when the error points into the document.
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((line, col)) => write!(f, "{line}:{col}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before
        .rfind('\n')
        .map_or(before, |i| &before[i + 1..])
        .chars()
        .count()
        + 1;
    (line, col)
}

struct Ctx<'t> {
    text: &'t str,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, message: impl Into<String>) -> ScenarioError {
        ScenarioError {
            location: Some(line_col(self.text, span.start)),
            message: message.into(),
        }
    }
}

/// A scalar as written in the file; unit handling happens after parsing so
/// the error can point at the value.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Scalar {
    Int(i64),
    Float(f64),
    Str(String),
}

type S<T> = Spanned<T>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    run: Option<S<RawRun>>,
    broker: Option<S<RawBroker>>,
    timing: Option<S<RawTiming>>,
    #[serde(default)]
    switch: Vec<S<RawSwitch>>,
    #[serde(default)]
    link: Vec<S<RawLink>>,
    #[serde(default)]
    ied: Vec<S<RawIed>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    name: Option<S<String>>,
    duration: Option<S<Scalar>>,
    seed: Option<S<i64>>,
    control_delay: Option<S<Scalar>>,
    tick: Option<S<Scalar>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBroker {
    enabled: Option<bool>,
    shared_cap_max: Option<S<Scalar>>,
    shared_cap_floor: Option<S<Scalar>>,
    best_effort_floor: Option<S<Scalar>>,
    idle_timeout: Option<S<Scalar>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTiming {
    goose: Option<S<Scalar>>,
    sv: Option<S<Scalar>>,
    mms: Option<S<Scalar>>,
    time_sync: Option<S<Scalar>>,
    other: Option<S<Scalar>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSwitch {
    name: S<String>,
    buffer: Option<S<Scalar>>,
    bucket: Option<S<Scalar>>,
    edge_capacity: Option<S<Scalar>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: S<String>,
    a: S<String>,
    b: S<String>,
    capacity: S<Scalar>,
    propagation: Option<S<Scalar>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIed {
    name: S<String>,
    switch: S<String>,
    mac: Option<S<String>>,
    #[serde(default)]
    traffic: Vec<S<RawTraffic>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraffic {
    name: S<String>,
    class: S<String>,
    to: S<String>,
    frame: S<Scalar>,
    appid: Option<S<i64>>,
    start: Option<S<Scalar>>,
    // SV
    sample_rate: Option<S<i64>>,
    // GOOSE
    heartbeat: Option<S<Scalar>>,
    event_rate: Option<S<Scalar>>,
    min_gap: Option<S<Scalar>>,
    retransmissions: Option<S<i64>>,
    // MMS, OTHER
    load: Option<S<Scalar>>,
    // TIME_SYNC, OTHER
    interval: Option<S<Scalar>>,
}

/// Parses a decimal number and multiplies it by `scale`, exactly.
fn scaled(number: &str, scale: u64) -> Option<u64> {
    let (int, frac) = number.split_once('.').unwrap_or((number, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    if !digits(int) || !digits(frac) || frac.len() > 18 {
        return None;
    }
    let int: u128 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let denom = 10u128.pow(frac.len() as u32);
    let frac: u128 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let total = int * u128::from(scale) * denom + frac * u128::from(scale);
    if !total.is_multiple_of(denom) {
        return None;
    }
    u64::try_from(total / denom).ok()
}

fn split_unit(s: &str) -> (&str, &str) {
    let s = s.trim();
    let i = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    (&s[..i], s[i..].trim())
}

fn with_unit(s: &str, units: &[(&str, u64)], what: &str) -> Result<u64, String> {
    let (number, unit) = split_unit(s);
    let scale = units
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, scale)| *scale)
        .ok_or_else(|| {
            let names: Vec<&str> = units.iter().map(|(u, _)| *u).filter(|u| !u.is_empty()).collect();
            format!("{what} {s:?} needs a unit: one of {}", names.join(", "))
        })?;
    scaled(number, scale).ok_or_else(|| format!("{what} {s:?} is not a whole number of base units"))
}

const RATE_UNITS: &[(&str, u64)] = &[
    ("bps", 1),
    ("kbps", 1_000),
    ("mbps", 1_000_000),
    ("gbps", 1_000_000_000),
    ("b/s", 1),
    ("kb/s", 1_000),
    ("mb/s", 1_000_000),
    ("gb/s", 1_000_000_000),
];

/// Parses a rate such as `100mbps` or `4.032 Mb/s` into bits per second.
pub fn parse_rate(s: &str) -> Result<Bps, String> {
    with_unit(&s.to_ascii_lowercase(), RATE_UNITS, "rate")
}

/// Parses a duration such as `3ms`, `1.5s` or `250us`.
pub fn parse_duration(s: &str) -> Result<Duration, String> {
    const UNITS: &[(&str, u64)] = &[
        ("ns", 1),
        ("us", 1_000),
        ("µs", 1_000),
        ("ms", 1_000_000),
        ("s", 1_000_000_000),
    ];
    with_unit(s, UNITS, "duration").map(Duration::from_nanos)
}

/// Parses a size such as `150B`, `16KiB` or `1.5kB` into octets.
pub fn parse_size(s: &str) -> Result<u64, String> {
    const UNITS: &[(&str, u64)] = &[
        ("B", 1),
        ("kB", 1_000),
        ("KB", 1_000),
        ("KiB", 1_024),
        ("MB", 1_000_000),
        ("MiB", 1_048_576),
    ];
    with_unit(s, UNITS, "size")
}

impl Ctx<'_> {
    fn rate(&self, v: &S<Scalar>) -> Result<Bps, ScenarioError> {
        match v.get_ref() {
            Scalar::Int(n) if *n >= 0 => Ok(*n as u64),
            Scalar::Str(s) => parse_rate(s).map_err(|m| self.err(v.span(), m)),
            _ => Err(self.err(v.span(), "expected a rate such as \"100mbps\"")),
        }
    }

    fn duration(&self, v: &S<Scalar>) -> Result<Duration, ScenarioError> {
        match v.get_ref() {
            Scalar::Str(s) => parse_duration(s).map_err(|m| self.err(v.span(), m)),
            _ => Err(self.err(v.span(), "expected a duration with a unit such as \"3ms\"")),
        }
    }

    fn size(&self, v: &S<Scalar>) -> Result<u64, ScenarioError> {
        match v.get_ref() {
            Scalar::Int(n) if *n >= 0 => Ok(*n as u64),
            Scalar::Str(s) => parse_size(s).map_err(|m| self.err(v.span(), m)),
            _ => Err(self.err(v.span(), "expected a size such as \"150B\"")),
        }
    }

    fn bound(&self, v: &S<Scalar>) -> Result<Option<Duration>, ScenarioError> {
        if let Scalar::Str(s) = v.get_ref() {
            if s.eq_ignore_ascii_case("none") {
                return Ok(None);
            }
        }
        let d = self.duration(v)?;
        if d.is_zero() {
            return Err(self.err(v.span(), "timing bound must be positive, or \"none\""));
        }
        Ok(Some(d))
    }

    fn positive_duration(&self, v: &S<Scalar>) -> Result<Duration, ScenarioError> {
        let d = self.duration(v)?;
        if d.is_zero() {
            return Err(self.err(v.span(), "must be positive"));
        }
        Ok(d)
    }

    fn number(&self, v: &S<Scalar>) -> Result<f64, ScenarioError> {
        match v.get_ref() {
            Scalar::Int(n) => Ok(*n as f64),
            Scalar::Float(x) if x.is_finite() => Ok(*x),
            _ => Err(self.err(v.span(), "expected a number")),
        }
    }

    fn int_in<T: TryFrom<i64>>(&self, v: &S<i64>, what: &str) -> Result<T, ScenarioError> {
        T::try_from(*v.get_ref()).map_err(|_| self.err(v.span(), format!("{what} out of range")))
    }
}

fn convert_toml_error(text: &str, e: toml::de::Error) -> ScenarioError {
    ScenarioError {
        location: e.span().map(|s| line_col(text, s.start)),
        message: e.message().trim().to_string(),
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| convert_toml_error(text, e))?;
    let cx = Ctx { text };

    let (run, run_span) = match &raw.run {
        Some(r) => (r.get_ref(), r.span()),
        None => {
            return Err(ScenarioError {
                location: Some((1, 1)),
                message: "missing [run] section".into(),
            })
        }
    };
    let duration = match &run.duration {
        Some(d) => cx.positive_duration(d)?,
        None => return Err(cx.err(run_span, "[run] needs `duration`")),
    };
    let seed = match &run.seed {
        Some(s) => cx.int_in::<u64>(s, "seed")?,
        None => 0,
    };
    let control_delay = match &run.control_delay {
        Some(d) => cx.duration(d)?,
        None => DEFAULT_CONTROL_DELAY,
    };
    let tick = match &run.tick {
        Some(d) => cx.positive_duration(d)?,
        None => DEFAULT_TICK,
    };

    let mut broker = BrokerSettings::default();
    if let Some(b) = &raw.broker {
        let b = b.get_ref();
        if let Some(e) = b.enabled {
            broker.enabled = e;
        }
        let rate = |v: &Option<S<Scalar>>| v.as_ref().map(|v| cx.rate(v)).transpose();
        broker.shared_cap_max = rate(&b.shared_cap_max)?;
        broker.shared_cap_floor = rate(&b.shared_cap_floor)?;
        broker.best_effort_floor = rate(&b.best_effort_floor)?;
        if let Some(t) = &b.idle_timeout {
            broker.idle_timeout = cx.positive_duration(t)?;
        }
    }

    let mut timing = TimingTable::default();
    if let Some(t) = &raw.timing {
        let t = t.get_ref();
        for (class, v) in [
            (MessageClass::Goose, &t.goose),
            (MessageClass::Sv, &t.sv),
            (MessageClass::Mms, &t.mms),
            (MessageClass::TimeSync, &t.time_sync),
            (MessageClass::Other, &t.other),
        ] {
            if let Some(v) = v {
                timing.set_bound(class, cx.bound(v)?);
            }
        }
    }

    // every entry name is unique so overrides can address it
    let mut names: BTreeMap<String, Range<usize>> = BTreeMap::new();
    let mut claim = |name: &S<String>| -> Result<String, ScenarioError> {
        let n = name.get_ref();
        if n.is_empty() {
            return Err(cx.err(name.span(), "name must not be empty"));
        }
        if ["run", "broker", "timing"].contains(&n.as_str()) || n.contains('.') {
            return Err(cx.err(name.span(), format!("`{n}` cannot be used as a name")));
        }
        if let Some(first) = names.get(n) {
            let (line, _) = line_col(text, first.start);
            return Err(cx.err(
                name.span(),
                format!("name `{n}` already used on line {line}"),
            ));
        }
        names.insert(n.clone(), name.span());
        Ok(n.clone())
    };

    let mut switches = Vec::new();
    for s in &raw.switch {
        let s = s.get_ref();
        let mut spec = SwitchSpec::new(claim(&s.name)?);
        if let Some(b) = &s.buffer {
            spec.buffer_octets = cx.size(b)?;
            if spec.buffer_octets < 1514 {
                return Err(cx.err(b.span(), "buffer must hold at least one 1514-octet frame"));
            }
        }
        if let Some(b) = &s.bucket {
            spec.bucket_octets = cx.size(b)?;
            if spec.bucket_octets < 1514 {
                return Err(cx.err(b.span(), "bucket must hold at least one 1514-octet frame"));
            }
        }
        if let Some(e) = &s.edge_capacity {
            let rate = cx.rate(e)?;
            if rate == 0 {
                return Err(cx.err(e.span(), "edge capacity must be positive"));
            }
            spec.edge_capacity = Some(rate);
        }
        switches.push(spec);
    }
    let switch_known = |n: &S<String>| -> Result<String, ScenarioError> {
        if switches.iter().any(|s| s.name == *n.get_ref()) {
            Ok(n.get_ref().clone())
        } else {
            Err(cx.err(n.span(), format!("unknown switch `{}`", n.get_ref())))
        }
    };

    let mut links = Vec::new();
    for l in &raw.link {
        let span = l.span();
        let l = l.get_ref();
        let name = claim(&l.name)?;
        let a = switch_known(&l.a)?;
        let b = switch_known(&l.b)?;
        if a == b {
            return Err(cx.err(l.b.span(), "a link must join two different switches"));
        }
        let capacity = cx.rate(&l.capacity)?;
        if capacity == 0 {
            return Err(cx.err(l.capacity.span(), "capacity must be positive"));
        }
        if broker.enabled {
            if let Err(e) = broker.config_for(capacity).validate() {
                let at = raw.broker.as_ref().map_or(span, |b| b.span());
                return Err(cx.err(at, format!("broker settings for link `{name}`: {e}")));
            }
        }
        let propagation = match &l.propagation {
            Some(p) => cx.duration(p)?,
            None => Duration::ZERO,
        };
        links.push(LinkSpec {
            name,
            a,
            b,
            capacity,
            propagation,
        });
    }

    let mut ieds = Vec::new();
    let mut macs = BTreeMap::new();
    for ied in &raw.ied {
        let ied = ied.get_ref();
        let name = claim(&ied.name)?;
        let switch = switch_known(&ied.switch)?;
        let mac = match &ied.mac {
            Some(m) => {
                let mac: MacAddress = m
                    .get_ref()
                    .parse()
                    .map_err(|e| cx.err(m.span(), format!("{e}")))?;
                if mac.is_multicast() {
                    return Err(cx.err(m.span(), "IED address must be unicast"));
                }
                if macs.insert(mac, ()).is_some() {
                    return Err(cx.err(m.span(), format!("MAC {mac} already in use")));
                }
                Some(mac)
            }
            None => None,
        };
        let mut traffic = Vec::new();
        for t in &ied.traffic {
            let span = t.span();
            let t = t.get_ref();
            traffic.push(traffic_spec(&cx, span, t, claim(&t.name)?)?);
        }
        ieds.push(IedSpec {
            name,
            switch,
            mac,
            traffic,
        });
    }
    // destinations may be declared after their senders
    for (ri, ied) in raw.ied.iter().enumerate() {
        for t in &ied.get_ref().traffic {
            let to = &t.get_ref().to;
            if !ieds.iter().any(|i| i.name == *to.get_ref()) {
                return Err(cx.err(to.span(), format!("unknown IED `{}`", to.get_ref())));
            }
            if *to.get_ref() == ieds[ri].name {
                return Err(cx.err(to.span(), "traffic is addressed to its own sender"));
            }
        }
    }

    let scenario = Scenario {
        name: run
            .name
            .as_ref()
            .map_or_else(|| "scenario".to_string(), |n| n.get_ref().clone()),
        duration,
        seed,
        control_delay,
        tick,
        broker,
        timing,
        links,
        switches,
        ieds,
    };
    scenario.validate().map_err(|e| cx.err(run_span, e.to_string()))?;
    Ok(scenario)
}

fn traffic_spec(
    cx: &Ctx<'_>,
    span: Range<usize>,
    t: &RawTraffic,
    name: String,
) -> Result<TrafficSpec, ScenarioError> {
    let class: MessageClass = t
        .class
        .get_ref()
        .parse()
        .map_err(|e: String| cx.err(t.class.span(), e))?;
    let frame = cx.size(&t.frame)?;
    let frame_octets = u32::try_from(frame)
        .ok()
        .filter(|f| (60..=1514).contains(f))
        .ok_or_else(|| cx.err(t.frame.span(), "frame size must be within 60..=1514 octets"))?;

    // keys that belong to other classes are errors, not silently ignored
    let present: [(&str, Option<Range<usize>>); 7] = [
        ("sample_rate", t.sample_rate.as_ref().map(|v| v.span())),
        ("heartbeat", t.heartbeat.as_ref().map(|v| v.span())),
        ("event_rate", t.event_rate.as_ref().map(|v| v.span())),
        ("min_gap", t.min_gap.as_ref().map(|v| v.span())),
        ("retransmissions", t.retransmissions.as_ref().map(|v| v.span())),
        ("load", t.load.as_ref().map(|v| v.span())),
        ("interval", t.interval.as_ref().map(|v| v.span())),
    ];
    let allowed: &[&str] = match class {
        MessageClass::Sv => &["sample_rate"],
        MessageClass::Goose => &["heartbeat", "event_rate", "min_gap", "retransmissions"],
        MessageClass::Mms => &["load"],
        MessageClass::TimeSync => &["interval"],
        MessageClass::Other => &["load", "interval"],
    };
    for (key, at) in &present {
        if let Some(at) = at {
            if !allowed.contains(key) {
                return Err(cx.err(at.clone(), format!("`{key}` does not apply to {class} traffic")));
            }
        }
    }
    let missing = |key: &str| cx.err(span.clone(), format!("{class} traffic needs `{key}`"));

    let pattern = match class {
        MessageClass::Sv => {
            let rate = t.sample_rate.as_ref().ok_or_else(|| missing("sample_rate"))?;
            let sample_rate: u32 = cx.int_in(rate, "sample_rate")?;
            if sample_rate == 0 {
                return Err(cx.err(rate.span(), "sample rate must be positive"));
            }
            TrafficPattern::Sampled { sample_rate }
        }
        MessageClass::Goose => {
            let d = GooseSchedule::default();
            let heartbeat = match &t.heartbeat {
                Some(h) => cx.positive_duration(h)?,
                None => d.heartbeat,
            };
            let min_gap = match &t.min_gap {
                Some(g) => cx.positive_duration(g)?,
                None => d.min_gap,
            };
            if min_gap > heartbeat {
                let at = t.min_gap.as_ref().map_or(span.clone(), |g| g.span());
                return Err(cx.err(at, "min_gap exceeds the heartbeat"));
            }
            let event_rate = match &t.event_rate {
                Some(r) => {
                    let x = cx.number(r)?;
                    if x < 0.0 {
                        return Err(cx.err(r.span(), "event rate must not be negative"));
                    }
                    x
                }
                None => d.event_rate,
            };
            let retransmissions = match &t.retransmissions {
                Some(r) => cx.int_in(r, "retransmissions")?,
                None => d.retransmissions,
            };
            TrafficPattern::Goose(GooseSchedule {
                heartbeat,
                event_rate,
                min_gap,
                retransmissions,
            })
        }
        MessageClass::Mms => TrafficPattern::Poisson {
            load_bps: cx.rate(t.load.as_ref().ok_or_else(|| missing("load"))?)?,
        },
        MessageClass::TimeSync => TrafficPattern::Periodic {
            interval: cx.positive_duration(t.interval.as_ref().ok_or_else(|| missing("interval"))?)?,
        },
        MessageClass::Other => match (&t.load, &t.interval) {
            (Some(l), None) => TrafficPattern::Poisson {
                load_bps: cx.rate(l)?,
            },
            (None, Some(i)) => TrafficPattern::Periodic {
                interval: cx.positive_duration(i)?,
            },
            _ => {
                return Err(cx.err(span, "OTHER traffic needs exactly one of `load` or `interval`"))
            }
        },
    };

    let appid = match &t.appid {
        Some(a) if class.is_priority() => Some(cx.int_in::<u16>(a, "appid")?),
        Some(a) => return Err(cx.err(a.span(), "only GOOSE and SV traffic carries an APPID")),
        None => None,
    };
    let start = t.start.as_ref().map(|s| cx.duration(s)).transpose()?;
    let profile = TrafficProfile {
        class,
        frame_octets,
        pattern,
    };
    profile
        .validate()
        .map_err(|e| cx.err(span.clone(), e.to_string()))?;
    Ok(TrafficSpec {
        name,
        to: t.to.get_ref().clone(),
        appid,
        start,
        profile,
    })
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ScenarioError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ScenarioError {
        location: None,
        message: format!("override {s:?} is not of the form key=value"),
    })?;
    let (k, v) = (k.trim(), v.trim());
    if !k.contains('.') || v.is_empty() {
        return Err(ScenarioError {
            location: None,
            message: format!("override {s:?} must look like section.key=value or name.key=value"),
        });
    }
    Ok((k.to_string(), v.to_string()))
}

/// Applies `target.key = value` edits to a scenario document. `target` is
/// `run`, `broker`, `timing`, or the name of a switch, link, IED or traffic
/// entry. Values are TOML literals; anything else is taken as a string, so
/// `mms.load=95mbps` works unquoted.
pub fn apply_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<String, ScenarioError> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml_edit::DocumentMut = text.parse().map_err(|e: toml_edit::TomlError| {
        ScenarioError {
            location: e.span().map(|s| line_col(text, s.start)),
            message: e.message().trim().to_string(),
        }
    })?;
    for (path, raw) in overrides {
        let fail = |m: String| ScenarioError {
            location: None,
            message: format!("--set {path}={raw}: {m}"),
        };
        let (target, key) = path.split_once('.').ok_or_else(|| fail("missing key".into()))?;
        if key.is_empty() || key.contains('.') {
            return Err(fail("expected target.key".into()));
        }
        let value: toml_edit::Value = raw
            .parse()
            .unwrap_or_else(|_| toml_edit::Value::from(raw.as_str()));
        let table = if ["run", "broker", "timing"].contains(&target) {
            if !doc.contains_key(target) {
                doc.insert(target, toml_edit::Item::Table(toml_edit::Table::new()));
            }
            doc[target]
                .as_table_mut()
                .ok_or_else(|| fail(format!("[{target}] is not a table")))?
        } else {
            let mut found: Vec<&mut toml_edit::Table> = Vec::new();
            let is_named = |t: &toml_edit::Table| {
                t.get("name").and_then(|n| n.as_str()) == Some(target)
            };
            for (section, item) in doc.iter_mut() {
                let Some(arr) = item.as_array_of_tables_mut() else {
                    continue;
                };
                for t in arr.iter_mut() {
                    if section == "ied" {
                        if is_named(t) {
                            found.push(t);
                            continue;
                        }
                        if let Some(tr) = t
                            .get_mut("traffic")
                            .and_then(|i| i.as_array_of_tables_mut())
                        {
                            found.extend(tr.iter_mut().filter(|t| is_named(t)));
                        }
                    } else if is_named(t) {
                        found.push(t);
                    }
                }
            }
            match found.len() {
                0 => return Err(fail(format!("no section or entry named `{target}`"))),
                1 => found.pop().expect("one match"),
                _ => return Err(fail(format!("`{target}` names more than one entry"))),
            }
        };
        table[key] = toml_edit::value(value);
    }
    Ok(doc.to_string())
}

/// Parses a document after applying overrides.
pub fn load_scenario(text: &str, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
    parse_scenario(&apply_overrides(text, overrides)?)
}
