use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridlink::classify::classify_frame;
use gridlink::codec::{decode_goose, decode_sv, ethertype, CodecError, EthernetHeader};
use gridlink::scenario::{apply_overrides, parse_override, parse_scenario, ScenarioError};
use gridlink::sim::{self, verify_timing, Scenario, SimOutput};
use gridlink::MessageClass;

const EXIT_VIOLATIONS: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "gridlink", version, about = "IEC 61850 bandwidth broker and link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, events.csv and summary.txt.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print a field-by-field breakdown of a frame given as hex or a file.
    Decode {
        /// Hex string, or a file holding a hex dump or raw frame bytes.
        input: String,
    },
    /// Run a scenario once per parameter value and write sweep.csv.
    Sweep {
        scenario: PathBuf,
        /// Override key to vary, e.g. mms.load
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 50mbps,70mbps,90mbps
        #[arg(long)]
        values: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "gridlink-out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value override, repeatable (run.duration=2s, broker.enabled=false, mms.load=95mbps).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// A failure that maps to exit code 2.
struct Invalid(String);

impl From<std::io::Error> for Invalid {
    fn from(e: std::io::Error) -> Self {
        Invalid(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, common } => cmd_run(&scenario, &common),
        Command::Decode { input } => cmd_decode(&input),
        Command::Sweep {
            scenario,
            param,
            values,
            common,
        } => cmd_sweep(&scenario, &param, &values, &common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn overrides(common: &Common) -> Result<Vec<(String, String)>, Invalid> {
    let mut list = common
        .set
        .iter()
        .map(|s| parse_override(s).map_err(|e| Invalid(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = common.seed {
        list.push(("run.seed".into(), seed.to_string()));
    }
    Ok(list)
}

fn located(path: &Path, e: ScenarioError) -> Invalid {
    match e.location {
        Some((line, col)) => Invalid(format!("{}:{line}:{col}: {}", path.display(), e.message)),
        None => Invalid(format!("{}: {}", path.display(), e.message)),
    }
}

fn load(path: &Path, overrides: &[(String, String)]) -> Result<Scenario, Invalid> {
    let text = fs::read_to_string(path)
        .map_err(|e| Invalid(format!("cannot read {}: {e}", path.display())))?;
    let text = apply_overrides(&text, overrides).map_err(|e| located(path, e))?;
    parse_scenario(&text).map_err(|e| located(path, e))
}

fn simulate(scenario: &Scenario) -> Result<SimOutput, Invalid> {
    sim::run(scenario).map_err(|e| Invalid(e.to_string()))
}

fn cmd_run(path: &Path, common: &Common) -> Result<u8, Invalid> {
    let scenario = load(path, &overrides(common)?)?;
    let out = simulate(&scenario)?;
    let violations = verify_timing(&out.report, &scenario.timing);
    let summary = out.report.summary(&violations);
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("report.json"), out.report.to_json())?;
    fs::write(common.out.join("events.csv"), out.events_csv())?;
    fs::write(common.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wrote {}", common.out.display());
    Ok(if violations.is_empty() { 0 } else { EXIT_VIOLATIONS })
}

fn cmd_sweep(path: &Path, param: &str, values: &str, common: &Common) -> Result<u8, Invalid> {
    let values: Vec<&str> = values.split(',').map(str::trim).collect();
    if values.iter().any(|v| v.is_empty()) {
        return Err(Invalid("--values needs a non-empty comma-separated list".into()));
    }
    let base = overrides(common)?;
    let scenarios = values
        .iter()
        .map(|v| {
            let mut o = base.clone();
            let (k, v) = parse_override(&format!("{param}={v}")).map_err(|e| Invalid(e.to_string()))?;
            o.push((k, v));
            load(path, &o)
        })
        .collect::<Result<Vec<_>, _>>()?;

    // independent runs share nothing, so each gets its own thread
    let outputs: Vec<Result<SimOutput, Invalid>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|sc| s.spawn(move || simulate(sc)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });

    let mut csv = String::from("value");
    for c in MessageClass::ALL {
        let _ = write!(csv, ",{}_p99_us", c.as_str().to_ascii_lowercase());
    }
    for c in MessageClass::ALL {
        let _ = write!(csv, ",{}_violations", c.as_str().to_ascii_lowercase());
    }
    csv.push_str(",bounds_met\n");
    let mut any_violation = false;
    for ((value, scenario), out) in values.iter().zip(&scenarios).zip(outputs) {
        let out = out?;
        let violations = verify_timing(&out.report, &scenario.timing);
        any_violation |= !violations.is_empty();
        csv.push_str(value);
        for c in MessageClass::ALL {
            match out.report.class(c).delay_us {
                Some(d) => {
                    let _ = write!(csv, ",{:.3}", d.p99);
                }
                None => csv.push(','),
            }
        }
        for c in MessageClass::ALL {
            let _ = write!(csv, ",{}", out.report.class(c).violations);
        }
        let _ = writeln!(csv, ",{}", violations.is_empty());
    }
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(if any_violation { EXIT_VIOLATIONS } else { 0 })
}

/// Accepts hex with optional whitespace, `:`/`-` separators, a `0x` prefix
/// and `#` comment lines.
fn parse_hex(text: &str) -> Option<Vec<u8>> {
    let mut digits = String::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        let line = line.trim();
        let line = line.strip_prefix("0x").unwrap_or(line);
        digits.extend(
            line.chars()
                .filter(|c| !c.is_whitespace() && *c != ':' && *c != '-'),
        );
    }
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    (0..digits.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(digits.get(i..i + 2)?, 16).ok())
        .collect()
}

fn read_frame(input: &str) -> Result<Vec<u8>, Invalid> {
    let path = Path::new(input);
    if path.is_file() {
        let bytes = fs::read(path)?;
        if let Some(parsed) = std::str::from_utf8(&bytes).ok().and_then(parse_hex) {
            return Ok(parsed);
        }
        return Ok(bytes);
    }
    parse_hex(input).ok_or_else(|| Invalid(format!("{input:?} is neither a file nor a hex string")))
}

fn describe(bytes: &[u8]) -> Result<String, CodecError> {
    let header = EthernetHeader::parse(bytes)?;
    let mut out = match header.ethertype {
        ethertype::GOOSE => decode_goose(bytes)?.to_string(),
        ethertype::SV => decode_sv(bytes)?.to_string(),
        other => {
            let mut s = String::from("ethernet\n");
            let _ = writeln!(s, "  dst                 {}", header.link.dst);
            let _ = writeln!(s, "  src                 {}", header.link.src);
            if let Some(tag) = header.link.vlan {
                let _ = writeln!(s, "  vlan                pcp={} vid={}", tag.pcp, tag.vid);
            }
            let _ = writeln!(s, "  ethertype           {other:#06x}");
            s
        }
    };
    let c = classify_frame(bytes)?;
    let _ = writeln!(out, "classification");
    let _ = writeln!(out, "  class               {}", c.class);
    let _ = writeln!(out, "  queue               q{}", c.class.queue_id());
    let _ = writeln!(out, "  flow                {}", c.key);
    Ok(out)
}

fn cmd_decode(input: &str) -> Result<u8, Invalid> {
    let bytes = read_frame(input)?;
    match describe(&bytes) {
        Ok(text) => {
            print!("{text}");
            Ok(0)
        }
        Err(e) => Err(Invalid(format!("decode failed ({}): {e}", e.kind()))),
    }
}
