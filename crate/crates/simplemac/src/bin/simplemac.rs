//! Command-line entry points for the protocol fixture: a server, a client,
//! a deterministic offline trace generator and a setup-event printer.
//!
//! Call events go to stderr by default or to the file given with
//! `--events`; verdicts and generated traces go to stdout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{rngs::OsRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use simplemac::{
    gen_trace, run_client, run_server, setup_event, ClientParams, EventSink, Fault, Role,
    TraceSpec, DEFAULT_KEY, TAG,
};

#[derive(Parser)]
#[command(
    name = "simplemac",
    about = "Reference client/server for an HMAC-authenticated message protocol, \
             instrumented to emit call-event lines"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Accept sessions, verify each payload and print one verdict per line.
    Server {
        #[arg(long, default_value_t = 7742)]
        port: u16,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        /// Pre-shared key as 64 hex digits; defaults to the built-in key.
        #[arg(long)]
        key: Option<String>,
        /// File receiving the event lines; stderr when omitted.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Run client sessions against a server and print the verdicts.
    Client {
        #[arg(long, default_value_t = 7742)]
        port: u16,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long)]
        key: Option<String>,
        /// Mutation applied to the traffic after the MAC computation.
        #[arg(long, default_value_t = Fault::None)]
        fault: Fault,
        /// Message length in bytes.
        #[arg(long, default_value_t = 32)]
        message_len: usize,
        /// Draw messages from a seeded generator instead of the OS.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Write a deterministic pre-recorded event trace to stdout or a file.
    GenTrace {
        #[arg(long)]
        sessions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Which side's events the trace reproduces.
        #[arg(long, default_value = "server")]
        role: Role,
        /// Number of sessions whose events interleave round-robin.
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        /// Faults as INDEX:KIND, e.g. 17:corrupt-hmac. Repeatable.
        #[arg(long = "fault")]
        faults: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the setup event line announcing the pre-shared key.
    Setup {
        #[arg(long)]
        key: Option<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("simplemac: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Server { port, sessions, key, events } => {
            let key = parse_key(key.as_deref())?;
            let sink = open_sink(events.as_ref())?;
            let listener = TcpListener::bind(("127.0.0.1", port))
                .map_err(|e| format!("bind 127.0.0.1:{port}: {e}"))?;
            let verdicts =
                run_server(listener, sessions, key, &sink).map_err(|e| format!("server: {e}"))?;
            let mut out = io::stdout().lock();
            for v in verdicts {
                writeln!(out, "{}", v as char).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Cmd::Client { port, sessions, key, fault, message_len, seed, events } => {
            let key = parse_key(key.as_deref())?;
            let sink = open_sink(events.as_ref())?;
            let mut seeded = seed.map(ChaCha20Rng::seed_from_u64);
            let addr = format!("127.0.0.1:{port}");
            let mut out = io::stdout().lock();
            for _ in 0..sessions {
                let mut message = vec![0u8; message_len];
                match seeded.as_mut() {
                    Some(rng) => rng.fill_bytes(&mut message),
                    None => OsRng.fill_bytes(&mut message),
                }
                let params = ClientParams { key, tag: TAG, message, fault };
                let verdicts =
                    run_client(&addr, &params, &sink).map_err(|e| format!("client: {e}"))?;
                let text: String = verdicts.iter().map(|v| *v as char).collect();
                writeln!(out, "{text}").map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Cmd::GenTrace { sessions, seed, role, concurrency, faults, out } => {
            let faults = parse_faults(&faults)?;
            let spec = TraceSpec { role, sessions, seed, concurrency, faults };
            let trace = gen_trace(&spec);
            match out {
                Some(path) => {
                    let mut file =
                        File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    file.write_all(trace.to_text().as_bytes()).map_err(|e| e.to_string())?;
                }
                None => {
                    io::stdout()
                        .write_all(trace.to_text().as_bytes())
                        .map_err(|e| e.to_string())?;
                }
            }
            Ok(())
        }
        Cmd::Setup { key } => {
            let key = parse_key(key.as_deref())?;
            println!("{}", setup_event(&key).to_json_line());
            Ok(())
        }
    }
}

fn parse_key(hex: Option<&str>) -> Result<[u8; 32], String> {
    let Some(hex) = hex else { return Ok(DEFAULT_KEY) };
    let bytes = decode_hex(hex)?;
    bytes.try_into().map_err(|_| "key must be exactly 32 bytes (64 hex digits)".to_string())
}

fn decode_hex(s: &str) -> Result<Vec<u8>, String> {
    if s.len() % 2 != 0 {
        return Err("hex string must have an even number of digits".into());
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| e.to_string()))
        .collect()
}

fn parse_faults(entries: &[String]) -> Result<BTreeMap<usize, Fault>, String> {
    let mut faults = BTreeMap::new();
    for entry in entries {
        let Some((index, kind)) = entry.split_once(':') else {
            return Err(format!("fault `{entry}`: expected INDEX:KIND"));
        };
        let index: usize =
            index.parse().map_err(|e| format!("fault `{entry}`: bad index: {e}"))?;
        faults.insert(index, kind.parse::<Fault>()?);
    }
    Ok(faults)
}

fn open_sink(path: Option<&PathBuf>) -> Result<EventSink, String> {
    match path {
        Some(path) => {
            let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(EventSink::new(file))
        }
        None => Ok(EventSink::new(io::stderr())),
    }
}
