//! Executable reference implementation of a small HMAC-authenticated
//! message protocol, instrumented by construction: every protocol-relevant
//! library call (drawing randomness, computing the HMAC, socket I/O) also
//! writes one call-event line, producing the stream a runtime monitor
//! consumes.
//!
//! The client draws a fresh message, authenticates `len || tag || message`
//! with HMAC-SHA-256 under a pre-shared key, appends the MAC and sends the
//! result over a TCP socket. The server splits a received payload into its
//! components, recomputes the MAC over the authenticated prefix and reports
//! `1` on a match and `0` on a mismatch. Fault switches corrupt the traffic
//! after the MAC computation to exercise a monitor's rejection paths.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use hmac::{Hmac, Mac};
use msrmon_core::ProgramEvent;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;

/// Key both sides fall back to when none is configured explicitly.
pub const DEFAULT_KEY: [u8; 32] = *b"0123456789abcdef0123456789abcdef";

/// Tag byte prepended to every message.
pub const TAG: u8 = 0x02;

/// Length of the HMAC-SHA-256 tail in bytes.
pub const MAC_LEN: usize = 32;

/// Width of the big-endian message-length prefix in bytes.
pub const LEN_PREFIX: usize = 8;

/// Messages may not exceed this size.
pub const MAX_MESSAGE: usize = 1 << 16;

/// Protocol model this implementation is monitored against.
pub const PROTOCOL_SPEC: &str = include_str!("../../../specs/simplemac.spthy");

/// Name of the event that injects the pre-shared key into a monitor.
pub const SETUP_EVENT: &str = "setup_psk";

/// Traffic mutation applied after the MAC has been computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Flip the lowest bit of the last MAC byte before transmission.
    CorruptHmac,
    /// Drop the last byte of the payload before transmission.
    TruncatePayload,
    /// Transmit the payload a second time, below the instrumented send,
    /// the way an on-path attacker would replay it.
    Replay,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Fault::None),
            "corrupt-hmac" => Ok(Fault::CorruptHmac),
            "truncate-payload" => Ok(Fault::TruncatePayload),
            "replay" => Ok(Fault::Replay),
            other => Err(format!(
                "unknown fault `{other}`; expected none, corrupt-hmac, truncate-payload or replay"
            )),
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Fault::None => "none",
            Fault::CorruptHmac => "corrupt-hmac",
            Fault::TruncatePayload => "truncate-payload",
            Fault::Replay => "replay",
        };
        f.write_str(name)
    }
}

/// Encodes the authenticated prefix: an 8-byte big-endian message length,
/// the tag byte and the message itself.
pub fn encode_data(tag: u8, msg: &[u8]) -> Vec<u8> {
    assert!(msg.len() <= MAX_MESSAGE, "message exceeds {MAX_MESSAGE} bytes");
    let mut out = Vec::with_capacity(LEN_PREFIX + 1 + msg.len());
    out.extend_from_slice(&(msg.len() as u64).to_be_bytes());
    out.push(tag);
    out.extend_from_slice(msg);
    out
}

/// Encodes a full payload: the authenticated prefix followed by the MAC.
pub fn encode_payload(tag: u8, msg: &[u8], mac: &[u8]) -> Vec<u8> {
    let mut out = encode_data(tag, msg);
    out.extend_from_slice(mac);
    out
}

/// Splits a payload into tag, message and MAC tail. The tail is whatever
/// follows the message, so a truncated transmission still splits (into a
/// short, failing MAC).
pub fn split_payload(bytes: &[u8]) -> Option<(u8, &[u8], &[u8])> {
    if bytes.len() < LEN_PREFIX + 1 {
        return None;
    }
    let len = u64::from_be_bytes(bytes[..LEN_PREFIX].try_into().unwrap()) as usize;
    let tag = bytes[LEN_PREFIX];
    let rest = &bytes[LEN_PREFIX + 1..];
    if rest.len() < len {
        return None;
    }
    Some((tag, &rest[..len], &rest[len..]))
}

/// HMAC-SHA-256 of `data` under `key`.
pub fn compute_hmac(key: &[u8], data: &[u8]) -> Vec<u8> {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("any key length is accepted");
    mac.update(data);
    mac.finalize().into_bytes().to_vec()
}

/// The event announcing the pre-shared key to a monitor. Produced by a
/// setup script rather than by instrumentation, mirroring a key that is
/// read from a file instead of being drawn at runtime.
pub fn setup_event(key: &[u8]) -> ProgramEvent {
    ProgramEvent::new(SETUP_EVENT, vec![], key.to_vec())
}

/// Order-preserving event writer shared by all session threads. One line
/// is written per event; the lock makes the stream a total order.
#[derive(Clone)]
pub struct EventSink {
    out: Arc<Mutex<Box<dyn Write + Send>>>,
}

impl EventSink {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        EventSink { out: Arc::new(Mutex::new(Box::new(out))) }
    }

    /// A sink backed by a shared in-memory buffer, for tests.
    pub fn collector() -> (Self, Arc<Mutex<Vec<u8>>>) {
        struct Shared(Arc<Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().expect("collector lock").extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let buf = Arc::new(Mutex::new(Vec::new()));
        (EventSink::new(Shared(buf.clone())), buf)
    }

    pub fn emit(&self, event: &ProgramEvent) {
        let mut out = self.out.lock().expect("event writer lock");
        writeln!(out, "{}", event.to_json_line())
            .and_then(|_| out.flush())
            .expect("event stream write failed");
    }
}

/// Parameters of one client session.
#[derive(Debug, Clone)]
pub struct ClientParams {
    pub key: [u8; 32],
    pub tag: u8,
    pub message: Vec<u8>,
    pub fault: Fault,
}

impl ClientParams {
    pub fn honest(message: Vec<u8>) -> Self {
        ClientParams { key: DEFAULT_KEY, tag: TAG, message, fault: Fault::None }
    }
}

/// Runs one client session: records the fresh message, computes and
/// records the MAC, applies the configured fault and transmits. Returns
/// the verdict bytes the server answered with (`b'1'` per accepted
/// payload, `b'0'` otherwise).
pub fn run_client(addr: &str, params: &ClientParams, sink: &EventSink) -> std::io::Result<Vec<u8>> {
    sink.emit(&ProgramEvent::new("random", vec![], params.message.clone()));

    let data = encode_data(params.tag, &params.message);
    let mac = compute_hmac(&params.key, &data);
    sink.emit(&ProgramEvent::new("hmac", vec![params.key.to_vec(), data], mac.clone()));

    let mut payload = encode_payload(params.tag, &params.message, &mac);
    match params.fault {
        Fault::CorruptHmac => {
            let last = payload.len() - 1;
            payload[last] ^= 0x01;
        }
        Fault::TruncatePayload => {
            payload.pop();
        }
        Fault::None | Fault::Replay => {}
    }

    let mut stream = TcpStream::connect(addr)?;
    stream.write_all(&payload)?;
    sink.emit(&ProgramEvent::new("send", vec![payload.clone()], Vec::new()));
    if params.fault == Fault::Replay {
        // Wire-level duplication: no further protocol send is recorded.
        stream.write_all(&payload)?;
    }
    stream.shutdown(Shutdown::Write)?;

    let mut verdicts = Vec::new();
    stream.read_to_end(&mut verdicts)?;
    Ok(verdicts)
}

/// Accepts `sessions` connections, handling each on its own thread, and
/// returns the verdicts in completion order. Each received payload is
/// recorded, re-authenticated and answered with one verdict byte.
pub fn run_server(
    listener: TcpListener,
    sessions: usize,
    key: [u8; 32],
    sink: &EventSink,
) -> std::io::Result<Vec<u8>> {
    let verdicts = Arc::new(Mutex::new(Vec::new()));
    let mut handles = Vec::new();
    for _ in 0..sessions {
        let (stream, _) = listener.accept()?;
        let sink = sink.clone();
        let key = key.to_vec();
        let verdicts = Arc::clone(&verdicts);
        handles.push(std::thread::spawn(move || {
            let session = handle_connection(stream, &key, &sink);
            verdicts.lock().expect("verdict lock").extend(session);
        }));
    }
    for handle in handles {
        handle.join().expect("session thread panicked");
    }
    let verdicts = verdicts.lock().expect("verdict lock").clone();
    Ok(verdicts)
}

fn handle_connection(mut stream: TcpStream, key: &[u8], sink: &EventSink) -> Vec<u8> {
    let mut buf = Vec::new();
    if stream.read_to_end(&mut buf).is_err() {
        return Vec::new();
    }
    let mut rest = &buf[..];
    let mut verdicts = Vec::new();
    while !rest.is_empty() {
        let Some((payload, tail)) = take_payload(rest) else {
            // Too short to carry even the length prefix and tag: record
            // what arrived and report a mismatch.
            sink.emit(&ProgramEvent::new("receive", vec![], rest.to_vec()));
            verdicts.push(b'0');
            let _ = stream.write_all(b"0");
            break;
        };
        rest = tail;
        sink.emit(&ProgramEvent::new("receive", vec![], payload.to_vec()));
        let verdict = match split_payload(payload) {
            Some((_, msg, received_mac)) => {
                let data = &payload[..LEN_PREFIX + 1 + msg.len()];
                let mac = compute_hmac(key, data);
                sink.emit(&ProgramEvent::new(
                    "hmac",
                    vec![key.to_vec(), data.to_vec()],
                    mac.clone(),
                ));
                if mac == received_mac {
                    b'1'
                } else {
                    b'0'
                }
            }
            None => b'0',
        };
        verdicts.push(verdict);
        let _ = stream.write_all(&[verdict]);
    }
    verdicts
}

/// Splits one length-delimited payload off the front of a connection
/// buffer. The MAC tail is 32 bytes when available and whatever remains
/// otherwise, so a truncated transmission still yields one (failing)
/// payload.
fn take_payload(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    if bytes.len() < LEN_PREFIX + 1 {
        return None;
    }
    let len = u64::from_be_bytes(bytes[..LEN_PREFIX].try_into().unwrap()) as usize;
    let body = LEN_PREFIX + 1 + len;
    if bytes.len() < body {
        return None;
    }
    let end = (body + MAC_LEN).min(bytes.len());
    Some((&bytes[..end], &bytes[end..]))
}

/// Which side's call events a generated trace reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "client" | "Client" => Ok(Role::Client),
            "server" | "Server" => Ok(Role::Server),
            other => Err(format!("unknown role `{other}`; expected client or server")),
        }
    }
}

/// Parameters for deterministic offline trace generation.
#[derive(Debug, Clone)]
pub struct TraceSpec {
    pub role: Role,
    pub sessions: usize,
    pub seed: u64,
    /// Number of sessions whose events interleave round-robin. 1 keeps
    /// sessions strictly sequential.
    pub concurrency: usize,
    /// Faults keyed by session index.
    pub faults: BTreeMap<usize, Fault>,
}

impl TraceSpec {
    pub fn honest(role: Role, sessions: usize, seed: u64) -> Self {
        TraceSpec { role, sessions, seed, concurrency: 1, faults: BTreeMap::new() }
    }
}

/// A generated trace plus the position where a monitor must reject it, if
/// any fault makes it invalid.
#[derive(Debug, Clone)]
pub struct GeneratedTrace {
    pub events: Vec<ProgramEvent>,
    /// Zero-based index of the first event that violates the protocol
    /// model. Replayed payloads are not violations: the model has no
    /// replay protection.
    pub expected_rejection: Option<usize>,
}

impl GeneratedTrace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&event.to_json_line());
            out.push('\n');
        }
        out
    }
}

/// Generates the event trace of `sessions` protocol runs as observed on
/// one side, deterministically from the seed. The first line injects the
/// pre-shared key. Sessions within a concurrency window interleave
/// round-robin: all of their first events, then all of their second
/// events, and so on.
pub fn gen_trace(spec: &TraceSpec) -> GeneratedTrace {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut key = [0u8; 32];
    rng.fill_bytes(&mut key);

    let mut events = vec![setup_event(&key)];
    let mut expected_rejection = None;
    let window = spec.concurrency.max(1);

    let mut session = 0;
    while session < spec.sessions {
        let upto = (session + window).min(spec.sessions);
        // rounds[k] holds the k-th event of every session in the window,
        // paired with whether that event violates the model.
        let mut rounds: Vec<Vec<(ProgramEvent, bool)>> = Vec::new();
        for index in session..upto {
            let fault = spec.faults.get(&index).copied().unwrap_or(Fault::None);
            let len = rng.gen_range(16..=48);
            let mut msg = vec![0u8; len];
            rng.fill_bytes(&mut msg);
            for (round, event) in session_events(&key, &msg, fault, spec.role) {
                if rounds.len() <= round {
                    rounds.resize(round + 1, Vec::new());
                }
                rounds[round].push(event);
            }
        }
        for round in rounds {
            for (event, rejects) in round {
                if rejects && expected_rejection.is_none() {
                    expected_rejection = Some(events.len());
                }
                events.push(event);
            }
        }
        session = upto;
    }
    GeneratedTrace { events, expected_rejection }
}

/// The events one session contributes, tagged with their round for
/// interleaving and whether the event violates the protocol model.
fn session_events(
    key: &[u8],
    msg: &[u8],
    fault: Fault,
    role: Role,
) -> Vec<(usize, (ProgramEvent, bool))> {
    let data = encode_data(TAG, msg);
    let mac = compute_hmac(key, &data);
    let mut payload = encode_payload(TAG, msg, &mac);
    match fault {
        Fault::CorruptHmac => {
            let last = payload.len() - 1;
            payload[last] ^= 0x01;
        }
        Fault::TruncatePayload => {
            payload.pop();
        }
        Fault::None | Fault::Replay => {}
    }
    let faulty = matches!(fault, Fault::CorruptHmac | Fault::TruncatePayload);

    match role {
        Role::Server => {
            let receive = ProgramEvent::new("receive", vec![], payload.clone());
            let hmac = ProgramEvent::new("hmac", vec![key.to_vec(), data], mac);
            // A corrupted or truncated payload still parses (the MAC tail
            // is whatever follows the message), so the monitor rejects at
            // the recomputation, where the embedded MAC fails the equality.
            let mut out = vec![(0, (receive.clone(), false)), (1, (hmac.clone(), faulty))];
            if fault == Fault::Replay {
                out.push((2, (receive, false)));
                out.push((3, (hmac, false)));
            }
            out
        }
        Role::Client => {
            let random = ProgramEvent::new("random", vec![], msg.to_vec());
            let hmac = ProgramEvent::new("hmac", vec![key.to_vec(), data], mac);
            // Faults mutate the payload after the MAC computation, so the
            // transmitted bytes no longer match the pending output and the
            // monitor rejects at the send.
            let send = ProgramEvent::new("send", vec![payload], Vec::new());
            vec![(0, (random, false)), (1, (hmac, false)), (2, (send, faulty))]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use msrmon_core::{elaborate, parse_spec, select_role, split_ruleset, MonitorState, RunMode};
    use std::collections::BTreeSet;

    fn monitor_for(role: &str) -> MonitorState {
        let flags: BTreeSet<String> = ["MONITOR".to_string()].into_iter().collect();
        let spec = parse_spec(PROTOCOL_SPEC, &flags).expect("bundled spec parses");
        let elab = elaborate(&spec);
        let selection = select_role(&elab, role).expect("role exists");
        let rules = split_ruleset(&selection.rules).expect("decomposes");
        MonitorState::new(rules, spec.formats, RunMode::Monitor)
    }

    #[test]
    fn data_layout_is_len_tag_message() {
        let data = encode_data(0x02, &[0x68, 0x69]);
        assert_eq!(hex_of(&data), "0000000000000002026869");
    }

    #[test]
    fn payload_appends_the_mac() {
        let payload = encode_payload(0x02, &[0x68, 0x69], &[0xFF]);
        assert_eq!(hex_of(&payload), "0000000000000002026869ff");
    }

    #[test]
    fn hmac_matches_the_published_test_vector() {
        // RFC 4231, test case 2.
        let mac = compute_hmac(b"Jefe", b"what do ya want for nothing?");
        assert_eq!(
            hex_of(&mac),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn split_inverts_encode() {
        let mac = [0xAB; 32];
        let payload = encode_payload(TAG, b"hello", &mac);
        let (tag, msg, tail) = split_payload(&payload).unwrap();
        assert_eq!(tag, TAG);
        assert_eq!(msg, b"hello");
        assert_eq!(tail, mac);
    }

    #[test]
    fn truncated_payload_still_splits_with_short_mac() {
        let mac = [0xAB; 32];
        let mut payload = encode_payload(TAG, b"hello", &mac);
        payload.pop();
        let (_, msg, tail) = split_payload(&payload).unwrap();
        assert_eq!(msg, b"hello");
        assert_eq!(tail.len(), MAC_LEN - 1);
    }

    #[test]
    fn take_payload_separates_back_to_back_copies() {
        let mac = compute_hmac(&DEFAULT_KEY, b"data");
        let one = encode_payload(TAG, b"msg", &mac);
        let mut wire = one.clone();
        wire.extend_from_slice(&one);
        let (first, rest) = take_payload(&wire).unwrap();
        assert_eq!(first, &one[..]);
        let (second, rest) = take_payload(rest).unwrap();
        assert_eq!(second, &one[..]);
        assert!(rest.is_empty());
    }

    #[test]
    fn hand_rolled_bytes_agree_with_the_spec_formats() {
        let flags: BTreeSet<String> = ["MONITOR".to_string()].into_iter().collect();
        let spec = parse_spec(PROTOCOL_SPEC, &flags).expect("bundled spec parses");
        let msg = b"hello world".to_vec();
        let mac = compute_hmac(&DEFAULT_KEY, &encode_data(TAG, &msg));

        let mut bindings = BTreeMap::new();
        bindings.insert("t".to_string(), msrmon_core::Value::Bytes(vec![TAG]));
        bindings.insert("m".to_string(), msrmon_core::Value::Bytes(msg.clone()));
        bindings.insert("h".to_string(), msrmon_core::Value::Bytes(mac.clone()));
        let constructed = spec.formats.construct("payload", &bindings).unwrap();
        assert_eq!(constructed, encode_payload(TAG, &msg, &mac));

        bindings.remove("h");
        let constructed = spec.formats.construct("data", &bindings).unwrap();
        assert_eq!(constructed, encode_data(TAG, &msg));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = TraceSpec::honest(Role::Server, 5, 7);
        let a = gen_trace(&spec).to_text();
        let b = gen_trace(&spec).to_text();
        assert_eq!(a, b);
        let other = gen_trace(&TraceSpec::honest(Role::Server, 5, 8)).to_text();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_sessions_yield_only_the_setup_line() {
        let trace = gen_trace(&TraceSpec::honest(Role::Server, 0, 1));
        assert_eq!(trace.events.len(), 1);
        assert_eq!(trace.events[0].name, SETUP_EVENT);
        assert_eq!(trace.expected_rejection, None);
    }

    #[test]
    fn honest_server_trace_is_accepted() {
        let trace = gen_trace(&TraceSpec::honest(Role::Server, 4, 1));
        let mut monitor = monitor_for("Server");
        for event in &trace.events {
            let rejection = monitor.process_event(event).expect("no engine error");
            assert!(rejection.is_none(), "rejected: {:?}", rejection);
        }
        assert_eq!(monitor.config_count(), 1);
    }

    #[test]
    fn honest_client_trace_is_accepted() {
        let trace = gen_trace(&TraceSpec::honest(Role::Client, 4, 2));
        let mut monitor = monitor_for("Client");
        for event in &trace.events {
            let rejection = monitor.process_event(event).expect("no engine error");
            assert!(rejection.is_none(), "rejected: {:?}", rejection);
        }
    }

    #[test]
    fn corrupt_mac_is_rejected_at_the_recomputation() {
        let mut spec = TraceSpec::honest(Role::Server, 3, 3);
        spec.faults.insert(1, Fault::CorruptHmac);
        let trace = gen_trace(&spec);
        let expected = trace.expected_rejection.expect("fault marks a rejection");

        let mut monitor = monitor_for("Server");
        let rejection = monitor.process_trace(&trace.events).expect("no engine error");
        let rejection = rejection.expect("corrupt trace is rejected");
        assert_eq!(rejection.index, expected);
        assert!(
            rejection.explanations.iter().any(|e| e.contains("Eq(h, hp)")),
            "explanations: {:?}",
            rejection.explanations
        );
    }

    #[test]
    fn truncated_payload_is_rejected_at_the_recomputation() {
        let mut spec = TraceSpec::honest(Role::Server, 2, 4);
        spec.faults.insert(0, Fault::TruncatePayload);
        let trace = gen_trace(&spec);

        let mut monitor = monitor_for("Server");
        let rejection = monitor
            .process_trace(&trace.events)
            .expect("no engine error")
            .expect("truncated trace is rejected");
        assert_eq!(Some(rejection.index), trace.expected_rejection);
        assert!(rejection.explanations.iter().any(|e| e.contains("Eq(h, hp)")));
    }

    #[test]
    fn replayed_payload_is_accepted() {
        let mut spec = TraceSpec::honest(Role::Server, 2, 5);
        spec.faults.insert(0, Fault::Replay);
        let trace = gen_trace(&spec);
        assert_eq!(trace.expected_rejection, None);

        let mut monitor = monitor_for("Server");
        let rejection = monitor.process_trace(&trace.events).expect("no engine error");
        assert!(rejection.is_none(), "replay must be accepted: {:?}", rejection);
    }

    #[test]
    fn faulty_client_trace_is_rejected_at_the_send() {
        let mut spec = TraceSpec::honest(Role::Client, 2, 6);
        spec.faults.insert(1, Fault::CorruptHmac);
        let trace = gen_trace(&spec);

        let mut monitor = monitor_for("Client");
        let rejection = monitor
            .process_trace(&trace.events)
            .expect("no engine error")
            .expect("corrupted send is rejected");
        assert_eq!(Some(rejection.index), trace.expected_rejection);
        assert_eq!(trace.events[rejection.index].name, "send");
    }

    #[test]
    fn interleaved_sessions_are_accepted() {
        let mut spec = TraceSpec::honest(Role::Server, 8, 9);
        spec.concurrency = 4;
        let trace = gen_trace(&spec);
        // The interleaving puts four receives ahead of their recomputations.
        assert_eq!(trace.events[1].name, "receive");
        assert_eq!(trace.events[4].name, "receive");
        assert_eq!(trace.events[5].name, "hmac");

        let mut monitor = monitor_for("Server");
        let rejection = monitor.process_trace(&trace.events).expect("no engine error");
        assert!(rejection.is_none(), "interleaving must be accepted: {:?}", rejection);
        assert_eq!(monitor.config_count(), 1, "the protocol is deterministic");
    }

    #[test]
    fn end_to_end_sessions_produce_accepted_streams() {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("addr").to_string();
        let (server_sink, server_buf) = EventSink::collector();
        let (client_sink, client_buf) = EventSink::collector();

        let sessions = 3;
        let server = std::thread::spawn(move || {
            run_server(listener, sessions, DEFAULT_KEY, &server_sink).expect("server runs")
        });
        let mut clients = Vec::new();
        for i in 0..sessions {
            let addr = addr.clone();
            let sink = client_sink.clone();
            clients.push(std::thread::spawn(move || {
                let mut message = vec![i as u8; 24];
                message[0] = 0x10 + i as u8;
                let params = ClientParams::honest(message);
                run_client(&addr, &params, &sink).expect("client runs")
            }));
        }
        for client in clients {
            assert_eq!(client.join().expect("client thread"), vec![b'1']);
        }
        let verdicts = server.join().expect("server thread");
        assert_eq!(verdicts, vec![b'1'; sessions]);

        for (role, buf) in [("Server", server_buf), ("Client", client_buf)] {
            let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
            let mut events = vec![setup_event(&DEFAULT_KEY)];
            events.extend(msrmon_core::parse_trace(&text).expect("stream parses"));
            let mut monitor = monitor_for(role);
            let rejection = monitor.process_trace(&events).expect("no engine error");
            assert!(rejection.is_none(), "{role} stream rejected: {:?}", rejection);
        }
    }

    #[test]
    fn corrupting_client_yields_server_verdict_zero() {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("addr").to_string();
        let (server_sink, _) = EventSink::collector();
        let (client_sink, _) = EventSink::collector();

        let server =
            std::thread::spawn(move || run_server(listener, 1, DEFAULT_KEY, &server_sink));
        let mut params = ClientParams::honest(b"attack at dawn".to_vec());
        params.fault = Fault::CorruptHmac;
        let verdicts = run_client(&addr, &params, &client_sink).expect("client runs");
        assert_eq!(verdicts, vec![b'0']);
        assert_eq!(server.join().unwrap().unwrap(), vec![b'0']);
    }

    #[test]
    fn replaying_client_is_accepted_twice_by_the_server() {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("addr").to_string();
        let (server_sink, server_buf) = EventSink::collector();
        let (client_sink, _) = EventSink::collector();

        let server =
            std::thread::spawn(move || run_server(listener, 1, DEFAULT_KEY, &server_sink));
        let mut params = ClientParams::honest(b"pay the bearer".to_vec());
        params.fault = Fault::Replay;
        let verdicts = run_client(&addr, &params, &client_sink).expect("client runs");
        assert_eq!(verdicts, vec![b'1', b'1'], "no replay protection in the protocol");
        assert_eq!(server.join().unwrap().unwrap(), vec![b'1', b'1']);

        // The server's event stream shows both copies and stays accepted.
        let text = String::from_utf8(server_buf.lock().unwrap().clone()).unwrap();
        let mut events = vec![setup_event(&DEFAULT_KEY)];
        events.extend(msrmon_core::parse_trace(&text).expect("stream parses"));
        assert_eq!(events.iter().filter(|e| e.name == "receive").count(), 2);
        let mut monitor = monitor_for("Server");
        assert!(monitor.process_trace(&events).expect("no engine error").is_none());
    }

    fn hex_of(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}
