//! Source RCON client: packet codec, authenticated session and throttled,
//! ordered dispatch of build commands.
//!
//! Wire layout, all little-endian:
//! `i32 length | i32 request id | i32 type | body | 0x00 0x00`, where
//! `length` counts everything after itself (`10 + body.len()`).

pub mod mock;

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::plan::{render_commands, BuildPlan, Dialect};

pub const TYPE_AUTH: i32 = 3;
pub const TYPE_EXEC: i32 = 2;
pub const TYPE_AUTH_RESPONSE: i32 = 2;
pub const TYPE_RESPONSE: i32 = 0;

/// Largest body sent in one packet.
pub const MAX_BODY: usize = 1446;
/// Largest length field accepted from a peer.
const MAX_INCOMING: i32 = 1 << 20;

pub const DEFAULT_PORT: u16 = 25575;

#[derive(Debug, thiserror::Error)]
pub enum RconError {
    #[error("body of {0} bytes exceeds the {MAX_BODY}-byte limit")]
    BodyTooLarge(usize),
    #[error("body contains a NUL byte")]
    InvalidBody,
    #[error("truncated packet: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("packet is not terminated by two NUL bytes")]
    BadTerminator,
    #[error("negative length field {0}")]
    NegativeLength(i32),
    #[error("length field {0} is out of range")]
    BadLength(i32),
    #[error("authentication rejected")]
    AuthFailed,
    #[error("connection error: {0}")]
    Connection(#[source] std::io::Error),
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("expected response id {expected}, got {got}")]
    IdMismatch { expected: i32, got: i32 },
    #[error("connection lost")]
    ConnectionLost,
    #[error("throttle must be a positive rate")]
    InvalidThrottle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RconPacket {
    pub request_id: i32,
    pub packet_type: i32,
    pub body: String,
}

impl RconPacket {
    pub fn new(request_id: i32, packet_type: i32, body: impl Into<String>) -> Self {
        RconPacket { request_id, packet_type, body: body.into() }
    }
}

pub fn encode_packet(p: &RconPacket) -> Result<Vec<u8>, RconError> {
    let body = p.body.as_bytes();
    if body.len() > MAX_BODY {
        return Err(RconError::BodyTooLarge(body.len()));
    }
    if body.contains(&0) {
        return Err(RconError::InvalidBody);
    }
    let mut out = Vec::with_capacity(14 + body.len());
    out.extend_from_slice(&(10 + body.len() as i32).to_le_bytes());
    out.extend_from_slice(&p.request_id.to_le_bytes());
    out.extend_from_slice(&p.packet_type.to_le_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(&[0, 0]);
    Ok(out)
}

fn read_i32(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn check_length(len: i32) -> Result<usize, RconError> {
    if len < 0 {
        return Err(RconError::NegativeLength(len));
    }
    if !(10..=MAX_INCOMING).contains(&len) {
        return Err(RconError::BadLength(len));
    }
    Ok(len as usize)
}

fn finish(frame: &[u8]) -> Result<RconPacket, RconError> {
    // frame = id, type, body, 0, 0
    if frame[frame.len() - 2..] != [0, 0] {
        return Err(RconError::BadTerminator);
    }
    let body = &frame[8..frame.len() - 2];
    Ok(RconPacket {
        request_id: read_i32(frame, 0),
        packet_type: read_i32(frame, 4),
        body: String::from_utf8_lossy(body).into_owned(),
    })
}

/// Decodes one packet from the front of `bytes`; returns it and the number
/// of bytes consumed.
pub fn decode_packet(bytes: &[u8]) -> Result<(RconPacket, usize), RconError> {
    if bytes.len() < 4 {
        return Err(RconError::Truncated { needed: 4, got: bytes.len() });
    }
    let len = check_length(read_i32(bytes, 0))?;
    if bytes.len() < 4 + len {
        return Err(RconError::Truncated { needed: 4 + len, got: bytes.len() });
    }
    Ok((finish(&bytes[4..4 + len])?, 4 + len))
}

fn io_error(e: std::io::Error) -> RconError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => RconError::Timeout,
        ErrorKind::UnexpectedEof
        | ErrorKind::ConnectionReset
        | ErrorKind::ConnectionAborted
        | ErrorKind::BrokenPipe => RconError::ConnectionLost,
        _ => RconError::Connection(e),
    }
}

pub fn read_packet(stream: &mut impl Read) -> Result<RconPacket, RconError> {
    let mut head = [0u8; 4];
    stream.read_exact(&mut head).map_err(io_error)?;
    let len = check_length(i32::from_le_bytes(head))?;
    let mut frame = vec![0u8; len];
    stream.read_exact(&mut frame).map_err(io_error)?;
    finish(&frame)
}

pub fn write_packet(stream: &mut impl Write, p: &RconPacket) -> Result<(), RconError> {
    stream.write_all(&encode_packet(p)?).map_err(io_error)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RconEndpoint {
    pub host: String,
    pub port: u16,
    #[serde(default, skip_serializing)]
    pub password: String,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

fn default_timeout() -> f64 {
    5.0
}

impl Default for RconEndpoint {
    fn default() -> Self {
        RconEndpoint { host: "127.0.0.1".into(), port: DEFAULT_PORT, password: String::new(), timeout: default_timeout() }
    }
}

/// An authenticated connection. Single owner; ids increase strictly across
/// the whole session, reconnects included.
pub struct Session {
    endpoint: RconEndpoint,
    stream: Option<TcpStream>,
    next_id: i32,
}

impl Session {
    pub fn connect_and_auth(endpoint: &RconEndpoint) -> Result<Session, RconError> {
        let mut s = Session { endpoint: endpoint.clone(), stream: None, next_id: 1 };
        s.reconnect()?;
        Ok(s)
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.endpoint.timeout.max(0.001))
    }

    fn fresh_id(&mut self) -> i32 {
        let id = self.next_id;
        // wraps long before overflow so -1 is never issued
        self.next_id = if self.next_id >= i32::MAX - 1 { 1 } else { self.next_id + 1 };
        id
    }

    /// Opens a new connection and authenticates on it.
    pub fn reconnect(&mut self) -> Result<(), RconError> {
        self.stream = None;
        let addr = (self.endpoint.host.as_str(), self.endpoint.port)
            .to_socket_addrs()
            .map_err(RconError::Connection)?
            .next()
            .ok_or_else(|| RconError::Connection(std::io::Error::new(ErrorKind::NotFound, "no address")))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout()).map_err(|e| match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => RconError::Timeout,
            _ => RconError::Connection(e),
        })?;
        stream.set_read_timeout(Some(self.timeout())).map_err(RconError::Connection)?;
        stream.set_write_timeout(Some(self.timeout())).map_err(RconError::Connection)?;
        stream.set_nodelay(true).map_err(RconError::Connection)?;
        let id = self.fresh_id();
        write_packet(&mut stream, &RconPacket::new(id, TYPE_AUTH, self.endpoint.password.clone()))?;
        loop {
            let reply = read_packet(&mut stream)?;
            if reply.request_id == -1 {
                return Err(RconError::AuthFailed);
            }
            if reply.request_id != id {
                return Err(RconError::IdMismatch { expected: id, got: reply.request_id });
            }
            // some servers send an empty response packet ahead of the auth reply
            if reply.packet_type == TYPE_AUTH_RESPONSE {
                break;
            }
        }
        self.stream = Some(stream);
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        self.stream.is_some()
    }

    /// Runs one command and returns the joined response body.
    ///
    /// An empty type-0 packet with the next id follows each command; the
    /// server answers it after the command's response, which marks where a
    /// multi-packet response ends.
    pub fn exec(&mut self, command: &str) -> Result<String, RconError> {
        if command.len() > MAX_BODY {
            return Err(RconError::BodyTooLarge(command.len()));
        }
        let result = self.exec_inner(command);
        if matches!(
            result,
            Err(RconError::ConnectionLost | RconError::Timeout | RconError::Connection(_) | RconError::IdMismatch { .. })
        ) {
            self.stream = None;
        }
        result
    }

    fn exec_inner(&mut self, command: &str) -> Result<String, RconError> {
        let id = self.fresh_id();
        let sentinel = self.fresh_id();
        let stream = self.stream.as_mut().ok_or(RconError::ConnectionLost)?;
        write_packet(stream, &RconPacket::new(id, TYPE_EXEC, command))?;
        write_packet(stream, &RconPacket::new(sentinel, TYPE_RESPONSE, ""))?;
        let mut body = String::new();
        loop {
            let p = read_packet(stream)?;
            if p.request_id == sentinel {
                return Ok(body);
            }
            if (1..id).contains(&p.request_id) {
                // late reply to an earlier sentinel; some servers answer it twice
                continue;
            }
            if p.request_id != id {
                return Err(RconError::IdMismatch { expected: id, got: p.request_id });
            }
            body.push_str(&p.body);
        }
    }
}

/// Where dispatched commands go. `Session` is the real one; tests and dry
/// runs can supply their own.
pub trait CommandSink {
    fn send(&mut self, command: &str) -> Result<String, RconError>;
    /// Called before retrying after a transport error.
    fn recover(&mut self) -> Result<(), RconError> {
        Ok(())
    }
}

impl CommandSink for Session {
    fn send(&mut self, command: &str) -> Result<String, RconError> {
        self.exec(command)
    }

    fn recover(&mut self) -> Result<(), RconError> {
        if self.is_connected() { Ok(()) } else { self.reconnect() }
    }
}

/// Response prefixes the game server uses for rejected commands.
pub const FAILURE_PREFIXES: [&str; 6] = [
    "Unknown or incomplete command",
    "Incorrect argument for command",
    "An unexpected error occurred",
    "That position is not loaded",
    "Too many blocks in the specified area",
    "Unknown block type",
];

fn is_failure(response: &str) -> bool {
    FAILURE_PREFIXES.iter().any(|p| response.starts_with(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchOptions {
    /// Commands per second.
    pub throttle: f64,
    pub retries: u32,
    pub max_consecutive_failures: usize,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions { throttle: 20.0, retries: 3, max_consecutive_failures: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandResult {
    pub index: usize,
    pub command: String,
    pub ok: bool,
    pub attempts: u32,
    pub response: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub total: usize,
    pub results: Vec<CommandResult>,
    pub duration_ms: u64,
    pub aborted: bool,
    pub cancelled: bool,
}

impl DispatchReport {
    pub fn sent(&self) -> usize {
        self.results.len()
    }

    pub fn failed(&self) -> Vec<usize> {
        self.results.iter().filter(|r| !r.ok).map(|r| r.index).collect()
    }

    pub fn is_success(&self) -> bool {
        !self.aborted && !self.cancelled && self.results.len() == self.total && self.results.iter().all(|r| r.ok)
    }
}

/// Sends `commands` in order, at most `throttle` per second. Each command
/// gets up to `retries` extra attempts; the run stops after
/// `max_consecutive_failures` failed commands in a row, or when `cancel` is
/// raised between commands.
pub fn dispatch_commands(
    sink: &mut dyn CommandSink,
    commands: &[String],
    options: &DispatchOptions,
    cancel: &AtomicBool,
    on_result: &mut dyn FnMut(&CommandResult),
) -> Result<DispatchReport, RconError> {
    if !(options.throttle > 0.0 && options.throttle.is_finite()) {
        return Err(RconError::InvalidThrottle);
    }
    let start = Instant::now();
    let interval = Duration::from_secs_f64(1.0 / options.throttle);
    let mut report = DispatchReport { total: commands.len(), ..Default::default() };
    let mut sends: u32 = 0;
    let mut streak = 0;
    for (index, command) in commands.iter().enumerate() {
        if cancel.load(Ordering::SeqCst) {
            report.cancelled = true;
            break;
        }
        let mut result =
            CommandResult { index, command: command.clone(), ok: false, attempts: 0, response: String::new(), error: None };
        while result.attempts <= options.retries {
            // pace every attempt, retries included
            let due = start + interval * sends;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
            sends += 1;
            result.attempts += 1;
            let outcome = match sink.recover() {
                Ok(()) => sink.send(command),
                Err(e) => Err(e),
            };
            match outcome {
                Ok(resp) if !is_failure(&resp) => {
                    result.ok = true;
                    result.error = None;
                    result.response = resp;
                    break;
                }
                Ok(resp) => {
                    result.error = Some(resp.clone());
                    result.response = resp;
                }
                Err(RconError::AuthFailed) => return Err(RconError::AuthFailed),
                Err(e) => result.error = Some(e.to_string()),
            }
        }
        streak = if result.ok { 0 } else { streak + 1 };
        on_result(&result);
        report.results.push(result);
        if streak >= options.max_consecutive_failures {
            report.aborted = true;
            break;
        }
    }
    report.duration_ms = start.elapsed().as_millis() as u64;
    Ok(report)
}

/// Renders the plan in the vanilla dialect and dispatches it.
pub fn apply_plan(
    sink: &mut dyn CommandSink,
    plan: &BuildPlan,
    options: &DispatchOptions,
    cancel: &AtomicBool,
) -> Result<DispatchReport, RconError> {
    let commands = render_commands(plan, Dialect::Vanilla);
    dispatch_commands(sink, &commands, options, cancel, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::mock::{MockScript, MockServer};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hunter2_golden_bytes() {
        let bytes = encode_packet(&RconPacket::new(1, TYPE_AUTH, "hunter2")).unwrap();
        let expect: Vec<u8> = vec![
            0x11, 0, 0, 0, 0x01, 0, 0, 0, 0x03, 0, 0, 0, 0x68, 0x75, 0x6E, 0x74, 0x65, 0x72, 0x32, 0, 0,
        ];
        assert_eq!(bytes, expect);
        let empty = encode_packet(&RconPacket::new(7, TYPE_EXEC, "")).unwrap();
        assert_eq!(read_i32(&empty, 0), 10);
    }

    #[test]
    fn decode_errors() {
        let good = encode_packet(&RconPacket::new(1, TYPE_EXEC, "list")).unwrap();
        assert!(matches!(decode_packet(&good[..8]), Err(RconError::Truncated { .. })));
        assert!(matches!(decode_packet(&good[..2]), Err(RconError::Truncated { .. })));
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 1] = 1;
        assert!(matches!(decode_packet(&bad), Err(RconError::BadTerminator)));
        let neg = (-5i32).to_le_bytes();
        assert!(matches!(decode_packet(&neg), Err(RconError::NegativeLength(-5))));
        assert!(matches!(
            encode_packet(&RconPacket::new(1, 2, "x".repeat(MAX_BODY + 1))),
            Err(RconError::BodyTooLarge(_))
        ));
        assert!(encode_packet(&RconPacket::new(1, 2, "x".repeat(MAX_BODY))).is_ok());
    }

    proptest! {
        #[test]
        fn codec_round_trip(id in any::<i32>(), kind in any::<i32>(), body in "[ -~]{0,300}") {
            let p = RconPacket::new(id, kind, body);
            let bytes = encode_packet(&p).unwrap();
            prop_assert_eq!(&bytes, &encode_packet(&p).unwrap());
            let (back, used) = decode_packet(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, p);
        }
    }

    fn endpoint(server: &MockServer, password: &str) -> RconEndpoint {
        RconEndpoint { host: "127.0.0.1".into(), port: server.port(), password: password.into(), timeout: 2.0 }
    }

    #[test]
    fn auth_and_exec() {
        let server = MockServer::start("hunter2", MockScript::default()).unwrap();
        let mut s = Session::connect_and_auth(&endpoint(&server, "hunter2")).unwrap();
        s.exec("fill 0 0 0 1 1 1 minecraft:stone").unwrap();
        s.exec("list").unwrap();
        assert_eq!(server.transcript(), vec!["fill 0 0 0 1 1 1 minecraft:stone", "list"]);
        let ids = server.exec_ids();
        assert!(ids.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(
            Session::connect_and_auth(&endpoint(&server, "wrong")),
            Err(RconError::AuthFailed)
        ));
    }

    #[test]
    fn unreachable_port() {
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let ep = RconEndpoint { port, password: "x".into(), timeout: 1.0, ..Default::default() };
        assert!(matches!(Session::connect_and_auth(&ep), Err(RconError::Connection(_))));
    }

    #[test]
    fn slow_server_times_out() {
        let script = MockScript { delay: Some(Duration::from_millis(600)), ..Default::default() };
        let server = MockServer::start("pw", script).unwrap();
        let mut ep = endpoint(&server, "pw");
        ep.timeout = 0.2;
        let mut s = Session::connect_and_auth(&ep).unwrap();
        assert!(matches!(s.exec("list"), Err(RconError::Timeout)));
        assert!(!s.is_connected());
    }

    #[test]
    fn multi_packet_response_is_joined() {
        let script = MockScript { split_response: Some(vec!["part one, ".into(), "part two".into()]), ..Default::default() };
        let server = MockServer::start("pw", script).unwrap();
        let mut s = Session::connect_and_auth(&endpoint(&server, "pw")).unwrap();
        assert_eq!(s.exec("help").unwrap(), "part one, part two");
    }

    #[test]
    fn lost_connection_is_sticky_until_recover() {
        let script = MockScript { drop_on: vec![1], ..Default::default() };
        let server = MockServer::start("pw", script).unwrap();
        let mut s = Session::connect_and_auth(&endpoint(&server, "pw")).unwrap();
        assert!(s.exec("say a").is_ok());
        assert!(s.exec("say b").is_err());
        assert!(matches!(s.exec("say c"), Err(RconError::ConnectionLost)));
        s.recover().unwrap();
        assert!(s.exec("say d").is_ok());
    }

    #[test]
    fn dispatch_in_order_with_failure_and_retry() {
        let cmds: Vec<String> = (0..5).map(|i| format!("setblock {i} 0 0 minecraft:stone")).collect();
        let script = MockScript { fail_commands: vec![cmds[2].clone()], drop_on: vec![3], ..Default::default() };
        let server = MockServer::start("pw", script).unwrap();
        let mut s = Session::connect_and_auth(&endpoint(&server, "pw")).unwrap();
        let opts = DispatchOptions { throttle: 1000.0, ..Default::default() };
        let report = dispatch_commands(&mut s, &cmds, &opts, &AtomicBool::new(false), &mut |_| {}).unwrap();
        assert_eq!(report.failed(), vec![2]);
        assert_eq!(report.results[2].attempts, 4);
        // the dropped send (the 4th exec received) was retried on a new connection
        assert!(report.results.iter().filter(|r| r.index != 2).all(|r| r.ok));
        let t = server.transcript();
        let firsts: Vec<&String> = {
            let mut seen = Vec::new();
            for c in &t {
                if !seen.contains(&c) {
                    seen.push(c);
                }
            }
            seen
        };
        assert_eq!(firsts, cmds.iter().collect::<Vec<_>>());
    }

    #[test]
    fn throttle_lower_bound() {
        let server = MockServer::start("pw", MockScript::default()).unwrap();
        let mut s = Session::connect_and_auth(&endpoint(&server, "pw")).unwrap();
        let cmds: Vec<String> = (0..4).map(|i| format!("say {i}")).collect();
        let opts = DispatchOptions { throttle: 2.0, ..Default::default() };
        let t0 = Instant::now();
        let report = dispatch_commands(&mut s, &cmds, &opts, &AtomicBool::new(false), &mut |_| {}).unwrap();
        assert!(t0.elapsed() >= Duration::from_millis(1500));
        assert!(report.duration_ms >= 1500);
        assert!(dispatch_commands(&mut s, &cmds, &DispatchOptions { throttle: 0.0, ..Default::default() }, &AtomicBool::new(false), &mut |_| {}).is_err());
    }

    struct Refuse;
    impl CommandSink for Refuse {
        fn send(&mut self, _: &str) -> Result<String, RconError> {
            Ok("Unknown or incomplete command, see below for error".into())
        }
    }

    #[test]
    fn abort_after_consecutive_failures() {
        let cmds: Vec<String> = (0..30).map(|i| format!("bogus {i}")).collect();
        let opts = DispatchOptions { throttle: 1e6, retries: 0, max_consecutive_failures: 10 };
        let report = dispatch_commands(&mut Refuse, &cmds, &opts, &AtomicBool::new(false), &mut |_| {}).unwrap();
        assert!(report.aborted);
        assert_eq!(report.sent(), 10);
    }

    #[test]
    fn cancel_stops_between_commands() {
        let cmds: Vec<String> = (0..10).map(|i| format!("say {i}")).collect();
        let cancel = AtomicBool::new(false);
        struct Echo;
        impl CommandSink for Echo {
            fn send(&mut self, c: &str) -> Result<String, RconError> {
                Ok(c.to_string())
            }
        }
        let opts = DispatchOptions { throttle: 1e6, ..Default::default() };
        let report = dispatch_commands(&mut Echo, &cmds, &opts, &cancel, &mut |r| {
            if r.index == 3 {
                cancel.store(true, Ordering::SeqCst);
            }
        })
        .unwrap();
        assert!(report.cancelled);
        assert_eq!(report.sent(), 4);
    }
}
