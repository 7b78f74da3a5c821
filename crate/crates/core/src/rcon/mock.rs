//! In-process RCON server for tests, examples and dry runs against a fake
//! game. Records every command it receives and can be scripted to reject
//! commands, drop connections or split responses.

use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{read_packet, write_packet, RconPacket, TYPE_AUTH, TYPE_AUTH_RESPONSE, TYPE_EXEC, TYPE_RESPONSE};

#[derive(Debug, Clone, Default)]
pub struct MockScript {
    /// Commands answered with an "Unknown or incomplete command" error.
    pub fail_commands: Vec<String>,
    /// Zero-based counts of received exec packets at which the connection is
    /// closed without answering (and without recording the command).
    pub drop_on: Vec<usize>,
    /// Answer every exec with these bodies as separate packets.
    pub split_response: Option<Vec<String>>,
    /// Sleep before each exec answer.
    pub delay: Option<Duration>,
}

#[derive(Default)]
struct State {
    transcript: Vec<String>,
    exec_ids: Vec<i32>,
    received: usize,
}

pub struct MockServer {
    port: u16,
    state: Arc<Mutex<State>>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start(password: &str, script: MockScript) -> std::io::Result<MockServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let port = listener.local_addr()?.port();
        let state = Arc::new(Mutex::new(State::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let (st, stp, pw) = (state.clone(), stop.clone(), password.to_string());
        let script = Arc::new(script);
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stp.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let (st, pw, script) = (st.clone(), pw.clone(), script.clone());
                std::thread::spawn(move || serve(conn, &pw, &script, &st));
            }
        });
        Ok(MockServer { port, state, stop, accept: Some(accept) })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    /// Exec bodies in arrival order.
    pub fn transcript(&self) -> Vec<String> {
        self.state.lock().expect("mock state").transcript.clone()
    }

    pub fn exec_ids(&self) -> Vec<i32> {
        self.state.lock().expect("mock state").exec_ids.clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(mut conn: TcpStream, password: &str, script: &MockScript, state: &Mutex<State>) {
    let _ = conn.set_nodelay(true);
    while let Ok(p) = read_packet(&mut conn) {
        let replies = match p.packet_type {
            TYPE_AUTH => {
                let id = if p.body == password { p.request_id } else { -1 };
                vec![RconPacket::new(id, TYPE_AUTH_RESPONSE, "")]
            }
            TYPE_EXEC => {
                let drop_now = {
                    let mut s = state.lock().expect("mock state");
                    let n = s.received;
                    s.received += 1;
                    if script.drop_on.contains(&n) {
                        true
                    } else {
                        s.transcript.push(p.body.clone());
                        s.exec_ids.push(p.request_id);
                        false
                    }
                };
                if drop_now {
                    let _ = conn.shutdown(Shutdown::Both);
                    return;
                }
                if let Some(d) = script.delay {
                    std::thread::sleep(d);
                }
                if script.fail_commands.contains(&p.body) {
                    vec![RconPacket::new(p.request_id, TYPE_RESPONSE, "Unknown or incomplete command, see below for error")]
                } else if let Some(parts) = &script.split_response {
                    parts.iter().map(|b| RconPacket::new(p.request_id, TYPE_RESPONSE, b.clone())).collect()
                } else {
                    vec![RconPacket::new(p.request_id, TYPE_RESPONSE, "")]
                }
            }
            _ => vec![RconPacket::new(p.request_id, TYPE_RESPONSE, "")],
        };
        for r in replies {
            if write_packet(&mut conn, &r).is_err() {
                return;
            }
        }
    }
}
