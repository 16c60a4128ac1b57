//! TCP transport for the hub: one reader thread per connection, one writer
//! thread pumping the session's outbound channel into the socket. The first
//! line on a connection must be a `connect` control frame.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::server::{ConnectError, Hub};
use crate::wire::{parse_line, ControlFrame, WireLine};

pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
}

impl TcpServer {
    /// Binds `hub.config().listen` (port 0 picks an ephemeral port) and
    /// starts accepting connections.
    pub fn start(hub: Arc<Hub>) -> std::io::Result<TcpServer> {
        let listener = TcpListener::bind(&hub.config().listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let accept_handle = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let hub = hub.clone();
                        std::thread::spawn(move || handle_connection(hub, stream));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(TcpServer { addr, stop, accept_handle: Some(accept_handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.accept_handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.accept_handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(hub: Arc<Hub>, stream: TcpStream) {
    stream.set_read_timeout(Some(Duration::from_secs(60))).ok();
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut write_half = stream;

    let mut first = String::new();
    if reader.read_line(&mut first).is_err() || first.is_empty() {
        return;
    }
    let (agent_name, auth_token, profile) = match parse_line(first.trim_end()) {
        Ok(WireLine::Control(ControlFrame::Connect { agent_name, auth_token, profile })) => {
            (agent_name, auth_token, profile)
        }
        _ => {
            let frame = ControlFrame::Error {
                code: "expected_connect".into(),
                detail: "first frame must be a connect envelope".into(),
            };
            let _ = write_half.write_all(frame.encode().as_bytes());
            return;
        }
    };

    let (tx, rx) = mpsc::channel::<String>();
    if let Err(e) = hub.connect(&agent_name, &auth_token, profile, tx) {
        let code = match e {
            ConnectError::AuthFailed => "auth_failed",
            ConnectError::UnknownAgent(_) => "unknown_agent",
            ConnectError::AlreadyConnected(_) => "already_connected",
            ConnectError::BadProfile(_) => "bad_profile",
        };
        let frame = ControlFrame::Error { code: code.into(), detail: e.to_string() };
        let _ = write_half.write_all(frame.encode().as_bytes());
        return;
    }

    // Ack before the writer starts so it is the first line the client sees;
    // frames queued while offline are already buffered in the channel.
    let ack = ControlFrame::Connected { agent_name: agent_name.clone() };
    if write_half.write_all(ack.encode().as_bytes()).is_err() {
        let _ = hub.disconnect(&agent_name);
        return;
    }

    let writer_hub = hub.clone();
    let writer_name = agent_name.clone();
    let writer = std::thread::spawn(move || {
        while let Ok(line) = rx.recv() {
            if write_half.write_all(line.as_bytes()).is_err() {
                let _ = writer_hub.disconnect(&writer_name);
                break;
            }
        }
    });

    // Reader loop: the session lives until EOF or a socket error.
    stream_lines(&mut reader, |line| hub.ingest_line(&agent_name, line));
    let _ = hub.disconnect(&agent_name);
    let _ = writer.join();
}

fn stream_lines(reader: &mut impl BufRead, mut f: impl FnMut(&str)) {
    let mut buf = String::new();
    loop {
        buf.clear();
        match reader.read_line(&mut buf) {
            Ok(0) => break,
            Ok(_) => f(buf.trim_end()),
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => continue,
            Err(e) if e.kind() == std::io::ErrorKind::TimedOut => continue,
            Err(_) => break,
        }
    }
}
