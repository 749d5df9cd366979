//! TCP host for one session. Reader threads decode frames and hand them to
//! the session thread over a channel; only the session thread mutates state.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::log::RecordedSession;
use super::protocol::{decode_client, read_frame, write_message, ClientCommand, ClientMessage, ServerMessage};
use super::state::Input;

enum Inbound {
    Connected(u64, TcpStream),
    Frame(Vec<u8>),
    Closed(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeStats {
    pub connections: u64,
    pub commands: u64,
    pub ticks: u64,
}

/// Runs until `shutdown` is set. Ticks only while at least one client is
/// connected; with `realtime` they are paced to the simulation step.
pub fn serve<W: Write>(
    listener: TcpListener,
    mut session: RecordedSession<W>,
    realtime: bool,
    shutdown: Arc<AtomicBool>,
) -> io::Result<(ServeStats, RecordedSession<W>)> {
    let (tx, rx) = mpsc::channel();
    listener.set_nonblocking(true)?;
    let accept_stop = shutdown.clone();
    let acceptor = thread::spawn(move || accept_loop(listener, tx, accept_stop));

    let dt = Duration::from_secs_f64(session.session.dt());
    let mut writers: BTreeMap<u64, BufWriter<TcpStream>> = BTreeMap::new();
    let mut stats = ServeStats::default();
    let mut next_tick = Instant::now();
    while !shutdown.load(Ordering::Relaxed) {
        let wait = if writers.is_empty() {
            Duration::from_millis(20)
        } else if realtime {
            next_tick.saturating_duration_since(Instant::now())
        } else {
            Duration::ZERO
        };
        match rx.recv_timeout(wait) {
            Ok(msg) => {
                handle_inbound(msg, &mut session, &mut writers, &mut stats)?;
                while let Ok(msg) = rx.try_recv() {
                    handle_inbound(msg, &mut session, &mut writers, &mut stats)?;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        if writers.is_empty() {
            next_tick = Instant::now();
            continue;
        }
        if !realtime || Instant::now() >= next_tick {
            let events = session.apply(&Input::Tick)?;
            broadcast(&mut writers, &events);
            stats.ticks += 1;
            next_tick += dt;
            // After a long solve, resume pacing from now instead of bursting.
            if Instant::now() > next_tick + 10 * dt {
                next_tick = Instant::now();
            }
        }
    }
    shutdown.store(true, Ordering::Relaxed);
    let _ = acceptor.join();
    Ok((stats, session))
}

fn handle_inbound<W: Write>(
    msg: Inbound,
    session: &mut RecordedSession<W>,
    writers: &mut BTreeMap<u64, BufWriter<TcpStream>>,
    stats: &mut ServeStats,
) -> io::Result<()> {
    match msg {
        Inbound::Connected(id, stream) => {
            let mut w = BufWriter::new(stream);
            if write_message(&mut w, &session.session.hello()).is_ok() {
                writers.insert(id, w);
                stats.connections += 1;
            }
        }
        Inbound::Frame(bytes) => {
            let input = match decode_client(&bytes) {
                Ok(message) => Input::Command { message },
                Err(frame) => Input::Malformed { frame },
            };
            let events = session.apply(&input)?;
            broadcast(writers, &events);
            stats.commands += 1;
        }
        Inbound::Closed(id) => {
            writers.remove(&id);
        }
    }
    Ok(())
}

fn broadcast(writers: &mut BTreeMap<u64, BufWriter<TcpStream>>, events: &[ServerMessage]) {
    writers.retain(|_, w| events.iter().all(|e| write_message(w, e).is_ok()));
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, shutdown: Arc<AtomicBool>) {
    let mut next_id = 0;
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let Ok(reader) = stream.try_clone() else { continue };
                next_id += 1;
                let id = next_id;
                if tx.send(Inbound::Connected(id, stream)).is_err() {
                    return;
                }
                let tx = tx.clone();
                thread::spawn(move || read_loop(id, reader, tx));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
}

fn read_loop(id: u64, mut stream: TcpStream, tx: Sender<Inbound>) {
    while let Ok(Some(frame)) = read_frame(&mut stream) {
        if tx.send(Inbound::Frame(frame)).is_err() {
            return;
        }
    }
    let _ = tx.send(Inbound::Closed(id));
}

/// Blocking client used by the CLI and tests.
pub struct Client {
    stream: TcpStream,
    next_seq: u64,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, next_seq: 1 })
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(timeout)
    }

    /// Sends a command and returns the seq it was given.
    pub fn send(&mut self, command: ClientCommand) -> io::Result<u64> {
        let seq = self.next_seq;
        self.next_seq += 1;
        write_message(&mut self.stream, &ClientMessage::new(seq, command))?;
        Ok(seq)
    }

    pub fn send_raw(&mut self, payload: &[u8]) -> io::Result<()> {
        super::protocol::write_frame(&mut self.stream, payload)
    }

    pub fn recv(&mut self) -> io::Result<ServerMessage> {
        let frame = read_frame(&mut self.stream)?.ok_or_else(|| io::Error::from(io::ErrorKind::UnexpectedEof))?;
        serde_json::from_slice(&frame).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Reads until `pred` matches, returning every message seen including the match.
    pub fn recv_until(&mut self, mut pred: impl FnMut(&ServerMessage) -> bool) -> io::Result<Vec<ServerMessage>> {
        let mut seen = Vec::new();
        loop {
            let m = self.recv()?;
            let done = pred(&m);
            seen.push(m);
            if done {
                return Ok(seen);
            }
        }
    }
}

/// Receives events on a background thread, e.g. for a console that renders while sending.
pub fn spawn_receiver(mut client: Client) -> Receiver<io::Result<ServerMessage>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        let m = client.recv();
        let stop = m.is_err();
        if tx.send(m).is_err() || stop {
            return;
        }
    });
    rx
}
