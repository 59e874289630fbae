use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::Message;

use super::{parse_command, ServerMessage, Session};
use crate::checkpoint::Bundle;
use crate::env::WorldConfig;
use crate::error::ServiceError;

/// How long a new connection may take to reveal a WebSocket handshake.
const SNIFF_TIMEOUT: Duration = Duration::from_millis(25);
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// `host:port`; port 0 picks a free one.
    pub addr: String,
    /// Steps per second.
    pub speed: f64,
    /// Layout seed of the first episode.
    pub seed: u64,
    pub dv_enabled: bool,
    pub world: WorldConfig,
}

enum Event {
    Connect(u64, Sender<Arc<str>>),
    Disconnect(u64),
    Line(u64, String),
}

/// Handle to a running session server.
pub struct Server {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    steps: Arc<AtomicU64>,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Environment steps taken so far, episode starts excluded.
    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::Relaxed)
    }

    /// Blocks until the server stops, which only [`Server::shutdown`] causes.
    pub fn join(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::Relaxed);
        self.join();
    }
}

/// Binds `opts.addr` and starts stepping a session on `bundle` immediately,
/// whether or not anyone is connected.
pub fn serve(bundle: Bundle, opts: ServeOptions) -> Result<Server, ServiceError> {
    let session = Session::new(&bundle, opts.world.clone(), opts.seed, opts.dv_enabled, opts.speed)?;
    let bind_err = |source| ServiceError::Bind { addr: opts.addr.clone(), source };
    let listener = TcpListener::bind(&opts.addr).map_err(bind_err)?;
    let local_addr = listener.local_addr().map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;

    let stop = Arc::new(AtomicBool::new(false));
    let steps = Arc::new(AtomicU64::new(0));
    let (tx, rx) = mpsc::channel();
    let driver = {
        let (stop, steps) = (stop.clone(), steps.clone());
        thread::spawn(move || drive(session, rx, &stop, &steps))
    };
    let acceptor = {
        let stop = stop.clone();
        thread::spawn(move || accept_loop(listener, tx, &stop))
    };
    Ok(Server { local_addr, stop, steps, threads: vec![driver, acceptor] })
}

fn drive(mut session: Session, rx: Receiver<Event>, stop: &AtomicBool, steps: &AtomicU64) {
    let mut clients: BTreeMap<u64, Sender<Arc<str>>> = BTreeMap::new();
    let period = |s: &Session| Duration::from_secs_f64(1.0 / s.speed());
    let mut next = Instant::now() + period(&session);
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if !session.paused() && now >= next {
            match session.advance() {
                Ok(state) => {
                    steps.fetch_add(1, Ordering::Relaxed);
                    broadcast(&mut clients, &ServerMessage::State(state));
                }
                Err(e) => {
                    broadcast(&mut clients, &ServerMessage::Error { msg: format!("session stopped: {e}") });
                    break;
                }
            }
            next += period(&session);
            // After a stall, resume the schedule from now instead of bursting.
            if next < now {
                next = now + period(&session);
            }
            continue;
        }
        let wait = if session.paused() { POLL * 5 } else { next - now };
        let event = match rx.recv_timeout(wait) {
            Ok(ev) => ev,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        match event {
            Event::Connect(id, out) => {
                clients.insert(id, out);
            }
            Event::Disconnect(id) => {
                clients.remove(&id);
            }
            Event::Line(id, line) => {
                let reply = match parse_command(&line) {
                    Err(msg) => ServerMessage::Error { msg },
                    Ok(cmd) => {
                        let was_paused = session.paused();
                        let old_speed = session.speed();
                        match session.apply(&cmd) {
                            Err(msg) => ServerMessage::Error { msg },
                            Ok(applied) => {
                                if (was_paused && !session.paused()) || old_speed != session.speed() {
                                    next = Instant::now() + period(&session);
                                }
                                send(&mut clients, id, &ServerMessage::Ack { cmd: cmd.name().into(), settings: applied.settings });
                                if let Some(state) = applied.state {
                                    broadcast(&mut clients, &ServerMessage::State(state));
                                }
                                continue;
                            }
                        }
                    }
                };
                send(&mut clients, id, &reply);
            }
        }
    }
}

fn send(clients: &mut BTreeMap<u64, Sender<Arc<str>>>, id: u64, msg: &ServerMessage) {
    if let Some(out) = clients.get(&id) {
        if out.send(msg.to_line().into()).is_err() {
            clients.remove(&id);
        }
    }
}

fn broadcast(clients: &mut BTreeMap<u64, Sender<Arc<str>>>, msg: &ServerMessage) {
    if clients.is_empty() {
        return;
    }
    let line: Arc<str> = msg.to_line().into();
    clients.retain(|_, out| out.send(line.clone()).is_ok());
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: &AtomicBool) {
    let mut next_id = 0;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                let events = events.clone();
                thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, id, &events) {
                        eprintln!("client {id}: {e}");
                    }
                    let _ = events.send(Event::Disconnect(id));
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                eprintln!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn handle_connection(stream: TcpStream, id: u64, events: &Sender<Event>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(SNIFF_TIMEOUT))?;
    let mut head = [0u8; 4];
    let websocket = match stream.peek(&mut head) {
        Ok(n) => n == 4 && &head == b"GET ",
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => false,
        Err(e) => return Err(e),
    };
    stream.set_read_timeout(None)?;
    if websocket {
        serve_websocket(stream, id, events)
    } else {
        serve_lines(stream, id, events)
    }
}

fn serve_lines(stream: TcpStream, id: u64, events: &Sender<Event>) -> std::io::Result<()> {
    let (out_tx, out_rx) = mpsc::channel::<Arc<str>>();
    let mut writer = stream.try_clone()?;
    let writer = thread::spawn(move || {
        for line in out_rx {
            if writer.write_all(line.as_bytes()).and_then(|()| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    if events.send(Event::Connect(id, out_tx)).is_err() {
        let _ = stream.shutdown(Shutdown::Both);
    }
    for line in BufReader::new(&stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if events.send(Event::Line(id, line)).is_err() {
            break;
        }
    }
    let _ = events.send(Event::Disconnect(id));
    let _ = writer.join();
    Ok(())
}

fn serve_websocket(stream: TcpStream, id: u64, events: &Sender<Event>) -> std::io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let (out_tx, out_rx) = mpsc::channel::<Arc<str>>();
    if events.send(Event::Connect(id, out_tx)).is_err() {
        return Ok(());
    }
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                if events.send(Event::Line(id, text.to_string())).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match out_rx.try_recv() {
                Ok(line) => {
                    if ws.send(Message::text(line.to_string())).is_err() {
                        return Ok(());
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::tests::small_bundle;

    #[test]
    fn busy_port_is_reported() {
        let (bundle, world) = small_bundle();
        let taken = TcpListener::bind("127.0.0.1:0").unwrap();
        let opts = ServeOptions { addr: taken.local_addr().unwrap().to_string(), speed: 10.0, seed: 0, dv_enabled: true, world };
        assert!(matches!(serve(bundle, opts), Err(ServiceError::Bind { .. })));
    }

    #[test]
    fn steps_without_clients() {
        let (bundle, world) = small_bundle();
        let opts = ServeOptions { addr: "127.0.0.1:0".into(), speed: 100.0, seed: 0, dv_enabled: true, world };
        let server = serve(bundle, opts).unwrap();
        thread::sleep(Duration::from_millis(300));
        let n = server.steps();
        server.shutdown();
        assert!(n >= 10, "only {n} steps");
    }
}
