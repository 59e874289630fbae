#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use modqn::checkpoint::{Bundle, ObjectiveRecord};
use modqn::env::{WorldConfig, OBJECTIVE_NAMES};
use modqn::objective::{ObjectiveConfig, ObjectiveDqn};
use modqn::service::{serve, ClientCommand, ServeOptions, Server, ServerMessage, Settings};
use modqn::train::network_spec;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Untrained three-objective bundle with a narrow hidden layer.
pub fn small_bundle(seed: u64) -> Bundle {
    let world = WorldConfig::default();
    let spec = network_spec(&world, 16);
    let mut rng = StdRng::seed_from_u64(seed);
    let records = OBJECTIVE_NAMES
        .iter()
        .map(|n| {
            let dqn = ObjectiveDqn::<f32>::new(*n, spec.clone(), ObjectiveConfig::default(), &mut rng).unwrap();
            ObjectiveRecord::from_dqn(&dqn, false)
        })
        .collect();
    Bundle::new(spec, records, seed, 0, true)
}

pub fn start(bundle: Bundle, speed: f64) -> Server {
    serve(bundle, ServeOptions { addr: "127.0.0.1:0".into(), speed, seed: 0, dv_enabled: true, world: WorldConfig::default() })
        .unwrap()
}

/// Line-protocol client.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(server: &Server) -> Self {
        let writer = TcpStream::connect(server.local_addr()).unwrap();
        writer.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Self { reader: BufReader::new(writer.try_clone().unwrap()), writer }
    }

    pub fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    pub fn send(&mut self, cmd: &ClientCommand) {
        self.send_raw(&serde_json::to_string(cmd).unwrap());
    }

    pub fn recv(&mut self) -> ServerMessage {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).expect("message within the read timeout");
        assert!(n > 0, "server closed the connection");
        serde_json::from_str(&line).unwrap_or_else(|e| panic!("unparseable message {line:?}: {e}"))
    }

    pub fn writer(&self) -> TcpStream {
        self.writer.try_clone().unwrap()
    }
}

/// Outcome of [`scripted_session`].
pub struct ScriptReport {
    pub commands: usize,
    pub acks: usize,
    pub errors: usize,
    pub states: usize,
    pub violations: Vec<String>,
}

fn random_command(rng: &mut StdRng) -> ClientCommand {
    match rng.gen_range(0..20) {
        0..=11 => {
            let mut p: Vec<f64> = (0..3).map(|_| rng.gen_range(0..5) as f64 * 0.25).collect();
            // Some invalid vectors that must be rejected as a whole.
            match rng.gen_range(0..10) {
                0 => p[rng.gen_range(0..3)] = -0.5,
                1 => p.push(1.0),
                _ => {}
            }
            ClientCommand::SetPriorities { p }
        }
        12..=15 => ClientCommand::ToggleDv { enabled: rng.gen() },
        16 | 17 => ClientCommand::Reset { seed: rng.gen_range(0..1000) },
        18 => ClientCommand::Pause,
        _ => ClientCommand::Resume,
    }
}

/// Model of the session settings a command should produce, or `None` when it must be rejected.
fn expected(settings: &Settings, cmd: &ClientCommand) -> Option<Settings> {
    let mut s = settings.clone();
    match cmd {
        ClientCommand::SetPriorities { p } => {
            if p.len() != s.priorities.len() || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return None;
            }
            s.priorities = p.clone();
        }
        ClientCommand::ToggleDv { enabled } => s.dv = *enabled,
        ClientCommand::Pause => s.paused = true,
        ClientCommand::Resume => s.paused = false,
        ClientCommand::Reset { seed } => s.seed = *seed,
        ClientCommand::Speed { sps } => s.sps = *sps,
    }
    Some(s)
}

/// Drives a live session with `n` random commands from one client and checks
/// that every reply matches a sequential model of the commands, and that
/// every state frame shows exactly the settings of the latest reply before it.
pub fn scripted_session(n: usize, seed: u64, speed: f64) -> ScriptReport {
    let server = start(small_bundle(seed), speed);
    let mut client = Client::connect(&server);
    let mut rng = StdRng::seed_from_u64(seed);
    let commands: Vec<ClientCommand> = (0..n).map(|_| random_command(&mut rng)).collect();

    let mut writer = client.writer();
    let to_send = commands.clone();
    let sender = thread::spawn(move || {
        for (i, cmd) in to_send.iter().enumerate() {
            let mut line = serde_json::to_string(cmd).unwrap();
            line.push('\n');
            writer.write_all(line.as_bytes()).unwrap();
            // Spread the script over many steps.
            if i % 50 == 49 {
                thread::sleep(Duration::from_millis(2));
            }
        }
    });

    let mut settings = Settings { priorities: vec![1.0; 3], dv: true, paused: false, sps: speed, seed: 0 };
    let mut pending: VecDeque<&ClientCommand> = commands.iter().collect();
    let (mut acks, mut errors, mut states) = (0, 0, 0);
    let mut violations = Vec::new();
    let mut after_reset = false;
    let mut last_episode = 0;
    let deadline = Instant::now() + Duration::from_secs(120);
    let flag = |v: &mut Vec<String>, msg: String| {
        if v.len() < 20 {
            v.push(msg);
        }
    };
    while !pending.is_empty() && Instant::now() < deadline {
        match client.recv() {
            ServerMessage::State(st) => {
                states += 1;
                if st.priorities != settings.priorities || st.dv != settings.dv {
                    flag(&mut violations, format!("state {states} shows {:?}/{} after settings {:?}", st.priorities, st.dv, settings));
                }
                if after_reset {
                    if st.step != 0 || st.episode <= last_episode {
                        flag(&mut violations, format!("state after reset has step {} episode {}", st.step, st.episode));
                    }
                    after_reset = false;
                } else if settings.paused {
                    flag(&mut violations, format!("state {states} while paused"));
                }
                last_episode = st.episode;
            }
            ServerMessage::Ack { cmd, settings: got } => {
                acks += 1;
                let sent = pending.pop_front().unwrap();
                match expected(&settings, sent) {
                    Some(want) if cmd == sent.name() && got == want => {
                        after_reset = matches!(sent, ClientCommand::Reset { .. });
                        settings = want;
                    }
                    want => flag(&mut violations, format!("ack {cmd} {got:?} for {sent:?}, expected {want:?}")),
                }
            }
            ServerMessage::Error { msg } => {
                errors += 1;
                let sent = pending.pop_front().unwrap();
                if expected(&settings, sent).is_some() {
                    flag(&mut violations, format!("valid command {sent:?} rejected: {msg}"));
                }
            }
        }
    }
    if !pending.is_empty() {
        violations.push(format!("{} commands never answered", pending.len()));
    }
    sender.join().unwrap();
    server.shutdown();
    ScriptReport { commands: n, acks, errors, states, violations }
}
