//! Live control of a trained ensemble.
//!
//! A [`Session`] owns one environment and the networks acting in it. The
//! [`serve`] front end steps a session at a fixed rate and exchanges
//! newline-delimited JSON with any number of clients: every step is broadcast
//! as a [`StateMessage`], and clients send [`ClientCommand`]s back. A client
//! that opens with an HTTP `GET` is upgraded to a WebSocket and receives the
//! same messages as text frames.

mod server;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Bundle;
use crate::env::{episode_seed, Action, Cleaner, Observation, WorldConfig, NUM_OBJECTIVES};
use crate::error::{PolicyError, ServiceError};
use crate::nn::{frames_to_input, Network};
use crate::objective::{readout, Readout};
use crate::scalarize::{combine_dv, select_action, Priorities, ScalarizerConfig};

pub use server::{serve, ServeOptions, Server};

/// Highest accepted stepping rate.
pub const MAX_SPEED: f64 = 1000.0;

/// Messages sent by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    SetPriorities { p: Vec<f64> },
    ToggleDv { enabled: bool },
    Pause,
    Resume,
    Reset { seed: u64 },
    Speed { sps: f64 },
}

impl ClientCommand {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SetPriorities { .. } => "set_priorities",
            Self::ToggleDv { .. } => "toggle_dv",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::Reset { .. } => "reset",
            Self::Speed { .. } => "speed",
        }
    }
}

/// Session settings as reported in every acknowledgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub priorities: Vec<f64>,
    pub dv: bool,
    pub paused: bool,
    pub sps: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveView {
    pub name: String,
    pub q: Vec<f64>,
    #[serde(rename = "D")]
    pub d_raw: f64,
    pub d: f64,
}

/// One environment step as seen by clients. `rewards` are those of the step
/// that produced this frame and `totals` accumulate over the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub step: u32,
    pub episode: u64,
    pub battery: f64,
    /// Base64 of the row-major 8-bit observation.
    pub frame: String,
    pub objectives: Vec<ObjectiveView>,
    pub priorities: Vec<f64>,
    pub dv: bool,
    pub rewards: [f64; NUM_OBJECTIVES],
    pub totals: [f64; NUM_OBJECTIVES],
}

/// Everything a server writes to a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMessage),
    Ack { cmd: String, settings: Settings },
    Error { msg: String },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Parses one line from a client.
pub fn parse_command(line: &str) -> Result<ClientCommand, String> {
    serde_json::from_str(line.trim()).map_err(|e| format!("bad command: {e}"))
}

/// What applying a command did.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub settings: Settings,
    /// Set after a reset: the first frame of the new episode.
    pub state: Option<StateMessage>,
}

pub struct Session {
    env: Cleaner,
    names: Vec<String>,
    nets: Vec<Network<f32>>,
    priorities: Priorities,
    dv_enabled: bool,
    mu_scale: f64,
    paused: bool,
    sps: f64,
    seed: u64,
    episode: u64,
    episode_in_seed: u64,
    noise: ChaCha8Rng,
    obs: Observation,
    readouts: Vec<Readout>,
    battery: f64,
    step: u32,
    done: bool,
    rewards: [f64; NUM_OBJECTIVES],
    totals: [f64; NUM_OBJECTIVES],
}

impl Session {
    /// Starts the first episode on the layout of `seed`, with all priorities at 1.
    pub fn new(bundle: &Bundle, world: WorldConfig, seed: u64, dv_enabled: bool, sps: f64) -> Result<Self, ServiceError> {
        let spec = bundle.spec();
        if spec.input != [world.view_height, world.view_width, 1] {
            return Err(ServiceError::Config(format!(
                "networks expect {:?} frames but the world renders {}x{}",
                spec.input, world.view_height, world.view_width
            )));
        }
        if spec.actions != Action::COUNT {
            return Err(ServiceError::Config(format!("networks have {} actions, the world {}", spec.actions, Action::COUNT)));
        }
        check_speed(sps).map_err(ServiceError::Config)?;
        let nets = bundle.networks()?;
        if nets.is_empty() {
            return Err(PolicyError::EmptyEnsemble.into());
        }
        let names = bundle.names().into_iter().map(String::from).collect();
        let env = Cleaner::new(world)?;
        let obs = Observation { width: 0, height: 0, pixels: Vec::new() };
        let mut s = Self {
            env,
            names,
            priorities: Priorities::ones(nets.len()),
            nets,
            dv_enabled,
            mu_scale: ScalarizerConfig::default().mu_scale,
            paused: false,
            sps,
            seed,
            episode: 0,
            episode_in_seed: 0,
            noise: ChaCha8Rng::seed_from_u64(seed),
            obs,
            readouts: Vec::new(),
            battery: 0.0,
            step: 0,
            done: false,
            rewards: [0.0; NUM_OBJECTIVES],
            totals: [0.0; NUM_OBJECTIVES],
        };
        s.start_episode(seed)?;
        Ok(s)
    }

    fn start_episode(&mut self, layout: u64) -> Result<(), ServiceError> {
        self.obs = self.env.reset(layout)?;
        self.noise = ChaCha8Rng::seed_from_u64(layout);
        self.battery = self.env.state().map_or(0.0, |s| s.energy);
        self.step = 0;
        self.done = false;
        self.rewards = [0.0; NUM_OBJECTIVES];
        self.totals = [0.0; NUM_OBJECTIVES];
        self.refresh_readouts()
    }

    fn refresh_readouts(&mut self) -> Result<(), ServiceError> {
        let input: Vec<f32> = frames_to_input(&[&self.obs.pixels]);
        self.readouts = self
            .nets
            .iter()
            .map(|n| readout(n, &input, 1).map(|mut r| r.remove(0)))
            .collect::<Result<_, _>>()
            .map_err(PolicyError::from)?;
        Ok(())
    }

    pub fn settings(&self) -> Settings {
        Settings {
            priorities: self.priorities.as_slice().to_vec(),
            dv: self.dv_enabled,
            paused: self.paused,
            sps: self.sps,
            seed: self.seed,
        }
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn speed(&self) -> f64 {
        self.sps
    }

    pub fn layout_hash(&self) -> [u8; 32] {
        self.env.layout_hash()
    }

    /// Validates and applies one command as a whole; on error nothing changes.
    pub fn apply(&mut self, cmd: &ClientCommand) -> Result<Applied, String> {
        let mut state = None;
        match cmd {
            ClientCommand::SetPriorities { p } => {
                if p.len() != self.nets.len() {
                    return Err(format!("expected {} priorities, got {}", self.nets.len(), p.len()));
                }
                self.priorities = Priorities::new(p.clone()).map_err(|e| e.to_string())?;
            }
            ClientCommand::ToggleDv { enabled } => self.dv_enabled = *enabled,
            ClientCommand::Pause => self.paused = true,
            ClientCommand::Resume => self.paused = false,
            ClientCommand::Reset { seed } => {
                self.start_episode(*seed).map_err(|e| e.to_string())?;
                self.seed = *seed;
                self.episode += 1;
                self.episode_in_seed = 0;
                state = Some(self.state());
            }
            ClientCommand::Speed { sps } => {
                check_speed(*sps)?;
                self.sps = *sps;
            }
        }
        Ok(Applied { settings: self.settings(), state })
    }

    /// The current frame and readouts.
    pub fn state(&self) -> StateMessage {
        StateMessage {
            step: self.step,
            episode: self.episode,
            battery: self.battery,
            frame: base64::engine::general_purpose::STANDARD.encode(&self.obs.pixels),
            objectives: self
                .names
                .iter()
                .zip(&self.readouts)
                .map(|(name, r)| ObjectiveView { name: name.clone(), q: r.q.clone(), d_raw: r.d_raw, d: r.d })
                .collect(),
            priorities: self.priorities.as_slice().to_vec(),
            dv: self.dv_enabled,
            rewards: self.rewards,
            totals: self.totals,
        }
    }

    /// Takes one greedy step, or starts the next episode if the last one ended.
    pub fn advance(&mut self) -> Result<StateMessage, ServiceError> {
        if self.done {
            self.episode += 1;
            self.episode_in_seed += 1;
            self.start_episode(episode_seed(self.seed, self.episode_in_seed))?;
            return Ok(self.state());
        }
        let qs: Vec<&[f64]> = self.readouts.iter().map(|r| &r.q[..]).collect();
        let d: Vec<f64> = self.readouts.iter().map(|r| r.d).collect();
        let cfg = ScalarizerConfig { dv_enabled: self.dv_enabled, mu_scale: self.mu_scale };
        let scores = combine_dv(&qs, &d, &self.priorities, &cfg, &mut self.noise).map_err(PolicyError::from)?;
        let action = Action::from_index(select_action(&scores)).expect("network action count checked");
        let res = self.env.step(action)?;
        self.step = res.info.step;
        self.battery = res.info.battery;
        self.done = res.done;
        self.rewards = res.rewards.0;
        for (t, r) in self.totals.iter_mut().zip(res.rewards.0) {
            *t += r;
        }
        self.obs = res.observation;
        self.refresh_readouts()?;
        Ok(self.state())
    }
}

fn check_speed(sps: f64) -> Result<(), String> {
    if sps.is_finite() && sps > 0.0 && sps <= MAX_SPEED {
        Ok(())
    } else {
        Err(format!("speed must be in (0, {MAX_SPEED}] steps per second, got {sps}"))
    }
}
