//! The training loop: ε-greedy acting through the scalarizer, one shared
//! replay memory, and simultaneous updates of every objective's learner.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_bundle, Bundle, ObjectiveRecord};
use crate::config::RunConfigFile;
use crate::env::{episode_seed, Action, Cleaner, Observation, WorldConfig, NUM_OBJECTIVES, OBJECTIVE_NAMES};
use crate::error::{ConfigError, TrainError};
use crate::nn::{AdamConfig, Network, NetworkSpec};
use crate::objective::{LossReport, ObjectiveConfig, ObjectiveDqn, UpdateBatch};
use crate::policy::act;
use crate::replay::{ReplayBuffer, Transition};
use crate::scalarize::{Priorities, ScalarizerConfig};

/// Random streams derived from the run seed.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const EXPLORE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const REPLAY: u64 = 3;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub end_step: u64,
}

impl EpsilonSchedule {
    /// Linear from `start` at step 0 to `end` at `end_step`, constant afterwards.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.end_step == 0 || step >= self.end_step {
            return self.end;
        }
        let t = step as f64 / self.end_step as f64;
        self.start + (self.end - self.start) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between update rounds.
    pub train_every: u64,
    /// Replay size required before the first update.
    pub learning_start: usize,
    /// Updates between target-network refreshes.
    pub target_sync: u64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_end_step: u64,
    pub dv_enabled: bool,
    pub mu_scale: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Steps between intermediate checkpoints; 0 keeps only the initial and final ones.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            replay_capacity: 10_000,
            batch_size: 32,
            train_every: 4,
            learning_start: 1000,
            target_sync: 1000,
            learning_rate: 1e-3,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_end_step: 100_000,
            dv_enabled: true,
            mu_scale: 1e-6,
            hidden: 128,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.replay_capacity == 0 || self.batch_size == 0 || self.train_every == 0 || self.hidden == 0 {
            return bad("replay_capacity, batch_size, train_every and hidden must be positive");
        }
        if self.batch_size > self.replay_capacity {
            return bad("batch_size exceeds replay_capacity");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("epsilon must satisfy 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if !(self.mu_scale > 0.0) {
            return bad("mu_scale must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule { start: self.epsilon_start, end: self.epsilon_end, end_step: self.epsilon_end_step }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            gamma: self.gamma,
            target_sync: self.target_sync,
            adam: AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() },
        }
    }

    pub fn scalarizer(&self) -> ScalarizerConfig {
        ScalarizerConfig { dv_enabled: self.dv_enabled, mu_scale: self.mu_scale }
    }
}

/// The agent network for a world's view size.
pub fn network_spec(world: &WorldConfig, hidden: usize) -> NetworkSpec {
    let mut spec = NetworkSpec::cleaner();
    spec.input = [world.view_height, world.view_width, 1];
    spec.hidden = hidden;
    spec
}

/// Per-objective loss means over one episode's updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStats {
    pub name: String,
    pub loss_q: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_scaling: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Global step count at the end of the episode.
    pub step: u64,
    pub length: u32,
    pub epsilon: f64,
    pub returns: [f64; NUM_OBJECTIVES],
    pub total: f64,
    pub updates: u64,
    pub objectives: Vec<ObjectiveStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub updates: u64,
    pub episodes: Vec<EpisodeRecord>,
    pub final_checkpoint: Option<PathBuf>,
}

#[derive(Default, Clone, Copy)]
struct LossSum {
    sum: LossReport,
    count: u64,
}

pub struct Trainer {
    cfg: TrainConfig,
    world: WorldConfig,
    spec: NetworkSpec,
    env: Cleaner,
    objectives: Vec<ObjectiveDqn<f32>>,
    replay: ReplayBuffer,
    priorities: Priorities,
    explore_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    step: u64,
    rounds: u64,
    episode: u64,
    episode_start: u64,
    obs: Arc<Observation>,
    returns: [f64; NUM_OBJECTIVES],
    losses: Vec<LossSum>,
    /// Sequence numbers of transitions that ended an episode.
    episode_ends: HashSet<u64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, world: WorldConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let spec = network_spec(&world, cfg.hidden);
        let mut init = seeded(cfg.seed, stream::INIT);
        let objectives = OBJECTIVE_NAMES
            .iter()
            .map(|n| ObjectiveDqn::new(*n, spec.clone(), cfg.objective(), &mut init))
            .collect::<Result<Vec<_>, _>>()?;
        Self::with_objectives(cfg, world, objectives)
    }

    /// Starts from existing learners, e.g. restored from a checkpoint.
    pub fn with_objectives(cfg: TrainConfig, world: WorldConfig, objectives: Vec<ObjectiveDqn<f32>>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let spec = network_spec(&world, cfg.hidden);
        if objectives.len() != NUM_OBJECTIVES {
            return Err(ConfigError::Invalid(format!("{} learners for {NUM_OBJECTIVES} objectives", objectives.len())).into());
        }
        let mut env = Cleaner::new(world.clone())?;
        let obs = Arc::new(env.reset(episode_seed(cfg.seed, 0))?);
        Ok(Self {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            priorities: Priorities::ones(NUM_OBJECTIVES),
            explore_rng: seeded(cfg.seed, stream::EXPLORE),
            noise_rng: seeded(cfg.seed, stream::NOISE),
            replay_rng: seeded(cfg.seed, stream::REPLAY),
            losses: vec![LossSum::default(); objectives.len()],
            cfg,
            world,
            spec,
            env,
            objectives,
            step: 0,
            rounds: 0,
            episode: 0,
            episode_start: 0,
            obs,
            returns: [0.0; NUM_OBJECTIVES],
            episode_ends: HashSet::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn objectives(&self) -> &[ObjectiveDqn<f32>] {
        &self.objectives
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Update rounds so far; each round updates every objective once.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn bundle(&self, with_training: bool) -> Bundle {
        let records = self.objectives.iter().map(|o| ObjectiveRecord::from_dqn(o, with_training)).collect();
        Bundle::new(self.spec.clone(), records, self.cfg.seed, self.step, self.cfg.dv_enabled)
    }

    /// Advances one environment step; returns the episode's record if it just ended.
    pub fn step(&mut self) -> Result<Option<EpisodeRecord>, TrainError> {
        let epsilon = self.cfg.epsilon().epsilon_at(self.step);
        let nets: Vec<&Network<f32>> = self.objectives.iter().map(|o| o.online()).collect();
        let a = act(
            &nets,
            &self.obs,
            epsilon,
            &self.priorities,
            &self.cfg.scalarizer(),
            &mut self.explore_rng,
            &mut self.noise_rng,
        )?;
        let res = self.env.step(Action::from_index(a).expect("policy returns a valid action"))?;
        let terminal = res.terminal();
        let next = Arc::new(res.observation);
        self.replay.push(Transition {
            state: Arc::clone(&self.obs),
            action: a,
            rewards: res.rewards,
            next_state: Arc::clone(&next),
            terminal,
            seq: self.step,
        });
        for (t, r) in self.returns.iter_mut().zip(res.rewards.0) {
            *t += r;
        }
        self.step += 1;

        if self.step.is_multiple_of(self.cfg.train_every) && self.replay.len() >= self.cfg.learning_start.max(self.cfg.batch_size) {
            self.update_round()?;
        }
        if cfg!(debug_assertions) && self.step.is_multiple_of(1000) {
            if let Err(msg) = self.audit_replay() {
                panic!("replay audit failed at step {}: {msg}", self.step);
            }
        }

        if !res.done {
            self.obs = next;
            return Ok(None);
        }
        self.episode_ends.insert(self.step - 1);
        let record = self.finish_episode(epsilon);
        self.episode += 1;
        self.episode_start = self.step;
        self.obs = Arc::new(self.env.reset(episode_seed(self.cfg.seed, self.episode))?);
        Ok(Some(record))
    }

    fn update_round(&mut self) -> Result<(), TrainError> {
        for (i, dqn) in self.objectives.iter_mut().enumerate() {
            let sample = self.replay.sample(self.cfg.batch_size, &mut self.replay_rng)?;
            let batch = UpdateBatch::<f32>::from_transitions(&sample, i);
            let r = dqn.combined_update(&batch)?;
            let acc = &mut self.losses[i];
            acc.sum.q += r.q;
            acc.sum.d += r.d;
            acc.sum.scaling += r.scaling;
            acc.sum.total += r.total;
            acc.count += 1;
        }
        self.rounds += 1;
        Ok(())
    }

    fn finish_episode(&mut self, epsilon: f64) -> EpisodeRecord {
        let objectives = self
            .objectives
            .iter()
            .zip(&mut self.losses)
            .map(|(o, acc)| {
                let mean = |v: f64| (acc.count > 0).then(|| v / acc.count as f64);
                let stats = ObjectiveStats {
                    name: o.name().to_string(),
                    loss_q: mean(acc.sum.q),
                    loss_d: mean(acc.sum.d),
                    loss_scaling: mean(acc.sum.scaling),
                    alpha: o.online().alpha() as f64,
                    beta: o.online().beta() as f64,
                };
                *acc = LossSum::default();
                stats
            })
            .collect();
        let returns = std::mem::take(&mut self.returns);
        EpisodeRecord {
            episode: self.episode,
            step: self.step,
            length: (self.step - self.episode_start) as u32,
            epsilon,
            returns,
            total: returns.iter().sum(),
            updates: self.rounds,
            objectives,
        }
    }

    /// Checks that the replay memory holds a contiguous run of emitted transitions.
    pub fn audit_replay(&self) -> Result<(), String> {
        let frame_len = self.world.observation_len();
        let mut prev: Option<&Transition> = None;
        for t in self.replay.iter() {
            if t.seq >= self.step {
                return Err(format!("transition {} is from the future", t.seq));
            }
            if t.state.pixels.len() != frame_len || t.next_state.pixels.len() != frame_len {
                return Err(format!("transition {} has a malformed frame", t.seq));
            }
            if let Some(p) = prev {
                if t.seq != p.seq + 1 {
                    return Err(format!("sequence jumps from {} to {}", p.seq, t.seq));
                }
                if !self.episode_ends.contains(&p.seq) && !Arc::ptr_eq(&p.next_state, &t.state) {
                    return Err(format!("transition {} does not continue from {}", t.seq, p.seq));
                }
            }
            prev = Some(t);
        }
        Ok(())
    }

    /// Runs to `total_steps`. With an output directory, writes the config echo,
    /// `metrics.jsonl`, `checkpoints/step-N` snapshots and the final `checkpoint`.
    pub fn run(&mut self, out: Option<&Path>, mut on_episode: impl FnMut(&EpisodeRecord)) -> Result<TrainSummary, TrainError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TrainError::Io { path, source }
        };
        let mut metrics = None;
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(io(dir))?;
            let echo = RunConfigFile { train: self.cfg.clone(), world: self.world.clone(), ..RunConfigFile::default() };
            let path = dir.join("config.toml");
            fs::write(&path, echo.to_toml()).map_err(io(&path))?;
            let path = dir.join("metrics.jsonl");
            metrics = Some((BufWriter::new(File::create(&path).map_err(io(&path))?), path));
            save_bundle(&dir.join("checkpoints").join(step_dir(self.step)), &self.bundle(false))?;
        }

        let mut episodes = Vec::new();
        while self.step < self.cfg.total_steps {
            let rec = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), TrainError::NonFinite { .. }) = (out, &e) {
                        let _ = save_bundle(&dir.join("nonfinite-dump"), &self.bundle(true));
                    }
                    return Err(e);
                }
            };
            if let Some(rec) = rec {
                if let Some((w, path)) = metrics.as_mut() {
                    serde_json::to_writer(&mut *w, &rec).expect("record serializes");
                    w.write_all(b"\n").map_err(io(path))?;
                }
                on_episode(&rec);
                episodes.push(rec);
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && self.step.is_multiple_of(self.cfg.checkpoint_every) {
                    save_bundle(&dir.join("checkpoints").join(step_dir(self.step)), &self.bundle(false))?;
                }
            }
        }

        for o in &self.objectives {
            if !o.online().params().is_finite() {
                return Err(TrainError::NonFinite {
                    objective: o.name().to_string(),
                    update: o.updates(),
                    detail: "parameters".into(),
                });
            }
        }
        let mut final_checkpoint = None;
        if let Some(dir) = out {
            if let Some((mut w, path)) = metrics.take() {
                w.flush().map_err(io(&path))?;
            }
            let path = dir.join("checkpoint");
            save_bundle(&path, &self.bundle(true))?;
            final_checkpoint = Some(path);
        }
        Ok(TrainSummary { steps: self.step, updates: self.rounds, episodes, final_checkpoint })
    }
}

fn step_dir(step: u64) -> String {
    format!("step-{step:08}")
}

/// Trains a fresh ensemble; `cfg.dv_enabled = false` gives the ablation where
/// decision heads still learn but every decision value counts as 1 when acting.
pub fn train(cfg: TrainConfig, world: WorldConfig, out: Option<&Path>) -> Result<TrainSummary, TrainError> {
    Trainer::new(cfg, world)?.run(out, |_| {})
}
