//! Cleaner: a continuous 2D world where a disc-shaped agent with an
//! egocentric 50×50 grayscale camera avoids collisions, collects dirt and
//! recharges its battery.
//!
//! Each step runs in a fixed order: action and collision test, dirt
//! consumption, charging gain, battery drain, rewards, termination.

mod geometry;
mod render;
mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::EnvError;

pub use geometry::{wrap_angle, Pose, Rect};
pub use render::{render_observation, CHARGER_GRAY};
pub use trace::{write_frame, TraceRecord, TraceWriter};

/// Number of objectives the Cleaner emits rewards for.
pub const NUM_OBJECTIVES: usize = 3;

/// Objective names in reward-vector order: collision avoidance, cleaning, recharging.
pub const OBJECTIVE_NAMES: [&str; NUM_OBJECTIVES] = ["ca", "fc", "rg"];

/// Battery levels at or below this count as empty.
const ENERGY_EPSILON: f64 = 1e-9;

const PLACEMENT_ATTEMPTS: usize = 1000;
const LAYOUT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub map_width: f64,
    pub map_height: f64,
    pub dirt_count: usize,
    pub obstacles_min: usize,
    pub obstacles_max: usize,
    pub chargers_min: usize,
    pub chargers_max: usize,
    pub obstacle_size_min: f64,
    pub obstacle_size_max: f64,
    pub charger_size_min: f64,
    pub charger_size_max: f64,
    pub energy_start: f64,
    pub energy_max: f64,
    pub energy_step: f64,
    pub low_energy: f64,
    pub charge_rate: f64,
    pub max_steps: u32,
    pub view_width: usize,
    pub view_height: usize,
    pub agent_radius: f64,
    pub forward_speed: f64,
    pub turn_degrees: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            map_width: 400.0,
            map_height: 400.0,
            dirt_count: 20,
            obstacles_min: 1,
            obstacles_max: 5,
            chargers_min: 1,
            chargers_max: 3,
            obstacle_size_min: 20.0,
            obstacle_size_max: 80.0,
            charger_size_min: 40.0,
            charger_size_max: 80.0,
            energy_start: 1.0,
            energy_max: 1.0,
            energy_step: 0.001,
            low_energy: 0.1,
            charge_rate: 0.1,
            max_steps: 2000,
            view_width: 50,
            view_height: 50,
            agent_radius: 10.0,
            forward_speed: 5.0,
            turn_degrees: 15.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let err = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.map_width > 0.0 && self.map_height > 0.0) {
            return err("map dimensions must be positive");
        }
        if self.view_width == 0 || self.view_height == 0 {
            return err("view dimensions must be positive");
        }
        if self.obstacles_min > self.obstacles_max || self.chargers_min > self.chargers_max {
            return err("entity count range is inverted");
        }
        if !(self.obstacle_size_min > 0.0 && self.obstacle_size_min <= self.obstacle_size_max) {
            return err("obstacle size range is invalid");
        }
        if !(self.charger_size_min > 0.0 && self.charger_size_min <= self.charger_size_max) {
            return err("charger size range is invalid");
        }
        if !(self.energy_start <= self.energy_max && self.energy_start > 0.0) {
            return err("energy_start must be in (0, energy_max]");
        }
        if !(self.energy_step >= 0.0) || self.max_steps == 0 {
            return err("energy_step must be non-negative and max_steps positive");
        }
        let r = self.agent_radius;
        if !(r > 0.0 && 2.0 * r < self.map_width && 2.0 * r < self.map_height) {
            return err("agent does not fit in the map");
        }
        Ok(())
    }

    pub fn observation_len(&self) -> usize {
        self.view_width * self.view_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

/// 8-bit grayscale frame, row-major. Row 0 is the far edge of the view.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }
}

/// Rewards for (ca, fc, rg) in that order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector(pub [f64; NUM_OBJECTIVES]);

impl RewardVector {
    pub fn ca(&self) -> f64 {
        self.0[0]
    }
    pub fn fc(&self) -> f64 {
        self.0[1]
    }
    pub fn rg(&self) -> f64 {
        self.0[2]
    }
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub battery: f64,
    pub step: u32,
    pub consumed_total: u64,
    pub collided: bool,
    pub charging: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub rewards: RewardVector,
    pub done: bool,
    pub info: StepInfo,
}

impl StepResult {
    /// True when the battery ran out. Hitting the step limit ends the episode without making the state terminal.
    pub fn terminal(&self) -> bool {
        self.done && self.info.battery <= 0.0
    }
}

/// Full simulator state, including the episode's random stream.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub agent: Pose,
    pub energy: f64,
    pub obstacles: Vec<Rect>,
    pub chargers: Vec<Rect>,
    pub dirt: Vec<(f64, f64)>,
    pub step: u32,
    pub consumed_total: u64,
    pub done: bool,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn on_charger(&self, radius: f64) -> bool {
        self.chargers.iter().any(|c| c.hits_disc(self.agent.x, self.agent.y, radius))
    }

    /// Overrides agent pose and battery, e.g. to set up a scenario.
    pub fn place_agent(&mut self, agent: Pose, energy: f64) {
        self.agent = agent;
        self.energy = energy;
    }
}

pub struct Cleaner {
    config: WorldConfig,
    state: Option<WorldState>,
    layout_hash: [u8; 32],
}

impl Cleaner {
    pub fn new(config: WorldConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config, state: None, layout_hash: [0; 32] })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    /// Samples a fresh layout from `seed` and returns the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = None;
        for _ in 0..LAYOUT_ATTEMPTS {
            match generate_layout(&self.config, &mut rng) {
                Ok(mut state) => {
                    state.rng = rng;
                    self.layout_hash = hash_layout(&state);
                    let obs = render_observation(&self.config, &state);
                    self.state = Some(state);
                    return Ok(obs);
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or(EnvError::Layout { what: "layout", attempts: LAYOUT_ATTEMPTS }))
    }

    /// Digest of the initial layout of the current episode.
    pub fn layout_hash(&self) -> [u8; 32] {
        self.layout_hash
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    pub fn state_mut(&mut self) -> Option<&mut WorldState> {
        self.state.as_mut()
    }

    pub fn observation(&self) -> Option<Observation> {
        self.state.as_ref().map(|s| render_observation(&self.config, s))
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let cfg = &self.config;
        let state = match self.state.as_mut() {
            Some(s) if !s.done => s,
            _ => return Err(EnvError::EpisodeDone),
        };
        let r = cfg.agent_radius;

        let mut collided = false;
        match action {
            Action::Forward => {
                let (fx, fy) = state.agent.forward();
                let nx = state.agent.x + cfg.forward_speed * fx;
                let ny = state.agent.y + cfg.forward_speed * fy;
                if disc_blocked(cfg, &state.obstacles, nx, ny) {
                    collided = true;
                } else {
                    state.agent.x = nx;
                    state.agent.y = ny;
                }
            }
            Action::TurnLeft => state.agent.heading = wrap_angle(state.agent.heading - cfg.turn_degrees.to_radians()),
            Action::TurnRight => state.agent.heading = wrap_angle(state.agent.heading + cfg.turn_degrees.to_radians()),
        }

        let mut consumed = 0u32;
        for i in 0..state.dirt.len() {
            let (dx, dy) = state.dirt[i];
            if (dx - state.agent.x).powi(2) + (dy - state.agent.y).powi(2) < r * r {
                consumed += 1;
                state.dirt[i] = place_dirt(cfg, &state.obstacles, &state.agent, &mut state.rng)?;
            }
        }
        state.consumed_total += consumed as u64;

        let charging = state.on_charger(r);
        let gain = if charging { (1.0 - state.energy) * cfg.charge_rate } else { 0.0 };
        let mut energy = (state.energy + gain - cfg.energy_step).clamp(0.0, cfg.energy_max);
        if energy <= ENERGY_EPSILON {
            energy = 0.0;
        }
        state.energy = energy;
        state.step += 1;

        let r_ca = if collided { -1.0 } else { 0.0 };
        let r_fc = consumed as f64;
        let r_rg = if charging {
            gain
        } else if energy < cfg.low_energy {
            -1.0
        } else {
            0.0
        };

        state.done = energy <= 0.0 || state.step >= cfg.max_steps;
        let info = StepInfo {
            battery: energy,
            step: state.step,
            consumed_total: state.consumed_total,
            collided,
            charging,
        };
        Ok(StepResult {
            observation: render_observation(cfg, state),
            rewards: RewardVector([r_ca, r_fc, r_rg]),
            done: state.done,
            info,
        })
    }
}

fn disc_blocked(cfg: &WorldConfig, obstacles: &[Rect], x: f64, y: f64) -> bool {
    let r = cfg.agent_radius;
    x - r < 0.0
        || y - r < 0.0
        || x + r > cfg.map_width
        || y + r > cfg.map_height
        || obstacles.iter().any(|o| o.hits_disc(x, y, r))
}

/// Outer radius of the dirt glyph.
const GLYPH_RADIUS: f64 = 6.0;

fn place_dirt(cfg: &WorldConfig, obstacles: &[Rect], agent: &Pose, rng: &mut ChaCha8Rng) -> Result<(f64, f64), EnvError> {
    let g = GLYPH_RADIUS;
    let clear = cfg.agent_radius + g;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let x = rng.gen_range(g..cfg.map_width - g);
        let y = rng.gen_range(g..cfg.map_height - g);
        let near_agent = (x - agent.x).powi(2) + (y - agent.y).powi(2) < clear * clear;
        if !near_agent && !obstacles.iter().any(|o| o.hits_disc(x, y, g)) {
            return Ok((x, y));
        }
    }
    Err(EnvError::Layout { what: "dirt", attempts: PLACEMENT_ATTEMPTS })
}

fn random_rect(rng: &mut ChaCha8Rng, cfg: &WorldConfig, min: f64, max: f64) -> Rect {
    let w = rng.gen_range(min..=max).min(cfg.map_width);
    let h = rng.gen_range(min..=max).min(cfg.map_height);
    let x = rng.gen_range(0.0..=cfg.map_width - w);
    let y = rng.gen_range(0.0..=cfg.map_height - h);
    Rect::new(x, y, w, h)
}

fn generate_layout(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<WorldState, EnvError> {
    let n_obstacles = rng.gen_range(cfg.obstacles_min..=cfg.obstacles_max);
    let n_chargers = rng.gen_range(cfg.chargers_min..=cfg.chargers_max);
    let obstacles: Vec<Rect> =
        (0..n_obstacles).map(|_| random_rect(rng, cfg, cfg.obstacle_size_min, cfg.obstacle_size_max)).collect();

    let mut chargers = Vec::with_capacity(n_chargers);
    for _ in 0..n_chargers {
        let placed = (0..PLACEMENT_ATTEMPTS)
            .map(|_| random_rect(rng, cfg, cfg.charger_size_min, cfg.charger_size_max))
            .find(|c| !obstacles.iter().any(|o| o.overlaps(c)));
        chargers.push(placed.ok_or(EnvError::Layout { what: "charger", attempts: PLACEMENT_ATTEMPTS })?);
    }

    let r = cfg.agent_radius;
    let agent = (0..PLACEMENT_ATTEMPTS)
        .map(|_| Pose {
            x: rng.gen_range(r..cfg.map_width - r),
            y: rng.gen_range(r..cfg.map_height - r),
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .find(|p| !disc_blocked(cfg, &obstacles, p.x, p.y))
        .ok_or(EnvError::Layout { what: "agent", attempts: PLACEMENT_ATTEMPTS })?;

    let mut dirt = Vec::with_capacity(cfg.dirt_count);
    for _ in 0..cfg.dirt_count {
        dirt.push(place_dirt(cfg, &obstacles, &agent, rng)?);
    }

    Ok(WorldState {
        agent,
        energy: cfg.energy_start,
        obstacles,
        chargers,
        dirt,
        step: 0,
        consumed_total: 0,
        done: false,
        rng: ChaCha8Rng::seed_from_u64(0),
    })
}

fn hash_layout(state: &WorldState) -> [u8; 32] {
    let mut h = Sha256::new();
    let mut put = |x: f64| h.update(x.to_le_bytes());
    for r in state.obstacles.iter().chain(&state.chargers) {
        [r.x0, r.y0, r.x1, r.y1].into_iter().for_each(&mut put);
    }
    for &(x, y) in &state.dirt {
        put(x);
        put(y);
    }
    put(state.agent.x);
    put(state.agent.y);
    put(state.agent.heading);
    h.update((state.obstacles.len() as u64).to_le_bytes());
    h.update((state.chargers.len() as u64).to_le_bytes());
    h.finalize().into()
}

/// Layout seed for episode `k` of a run seeded with `base`.
pub fn episode_seed(base: u64, k: u64) -> u64 {
    // SplitMix64 finalizer so neighbouring bases do not share layouts.
    let mut z = base.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-episode reward sums of a uniformly random policy.
///
/// Episode `k` uses layout seed `episode_seed(seed, k)`; actions come from a
/// separate stream seeded with `seed`.
pub fn random_policy_rollout(config: &WorldConfig, seed: u64, episodes: usize) -> Result<Vec<RewardVector>, EnvError> {
    let mut env = Cleaner::new(config.clone())?;
    let mut actions = ChaCha8Rng::seed_from_u64(seed);
    actions.set_stream(1);
    let mut sums = Vec::with_capacity(episodes);
    for k in 0..episodes {
        env.reset(episode_seed(seed, k as u64))?;
        let mut total = [0.0; NUM_OBJECTIVES];
        loop {
            let a = Action::ALL[actions.gen_range(0..Action::COUNT)];
            let res = env.step(a)?;
            for (t, r) in total.iter_mut().zip(res.rewards.0) {
                *t += r;
            }
            if res.done {
                break;
            }
        }
        sums.push(RewardVector(total));
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Cleaner {
        Cleaner::new(WorldConfig::default()).unwrap()
    }

    /// An empty arena: no obstacles, chargers or dirt near the agent.
    fn open_arena(env: &mut Cleaner, seed: u64) {
        env.reset(seed).unwrap();
        let s = env.state_mut().unwrap();
        s.obstacles.clear();
        s.chargers.clear();
        s.dirt = vec![(5000.0, 5000.0); 20];
        s.agent = Pose { x: 200.0, y: 200.0, heading: 0.0 };
    }

    #[test]
    fn reset_is_deterministic() {
        let (mut a, mut b) = (env(), env());
        assert_eq!(a.reset(42).unwrap(), b.reset(42).unwrap());
        assert_eq!(a.layout_hash(), b.layout_hash());
        let (sa, sb) = (a.state().unwrap(), b.state().unwrap());
        assert_eq!(sa.obstacles, sb.obstacles);
        assert_eq!(sa.dirt, sb.dirt);
        a.reset(43).unwrap();
        assert_ne!(a.layout_hash(), b.layout_hash());
    }

    #[test]
    fn layout_counts_follow_config() {
        let mut e = env();
        for seed in 0..200 {
            e.reset(seed).unwrap();
            let s = e.state().unwrap();
            assert_eq!(s.dirt.len(), 20);
            assert!((1..=5).contains(&s.obstacles.len()));
            assert!((1..=3).contains(&s.chargers.len()));
            assert_eq!(s.energy, 1.0);
            assert_eq!(s.step, 0);
            assert!(!disc_blocked(e.config(), &s.obstacles, s.agent.x, s.agent.y));
        }
    }

    #[test]
    fn forward_into_wall_is_a_blocked_collision() {
        let mut e = env();
        open_arena(&mut e, 1);
        e.state_mut().unwrap().agent = Pose { x: 12.0, y: 200.0, heading: std::f64::consts::PI };
        let res = e.step(Action::Forward).unwrap();
        assert_eq!(res.rewards.0, [-1.0, 0.0, 0.0]);
        let s = e.state().unwrap();
        assert_eq!((s.agent.x, s.agent.y), (12.0, 200.0));
        assert_eq!(s.agent.heading, std::f64::consts::PI);
        // Turning away never collides.
        let res = e.step(Action::TurnLeft).unwrap();
        assert_eq!(res.rewards.ca(), 0.0);
    }

    #[test]
    fn forward_onto_dirt_collects_and_respawns() {
        let mut e = env();
        open_arena(&mut e, 2);
        e.state_mut().unwrap().dirt[3] = (208.0, 200.0);
        let res = e.step(Action::Forward).unwrap();
        assert_eq!(res.rewards.fc(), 1.0);
        let s = e.state().unwrap();
        assert_eq!(s.dirt.len(), 20);
        let (x, y) = s.dirt[3];
        assert!((x - 208.0).abs() > 1e-9 || (y - 200.0).abs() > 1e-9);
        assert!((x - s.agent.x).powi(2) + (y - s.agent.y).powi(2) >= 16.0f64.powi(2));
        assert_eq!(res.info.consumed_total, 1);
    }

    #[test]
    fn low_battery_costs_recharge_reward() {
        let mut e = env();
        open_arena(&mut e, 3);
        e.state_mut().unwrap().energy = 0.05;
        for a in Action::ALL {
            let res = e.step(a).unwrap();
            assert_eq!(res.rewards.rg(), -1.0);
        }
    }

    #[test]
    fn charging_gain_precedes_drain() {
        let mut e = env();
        open_arena(&mut e, 4);
        let s = e.state_mut().unwrap();
        s.chargers.push(Rect::new(180.0, 180.0, 40.0, 40.0));
        s.energy = 0.5;
        let res = e.step(Action::TurnLeft).unwrap();
        assert!((res.rewards.rg() - 0.05).abs() < 1e-15);
        assert!((res.info.battery - (0.5 + 0.05 - 0.001)).abs() < 1e-15);
        assert!(res.info.charging);
    }

    #[test]
    fn uncharged_episode_ends_at_step_1000() {
        let mut e = env();
        open_arena(&mut e, 5);
        let mut steps = 0;
        loop {
            let res = e.step(Action::TurnRight).unwrap();
            steps += 1;
            if res.done {
                assert_eq!(res.info.battery, 0.0);
                break;
            }
            assert!(steps < 1000);
        }
        assert_eq!(steps, 1000);
        assert!(matches!(e.step(Action::Forward), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn step_before_reset_is_an_error() {
        assert!(matches!(env().step(Action::Forward), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn episode_seeds_are_distinct() {
        let seeds: std::collections::HashSet<_> = (0..1000).map(|k| episode_seed(7, k)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn random_rollout_is_reproducible() {
        let cfg = WorldConfig::default();
        let a = random_policy_rollout(&cfg, 9, 2).unwrap();
        let b = random_policy_rollout(&cfg, 9, 2).unwrap();
        assert_eq!(a, b);
        for sums in &a {
            assert!(sums.ca() <= 0.0 && sums.fc() >= 0.0);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = WorldConfig { energy_start: 2.0, ..WorldConfig::default() };
        assert!(Cleaner::new(cfg).is_err());
        let cfg = WorldConfig { view_width: 0, ..WorldConfig::default() };
        assert!(Cleaner::new(cfg).is_err());
    }
}
