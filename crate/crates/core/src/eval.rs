//! Priority sweeps over trained ensembles: every priority set replays the same
//! sequence of map layouts, and rows are compared against the all-ones baseline.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{hex, Bundle};
use crate::env::{episode_seed, Action, Cleaner, WorldConfig, NUM_OBJECTIVES};
use crate::error::EvalError;
use crate::nn::Network;
use crate::policy::{decide, Evaluate};
use crate::scalarize::{Priorities, ScalarizerConfig};
use crate::train::{seeded, stream};

/// The ten priority sets of the standard sweep; the first is the baseline.
pub const SWEEP_PRIORITIES: [[f64; 3]; 10] = [
    [1.0, 1.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.5, 0.3, 0.2],
    [0.5, 0.2, 0.3],
    [0.2, 0.5, 0.3],
    [0.3, 0.5, 0.2],
    [0.2, 0.3, 0.5],
    [0.3, 0.2, 0.5],
];

/// Evaluation settings shared by every priority set and run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// One bundle per independently trained run.
    pub checkpoints: Vec<PathBuf>,
    /// Bundles trained with decision values disabled; when empty the sweep's
    /// ablation variant reuses `checkpoints` with decision values forced to 1.
    pub ablation_checkpoints: Vec<PathBuf>,
    pub priorities: Vec<Vec<f64>>,
    pub episodes: usize,
    /// Base of the layout seed sequence.
    pub seed: u64,
    pub dv_enabled: bool,
    pub epsilon: f64,
    pub mu_scale: f64,
    /// Directory receiving `table.csv` and `table.jsonl`.
    pub out: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            ablation_checkpoints: Vec::new(),
            priorities: SWEEP_PRIORITIES.iter().map(|p| p.to_vec()).collect(),
            episodes: 100,
            seed: 1_000_003,
            dv_enabled: true,
            epsilon: 0.0,
            mu_scale: 1e-6,
            out: PathBuf::from("sweep"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub world: WorldConfig,
    pub episodes: usize,
    pub seed: u64,
    pub dv_enabled: bool,
    pub epsilon: f64,
    pub mu_scale: f64,
}

impl EvalSpec {
    pub fn from_config(cfg: &EvalConfig, world: &WorldConfig) -> Self {
        Self {
            world: world.clone(),
            episodes: cfg.episodes,
            seed: cfg.seed,
            dv_enabled: cfg.dv_enabled,
            epsilon: cfg.epsilon,
            mu_scale: cfg.mu_scale,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.episodes == 0 {
            return Err(EvalError::Config("episodes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(self.mu_scale > 0.0) {
            return Err(EvalError::Config("epsilon must lie in [0, 1] and mu_scale be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub returns: [f64; NUM_OBJECTIVES],
    pub length: u32,
    /// Hex digest of the episode's initial layout.
    pub layout: String,
}

/// Plays `spec.episodes` episodes with one ensemble and one priority set.
pub fn run_episodes(nets: &[&Network<f32>], priorities: &Priorities, spec: &EvalSpec) -> Result<Vec<EpisodeOutcome>, EvalError> {
    spec.validate()?;
    if priorities.len() != nets.len() {
        return Err(EvalError::Config(format!("{} priorities for {} objectives", priorities.len(), nets.len())));
    }
    let cfg = ScalarizerConfig { dv_enabled: spec.dv_enabled, mu_scale: spec.mu_scale };
    let mut env = Cleaner::new(spec.world.clone())?;
    let mut out = Vec::with_capacity(spec.episodes);
    for k in 0..spec.episodes as u64 {
        let layout_seed = episode_seed(spec.seed, k);
        let mut obs = env.reset(layout_seed)?;
        let layout = hex(&env.layout_hash());
        let mut noise = seeded(layout_seed, stream::NOISE);
        let mut explore = seeded(layout_seed, stream::EXPLORE);
        let mut returns = [0.0; NUM_OBJECTIVES];
        loop {
            let a = if spec.epsilon > 0.0 && explore.gen::<f64>() < spec.epsilon {
                explore.gen_range(0..Action::COUNT)
            } else {
                decide(nets, &obs, priorities, &cfg, Evaluate::Weighted, &mut noise)?.action
            };
            let res = env.step(Action::from_index(a).expect("valid action"))?;
            for (t, r) in returns.iter_mut().zip(res.rewards.0) {
                *t += r;
            }
            if res.done {
                out.push(EpisodeOutcome { returns, length: res.info.step, layout });
                break;
            }
            obs = res.observation;
        }
    }
    Ok(out)
}

/// One table row: reward sums for a priority set, averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub priorities: Vec<f64>,
    /// Mean per-episode reward sum for each objective.
    pub per_episode: [f64; NUM_OBJECTIVES],
    /// Reward sums over all episodes of a run, averaged over runs.
    pub totals: [f64; NUM_OBJECTIVES],
    pub episodes: usize,
    pub runs: usize,
}

impl RowResult {
    pub fn sum(&self) -> f64 {
        self.per_episode.iter().sum()
    }

    pub fn total_sum(&self) -> f64 {
        self.totals.iter().sum()
    }
}

/// Evaluates every priority set on every bundle and averages across bundles.
pub fn evaluate(bundles: &[Bundle], priority_sets: &[Priorities], spec: &EvalSpec) -> Result<Vec<RowResult>, EvalError> {
    if bundles.is_empty() {
        return Err(EvalError::Config("no checkpoints to evaluate".into()));
    }
    let nets: Vec<Vec<Network<f32>>> = bundles.iter().map(|b| b.networks()).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for p in priority_sets {
        let mut totals = [0.0; NUM_OBJECTIVES];
        for run in &nets {
            let refs: Vec<&Network<f32>> = run.iter().collect();
            for ep in run_episodes(&refs, p, spec)? {
                for (t, r) in totals.iter_mut().zip(ep.returns) {
                    *t += r;
                }
            }
        }
        let runs = nets.len() as f64;
        let totals = totals.map(|t| t / runs);
        rows.push(RowResult {
            priorities: p.as_slice().to_vec(),
            per_episode: totals.map(|t| t / spec.episodes as f64),
            totals,
            episodes: spec.episodes,
            runs: nets.len(),
        });
    }
    Ok(rows)
}

/// Percentage change of `value` relative to `base`; `None` when the base is zero.
pub fn delta_baseline(value: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (value - base) / base.abs() * 100.0)
}

fn is_baseline(p: &[f64]) -> bool {
    p.iter().all(|v| *v == 1.0)
}

/// Rows of one evaluated variant together with their baseline deltas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantTable {
    pub variant: String,
    pub rows: Vec<RowResult>,
    /// Per row: `None` for the baseline itself, else deltas of (ca, fc, rg, sum) with `None` where undefined.
    pub deltas: Vec<Option<[Option<f64>; 4]>>,
}

pub fn emit_table(variant: &str, rows: Vec<RowResult>) -> Result<VariantTable, EvalError> {
    let base = rows.iter().find(|r| is_baseline(&r.priorities)).ok_or(EvalError::MissingBaseline)?.clone();
    let deltas = rows
        .iter()
        .map(|r| {
            (!is_baseline(&r.priorities)).then(|| {
                [
                    delta_baseline(r.per_episode[0], base.per_episode[0]),
                    delta_baseline(r.per_episode[1], base.per_episode[1]),
                    delta_baseline(r.per_episode[2], base.per_episode[2]),
                    delta_baseline(r.sum(), base.sum()),
                ]
            })
        })
        .collect();
    Ok(VariantTable { variant: variant.to_string(), rows, deltas })
}

pub const CSV_HEADER: &str = "variant,row,p_ca,p_fc,p_rg,sum_r_ca,sum_r_fc,sum_r_rg,sum_sum_r,total_r_ca,total_r_fc,total_r_rg,total_sum_r,episodes,runs";

fn fmt_delta(d: Option<f64>) -> String {
    d.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}%"))
}

/// Comma-separated table: a value row then a delta row per priority set.
///
/// `sum_*` columns hold per-episode means; `total_*` columns hold sums over a run's episodes.
pub fn to_csv(tables: &[VariantTable]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for t in tables {
        for (r, d) in t.rows.iter().zip(&t.deltas) {
            let p = |i: usize| r.priorities.get(i).map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{},value,{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{}",
                t.variant,
                p(0),
                p(1),
                p(2),
                r.per_episode[0],
                r.per_episode[1],
                r.per_episode[2],
                r.sum(),
                r.totals[0],
                r.totals[1],
                r.totals[2],
                r.total_sum(),
                r.episodes,
                r.runs
            );
            let cells: Vec<String> = match d {
                None => vec!["---".to_string(); 4],
                Some(d) => d.iter().map(|v| fmt_delta(*v)).collect(),
            };
            let _ = writeln!(s, "{},delta,{},{},{},{},,,,,,", t.variant, p(0), p(1), p(2), cells.join(","));
        }
    }
    s
}

#[derive(Serialize)]
struct JsonRow<'a> {
    variant: &'a str,
    priorities: &'a [f64],
    per_episode: [f64; NUM_OBJECTIVES],
    per_episode_sum: f64,
    totals: [f64; NUM_OBJECTIVES],
    total_sum: f64,
    episodes: usize,
    runs: usize,
    /// Percent deltas of (ca, fc, rg, sum); null for the baseline row.
    delta_baseline: Option<[Option<f64>; 4]>,
}

/// One JSON object per priority set.
pub fn to_jsonl(tables: &[VariantTable]) -> String {
    let mut s = String::new();
    for t in tables {
        for (r, d) in t.rows.iter().zip(&t.deltas) {
            let row = JsonRow {
                variant: &t.variant,
                priorities: &r.priorities,
                per_episode: r.per_episode,
                per_episode_sum: r.sum(),
                totals: r.totals,
                total_sum: r.total_sum(),
                episodes: r.episodes,
                runs: r.runs,
                delta_baseline: *d,
            };
            s.push_str(&serde_json::to_string(&row).expect("row serializes"));
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::checkpoint::ObjectiveRecord;
    use crate::env::OBJECTIVE_NAMES;
    use crate::objective::{ObjectiveConfig, ObjectiveDqn};
    use crate::train::network_spec;

    fn short_world() -> WorldConfig {
        WorldConfig { max_steps: 60, ..WorldConfig::default() }
    }

    fn random_bundle(seed: u64) -> Bundle {
        let spec = network_spec(&WorldConfig::default(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = OBJECTIVE_NAMES
            .iter()
            .map(|n| {
                let d = ObjectiveDqn::<f32>::new(*n, spec.clone(), ObjectiveConfig::default(), &mut rng).unwrap();
                ObjectiveRecord::from_dqn(&d, false)
            })
            .collect();
        Bundle::new(spec, recs, seed, 0, true)
    }

    fn spec(episodes: usize) -> EvalSpec {
        EvalSpec::from_config(&EvalConfig { episodes, ..EvalConfig::default() }, &short_world())
    }

    #[test]
    fn delta_examples() {
        assert!((delta_baseline(-51.9, -88.4).unwrap() - 41.29).abs() < 0.01);
        assert!((delta_baseline(24.0, 47.6).unwrap() + 49.58).abs() < 0.01);
        assert_eq!(delta_baseline(3.0, 3.0), Some(0.0));
        assert_eq!(delta_baseline(3.0, 0.0), None);
    }

    #[test]
    fn priority_sets_share_layouts_and_runs_repeat() {
        let b = random_bundle(1);
        let nets = b.networks().unwrap();
        let refs: Vec<&Network<f32>> = nets.iter().collect();
        let s = spec(3);
        let one = run_episodes(&refs, &Priorities::ones(3), &s).unwrap();
        let other = run_episodes(&refs, &Priorities::new(vec![1.0, 0.0, 0.0]).unwrap(), &s).unwrap();
        let layouts = |v: &[EpisodeOutcome]| v.iter().map(|e| e.layout.clone()).collect::<Vec<_>>();
        assert_eq!(layouts(&one), layouts(&other));
        assert_ne!(one[0].layout, one[1].layout);
        assert_eq!(one, run_episodes(&refs, &Priorities::ones(3), &s).unwrap());
    }

    #[test]
    fn table_has_value_and_delta_rows() {
        let bundles = [random_bundle(2), random_bundle(3)];
        let sets: Vec<Priorities> = SWEEP_PRIORITIES.iter().map(|p| Priorities::new(p.to_vec()).unwrap()).collect();
        let rows = evaluate(&bundles, &sets, &spec(1)).unwrap();
        assert_eq!(rows.len(), 10);
        for r in &rows {
            assert!((r.sum() - r.per_episode.iter().sum::<f64>()).abs() < 1e-6);
            assert_eq!(r.runs, 2);
        }
        let table = emit_table("modqn-dv", rows).unwrap();
        assert!(table.deltas[0].is_none());
        assert!(table.deltas[1..].iter().all(Option::is_some));
        let csv = to_csv(std::slice::from_ref(&table));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[2].starts_with("modqn-dv,delta,1,1,1,---,---,---,---"));
        assert_eq!(to_jsonl(&[table]).lines().count(), 10);
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let row = RowResult { priorities: vec![1.0, 0.0, 0.0], per_episode: [0.0; 3], totals: [0.0; 3], episodes: 1, runs: 1 };
        assert!(matches!(emit_table("x", vec![row]), Err(EvalError::MissingBaseline)));
    }

    #[test]
    fn priority_count_must_match_ensemble() {
        let b = random_bundle(4);
        let nets = b.networks().unwrap();
        let refs: Vec<&Network<f32>> = nets.iter().collect();
        assert!(matches!(run_episodes(&refs, &Priorities::ones(2), &spec(1)), Err(EvalError::Config(_))));
    }
}
