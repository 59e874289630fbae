use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;

use modqn::checkpoint::{load_bundle, load_bundles};
use modqn::config::RunConfigFile;
use modqn::env::{write_frame, Action, Cleaner, TraceRecord, TraceWriter, WorldConfig};
use modqn::eval::{emit_table, evaluate, to_csv, to_jsonl, EvalSpec, CSV_HEADER};
use modqn::scalarize::Priorities;
use modqn::service::{serve, ServeOptions};
use modqn::train::{seeded, stream, Trainer};

#[derive(Parser)]
#[command(name = "modqn", version, about = "Multi-objective deep Q-learning with decision values")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble in the Cleaner world.
    Train {
        /// TOML run configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Ignore decision values when acting (they are still learned).
        #[arg(long)]
        no_dv: bool,
        /// Override the configured number of environment steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate one priority set on one or more checkpoint bundles.
    Eval {
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        priorities: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 1_000_003)]
        seed: u64,
        /// Output file; `.jsonl` selects line-delimited JSON, anything else CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_dv: bool,
        /// Run configuration supplying the world settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the ten-row priority sweep described by the `[eval]` table of a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a trained ensemble as a live session controllable over TCP.
    Serve {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Environment steps per second.
        #[arg(long, default_value_t = 10.0)]
        speed: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_dv: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Roll out a random policy and dump its trace and frames.
    EnvDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        steps: u64,
        #[arg(long, default_value = "env-demo")]
        out: PathBuf,
        /// Write every frame instead of only the first and last.
        #[arg(long)]
        all_frames: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn load_config(path: Option<&Path>) -> Result<RunConfigFile> {
    Ok(match path {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, out, seed, no_dv, steps } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if no_dv {
                cfg.train.dv_enabled = false;
            }
            cfg.validate()?;
            let mut trainer = Trainer::new(cfg.train.clone(), cfg.world.clone())?;
            let summary = trainer.run(Some(&out), |r| {
                eprintln!(
                    "episode {:>4}  step {:>8}  eps {:.3}  ca {:>7.1}  fc {:>5.0}  rg {:>7.2}  sum {:>8.2}",
                    r.episode, r.step, r.epsilon, r.returns[0], r.returns[1], r.returns[2], r.total
                );
            })?;
            eprintln!(
                "trained {} steps, {} update rounds, {} episodes; checkpoint at {}",
                summary.steps,
                summary.updates,
                summary.episodes.len(),
                summary.final_checkpoint.as_deref().unwrap_or(Path::new("-")).display()
            );
        }
        Command::Eval { checkpoints, priorities, episodes, seed, out, no_dv, config } => {
            let cfg = load_config(config.as_deref())?;
            let bundles = load_bundles(&checkpoints)?;
            let mut eval = cfg.eval.clone();
            eval.episodes = episodes;
            eval.seed = seed;
            eval.dv_enabled = !no_dv;
            let spec = EvalSpec::from_config(&eval, &cfg.world);
            let p = Priorities::new(priorities)?;
            let rows = evaluate(&bundles, &[p], &spec)?;
            let r = &rows[0];
            let text = if out.extension().is_some_and(|e| e == "jsonl") {
                serde_json::to_string(r)? + "\n"
            } else {
                let variant = if no_dv { "modqn" } else { "modqn-dv" };
                let cols: Vec<String> = (0..3).map(|i| r.priorities.get(i).map_or(String::new(), f64::to_string)).collect();
                format!(
                    "{CSV_HEADER}\n{variant},value,{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{}\n",
                    cols.join(","),
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
                )
            };
            fs::write(&out, &text)?;
            print!("{text}");
        }
        Command::Sweep { config } => {
            let cfg = RunConfigFile::load(&config)?;
            if cfg.eval.checkpoints.is_empty() {
                return Err("sweep needs eval.checkpoints in the config".into());
            }
            let sets = cfg.eval.priorities.iter().map(|p| Priorities::new(p.clone())).collect::<std::result::Result<Vec<_>, _>>()?;
            let bundles = load_bundles(&cfg.eval.checkpoints)?;
            let dv_spec = EvalSpec { dv_enabled: true, ..EvalSpec::from_config(&cfg.eval, &cfg.world) };
            let dv = emit_table("modqn-dv", evaluate(&bundles, &sets, &dv_spec)?)?;
            let ablation_bundles =
                if cfg.eval.ablation_checkpoints.is_empty() { bundles } else { load_bundles(&cfg.eval.ablation_checkpoints)? };
            let plain_spec = EvalSpec { dv_enabled: false, ..dv_spec };
            let plain = emit_table("modqn", evaluate(&ablation_bundles, &sets, &plain_spec)?)?;
            let tables = [dv, plain];
            fs::create_dir_all(&cfg.eval.out)?;
            let csv = to_csv(&tables);
            fs::write(cfg.eval.out.join("table.csv"), &csv)?;
            fs::write(cfg.eval.out.join("table.jsonl"), to_jsonl(&tables))?;
            fs::write(cfg.eval.out.join("config.toml"), cfg.to_toml())?;
            print!("{csv}");
        }
        Command::Serve { checkpoints, port, host, speed, seed, no_dv, config } => {
            let cfg = load_config(config.as_deref())?;
            let bundle = load_bundle(&checkpoints)?;
            let opts = ServeOptions { addr: format!("{host}:{port}"), speed, seed, dv_enabled: !no_dv, world: cfg.world };
            let server = serve(bundle, opts)?;
            eprintln!("serving on {}", server.local_addr());
            server.join();
        }
        Command::EnvDemo { seed, steps, out, all_frames } => env_demo(seed, steps, &out, all_frames)?,
    }
    Ok(())
}

fn env_demo(seed: u64, steps: u64, out: &Path, all_frames: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut env = Cleaner::new(WorldConfig::default())?;
    let mut rng = seeded(seed, stream::EXPLORE);
    let mut obs = env.reset(seed)?;
    write_frame(&out.join("frame-00000.raw"), &obs)?;
    let mut trace = TraceWriter::new(std::io::BufWriter::new(fs::File::create(out.join("trace.jsonl"))?));
    let mut totals = [0.0; 3];
    let mut taken = 0;
    for _ in 0..steps {
        let a = Action::ALL[rng.gen_range(0..Action::COUNT)];
        let res = env.step(a)?;
        trace.record(&TraceRecord::new(a, &res, env.state().expect("episode running")))?;
        for (t, r) in totals.iter_mut().zip(res.rewards.0) {
            *t += r;
        }
        taken += 1;
        obs = res.observation;
        if all_frames {
            write_frame(&out.join(format!("frame-{taken:05}.raw")), &obs)?;
        }
        if res.done {
            break;
        }
    }
    write_frame(&out.join(format!("frame-{taken:05}.raw")), &obs)?;
    std::io::Write::flush(&mut trace.into_inner())?;
    println!("{taken} steps; reward sums ca {:.1} fc {:.1} rg {:.3}; output in {}", totals[0], totals[1], totals[2], out.display());
    Ok(())
}
