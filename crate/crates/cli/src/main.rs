//! `dac`: train, evaluate and check distributed actor-critic experiments.

mod config;
mod svg;

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use rand::Rng as _;
use rayon::prelude::*;

use dac_core::envs::{AnyEnv, EnvSpec, Environment, QuadraticToy};
use dac_core::eval::{
    ascent_check, assemble_curves, converge_critics, trace_points, write_curve_csv, write_trace_csv, AscentVerdict,
};
use dac_core::features::PolicyParams;
use dac_core::rng::{keyed, Stream};
use dac_core::trainer::preflight;
use dac_core::{DacError, ExperimentSpec, TrainTrace, Trainer};

use config::RunConfig;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "dac", version, about = "Distributed off-policy actor-critic with policy consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded training trials and write traces, curves and plots.
    Train(TrainArgs),
    /// Evaluate every agent's policy stored in a checkpoint.
    Eval(EvalArgs),
    /// Check the standing assumptions for a configuration.
    Check(ConfigArgs),
    /// Compare critic-based and finite-difference gradients on the toy task.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration. Omitted sections take their defaults.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Base seed; trial `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, action = clap::ArgAction::Set)]
    plot: Option<bool>,
    /// Run trials concurrently. Output is identical to a sequential run.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write `eval.csv` here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides `gradcheck.ascent.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write `gradcheck.json` here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// An error paired with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Self { code: EXIT_FAILURE, error: error.into() }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DAC_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Check(args) => cmd_check(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            error!("{:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    RunConfig::load(&args.config).map_err(Failure::config)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

enum TrialOutcome {
    Done(TrainTrace),
    Diverged(PathBuf, DacError),
}

fn run_trial(cfg: &RunConfig, out_dir: &Path, trial: u64) -> Result<TrialOutcome, Failure> {
    let seed = cfg.trial_seed(trial);
    let mut spec = cfg.experiment();
    spec.train.seed = seed;
    let dir = out_dir.join(format!("trial_{trial}"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut trainer = Trainer::from_spec(&spec).map_err(Failure::config)?;
    let checkpoint_path = dir.join("checkpoint.json");
    let outcome = trainer.run_with(|t| {
        let json = t.checkpoint()?;
        fs::write(&checkpoint_path, json).map_err(|e| DacError::Checkpoint(e.to_string()))
    });
    match outcome {
        Ok(()) => {}
        Err(e) if e.is_divergence() => {
            let path = dir.join("diagnostic.json");
            write_json(&path, &trainer.diagnostic(&e))?;
            return Ok(TrialOutcome::Diverged(path, e));
        }
        Err(e) => return Err(e.into()),
    }
    fs::write(&checkpoint_path, trainer.checkpoint()?)?;

    let trace = trainer.into_trace();
    let file = fs::File::create(dir.join("trace.csv"))?;
    let mut out = BufWriter::new(file);
    write_trace_csv(&mut out, &trace_points(trial, seed, &trace))?;
    out.flush()?;
    let last = trace.records.last().map(|r| r.disagreement).unwrap_or(0.0);
    info!("trial {trial} (seed {seed}) finished, final disagreement {last:.3e}");
    Ok(TrialOutcome::Done(trace))
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        cfg.run.out_dir = dir;
    }
    if let Some(trials) = args.trials {
        cfg.run.trials = trials;
    }
    if let Some(plot) = args.plot {
        cfg.run.plot = plot;
    }
    cfg.run.parallel |= args.parallel;
    if cfg.run.trials == 0 {
        return Err(Failure::config(anyhow::anyhow!("trials must be at least 1")));
    }

    // build once up front so configuration errors leave no artifacts behind
    let spec = cfg.experiment();
    let probe = Trainer::from_spec(&ExperimentSpec {
        train: dac_core::TrainConfig { steps: 0, eval_every: 0, ..spec.train.clone() },
        ..spec.clone()
    })
    .map_err(Failure::config)?;

    let out_dir = cfg.run.out_dir.clone();
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;
    let seeds: Vec<u64> = (0..cfg.run.trials).map(|i| cfg.trial_seed(i)).collect();
    write_json(
        &out_dir.join("provenance.json"),
        &serde_json::json!({
            "seeds": seeds,
            "init_seed": cfg.train.init_seed,
            "feature_seed": cfg.features.seed,
            "env": probe.env().describe(),
            "features": probe.feature_map(),
            "initial_policy": probe.ensemble().get(0),
        }),
    )?;
    info!("training {} trial(s) of {} steps into {}", cfg.run.trials, cfg.train.steps, out_dir.display());

    let outcomes: Vec<Result<TrialOutcome, Failure>> = if cfg.run.parallel {
        (0..cfg.run.trials).into_par_iter().map(|i| run_trial(&cfg, &out_dir, i)).collect()
    } else {
        (0..cfg.run.trials).map(|i| run_trial(&cfg, &out_dir, i)).collect()
    };

    let mut traces = Vec::new();
    let mut diverged = Vec::new();
    for outcome in outcomes {
        match outcome? {
            TrialOutcome::Done(trace) => traces.push(trace),
            TrialOutcome::Diverged(path, e) => diverged.push((path, e)),
        }
    }
    if !diverged.is_empty() {
        for (path, e) in &diverged {
            error!("{e}; diagnostic written to {}", path.display());
        }
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }

    if traces.iter().any(|t| t.records.iter().any(|r| r.returns.is_some())) {
        let rows = assemble_curves(&traces)?;
        let mut out = BufWriter::new(fs::File::create(out_dir.join("curves.csv"))?);
        write_curve_csv(&mut out, &rows)?;
        out.flush()?;
        if cfg.run.plot {
            let title = format!("{} trial(s), mean ± std across trials", traces.len());
            fs::write(out_dir.join("curves.svg"), svg::render(&rows, &title))?;
        }
    } else {
        warn!("evaluation is disabled (train.eval_every = 0); no curves written");
    }
    println!("{}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let json = fs::read_to_string(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))
        .map_err(Failure::config)?;
    let trainer: Trainer<AnyEnv> = Trainer::resume(&json).map_err(Failure::config)?;
    let results = trainer
        .evaluate_agents()
        .map_err(|e| Failure { code: if e.is_divergence() { EXIT_DIVERGED } else { EXIT_FAILURE }, error: e.into() })?;
    let mut csv = String::from("agent_id,mean_return,stderr_return\n");
    for (i, r) in results.iter().enumerate() {
        csv.push_str(&format!("{i},{},{}\n", r.mean, r.stderr));
    }
    print!("{csv}");
    info!(
        "evaluated {} agents after {} env steps and {} actor updates",
        results.len(),
        trainer.env_steps(),
        trainer.actor_updates()
    );
    if let Some(dir) = args.out_dir {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("eval.csv"), csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: ConfigArgs) -> CmdResult {
    let cfg = load(&args)?;
    let spec = cfg.experiment();
    let graph = spec.network.graph().map_err(Failure::config)?;
    let scheme = spec.network.scheme().map_err(Failure::config)?;
    let env = spec.env.build(&graph).map_err(Failure::config)?;
    let map = spec.features.build(env.observation_dim()).map_err(Failure::config)?;
    let report = preflight(&spec.train, &graph, scheme, &env, &map).map_err(Failure::config)?;
    for c in &report.checks {
        println!("{:<4} {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    if let Err(e) = spec.eval.validate() {
        println!("FAIL evaluation protocol: {e}");
        return Ok(ExitCode::from(EXIT_CONFIG));
    }
    if report.passed() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_CONFIG))
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    let cfg = load(&args.config)?;
    let toy = match &cfg.env {
        EnvSpec::Toy(spec) => QuadraticToy::new(spec.clone()).map_err(Failure::config)?,
        EnvSpec::Resource(_) => {
            return Err(Failure::config(anyhow::anyhow!("gradcheck needs the toy environment ([env] kind = \"toy\")")))
        }
    };
    let map = cfg.features.build(1).map_err(Failure::config)?;
    let g = &cfg.gradcheck;
    let mut ascent = g.ascent.clone();
    if let Some(seed) = args.seed {
        ascent.seed = seed;
    }
    if !(g.theta_range >= 0.0) {
        return Err(Failure::config(anyhow::anyhow!("gradcheck.theta_range must be non-negative")));
    }
    let gamma = cfg.train.gamma;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Failure::config(anyhow::anyhow!("train.gamma must lie in (0, 1)")));
    }

    let nf = map.n_features();
    let mut points: Vec<(String, PolicyParams)> = (0..g.points)
        .map(|p| {
            let mut rng = keyed(ascent.seed, Stream::Init, &[p]);
            let theta = (0..nf)
                .map(|_| if g.theta_range > 0.0 { rng.random_range(-g.theta_range..=g.theta_range) } else { 0.0 })
                .collect();
            Ok((format!("random {p}"), PolicyParams::from_flat(0, nf, 1, theta)?))
        })
        .collect::<dac_core::Result<_>>()
        .map_err(Failure::config)?;
    if g.include_optimum {
        points.push(("optimum".into(), toy.optimum(&map).map_err(Failure::config)?));
    }

    let mut reports = Vec::new();
    let mut negative = false;
    for (k, (label, theta)) in points.iter().enumerate() {
        let critics = converge_critics(
            &toy,
            &map,
            theta,
            gamma,
            g.critic_steps,
            g.critic_exponent,
            g.critic_scale,
            ascent.seed.wrapping_add(k as u64),
        )
        .map_err(|e| Failure { code: if e.is_divergence() { EXIT_DIVERGED } else { EXIT_CONFIG }, error: e.into() })?;
        let r = ascent_check(theta, &critics, &toy, &map, gamma, &ascent).map_err(Failure::config)?;
        let flag = match r.verdict {
            AscentVerdict::Positive => "positive",
            AscentVerdict::Negative => "NEGATIVE",
            AscentVerdict::Inconclusive => "inconclusive",
        };
        negative |= r.verdict == AscentVerdict::Negative;
        println!(
            "{label:<10} inner product {:+.6e}  CI [{:+.6e}, {:+.6e}]  {flag}",
            r.inner_product, r.ci_low, r.ci_high
        );
        reports.push(serde_json::json!({ "point": label, "theta": theta.as_flat(), "report": r }));
    }
    if let Some(dir) = args.out_dir {
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("gradcheck.json"), &reports)?;
    }
    Ok(if negative { ExitCode::from(EXIT_FAILURE) } else { ExitCode::SUCCESS })
}
