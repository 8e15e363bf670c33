use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dexhand::bench;
use dexhand::config::ExperimentConfig;
use dexhand::error::{Error, Result};
use dexhand::llm::{HttpTransport, LlmError, Transport};
use dexhand::persist::{self, DatasetFile, Kind, ModelFile};
use dexhand_core::rng::derive_seed;

#[derive(Parser)]
#[command(name = "dexhand", version, about = "Learned internal models for simulated dexterous hands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML or JSON experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-exploration transitions.
    Explore(Common),
    TrainForward(Common),
    TrainInverse(Common),
    /// Run reach episodes with the first configured planner.
    Plan(Common),
    BenchReach(Common),
    BenchInhand(Common),
    AblateData(Common),
    AblateBudget(Common),
    /// Fine-tune on a fatigued hand and compare held-out error.
    Adapt(Common),
    Gesture(Common),
    Synergy(Common),
}

#[derive(Serialize)]
struct ResultFile<'a, T> {
    command: &'a str,
    config: &'a ExperimentConfig,
    result: &'a T,
}

fn write_result<T: Serialize>(out: &Path, command: &str, cfg: &ExperimentConfig, result: &T) -> Result<PathBuf> {
    let path = out.join(format!("{command}.json"));
    persist::save(&path, Kind::Result, &ResultFile { command, config: cfg, result })?;
    Ok(path)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    persist::write_atomic(path, &String::from_utf8_lossy(&bytes))
}

/// Transport for online mode; offline runs never construct one.
struct Lazy<'a>(&'a ExperimentConfig);

impl Transport for Lazy<'_> {
    fn complete(&self, request: &dexhand::llm::ChatRequest) -> std::result::Result<String, LlmError> {
        HttpTransport::new(&self.0.llm)?.complete(request)
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let (name, common) = match &cli.command {
        Command::Explore(c) => ("explore", c),
        Command::TrainForward(c) => ("train-forward", c),
        Command::TrainInverse(c) => ("train-inverse", c),
        Command::Plan(c) => ("plan", c),
        Command::BenchReach(c) => ("bench-reach", c),
        Command::BenchInhand(c) => ("bench-inhand", c),
        Command::AblateData(c) => ("ablate-data", c),
        Command::AblateBudget(c) => ("ablate-budget", c),
        Command::Adapt(c) => ("adapt", c),
        Command::Gesture(c) => ("gesture", c),
        Command::Synergy(c) => ("synergy", c),
    };
    let cfg = load_config(common)?;
    let out = common.out.as_path();
    let hand = cfg.hand_config();
    let f = |v: f64| v.to_string();
    let mut written = Vec::new();
    match cli.command {
        Command::Explore(_) => {
            let data = bench::collect(&hand, &cfg, cfg.setting, derive_seed(cfg.seed, 0))?;
            let file = DatasetFile {
                hand: hand.name.clone(),
                setting: cfg.setting,
                seed: cfg.seed,
                data,
            };
            let path = out.join("dataset.json");
            persist::save(&path, Kind::Dataset, &file)?;
            written.push(path);
            let summary = (file.data.len(), file.data.episodes().len());
            written.push(write_result(out, name, &cfg, &summary)?);
        }
        Command::TrainForward(_) => {
            let (model, report) = bench::train_forward(&hand, &cfg, cfg.setting, cfg.seed)?;
            let path = out.join("forward.json");
            persist::save(&path, Kind::ForwardModel, &ModelFile { hand: hand.name.clone(), model })?;
            written.push(path);
            written.push(write_result(out, name, &cfg, &report)?);
        }
        Command::TrainInverse(_) => {
            let (model, report) = bench::train_inverse(&hand, &cfg, cfg.setting, cfg.seed)?;
            let path = out.join("inverse.json");
            persist::save(&path, Kind::InverseModel, &ModelFile { hand: hand.name.clone(), model })?;
            written.push(path);
            written.push(write_result(out, name, &cfg, &report)?);
        }
        Command::Plan(_) => {
            let models = bench::obtain_models(&hand, &cfg, cfg.setting, cfg.seed)?;
            let kind = *cfg.plan.planners.first().ok_or_else(|| Error::Config("no planner configured".into()))?;
            let p = bench::planner(kind, &models, cfg.budget(), &cfg);
            let pairs = bench::episode_pairs(&hand, cfg.plan.episodes, derive_seed(cfg.seed, 10));
            let recs = bench::run_episodes(&hand, &p, &pairs, &bench::mpc_options(&cfg, cfg.setting), derive_seed(cfg.seed, 11))?;
            written.push(write_result(out, name, &cfg, &recs)?);
        }
        Command::BenchReach(_) => {
            let r = bench::reach_benchmark(&cfg)?;
            let path = out.join("bench-reach.csv");
            write_csv(
                &path,
                &["hand", "planner", "seed", "episodes", "success_rate", "reach_error", "planning_samples"],
                r.rows.iter().map(|row| {
                    vec![
                        row.hand.clone(),
                        row.planner.label().into(),
                        row.seed.to_string(),
                        row.episodes.to_string(),
                        f(row.success_rate),
                        f(row.reach_error),
                        row.planning_samples.to_string(),
                    ]
                }),
            )?;
            written.push(path);
            written.push(write_result(out, name, &cfg, &r)?);
        }
        Command::BenchInhand(_) => {
            let r = bench::inhand_benchmark(&cfg)?;
            let path = out.join("bench-inhand.csv");
            write_csv(
                &path,
                &["learner", "seed", "iteration", "env_steps", "success_rate", "mean_reward"],
                r.curves.iter().flat_map(|c| {
                    c.points.iter().map(move |p| {
                        vec![
                            format!("{:?}", c.learner).to_lowercase(),
                            c.seed.to_string(),
                            p.iteration.to_string(),
                            p.env_steps.to_string(),
                            f(p.success_rate),
                            f(p.mean_reward),
                        ]
                    })
                }),
            )?;
            written.push(path);
            written.push(write_result(out, name, &cfg, &r)?);
        }
        Command::AblateData(_) => {
            let r = bench::ablate_data(&cfg)?;
            let path = out.join("ablate-data.csv");
            write_csv(
                &path,
                &["hand", "action_dim", "transitions", "seed", "eval_mse"],
                r.rows.iter().map(|row| {
                    vec![
                        row.hand.clone(),
                        row.action_dim.to_string(),
                        row.transitions.to_string(),
                        row.seed.to_string(),
                        f(row.eval_mse),
                    ]
                }),
            )?;
            written.push(path);
            written.push(write_result(out, name, &cfg, &r)?);
        }
        Command::AblateBudget(_) => {
            let r = bench::ablate_budget(&cfg)?;
            let path = out.join("ablate-budget.csv");
            write_csv(
                &path,
                &["samples", "iterations", "planner", "reach_error", "success_rate", "planning_samples"],
                r.rows.iter().map(|row| {
                    vec![
                        row.samples.to_string(),
                        row.iterations.to_string(),
                        row.planner.label().into(),
                        f(row.reach_error),
                        f(row.success_rate),
                        row.planning_samples.to_string(),
                    ]
                }),
            )?;
            written.push(path);
            written.push(write_result(out, name, &cfg, &r)?);
        }
        Command::Adapt(_) => {
            let r = bench::adaptation(&cfg)?;
            written.push(write_result(out, name, &cfg, &r)?);
        }
        Command::Gesture(_) => {
            let r = bench::gesture_run(&cfg, &Lazy(&cfg))?;
            written.push(write_result(out, name, &cfg, &r)?);
        }
        Command::Synergy(_) => {
            let r = bench::synergy_run(&cfg)?;
            written.push(write_result(out, name, &cfg, &r)?);
        }
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
