//! Experiment pipelines behind the CLI subcommands.

use serde::{Deserialize, Serialize};

use dexhand_core::factorized::{self, ExternalModel, InHandEnv, Learner, ReorientTask};
use dexhand_core::gesture::{self, CostProgram};
use dexhand_core::hand::{HandConfig, Perturbation, Preset, Setting, SimState};
use dexhand_core::internal::{self, Dataset, FinetuneHyper, ForwardModel, InverseModel, TrainReport};
use dexhand_core::math;
use dexhand_core::plan::{self, EpisodeRecord, MpcOptions, PlanBudget, Planner};
use dexhand_core::rng::derive_seed;

use crate::config::{ExperimentConfig, LearnerKind, PlannerKind};
use crate::error::{Error, Result};
use crate::llm::{self, Canned, PromptExemplar, Transport};
use crate::persist;
use crate::stats::{self, PairedTest, Summary};
use crate::synergy::{self, SynergyReport};

/// Random-exploration data for `hand` under `setting`.
pub fn collect(hand: &HandConfig, cfg: &ExperimentConfig, setting: Setting, seed: u64) -> Result<Dataset> {
    Ok(internal::collect_random(hand, setting, cfg.data.episodes, cfg.data.steps, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub forward: ForwardModel,
    pub inverse: InverseModel,
    pub forward_report: TrainReport,
    pub inverse_report: TrainReport,
}

pub fn train_forward(hand: &HandConfig, cfg: &ExperimentConfig, setting: Setting, seed: u64) -> Result<(ForwardModel, TrainReport)> {
    let data = collect(hand, cfg, setting, derive_seed(seed, 0))?;
    let (train, eval) = data.split_holdout(cfg.data.holdout_every);
    let hyper = cfg.forward.forward_hyper(setting, derive_seed(seed, 1));
    Ok(internal::train_forward(&train, Some(&eval), &hyper)?)
}

/// Inverse model with sigma estimated on its own training data.
pub fn train_inverse(hand: &HandConfig, cfg: &ExperimentConfig, setting: Setting, seed: u64) -> Result<(InverseModel, TrainReport)> {
    let data = collect(hand, cfg, setting, derive_seed(seed, 0))?;
    let (train, _) = data.split_holdout(cfg.data.holdout_every);
    let (mut model, report) = internal::train_inverse(&train, &cfg.inverse.inverse_hyper(derive_seed(seed, 2)))?;
    internal::estimate_sigma(&mut model, &train)?;
    Ok((model, report))
}

/// Trains both models on the same data, or loads them when configured.
pub fn obtain_models(hand: &HandConfig, cfg: &ExperimentConfig, setting: Setting, seed: u64) -> Result<Models> {
    let m = &cfg.models;
    if m.no_training && (m.forward.is_none() || m.inverse.is_none()) {
        return Err(Error::Config("model files are missing and training is disabled".into()));
    }
    let (forward, forward_report) = match &m.forward {
        Some(p) => (persist::load_forward(p, hand)?, TrainReport::default()),
        None => train_forward(hand, cfg, setting, seed)?,
    };
    let (inverse, inverse_report) = match &m.inverse {
        Some(p) => (persist::load_inverse(p, hand)?, TrainReport::default()),
        None => train_inverse(hand, cfg, setting, seed)?,
    };
    Ok(Models {
        forward,
        inverse,
        forward_report,
        inverse_report,
    })
}

pub fn planner<'a>(kind: PlannerKind, models: &'a Models, budget: PlanBudget, cfg: &ExperimentConfig) -> Planner<'a> {
    let forward = &models.forward;
    match kind {
        PlannerKind::Ours => Planner::Bidirectional {
            forward,
            inverse: &models.inverse,
            budget,
        },
        PlannerKind::FmCem => Planner::Cem {
            forward,
            budget,
            init_std: cfg.plan.cem_init_std,
        },
        PlannerKind::FmRs => Planner::RandomShooting {
            forward,
            horizon: budget.horizon,
            samples: budget.planning_samples(),
        },
        PlannerKind::FmBgd => Planner::Gradient {
            forward,
            horizon: budget.horizon,
            steps: cfg.plan.gradient_steps,
            learning_rate: cfg.plan.gradient_learning_rate,
        },
    }
}

/// Start states and reachable targets, identical for every planner.
pub fn episode_pairs(hand: &HandConfig, n: usize, seed: u64) -> Vec<(SimState, Vec<f64>)> {
    (0..n as u64)
        .map(|i| {
            let s = hand.random_state(derive_seed(seed, 2 * i));
            let t = hand.sample_reachable_target(derive_seed(seed, 2 * i + 1));
            (s, t)
        })
        .collect()
}

/// Quasi-static episodes are one plan and one settle; sequential ones run MPC.
pub fn mpc_options(cfg: &ExperimentConfig, setting: Setting) -> MpcOptions {
    let steps = match setting {
        Setting::QuasiStatic => 1,
        Setting::Sequential => cfg.plan.max_steps,
    };
    MpcOptions::new(steps, setting)
}

pub fn run_episodes(
    hand: &HandConfig,
    planner: &Planner<'_>,
    pairs: &[(SimState, Vec<f64>)],
    opts: &MpcOptions,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (s, t))| Ok(plan::mpc_rollout(hand, planner, s, t, opts, derive_seed(seed, i as u64))?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachRow {
    pub hand: String,
    pub planner: PlannerKind,
    pub seed: u64,
    pub episodes: usize,
    /// Percent of episodes ending below the success threshold.
    pub success_rate: f64,
    /// Mean final fingertip-target distance (metres).
    pub reach_error: f64,
    pub per_finger_error: Vec<f64>,
    /// Model rollouts per planning call.
    pub planning_samples: usize,
    pub mean_total_samples: f64,
    pub final_errors: Vec<f64>,
}

impl ReachRow {
    fn new(hand: &HandConfig, planner: PlannerKind, seed: u64, recs: &[EpisodeRecord]) -> Self {
        let n = recs.len().max(1) as f64;
        let f = hand.num_fingers;
        let mut per_finger = vec![0.0; f];
        for r in recs {
            for (acc, e) in per_finger.iter_mut().zip(&r.per_finger_error) {
                *acc += e / n;
            }
        }
        Self {
            hand: hand.name.clone(),
            planner,
            seed,
            episodes: recs.len(),
            success_rate: 100.0 * recs.iter().filter(|r| r.success).count() as f64 / n,
            reach_error: recs.iter().map(|r| r.final_error).sum::<f64>() / n,
            per_finger_error: per_finger,
            planning_samples: recs.iter().map(|r| r.samples_per_plan).max().unwrap_or(0),
            mean_total_samples: recs.iter().map(|r| r.total_samples as f64).sum::<f64>() / n,
            final_errors: recs.iter().map(|r| r.final_error).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub hand: String,
    pub planner: PlannerKind,
    pub success_rate: Summary,
    pub reach_error: Summary,
    pub planning_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachReport {
    pub setting: Setting,
    pub budget: PlanBudget,
    pub rows: Vec<ReachRow>,
    pub summary: Vec<ReachSummary>,
    pub forward_eval_mse: Vec<Option<f64>>,
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect()
}

/// Reach benchmark for `cfg.hand`: every planner sees the same models and
/// the same episodes for a given seed.
pub fn reach_benchmark(cfg: &ExperimentConfig) -> Result<ReachReport> {
    let hand = cfg.hand_config();
    let budget = cfg.budget();
    let opts = mpc_options(cfg, cfg.setting);
    let mut rows = Vec::new();
    let mut mses = Vec::new();
    for seed in seeds(cfg) {
        let models = obtain_models(&hand, cfg, cfg.setting, seed)?;
        mses.push(models.forward_report.eval_mse);
        let pairs = episode_pairs(&hand, cfg.plan.episodes, derive_seed(seed, 10));
        for &kind in &cfg.plan.planners {
            let p = planner(kind, &models, budget, cfg);
            let recs = run_episodes(&hand, &p, &pairs, &opts, derive_seed(seed, 11))?;
            rows.push(ReachRow::new(&hand, kind, seed, &recs));
        }
    }
    let summary = cfg
        .plan
        .planners
        .iter()
        .map(|&kind| {
            let mine: Vec<&ReachRow> = rows.iter().filter(|r| r.planner == kind).collect();
            let sr: Vec<f64> = mine.iter().map(|r| r.success_rate).collect();
            let re: Vec<f64> = mine.iter().map(|r| r.reach_error).collect();
            ReachSummary {
                hand: hand.name.clone(),
                planner: kind,
                success_rate: stats::summarize(&sr),
                reach_error: stats::summarize(&re),
                planning_samples: mine.iter().map(|r| r.planning_samples).max().unwrap_or(0),
            }
        })
        .collect();
    Ok(ReachReport {
        setting: cfg.setting,
        budget,
        rows,
        summary,
        forward_eval_mse: mses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub hand: String,
    pub action_dim: usize,
    pub transitions: usize,
    pub seed: u64,
    pub eval_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFit {
    pub hand: String,
    pub action_dim: usize,
    pub sizes: Vec<usize>,
    /// Seed-mean held-out MSE per size.
    pub mean_mse: Vec<f64>,
    /// Slope of log MSE against log N.
    pub log_log_slope: f64,
    pub spearman: f64,
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataAblation {
    pub setting: Setting,
    pub rows: Vec<DataRow>,
    pub fits: Vec<DataFit>,
    /// Sizes at which the seed-mean MSE ranks hands by action dimension.
    pub sizes_ranked_by_action_dim: usize,
}

/// One forward model per (hand, N, seed). Smaller training sets are
/// episode prefixes of the largest one; the held-out set is collected
/// separately and shared by every size.
pub fn ablate_data(cfg: &ExperimentConfig) -> Result<DataAblation> {
    let steps = cfg.data.steps;
    let max_n = *cfg.ablation.data_sizes.iter().max().unwrap_or(&0);
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &preset in &cfg.ablation.presets {
        let hand = preset.config();
        let mut per_size = vec![Vec::new(); cfg.ablation.data_sizes.len()];
        for seed in seeds(cfg) {
            let pool = internal::collect_random(&hand, cfg.setting, max_n.div_ceil(steps), steps, derive_seed(seed, 20))?;
            let eval = internal::collect_random(&hand, cfg.setting, cfg.ablation.eval_size.div_ceil(steps), steps, derive_seed(seed, 21))?;
            for (j, &n) in cfg.ablation.data_sizes.iter().enumerate() {
                let mut train = Dataset::new(pool.state_dim, pool.action_dim);
                train.transitions = pool.transitions[..n.min(pool.len())].to_vec();
                let hyper = cfg.forward.forward_hyper(cfg.setting, derive_seed(seed, 22));
                let (_, report) = internal::train_forward(&train, Some(&eval), &hyper)?;
                let mse = report.eval_mse.unwrap_or(f64::NAN);
                per_size[j].push(mse);
                rows.push(DataRow {
                    hand: hand.name.clone(),
                    action_dim: hand.action_dim(),
                    transitions: n,
                    seed,
                    eval_mse: mse,
                });
            }
        }
        let mean_mse: Vec<f64> = per_size.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let sizes: Vec<f64> = cfg.ablation.data_sizes.iter().map(|&n| n as f64).collect();
        fits.push(DataFit {
            hand: hand.name.clone(),
            action_dim: hand.action_dim(),
            sizes: cfg.ablation.data_sizes.clone(),
            log_log_slope: if sizes.len() > 1 { stats::log_log_slope(&sizes, &mean_mse) } else { f64::NAN },
            spearman: if sizes.len() > 1 { stats::spearman(&sizes, &mean_mse) } else { f64::NAN },
            strictly_decreasing: mean_mse.windows(2).all(|w| w[1] < w[0]),
            mean_mse,
        });
    }
    let mut ranked = 0;
    for j in 0..cfg.ablation.data_sizes.len() {
        let mut by_k: Vec<(usize, f64)> = fits.iter().map(|f| (f.action_dim, f.mean_mse[j])).collect();
        by_k.sort_by_key(|p| p.0);
        if by_k.windows(2).all(|w| w[0].1 < w[1].1) {
            ranked += 1;
        }
    }
    Ok(DataAblation {
        setting: cfg.setting,
        rows,
        fits,
        sizes_ranked_by_action_dim: ranked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub samples: usize,
    pub iterations: usize,
    pub planner: PlannerKind,
    pub reach_error: f64,
    pub success_rate: f64,
    pub planning_samples: usize,
    pub final_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub samples: usize,
    pub iterations: usize,
    /// Paired test of ours minus plain CEM final errors.
    pub test: PairedTest,
    /// `|ours - cem| / cem` of the mean errors.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAblation {
    pub setting: Setting,
    pub rows: Vec<BudgetRow>,
    pub points: Vec<BudgetPoint>,
    /// Spearman of (samples, error) per planner along the grid.
    pub trend: Vec<(PlannerKind, f64)>,
}

/// Sweeps `(samples, iterations)` for ours and plain CEM on shared episodes.
pub fn ablate_budget(cfg: &ExperimentConfig) -> Result<BudgetAblation> {
    let hand = cfg.hand_config();
    let models = obtain_models(&hand, cfg, cfg.setting, cfg.seed)?;
    let opts = mpc_options(cfg, cfg.setting);
    let pairs = episode_pairs(&hand, cfg.ablation.episodes, derive_seed(cfg.seed, 30));
    let base = cfg.budget();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &(samples, iterations) in &cfg.ablation.budgets {
        let budget = PlanBudget {
            samples,
            cem_iterations: iterations,
            elites: base.elites.min(samples),
            ..base
        };
        budget.validate()?;
        let mut errs = Vec::new();
        for kind in [PlannerKind::Ours, PlannerKind::FmCem] {
            let p = planner(kind, &models, budget, cfg);
            let recs = run_episodes(&hand, &p, &pairs, &opts, derive_seed(cfg.seed, 31))?;
            let row = ReachRow::new(&hand, kind, cfg.seed, &recs);
            errs.push(row.final_errors.clone());
            rows.push(BudgetRow {
                samples,
                iterations,
                planner: kind,
                reach_error: row.reach_error,
                success_rate: row.success_rate,
                planning_samples: row.planning_samples,
                final_errors: row.final_errors,
            });
        }
        let (ours, cem) = (math::mean(&errs[0]), math::mean(&errs[1]));
        points.push(BudgetPoint {
            samples,
            iterations,
            test: stats::paired_t_test(&errs[0], &errs[1]),
            relative_gap: (ours - cem).abs() / cem,
        });
    }
    let trend = [PlannerKind::Ours, PlannerKind::FmCem]
        .into_iter()
        .map(|kind| {
            let mine: Vec<&BudgetRow> = rows.iter().filter(|r| r.planner == kind).collect();
            let x: Vec<f64> = mine.iter().map(|r| r.planning_samples as f64).collect();
            let y: Vec<f64> = mine.iter().map(|r| r.reach_error).collect();
            (kind, if x.len() > 1 { stats::spearman(&x, &y) } else { f64::NAN })
        })
        .collect();
    Ok(BudgetAblation {
        setting: cfg.setting,
        rows,
        points,
        trend,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InHandCurve {
    pub learner: LearnerKind,
    pub seed: u64,
    pub points: Vec<factorized::CurvePoint>,
    pub steps_to_success: Option<usize>,
    /// Internal model bit-identical to the pretrained one afterwards.
    pub internal_unchanged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InHandReport {
    pub hand: String,
    pub external_input_width: usize,
    pub monolithic_input_width: usize,
    pub internal_eval_mse: Vec<Option<f64>>,
    pub curves: Vec<InHandCurve>,
}

pub fn inhand_env(cfg: &ExperimentConfig) -> Result<(InHandEnv, ReorientTask)> {
    let c = &cfg.inhand;
    let env = InHandEnv::new(c.hand.config(), c.grasp_fraction, c.radius_scale, c.slack)?;
    let task = ReorientTask::new(c.goal_rotation, env.start_object().xy_position);
    Ok((env, task))
}

/// Online adaptation curves for every configured learner and seed. The
/// internal model is pretrained per seed in the sequential setting.
pub fn inhand_benchmark(cfg: &ExperimentConfig) -> Result<InHandReport> {
    let c = &cfg.inhand;
    let (env, task) = inhand_env(cfg)?;
    let hand = &env.hand;
    let arch = c.external.architecture();
    let horizon = c.external.horizon.unwrap_or(10);
    let mut curves = Vec::new();
    let mut mses = Vec::new();
    let mut widths = (0, 0);
    for seed in seeds(cfg) {
        let (internal_model, report) = train_forward(hand, cfg, Setting::Sequential, seed)?;
        mses.push(report.eval_mse);
        for &kind in &c.learners {
            let learner = match kind {
                LearnerKind::Factorized | LearnerKind::End2end => Learner::Factorized {
                    internal: internal_model.clone(),
                    external: ExternalModel::new(hand.state_dim(), &arch, horizon, c.external.discount, derive_seed(seed, 40))?,
                    end2end: kind == LearnerKind::End2end,
                },
                LearnerKind::Monolithic => factorized::monolithic_learner(hand, &arch, horizon, c.external.discount, derive_seed(seed, 40))?,
            };
            match &learner {
                Learner::Factorized { external, .. } => widths.0 = external.input_width(),
                Learner::Monolithic { model } => widths.1 = model.net.in_dim(),
            }
            let mut schedule = c.schedule.clone();
            schedule.seed = derive_seed(seed, 41);
            let (trained, points) = factorized::online_adapt(&env, &task, learner, &schedule, &c.budget)?;
            let internal_unchanged = match (&trained, kind) {
                (Learner::Factorized { internal, .. }, LearnerKind::Factorized) => Some(*internal == internal_model),
                _ => None,
            };
            curves.push(InHandCurve {
                learner: kind,
                seed,
                steps_to_success: factorized::steps_to_success(&points, c.success_level),
                points,
                internal_unchanged,
            });
        }
    }
    Ok(InHandReport {
        hand: hand.name.clone(),
        external_input_width: widths.0,
        monolithic_input_width: widths.1,
        internal_eval_mse: mses,
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub hand: String,
    pub fatigue: f64,
    pub before_mse: f64,
    pub after_mse: f64,
    /// `1 - after / before`.
    pub reduction: f64,
    pub curve: Vec<(usize, f64)>,
}

/// Fine-tunes a nominal forward model on data from a fatigued hand.
pub fn adaptation(cfg: &ExperimentConfig) -> Result<AdaptReport> {
    let hand = cfg.hand_config();
    let (model, _) = train_forward(&hand, cfg, cfg.setting, cfg.seed)?;
    let tired = hand.apply_perturbation(Perturbation::Fatigue(cfg.adapt.fatigue))?;
    let steps = cfg.data.steps;
    let take = |d: Dataset, n: usize| {
        let mut out = Dataset::new(d.state_dim, d.action_dim);
        out.transitions = d.transitions.into_iter().take(n).collect();
        out
    };
    let new_data = take(
        internal::collect_random(&tired, cfg.setting, cfg.adapt.finetune_samples.div_ceil(steps), steps, derive_seed(cfg.seed, 50))?,
        cfg.adapt.finetune_samples,
    );
    let eval = take(
        internal::collect_random(&tired, cfg.setting, cfg.adapt.eval_samples.div_ceil(steps), steps, derive_seed(cfg.seed, 51))?,
        cfg.adapt.eval_samples,
    );
    let before = model.one_step_mse(&eval)?;
    let hyper = FinetuneHyper {
        steps: cfg.adapt.steps,
        learning_rate: cfg.adapt.learning_rate,
        batch_size: cfg.adapt.batch_size,
        eval_every: (cfg.adapt.steps / 10).max(1),
        seed: derive_seed(cfg.seed, 52),
    };
    let (tuned, curve) = internal::finetune(&model, &new_data, Some(&eval), &hyper)?;
    let after = tuned.one_step_mse(&eval)?;
    Ok(AdaptReport {
        hand: hand.name.clone(),
        fatigue: cfg.adapt.fatigue,
        before_mse: before,
        after_mse: after,
        reduction: 1.0 - after / before,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureReport {
    pub hand: String,
    pub source: String,
    pub canonical: String,
    pub llm_reply: Option<String>,
    pub llm_attempts: usize,
    pub action: Vec<f64>,
    pub tips: Vec<f64>,
    pub cost: f64,
    pub predicted_cost: f64,
    /// Distance between the first two fingertips after execution.
    pub pinch_distance: f64,
    pub samples: usize,
}

/// The program named by the config: explicit text, an exemplar, or a
/// language-model reply.
pub fn gesture_program(cfg: &ExperimentConfig, hand: &HandConfig, transport: &dyn Transport) -> Result<(CostProgram, Option<llm::Generated>)> {
    let g = &cfg.gesture;
    if let Some(src) = &g.program {
        return Ok((CostProgram::for_hand(src, hand).map_err(dexhand_core::Error::Parse)?, None));
    }
    if let Some(request) = &g.request {
        let exemplars = g
            .prompt_exemplars
            .iter()
            .map(|&e| PromptExemplar::builtin(e, hand))
            .collect::<dexhand_core::Result<Vec<_>>>()?;
        let mut canned = Canned::builtin(hand);
        if let Some(dir) = &cfg.llm.canned_dir {
            canned.load_dir(dir)?;
        }
        let generated = llm::generate_cost(request, &exemplars, hand, &cfg.llm, transport, &canned)?;
        return Ok((generated.program.clone(), Some(generated)));
    }
    match g.exemplar {
        Some(e) => Ok((e.program(hand)?, None)),
        None => Err(Error::Config("gesture needs a program, an exemplar or a request".into())),
    }
}

pub fn gesture_run(cfg: &ExperimentConfig, transport: &dyn Transport) -> Result<GestureReport> {
    let hand = cfg.hand_config();
    let (program, generated) = gesture_program(cfg, &hand, transport)?;
    let models = obtain_models(&hand, cfg, Setting::QuasiStatic, cfg.seed)?;
    let r = gesture::generate_gesture(&hand, &models.forward, &models.inverse, &program, &cfg.gesture.budget, derive_seed(cfg.seed, 60))?;
    Ok(GestureReport {
        hand: hand.name.clone(),
        source: program.source.clone(),
        canonical: program.canonical(),
        llm_reply: generated.as_ref().map(|g| g.reply.clone()),
        llm_attempts: generated.map_or(0, |g| g.attempts),
        pinch_distance: math::dist(&r.tips[0..3], &r.tips[3..6]),
        action: r.action,
        tips: r.tips,
        cost: r.cost,
        predicted_cost: r.predicted_cost,
        samples: r.samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyRun {
    pub hand: String,
    pub episodes: usize,
    pub report: SynergyReport,
}

/// PCA of the actions executed by the bidirectional planner on reach episodes.
pub fn synergy_run(cfg: &ExperimentConfig) -> Result<SynergyRun> {
    let hand = cfg.hand_config();
    let models = obtain_models(&hand, cfg, cfg.setting, cfg.seed)?;
    let p = planner(PlannerKind::Ours, &models, cfg.budget(), cfg);
    let pairs = episode_pairs(&hand, cfg.synergy.episodes, derive_seed(cfg.seed, 70));
    let recs = run_episodes(&hand, &p, &pairs, &mpc_options(cfg, cfg.setting), derive_seed(cfg.seed, 71))?;
    let actions: Vec<f64> = recs.iter().flat_map(|r| r.actions.iter().flatten().copied()).collect();
    Ok(SynergyRun {
        hand: hand.name.clone(),
        episodes: recs.len(),
        report: synergy::analyze(&actions, hand.action_dim())?,
    })
}

/// Presets in increasing action dimension.
pub fn presets_by_action_dim() -> Vec<Preset> {
    let mut p = Preset::ALL.to_vec();
    p.sort_by_key(|p| p.config().action_dim());
    p
}
