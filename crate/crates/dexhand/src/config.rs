//! Experiment configuration, read from TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dexhand_core::factorized::AdaptSchedule;
use dexhand_core::gesture::{Exemplar, GestureBudget};
use dexhand_core::hand::{HandConfig, Preset, Setting};
use dexhand_core::internal::{ForwardHyper, InverseHyper};
use dexhand_core::nn::{Activation, Architecture};
use dexhand_core::plan::PlanBudget;

use crate::error::{Error, Result};
use crate::llm::LlmClientConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    /// Inverse-initialised CEM.
    Ours,
    FmCem,
    FmRs,
    /// Gradient descent through the forward model.
    FmBgd,
}

impl PlannerKind {
    pub fn label(self) -> &'static str {
        match self {
            PlannerKind::Ours => "ours",
            PlannerKind::FmCem => "fm_cem",
            PlannerKind::FmRs => "fm_rs",
            PlannerKind::FmBgd => "fm_bgd",
        }
    }
}

/// Random-exploration data collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub episodes: usize,
    pub steps: usize,
    /// Every `holdout_every`-th episode is held out for evaluation.
    pub holdout_every: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 400,
            steps: 50,
            holdout_every: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Multi-step horizon (forward) or target shift (inverse); `None` picks
    /// the setting default.
    pub horizon: Option<usize>,
    pub discount: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            steps: 1500,
            batch_size: 64,
            horizon: None,
            discount: 0.95,
        }
    }
}

impl NetConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.hidden.clone(), self.activation)
    }

    pub fn forward_hyper(&self, setting: Setting, seed: u64) -> ForwardHyper {
        let base = ForwardHyper::for_setting(setting);
        ForwardHyper {
            horizon: self.horizon.unwrap_or(base.horizon),
            discount: self.discount,
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            architecture: self.architecture(),
            seed,
        }
    }

    pub fn inverse_hyper(&self, seed: u64) -> InverseHyper {
        InverseHyper {
            target_shift: self.horizon.unwrap_or(1),
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            architecture: self.architecture(),
            seed,
        }
    }
}

/// Where trained models come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub forward: Option<PathBuf>,
    pub inverse: Option<PathBuf>,
    /// Refuse to train when a model file is missing.
    pub no_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub planners: Vec<PlannerKind>,
    /// `None` picks the setting default.
    pub budget: Option<PlanBudget>,
    pub episodes: usize,
    pub max_steps: usize,
    /// Std of the zero-mean initial distribution of plain CEM.
    pub cem_init_std: f64,
    pub gradient_steps: usize,
    pub gradient_learning_rate: f64,
    /// Success threshold override (metres).
    pub success_threshold: Option<f64>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            planners: vec![PlannerKind::Ours, PlannerKind::FmCem, PlannerKind::FmRs],
            budget: None,
            episodes: 20,
            max_steps: 30,
            cem_init_std: 0.5,
            gradient_steps: 50,
            gradient_learning_rate: 0.05,
            success_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub presets: Vec<Preset>,
    pub data_sizes: Vec<usize>,
    /// Transitions held out for every data-size cell.
    pub eval_size: usize,
    /// `(samples, iterations)` grid for the budget sweep.
    pub budgets: Vec<(usize, usize)>,
    pub episodes: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            presets: Preset::ALL.to_vec(),
            data_sizes: vec![2500, 5000, 10000, 20000, 40000],
            eval_size: 5000,
            budgets: vec![(100, 2), (200, 3), (400, 5), (600, 5)],
            episodes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InHandConfig {
    pub hand: Preset,
    /// Grasp pose as a fraction of every joint range.
    pub grasp_fraction: f64,
    pub radius_scale: f64,
    /// Extra contact margin (metres).
    pub slack: f64,
    pub goal_rotation: f64,
    pub schedule: AdaptSchedule,
    pub budget: PlanBudget,
    pub external: NetConfig,
    pub learners: Vec<LearnerKind>,
    /// Success level for the steps-to-success summary.
    pub success_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Factorized,
    End2end,
    Monolithic,
}

impl Default for InHandConfig {
    fn default() -> Self {
        Self {
            hand: Preset::Myohand,
            grasp_fraction: 0.45,
            radius_scale: 0.8,
            slack: 0.05,
            goal_rotation: 1.0,
            schedule: AdaptSchedule {
                iterations: 50,
                rollouts: 10,
                learning_rate: 1e-3,
                explore_std: 0.05,
                ..AdaptSchedule::default()
            },
            budget: PlanBudget {
                horizon: 5,
                cem_iterations: 3,
                samples: 200,
                elites: 20,
                beta: 0.2,
            },
            external: NetConfig {
                horizon: Some(10),
                ..NetConfig::default()
            },
            learners: vec![LearnerKind::Factorized, LearnerKind::Monolithic],
            success_level: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub fatigue: f64,
    pub finetune_samples: usize,
    pub eval_samples: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            fatigue: 0.5,
            finetune_samples: 1000,
            eval_samples: 500,
            steps: 500,
            learning_rate: 1e-3,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureConfig {
    /// Program text; wins over `exemplar` and `request`.
    pub program: Option<String>,
    pub exemplar: Option<Exemplar>,
    /// Free-text request sent to the language model.
    pub request: Option<String>,
    /// Exemplars shown to the language model.
    pub prompt_exemplars: Vec<Exemplar>,
    pub budget: GestureBudget,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            program: None,
            exemplar: Some(Exemplar::Ok),
            request: None,
            prompt_exemplars: vec![Exemplar::Ok, Exemplar::ThumbUp],
            budget: GestureBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynergyConfig {
    /// Reach episodes whose executed actions are analysed.
    pub episodes: usize,
}

impl Default for SynergyConfig {
    fn default() -> Self {
        Self { episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub hand: Preset,
    pub setting: Setting,
    pub seed: u64,
    pub seeds: usize,
    pub data: DataConfig,
    pub forward: NetConfig,
    pub inverse: NetConfig,
    pub models: ModelsConfig,
    pub plan: PlanConfig,
    pub ablation: AblationConfig,
    pub inhand: InHandConfig,
    pub adapt: AdaptConfig,
    pub gesture: GestureConfig,
    pub llm: LlmClientConfig,
    pub synergy: SynergyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hand: Preset::Allegro,
            setting: Setting::Sequential,
            seed: 0,
            seeds: 1,
            data: DataConfig::default(),
            forward: NetConfig::default(),
            inverse: NetConfig {
                steps: 3000,
                ..NetConfig::default()
            },
            models: ModelsConfig::default(),
            plan: PlanConfig::default(),
            ablation: AblationConfig::default(),
            inhand: InHandConfig::default(),
            adapt: AdaptConfig::default(),
            gesture: GestureConfig::default(),
            llm: LlmClientConfig::default(),
            synergy: SynergyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hand_config(&self) -> HandConfig {
        let mut hand = self.hand.config();
        if let Some(t) = self.plan.success_threshold {
            hand.success_threshold = t;
        }
        hand
    }

    pub fn budget(&self) -> PlanBudget {
        self.plan.budget.unwrap_or_else(|| PlanBudget::for_setting(self.setting))
    }

    /// Fills every setting-dependent default so results record what ran.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.plan.budget = Some(self.budget());
        let fwd = self.forward.forward_hyper(self.setting, 0);
        c.forward.horizon = Some(fwd.horizon);
        c.inverse.horizon = Some(self.inverse.horizon.unwrap_or(1));
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.plan.episodes == 0 || self.seeds == 0 {
            return bad("episodes and seeds must be at least 1");
        }
        if self.data.episodes == 0 || self.data.steps == 0 || self.data.holdout_every < 2 {
            return bad("data collection needs episodes, steps and holdout_every >= 2");
        }
        if self.plan.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.plan.success_threshold.is_some_and(|t| !(t > 0.0)) {
            return bad("success threshold must be positive");
        }
        for net in [&self.forward, &self.inverse, &self.inhand.external] {
            if !(net.learning_rate > 0.0) || net.batch_size == 0 {
                return bad("learning rates and batch sizes must be positive");
            }
        }
        self.budget().validate()?;
        self.inhand.budget.validate()?;
        self.inhand.schedule.validate()?;
        if !(0.0..1.0).contains(&self.adapt.fatigue) || self.adapt.fatigue == 0.0 {
            return bad("fatigue factor must lie in (0, 1)");
        }
        if self.ablation.data_sizes.is_empty() || self.ablation.budgets.is_empty() || self.ablation.presets.is_empty() {
            return bad("ablation grids must be non-empty");
        }
        Ok(())
    }
}
