//! Sampling and gradient planners over learned dynamics, and the MPC loop.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::hand::{HandConfig, Setting, SimState};
use crate::internal::{ForwardModel, InverseModel};
use crate::math;
use crate::nn::Tape;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Per-step diagonal Gaussian over an action sequence of `horizon` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub horizon: usize,
    pub action_dim: usize,
}

impl ActionDistribution {
    pub fn new(means: Vec<f64>, stds: Vec<f64>, horizon: usize, action_dim: usize) -> Result<Self> {
        if means.len() != horizon * action_dim || stds.len() != means.len() {
            return Err(shape_err!(
                "distribution of {} means / {} stds for {horizon}x{action_dim}",
                means.len(),
                stds.len()
            ));
        }
        if !math::all_finite(&means) || !math::all_finite(&stds) {
            return Err(Error::Numeric("distribution parameters".into()));
        }
        if stds.iter().any(|&s| s < 0.0) {
            return Err(Error::Domain("negative standard deviation".into()));
        }
        Ok(Self {
            means,
            stds,
            horizon,
            action_dim,
        })
    }

    /// Zero mean with standard deviation `std` on every entry.
    pub fn wide(horizon: usize, action_dim: usize, std: f64) -> Self {
        let n = horizon * action_dim;
        Self {
            means: vec![0.0; n],
            stds: vec![std; n],
            horizon,
            action_dim,
        }
    }

    /// Repeats the first step's mean and std over `horizon` steps.
    pub fn tiled(&self, horizon: usize) -> Self {
        let k = self.action_dim;
        let mut means = Vec::with_capacity(horizon * k);
        let mut stds = Vec::with_capacity(horizon * k);
        for _ in 0..horizon {
            means.extend_from_slice(&self.means[..k]);
            stds.extend_from_slice(&self.stds[..k]);
        }
        Self {
            means,
            stds,
            horizon,
            action_dim: k,
        }
    }

    /// Drops the first step and repeats the last one (warm start for MPC).
    pub fn shifted(&self) -> Self {
        let k = self.action_dim;
        let mut out = self.clone();
        if self.horizon > 1 {
            out.means.copy_within(k.., 0);
            out.stds.copy_within(k.., 0);
        }
        out
    }

    /// One sequence clipped to the action box `[-1, 1]`.
    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        for ((o, m), s) in out.iter_mut().zip(&self.means).zip(&self.stds) {
            let x = if *s > 0.0 { m + s * rng::normal(rng) } else { *m };
            *o = x.clamp(-1.0, 1.0);
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.means.len()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// CEM budget. `beta` weights the previous distribution in the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanBudget {
    pub horizon: usize,
    pub cem_iterations: usize,
    pub samples: usize,
    pub elites: usize,
    pub beta: f64,
}

impl PlanBudget {
    pub fn quasi_static() -> Self {
        Self {
            horizon: 1,
            cem_iterations: 5,
            samples: 400,
            elites: 20,
            beta: 0.1,
        }
    }

    pub fn sequential() -> Self {
        Self {
            horizon: 3,
            cem_iterations: 3,
            samples: 600,
            elites: 20,
            beta: 0.2,
        }
    }

    pub fn for_setting(setting: Setting) -> Self {
        match setting {
            Setting::QuasiStatic => Self::quasi_static(),
            Setting::Sequential => Self::sequential(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.cem_iterations == 0 || self.samples == 0 {
            return Err(config_err!("horizon, iterations and samples must be positive"));
        }
        if self.elites == 0 || self.elites > self.samples {
            return Err(config_err!("elites {} must be in 1..={}", self.elites, self.samples));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(config_err!("beta {} outside (0, 1]", self.beta));
        }
        Ok(())
    }

    /// Rollouts consumed per planning call (the P.S. metric).
    pub fn planning_samples(&self) -> usize {
        self.cem_iterations * self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    /// Best sequence found, `horizon x K` row-major.
    pub actions: Vec<f64>,
    /// Predicted cost of `actions`.
    pub cost: f64,
    /// Model rollouts consumed.
    pub samples: usize,
    /// Best-ever cost after each iteration.
    pub trace: Vec<f64>,
    /// Final sampling distribution (CEM only).
    pub distribution: Option<ActionDistribution>,
}

/// Batched one-step dynamics used by the planners.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn step_batch(&self, states: &[f64], actions: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()>;
}

impl Dynamics for ForwardModel {
    fn state_dim(&self) -> usize {
        ForwardModel::state_dim(self)
    }

    fn action_dim(&self) -> usize {
        ForwardModel::action_dim(self)
    }

    fn step_batch(&self, states: &[f64], actions: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()> {
        self.predict_batch(states, actions, batch, out)
    }
}

/// Cost of a predicted trajectory: `states` holds `T + 1` stacked states
/// (the first is the start state) and `actions` the `T` actions.
pub trait TrajectoryCost {
    fn cost(&self, states: &[f64], actions: &[f64]) -> f64;
}

impl<F: Fn(&[f64], &[f64]) -> f64> TrajectoryCost for F {
    fn cost(&self, states: &[f64], actions: &[f64]) -> f64 {
        self(states, actions)
    }
}

/// A cost that also returns its gradient w.r.t. the predicted states.
pub trait DifferentiableCost: TrajectoryCost {
    /// Writes `dC/dstates` (same layout as `states`) and returns the cost.
    fn cost_grad(&self, states: &[f64], actions: &[f64], grad: &mut [f64]) -> f64;
}

/// Terminal distance to the target plus `shaping` times the mean per-step distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachCost {
    pub target: Vec<f64>,
    pub shaping: f64,
}

impl ReachCost {
    pub fn new(target: Vec<f64>) -> Self {
        Self { target, shaping: 0.1 }
    }
}

impl TrajectoryCost for ReachCost {
    fn cost(&self, states: &[f64], _actions: &[f64]) -> f64 {
        let h = self.target.len();
        let t = states.len() / h - 1;
        if t == 0 {
            return math::dist(states, &self.target);
        }
        let mut shaping = 0.0;
        for s in states.chunks_exact(h).skip(1) {
            shaping += math::dist(s, &self.target);
        }
        math::dist(&states[t * h..], &self.target) + self.shaping * shaping / t as f64
    }
}

impl DifferentiableCost for ReachCost {
    fn cost_grad(&self, states: &[f64], actions: &[f64], grad: &mut [f64]) -> f64 {
        let h = self.target.len();
        let t = states.len() / h - 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut add = |i: usize, w: f64| {
            let s = &states[i * h..(i + 1) * h];
            let d = math::dist(s, &self.target);
            if d > 0.0 {
                for k in 0..h {
                    grad[i * h + k] += w * (s[k] - self.target[k]) / d;
                }
            }
        };
        if t == 0 {
            add(0, 1.0);
        } else {
            add(t, 1.0);
            for i in 1..=t {
                add(i, self.shaping / t as f64);
            }
        }
        self.cost(states, actions)
    }
}

/// Rolls `batch` action sequences of `horizon` steps from `s0`; returns the
/// stacked trajectories, `batch x (horizon + 1) x H`.
pub fn rollout_batch<D: Dynamics + ?Sized>(dynamics: &D, s0: &[f64], actions: &[f64], batch: usize, horizon: usize) -> Result<Vec<f64>> {
    let (h, k) = (dynamics.state_dim(), dynamics.action_dim());
    if s0.len() != h || actions.len() != batch * horizon * k {
        return Err(shape_err!("rollout of {batch} sequences x {horizon} steps from state {}", s0.len()));
    }
    let stride = (horizon + 1) * h;
    let mut traj = vec![0.0; batch * stride];
    for b in 0..batch {
        traj[b * stride..b * stride + h].copy_from_slice(s0);
    }
    let mut cur = Vec::with_capacity(batch * h);
    let mut act = Vec::with_capacity(batch * k);
    let mut next = Vec::new();
    for t in 0..horizon {
        cur.clear();
        act.clear();
        for b in 0..batch {
            cur.extend_from_slice(&traj[b * stride + t * h..b * stride + (t + 1) * h]);
            act.extend_from_slice(&actions[(b * horizon + t) * k..(b * horizon + t + 1) * k]);
        }
        dynamics.step_batch(&cur, &act, batch, &mut next)?;
        for b in 0..batch {
            traj[b * stride + (t + 1) * h..b * stride + (t + 2) * h].copy_from_slice(&next[b * h..(b + 1) * h]);
        }
    }
    Ok(traj)
}

fn score_batch<D: Dynamics + ?Sized, C: TrajectoryCost + ?Sized>(dynamics: &D, s0: &[f64], actions: &[f64], batch: usize, horizon: usize, cost: &C) -> Result<Vec<f64>> {
    let traj = rollout_batch(dynamics, s0, actions, batch, horizon)?;
    let k = dynamics.action_dim();
    let stride = (horizon + 1) * dynamics.state_dim();
    Ok((0..batch)
        .map(|b| {
            let c = cost.cost(&traj[b * stride..(b + 1) * stride], &actions[b * horizon * k..(b + 1) * horizon * k]);
            if c.is_nan() {
                f64::INFINITY
            } else {
                c
            }
        })
        .collect())
}

/// Cross-entropy refinement of `init`.
///
/// The first candidate of the first iteration is the mean of `init`, so an
/// inverse-model seed is always scored. Elites are the `elites` lowest costs
/// (ties broken by sample index); the update is
/// `new = beta * old + (1 - beta) * elite_stat` for means and stds.
pub fn cem_refine<D: Dynamics + ?Sized, C: TrajectoryCost + ?Sized>(
    dynamics: &D,
    init: &ActionDistribution,
    s0: &[f64],
    cost: &C,
    budget: &PlanBudget,
    seed: u64,
) -> Result<PlanResult> {
    budget.validate()?;
    let k = dynamics.action_dim();
    if init.action_dim != k || init.horizon != budget.horizon {
        return Err(shape_err!(
            "initial distribution {}x{} for horizon {} and K = {k}",
            init.horizon,
            init.action_dim,
            budget.horizon
        ));
    }
    let n = budget.samples;
    let len = budget.horizon * k;
    let mut dist = init.clone();
    let mut r = rng::seeded(seed);
    let mut candidates = vec![0.0; n * len];
    let mut best_cost = f64::INFINITY;
    let mut best = init.means.iter().map(|m| m.clamp(-1.0, 1.0)).collect::<Vec<_>>();
    let mut trace = Vec::with_capacity(budget.cem_iterations);
    let mut order: Vec<usize> = (0..n).collect();
    let mut elite_mean = vec![0.0; len];
    let mut elite_var = vec![0.0; len];
    for it in 0..budget.cem_iterations {
        for (i, c) in candidates.chunks_exact_mut(len).enumerate() {
            if it == 0 && i == 0 {
                for (o, m) in c.iter_mut().zip(&dist.means) {
                    *o = m.clamp(-1.0, 1.0);
                }
            } else {
                dist.sample_into(&mut r, c);
            }
        }
        let costs = score_batch(dynamics, s0, &candidates, n, budget.horizon, cost)?;
        if costs.iter().all(|c| c.is_infinite() && *c > 0.0) {
            return Err(Error::Planning("every candidate cost is NaN or infinite".into()));
        }
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        if costs[order[0]] < best_cost {
            best_cost = costs[order[0]];
            best.copy_from_slice(&candidates[order[0] * len..(order[0] + 1) * len]);
        }
        trace.push(best_cost);
        let elites = &order[..budget.elites];
        elite_mean.iter_mut().for_each(|m| *m = 0.0);
        elite_var.iter_mut().for_each(|v| *v = 0.0);
        for &e in elites {
            math::axpy(1.0, &candidates[e * len..(e + 1) * len], &mut elite_mean);
        }
        let inv = 1.0 / elites.len() as f64;
        elite_mean.iter_mut().for_each(|m| *m *= inv);
        for &e in elites {
            for (v, (c, m)) in elite_var.iter_mut().zip(candidates[e * len..(e + 1) * len].iter().zip(&elite_mean)) {
                *v += (c - m) * (c - m);
            }
        }
        let b = budget.beta;
        for j in 0..len {
            dist.means[j] = b * dist.means[j] + (1.0 - b) * elite_mean[j];
            dist.stds[j] = b * dist.stds[j] + (1.0 - b) * math::sqrt(elite_var[j] * inv);
        }
    }
    Ok(PlanResult {
        actions: best,
        cost: best_cost,
        samples: budget.planning_samples(),
        trace,
        distribution: Some(dist),
    })
}

/// Inverse-model seeded CEM: the single-step inverse Gaussian at `(s, target)`
/// is tiled over the horizon and refined against the forward model.
pub fn bidirectional_plan<D: Dynamics + ?Sized, C: TrajectoryCost + ?Sized>(
    dynamics: &D,
    inverse: &InverseModel,
    s: &[f64],
    target: &[f64],
    cost: &C,
    budget: &PlanBudget,
    seed: u64,
) -> Result<PlanResult> {
    let init = inverse.distribution(s, target)?.tiled(budget.horizon);
    cem_refine(dynamics, &init, s, cost, budget, seed)
}

/// Uniform random shooting. Sample `i` is the same for every `n > i`.
pub fn random_shoot<D: Dynamics + ?Sized, C: TrajectoryCost + ?Sized>(dynamics: &D, s0: &[f64], horizon: usize, cost: &C, n: usize, seed: u64) -> Result<PlanResult> {
    if n == 0 || horizon == 0 {
        return Err(config_err!("random shooting needs samples and horizon >= 1"));
    }
    let len = horizon * dynamics.action_dim();
    let mut r = rng::seeded(seed);
    let mut best = Vec::new();
    let mut best_cost = f64::INFINITY;
    let chunk = 512;
    let mut done = 0;
    while done < n {
        let m = chunk.min(n - done);
        let cand: Vec<f64> = (0..m * len).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let costs = score_batch(dynamics, s0, &cand, m, horizon, cost)?;
        for (i, c) in costs.iter().enumerate() {
            if *c < best_cost || best.is_empty() {
                best_cost = *c;
                best = cand[i * len..(i + 1) * len].to_vec();
            }
        }
        done += m;
    }
    Ok(PlanResult {
        actions: best,
        cost: best_cost,
        samples: n,
        trace: vec![best_cost],
        distribution: None,
    })
}

/// Cost of an action sequence rolled through `fm` and its gradient w.r.t. the actions.
pub fn sequence_gradient<C: DifferentiableCost + ?Sized>(fm: &ForwardModel, s0: &[f64], actions: &[f64], cost: &C) -> Result<(f64, Vec<f64>)> {
    let (h, k) = (fm.state_dim(), fm.action_dim());
    if s0.len() != h || actions.len() % k != 0 {
        return Err(shape_err!("sequence of {} values for K = {k}", actions.len()));
    }
    let horizon = actions.len() / k;
    let mut states = Vec::with_capacity((horizon + 1) * h);
    states.extend_from_slice(s0);
    let mut tapes = Vec::with_capacity(horizon);
    let mut input = vec![0.0; h + k];
    let mut out = Vec::new();
    for t in 0..horizon {
        input[..h].copy_from_slice(&states[t * h..(t + 1) * h]);
        input[h..].copy_from_slice(&actions[t * k..(t + 1) * k]);
        let mut tape = Tape::new();
        fm.net.forward_taped(&input, 1, &mut tape, &mut out)?;
        for j in 0..h {
            let v = states[t * h + j] + out[j];
            states.push(v);
        }
        tapes.push(tape);
    }
    let mut dstates = vec![0.0; states.len()];
    let c = cost.cost_grad(&states, actions, &mut dstates);
    let mut grad = vec![0.0; actions.len()];
    let mut scratch = vec![0.0; fm.net.num_params()];
    let mut din = vec![0.0; h + k];
    let mut g = dstates[horizon * h..].to_vec();
    for t in (0..horizon).rev() {
        fm.net.backward(&tapes[t], &g, &mut scratch, Some(&mut din))?;
        grad[t * k..(t + 1) * k].copy_from_slice(&din[h..]);
        for j in 0..h {
            g[j] += din[j] + dstates[t * h + j];
        }
    }
    if !c.is_finite() || !math::all_finite(&grad) {
        return Err(Error::Numeric("action-sequence gradient".into()));
    }
    Ok((c, grad))
}

/// Projected gradient descent on the action sequence through the model.
pub fn gradient_plan<C: DifferentiableCost + ?Sized>(fm: &ForwardModel, s0: &[f64], init: &[f64], cost: &C, steps: usize, lr: f64) -> Result<PlanResult> {
    let mut actions: Vec<f64> = init.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    let (mut c, mut g) = sequence_gradient(fm, s0, &actions, cost)?;
    let mut best = (c, actions.clone());
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        for (a, gi) in actions.iter_mut().zip(&g) {
            *a = (*a - lr * gi).clamp(-1.0, 1.0);
        }
        (c, g) = sequence_gradient(fm, s0, &actions, cost)?;
        if c < best.0 {
            best = (c, actions.clone());
        }
        trace.push(best.0);
    }
    if steps == 0 {
        best = (c, actions);
    }
    Ok(PlanResult {
        actions: best.1,
        cost: best.0,
        samples: steps,
        trace,
        distribution: None,
    })
}

/// Planner choice for the reach task.
#[derive(Debug, Clone, Copy)]
pub enum Planner<'a> {
    /// Inverse-initialised CEM.
    Bidirectional {
        forward: &'a ForwardModel,
        inverse: &'a InverseModel,
        budget: PlanBudget,
    },
    /// CEM from a zero-mean distribution with `init_std` on every entry.
    Cem {
        forward: &'a ForwardModel,
        budget: PlanBudget,
        init_std: f64,
    },
    RandomShooting {
        forward: &'a ForwardModel,
        horizon: usize,
        samples: usize,
    },
    Gradient {
        forward: &'a ForwardModel,
        horizon: usize,
        steps: usize,
        learning_rate: f64,
    },
}

impl Planner<'_> {
    pub fn horizon(&self) -> usize {
        match self {
            Planner::Bidirectional { budget, .. } | Planner::Cem { budget, .. } => budget.horizon,
            Planner::RandomShooting { horizon, .. } | Planner::Gradient { horizon, .. } => *horizon,
        }
    }

    /// Plans from `s` towards `target`; `warm` replaces the initial CEM
    /// distribution when given.
    pub fn plan(&self, s: &[f64], target: &[f64], seed: u64, warm: Option<&ActionDistribution>) -> Result<PlanResult> {
        let cost = ReachCost::new(target.to_vec());
        match *self {
            Planner::Bidirectional { forward, inverse, budget } => match warm {
                Some(w) => cem_refine(forward, w, s, &cost, &budget, seed),
                None => bidirectional_plan(forward, inverse, s, target, &cost, &budget, seed),
            },
            Planner::Cem { forward, budget, init_std } => {
                let wide = ActionDistribution::wide(budget.horizon, forward.action_dim(), init_std);
                cem_refine(forward, warm.unwrap_or(&wide), s, &cost, &budget, seed)
            }
            Planner::RandomShooting { forward, horizon, samples } => random_shoot(forward, s, horizon, &cost, samples, seed),
            Planner::Gradient {
                forward,
                horizon,
                steps,
                learning_rate,
            } => {
                let init = vec![0.0; horizon * forward.action_dim()];
                gradient_plan(forward, s, &init, &cost, steps, learning_rate)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcOptions {
    pub max_steps: usize,
    pub setting: Setting,
    /// Actions executed from each plan before replanning.
    pub replan_every: usize,
    /// Start CEM from the shifted previous distribution instead of re-seeding.
    pub warm_start: bool,
}

impl MpcOptions {
    pub fn new(max_steps: usize, setting: Setting) -> Self {
        Self {
            max_steps,
            setting,
            replan_every: 1,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Fingertip states, starting with the initial one.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Reach error after each recorded state.
    pub errors: Vec<f64>,
    pub per_finger_error: Vec<f64>,
    pub final_error: f64,
    pub success: bool,
    /// Planning samples per planning call.
    pub samples_per_plan: usize,
    pub total_samples: usize,
}

/// Closed-loop execution: plan, execute, observe, replan. Stops early once
/// the reach error drops below the hand's success threshold.
pub fn mpc_rollout(hand: &HandConfig, planner: &Planner<'_>, start: &SimState, target: &[f64], opts: &MpcOptions, seed: u64) -> Result<EpisodeRecord> {
    if target.len() != hand.state_dim() {
        return Err(shape_err!("target of {} values for H = {}", target.len(), hand.state_dim()));
    }
    let k = hand.action_dim();
    let mut state = start.clone();
    let mut rec = EpisodeRecord {
        states: vec![state.tips.clone()],
        actions: Vec::new(),
        errors: vec![hand.reach_error(&state.tips, target)],
        per_finger_error: Vec::new(),
        final_error: 0.0,
        success: false,
        samples_per_plan: 0,
        total_samples: 0,
    };
    let every = opts.replan_every.clamp(1, planner.horizon());
    let mut warm: Option<ActionDistribution> = None;
    let mut step = 0;
    let mut plan_idx = 0u64;
    while step < opts.max_steps && *rec.errors.last().unwrap() >= hand.success_threshold {
        let plan = planner.plan(&state.tips, target, rng::derive_seed(seed, plan_idx), warm.as_ref())?;
        plan_idx += 1;
        rec.samples_per_plan = plan.samples;
        rec.total_samples += plan.samples;
        if opts.warm_start {
            warm = plan.distribution.as_ref().map(|d| {
                let mut d = d.clone();
                for _ in 0..every {
                    d = d.shifted();
                }
                d
            });
        }
        for a in plan.actions.chunks_exact(k).take(every) {
            if step >= opts.max_steps {
                break;
            }
            state = hand.env_step(&state, a, opts.setting)?;
            rec.actions.push(a.to_vec());
            rec.states.push(state.tips.clone());
            rec.errors.push(hand.reach_error(&state.tips, target));
            step += 1;
        }
    }
    rec.final_error = *rec.errors.last().unwrap();
    rec.per_finger_error = hand.per_finger_error(&state.tips, target);
    rec.success = rec.final_error < hand.success_threshold;
    Ok(rec)
}
