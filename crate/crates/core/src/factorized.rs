//! In-hand reorientation with factorized dynamics: a frozen forward model of
//! the hand followed by an object model `f_psi(s_hat, x)` that never sees the
//! action, plus the monolithic `(s, x, a)` baseline and the online loop.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::hand::{object_step, HandConfig, ObjectConfig, ObjectState, Setting, SimState};
use crate::internal::{Dataset, ForwardModel, Transition};
use crate::math;
use crate::nn::{AdamState, Architecture, DenseNet, Normalizer, Tape};
use crate::plan::{cem_refine, ActionDistribution, Dynamics, PlanBudget, TrajectoryCost};
use crate::rng;
use crate::{Error, Result};

/// Object-state width `O`: `(cos z, sin z, x, y, dropped)`.
pub const OBJECT_DIM: usize = 5;

pub fn encode_object(obj: &ObjectState) -> [f64; OBJECT_DIM] {
    [
        math::cos(obj.z_rotation),
        math::sin(obj.z_rotation),
        obj.xy_position[0],
        obj.xy_position[1],
        if obj.dropped { 1.0 } else { 0.0 },
    ]
}

/// Object model `(s_hat, x) -> (s', x')`, residual form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalModel {
    pub net: DenseNet,
    pub horizon: usize,
    pub discount: f64,
}

impl ExternalModel {
    /// The last layer starts at zero, so an untrained model passes
    /// `(s_hat, x)` through unchanged.
    pub fn new(state_dim: usize, arch: &Architecture, horizon: usize, discount: f64, seed: u64) -> Result<Self> {
        if horizon == 0 || !(discount > 0.0 && discount <= 1.0) {
            return Err(config_err!("horizon must be >= 1 and discount in (0, 1]"));
        }
        let d = state_dim + OBJECT_DIM;
        let mut net = DenseNet::with_architecture(d, d, arch, seed)?;
        let last = net.layer_sizes().len() - 2;
        let (w, b) = net.layer_mut(last);
        w.iter_mut().for_each(|x| *x = 0.0);
        b.iter_mut().for_each(|x| *x = 0.0);
        Ok(Self { net, horizon, discount })
    }

    pub fn state_dim(&self) -> usize {
        self.net.in_dim() - OBJECT_DIM
    }

    pub fn input_width(&self) -> usize {
        self.net.in_dim()
    }

    /// `(s_hat, x) + net(s_hat, x)` for a batch of stacked `(s_hat, x)` rows.
    pub fn apply_batch(&self, rows: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()> {
        self.net.forward_batch(rows, batch, out)?;
        for (o, r) in out.iter_mut().zip(rows) {
            *o += r;
        }
        Ok(())
    }
}

/// `s_hat = internal(s, a)`, then `(s', x') = external(s_hat, x)`.
pub fn factorized_predict(internal: &ForwardModel, external: &ExternalModel, s: &[f64], x: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = internal.state_dim();
    if external.state_dim() != h || x.len() != OBJECT_DIM {
        return Err(shape_err!(
            "external model for H = {}, O = {} used with H = {h}, O = {}",
            external.state_dim(),
            OBJECT_DIM,
            x.len()
        ));
    }
    let mut row = internal.predict(s, a)?;
    row.extend_from_slice(x);
    let mut out = Vec::new();
    external.apply_batch(&row, 1, &mut out)?;
    let xs = out.split_off(h);
    Ok((out, xs))
}

/// Composite dynamics over `(s, x)` states for planning.
pub struct Factorized<'a> {
    pub internal: &'a ForwardModel,
    pub external: &'a ExternalModel,
}

impl Dynamics for Factorized<'_> {
    fn state_dim(&self) -> usize {
        self.internal.state_dim() + OBJECT_DIM
    }

    fn action_dim(&self) -> usize {
        self.internal.action_dim()
    }

    fn step_batch(&self, states: &[f64], actions: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()> {
        let h = self.internal.state_dim();
        let d = h + OBJECT_DIM;
        let mut hand = Vec::with_capacity(batch * h);
        for row in states.chunks_exact(d) {
            hand.extend_from_slice(&row[..h]);
        }
        let mut s_hat = Vec::new();
        self.internal.predict_batch(&hand, actions, batch, &mut s_hat)?;
        let mut rows = Vec::with_capacity(batch * d);
        for (sh, row) in s_hat.chunks_exact(h).zip(states.chunks_exact(d)) {
            rows.extend_from_slice(sh);
            rows.extend_from_slice(&row[h..]);
        }
        self.external.apply_batch(&rows, batch, out)
    }
}

/// Reorientation goal, success thresholds and reward weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReorientTask {
    pub goal_rotation: f64,
    pub goal_xy: [f64; 2],
    pub cos_threshold: f64,
    pub position_threshold: f64,
    /// `(lambda_1, lambda_2, lambda_3)`.
    pub weights: [f64; 3],
}

impl ReorientTask {
    pub fn new(goal_rotation: f64, goal_xy: [f64; 2]) -> Self {
        Self {
            goal_rotation,
            goal_xy,
            cos_threshold: 0.95,
            position_threshold: 0.075,
            weights: [1.0, 1.0, 5.0],
        }
    }

    /// Reward of an encoded (possibly predicted) object state. The predicted
    /// dropped flag is read as a probability clipped to `[0, 1]`.
    pub fn reward_encoded(&self, x: &[f64]) -> f64 {
        let [l1, l2, l3] = self.weights;
        let pos = math::sqrt((x[2] - self.goal_xy[0]).powi(2) + (x[3] - self.goal_xy[1]).powi(2));
        let n = math::sqrt(x[0] * x[0] + x[1] * x[1]).max(1e-9);
        let cos = (x[0] * math::cos(self.goal_rotation) + x[1] * math::sin(self.goal_rotation)) / n;
        -l1 * pos + l2 * cos - l3 * x[4].clamp(0.0, 1.0)
    }

    pub fn success(&self, obj: &ObjectState) -> bool {
        let pos = math::sqrt((obj.xy_position[0] - self.goal_xy[0]).powi(2) + (obj.xy_position[1] - self.goal_xy[1]).powi(2));
        !obj.dropped && math::cos(obj.z_rotation - self.goal_rotation) > self.cos_threshold && pos < self.position_threshold
    }
}

/// `R = -l1 |pos - goal| + l2 cos(rot - goal_rot) - l3 [dropped]`.
pub fn reorient_reward(obj: &ObjectState, task: &ReorientTask) -> f64 {
    task.reward_encoded(&encode_object(obj))
}

/// Planning cost: negative reward summed over the predicted horizon.
pub struct ReorientCost<'a> {
    pub task: &'a ReorientTask,
    pub state_dim: usize,
}

impl TrajectoryCost for ReorientCost<'_> {
    fn cost(&self, states: &[f64], _actions: &[f64]) -> f64 {
        let d = self.state_dim + OBJECT_DIM;
        -states
            .chunks_exact(d)
            .skip(1)
            .map(|row| self.task.reward_encoded(&row[self.state_dim..]))
            .sum::<f64>()
    }
}

/// A hand holding a cylinder-like object above the palm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InHandEnv {
    pub hand: HandConfig,
    pub object: ObjectConfig,
    pub grasp: SimState,
    /// Action that holds the grasp pose.
    pub hold: Vec<f64>,
}

impl InHandEnv {
    /// Builds the grasp from `grasp_fraction` of every joint range; the
    /// object sits at the fingertip centroid with a radius `radius_scale` of
    /// the mean tip distance. Every grasping tip starts at least `slack`
    /// inside the contact zone.
    pub fn new(hand: HandConfig, grasp_fraction: f64, radius_scale: f64, slack: f64) -> Result<Self> {
        hand.validate()?;
        let q: Vec<f64> = hand
            .joint_limits
            .iter()
            .map(|[lo, hi]| lo + grasp_fraction.clamp(0.0, 1.0) * (hi - lo))
            .collect();
        let hold = hand.hold_action(&q)?;
        let grasp = hand.state_from_angles(hand.joint_targets(&hold)?)?;
        let n = hand.num_fingers as f64;
        let mut c = [0.0; 3];
        for t in grasp.tips.chunks_exact(3) {
            for i in 0..3 {
                c[i] += t[i] / n;
            }
        }
        let dists: Vec<f64> = grasp.tips.chunks_exact(3).map(|t| math::dist(t, &c)).collect();
        let mean = math::mean(&dists);
        let spread = dists.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max);
        let object = ObjectConfig {
            radius: radius_scale * mean,
            height: c[2],
            grasp_margin: (1.0 - radius_scale) * mean + spread + slack,
            rotation_gain: 1.0,
            drop_patience: 2,
        };
        Ok(Self { hand, object, grasp, hold })
    }

    pub fn start_object(&self) -> ObjectState {
        let c = self.grasp.tips.chunks_exact(3).fold([0.0, 0.0], |acc, t| [acc[0] + t[0], acc[1] + t[1]]);
        let n = self.hand.num_fingers as f64;
        ObjectState::new([c[0] / n, c[1] / n])
    }

    /// Same grasp with the object radius scaled by `factor` (object variety).
    pub fn with_object_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        let outer = self.object.radius + self.object.grasp_margin;
        out.object.radius = self.object.radius * factor;
        out.object.grasp_margin = (outer - out.object.radius).max(0.0);
        out
    }

    pub fn step(&self, state: &SimState, obj: &ObjectState, action: &[f64]) -> Result<(SimState, ObjectState)> {
        let next = self.hand.env_step(state, action, Setting::Sequential)?;
        let o = object_step(obj, &state.tips, &next.tips, &self.object);
        Ok((next, o))
    }
}

/// Online loop schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptSchedule {
    pub iterations: usize,
    pub rollouts: usize,
    pub episode_steps: usize,
    /// Gradient steps on the whole buffer after every iteration.
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Std of the planning distribution around the hold action.
    pub init_std: f64,
    /// Std of Gaussian noise added to executed actions.
    pub explore_std: f64,
    /// Object radius factors cycled over rollouts (`[1.0]` for one object).
    pub object_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for AdaptSchedule {
    fn default() -> Self {
        Self {
            iterations: 200,
            rollouts: 40,
            episode_steps: 15,
            train_steps: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            init_std: 0.3,
            explore_std: 0.1,
            object_scales: vec![1.0],
            seed: 0,
        }
    }
}

impl AdaptSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.episode_steps == 0 || self.batch_size == 0 || self.object_scales.is_empty() {
            return Err(config_err!("rollouts, episode steps, batch size and object scales must be non-empty"));
        }
        if !(self.explore_std >= 0.0 && self.init_std >= 0.0) {
            return Err(config_err!("negative exploration std"));
        }
        Ok(())
    }
}

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Environment steps collected up to and including this iteration.
    pub env_steps: usize,
    pub success_rate: f64,
    /// Mean final-step reward over the iteration's rollouts.
    pub mean_reward: f64,
}

/// Which model the online loop learns.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    /// Frozen (or co-trained with `end2end`) internal model plus `f_psi`.
    Factorized {
        internal: ForwardModel,
        external: ExternalModel,
        end2end: bool,
    },
    /// A single `(s, x, a) -> (s, x)` model; `model.horizon` selects the loss.
    Monolithic { model: ForwardModel },
}

impl Learner {
    fn state_dim(&self) -> usize {
        match self {
            Learner::Factorized { internal, .. } => internal.state_dim(),
            Learner::Monolithic { model } => model.state_dim() - OBJECT_DIM,
        }
    }
}

impl Dynamics for Learner {
    fn state_dim(&self) -> usize {
        Learner::state_dim(self) + OBJECT_DIM
    }

    fn action_dim(&self) -> usize {
        match self {
            Learner::Factorized { internal, .. } => internal.action_dim(),
            Learner::Monolithic { model } => model.action_dim(),
        }
    }

    fn step_batch(&self, states: &[f64], actions: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()> {
        match self {
            Learner::Factorized { internal, external, .. } => Factorized { internal, external }.step_batch(states, actions, batch, out),
            Learner::Monolithic { model } => model.predict_batch(states, actions, batch, out),
        }
    }
}

/// Builds the `(H + O + K) -> (H + O)` baseline learner.
pub fn monolithic_learner(hand: &HandConfig, arch: &Architecture, horizon: usize, discount: f64, seed: u64) -> Result<Learner> {
    let d = hand.state_dim() + OBJECT_DIM;
    let mut model = ForwardModel::new(d, hand.action_dim(), arch, horizon, discount, seed)?;
    let last = model.net.layer_sizes().len() - 2;
    let (w, b) = model.net.layer_mut(last);
    w.iter_mut().for_each(|x| *x = 0.0);
    b.iter_mut().for_each(|x| *x = 0.0);
    Ok(Learner::Monolithic { model })
}

/// Discounted multi-step loss of the factorized composition over windows of
/// a `(s, x)`-state dataset. Gradients go to `grad_ext` and, when given, to
/// `grad_int` (end-to-end training).
pub fn factorized_loss(
    internal: &ForwardModel,
    external: &ExternalModel,
    data: &Dataset,
    starts: &[usize],
    mut grad_ext: Option<&mut [f64]>,
    mut grad_int: Option<&mut [f64]>,
) -> Result<f64> {
    let h = internal.state_dim();
    let d = h + OBJECT_DIM;
    let k = internal.action_dim();
    let b = starts.len();
    let horizon = external.horizon;
    if data.state_dim != d || data.action_dim != k {
        return Err(shape_err!("dataset ({}, {}) for H + O = {d}, K = {k}", data.state_dim, data.action_dim));
    }
    if b == 0 {
        return Err(shape_err!("empty batch of windows"));
    }
    let sigma = &external.net.output_norm().std;
    let norm = 1.0 / (b * d) as f64;
    let mut start = Vec::with_capacity(b * d);
    for &t in starts {
        start.extend_from_slice(&data.transitions[t].s);
    }
    let mut acc = vec![0.0; b * d];
    let want = grad_ext.is_some() || grad_int.is_some();
    let int_wanted = grad_int.is_some();
    let mut int_tapes = Vec::new();
    let mut ext_tapes = Vec::new();
    let mut residuals = Vec::with_capacity(horizon);
    let mut int_in = vec![0.0; b * (h + k)];
    let mut ext_in = vec![0.0; b * d];
    let mut int_out = Vec::new();
    let mut ext_out = Vec::new();
    let mut loss = 0.0;
    let mut weight = 1.0;
    for i in 0..horizon {
        for (j, &t) in starts.iter().enumerate() {
            let row = &mut int_in[j * (h + k)..(j + 1) * (h + k)];
            for c in 0..h {
                row[c] = start[j * d + c] + acc[j * d + c];
            }
            row[h..].copy_from_slice(&data.transitions[t + i].a);
        }
        if want {
            let mut tape = Tape::new();
            internal.net.forward_taped(&int_in, b, &mut tape, &mut int_out)?;
            int_tapes.push(tape);
        } else {
            internal.net.forward_batch(&int_in, b, &mut int_out)?;
        }
        // external input (s_hat, x); track it as start + accumulated delta
        for j in 0..b {
            for c in 0..h {
                acc[j * d + c] += int_out[j * h + c];
            }
            for c in 0..d {
                ext_in[j * d + c] = start[j * d + c] + acc[j * d + c];
            }
        }
        if want {
            let mut tape = Tape::new();
            external.net.forward_taped(&ext_in, b, &mut tape, &mut ext_out)?;
            ext_tapes.push(tape);
        } else {
            external.net.forward_batch(&ext_in, b, &mut ext_out)?;
        }
        let mut r = vec![0.0; b * d];
        let mut step_loss = 0.0;
        for (j, &t) in starts.iter().enumerate() {
            let target = &data.transitions[t + i].s_next;
            for c in 0..d {
                let idx = j * d + c;
                acc[idx] += ext_out[idx];
                let res = (acc[idx] - (target[c] - start[idx])) / sigma[c];
                r[idx] = res;
                step_loss += res * res;
            }
        }
        loss += weight * step_loss * norm;
        residuals.push(r);
        weight *= external.discount;
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("factorized loss diverged".into()));
    }
    if !want {
        return Ok(loss);
    }
    let mut scratch_ext = vec![0.0; if grad_ext.is_none() { external.net.num_params() } else { 0 }];
    let mut scratch_int = vec![0.0; if grad_int.is_none() { internal.net.num_params() } else { 0 }];
    let mut g = vec![0.0; b * d];
    let mut din_ext = vec![0.0; b * d];
    let mut din_int = vec![0.0; b * (h + k)];
    let mut g_hat = vec![0.0; b * h];
    let mut weight = libm::pow(external.discount, (horizon - 1) as f64);
    for i in (0..horizon).rev() {
        for (idx, (gv, r)) in g.iter_mut().zip(&residuals[i]).enumerate() {
            *gv += weight * 2.0 * r * norm / sigma[idx % d];
        }
        // through the external residual step: d/d(s_hat, x) = g + J^T g
        let ge: &mut [f64] = match grad_ext.as_deref_mut() {
            Some(x) => x,
            None => &mut scratch_ext,
        };
        external.net.backward(&ext_tapes[i], &g, ge, Some(&mut din_ext))?;
        for (gv, dv) in g.iter_mut().zip(&din_ext) {
            *gv += dv;
        }
        // through the internal residual step on the hand part
        for j in 0..b {
            g_hat[j * h..(j + 1) * h].copy_from_slice(&g[j * d..j * d + h]);
        }
        let need_input = i > 0;
        let gi: &mut [f64] = match grad_int.as_deref_mut() {
            Some(x) => x,
            None => &mut scratch_int,
        };
        if need_input || int_wanted {
            internal.net.backward(&int_tapes[i], &g_hat, gi, if need_input { Some(&mut din_int) } else { None })?;
        }
        if need_input {
            for j in 0..b {
                for c in 0..h {
                    g[j * d + c] += din_int[j * (h + k) + c];
                }
            }
        }
        weight /= external.discount;
    }
    Ok(loss)
}

fn refit_normalization(net: &mut DenseNet, data: &Dataset, residual_inputs: impl Fn(&Transition, &mut Vec<f64>, &mut Vec<f64>)) -> Result<()> {
    let mut inputs = Vec::with_capacity(data.len() * net.in_dim());
    let mut outputs = Vec::with_capacity(data.len() * net.out_dim());
    for t in &data.transitions {
        residual_inputs(t, &mut inputs, &mut outputs);
    }
    let i = Normalizer::fit_input(&inputs, net.in_dim())?;
    let o = Normalizer::fit_input(&outputs, net.out_dim())?;
    net.set_normalization(i, o)
}

struct Trainer {
    adam_ext: AdamState,
    adam_int: Option<AdamState>,
}

impl Learner {
    fn trainer(&self, lr: f64) -> Trainer {
        match self {
            Learner::Factorized { internal, external, end2end } => Trainer {
                adam_ext: AdamState::new(external.net.num_params(), lr),
                adam_int: end2end.then(|| AdamState::new(internal.net.num_params(), lr)),
            },
            Learner::Monolithic { model } => Trainer {
                adam_ext: AdamState::new(model.net.num_params(), lr),
                adam_int: None,
            },
        }
    }

    /// Refits normalisation on the buffer, then runs `steps` Adam steps.
    fn train(&mut self, tr: &mut Trainer, buffer: &Dataset, steps: usize, batch: usize, seed: u64) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let mut r = rng::seeded(seed);
        match self {
            Learner::Factorized { internal, external, end2end } => {
                let h = internal.state_dim();
                let snapshot = internal.clone();
                refit_normalization(&mut external.net, buffer, |t, i, o| {
                    // the external input is (s_hat, x); targets are (s', x') - (s_hat, x)
                    let s_hat = snapshot.predict(&t.s[..h], &t.a).unwrap_or_else(|_| t.s[..h].to_vec());
                    i.extend_from_slice(&s_hat);
                    i.extend_from_slice(&t.s[h..]);
                    o.extend(t.s_next[..h].iter().zip(&s_hat).map(|(n, s)| n - s));
                    o.extend(t.s_next[h..].iter().zip(&t.s[h..]).map(|(n, s)| n - s));
                })?;
                let windows = buffer.windows(external.horizon);
                if windows.is_empty() {
                    return Err(config_err!("episodes are shorter than the model horizon {}", external.horizon));
                }
                let mut ge = vec![0.0; external.net.num_params()];
                let mut gi = vec![0.0; if *end2end { internal.net.num_params() } else { 0 }];
                let mut starts = vec![0; batch];
                for _ in 0..steps {
                    starts.iter_mut().for_each(|s| *s = windows[rng::index(&mut r, windows.len())]);
                    ge.iter_mut().for_each(|g| *g = 0.0);
                    gi.iter_mut().for_each(|g| *g = 0.0);
                    if *end2end {
                        factorized_loss(internal, external, buffer, &starts, Some(&mut ge), Some(&mut gi))?;
                        tr.adam_int.as_mut().expect("end2end trainer").step(internal.net.params_mut(), &gi)?;
                    } else {
                        factorized_loss(internal, external, buffer, &starts, Some(&mut ge), None)?;
                    }
                    tr.adam_ext.step(external.net.params_mut(), &ge)?;
                }
            }
            Learner::Monolithic { model } => {
                model.fit_normalization(buffer)?;
                let (i, o) = (model.net.input_norm().clone(), model.net.output_norm().clone());
                let fix = |n: &Normalizer| {
                    let mut n = n.clone();
                    n.std.iter_mut().filter(|s| **s <= 1e-8).for_each(|s| *s = 1.0);
                    n
                };
                model.net.set_normalization(fix(&i), fix(&o))?;
                let windows = buffer.windows(model.horizon);
                if windows.is_empty() {
                    return Err(config_err!("episodes are shorter than the model horizon {}", model.horizon));
                }
                let mut g = vec![0.0; model.net.num_params()];
                let mut starts = vec![0; batch];
                for _ in 0..steps {
                    starts.iter_mut().for_each(|s| *s = windows[rng::index(&mut r, windows.len())]);
                    g.iter_mut().for_each(|x| *x = 0.0);
                    model.multi_step_loss(buffer, &starts, Some(&mut g))?;
                    tr.adam_ext.step(model.net.params_mut(), &g)?;
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a single closed-loop reorientation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InHandEpisode {
    pub transitions: Vec<Transition>,
    pub final_object: ObjectState,
    pub success: bool,
    pub final_reward: f64,
}

/// Runs one MPC episode with the learner's dynamics. `explore_std` noise is
/// added to every executed action.
pub fn inhand_episode(
    env: &InHandEnv,
    task: &ReorientTask,
    learner: &Learner,
    budget: &PlanBudget,
    schedule: &AdaptSchedule,
    episode: u32,
    seed: u64,
) -> Result<InHandEpisode> {
    let h = Learner::state_dim(learner);
    let k = env.hand.action_dim();
    let cost = ReorientCost { task, state_dim: h };
    let mut r = rng::seeded(rng::derive_seed(seed, u64::MAX));
    let mut state = env.grasp.clone();
    let mut obj = env.start_object();
    let mut transitions = Vec::with_capacity(schedule.episode_steps);
    let mut init = ActionDistribution::new(env.hold.clone(), vec![schedule.init_std; k], 1, k)?.tiled(budget.horizon);
    if schedule.init_std == 0.0 {
        init.stds.iter_mut().for_each(|s| *s = 0.0);
    }
    for t in 0..schedule.episode_steps {
        let mut z = state.tips.clone();
        z.extend_from_slice(&encode_object(&obj));
        let plan = cem_refine(learner, &init, &z, &cost, budget, rng::derive_seed(seed, t as u64))?;
        let mut a = plan.actions[..k].to_vec();
        if schedule.explore_std > 0.0 {
            for x in a.iter_mut() {
                *x = (*x + schedule.explore_std * rng::normal(&mut r)).clamp(-1.0, 1.0);
            }
        }
        let (ns, no) = env.step(&state, &obj, &a)?;
        let mut zn = ns.tips.clone();
        zn.extend_from_slice(&encode_object(&no));
        transitions.push(Transition {
            s: z,
            a,
            s_next: zn,
            episode,
            step: t as u32,
        });
        state = ns;
        obj = no;
    }
    Ok(InHandEpisode {
        transitions,
        success: task.success(&obj),
        final_reward: reorient_reward(&obj, task),
        final_object: obj,
    })
}

/// Online adaptive learning: every iteration runs `rollouts` MPC episodes
/// with the current model, appends them to the buffer (all data is kept) and
/// retrains for `train_steps`. Returns the learner and its learning curve.
pub fn online_adapt(env: &InHandEnv, task: &ReorientTask, mut learner: Learner, schedule: &AdaptSchedule, budget: &PlanBudget) -> Result<(Learner, Vec<CurvePoint>)> {
    schedule.validate()?;
    budget.validate()?;
    let h = env.hand.state_dim();
    if Learner::state_dim(&learner) != h {
        return Err(shape_err!("learner for H = {} on a hand with H = {h}", Learner::state_dim(&learner)));
    }
    let mut buffer = Dataset::new(h + OBJECT_DIM, env.hand.action_dim());
    let mut tr = learner.trainer(schedule.learning_rate);
    let mut curve = Vec::with_capacity(schedule.iterations);
    let mut episode = 0u32;
    for it in 0..schedule.iterations {
        let mut successes = 0;
        let mut reward = 0.0;
        for ro in 0..schedule.rollouts {
            let scale = schedule.object_scales[ro % schedule.object_scales.len()];
            let e = if scale == 1.0 { env.clone() } else { env.with_object_scale(scale) };
            let seed = rng::derive_seed(schedule.seed, (it * schedule.rollouts + ro) as u64);
            let ep = inhand_episode(&e, task, &learner, budget, schedule, episode, seed)?;
            episode += 1;
            successes += usize::from(ep.success);
            reward += ep.final_reward;
            for t in ep.transitions {
                buffer.push(t)?;
            }
        }
        curve.push(CurvePoint {
            iteration: it,
            env_steps: buffer.len(),
            success_rate: successes as f64 / schedule.rollouts as f64,
            mean_reward: reward / schedule.rollouts as f64,
        });
        learner.train(&mut tr, &buffer, schedule.train_steps, schedule.batch_size, rng::derive_seed(schedule.seed ^ 0x5eed, it as u64))?;
    }
    Ok((learner, curve))
}

/// Environment steps at which a curve first reaches `level` success.
pub fn steps_to_success(curve: &[CurvePoint], level: f64) -> Option<usize> {
    curve.iter().find(|p| p.success_rate >= level).map(|p| p.env_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::Preset;
    use crate::nn::Activation;

    fn small() -> Architecture {
        Architecture::new(vec![8], Activation::Tanh)
    }

    #[test]
    fn reward_cases() {
        let task = ReorientTask::new(0.3, [0.0, 0.0]);
        let mut at = ObjectState::new([0.0, 0.0]);
        at.z_rotation = 0.3;
        assert!((reorient_reward(&at, &task) - 1.0).abs() < 1e-12);
        at.dropped = true;
        assert!((reorient_reward(&at, &task) + 4.0).abs() < 1e-12);
        let mut off = ObjectState::new([0.1, 0.0]);
        off.z_rotation = 0.3 + core::f64::consts::FRAC_PI_2;
        assert!((reorient_reward(&off, &task) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn external_width_excludes_actions() {
        let mut counts = Vec::new();
        for p in Preset::ALL {
            let hand = p.config();
            let ext = ExternalModel::new(hand.state_dim(), &small(), 1, 1.0, 0).unwrap();
            assert_eq!(ext.input_width(), hand.state_dim() + OBJECT_DIM);
            let mono = monolithic_learner(&hand, &small(), 1, 1.0, 0).unwrap();
            if let Learner::Monolithic { model } = mono {
                assert_eq!(model.net.in_dim(), ext.input_width() + hand.action_dim());
            }
            counts.push((hand.state_dim(), ext.net.num_params()));
        }
        // same H gives the same parameter count whatever K is
        assert_eq!(counts[2], counts[3]);
    }

    #[test]
    fn untrained_external_model_passes_through() {
        let hand = Preset::Allegro.config();
        let internal = ForwardModel::new(12, 16, &small(), 1, 1.0, 1).unwrap();
        let ext = ExternalModel::new(12, &small(), 1, 1.0, 2).unwrap();
        let s = hand.rest_state().tips;
        let a = vec![0.1; 16];
        let x = [1.0, 0.0, 0.01, -0.02, 0.0];
        let (s2, x2) = factorized_predict(&internal, &ext, &s, &x, &a).unwrap();
        assert_eq!(s2, internal.predict(&s, &a).unwrap());
        assert_eq!(x2, x.to_vec());
    }

    #[test]
    fn grasp_holds_the_object() {
        for p in Preset::ALL {
            let env = InHandEnv::new(p.config(), 0.45, 0.8, 0.01).unwrap();
            let obj = env.start_object();
            let touching = env.object.contacts(&obj, &env.grasp.tips);
            assert!(touching.iter().all(|t| *t), "{}", p.name());
            let (s, o) = env.step(&env.grasp, &obj, &env.hold).unwrap();
            assert!(math::dist(&s.tips, &env.grasp.tips) < 1e-9);
            assert_eq!(o, obj);
        }
    }

    #[test]
    fn factorized_gradient_matches_finite_differences() {
        let hand = Preset::Robotiq.config();
        let env = InHandEnv::new(hand.clone(), 0.45, 0.8, 0.01).unwrap();
        let mut internal = ForwardModel::new(9, 11, &small(), 1, 1.0, 3).unwrap();
        let free = crate::internal::collect_random(&hand, Setting::Sequential, 4, 6, 2).unwrap();
        internal.fit_normalization(&free).unwrap();
        let mut ext = ExternalModel::new(9, &small(), 3, 0.9, 4).unwrap();
        // give the zeroed head some weights so every path carries gradient
        let n = ext.net.num_params();
        let mut r = rng::seeded(8);
        for p in ext.net.params_mut()[n - 200..].iter_mut() {
            *p = rng::uniform(&mut r, -0.3, 0.3);
        }
        let mut buffer = Dataset::new(14, 11);
        let sched = AdaptSchedule {
            episode_steps: 5,
            init_std: 0.5,
            ..AdaptSchedule::default()
        };
        let budget = PlanBudget {
            horizon: 1,
            cem_iterations: 1,
            samples: 20,
            elites: 5,
            beta: 0.2,
        };
        let task = ReorientTask::new(0.4, [0.0, 0.0]);
        let learner = Learner::Factorized {
            internal: internal.clone(),
            external: ext.clone(),
            end2end: false,
        };
        for e in 0..2 {
            for t in inhand_episode(&env, &task, &learner, &budget, &sched, e, e as u64).unwrap().transitions {
                buffer.push(t).unwrap();
            }
        }
        let starts = [0, 1, 6];
        let mut ge = vec![0.0; ext.net.num_params()];
        let mut gi = vec![0.0; internal.net.num_params()];
        factorized_loss(&internal, &ext, &buffer, &starts, Some(&mut ge), Some(&mut gi)).unwrap();
        let h = 1e-6;
        let check = |fd: f64, g: f64, what: &str| {
            assert!((fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()).max(1e-3), "{what}: fd {fd} analytic {g}");
        };
        for i in (0..ext.net.num_params()).step_by(11) {
            let mut e2 = ext.clone();
            e2.net.params_mut()[i] += h;
            let up = factorized_loss(&internal, &e2, &buffer, &starts, None, None).unwrap();
            e2.net.params_mut()[i] -= 2.0 * h;
            let down = factorized_loss(&internal, &e2, &buffer, &starts, None, None).unwrap();
            check((up - down) / (2.0 * h), ge[i], "external");
        }
        for i in (0..internal.net.num_params()).step_by(13) {
            let mut i2 = internal.clone();
            i2.net.params_mut()[i] += h;
            let up = factorized_loss(&i2, &ext, &buffer, &starts, None, None).unwrap();
            i2.net.params_mut()[i] -= 2.0 * h;
            let down = factorized_loss(&i2, &ext, &buffer, &starts, None, None).unwrap();
            check((up - down) / (2.0 * h), gi[i], "internal");
        }
    }

    #[test]
    fn zero_iterations_return_untrained_model() {
        let hand = Preset::Robotiq.config();
        let env = InHandEnv::new(hand, 0.45, 0.8, 0.01).unwrap();
        let internal = ForwardModel::new(9, 11, &small(), 1, 1.0, 3).unwrap();
        let external = ExternalModel::new(9, &small(), 2, 0.95, 4).unwrap();
        let learner = Learner::Factorized {
            internal,
            external,
            end2end: false,
        };
        let sched = AdaptSchedule {
            iterations: 0,
            ..AdaptSchedule::default()
        };
        let (out, curve) = online_adapt(&env, &ReorientTask::new(0.5, [0.0, 0.0]), learner.clone(), &sched, &PlanBudget::sequential()).unwrap();
        assert!(curve.is_empty());
        assert_eq!(out, learner);
    }
}
