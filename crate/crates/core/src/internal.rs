//! Internal models of the hand: data collection, the forward model trained
//! with a discounted multi-step loss, and the Gaussian inverse model.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::hand::{HandConfig, Setting};
use crate::math;
use crate::nn::{self, AdamState, Architecture, DenseNet, Loss, Normalizer, Tape};
use crate::plan::ActionDistribution;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub episode: u32,
    pub step: u32,
}

/// Transitions stored episode by episode, steps in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim || t.a.len() != self.action_dim {
            return Err(shape_err!(
                "transition ({}, {}, {}) does not fit dataset ({}, {})",
                t.s.len(),
                t.a.len(),
                t.s_next.len(),
                self.state_dim,
                self.action_dim
            ));
        }
        if !math::all_finite(&t.s) || !math::all_finite(&t.a) || !math::all_finite(&t.s_next) {
            return Err(Error::Numeric("transition contains non-finite entries".into()));
        }
        self.transitions.push(t);
        Ok(())
    }

    /// Index ranges of consecutive transitions sharing an episode id.
    pub fn episodes(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.transitions.len() {
            if i == self.transitions.len() || self.transitions[i].episode != self.transitions[start].episode {
                out.push(start..i);
                start = i;
            }
        }
        if self.transitions.is_empty() {
            out.clear();
        }
        out
    }

    /// Checks that `s_next` of every step equals `s` of the following step.
    pub fn check_chaining(&self) -> Result<()> {
        for ep in self.episodes() {
            for i in ep.start..ep.end.saturating_sub(1) {
                let (a, b) = (&self.transitions[i], &self.transitions[i + 1]);
                if a.s_next != b.s || b.step != a.step + 1 {
                    return Err(Error::State(alloc::format!(
                        "episode {} breaks at step {}",
                        a.episode,
                        a.step
                    )));
                }
            }
        }
        Ok(())
    }

    /// Splits by episode: every `every`-th episode goes to the held-out set
    /// (`every = 11` gives the 10:1 train/evaluation ratio).
    pub fn split_holdout(&self, every: usize) -> (Dataset, Dataset) {
        let mut train = Dataset::new(self.state_dim, self.action_dim);
        let mut eval = Dataset::new(self.state_dim, self.action_dim);
        let episodes = self.episodes();
        if episodes.len() < every {
            // too few episodes to split by episode; split transitions instead
            for (i, t) in self.transitions.iter().enumerate() {
                if i % every == every - 1 {
                    eval.transitions.push(t.clone());
                } else {
                    train.transitions.push(t.clone());
                }
            }
            return (train, eval);
        }
        for (k, ep) in episodes.into_iter().enumerate() {
            let dst = if k % every == every - 1 { &mut eval } else { &mut train };
            dst.transitions.extend_from_slice(&self.transitions[ep]);
        }
        (train, eval)
    }

    /// Start indices `t` such that transitions `t..t + horizon` lie in one episode.
    pub fn windows(&self, horizon: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if horizon == 0 {
            return out;
        }
        for ep in self.episodes() {
            if ep.len() >= horizon {
                out.extend(ep.start..=ep.end - horizon);
            }
        }
        out
    }

    /// `(t, last)` index pairs of inverse-model samples: the input is
    /// `(s_t, s_{t + shift})` where `s_{t + shift}` is `s_next` of `last`.
    pub fn inverse_pairs(&self, shift: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if shift == 0 {
            return out;
        }
        for ep in self.episodes() {
            for t in ep.clone() {
                let last = t + shift - 1;
                if last < ep.end {
                    out.push((t, last));
                }
            }
        }
        out
    }

    pub fn actions(&self) -> Vec<f64> {
        self.transitions.iter().flat_map(|t| t.a.iter().copied()).collect()
    }

    /// Concatenates `other` after `self`, renumbering its episodes.
    pub fn extend_from(&mut self, other: &Dataset) -> Result<()> {
        if other.state_dim != self.state_dim || other.action_dim != self.action_dim {
            return Err(shape_err!("cannot merge datasets of different dimensions"));
        }
        let offset = self.transitions.last().map_or(0, |t| t.episode + 1);
        self.transitions.extend(other.transitions.iter().map(|t| Transition {
            episode: t.episode + offset,
            ..t.clone()
        }));
        Ok(())
    }
}

/// Random exploration: every episode starts from uniformly drawn joint angles
/// and applies i.i.d. uniform actions over the action box.
pub fn collect_random(hand: &HandConfig, setting: Setting, episodes: usize, steps: usize, seed: u64) -> Result<Dataset> {
    hand.validate()?;
    if steps == 0 {
        return Err(config_err!("episodes need at least one step"));
    }
    let (h, k) = (hand.state_dim(), hand.action_dim());
    let mut data = Dataset::new(h, k);
    data.transitions.reserve(episodes * steps);
    let mut r = rng::seeded(seed);
    for e in 0..episodes {
        let q = hand.random_angles(&mut r);
        let mut state = hand.state_from_angles(q)?;
        for t in 0..steps {
            let a: Vec<f64> = (0..k).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            let next = hand.env_step(&state, &a, setting)?;
            data.push(Transition {
                s: state.tips.clone(),
                a,
                s_next: next.tips.clone(),
                episode: e as u32,
                step: t as u32,
            })?;
            state = next;
        }
    }
    Ok(data)
}

/// Learned hand dynamics `s' = s + net(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub net: DenseNet,
    /// Prediction horizon `S` of the training loss.
    pub horizon: usize,
    /// Discount `alpha` of the training loss.
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardHyper {
    pub horizon: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for ForwardHyper {
    fn default() -> Self {
        Self {
            horizon: 1,
            discount: 0.95,
            learning_rate: 1e-4,
            steps: 2000,
            batch_size: 256,
            architecture: Architecture::default(),
            seed: 0,
        }
    }
}

impl ForwardHyper {
    /// Horizon and discount for a control setting (1 step quasi-static, 10 sequential).
    pub fn for_setting(setting: Setting) -> Self {
        match setting {
            Setting::QuasiStatic => Self::default(),
            Setting::Sequential => Self {
                horizon: 10,
                ..Self::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(step, minibatch loss)` samples.
    pub loss_curve: Vec<(usize, f64)>,
    /// Held-out one-step mean squared error (raw units).
    pub eval_mse: Option<f64>,
}

impl ForwardModel {
    pub fn new(state_dim: usize, action_dim: usize, arch: &Architecture, horizon: usize, discount: f64, seed: u64) -> Result<Self> {
        if horizon == 0 || !(discount > 0.0 && discount <= 1.0) {
            return Err(config_err!("horizon must be >= 1 and discount in (0, 1]"));
        }
        let net = DenseNet::with_architecture(state_dim + action_dim, state_dim, arch, seed)?;
        Ok(Self { net, horizon, discount })
    }

    pub fn state_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.in_dim() - self.net.out_dim()
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.predict_batch(s, a, 1, &mut out)?;
        Ok(out)
    }

    /// Batched one-step prediction of `batch` rows of states and actions.
    pub fn predict_batch(&self, states: &[f64], actions: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()> {
        let input = self.stack_inputs(states, actions, batch)?;
        self.net.forward_batch(&input, batch, out)?;
        for (o, s) in out.iter_mut().zip(states) {
            *o += s;
        }
        if !math::all_finite(out) {
            return Err(Error::Numeric("forward model prediction".into()));
        }
        Ok(())
    }

    /// Open-loop rollout: returns `T + 1` stacked states starting with `s`.
    pub fn rollout(&self, s: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let (h, k) = (self.state_dim(), self.action_dim());
        if s.len() != h || actions.len() % k != 0 {
            return Err(shape_err!("rollout of state {} with {} action values (K = {k})", s.len(), actions.len()));
        }
        let mut traj = s.to_vec();
        let mut cur = s.to_vec();
        for a in actions.chunks_exact(k) {
            cur = self.predict(&cur, a)?;
            traj.extend_from_slice(&cur);
        }
        Ok(traj)
    }

    pub(crate) fn stack_inputs(&self, states: &[f64], actions: &[f64], batch: usize) -> Result<Vec<f64>> {
        let (h, k) = (self.state_dim(), self.action_dim());
        if states.len() != batch * h || actions.len() != batch * k {
            return Err(shape_err!(
                "batch of {batch}: {} state values and {} action values for H = {h}, K = {k}",
                states.len(),
                actions.len()
            ));
        }
        let mut input = Vec::with_capacity(batch * (h + k));
        for (s, a) in states.chunks_exact(h).zip(actions.chunks_exact(k)) {
            input.extend_from_slice(s);
            input.extend_from_slice(a);
        }
        Ok(input)
    }

    /// Fits input statistics on `(s, a)` and output statistics on `s' - s`.
    pub fn fit_normalization(&mut self, data: &Dataset) -> Result<()> {
        let mut inputs = Vec::with_capacity(data.len() * self.net.in_dim());
        let mut deltas = Vec::with_capacity(data.len() * self.state_dim());
        for t in &data.transitions {
            inputs.extend_from_slice(&t.s);
            inputs.extend_from_slice(&t.a);
            deltas.extend(t.s_next.iter().zip(&t.s).map(|(n, s)| n - s));
        }
        let i = Normalizer::fit_input(&inputs, self.net.in_dim())?;
        let o = Normalizer::fit(&deltas, self.state_dim())?;
        self.net.set_normalization(i, o)
    }

    /// One-step mean squared error over all transitions and state dimensions.
    pub fn one_step_mse(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::State("cannot evaluate on an empty dataset".into()));
        }
        let h = self.state_dim();
        let mut total = 0.0;
        for chunk in data.transitions.chunks(512) {
            let states: Vec<f64> = chunk.iter().flat_map(|t| t.s.iter().copied()).collect();
            let actions: Vec<f64> = chunk.iter().flat_map(|t| t.a.iter().copied()).collect();
            let mut pred = Vec::new();
            self.predict_batch(&states, &actions, chunk.len(), &mut pred)?;
            for (p, t) in pred.chunks_exact(h).zip(chunk) {
                for (x, y) in p.iter().zip(&t.s_next) {
                    total += (x - y) * (x - y);
                }
            }
        }
        Ok(total / (data.len() * h) as f64)
    }

    /// Discounted multi-step loss over the windows starting at `starts`,
    /// rolling predictions through the model itself. When `grads` is given the
    /// exact gradient w.r.t. the parameters is added to it.
    pub fn multi_step_loss(&self, data: &Dataset, starts: &[usize], grads: Option<&mut [f64]>) -> Result<f64> {
        multi_step(&self.net, self.horizon, self.discount, data, starts, grads, |t| (&t.s, &t.a, &t.s_next))
    }
}

/// Shared multi-step objective for residual models `x' = x + net(x, u)`.
///
/// `view` exposes, for a transition, the model state, the extra
/// (non-rolled) input and the next model state.
pub(crate) fn multi_step<F>(
    net: &DenseNet,
    horizon: usize,
    discount: f64,
    data: &Dataset,
    starts: &[usize],
    grads: Option<&mut [f64]>,
    view: F,
) -> Result<f64>
where
    F: for<'a> Fn(&'a Transition) -> (&'a [f64], &'a [f64], &'a [f64]),
{
    let b = starts.len();
    if b == 0 {
        return Err(shape_err!("empty batch of windows"));
    }
    let d = net.out_dim();
    let u = net.in_dim() - d;
    let sigma = &net.output_norm().std;
    // predictions are tracked as start state + accumulated delta so that
    // residuals never subtract two nearly equal absolute positions
    let mut start: Vec<f64> = Vec::with_capacity(b * d);
    for &t in starts {
        let (s, _, _) = view(&data.transitions[t]);
        start.extend_from_slice(s);
    }
    let mut acc = vec![0.0; b * d];
    let want_grad = grads.is_some();
    let mut tapes: Vec<Tape> = Vec::new();
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut input = vec![0.0; b * (d + u)];
    let mut out = Vec::new();
    let mut loss = 0.0;
    let mut weight = 1.0;
    let norm = 1.0 / (b * d) as f64;
    for i in 0..horizon {
        for (j, &t) in starts.iter().enumerate() {
            let (_, extra, _) = view(&data.transitions[t + i]);
            let row = &mut input[j * (d + u)..(j + 1) * (d + u)];
            for k in 0..d {
                row[k] = start[j * d + k] + acc[j * d + k];
            }
            row[d..].copy_from_slice(extra);
        }
        if want_grad {
            let mut tape = Tape::new();
            net.forward_taped(&input, b, &mut tape, &mut out)?;
            tapes.push(tape);
        } else {
            net.forward_batch(&input, b, &mut out)?;
        }
        let mut r = vec![0.0; b * d];
        let mut step_loss = 0.0;
        for (j, &t) in starts.iter().enumerate() {
            let (_, _, target) = view(&data.transitions[t + i]);
            for k in 0..d {
                let idx = j * d + k;
                acc[idx] += out[idx];
                let res = (acc[idx] - (target[k] - start[idx])) / sigma[k];
                r[idx] = res;
                step_loss += res * res;
            }
        }
        loss += weight * step_loss * norm;
        residuals.push(r);
        weight *= discount;
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("multi-step loss diverged".into()));
    }
    if let Some(g) = grads {
        let mut dstate = vec![0.0; b * d];
        let mut din = vec![0.0; b * (d + u)];
        let mut weight = libm::pow(discount, (horizon - 1) as f64);
        for i in (0..horizon).rev() {
            for (idx, (ds, r)) in dstate.iter_mut().zip(&residuals[i]).enumerate() {
                *ds += weight * 2.0 * r * norm / sigma[idx % d];
            }
            let need_input = i > 0;
            net.backward(&tapes[i], &dstate, g, if need_input { Some(&mut din) } else { None })?;
            if need_input {
                for j in 0..b {
                    for k in 0..d {
                        dstate[j * d + k] += din[j * (d + u) + k];
                    }
                }
            }
            weight /= discount;
        }
    }
    Ok(loss)
}

/// Runs Adam on the multi-step objective over `data` for `steps` minibatches.
fn fit_forward(model: &mut ForwardModel, data: &Dataset, windows: &[usize], steps: usize, batch: usize, lr: f64, seed: u64, report: &mut TrainReport) -> Result<()> {
    let mut adam = AdamState::new(model.net.num_params(), lr);
    let mut r = rng::seeded(seed);
    let batch = batch.max(1);
    let log_every = (steps / 50).max(1);
    let mut grads = vec![0.0; model.net.num_params()];
    let mut starts = vec![0usize; batch];
    for step in 0..steps {
        for s in starts.iter_mut() {
            *s = windows[rng::index(&mut r, windows.len())];
        }
        grads.iter_mut().for_each(|g| *g = 0.0);
        let loss = model.multi_step_loss(data, &starts, Some(&mut grads))?;
        adam.step(model.net.params_mut(), &grads)?;
        if step % log_every == 0 || step + 1 == steps {
            report.loss_curve.push((step, loss));
        }
    }
    Ok(())
}

/// Trains a forward model on `train` with the discounted multi-step loss.
///
/// Each window is re-grounded at its first state. Normalisation statistics are
/// computed from `train` once, before optimisation.
pub fn train_forward(train: &Dataset, eval: Option<&Dataset>, hyper: &ForwardHyper) -> Result<(ForwardModel, TrainReport)> {
    let windows = train.windows(hyper.horizon);
    if windows.is_empty() {
        return Err(config_err!("no episode window holds {} consecutive transitions", hyper.horizon));
    }
    let mut model = ForwardModel::new(
        train.state_dim,
        train.action_dim,
        &hyper.architecture,
        hyper.horizon,
        hyper.discount,
        hyper.seed,
    )?;
    model.fit_normalization(train)?;
    let mut report = TrainReport::default();
    fit_forward(
        &mut model,
        train,
        &windows,
        hyper.steps,
        hyper.batch_size,
        hyper.learning_rate,
        rng::derive_seed(hyper.seed, 1),
        &mut report,
    )?;
    if let Some(e) = eval {
        report.eval_mse = Some(model.one_step_mse(e)?);
    }
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHyper {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
}

/// Continues training on `new_data` only, keeping the normalisation of the
/// pretrained model. Returns the evaluation MSE trajectory `(step, mse)`,
/// starting with the unadapted model.
pub fn finetune(model: &ForwardModel, new_data: &Dataset, eval: Option<&Dataset>, hyper: &FinetuneHyper) -> Result<(ForwardModel, Vec<(usize, f64)>)> {
    let mut out = model.clone();
    let mut curve = Vec::new();
    if let Some(e) = eval {
        curve.push((0, out.one_step_mse(e)?));
    }
    if hyper.steps == 0 {
        return Ok((out, curve));
    }
    let windows = new_data.windows(out.horizon);
    if windows.is_empty() {
        return Err(config_err!("fine-tuning data has no window of {} transitions", out.horizon));
    }
    let every = hyper.eval_every.max(1);
    let mut done = 0;
    let mut round = 0u64;
    while done < hyper.steps {
        let n = every.min(hyper.steps - done);
        let mut report = TrainReport::default();
        fit_forward_continue(&mut out, new_data, &windows, n, hyper, round, &mut report)?;
        done += n;
        round += 1;
        if let Some(e) = eval {
            curve.push((done, out.one_step_mse(e)?));
        }
    }
    Ok((out, curve))
}

fn fit_forward_continue(model: &mut ForwardModel, data: &Dataset, windows: &[usize], steps: usize, hyper: &FinetuneHyper, round: u64, report: &mut TrainReport) -> Result<()> {
    // one Adam state per evaluation segment keeps segments independent of
    // `eval_every` only through the seed stream
    fit_forward(model, data, windows, steps, hyper.batch_size, hyper.learning_rate, rng::derive_seed(hyper.seed, round), report)
}

/// Inverse model producing a diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseModel {
    pub net: DenseNet,
    /// Per-dimension standard deviation; `None` until estimated.
    pub sigma: Option<Vec<f64>>,
    /// Target timestamp shift `t0`.
    pub target_shift: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseHyper {
    pub target_shift: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for InverseHyper {
    fn default() -> Self {
        Self {
            target_shift: 1,
            learning_rate: 1e-4,
            steps: 2000,
            batch_size: 256,
            architecture: Architecture::default(),
            seed: 0,
        }
    }
}

impl InverseModel {
    pub fn state_dim(&self) -> usize {
        self.net.in_dim() / 2
    }

    pub fn action_dim(&self) -> usize {
        self.net.out_dim()
    }

    /// Mean action `g(s, s_target)`.
    pub fn mean_action(&self, s: &[f64], s_target: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(s.len() + s_target.len());
        input.extend_from_slice(s);
        input.extend_from_slice(s_target);
        let out = self.net.forward(&input)?;
        if !math::all_finite(&out) {
            return Err(Error::Numeric("inverse model output".into()));
        }
        Ok(out)
    }

    /// `N(g(s, s_target), diag(sigma^2))` for a single step.
    pub fn distribution(&self, s: &[f64], s_target: &[f64]) -> Result<ActionDistribution> {
        let sigma = self
            .sigma
            .as_ref()
            .ok_or_else(|| Error::State("inverse model sigma has not been estimated".into()))?;
        let mean = self.mean_action(s, s_target)?;
        ActionDistribution::new(mean, sigma.clone(), 1, self.action_dim())
    }
}

fn inverse_io(data: &Dataset, pairs: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    let mut inputs = Vec::with_capacity(pairs.len() * 2 * data.state_dim);
    let mut targets = Vec::with_capacity(pairs.len() * data.action_dim);
    for &(t, last) in pairs {
        inputs.extend_from_slice(&data.transitions[t].s);
        inputs.extend_from_slice(&data.transitions[last].s_next);
        targets.extend_from_slice(&data.transitions[t].a);
    }
    (inputs, targets)
}

/// Trains the inverse model with an L1 loss on `(s_t, s_{t+t0}) -> a_t`.
pub fn train_inverse(data: &Dataset, hyper: &InverseHyper) -> Result<(InverseModel, TrainReport)> {
    if hyper.target_shift == 0 {
        return Err(config_err!("target shift must be >= 1"));
    }
    let pairs = data.inverse_pairs(hyper.target_shift);
    if pairs.is_empty() {
        return Err(config_err!("no episode is longer than the target shift {}", hyper.target_shift));
    }
    let (h, k) = (data.state_dim, data.action_dim);
    let mut net = DenseNet::with_architecture(2 * h, k, &hyper.architecture, hyper.seed)?;
    let (all_in, all_out) = inverse_io(data, &pairs);
    net.set_normalization(Normalizer::fit_input(&all_in, 2 * h)?, Normalizer::fit(&all_out, k)?)?;
    let mut adam = AdamState::new(net.num_params(), hyper.learning_rate);
    let mut r = rng::seeded(rng::derive_seed(hyper.seed, 2));
    let batch = hyper.batch_size.max(1);
    let mut report = TrainReport::default();
    let log_every = (hyper.steps / 50).max(1);
    let mut chosen = Vec::with_capacity(batch);
    for step in 0..hyper.steps {
        chosen.clear();
        chosen.extend((0..batch).map(|_| pairs[rng::index(&mut r, pairs.len())]));
        let (x, y) = inverse_io(data, &chosen);
        let (loss, grads) = nn::net_gradients(&net, &x, &y, batch, Loss::Absolute)?;
        adam.step(net.params_mut(), &grads)?;
        if step % log_every == 0 || step + 1 == hyper.steps {
            report.loss_curve.push((step, loss));
        }
    }
    Ok((
        InverseModel {
            net,
            sigma: None,
            target_shift: hyper.target_shift,
        },
        report,
    ))
}

/// `sigma = E |a_t - g(s_t, s_{t+t0})|` over `data`; stored in the model.
pub fn estimate_sigma(model: &mut InverseModel, data: &Dataset) -> Result<Vec<f64>> {
    let pairs = data.inverse_pairs(model.target_shift);
    if pairs.is_empty() {
        return Err(Error::State("cannot estimate sigma from an empty dataset".into()));
    }
    let k = model.action_dim();
    let mut sum = vec![0.0; k];
    let mut pred = Vec::new();
    for chunk in pairs.chunks(512) {
        let (x, y) = inverse_io(data, chunk);
        model.net.forward_batch(&x, chunk.len(), &mut pred)?;
        for (p, a) in pred.chunks_exact(k).zip(y.chunks_exact(k)) {
            for ((s, pv), av) in sum.iter_mut().zip(p).zip(a) {
                *s += (av - pv).abs();
            }
        }
    }
    let n = pairs.len() as f64;
    let sigma: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    model.sigma = Some(sigma.clone());
    Ok(sigma)
}
