//! Kinematic dexterous-hand simulator.
//!
//! Each finger is a planar serial chain attached to the palm by a rigid frame.
//! Actions are mapped to joint-space targets according to the hand's actuation
//! mode and joints follow a first-order response for a number of skipped
//! frames. The observable hand state is the stacked fingertip positions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::math;
use crate::rng;
use crate::{Error, Result};

/// Tolerance used when checking joint angles against their limits.
const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuationMode {
    /// One actuator per joint.
    Direct,
    /// Fewer actuators than joints; `coupling_matrix` routes actuators to joints.
    Coupled,
    /// More actuators than joints; `tendon_matrix` holds signed tendon gains.
    Tendon,
}

/// Control setting: one long settle per action or a short multi-step horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    QuasiStatic,
    Sequential,
}

/// Rigid frame placing a finger's planar chain in the palm frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerFrame {
    pub origin: [f64; 3],
    /// Direction of the straight finger (local x).
    pub rest_dir: [f64; 3],
    /// Direction positive joint angles curl towards (local y).
    pub flex_dir: [f64; 3],
}

impl FingerFrame {
    fn place(&self, local: [f64; 2]) -> [f64; 3] {
        let mut p = self.origin;
        for (k, v) in p.iter_mut().enumerate() {
            *v += local[0] * self.rest_dir[k] + local[1] * self.flex_dir[k];
        }
        p
    }
}

/// Parametric articulated hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandConfig {
    pub name: String,
    pub num_fingers: usize,
    pub joints_per_finger: Vec<usize>,
    /// One link per joint, finger-major order (metres).
    pub link_lengths: Vec<f64>,
    /// `[lo, hi]` per joint in radians.
    pub joint_limits: Vec<[f64; 2]>,
    pub finger_frames: Vec<FingerFrame>,
    pub actuation_mode: ActuationMode,
    /// `DoF x K`, rows are joints (coupled mode only).
    #[serde(default)]
    pub coupling_matrix: Vec<Vec<f64>>,
    /// `DoF x K`, signed tendon gains (tendon mode only).
    #[serde(default)]
    pub tendon_matrix: Vec<Vec<f64>>,
    /// Fraction of the remaining joint delta realised per frame, in (0, 1].
    pub response_gain: f64,
    pub skipped_frames_quasistatic: u32,
    pub skipped_frames_sequential: u32,
    /// Mean fingertip distance counted as a successful reach (metres).
    pub success_threshold: f64,
    /// Per-actuator command multiplier in [0, 1].
    pub actuator_scale: Vec<f64>,
    /// Finger names, used by the gesture prompt.
    #[serde(default)]
    pub finger_names: Vec<String>,
    /// Direction each finger points when extended (gesture constants).
    #[serde(default)]
    pub extension_dirs: Vec<[f64; 3]>,
}

/// Instantaneous hand state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub joint_angles: Vec<f64>,
    /// Stacked fingertip positions, `3 x num_fingers` values.
    pub tips: Vec<f64>,
    pub frame: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    ActuatorFailure(usize),
    Fatigue(f64),
}

/// The four built-in hands, ordered by action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Robotiq,
    Allegro,
    Shadowhand,
    Myohand,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Robotiq, Preset::Allegro, Preset::Shadowhand, Preset::Myohand];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Robotiq => "robotiq",
            Preset::Allegro => "allegro",
            Preset::Shadowhand => "shadowhand",
            Preset::Myohand => "myohand",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn config(self) -> HandConfig {
        match self {
            Preset::Robotiq => robotiq(),
            Preset::Allegro => allegro(),
            Preset::Shadowhand => shadowhand(),
            Preset::Myohand => myohand(),
        }
    }
}

const Z: [f64; 3] = [0.0, 0.0, 1.0];
const NEG_Y: [f64; 3] = [0.0, -1.0, 0.0];

fn finger_links(n: usize) -> Vec<f64> {
    const LINKS: [f64; 5] = [0.040, 0.030, 0.024, 0.020, 0.016];
    LINKS[..n].to_vec()
}

fn finger_limits(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|j| match j {
            0 => [-0.3, 1.4],
            _ => [0.0, 1.3],
        })
        .collect()
}

fn thumb_frame(x: f64) -> FingerFrame {
    FingerFrame {
        origin: [x + 0.035, -0.065, 0.03],
        rest_dir: [0.0, 1.0, 0.0],
        flex_dir: [-1.0, 0.0, 0.0],
    }
}

fn long_finger(x: f64) -> FingerFrame {
    FingerFrame {
        origin: [x, 0.0, 0.0],
        rest_dir: Z,
        flex_dir: NEG_Y,
    }
}

struct Layout {
    name: &'static str,
    joints: Vec<usize>,
    frames: Vec<FingerFrame>,
    names: Vec<&'static str>,
    ext: Vec<[f64; 3]>,
}

fn build(layout: Layout, mode: ActuationMode, gain: f64, frames: (u32, u32), threshold: f64) -> HandConfig {
    let mut link_lengths = Vec::new();
    let mut joint_limits = Vec::new();
    for &n in &layout.joints {
        link_lengths.extend(finger_links(n));
        joint_limits.extend(finger_limits(n));
    }
    let dof = link_lengths.len();
    HandConfig {
        name: layout.name.into(),
        num_fingers: layout.joints.len(),
        joints_per_finger: layout.joints,
        link_lengths,
        joint_limits,
        finger_frames: layout.frames,
        actuation_mode: mode,
        coupling_matrix: Vec::new(),
        tendon_matrix: Vec::new(),
        response_gain: gain,
        skipped_frames_quasistatic: frames.0,
        skipped_frames_sequential: frames.1,
        success_threshold: threshold,
        actuator_scale: vec![1.0; dof],
        finger_names: layout.names.into_iter().map(String::from).collect(),
        extension_dirs: layout.ext,
    }
}

/// Three-fingered gripper, 11 joints, one actuator per joint.
pub fn robotiq() -> HandConfig {
    let opposing = FingerFrame {
        origin: [0.0, -0.07, 0.0],
        rest_dir: Z,
        flex_dir: [0.0, 1.0, 0.0],
    };
    build(
        Layout {
            name: "robotiq",
            joints: vec![3, 4, 4],
            frames: vec![opposing, long_finger(0.018), long_finger(-0.018)],
            names: vec!["opposing", "finger_a", "finger_b"],
            ext: vec![Z, Z, Z],
        },
        ActuationMode::Direct,
        0.07,
        (150, 10),
        0.015,
    )
}

/// Four fingers (thumb, index, middle, ring), 16 joints, fully actuated.
pub fn allegro() -> HandConfig {
    build(
        Layout {
            name: "allegro",
            joints: vec![4, 4, 4, 4],
            frames: vec![thumb_frame(0.0), long_finger(0.0), long_finger(-0.025), long_finger(-0.05)],
            names: vec!["thumb", "index", "middle", "ring"],
            ext: vec![[0.0, 1.0, 0.0], Z, Z, Z],
        },
        ActuationMode::Direct,
        0.07,
        (50, 10),
        0.015,
    )
}

/// Five fingers, 24 joints, 20 actuators: the two distal joints of every
/// non-thumb finger share one actuator.
pub fn shadowhand() -> HandConfig {
    let joints = vec![5, 5, 5, 5, 4];
    let mut cfg = build(
        Layout {
            name: "shadowhand",
            joints: joints.clone(),
            frames: vec![
                thumb_frame(0.0),
                long_finger(0.0),
                long_finger(-0.022),
                long_finger(-0.044),
                long_finger(-0.066),
            ],
            names: vec!["thumb", "index", "middle", "ring", "little"],
            ext: vec![[0.0, 1.0, 0.0], Z, Z, Z, Z],
        },
        ActuationMode::Coupled,
        0.07,
        (200, 10),
        0.015,
    );
    let dof: usize = joints.iter().sum();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dof);
    let mut actuator = 0usize;
    for (f, &n) in joints.iter().enumerate() {
        for j in 0..n {
            let shared_with_previous = f > 0 && j == n - 1;
            if shared_with_previous {
                actuator -= 1;
            }
            rows.push(vec![actuator as f64]);
            actuator += 1;
        }
    }
    let k = actuator;
    cfg.coupling_matrix = rows
        .into_iter()
        .map(|r| {
            let mut row = vec![0.0; k];
            row[r[0] as usize] = 1.0;
            row
        })
        .collect();
    cfg.actuator_scale = vec![1.0; k];
    cfg
}

/// Five fingers, 23 joints driven by 39 tendons: one flexor per joint plus
/// extensors that each span a contiguous group of joints.
pub fn myohand() -> HandConfig {
    let joints = vec![5, 4, 5, 4, 5];
    let extensor_groups: [&[usize]; 5] = [&[2, 1, 1, 1], &[2, 1, 1], &[2, 2, 1], &[2, 1, 1], &[2, 2, 1]];
    let mut cfg = build(
        Layout {
            name: "myohand",
            joints: joints.clone(),
            frames: vec![
                thumb_frame(0.0),
                long_finger(0.0),
                long_finger(-0.022),
                long_finger(-0.044),
                long_finger(-0.066),
            ],
            names: vec!["thumb", "index", "middle", "ring", "little"],
            ext: vec![[0.0, 1.0, 0.0], Z, Z, Z, Z],
        },
        ActuationMode::Tendon,
        0.13,
        (100, 5),
        0.0125,
    );
    let dof: usize = joints.iter().sum();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut first = 0;
    for (f, &n) in joints.iter().enumerate() {
        for j in 0..n {
            let mut c = vec![0.0; dof];
            c[first + j] = 1.0;
            columns.push(c);
        }
        let mut j = first;
        for &span in extensor_groups[f] {
            let mut c = vec![0.0; dof];
            for v in &mut c[j..j + span] {
                *v = -1.0;
            }
            columns.push(c);
            j += span;
        }
        debug_assert_eq!(j, first + n);
        first += n;
    }
    let k = columns.len();
    cfg.tendon_matrix = (0..dof).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    cfg.actuator_scale = vec![1.0; k];
    cfg
}

impl HandConfig {
    pub fn dof(&self) -> usize {
        self.joints_per_finger.iter().sum()
    }

    /// Hand-state dimension `H`.
    pub fn state_dim(&self) -> usize {
        3 * self.num_fingers
    }

    /// Action dimension `K`.
    pub fn action_dim(&self) -> usize {
        match self.actuation_mode {
            ActuationMode::Direct => self.dof(),
            ActuationMode::Coupled => self.coupling_matrix.first().map_or(0, Vec::len),
            ActuationMode::Tendon => self.tendon_matrix.first().map_or(0, Vec::len),
        }
    }

    pub fn frames(&self, setting: Setting) -> u32 {
        match setting {
            Setting::QuasiStatic => self.skipped_frames_quasistatic,
            Setting::Sequential => self.skipped_frames_sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dof = self.dof();
        if self.num_fingers == 0 || self.joints_per_finger.len() != self.num_fingers {
            return Err(config_err!("{} fingers but {} joint counts", self.num_fingers, self.joints_per_finger.len()));
        }
        if self.joints_per_finger.contains(&0) {
            return Err(config_err!("every finger needs at least one joint"));
        }
        if self.finger_frames.len() != self.num_fingers {
            return Err(config_err!("{} finger frames for {} fingers", self.finger_frames.len(), self.num_fingers));
        }
        if self.link_lengths.len() != dof || self.joint_limits.len() != dof {
            return Err(config_err!(
                "{} link lengths and {} joint limits for {dof} joints",
                self.link_lengths.len(),
                self.joint_limits.len()
            ));
        }
        if self.link_lengths.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(config_err!("link lengths must be positive"));
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(config_err!("joint limits must satisfy lo <= hi"));
        }
        if !(self.success_threshold > 0.0) {
            return Err(config_err!("success threshold must be positive"));
        }
        if !(self.response_gain > 0.0 && self.response_gain <= 1.0) {
            return Err(config_err!("response gain {} outside (0, 1]", self.response_gain));
        }
        if self.skipped_frames_quasistatic == 0 || self.skipped_frames_sequential == 0 {
            return Err(config_err!("skipped frames must be positive"));
        }
        let k = self.action_dim();
        match self.actuation_mode {
            ActuationMode::Direct => {}
            ActuationMode::Coupled => {
                check_matrix(&self.coupling_matrix, dof, "coupling")?;
                if k >= dof {
                    return Err(config_err!("coupled hands need fewer actuators ({k}) than joints ({dof})"));
                }
            }
            ActuationMode::Tendon => {
                check_matrix(&self.tendon_matrix, dof, "tendon")?;
                if k <= dof {
                    return Err(config_err!("tendon hands need more actuators ({k}) than joints ({dof})"));
                }
            }
        }
        if k == 0 {
            return Err(config_err!("action dimension is zero"));
        }
        if self.actuator_scale.len() != k {
            return Err(config_err!("{} actuator scales for {k} actuators", self.actuator_scale.len()));
        }
        if self.actuator_scale.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(config_err!("actuator scales must lie in [0, 1]"));
        }
        if !self.extension_dirs.is_empty() && self.extension_dirs.len() != self.num_fingers {
            return Err(config_err!("extension directions must be given for every finger"));
        }
        Ok(())
    }

    fn check_limits(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(shape_err!("{} joint angles for {} joints", q.len(), self.dof()));
        }
        for (j, (a, [lo, hi])) in q.iter().zip(&self.joint_limits).enumerate() {
            if !a.is_finite() {
                return Err(Error::Numeric(alloc::format!("joint {j} angle is {a}")));
            }
            if *a < lo - LIMIT_TOL || *a > hi + LIMIT_TOL {
                return Err(Error::Domain(alloc::format!("joint {j} angle {a} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Fingertip positions for the given joint angles.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &[f64]) -> Vec<f64> {
        let mut tips = Vec::with_capacity(self.state_dim());
        let mut j = 0;
        for (frame, &n) in self.finger_frames.iter().zip(&self.joints_per_finger) {
            let mut angle = 0.0;
            let mut local = [0.0; 2];
            for (len, qi) in self.link_lengths[j..j + n].iter().zip(&q[j..j + n]) {
                angle += qi;
                local[0] += len * math::cos(angle);
                local[1] += len * math::sin(angle);
            }
            tips.extend_from_slice(&frame.place(local));
            j += n;
        }
        tips
    }

    pub fn rest_angles(&self) -> Vec<f64> {
        self.joint_limits.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
    }

    pub fn state_from_angles(&self, q: Vec<f64>) -> Result<SimState> {
        let tips = self.forward_kinematics(&q)?;
        Ok(SimState {
            joint_angles: q,
            tips,
            frame: 0,
        })
    }

    pub fn rest_state(&self) -> SimState {
        let q = self.rest_angles();
        SimState {
            tips: self.fk_unchecked(&q),
            joint_angles: q,
            frame: 0,
        }
    }

    /// Joint angles drawn uniformly within the limits.
    pub fn random_angles(&self, rng: &mut rng::Rng) -> Vec<f64> {
        self.joint_limits.iter().map(|[lo, hi]| rng::uniform(rng, *lo, *hi)).collect()
    }

    pub fn random_state(&self, seed: u64) -> SimState {
        let mut r = rng::seeded(seed);
        let q = self.random_angles(&mut r);
        SimState {
            tips: self.fk_unchecked(&q),
            joint_angles: q,
            frame: 0,
        }
    }

    /// A fingertip configuration that is reachable by construction: the FK
    /// image of uniformly drawn joint angles.
    pub fn sample_reachable_target(&self, seed: u64) -> Vec<f64> {
        self.random_state(seed).tips
    }

    /// Net joint drive produced by tendon activations `clamp(a, 0, 1)`.
    pub fn tendon_drive(&self, action: &[f64]) -> Vec<f64> {
        let act: Vec<f64> = action
            .iter()
            .zip(&self.actuator_scale)
            .map(|(a, s)| (a * s).clamp(0.0, 1.0))
            .collect();
        self.tendon_matrix.iter().map(|row| math::dot(row, &act)).collect()
    }

    /// Joint-space targets for an action given the current joint angles.
    ///
    /// Direct and coupled actions are affine maps onto the joint ranges. Tendon
    /// drives act as velocity commands against passive joint elasticity, whose
    /// equilibrium is `rest + drive * half_range`.
    pub fn joint_targets(&self, action: &[f64]) -> Result<Vec<f64>> {
        let k = self.action_dim();
        if action.len() != k {
            return Err(shape_err!("action has {} entries, hand {} expects {k}", action.len(), self.name));
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::Numeric("action contains NaN".into()));
        }
        let command: Vec<f64> = match self.actuation_mode {
            ActuationMode::Direct => action
                .iter()
                .zip(&self.actuator_scale)
                .map(|(a, s)| a.clamp(-1.0, 1.0) * s)
                .collect(),
            ActuationMode::Coupled => {
                let scaled: Vec<f64> = action
                    .iter()
                    .zip(&self.actuator_scale)
                    .map(|(a, s)| a.clamp(-1.0, 1.0) * s)
                    .collect();
                self.coupling_matrix.iter().map(|row| math::dot(row, &scaled)).collect()
            }
            ActuationMode::Tendon => self.tendon_drive(action),
        };
        Ok(command
            .iter()
            .zip(&self.joint_limits)
            .map(|(u, [lo, hi])| {
                let mid = 0.5 * (lo + hi);
                let half = 0.5 * (hi - lo);
                (mid + u.clamp(-1.0, 1.0) * half).clamp(*lo, *hi)
            })
            .collect())
    }

    /// Advances the hand by one action: `frames(setting)` frames of first-order
    /// joint response towards the action's joint targets.
    pub fn env_step(&self, state: &SimState, action: &[f64], setting: Setting) -> Result<SimState> {
        let targets = self.joint_targets(action)?;
        if state.joint_angles.len() != self.dof() {
            return Err(shape_err!("state has {} joints, hand has {}", state.joint_angles.len(), self.dof()));
        }
        let mut q = state.joint_angles.clone();
        let g = self.response_gain;
        let frames = self.frames(setting);
        for _ in 0..frames {
            for ((qi, t), [lo, hi]) in q.iter_mut().zip(&targets).zip(&self.joint_limits) {
                *qi = (*qi + g * (t - *qi)).clamp(*lo, *hi);
            }
        }
        Ok(SimState {
            tips: self.fk_unchecked(&q),
            joint_angles: q,
            frame: state.frame + u64::from(frames),
        })
    }

    /// An action whose joint targets are `q` (clamped to what the actuators
    /// can express). Exact for direct hands and for the coupled / tendon
    /// layouts of the presets when `q` is representable.
    pub fn hold_action(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dof() {
            return Err(shape_err!("{} joint angles for {} joints", q.len(), self.dof()));
        }
        let d: Vec<f64> = q
            .iter()
            .zip(&self.joint_limits)
            .map(|(x, [lo, hi])| if hi > lo { (2.0 * x - lo - hi) / (hi - lo) } else { 0.0 })
            .collect();
        let k = self.action_dim();
        let mut u = vec![0.0; k];
        match self.actuation_mode {
            ActuationMode::Direct => u.copy_from_slice(&d),
            ActuationMode::Coupled => {
                let mut n = vec![0.0f64; k];
                for (row, dj) in self.coupling_matrix.iter().zip(&d) {
                    for (c, w) in row.iter().enumerate() {
                        if *w != 0.0 {
                            u[c] += dj / w;
                            n[c] += 1.0;
                        }
                    }
                }
                u.iter_mut().zip(&n).for_each(|(x, c)| *x /= c.max(1.0));
            }
            ActuationMode::Tendon => {
                // extensors first: the largest extension needed in their group
                let mut ext_of_joint = vec![0.0; self.dof()];
                for c in 0..k {
                    let rows: Vec<usize> = (0..self.dof()).filter(|&r| self.tendon_matrix[r][c] < 0.0).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let need = rows.iter().map(|&r| -d[r]).fold(0.0, f64::max).clamp(0.0, 1.0);
                    u[c] = need;
                    for r in rows {
                        ext_of_joint[r] += need;
                    }
                }
                for c in 0..k {
                    let rows: Vec<usize> = (0..self.dof()).filter(|&r| self.tendon_matrix[r][c] > 0.0).collect();
                    if rows.len() == 1 {
                        let r = rows[0];
                        u[c] = ((d[r] + ext_of_joint[r]) / self.tendon_matrix[r][c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        for (x, s) in u.iter_mut().zip(&self.actuator_scale) {
            *x = if *s > 0.0 { (*x / s).clamp(-1.0, 1.0) } else { 0.0 };
        }
        Ok(u)
    }

    /// Returns a perturbed copy; `self` is left untouched.
    pub fn apply_perturbation(&self, p: Perturbation) -> Result<HandConfig> {
        let mut out = self.clone();
        match p {
            Perturbation::ActuatorFailure(i) => {
                let k = self.action_dim();
                if i >= k {
                    return Err(Error::Domain(alloc::format!("actuator {i} out of range for {k} actuators")));
                }
                out.actuator_scale[i] = 0.0;
            }
            Perturbation::Fatigue(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Domain(alloc::format!("fatigue factor {f} outside (0, 1]")));
                }
                out.actuator_scale.iter_mut().for_each(|s| *s *= f);
            }
        }
        Ok(out)
    }

    /// Mean per-finger distance between two hand states.
    pub fn reach_error(&self, tips: &[f64], target: &[f64]) -> f64 {
        math::mean(&self.per_finger_error(tips, target))
    }

    pub fn per_finger_error(&self, tips: &[f64], target: &[f64]) -> Vec<f64> {
        tips.chunks_exact(3)
            .zip(target.chunks_exact(3))
            .map(|(a, b)| math::dist(a, b))
            .collect()
    }
}

fn check_matrix(m: &[Vec<f64>], rows: usize, what: &str) -> Result<()> {
    if m.len() != rows {
        return Err(config_err!("{what} matrix has {} rows, expected {rows}", m.len()));
    }
    let cols = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != cols) {
        return Err(config_err!("{what} matrix rows differ in length"));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(config_err!("{what} matrix has non-finite entries"));
    }
    Ok(())
}

/// Planar in-hand object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub z_rotation: f64,
    pub xy_position: [f64; 2],
    pub dropped: bool,
    /// Consecutive steps with fewer than two fingertips in contact.
    pub loose_steps: u32,
}

impl ObjectState {
    pub fn new(xy_position: [f64; 2]) -> Self {
        Self {
            z_rotation: 0.0,
            xy_position,
            dropped: false,
            loose_steps: 0,
        }
    }
}

/// Geometry and contact parameters of the rotation-drag object model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectConfig {
    /// Object radius (the size parameter varied across objects).
    pub radius: f64,
    /// Height of the object's centre above the palm.
    pub height: f64,
    /// A tip is in contact while within `radius + grasp_margin` of the centre.
    pub grasp_margin: f64,
    pub rotation_gain: f64,
    pub drop_patience: u32,
}

impl ObjectConfig {
    fn center(&self, obj: &ObjectState) -> [f64; 3] {
        [obj.xy_position[0], obj.xy_position[1], self.height]
    }

    pub fn contacts(&self, obj: &ObjectState, tips: &[f64]) -> Vec<bool> {
        let c = self.center(obj);
        let reach = self.radius + self.grasp_margin;
        tips.chunks_exact(3).map(|t| math::dist(t, &c) <= reach).collect()
    }
}

/// Advances the object given the fingertip motion of one hand step.
///
/// Tips in contact at the start of the step drag the object. Each one moves
/// its contact point along the rim by `radius * dtheta`, where `dtheta` is
/// the tip's swept angle about the object axis; the rotation increment is
/// `gain * mean rim displacement / radius`. With fewer than two tips in
/// contact after the step for `drop_patience` consecutive steps the object is
/// dropped and frozen from then on.
pub fn object_step(obj: &ObjectState, prev_tips: &[f64], new_tips: &[f64], cfg: &ObjectConfig) -> ObjectState {
    debug_assert_eq!(prev_tips.len(), new_tips.len());
    if obj.dropped {
        return obj.clone();
    }
    let c = cfg.center(obj);
    let touching = cfg.contacts(obj, prev_tips);
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, q), &t) in prev_tips.chunks_exact(3).zip(new_tips.chunks_exact(3)).zip(&touching) {
        if !t {
            continue;
        }
        n += 1;
        let (px, py) = (p[0] - c[0], p[1] - c[1]);
        let (qx, qy) = (q[0] - c[0], q[1] - c[1]);
        if px * px + py * py < 1e-24 || qx * qx + qy * qy < 1e-24 {
            continue;
        }
        // signed angle from p to q about the vertical axis
        let dtheta = math::atan2(px * qy - py * qx, px * qx + py * qy);
        sum += cfg.radius * dtheta;
    }
    let mut next = obj.clone();
    if n > 0 {
        next.z_rotation += cfg.rotation_gain * (sum / n as f64) / cfg.radius;
    }
    let held = cfg.contacts(obj, new_tips).iter().filter(|t| **t).count();
    if held < 2 {
        next.loose_steps += 1;
        if next.loose_steps >= cfg.drop_patience {
            next.dropped = true;
        }
    } else {
        next.loose_steps = 0;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hold_action_reproduces_representable_poses() {
        for p in Preset::ALL {
            let hand = p.config();
            let mut q = hand.rest_angles();
            // nudge every joint, keeping coupled joints equal for shadowhand
            for (j, x) in q.iter_mut().enumerate() {
                *x += 0.1 + 0.02 * (j % 3) as f64;
            }
            if p == Preset::Shadowhand {
                let mut first = 0;
                for (f, &n) in hand.joints_per_finger.iter().enumerate() {
                    if f > 0 {
                        q[first + n - 1] = q[first + n - 2];
                    }
                    first += n;
                }
            }
            let u = hand.hold_action(&q).unwrap();
            let t = hand.joint_targets(&u).unwrap();
            for (a, b) in t.iter().zip(&q) {
                assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", p.name());
            }
        }
    }
    use core::f64::consts::FRAC_PI_2;

    fn two_link() -> HandConfig {
        HandConfig {
            name: "two-link".into(),
            num_fingers: 1,
            joints_per_finger: vec![2],
            link_lengths: vec![1.0, 1.0],
            joint_limits: vec![[-3.0, 3.0]; 2],
            finger_frames: vec![FingerFrame {
                origin: [0.5, 0.0, 0.0],
                rest_dir: [0.0, 0.0, 1.0],
                flex_dir: [0.0, -1.0, 0.0],
            }],
            actuation_mode: ActuationMode::Direct,
            coupling_matrix: vec![],
            tendon_matrix: vec![],
            response_gain: 1.0,
            skipped_frames_quasistatic: 3,
            skipped_frames_sequential: 1,
            success_threshold: 0.1,
            actuator_scale: vec![1.0; 2],
            finger_names: vec![],
            extension_dirs: vec![],
        }
    }

    #[test]
    fn presets_match_actuation_taxonomy() {
        let dims: Vec<(usize, usize, usize)> = Preset::ALL
            .iter()
            .map(|p| {
                let c = p.config();
                c.validate().unwrap();
                (c.num_fingers, c.dof(), c.action_dim())
            })
            .collect();
        assert_eq!(dims, vec![(3, 11, 11), (4, 16, 16), (5, 24, 20), (5, 23, 39)]);
        let frames: Vec<(u32, u32)> = Preset::ALL
            .iter()
            .map(|p| {
                let c = p.config();
                (c.skipped_frames_quasistatic, c.skipped_frames_sequential)
            })
            .collect();
        assert_eq!(frames, vec![(150, 10), (50, 10), (200, 10), (100, 5)]);
        assert_eq!(Preset::Myohand.config().success_threshold, 0.0125);
    }

    #[test]
    fn straight_chain_at_zero() {
        let cfg = allegro();
        let q = vec![0.0; cfg.dof()];
        let tips = cfg.forward_kinematics(&q).unwrap();
        for (f, frame) in cfg.finger_frames.iter().enumerate() {
            let len: f64 = cfg.link_lengths[f * 4..f * 4 + 4].iter().sum();
            for k in 0..3 {
                let expected = frame.origin[k] + len * frame.rest_dir[k];
                assert!((tips[3 * f + k] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_link_quarter_turn() {
        let cfg = two_link();
        let tips = cfg.forward_kinematics(&[FRAC_PI_2, 0.0]).unwrap();
        // local (0, 2) along flex_dir (0, -1, 0)
        assert!((tips[0] - 0.5).abs() < 1e-15);
        assert!((tips[1] + 2.0).abs() < 1e-15);
        assert!(tips[2].abs() < 1e-15);
    }

    #[test]
    fn out_of_limit_angles_are_domain_errors() {
        let cfg = allegro();
        let mut q = cfg.rest_angles();
        q[0] = 5.0;
        assert!(matches!(cfg.forward_kinematics(&q), Err(Error::Domain(_))));
    }

    #[test]
    fn direct_full_gain_lands_on_targets() {
        let cfg = two_link();
        let s = cfg.rest_state();
        let a = [0.5, -0.25];
        let next = cfg.env_step(&s, &a, Setting::Sequential).unwrap();
        assert_eq!(next.joint_angles, vec![1.5, -0.75]);
        assert_eq!(next.frame, 1);
    }

    #[test]
    fn fixed_point_action_leaves_state_unchanged() {
        let cfg = allegro();
        let a: Vec<f64> = (0..16).map(|i| (i as f64 / 8.0) - 1.0).collect();
        let q = cfg.joint_targets(&a).unwrap();
        let s = cfg.state_from_angles(q).unwrap();
        let next = cfg.env_step(&s, &a, Setting::Sequential).unwrap();
        assert_eq!(next.joint_angles, s.joint_angles);
        assert_eq!(next.tips, s.tips);
    }

    #[test]
    fn antagonist_tendons_cancel() {
        let cfg = myohand();
        // index finger (joints 5..9): flexors and extensors all at 0.6
        let mut a = vec![-1.0; cfg.action_dim()];
        let idx_first_col = 5 + 4; // thumb flexors + thumb extensors
        for c in idx_first_col..idx_first_col + 4 + 3 {
            a[c] = 0.6;
        }
        let drive = cfg.tendon_drive(&a);
        assert!(drive[5..9].iter().all(|d| d.abs() < 1e-15), "{drive:?}");
        let s = cfg.rest_state();
        let next = cfg.env_step(&s, &a, Setting::Sequential).unwrap();
        assert_eq!(&next.joint_angles[5..9], &s.joint_angles[5..9]);
    }

    #[test]
    fn nan_action_is_numeric_error() {
        let cfg = allegro();
        let mut a = vec![0.0; 16];
        a[3] = f64::NAN;
        assert!(matches!(cfg.env_step(&cfg.rest_state(), &a, Setting::Sequential), Err(Error::Numeric(_))));
    }

    #[test]
    fn quasi_static_settles() {
        let mut cfg = allegro();
        cfg.response_gain = 0.5;
        let a: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 / 5.0 - 0.4).collect();
        let s1 = cfg.env_step(&cfg.rest_state(), &a, Setting::QuasiStatic).unwrap();
        let s2 = cfg.env_step(&s1, &a, Setting::QuasiStatic).unwrap();
        for (x, y) in s1.joint_angles.iter().zip(&s2.joint_angles) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn failure_equals_zeroed_command() {
        let cfg = shadowhand();
        let broken = cfg.apply_perturbation(Perturbation::ActuatorFailure(0)).unwrap();
        let a: Vec<f64> = (0..20).map(|i| 0.9 - 0.09 * i as f64).collect();
        let mut zeroed = a.clone();
        zeroed[0] = 0.0;
        let s = cfg.random_state(3);
        let x = broken.env_step(&s, &a, Setting::Sequential).unwrap();
        let y = cfg.env_step(&s, &zeroed, Setting::Sequential).unwrap();
        assert_eq!(x, y);
        assert_eq!(cfg.actuator_scale[0], 1.0);
    }

    #[test]
    fn fatigue_composes() {
        let cfg = allegro();
        assert_eq!(cfg.apply_perturbation(Perturbation::Fatigue(1.0)).unwrap(), cfg);
        let twice = cfg
            .apply_perturbation(Perturbation::Fatigue(0.5))
            .unwrap()
            .apply_perturbation(Perturbation::Fatigue(0.5))
            .unwrap();
        assert!(twice.actuator_scale.iter().all(|s| *s == 0.25));
        assert!(cfg.apply_perturbation(Perturbation::ActuatorFailure(16)).is_err());
        assert!(cfg.apply_perturbation(Perturbation::Fatigue(0.0)).is_err());
    }

    #[test]
    fn degenerate_limits_give_single_target() {
        let mut cfg = two_link();
        cfg.joint_limits = vec![[0.3, 0.3], [-0.2, -0.2]];
        let a = cfg.sample_reachable_target(1);
        let b = cfg.sample_reachable_target(99);
        assert_eq!(a, b);
        assert_eq!(a, cfg.forward_kinematics(&[0.3, -0.2]).unwrap());
    }

    fn ring_object() -> (ObjectConfig, ObjectState) {
        (
            ObjectConfig {
                radius: 0.02,
                height: 0.0,
                grasp_margin: 0.005,
                rotation_gain: 0.5,
                drop_patience: 2,
            },
            ObjectState::new([0.0, 0.0]),
        )
    }

    #[test]
    fn tangential_drag_rotates_object() {
        let (cfg, obj) = ring_object();
        // three tips on the rim at angles 0, 90, 180 degrees
        let prev = [0.02, 0.0, 0.0, 0.0, 0.02, 0.0, -0.02, 0.0, 0.0];
        let d = 0.001;
        let new = [0.02, d, 0.0, -d, 0.02, 0.0, -0.02, -d, 0.0];
        let next = object_step(&obj, &prev, &new, &cfg);
        let rim = 0.02 * libm::atan(d / 0.02);
        assert!((next.z_rotation - 0.5 * rim / 0.02).abs() < 1e-15);
        // small displacements: gain * delta / r
        assert!((next.z_rotation - 0.5 * d / 0.02).abs() < 1e-3 * 0.5 * d / 0.02);
        assert!(!next.dropped);
    }

    #[test]
    fn static_tips_leave_object_unchanged() {
        let (cfg, obj) = ring_object();
        let tips = [0.02, 0.0, 0.0, -0.02, 0.0, 0.0];
        assert_eq!(object_step(&obj, &tips, &tips, &cfg), obj);
    }

    #[test]
    fn lost_grasp_drops_and_freezes() {
        let (cfg, obj) = ring_object();
        let far = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let s1 = object_step(&obj, &far, &far, &cfg);
        assert!(!s1.dropped);
        let s2 = object_step(&s1, &far, &far, &cfg);
        assert!(s2.dropped);
        let touching = [0.02, 0.0, 0.0, 0.0, 0.02, 0.0];
        let moved = [0.02, 0.01, 0.0, -0.01, 0.02, 0.0];
        let s3 = object_step(&s2, &touching, &moved, &cfg);
        assert_eq!(s3, s2);
    }
}
