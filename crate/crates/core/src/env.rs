//! Episodic docking task: reset distribution, stacked marker observations,
//! discrete actions and the four-phase curriculum reward.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DockError, Result};
use crate::sim::{self, ControlAction, Pose, SimConfig};
use crate::vision::{self, Camera, CameraModel, DetectorNoise, MarkerLayout, MarkerObservation};

pub const STACK_FRAMES: usize = 3;
pub const OBS_DIM: usize = 4 * STACK_FRAMES;

/// The last three marker observations, oldest first, flattened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationStack(pub [f64; OBS_DIM]);

impl ObservationStack {
    pub fn filled(obs: &MarkerObservation) -> Self {
        let frame = obs.as_array();
        let mut s = [0.0; OBS_DIM];
        for chunk in s.chunks_exact_mut(4) {
            chunk.copy_from_slice(&frame);
        }
        ObservationStack(s)
    }

    /// Drops the oldest frame and appends `obs`.
    pub fn pushed(&self, obs: &MarkerObservation) -> Self {
        let mut s = [0.0; OBS_DIM];
        s[..OBS_DIM - 4].copy_from_slice(&self.0[4..]);
        s[OBS_DIM - 4..].copy_from_slice(&obs.as_array());
        ObservationStack(s)
    }

    pub fn frame(&self, i: usize) -> [f64; 4] {
        let mut f = [0.0; 4];
        f.copy_from_slice(&self.0[4 * i..4 * i + 4]);
        f
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Reward constants of one curriculum phase and the trailing-return
/// threshold that ends it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub index: usize,
    /// Half-width of the success band on `|u|`.
    pub c1: f64,
    /// Weight of the lateral `|u|` penalty.
    pub c2: f64,
    /// Reward for stopping inside the success band.
    pub success_reward: f64,
    pub advance_threshold: f64,
}

impl PhaseConfig {
    pub const REWARD_CONSTANTS: [(f64, f64, f64); 4] = [
        (0.05, 2.0, 0.0),
        (0.05, 5.0, 150.0),
        (0.02, 5.0, 150.0),
        (0.02, 10.0, 150.0),
    ];

    /// Trailing-return thresholds calibrated against the default action
    /// table and camera; phase 1 has no success reward, so its return
    /// stays negative.
    pub const DEFAULT_THRESHOLDS: [f64; 4] = [-85.0, 0.0, 0.0, 30.0];

    /// Phase `index` (1-based) with the curriculum's reward constants.
    pub fn curriculum(index: usize) -> Self {
        assert!((1..=4).contains(&index), "phase index {index} outside 1..=4");
        let (c1, c2, success_reward) = Self::REWARD_CONSTANTS[index - 1];
        PhaseConfig {
            index,
            c1,
            c2,
            success_reward,
            advance_threshold: Self::DEFAULT_THRESHOLDS[index - 1],
        }
    }

    pub fn all() -> Vec<PhaseConfig> {
        (1..=4).map(Self::curriculum).collect()
    }

    pub fn should_advance(&self, trailing_mean: f64) -> bool {
        phase_advance(trailing_mean, self.advance_threshold)
    }
}

/// Whether a trailing-window mean return clears a phase threshold.
pub fn phase_advance(trailing_mean: f64, threshold: f64) -> bool {
    trailing_mean > threshold
}

/// Mean of the last `window` returns, if that many exist.
pub fn trailing_mean(returns: &[f64], window: usize) -> Option<f64> {
    if window == 0 || returns.len() < window {
        return None;
    }
    let tail = &returns[returns.len() - window..];
    Some(tail.iter().sum::<f64>() / window as f64)
}

/// Marker `v` coordinates at the goal pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardAnchors {
    pub v1: f64,
    pub v2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardBranch {
    Success,
    Band,
    Penalty,
}

pub fn reward_branch(obs: &MarkerObservation, pose: &Pose, phase: &PhaseConfig, y_goal: f64) -> RewardBranch {
    let u = obs.u1.abs().max(obs.u2.abs());
    if pose.y >= y_goal && u < phase.c1 {
        RewardBranch::Success
    } else if pose.y >= y_goal && u < 2.0 * phase.c1 {
        RewardBranch::Band
    } else {
        RewardBranch::Penalty
    }
}

pub fn compute_reward(
    obs: &MarkerObservation,
    pose: &Pose,
    phase: &PhaseConfig,
    anchors: &RewardAnchors,
    y_goal: f64,
) -> f64 {
    match reward_branch(obs, pose, phase, y_goal) {
        RewardBranch::Success => phase.success_reward,
        RewardBranch::Band => 0.0,
        RewardBranch::Penalty => {
            -(10.0 * (obs.v1 - anchors.v1).abs()
                + 10.0 * (obs.v2 - anchors.v2).abs()
                + phase.c2 * obs.u1.abs()
                + phase.c2 * obs.u2.abs())
        }
    }
}

/// Discrete action set; the index is the action id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionTable(pub Vec<ControlAction>);

impl Default for ActionTable {
    fn default() -> Self {
        let mut actions = Vec::with_capacity(15);
        for v in [0.1, 0.25, 0.4] {
            for w_deg in [-30.0f64, -15.0, 0.0, 15.0, 30.0] {
                actions.push(ControlAction::new(v, w_deg.to_radians()));
            }
        }
        ActionTable(actions)
    }
}

impl ActionTable {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<ControlAction> {
        self.0.get(id).copied()
    }

    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        if self.0.is_empty() {
            return Err(DockError::Config("action table is empty".into()));
        }
        for a in &self.0 {
            a.check(cfg).map_err(|e| DockError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Actions scaled to the network's input range, `(v / v_max, omega / omega_max)`.
    pub fn encoded(&self, cfg: &SimConfig) -> Vec<[f64; 2]> {
        self.0
            .iter()
            .map(|a| [a.v / cfg.v_max, a.omega / cfg.omega_max])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub theta_range_deg: [f64; 2],
    pub max_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            x_range: [-0.2, 0.2],
            y_range: [-0.2, 0.2],
            theta_range_deg: [-30.0, 30.0],
            max_steps: 200,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if ordered(self.x_range) && ordered(self.y_range) && ordered(self.theta_range_deg) && self.max_steps > 0 {
            Ok(())
        } else {
            Err(DockError::Config(format!("invalid episode config {self:?}")))
        }
    }

    pub fn sample_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose {
        let mut draw = |r: [f64; 2]| r[0] + (r[1] - r[0]) * rng.random::<f64>();
        let x = draw(self.x_range);
        let y = draw(self.y_range);
        let theta = draw(self.theta_range_deg) * PI / 180.0;
        Pose::new(x, y, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Reached the stop line.
    Docked,
    Timeout,
    MarkersLost,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Docked => "docked",
            Termination::Timeout => "timeout",
            Termination::MarkersLost => "markers_lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub stack: ObservationStack,
    pub reward: f64,
    pub done: bool,
    pub termination: Option<Termination>,
}

/// Affine map from detector output to network input. The reward always
/// uses the detector output itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationEncoding {
    pub u_scale: f64,
    pub v_scale: f64,
    /// Subtract each marker's goal `v` before scaling.
    pub center_v: bool,
}

impl Default for ObservationEncoding {
    fn default() -> Self {
        ObservationEncoding {
            u_scale: 5.0,
            v_scale: 5.0,
            center_v: true,
        }
    }
}

impl ObservationEncoding {
    pub fn validate(&self) -> Result<()> {
        if self.u_scale.is_finite() && self.v_scale.is_finite() && self.u_scale > 0.0 && self.v_scale > 0.0 {
            Ok(())
        } else {
            Err(DockError::Config(format!(
                "observation scales must be positive, got {self:?}"
            )))
        }
    }

    pub fn encode(&self, obs: &MarkerObservation, anchors: &RewardAnchors) -> MarkerObservation {
        let (o1, o2) = if self.center_v {
            (anchors.v1, anchors.v2)
        } else {
            (0.0, 0.0)
        };
        MarkerObservation {
            u1: obs.u1 * self.u_scale,
            v1: (obs.v1 - o1) * self.v_scale,
            u2: obs.u2 * self.u_scale,
            v2: (obs.v2 - o2) * self.v_scale,
            in_view: obs.in_view,
        }
    }
}

/// Everything needed to build a [`DockingEnv`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub sim: SimConfig,
    pub camera: CameraModel,
    pub markers: MarkerLayout,
    pub noise: DetectorNoise,
    pub episode: EpisodeConfig,
    pub actions: ActionTable,
    pub encoding: ObservationEncoding,
}

const RESET_RETRIES: usize = 100;

/// One docking episode at a time. Not shared between threads; each
/// worker owns its own instance and rng.
#[derive(Debug, Clone)]
pub struct DockingEnv {
    settings: EnvSettings,
    camera: Camera,
    anchors: RewardAnchors,
    encoded_actions: Vec<[f64; 2]>,
    phase: PhaseConfig,
    pose: Pose,
    last_obs: MarkerObservation,
    stack: ObservationStack,
    steps: usize,
    done: bool,
}

impl DockingEnv {
    pub fn new(settings: EnvSettings, phase: PhaseConfig) -> Result<Self> {
        settings.sim.validate()?;
        settings.markers.validate()?;
        settings.noise.validate()?;
        settings.episode.validate()?;
        settings.actions.validate(&settings.sim)?;
        settings.encoding.validate()?;
        let camera = Camera::new(settings.camera, &settings.markers, &settings.sim)?;
        let (v1, v2) = vision::goal_anchor_values(&settings.markers, &camera, &settings.sim)?;
        let encoded_actions = settings.actions.encoded(&settings.sim);
        let pose = Pose::new(0.0, 0.0, 0.0);
        let last_obs = vision::project_markers(&pose, &settings.markers, &camera);
        let anchors = RewardAnchors { v1, v2 };
        Ok(DockingEnv {
            stack: ObservationStack::filled(&settings.encoding.encode(&last_obs, &anchors)),
            anchors,
            camera,
            encoded_actions,
            phase,
            pose,
            last_obs,
            steps: 0,
            done: true,
            settings,
        })
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn anchors(&self) -> RewardAnchors {
        self.anchors
    }

    pub fn phase(&self) -> &PhaseConfig {
        &self.phase
    }

    pub fn set_phase(&mut self, phase: PhaseConfig) {
        self.phase = phase;
    }

    pub fn set_noise(&mut self, noise: DetectorNoise) -> Result<()> {
        noise.validate()?;
        self.settings.noise = noise;
        Ok(())
    }

    pub fn actions(&self) -> &ActionTable {
        &self.settings.actions
    }

    pub fn encoded_actions(&self) -> &[[f64; 2]] {
        &self.encoded_actions
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn observation(&self) -> MarkerObservation {
        self.last_obs
    }

    /// Network input: the last three encoded observations.
    pub fn stack(&self) -> ObservationStack {
        self.stack
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts an episode from a pose drawn from the reset distribution,
    /// redrawing poses whose markers are not both visible.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<ObservationStack> {
        for _ in 0..RESET_RETRIES {
            let pose = self.settings.episode.sample_pose(rng);
            if vision::project_markers(&pose, &self.settings.markers, &self.camera).all_in_view() {
                return self.reset_to(pose, rng);
            }
        }
        Err(DockError::Config(format!(
            "no in-view initial pose after {RESET_RETRIES} draws from {:?}",
            self.settings.episode
        )))
    }

    /// Starts an episode from a given pose.
    pub fn reset_to<R: Rng + ?Sized>(&mut self, pose: Pose, rng: &mut R) -> Result<ObservationStack> {
        if !pose.is_finite() {
            return Err(DockError::InvalidInput(format!("non-finite pose {pose:?}")));
        }
        let raw = vision::project_markers(&pose, &self.settings.markers, &self.camera);
        if !raw.all_in_view() {
            return Err(DockError::Config(format!("initial pose {pose:?} is out of view")));
        }
        let mut obs = vision::apply_noise(&raw, &self.settings.noise, &self.camera, rng);
        // No history yet: a dropped marker falls back to its true center.
        for i in 0..2 {
            if !obs.in_view[i] {
                obs.set_marker(i, raw.marker(i));
            }
        }
        self.pose = pose;
        self.last_obs = obs;
        self.stack = ObservationStack::filled(&self.settings.encoding.encode(&obs, &self.anchors));
        self.steps = 0;
        self.done = false;
        Ok(self.stack)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action_id: usize, rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(DockError::Usage(
                "step called on a finished episode; call reset first".into(),
            ));
        }
        let action = self.settings.actions.get(action_id).ok_or_else(|| {
            DockError::InvalidInput(format!(
                "action id {action_id} outside table of {}",
                self.settings.actions.len()
            ))
        })?;
        self.pose = sim::step(self.pose, action, self.settings.sim.dt)?;
        self.steps += 1;

        let raw = vision::project_markers(&self.pose, &self.settings.markers, &self.camera);
        let mut obs = vision::apply_noise(&raw, &self.settings.noise, &self.camera, rng);
        for i in 0..2 {
            if !obs.in_view[i] {
                obs.set_marker(i, self.last_obs.marker(i));
            }
        }
        self.last_obs = obs;
        self.stack = self.stack.pushed(&self.settings.encoding.encode(&obs, &self.anchors));

        let termination = if sim::is_done(&self.pose, &self.settings.sim) {
            Some(Termination::Docked)
        } else if !raw.any_in_view() {
            Some(Termination::MarkersLost)
        } else if self.steps >= self.settings.episode.max_steps {
            Some(Termination::Timeout)
        } else {
            None
        };
        self.done = termination.is_some();
        let reward = compute_reward(&obs, &self.pose, &self.phase, &self.anchors, self.settings.sim.y_goal);
        Ok(StepOutcome {
            stack: self.stack,
            reward,
            done: self.done,
            termination,
        })
    }
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub pose: Pose,
    pub action_id: usize,
    pub reward: f64,
    pub obs: MarkerObservation,
}

pub const TRACE_HEADER: &str = "t,x,y,theta,action_id,reward,u1,v1,u2,v2";

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{TRACE_HEADER}")?;
        for r in rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t, r.pose.x, r.pose.y, r.pose.theta, r.action_id, r.reward, r.obs.u1, r.obs.v1, r.obs.u2, r.obs.v2
            )?;
        }
        f.flush()
    };
    write().map_err(|e| DockError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn anchors() -> RewardAnchors {
        RewardAnchors { v1: 0.3, v2: 0.1 }
    }

    fn at(y: f64) -> Pose {
        Pose::new(0.0, y, 0.0)
    }

    #[test]
    fn phase_constants() {
        let p: Vec<_> = PhaseConfig::all()
            .iter()
            .map(|p| (p.c1, p.c2, p.success_reward))
            .collect();
        assert_eq!(
            p,
            vec![
                (0.05, 2.0, 0.0),
                (0.05, 5.0, 150.0),
                (0.02, 5.0, 150.0),
                (0.02, 10.0, 150.0)
            ]
        );
    }

    #[test]
    fn success_reward_per_phase() {
        let obs = MarkerObservation::new(0.04, 0.0, -0.01, 0.0);
        assert_eq!(
            compute_reward(&obs, &at(1.0), &PhaseConfig::curriculum(1), &anchors(), 1.0),
            0.0
        );
        let obs = MarkerObservation::new(0.015, 0.0, -0.019, 0.0);
        assert_eq!(
            compute_reward(&obs, &at(1.0), &PhaseConfig::curriculum(4), &anchors(), 1.0),
            150.0
        );
    }

    #[test]
    fn middle_band_and_exclusion() {
        let phase = PhaseConfig::curriculum(3);
        let band = MarkerObservation::new(0.03, 0.3, 0.0, 0.1);
        assert_eq!(reward_branch(&band, &at(1.02), &phase, 1.0), RewardBranch::Band);
        assert_eq!(compute_reward(&band, &at(1.02), &phase, &anchors(), 1.0), 0.0);
        let out = MarkerObservation::new(0.05, 0.3, 0.0, 0.1);
        assert_eq!(reward_branch(&out, &at(1.02), &phase, 1.0), RewardBranch::Penalty);
        assert!((compute_reward(&out, &at(1.02), &phase, &anchors(), 1.0) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn mid_approach_penalty() {
        let phase = PhaseConfig::curriculum(2);
        let obs = MarkerObservation::new(0.1, 0.33, -0.05, 0.12);
        let r = compute_reward(&obs, &at(0.5), &phase, &anchors(), 1.0);
        assert!((r + 1.25).abs() < 1e-12, "{r}");
    }

    #[test]
    fn perfect_alignment_costs_nothing() {
        let obs = MarkerObservation::new(0.0, 0.3, 0.0, 0.1);
        for phase in PhaseConfig::all() {
            assert_eq!(compute_reward(&obs, &at(0.4), &phase, &anchors(), 1.0), 0.0);
        }
    }

    #[test]
    fn phase_advance_is_strict() {
        assert!(phase_advance(120.0, 100.0));
        assert!(!phase_advance(99.9, 100.0));
        assert!(!phase_advance(100.0, 100.0));
        assert_eq!(trailing_mean(&[1.0, 2.0, 3.0, 5.0], 2), Some(4.0));
        assert_eq!(trailing_mean(&[1.0], 2), None);
    }

    fn env() -> DockingEnv {
        DockingEnv::new(EnvSettings::default(), PhaseConfig::curriculum(1)).unwrap()
    }

    fn action_id(e: &DockingEnv, v: f64, w_deg: f64) -> usize {
        e.actions()
            .0
            .iter()
            .position(|a| (a.v - v).abs() < 1e-12 && (a.omega - w_deg.to_radians()).abs() < 1e-12)
            .unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_fills_stack() {
        let mut a = env();
        let mut b = env();
        let sa = a.reset(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let sb = b.reset(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.pose(), b.pose());
        assert_eq!(sa.frame(0), sa.frame(1));
        assert_eq!(sa.frame(1), sa.frame(2));
    }

    #[test]
    fn reset_x_is_centered() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| {
                e.reset(&mut rng).unwrap();
                e.pose().x
            })
            .sum::<f64>()
            / n as f64;
        // std of U(-0.2, 0.2) is 0.4 / sqrt(12).
        let sigma = 0.4 / 12f64.sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn step_after_done_is_usage_error() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(e.step(0, &mut rng), Err(DockError::Usage(_))));
        e.reset(&mut rng).unwrap();
        let fast = action_id(&e, 0.4, 15.0);
        while !e.step(fast, &mut rng).unwrap().done {}
        assert!(matches!(e.step(0, &mut rng), Err(DockError::Usage(_))));
    }

    #[test]
    fn invalid_action_id() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        e.reset(&mut rng).unwrap();
        let n = e.actions().len();
        assert!(matches!(e.step(n, &mut rng), Err(DockError::InvalidInput(_))));
    }

    #[test]
    fn straight_run_docks_with_success_reward() {
        let mut e = env();
        e.set_phase(PhaseConfig::curriculum(4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        e.reset_to(Pose::new(0.0, 0.0, 0.0), &mut rng).unwrap();
        let straight = action_id(&e, 0.25, 0.0);
        let mut last = None;
        for _ in 0..100 {
            let out = e.step(straight, &mut rng).unwrap();
            if out.done {
                last = Some(out);
                break;
            }
            assert!(out.reward <= 0.0);
        }
        let out = last.unwrap();
        assert_eq!(out.termination, Some(Termination::Docked));
        assert_eq!(out.reward, 150.0);
    }

    #[test]
    fn episode_length_is_bounded() {
        let settings = EnvSettings {
            episode: EpisodeConfig {
                max_steps: 5,
                ..EpisodeConfig::default()
            },
            ..EnvSettings::default()
        };
        let mut e = DockingEnv::new(settings, PhaseConfig::curriculum(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        e.reset_to(Pose::new(0.0, -0.2, 0.0), &mut rng).unwrap();
        let mut n = 0;
        loop {
            n += 1;
            let out = e.step(0, &mut rng).unwrap();
            if out.done {
                assert_eq!(out.termination, Some(Termination::Timeout));
                break;
            }
        }
        assert_eq!(n, 5);
    }

    #[test]
    fn turning_away_loses_markers() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        e.reset_to(Pose::new(0.2, 0.0, 0.5), &mut rng).unwrap();
        let turn = action_id(&e, 0.4, 15.0);
        let mut term = None;
        for _ in 0..200 {
            let out = e.step(turn, &mut rng).unwrap();
            if out.done {
                term = out.termination;
                assert!(out.reward <= 0.0);
                break;
            }
        }
        assert_eq!(term, Some(Termination::MarkersLost));
    }

    #[test]
    fn identity_encoding_passes_detector_output_through() {
        let enc = ObservationEncoding {
            u_scale: 1.0,
            v_scale: 1.0,
            center_v: false,
        };
        let obs = MarkerObservation::new(0.1, -0.2, 0.3, 0.4);
        assert_eq!(enc.encode(&obs, &anchors()), obs);
        let centered = ObservationEncoding::default().encode(&obs, &anchors());
        let a = anchors();
        assert!((centered.v1 - 5.0 * (-0.2 - a.v1)).abs() < 1e-12);
        assert!((centered.u2 - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn exactly_one_branch_and_signs(
            u1 in -0.2f64..0.2, u2 in -0.2f64..0.2, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0,
            y in 0.5f64..1.5, phase in 1usize..=4,
        ) {
            let phase = PhaseConfig::curriculum(phase);
            let obs = MarkerObservation::new(u1, v1, u2, v2);
            let pose = at(y);
            let r = compute_reward(&obs, &pose, &phase, &anchors(), 1.0);
            let u = u1.abs().max(u2.abs());
            let fired = [
                y >= 1.0 && u < phase.c1,
                y >= 1.0 && u >= phase.c1 && u < 2.0 * phase.c1,
                y < 1.0 || u >= 2.0 * phase.c1,
            ];
            prop_assert_eq!(fired.iter().filter(|f| **f).count(), 1);
            match reward_branch(&obs, &pose, &phase, 1.0) {
                RewardBranch::Penalty => prop_assert!(r <= 0.0),
                _ => prop_assert!(r >= 0.0),
            }
        }

        #[test]
        fn reward_symmetric_under_marker_relabel(
            u1 in -0.2f64..0.2, u2 in -0.2f64..0.2, v1 in -1.0f64..1.0, v2 in -1.0f64..1.0,
            y in 0.5f64..1.5, phase in 1usize..=4,
        ) {
            let phase = PhaseConfig::curriculum(phase);
            let a = anchors();
            let swapped_anchors = RewardAnchors { v1: a.v2, v2: a.v1 };
            let r = compute_reward(&MarkerObservation::new(u1, v1, u2, v2), &at(y), &phase, &a, 1.0);
            let s = compute_reward(&MarkerObservation::new(u2, v2, u1, v1), &at(y), &phase, &swapped_anchors, 1.0);
            prop_assert!((r - s).abs() < 1e-12);
        }

        #[test]
        fn step_shifts_stack(seed in 0u64..1000, action in 0usize..15) {
            let mut e = env();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let before = e.reset(&mut rng).unwrap();
            let after = e.step(action, &mut rng).unwrap().stack;
            prop_assert_eq!(&after.0[..8], &before.0[4..]);
            let encoded = e.settings().encoding.encode(&e.observation(), &e.anchors());
            prop_assert_eq!(after.frame(2), encoded.as_array());
        }
    }
}
