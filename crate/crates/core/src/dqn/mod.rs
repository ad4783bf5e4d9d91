//! Double DQN: behavior policy, decoupled targets, minibatch updates and
//! soft target tracking.

mod curriculum;
mod replay;

pub use curriculum::{run_curriculum, CurriculumStatus, EpisodeLogRow, TrainingLog, TrainingRun, TRAINING_LOG_HEADER};
pub use replay::{ReplayBuffer, Transition};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;
use crate::error::{DockError, Result};
use crate::neural::{argmax, argmax_action, Optimizer, OptimizerKind, QNetwork, ACTION_DIM, HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of a phase's episode budget over which epsilon decays.
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.6,
        }
    }
}

impl EpsilonSchedule {
    /// Epsilon for the `episode`-th episode (0-based) of a phase.
    pub fn value(&self, episode: usize, phase_budget: usize) -> f64 {
        let horizon = (self.decay_fraction * phase_budget as f64).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub capacity: usize,
    pub epsilon: EpsilonSchedule,
    pub updates_per_step: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Episodes averaged when deciding phase advancement.
    pub window: usize,
    pub phase_episode_budget: usize,
    pub total_episode_budget: usize,
    pub clear_buffer_between_phases: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            capacity: 50_000,
            epsilon: EpsilonSchedule::default(),
            updates_per_step: 4,
            learning_rate: 3e-4,
            optimizer: OptimizerKind::adam(),
            window: 50,
            phase_episode_budget: 5000,
            total_episode_budget: 20_000,
            clear_buffer_between_phases: true,
            seed: 8,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DockError::Config(format!("trainer: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail("tau must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.batch_size > self.capacity {
            return fail("batch size must be in 1..=capacity");
        }
        if self.window == 0 || self.phase_episode_budget == 0 || self.total_episode_budget == 0 {
            return fail("window and episode budgets must be positive");
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end) && e.decay_fraction > 0.0) {
            return fail("invalid epsilon schedule");
        }
        Optimizer::new(self.learning_rate, self.optimizer)?;
        Ok(())
    }
}

/// Epsilon-greedy choice over the action table.
pub fn select_action<R: Rng + ?Sized>(
    primary: &QNetwork,
    obs: &[f64; OBS_DIM],
    epsilon: f64,
    actions: &[[f64; ACTION_DIM]],
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..actions.len())
    } else {
        argmax_action(primary, obs, actions)
    }
}

fn action_features(net: &QNetwork, actions: &[[f64; ACTION_DIM]]) -> Vec<[f64; HIDDEN]> {
    actions.iter().map(|a| net.action_features(a)).collect()
}

/// `r + gamma * Q_target(s', argmax_a Q_primary(s', a))`, or `r` when done.
pub fn double_dqn_target(
    batch: &[Transition],
    primary: &QNetwork,
    target: &QNetwork,
    gamma: f64,
    actions: &[[f64; ACTION_DIM]],
) -> Vec<f64> {
    let primary_acts = action_features(primary, actions);
    let target_acts = action_features(target, actions);
    batch
        .iter()
        .map(|t| {
            if t.done {
                return t.reward;
            }
            let next = &t.next_state.0;
            let pf = primary.obs_features(next);
            let q_primary: Vec<f64> = primary_acts.iter().map(|a| primary.q_from_features(&pf, a)).collect();
            let best = argmax(&q_primary);
            let tf = target.obs_features(next);
            t.reward + gamma * target.q_from_features(&tf, &target_acts[best])
        })
        .collect()
}

/// Vanilla DQN target `r + gamma * max_a Q_target(s', a)`, kept as a
/// comparison baseline.
pub fn vanilla_dqn_target(
    batch: &[Transition],
    target: &QNetwork,
    gamma: f64,
    actions: &[[f64; ACTION_DIM]],
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                t.reward
            } else {
                let q = target.q_values(&t.next_state.0, actions);
                t.reward + gamma * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// Result of one minibatch update.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainStep {
    Updated {
        loss: f64,
        targets: Vec<f64>,
        predictions: Vec<f64>,
    },
    /// Fewer transitions stored than one batch needs.
    Skipped { stored: usize, batch_size: usize },
}

impl TrainStep {
    pub fn loss(&self) -> Option<f64> {
        match self {
            TrainStep::Updated { loss, .. } => Some(*loss),
            TrainStep::Skipped { .. } => None,
        }
    }
}

/// Mean squared TD error over `batch` and its gradient with respect to
/// the primary network.
pub fn td_loss_and_grad(
    batch: &[Transition],
    targets: &[f64],
    primary: &QNetwork,
    actions: &[[f64; ACTION_DIM]],
) -> (f64, QNetwork, Vec<f64>) {
    let mut grads = QNetwork::zeros();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(batch.len());
    let n = batch.len() as f64;
    for (t, y) in batch.iter().zip(targets) {
        let cache = primary.forward_cached(&t.state.0, &actions[t.action]);
        let err = y - cache.q;
        loss += err * err;
        predictions.push(cache.q);
        primary.backward_accumulate(&cache, -2.0 * err / n, &mut grads);
    }
    (loss / n, grads, predictions)
}

/// Samples a minibatch and takes one optimizer step on `primary`.
pub fn train_step<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    primary: &mut QNetwork,
    target: &QNetwork,
    optimizer: &mut Optimizer,
    cfg: &TrainerConfig,
    actions: &[[f64; ACTION_DIM]],
    rng: &mut R,
) -> Result<TrainStep> {
    if buffer.len() < cfg.batch_size {
        return Ok(TrainStep::Skipped {
            stored: buffer.len(),
            batch_size: cfg.batch_size,
        });
    }
    let batch = buffer.sample(cfg.batch_size, rng);
    let targets = double_dqn_target(&batch, primary, target, cfg.gamma, actions);
    let (loss, grads, predictions) = td_loss_and_grad(&batch, &targets, primary, actions);
    optimizer.step(primary, &grads)?;
    Ok(TrainStep::Updated {
        loss,
        targets,
        predictions,
    })
}

/// `target <- tau * primary + (1 - tau) * target`.
pub fn soft_update(primary: &QNetwork, target: &mut QNetwork, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(DockError::InvalidInput(format!("tau must lie in [0, 1], got {tau}")));
    }
    primary.check_same_shape(target)?;
    for (t, p) in target.tensors_mut().into_iter().zip(primary.tensors()) {
        for (ti, pi) in t.iter_mut().zip(p) {
            *ti = tau * pi + (1.0 - tau) * *ti;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ObservationStack;
    use crate::neural::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actions() -> Vec<[f64; 2]> {
        crate::env::ActionTable::default().encoded(&crate::sim::SimConfig::default())
    }

    fn transition(state: f64, action: usize, reward: f64, next: f64, done: bool) -> Transition {
        Transition {
            state: ObservationStack([state; 12]),
            action,
            reward,
            next_state: ObservationStack([next; 12]),
            done,
        }
    }

    #[test]
    fn epsilon_decays_linearly_then_holds() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0, 100), 1.0);
        assert!((e.value(30, 100) - 0.525).abs() < 1e-12);
        assert!((e.value(60, 100) - 0.05).abs() < 1e-12);
        assert!((e.value(99, 100) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn greedy_selection_matches_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::init(&mut rng);
        let acts = actions();
        for _ in 0..50 {
            let obs = [rng.random_range(-1.0..1.0); 12];
            assert_eq!(
                select_action(&net, &obs, 0.0, &acts, &mut rng),
                argmax_action(&net, &obs, &acts)
            );
        }
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let net = QNetwork::init(&mut ChaCha8Rng::seed_from_u64(2));
        let acts = actions();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| select_action(&net, &[0.1; 12], 0.5, &acts, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn gamma_zero_and_terminal_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = QNetwork::init(&mut rng);
        let t = QNetwork::init(&mut rng);
        let batch = vec![transition(0.1, 0, 1.5, 0.2, false), transition(0.3, 4, -2.0, 0.4, true)];
        assert_eq!(double_dqn_target(&batch, &p, &t, 0.0, &actions()), vec![1.5, -2.0]);
        assert_eq!(double_dqn_target(&batch[1..], &p, &t, 0.99, &actions()), vec![-2.0]);
    }

    #[test]
    fn loss_is_mean_squared_td_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = QNetwork::init(&mut rng);
        let t = QNetwork::init(&mut rng);
        let mut buf = ReplayBuffer::new(16);
        for i in 0..8 {
            buf.push(transition(0.1 * i as f64, i % 9, i as f64, 0.05 * i as f64, i % 3 == 0));
        }
        let cfg = TrainerConfig {
            batch_size: 8,
            ..TrainerConfig::default()
        };
        let before = t.clone();
        let snapshot = p.clone();
        let mut opt = Optimizer::sgd(1e-3).unwrap();
        let step = train_step(&buf, &mut p, &t, &mut opt, &cfg, &actions(), &mut rng).unwrap();
        let TrainStep::Updated {
            loss,
            targets,
            predictions,
        } = step
        else {
            panic!("expected an update");
        };
        let mse = targets
            .iter()
            .zip(&predictions)
            .map(|(y, q)| (y - q).powi(2))
            .sum::<f64>()
            / 8.0;
        assert!((loss - mse).abs() < 1e-12);
        assert_eq!(t, before);
        assert_ne!(p, snapshot);
    }

    #[test]
    fn underfull_buffer_skips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = QNetwork::init(&mut rng);
        let t = p.clone();
        let mut buf = ReplayBuffer::new(100);
        buf.push(transition(0.0, 0, 0.0, 0.0, true));
        let before = p.clone();
        let step = train_step(
            &buf,
            &mut p,
            &t,
            &mut Optimizer::sgd(0.1).unwrap(),
            &TrainerConfig::default(),
            &actions(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            step,
            TrainStep::Skipped {
                stored: 1,
                batch_size: 64
            }
        );
        assert_eq!(p, before);
    }

    #[test]
    fn single_transition_regresses_to_fixed_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = QNetwork::init(&mut rng);
        let t = p.clone();
        let mut buf = ReplayBuffer::new(4);
        buf.push(transition(0.2, 3, 4.0, 0.3, true));
        let cfg = TrainerConfig {
            batch_size: 1,
            ..TrainerConfig::default()
        };
        let mut opt = Optimizer::sgd(1e-2).unwrap();
        for _ in 0..5000 {
            train_step(&buf, &mut p, &t, &mut opt, &cfg, &actions(), &mut rng).unwrap();
        }
        let q = crate::neural::q_forward(&p, &[0.2; 12], &actions()[3]).unwrap();
        assert!((q - 4.0).abs() < 1e-3, "q = {q}");
    }

    #[test]
    fn soft_update_endpoints_and_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = QNetwork::init(&mut rng);
        let t0 = QNetwork::init(&mut rng);
        let mut t = t0.clone();
        soft_update(&p, &mut t, 0.0).unwrap();
        assert_eq!(t, t0);
        soft_update(&p, &mut t, 1.0).unwrap();
        assert_eq!(t, p);

        let mut a = QNetwork::zeros();
        a.output.bias[0] = 2.0;
        let mut b = QNetwork::zeros();
        soft_update(&a, &mut b, 0.5).unwrap();
        assert_eq!(b.output.bias[0], 1.0);
    }

    #[test]
    fn soft_update_rejects_mismatch() {
        let p = QNetwork::zeros();
        let mut t = QNetwork::zeros();
        t.action = Dense::zeros(3, 32);
        assert!(matches!(
            soft_update(&p, &mut t, 0.1),
            Err(DockError::ShapeMismatch { .. })
        ));
    }
}
