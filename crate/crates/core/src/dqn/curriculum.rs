use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::{select_action, soft_update, train_step, ReplayBuffer, TrainerConfig, Transition};
use crate::env::{trailing_mean, DockingEnv, PhaseConfig, Termination};
use crate::error::{DockError, Result};
use crate::neural::{Optimizer, QNetwork};

pub const TRAINING_LOG_HEADER: &str = "episode,phase,return,epsilon,loss_mean,steps,termination";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLogRow {
    /// 1-based across the whole run.
    pub episode: usize,
    pub phase: usize,
    pub episode_return: f64,
    pub epsilon: f64,
    /// Mean minibatch loss over the episode's updates, if any ran.
    pub loss_mean: Option<f64>,
    pub steps: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<EpisodeLogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(TRAINING_LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let loss = r.loss_mean.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.episode,
                r.phase,
                r.episode_return,
                r.epsilon,
                loss,
                r.steps,
                r.termination.as_str()
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| DockError::io(path, e))
    }

    /// Phase of each logged episode, with consecutive repeats collapsed.
    pub fn phase_sequence(&self) -> Vec<usize> {
        let mut seq: Vec<usize> = Vec::new();
        for r in &self.rows {
            if seq.last() != Some(&r.phase) {
                seq.push(r.phase);
            }
        }
        seq
    }

    pub fn returns_for_phase(&self, phase: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.episode_return)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurriculumStatus {
    Completed,
    Stalled {
        phase: usize,
        episodes: usize,
        trailing_return: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub primary: QNetwork,
    pub target: QNetwork,
    pub log: TrainingLog,
    /// Primary network snapshot at the end of each completed phase.
    pub phase_checkpoints: Vec<QNetwork>,
    /// Trailing-window return at which each completed phase advanced.
    pub phase_final_returns: Vec<f64>,
    pub status: CurriculumStatus,
}

impl TrainingRun {
    pub fn ensure_completed(&self) -> Result<()> {
        match &self.status {
            CurriculumStatus::Completed => Ok(()),
            CurriculumStatus::Stalled {
                phase,
                episodes,
                trailing_return,
                threshold,
            } => Err(DockError::CurriculumStalled {
                phase: *phase,
                episodes: *episodes,
                trailing_return: *trailing_return,
                threshold: *threshold,
            }),
        }
    }
}

/// Trains through `phases` in order, advancing when the trailing-window
/// return clears each phase's threshold. Weights carry across phases; the
/// replay buffer and the epsilon schedule restart at every phase.
///
/// Exhausting a phase or total episode budget stops the run with
/// [`CurriculumStatus::Stalled`] and the log so far.
pub fn run_curriculum<R: Rng + ?Sized>(
    env: &mut DockingEnv,
    phases: &[PhaseConfig],
    cfg: &TrainerConfig,
    rng: &mut R,
    mut on_episode: impl FnMut(&EpisodeLogRow),
) -> Result<TrainingRun> {
    cfg.validate()?;
    if phases.is_empty() {
        return Err(DockError::Config("curriculum has no phases".into()));
    }
    let actions = env.encoded_actions().to_vec();
    let mut primary = QNetwork::init(rng);
    let mut target = primary.clone();
    let mut optimizer = Optimizer::new(cfg.learning_rate, cfg.optimizer)?;
    let mut buffer = ReplayBuffer::new(cfg.capacity);
    let mut log = TrainingLog::default();
    let mut phase_checkpoints = Vec::new();
    let mut phase_final_returns = Vec::new();
    let mut status = CurriculumStatus::Completed;

    'phases: for phase in phases {
        env.set_phase(*phase);
        if cfg.clear_buffer_between_phases {
            buffer.clear();
        }
        let mut returns = Vec::new();
        loop {
            if returns.len() >= cfg.phase_episode_budget || log.rows.len() >= cfg.total_episode_budget {
                status = CurriculumStatus::Stalled {
                    phase: phase.index,
                    episodes: returns.len(),
                    trailing_return: trailing_mean(&returns, cfg.window.min(returns.len().max(1))).unwrap_or(f64::NAN),
                    threshold: phase.advance_threshold,
                };
                break 'phases;
            }
            let epsilon = cfg.epsilon.value(returns.len(), cfg.phase_episode_budget);
            let mut state = env.reset(rng)?;
            let mut episode_return = 0.0;
            let mut loss_sum = 0.0;
            let mut updates = 0usize;
            let termination = loop {
                let action = select_action(&primary, &state.0, epsilon, &actions, rng);
                let out = env.step(action, rng)?;
                episode_return += out.reward;
                buffer.push(Transition {
                    state,
                    action,
                    reward: out.reward,
                    next_state: out.stack,
                    done: out.done,
                });
                for _ in 0..cfg.updates_per_step {
                    let step = train_step(&buffer, &mut primary, &target, &mut optimizer, cfg, &actions, rng)?;
                    if let Some(loss) = step.loss() {
                        soft_update(&primary, &mut target, cfg.tau)?;
                        loss_sum += loss;
                        updates += 1;
                    }
                }
                state = out.stack;
                if let Some(t) = out.termination {
                    break t;
                }
            };
            if !primary.is_finite() {
                return Err(DockError::InvalidInput(format!(
                    "network diverged in phase {} episode {}",
                    phase.index,
                    returns.len() + 1
                )));
            }
            returns.push(episode_return);
            let row = EpisodeLogRow {
                episode: log.rows.len() + 1,
                phase: phase.index,
                episode_return,
                epsilon,
                loss_mean: (updates > 0).then(|| loss_sum / updates as f64),
                steps: env.steps(),
                termination,
            };
            on_episode(&row);
            log.rows.push(row);

            if let Some(mean) = trailing_mean(&returns, cfg.window) {
                if phase.should_advance(mean) {
                    phase_checkpoints.push(primary.clone());
                    phase_final_returns.push(mean);
                    break;
                }
            }
        }
    }

    Ok(TrainingRun {
        primary,
        target,
        log,
        phase_checkpoints,
        phase_final_returns,
        status,
    })
}
