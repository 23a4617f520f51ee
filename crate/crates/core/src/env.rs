//! Common environment abstraction and trajectory mechanics.
//!
//! Environments are immutable descriptions: stepping never mutates the
//! environment, all per-episode state lives in [`EnvState`] and the caller's
//! rng stream. `EnvState` carries the discrete feature index used by tabular
//! learners and discriminators, the continuous position where one exists, and
//! the step counter (so time-windowed perturbations stay Markov in the
//! augmented state).

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::Stream;
use crate::Result;

/// Snapshot of an episode's situation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Discrete feature index in `0..n_state_ids()`; tabular learners and
    /// discriminators key on this.
    pub id: usize,
    /// Continuous position for planar environments, `None` for abstract MDPs.
    pub pos: Option<[f64; 2]>,
    /// Steps taken since reset.
    pub t: usize,
}

impl EnvState {
    pub fn discrete(id: usize, t: usize) -> Self {
        EnvState { id, pos: None, t }
    }

    pub fn planar(id: usize, pos: [f64; 2], t: usize) -> Self {
        EnvState {
            id,
            pos: Some(pos),
            t,
        }
    }
}

/// One environment transition.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub next: EnvState,
    pub reward: f64,
}

/// A simulatable environment with a discrete action set and a discrete
/// feature space.
pub trait Environment {
    fn n_actions(&self) -> usize;

    /// Size of the discrete feature space that `EnvState::id` indexes.
    fn n_state_ids(&self) -> usize;

    /// Episode length cap.
    fn max_steps(&self) -> usize;

    fn reset(&self, rng: &mut Stream) -> EnvState;

    fn step(&self, state: &EnvState, action: usize, rng: &mut Stream) -> Result<Transition>;

    /// Whether `state` is absorbing (episodes may end early there).
    fn is_terminal(&self, _state: &EnvState) -> bool {
        false
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.n_actions() {
            return Err(CoreError::InvalidAction {
                action,
                n_actions: self.n_actions(),
            });
        }
        Ok(())
    }
}

/// One recorded step of an episode.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub unsup_reward: f64,
    pub next_state: usize,
}

/// An ordered episode record tagged with the latent that produced it.
///
/// `episode_return` is the undiscounted sum of environment rewards; it is
/// recomputable exactly from the stored steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub latent: usize,
    pub steps: Vec<TrajectoryStep>,
    pub episode_return: f64,
    pub seed: u64,
    /// Continuous positions visited (start position first), when the
    /// environment is planar. Length is `steps.len() + 1`.
    pub positions: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(latent: usize, seed: u64) -> Self {
        Trajectory {
            latent,
            steps: Vec::new(),
            episode_return: 0.0,
            seed,
            positions: Vec::new(),
        }
    }

    pub fn push(&mut self, step: TrajectoryStep) {
        self.steps.push(step);
        self.episode_return += step.reward;
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Recompute the undiscounted return from the stored steps.
    pub fn recomputed_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Check the chaining invariant: `next_state` of step t equals `state`
    /// of step t+1.
    pub fn is_chained(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }
}

/// Discounted return `sum_t gamma^t r_t` of a trajectory.
pub fn discounted_return(trajectory: &Trajectory, discount: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for step in &trajectory.steps {
        total += weight * step.reward;
        weight *= discount;
    }
    total
}

/// How an action is chosen during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the policy distribution.
    Sample,
    /// Take the argmax-probability action (ties to the lowest index); no rng
    /// is consumed for the choice.
    Greedy,
}

/// Anything that can pick actions for a latent-conditioned rollout.
pub trait ActionSelector {
    fn select(
        &self,
        state_id: usize,
        latent: usize,
        mode: ActionMode,
        rng: &mut Stream,
    ) -> usize;
}

/// Execute one full episode of `env` under `selector` with a fixed latent.
///
/// The episode runs for `env.max_steps()` steps or until a terminal state is
/// reached. `seed` is recorded in the trajectory for auditability; the caller
/// supplies the stream itself.
pub fn rollout(
    env: &dyn Environment,
    selector: &dyn ActionSelector,
    latent: usize,
    mode: ActionMode,
    seed: u64,
    rng: &mut Stream,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(latent, seed);
    let mut state = env.reset(rng);
    if let Some(p) = state.pos {
        traj.positions.push(p);
    }
    for _ in 0..env.max_steps() {
        if env.is_terminal(&state) {
            break;
        }
        let action = selector.select(state.id, latent, mode, rng);
        let tr = env.step(&state, action, rng)?;
        traj.push(TrajectoryStep {
            state: state.id,
            action,
            reward: tr.reward,
            unsup_reward: 0.0,
            next_state: tr.next.id,
        });
        if let Some(p) = tr.next.pos {
            traj.positions.push(p);
        }
        state = tr.next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounted_return_examples() {
        let mut t = Trajectory::new(0, 0);
        for r in [1.0, 1.0, 1.0] {
            t.push(TrajectoryStep {
                state: 0,
                action: 0,
                reward: r,
                unsup_reward: 0.0,
                next_state: 0,
            });
        }
        assert!((discounted_return(&t, 0.99) - 2.9701).abs() < 1e-12);

        let zero = Trajectory::new(0, 0);
        assert_eq!(discounted_return(&zero, 0.9), 0.0);
    }

    #[test]
    fn pinned_distance_one_return() {
        // Reward equal to the negative distance to goal, pinned at distance
        // 1 for three steps, undiscounted.
        let mut t = Trajectory::new(0, 0);
        for _ in 0..3 {
            t.push(TrajectoryStep {
                state: 0,
                action: 0,
                reward: -1.0,
                unsup_reward: 0.0,
                next_state: 0,
            });
        }
        assert_eq!(discounted_return(&t, 1.0), -3.0);
        assert_eq!(t.episode_return, -3.0);
        assert_eq!(t.recomputed_return(), -3.0);
    }
}
