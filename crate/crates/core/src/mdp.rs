//! Explicit tabular MDPs and exact trajectory probabilities.

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Environment, Trajectory, Transition};
use crate::error::CoreError;
use crate::policy::LatentPolicy;
use crate::rng::{sample_categorical, Stream};
use crate::Result;

/// Tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// An explicit finite MDP: states, actions, transition tensor, reward table,
/// discount, initial distribution and an optional episode horizon.
///
/// Transition probabilities are stored row-major as `(s, a, s')`; rewards as
/// `(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    pub discount: f64,
    initial_dist: Vec<f64>,
    pub horizon: Option<usize>,
}

impl FiniteMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        initial_dist: Vec<f64>,
        horizon: Option<usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(CoreError::InvalidArgument(
                "MDP needs at least one state and one action".into(),
            ));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(CoreError::InvalidArgument(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(CoreError::InvalidArgument(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if initial_dist.len() != n_states {
            return Err(CoreError::InvalidArgument(
                "initial distribution length mismatch".into(),
            ));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(CoreError::InvalidArgument(format!(
                "discount {discount} outside [0, 1]"
            )));
        }
        if horizon.is_none() && discount >= 1.0 {
            return Err(CoreError::InvalidArgument(
                "discount must be strictly below 1 without a horizon".into(),
            ));
        }
        let mdp = FiniteMdp {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            initial_dist,
            horizon,
        };
        mdp.validate_distributions()?;
        Ok(mdp)
    }

    fn validate_distributions(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                if row.iter().any(|&p| p < 0.0) {
                    return Err(CoreError::InvalidDistribution(format!(
                        "negative transition probability at (s={s}, a={a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(CoreError::InvalidDistribution(format!(
                        "transition row (s={s}, a={a}) sums to {sum}"
                    )));
                }
            }
        }
        if self.initial_dist.iter().any(|&p| p < 0.0) {
            return Err(CoreError::InvalidDistribution(
                "negative initial probability".into(),
            ));
        }
        let sum: f64 = self.initial_dist.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(CoreError::InvalidDistribution(format!(
                "initial distribution sums to {sum}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    #[inline]
    pub fn transition_prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    /// Copy of this MDP with a replaced reward table.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        FiniteMdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.discount,
            self.initial_dist.clone(),
            self.horizon,
        )
    }

    /// Copy of this MDP with a replaced transition tensor.
    pub fn with_transition(&self, transition: Vec<f64>) -> Result<Self> {
        FiniteMdp::new(
            self.n_states,
            self.n_actions,
            transition,
            self.reward.clone(),
            self.discount,
            self.initial_dist.clone(),
            self.horizon,
        )
    }

    /// Whether both MDPs share state/action spaces, discount, horizon and
    /// initial distribution (the precondition for robustness-set membership
    /// checks).
    pub fn same_skeleton(&self, other: &FiniteMdp) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.discount == other.discount
            && self.horizon == other.horizon
            && self
                .initial_dist
                .iter()
                .zip(&other.initial_dist)
                .all(|(a, b)| (a - b).abs() <= PROB_TOL)
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.n_states {
            return Err(CoreError::InvalidState {
                state,
                n_states: self.n_states,
            });
        }
        Ok(())
    }
}

impl Environment for FiniteMdp {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn n_state_ids(&self) -> usize {
        self.n_states
    }

    fn max_steps(&self) -> usize {
        self.horizon.unwrap_or(usize::MAX)
    }

    fn reset(&self, rng: &mut Stream) -> EnvState {
        EnvState::discrete(sample_categorical(rng, &self.initial_dist), 0)
    }

    fn step(&self, state: &EnvState, action: usize, rng: &mut Stream) -> Result<Transition> {
        self.check_state(state.id)?;
        self.check_action(action)?;
        let next = sample_categorical(rng, self.transition_row(state.id, action));
        Ok(Transition {
            next: EnvState::discrete(next, state.t + 1),
            reward: self.reward(state.id, action),
        })
    }
}

/// Exact log-probability of a trajectory under a latent-conditioned policy:
/// `log mu(s0) + sum_t [log pi(a_t|s_t,z) + log P(s_{t+1}|s_t,a_t)]`.
///
/// Returns negative infinity when any factor is zero.
pub fn trajectory_log_prob(
    mdp: &FiniteMdp,
    policy: &LatentPolicy,
    latent: usize,
    trajectory: &Trajectory,
) -> Result<f64> {
    let mut log_p = 0.0;
    let first = trajectory
        .steps
        .first()
        .ok_or_else(|| CoreError::InvalidArgument("empty trajectory".into()))?;
    mdp.check_state(first.state)?;
    let mu = mdp.initial_dist[first.state];
    if mu == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    log_p += mu.ln();
    for step in &trajectory.steps {
        mdp.check_state(step.state)?;
        mdp.check_state(step.next_state)?;
        if step.action >= mdp.n_actions {
            return Err(CoreError::InvalidAction {
                action: step.action,
                n_actions: mdp.n_actions,
            });
        }
        let pi = policy.action_distribution(step.state, latent)?[step.action];
        let p = mdp.transition_prob(step.state, step.action, step.next_state);
        if pi == 0.0 || p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log_p += pi.ln() + p.ln();
    }
    Ok(log_p)
}

/// Deterministic single-chain MDP builders used by tests and small demos.
pub mod builders {
    use super::FiniteMdp;
    use crate::Result;

    /// Deterministic MDP from explicit tables: `next[s][a]` and `reward[s][a]`.
    pub fn deterministic(
        next: &[Vec<usize>],
        reward: &[Vec<f64>],
        discount: f64,
        initial_state: usize,
        horizon: Option<usize>,
    ) -> Result<FiniteMdp> {
        let n_states = next.len();
        let n_actions = next[0].len();
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        let mut reward_flat = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                transition[(s * n_actions + a) * n_states + next[s][a]] = 1.0;
                reward_flat[s * n_actions + a] = reward[s][a];
            }
        }
        let mut initial = vec![0.0; n_states];
        initial[initial_state] = 1.0;
        FiniteMdp::new(
            n_states, n_actions, transition, reward_flat, discount, initial, horizon,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, ActionMode};
    use crate::policy::{LatentPolicy, LatentPrior};
    use crate::rng::stream;

    fn two_state_deterministic() -> FiniteMdp {
        // s0 --a0--> s0 (r 0), s0 --a1--> s1 (r 1), s1 absorbing (r 0)
        builders::deterministic(
            &[vec![0, 1], vec![1, 1]],
            &[vec![0.0, 1.0], vec![0.0, 0.0]],
            0.9,
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = FiniteMdp::new(
            1,
            1,
            vec![0.5],
            vec![0.0],
            0.9,
            vec![1.0],
            None,
        );
        assert!(matches!(bad, Err(CoreError::InvalidDistribution(_))));
    }

    #[test]
    fn rejects_undiscounted_without_horizon() {
        let bad = FiniteMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0], None);
        assert!(bad.is_err());
        let ok = FiniteMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0], Some(5));
        assert!(ok.is_ok());
    }

    #[test]
    fn deterministic_step() {
        let mdp = two_state_deterministic();
        let mut rng = stream(0, &[0]);
        let tr = mdp
            .step(&EnvState::discrete(0, 0), 1, &mut rng)
            .unwrap();
        assert_eq!(tr.next.id, 1);
        assert_eq!(tr.reward, 1.0);
    }

    #[test]
    fn invalid_indices_rejected() {
        let mdp = two_state_deterministic();
        let mut rng = stream(0, &[0]);
        assert!(mdp.step(&EnvState::discrete(5, 0), 0, &mut rng).is_err());
        assert!(mdp.step(&EnvState::discrete(0, 0), 9, &mut rng).is_err());
    }

    #[test]
    fn log_prob_deterministic_consistent_trajectory_is_zero() {
        let mdp = two_state_deterministic();
        // Deterministic policy: always action 1.
        let mut policy = LatentPolicy::zeros(1, 2, 2, 1.0);
        policy.set_logit(0, 0, 1, 1e6);
        policy.set_logit(0, 1, 1, 1e6);
        let mut rng = stream(3, &[1]);
        let traj = rollout(&mdp_with_horizon(&mdp, 3), &policy, 0, ActionMode::Greedy, 3, &mut rng)
            .unwrap();
        // Greedy rollout through deterministic dynamics: every factor should
        // be 1 for a policy that is (numerically) deterministic.
        let lp = trajectory_log_prob(&mdp, &policy, 0, &traj).unwrap();
        assert!(lp.abs() < 1e-9, "log prob {lp}");
    }

    fn mdp_with_horizon(mdp: &FiniteMdp, horizon: usize) -> FiniteMdp {
        FiniteMdp::new(
            mdp.n_states,
            mdp.n_actions,
            mdp.transition_tensor().to_vec(),
            mdp.reward_table().to_vec(),
            mdp.discount,
            mdp.initial_dist().to_vec(),
            Some(horizon),
        )
        .unwrap()
    }

    #[test]
    fn log_prob_uniform_policy_three_steps() {
        let mdp = two_state_deterministic();
        let policy = LatentPolicy::zeros(1, 2, 2, 1.0); // uniform over 2 actions
        let mut rng = stream(4, &[1]);
        let traj = rollout(
            &mdp_with_horizon(&mdp, 3),
            &policy,
            0,
            ActionMode::Sample,
            4,
            &mut rng,
        )
        .unwrap();
        assert_eq!(traj.len(), 3);
        let lp = trajectory_log_prob(&mdp, &policy, 0, &traj).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12, "lp = {lp}");
    }

    #[test]
    fn log_prob_zero_probability_action_is_neg_infinity() {
        let mdp = two_state_deterministic();
        let policy = LatentPolicy::zeros(1, 2, 2, 1.0);
        let mut traj = Trajectory::new(0, 0);
        traj.push(crate::env::TrajectoryStep {
            state: 0,
            action: 0,
            reward: 0.0,
            unsup_reward: 0.0,
            // Impossible under the deterministic dynamics: P(1|0,0) = 0.
            next_state: 1,
        });
        let lp = trajectory_log_prob(&mdp, &policy, 0, &traj).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn prior_sampling_uses_distribution() {
        let prior = LatentPrior::uniform(5).unwrap();
        assert!((prior.log_prob(2).unwrap() - (-(5f64.ln()))).abs() < 1e-12);
    }
}
