//! Latent-conditioned stochastic policies over discrete actions.
//!
//! A policy holds one logit block per latent, laid out `(z, state, a)`. The
//! action distribution is the softmax of the block at a stored temperature;
//! greedy evaluation is the argmax of the logits (ties to the lowest action
//! index) and consumes no randomness. States enter through their discrete
//! feature index, so the same representation covers exact tabular MDPs and
//! tile-coded planar environments.

use serde::{Deserialize, Serialize};

use crate::env::{ActionMode, ActionSelector};
use crate::error::CoreError;
use crate::rng::{sample_categorical, Stream};
use crate::Result;

/// A discrete prior over latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    probabilities: Vec<f64>,
}

impl LatentPrior {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(CoreError::InvalidArgument("empty latent prior".into()));
        }
        if probabilities.iter().any(|&p| p < 0.0) {
            return Err(CoreError::InvalidDistribution(
                "negative latent probability".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::InvalidDistribution(format!(
                "latent prior sums to {sum}"
            )));
        }
        Ok(LatentPrior { probabilities })
    }

    /// The uniform prior over `n` latents.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::InvalidArgument("empty latent prior".into()));
        }
        Ok(LatentPrior {
            probabilities: vec![1.0 / n as f64; n],
        })
    }

    pub fn n_latents(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn prob(&self, latent: usize) -> Result<f64> {
        self.probabilities
            .get(latent)
            .copied()
            .ok_or_else(|| CoreError::InvalidArgument(format!("latent {latent} out of range")))
    }

    pub fn log_prob(&self, latent: usize) -> Result<f64> {
        let p = self.prob(latent)?;
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(p.ln())
    }
}

/// Draw a latent id from the prior.
pub fn sample_latent(prior: &LatentPrior, rng: &mut Stream) -> usize {
    sample_categorical(rng, prior.probabilities())
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(CoreError::InvalidArgument("non-finite logits".into()));
    }
    if temperature <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A latent-conditioned softmax policy with independent per-latent blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPolicy {
    pub n_latents: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub temperature: f64,
    logits: Vec<f64>,
}

impl LatentPolicy {
    pub fn zeros(n_latents: usize, n_states: usize, n_actions: usize, temperature: f64) -> Self {
        LatentPolicy {
            n_latents,
            n_states,
            n_actions,
            temperature,
            logits: vec![0.0; n_latents * n_states * n_actions],
        }
    }

    /// Seeded initialization with small zero-mean noise, independent per
    /// latent block, so latents become distinguishable only through training.
    pub fn init_random(
        n_latents: usize,
        n_states: usize,
        n_actions: usize,
        temperature: f64,
        scale: f64,
        rng: &mut Stream,
    ) -> Self {
        use rand::Rng;
        let mut policy = Self::zeros(n_latents, n_states, n_actions, temperature);
        for l in policy.logits.iter_mut() {
            *l = scale * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        policy
    }

    pub fn from_logits(
        n_latents: usize,
        n_states: usize,
        n_actions: usize,
        temperature: f64,
        logits: Vec<f64>,
    ) -> Result<Self> {
        if logits.len() != n_latents * n_states * n_actions {
            return Err(CoreError::InvalidArgument(format!(
                "logits have {} entries, expected {}",
                logits.len(),
                n_latents * n_states * n_actions
            )));
        }
        Ok(LatentPolicy {
            n_latents,
            n_states,
            n_actions,
            temperature,
            logits,
        })
    }

    #[inline]
    fn block(&self, state: usize, latent: usize) -> &[f64] {
        let base = (latent * self.n_states + state) * self.n_actions;
        &self.logits[base..base + self.n_actions]
    }

    pub fn set_logit(&mut self, latent: usize, state: usize, action: usize, value: f64) {
        let base = (latent * self.n_states + state) * self.n_actions;
        self.logits[base + action] = value;
    }

    pub fn logit(&self, latent: usize, state: usize, action: usize) -> f64 {
        self.logits[(latent * self.n_states + state) * self.n_actions + action]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn check_indices(&self, state: usize, latent: usize) -> Result<()> {
        if state >= self.n_states {
            return Err(CoreError::InvalidState {
                state,
                n_states: self.n_states,
            });
        }
        if latent >= self.n_latents {
            return Err(CoreError::InvalidArgument(format!(
                "latent {latent} out of range ({} latents)",
                self.n_latents
            )));
        }
        Ok(())
    }

    /// Probability vector over actions at `(state, latent)`.
    pub fn action_distribution(&self, state: usize, latent: usize) -> Result<Vec<f64>> {
        self.check_indices(state, latent)?;
        softmax(self.block(state, latent), self.temperature)
    }

    /// Argmax-probability action; pure function of the logits.
    pub fn greedy_action(&self, state: usize, latent: usize) -> Result<usize> {
        self.check_indices(state, latent)?;
        Ok(argmax_lowest(self.block(state, latent)))
    }

    /// Sample an action from the softmax distribution.
    pub fn sample_action(&self, state: usize, latent: usize, rng: &mut Stream) -> Result<usize> {
        let probs = self.action_distribution(state, latent)?;
        Ok(sample_categorical(rng, &probs))
    }
}

impl ActionSelector for LatentPolicy {
    fn select(&self, state_id: usize, latent: usize, mode: ActionMode, rng: &mut Stream) -> usize {
        match mode {
            ActionMode::Greedy => self
                .greedy_action(state_id, latent)
                .expect("valid state/latent for greedy action"),
            ActionMode::Sample => self
                .sample_action(state_id, latent, rng)
                .expect("valid state/latent for sampled action"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 4], 1.0).unwrap();
        for &x in &p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_two_actions() {
        let p = softmax(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn greedy_argmax_and_tie_break() {
        let mut policy = LatentPolicy::zeros(1, 1, 3, 1.0);
        policy.set_logit(0, 0, 0, 0.1);
        policy.set_logit(0, 0, 1, 0.9);
        policy.set_logit(0, 0, 2, 0.3);
        assert_eq!(policy.greedy_action(0, 0).unwrap(), 1);

        let mut tied = LatentPolicy::zeros(1, 1, 3, 1.0);
        tied.set_logit(0, 0, 0, 0.7);
        tied.set_logit(0, 0, 1, 0.1);
        tied.set_logit(0, 0, 2, 0.7);
        assert_eq!(tied.greedy_action(0, 0).unwrap(), 0);
    }

    #[test]
    fn non_finite_logits_error() {
        let mut policy = LatentPolicy::zeros(1, 1, 2, 1.0);
        policy.set_logit(0, 0, 0, f64::NAN);
        assert!(policy.action_distribution(0, 0).is_err());
    }

    #[test]
    fn degenerate_prior_always_samples_support() {
        let prior = LatentPrior::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = stream(11, &[0]);
        for _ in 0..100 {
            assert_eq!(sample_latent(&prior, &mut rng), 0);
        }
    }

    #[test]
    fn uniform_prior_frequencies_within_three_sigma() {
        // Multinomial concentration: for each latent, |count - n p| should be
        // within 3 sqrt(n p (1-p)) except with probability ~0.3% per cell.
        let n_latents = 6;
        let n = 100_000usize;
        let prior = LatentPrior::uniform(n_latents).unwrap();
        let mut rng = stream(2024, &[7]);
        let mut counts = vec![0usize; n_latents];
        for _ in 0..n {
            counts[sample_latent(&prior, &mut rng)] += 1;
        }
        let p = 1.0 / n_latents as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (z, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - n as f64 * p).abs();
            assert!(
                dev <= 3.0 * sigma,
                "latent {z}: count {c}, deviation {dev:.1} > 3 sigma {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn greedy_is_pure() {
        let mut rng = stream(5, &[0]);
        let policy = LatentPolicy::init_random(2, 3, 4, 0.7, 0.01, &mut rng);
        let a1: Vec<usize> = (0..3).map(|s| policy.greedy_action(s, 1).unwrap()).collect();
        let a2: Vec<usize> = (0..3).map(|s| policy.greedy_action(s, 1).unwrap()).collect();
        assert_eq!(a1, a2);
    }
}
