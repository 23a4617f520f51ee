//! Latent discriminator and the unsupervised diversity reward.
//!
//! The discriminator is a multinomial logistic model with one linear score
//! per latent over discrete state features. Predictions are floored by
//! mixing with the uniform distribution, which keeps log-probabilities
//! bounded below: `p = (1 - K*floor) * softmax(scores) + floor`.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::policy::{softmax, LatentPrior};
use crate::Result;

/// Default probability floor applied to predictions.
pub const DEFAULT_PROBABILITY_FLOOR: f64 = 1e-8;

/// Learning-rate bound below which a gradient step can never decrease the
/// batch log-likelihood (the objective is concave with curvature bounded by
/// 1/2 for softmax scores on one-hot features).
pub const STABLE_LEARNING_RATE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub n_latents: usize,
    pub n_states: usize,
    pub learning_rate: f64,
    pub probability_floor: f64,
    /// Per-latent linear scores over one-hot state features, laid out
    /// `(latent, state)`.
    weights: Vec<f64>,
}

impl Discriminator {
    pub fn new(
        n_latents: usize,
        n_states: usize,
        learning_rate: f64,
        probability_floor: f64,
    ) -> Result<Self> {
        if n_latents == 0 || n_states == 0 {
            return Err(CoreError::InvalidArgument(
                "discriminator needs at least one latent and one state".into(),
            ));
        }
        if probability_floor < 0.0 || probability_floor * n_latents as f64 >= 1.0 {
            return Err(CoreError::InvalidArgument(format!(
                "probability floor {probability_floor} must satisfy 0 <= K*floor < 1"
            )));
        }
        Ok(Discriminator {
            n_latents,
            n_states,
            learning_rate,
            probability_floor,
            weights: vec![0.0; n_latents * n_states],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weight(&mut self, latent: usize, state: usize, value: f64) {
        self.weights[latent * self.n_states + state] = value;
    }

    pub fn weight(&self, latent: usize, state: usize) -> f64 {
        self.weights[latent * self.n_states + state]
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

    fn scores(&self, state: usize) -> Vec<f64> {
        (0..self.n_latents)
            .map(|z| self.weights[z * self.n_states + state])
            .collect()
    }

    fn raw_softmax(&self, state: usize) -> Result<Vec<f64>> {
        softmax(&self.scores(state), 1.0)
    }

    /// Floored, renormalized distribution over latents given a state.
    pub fn predict(&self, state: usize) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let raw = self.raw_softmax(state)?;
        let k = self.n_latents as f64;
        let f = self.probability_floor;
        Ok(raw.into_iter().map(|p| (1.0 - k * f) * p + f).collect())
    }

    /// The diversity reward `log q(z|s) - log p(z)`.
    pub fn unsupervised_reward(
        &self,
        state: usize,
        latent: usize,
        prior: &LatentPrior,
    ) -> Result<f64> {
        let p_prior = prior.prob(latent)?;
        if p_prior <= 0.0 {
            return Err(CoreError::Precondition(format!(
                "latent {latent} has zero prior probability"
            )));
        }
        let q = self.predict(state)?[latent];
        Ok(q.ln() - p_prior.ln())
    }

    /// Mean log-likelihood `log softmax(z|s)` of a labeled batch under the
    /// raw (unfloored) model; the ascent objective.
    pub fn batch_log_likelihood(&self, batch: &[(usize, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(CoreError::InvalidArgument("empty batch".into()));
        }
        let mut total = 0.0;
        for &(state, latent) in batch {
            self.check_state(state)?;
            let p = self.raw_softmax(state)?;
            total += p[latent].ln();
        }
        Ok(total / batch.len() as f64)
    }

    /// One gradient-ascent step on the mean log-likelihood of `batch`.
    /// Returns the pre-step mean log-likelihood.
    pub fn step(&mut self, batch: &[(usize, usize)]) -> Result<f64> {
        let before = self.batch_log_likelihood(batch)?;
        let scale = self.learning_rate / batch.len() as f64;
        // grad of log softmax_z wrt score_k is (1[k=z] - softmax_k), and each
        // example touches only its own state's column of the weight table.
        let mut grad = vec![0.0; self.weights.len()];
        for &(state, latent) in batch {
            let p = self.raw_softmax(state)?;
            for z in 0..self.n_latents {
                let indicator = if z == latent { 1.0 } else { 0.0 };
                grad[z * self.n_states + state] += indicator - p[z];
            }
        }
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w += scale * g;
        }
        Ok(before)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_predict_uniform() {
        let d = Discriminator::new(5, 3, 0.1, 0.0).unwrap();
        let p = d.predict(1).unwrap();
        for &x in &p {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_two_latents() {
        let mut d = Discriminator::new(2, 1, 0.1, 0.0).unwrap();
        d.set_weight(0, 0, 4.0f64.ln());
        d.set_weight(1, 0, 0.0);
        let p = d.predict(0).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-12);
        assert!((p[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn floor_bounds_predictions() {
        let mut d = Discriminator::new(5, 1, 0.1, 1e-8).unwrap();
        d.set_weight(0, 0, 60.0); // saturate latent 0
        let p = d.predict(0).unwrap();
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        for &x in &p {
            assert!(x >= 1e-8);
        }
        // A fully saturated prediction lands at 1 - (K-1)*floor.
        assert!((p[0] - (1.0 - 4.0 * 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn unsupervised_reward_examples() {
        let prior = LatentPrior::uniform(5).unwrap();
        // predict == prior: reward 0.
        let d = Discriminator::new(5, 1, 0.1, 0.0).unwrap();
        assert!(d.unsupervised_reward(0, 2, &prior).unwrap().abs() < 1e-12);

        // Perfect discrimination: reward ~ log 5.
        let mut sharp = Discriminator::new(5, 1, 0.1, 1e-8).unwrap();
        sharp.set_weight(3, 0, 80.0);
        let r = sharp.unsupervised_reward(0, 3, &prior).unwrap();
        assert!((r - 5.0f64.ln()).abs() < 1e-6, "r = {r}");

        // predict = 0.05 against prior 0.2: log(0.25).
        let mut quarter = Discriminator::new(5, 1, 0.1, 0.0).unwrap();
        // scores chosen so softmax gives (0.05, ...) on latent 0: set the
        // other four latents to a common score c with e^0 = 0.05 * (e^0 + 4 e^c)
        // => e^c = 19/4.
        let c = (19.0f64 / 4.0).ln();
        for z in 1..5 {
            quarter.set_weight(z, 0, c);
        }
        let p = quarter.predict(0).unwrap();
        assert!((p[0] - 0.05).abs() < 1e-12);
        let r = quarter.unsupervised_reward(0, 0, &prior).unwrap();
        assert!((r - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_example_ascent_is_monotone() {
        let mut d = Discriminator::new(3, 2, 0.5, 1e-8).unwrap();
        let batch = [(1usize, 2usize)];
        let mut last = d.batch_log_likelihood(&batch).unwrap();
        for _ in 0..200 {
            d.step(&batch).unwrap();
            let now = d.batch_log_likelihood(&batch).unwrap();
            assert!(now >= last - 1e-12, "log-lik decreased: {last} -> {now}");
            last = now;
        }
        // Prediction should be close to saturated by now.
        assert!(d.predict(1).unwrap()[2] > 0.95);
    }

    #[test]
    fn balanced_batch_keeps_uniform_fixed_point() {
        let mut d = Discriminator::new(3, 1, 0.5, 0.0).unwrap();
        let batch = [(0usize, 0usize), (0, 1), (0, 2)];
        d.step(&batch).unwrap();
        let p = d.predict(0).unwrap();
        for &x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
