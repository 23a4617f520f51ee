//! Exact mutual-information audits on enumerable finite MDPs.
//!
//! For a latent-conditioned policy rolled out over a short horizon, every
//! trajectory's probability is enumerated exactly and the audit computes
//! `I(tau; z)`, the per-step `I(s_t; z)`, the state-visitation `I(S; Z)` and
//! the discriminator value `E[log q(z|s)] - E[log p(z)]`. The chain holds:
//! the discriminator value lower-bounds `I(S; Z)` (with equality when `q` is
//! the posterior), and the per-step sum lower-bounds `I(tau; z)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::CoreError;
use crate::mdp::FiniteMdp;
use crate::policy::{LatentPolicy, LatentPrior};
use crate::Result;

/// Hard cap on the number of enumerated (trajectory, latent) entries.
const ENUMERATION_BUDGET: usize = 2_000_000;

/// Exact per-latent trajectory distribution of a policy on an MDP over
/// `horizon` steps. Keys are the full state-action-state paths.
#[derive(Clone, Debug)]
pub struct TrajectoryDistribution {
    pub horizon: usize,
    pub n_latents: usize,
    /// Trajectory -> per-latent conditional probability p(tau | z).
    pub conditional: BTreeMap<Vec<usize>, Vec<f64>>,
    /// Visitation mass `m[t][s][z] = p(s_t = s, z)` for t in 1..=horizon.
    pub visitation: Vec<Vec<Vec<f64>>>,
    pub prior: Vec<f64>,
}

/// Enumerate the exact joint distribution over (trajectory, latent).
pub fn enumerate_trajectories(
    mdp: &FiniteMdp,
    policy: &LatentPolicy,
    prior: &LatentPrior,
    horizon: usize,
) -> Result<TrajectoryDistribution> {
    if horizon == 0 {
        return Err(CoreError::InvalidArgument("zero horizon".into()));
    }
    let n_latents = prior.n_latents();
    if policy.n_latents < n_latents {
        return Err(CoreError::InvalidArgument(
            "policy has fewer latents than the prior".into(),
        ));
    }
    let mut dist = TrajectoryDistribution {
        horizon,
        n_latents,
        conditional: BTreeMap::new(),
        visitation: vec![vec![vec![0.0; n_latents]; mdp.n_states]; horizon],
        prior: prior.probabilities().to_vec(),
    };
    let mut budget = ENUMERATION_BUDGET;
    for z in 0..n_latents {
        for s0 in 0..mdp.n_states {
            let mu = mdp.initial_dist()[s0];
            if mu == 0.0 {
                continue;
            }
            let mut path = vec![s0];
            extend(
                mdp, policy, z, s0, mu, horizon, &mut path, &mut dist, &mut budget,
            )?;
        }
    }
    Ok(dist)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    mdp: &FiniteMdp,
    policy: &LatentPolicy,
    z: usize,
    state: usize,
    prob: f64,
    remaining: usize,
    path: &mut Vec<usize>,
    dist: &mut TrajectoryDistribution,
    budget: &mut usize,
) -> Result<()> {
    if remaining == 0 {
        if *budget == 0 {
            return Err(CoreError::Unsupported(
                "trajectory enumeration budget exceeded".into(),
            ));
        }
        *budget -= 1;
        let entry = dist
            .conditional
            .entry(path.clone())
            .or_insert_with(|| vec![0.0; dist.n_latents]);
        entry[z] += prob;
        return Ok(());
    }
    let t = dist.horizon - remaining;
    let action_probs = policy.action_distribution(state, z)?;
    for (a, &pa) in action_probs.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (s2, &ps) in mdp.transition_row(state, a).iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            let p = prob * pa * ps;
            dist.visitation[t][s2][z] += p * dist.prior[z];
            path.push(a);
            path.push(s2);
            extend(mdp, policy, z, s2, p, remaining - 1, path, dist, budget)?;
            path.pop();
            path.pop();
        }
    }
    Ok(())
}

fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// Mutual information of a finite joint table `p[x][y]` (natural log).
pub fn mutual_information(joint: &[Vec<f64>]) -> f64 {
    let nx = joint.len();
    if nx == 0 {
        return 0.0;
    }
    let ny = joint[0].len();
    let px: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
    let mut py = vec![0.0; ny];
    for row in joint {
        for (y, &p) in row.iter().enumerate() {
            py[y] += p;
        }
    }
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    mi
}

/// Entropy of a finite distribution (natural log).
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| xlogx(p)).sum::<f64>()
}

impl TrajectoryDistribution {
    /// Joint `p(tau, z)` as rows over trajectories.
    fn trajectory_joint(&self) -> Vec<Vec<f64>> {
        self.conditional
            .values()
            .map(|cond| {
                cond.iter()
                    .zip(&self.prior)
                    .map(|(&c, &pz)| c * pz)
                    .collect()
            })
            .collect()
    }

    /// Exact `I(tau; z)`.
    pub fn trajectory_latent_mi(&self) -> f64 {
        mutual_information(&self.trajectory_joint())
    }

    /// Exact `I(s_t; z)` for t in 1..=horizon.
    pub fn per_step_mi(&self) -> Vec<f64> {
        self.visitation
            .iter()
            .map(|table| mutual_information(table))
            .collect()
    }

    /// State-visitation joint `p(s, z)` averaged over steps 1..=horizon.
    pub fn state_visitation_joint(&self) -> Vec<Vec<f64>> {
        let n_states = self.visitation[0].len();
        let mut joint = vec![vec![0.0; self.n_latents]; n_states];
        let weight = 1.0 / self.horizon as f64;
        for table in &self.visitation {
            for (s, row) in table.iter().enumerate() {
                for (z, &p) in row.iter().enumerate() {
                    joint[s][z] += weight * p;
                }
            }
        }
        joint
    }

    /// Exact `I(S; Z)` of the state-visitation joint.
    pub fn state_latent_mi(&self) -> f64 {
        mutual_information(&self.state_visitation_joint())
    }

    /// `H(z)` of the prior.
    pub fn latent_entropy(&self) -> f64 {
        entropy(&self.prior)
    }

    /// `H(tau)` of the trajectory marginal.
    pub fn trajectory_entropy(&self) -> f64 {
        let joint = self.trajectory_joint();
        let marginal: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
        entropy(&marginal)
    }

    /// `H(tau | z)`.
    pub fn trajectory_conditional_entropy(&self) -> f64 {
        let mut h = 0.0;
        for (z, &pz) in self.prior.iter().enumerate() {
            if pz == 0.0 {
                continue;
            }
            let hz: f64 = self
                .conditional
                .values()
                .map(|cond| xlogx(cond[z]))
                .sum::<f64>();
            h -= pz * hz;
        }
        h
    }

    /// Total probability mass per latent (must be 1 for each).
    pub fn mass_per_latent(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_latents];
        for cond in self.conditional.values() {
            for (z, &c) in cond.iter().enumerate() {
                mass[z] += c;
            }
        }
        mass
    }

    /// Discriminator value `E[log q(z|s)] - E[log p(z)]` under the
    /// state-visitation joint.
    pub fn discriminator_bound(&self, discriminator: &Discriminator) -> Result<f64> {
        let joint = self.state_visitation_joint();
        let mut e_log_q = 0.0;
        for (s, row) in joint.iter().enumerate() {
            if row.iter().all(|&p| p == 0.0) {
                continue;
            }
            let q = discriminator.predict(s)?;
            for (z, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    e_log_q += p * q[z].ln();
                }
            }
        }
        let e_log_prior: f64 = self.prior.iter().map(|&pz| xlogx(pz)).sum();
        Ok(e_log_q - e_log_prior)
    }

    /// Discriminator whose prediction equals the exact posterior `p(z|s)` of
    /// the state-visitation joint (uniform where a state is never visited).
    /// Realizes the equality case of the variational bound.
    pub fn posterior_discriminator(&self) -> Result<Discriminator> {
        let joint = self.state_visitation_joint();
        let n_states = joint.len();
        let mut d = Discriminator::new(self.n_latents, n_states, 0.0, 0.0)?;
        for (s, row) in joint.iter().enumerate() {
            let mass: f64 = row.iter().sum();
            if mass == 0.0 {
                continue;
            }
            for (z, &p) in row.iter().enumerate() {
                // Scores are log-posteriors; softmax recovers the posterior.
                // Zero-probability entries get a very negative score.
                let score = if p > 0.0 { (p / mass).ln() } else { -745.0 };
                d.set_weight(z, s, score);
            }
        }
        Ok(d)
    }
}

/// Everything the MI audit measures on one instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiAuditReport {
    pub horizon: usize,
    pub n_latents: usize,
    pub i_tau_z: f64,
    pub i_step_z: Vec<f64>,
    pub sum_i_step_z: f64,
    pub i_state_z: f64,
    pub discriminator_bound: f64,
    pub latent_entropy: f64,
    pub trajectory_entropy: f64,
    pub trajectory_conditional_entropy: f64,
    /// `discriminator_bound <= i_state_z + 1e-9`.
    pub discriminator_bound_holds: bool,
    /// `sum_i_step_z <= i_tau_z + 1e-9`.
    pub chain_bound_holds: bool,
}

/// Tolerance on the audited inequalities.
pub const MI_TOL: f64 = 1e-9;

/// Run the full audit: enumerate the joint exactly and evaluate both bounds.
pub fn mi_bound_audit(
    mdp: &FiniteMdp,
    policy: &LatentPolicy,
    prior: &LatentPrior,
    discriminator: &Discriminator,
    horizon: usize,
) -> Result<MiAuditReport> {
    let dist = enumerate_trajectories(mdp, policy, prior, horizon)?;
    let i_tau_z = dist.trajectory_latent_mi();
    let i_step_z = dist.per_step_mi();
    let sum_i_step_z: f64 = i_step_z.iter().sum();
    let i_state_z = dist.state_latent_mi();
    let discriminator_bound = dist.discriminator_bound(discriminator)?;
    Ok(MiAuditReport {
        horizon,
        n_latents: dist.n_latents,
        i_tau_z,
        i_step_z,
        sum_i_step_z,
        i_state_z,
        discriminator_bound,
        latent_entropy: dist.latent_entropy(),
        trajectory_entropy: dist.trajectory_entropy(),
        trajectory_conditional_entropy: dist.trajectory_conditional_entropy(),
        discriminator_bound_holds: discriminator_bound <= i_state_z + MI_TOL,
        chain_bound_holds: sum_i_step_z <= i_tau_z + MI_TOL,
    })
}
