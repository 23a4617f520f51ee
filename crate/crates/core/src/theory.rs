//! Exact analysis of finite MDPs: policy evaluation by linear solve or
//! backward induction, optimal policies by policy iteration, brute-force
//! policy enumeration, and the robustness-set containment checks.
//!
//! Robustness sets: for a training MDP M with optimal policy value R*, the
//! policy robustness set at slack `epsilon` holds every deterministic policy
//! whose exact value gap is at most `epsilon`; the MDP robustness set holds
//! every same-skeleton MDP M' whose own optimal policy (a) is within
//! `epsilon` of R* when run on M and (b) induces the same trajectory
//! distribution on M and M'. Both containment directions are machine-checked
//! constructively: membership implies the optimal policy sits in the policy
//! set, and every policy in the policy set is certified by a witness MDP
//! with shared dynamics and reward 1 exactly on the policy's own actions.
//! (An alternative witness rescales the dynamics by the policy-probability
//! ratio; the reward-based witness is used because it is exactly
//! representable without dividing by stochastic-policy probabilities.)

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::mdp::{FiniteMdp, PROB_TOL};
use crate::Result;

/// Tolerance used when comparing exact policy values (accumulated rounding
/// from linear solves and dot products).
pub const GAP_TOL: f64 = 1e-9;

/// A total map from state to action.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    action_of: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(action_of: Vec<usize>) -> Self {
        DeterministicPolicy { action_of }
    }

    pub fn action(&self, state: usize) -> usize {
        self.action_of[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action_of
    }

    pub fn n_states(&self) -> usize {
        self.action_of.len()
    }

    fn check_for(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.action_of.len() != mdp.n_states {
            return Err(CoreError::InvalidArgument(format!(
                "policy defined on {} states, MDP has {}",
                self.action_of.len(),
                mdp.n_states
            )));
        }
        if let Some(&a) = self.action_of.iter().find(|&&a| a >= mdp.n_actions) {
            return Err(CoreError::InvalidAction {
                action: a,
                n_actions: mdp.n_actions,
            });
        }
        Ok(())
    }
}

/// Exact expected discounted return of a stationary deterministic policy
/// from the initial distribution.
///
/// Infinite-horizon MDPs are solved linearly, `(I - gamma P_pi) v = r_pi`;
/// finite-horizon MDPs by backward induction (discount 1 allowed there).
pub fn exact_policy_value(mdp: &FiniteMdp, policy: &DeterministicPolicy) -> Result<f64> {
    let v = exact_state_values(mdp, policy)?;
    Ok(dot_initial(mdp, &v))
}

/// Per-state values of a stationary deterministic policy.
pub fn exact_state_values(mdp: &FiniteMdp, policy: &DeterministicPolicy) -> Result<Vec<f64>> {
    policy.check_for(mdp)?;
    match mdp.horizon {
        None => {
            if mdp.discount >= 1.0 {
                return Err(CoreError::SingularSystem(
                    "discount >= 1 without a horizon".into(),
                ));
            }
            let n = mdp.n_states;
            let mut a = DMatrix::<f64>::identity(n, n);
            let mut b = DVector::<f64>::zeros(n);
            for s in 0..n {
                let act = policy.action(s);
                b[s] = mdp.reward(s, act);
                for (s2, &p) in mdp.transition_row(s, act).iter().enumerate() {
                    a[(s, s2)] -= mdp.discount * p;
                }
            }
            let lu = a.lu();
            let v = lu
                .solve(&b)
                .ok_or_else(|| CoreError::SingularSystem("policy value system".into()))?;
            Ok(v.iter().cloned().collect())
        }
        Some(horizon) => {
            let mut v = vec![0.0; mdp.n_states];
            for _ in 0..horizon {
                let mut next = vec![0.0; mdp.n_states];
                for s in 0..mdp.n_states {
                    let act = policy.action(s);
                    next[s] = mdp.reward(s, act)
                        + mdp.discount * expected_over_row(mdp, s, act, &v);
                }
                v = next;
            }
            Ok(v)
        }
    }
}

fn expected_over_row(mdp: &FiniteMdp, s: usize, a: usize, v: &[f64]) -> f64 {
    mdp.transition_row(s, a)
        .iter()
        .zip(v)
        .map(|(&p, &val)| p * val)
        .sum()
}

fn dot_initial(mdp: &FiniteMdp, v: &[f64]) -> f64 {
    mdp.initial_dist()
        .iter()
        .zip(v)
        .map(|(&mu, &val)| mu * val)
        .sum()
}

/// Exact solution of an MDP: the optimal value from the initial
/// distribution, a canonical optimal policy, and tie diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub value: f64,
    /// Canonical optimal stationary policy (infinite-horizon MDPs): greedy
    /// with respect to the optimal action values, ties broken toward the
    /// lowest action index, making it the lexicographically first greedy
    /// policy.
    pub stationary: Option<DeterministicPolicy>,
    /// Optimal action values `(s, a)` for infinite-horizon MDPs.
    pub q_values: Option<Vec<f64>>,
    /// States where more than one action is optimal within [`GAP_TOL`];
    /// recorded so non-unique optima are visible rather than silently chosen.
    pub tie_states: Vec<usize>,
    /// Step-indexed optimal plan `plan[t][s]` for finite-horizon MDPs.
    pub plan: Option<Vec<Vec<usize>>>,
}

impl OptimalSolution {
    /// The canonical optimal policy, stationary or step-indexed.
    pub fn stationary_policy(&self) -> Option<&DeterministicPolicy> {
        self.stationary.as_ref()
    }
}

/// Solve an MDP exactly: policy iteration (infinite horizon) or backward
/// induction (finite horizon).
pub fn optimal_value(mdp: &FiniteMdp) -> Result<OptimalSolution> {
    match mdp.horizon {
        None => optimal_by_policy_iteration(mdp),
        Some(h) => optimal_by_backward_induction(mdp, h),
    }
}

fn optimal_by_policy_iteration(mdp: &FiniteMdp) -> Result<OptimalSolution> {
    let n = mdp.n_states;
    let mut policy = DeterministicPolicy::new(vec![0; n]);
    // Howard policy iteration terminates in finitely many steps; the bound
    // here only guards against float-induced dithering.
    for _ in 0..10_000 {
        let v = exact_state_values(mdp, &policy)?;
        let mut improved = false;
        let mut next_actions = policy.action_of.clone();
        for s in 0..n {
            let current_q = mdp.reward(s, policy.action(s))
                + mdp.discount * expected_over_row(mdp, s, policy.action(s), &v);
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q = mdp.reward(s, a) + mdp.discount * expected_over_row(mdp, s, a, &v);
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            // Switch only on a real improvement; GAP_TOL keeps float noise
            // from dithering between equivalent actions forever.
            if best_a != policy.action(s) && best_q > current_q + GAP_TOL {
                next_actions[s] = best_a;
                improved = true;
            }
        }
        if !improved {
            // Converged: extract canonical greedy policy and diagnostics.
            let mut q_values = vec![0.0; n * mdp.n_actions];
            for s in 0..n {
                for a in 0..mdp.n_actions {
                    q_values[s * mdp.n_actions + a] =
                        mdp.reward(s, a) + mdp.discount * expected_over_row(mdp, s, a, &v);
                }
            }
            let mut canonical = vec![0; n];
            let mut tie_states = Vec::new();
            for s in 0..n {
                let row = &q_values[s * mdp.n_actions..(s + 1) * mdp.n_actions];
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let optimal: Vec<usize> = (0..mdp.n_actions)
                    .filter(|&a| best - row[a] <= GAP_TOL)
                    .collect();
                canonical[s] = optimal[0];
                if optimal.len() > 1 {
                    tie_states.push(s);
                }
            }
            let canonical = DeterministicPolicy::new(canonical);
            let value = exact_policy_value(mdp, &canonical)?;
            return Ok(OptimalSolution {
                value,
                stationary: Some(canonical),
                q_values: Some(q_values),
                tie_states,
                plan: None,
            });
        }
        policy = DeterministicPolicy::new(next_actions);
    }
    Err(CoreError::SingularSystem(
        "policy iteration failed to settle".into(),
    ))
}

fn optimal_by_backward_induction(mdp: &FiniteMdp, horizon: usize) -> Result<OptimalSolution> {
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    let mut plan: Vec<Vec<usize>> = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut next_v = vec![0.0; n];
        let mut actions = vec![0; n];
        for s in 0..n {
            let mut best_a = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q = mdp.reward(s, a) + mdp.discount * expected_over_row(mdp, s, a, &v);
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            next_v[s] = best_q;
            actions[s] = best_a;
        }
        v = next_v;
        plan.push(actions);
    }
    plan.reverse(); // plan[t] is the decision rule at step t
    Ok(OptimalSolution {
        value: dot_initial(mdp, &v),
        stationary: None,
        q_values: None,
        tie_states: Vec::new(),
        plan: Some(plan),
    })
}

/// Exact value of a step-indexed plan (`plan[t][s]`) on an MDP with the same
/// spaces and horizon.
pub fn evaluate_plan(mdp: &FiniteMdp, plan: &[Vec<usize>]) -> Result<f64> {
    let horizon = mdp.horizon.ok_or_else(|| {
        CoreError::InvalidArgument("plan evaluation needs a finite-horizon MDP".into())
    })?;
    if plan.len() != horizon {
        return Err(CoreError::InvalidArgument(format!(
            "plan covers {} steps, horizon is {horizon}",
            plan.len()
        )));
    }
    let mut v = vec![0.0; mdp.n_states];
    for t in (0..horizon).rev() {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            let a = plan[t][s];
            if a >= mdp.n_actions {
                return Err(CoreError::InvalidAction {
                    action: a,
                    n_actions: mdp.n_actions,
                });
            }
            next[s] = mdp.reward(s, a) + mdp.discount * expected_over_row(mdp, s, a, &v);
        }
        v = next;
    }
    Ok(dot_initial(mdp, &v))
}

/// Number of deterministic policies `|A|^|S|` if within `cap`.
pub fn policy_count(mdp: &FiniteMdp, cap: u128) -> Result<u128> {
    let mut count: u128 = 1;
    for _ in 0..mdp.n_states {
        count = count.checked_mul(mdp.n_actions as u128).unwrap_or(u128::MAX);
        if count > cap {
            return Err(CoreError::EnumerationCap { count, cap });
        }
    }
    Ok(count)
}

/// Default enumeration cap.
pub const DEFAULT_ENUMERATION_CAP: u128 = 100_000;

/// All deterministic policies in lexicographic order of their action
/// vectors (state 0 is the most significant digit).
pub fn enumerate_policies(mdp: &FiniteMdp, cap: u128) -> Result<Vec<DeterministicPolicy>> {
    let count = policy_count(mdp, cap)?;
    let mut out = Vec::with_capacity(count as usize);
    let mut actions = vec![0usize; mdp.n_states];
    loop {
        out.push(DeterministicPolicy::new(actions.clone()));
        // Odometer increment from the least significant digit (last state).
        let mut i = mdp.n_states;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            actions[i] += 1;
            if actions[i] < mdp.n_actions {
                break;
            }
            actions[i] = 0;
        }
    }
}

/// The policy robustness set: all deterministic policies within `epsilon`
/// of the optimal value, with their exact values.
#[derive(Clone, Debug)]
pub struct PolicyRobustnessSet {
    pub epsilon: f64,
    pub optimal_value: f64,
    pub members: Vec<(DeterministicPolicy, f64)>,
}

impl PolicyRobustnessSet {
    pub fn contains(&self, policy: &DeterministicPolicy) -> bool {
        self.members.iter().any(|(p, _)| p == policy)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Build the policy robustness set by exhaustive enumeration and exact
/// evaluation.
pub fn build_policy_robustness_set(
    mdp: &FiniteMdp,
    epsilon: f64,
    cap: u128,
) -> Result<PolicyRobustnessSet> {
    let optimal = optimal_value(mdp)?;
    let mut members = Vec::new();
    for policy in enumerate_policies(mdp, cap)? {
        let value = exact_policy_value(mdp, &policy)?;
        if optimal.value - value <= epsilon + GAP_TOL {
            members.push((policy, value));
        }
    }
    Ok(PolicyRobustnessSet {
        epsilon,
        optimal_value: optimal.value,
        members,
    })
}

/// States reachable from the initial distribution when following `policy`
/// under the MDP's dynamics.
pub fn reachable_states(mdp: &FiniteMdp, policy: &DeterministicPolicy) -> Vec<usize> {
    let mut seen = vec![false; mdp.n_states];
    let mut stack: Vec<usize> = (0..mdp.n_states)
        .filter(|&s| mdp.initial_dist()[s] > 0.0)
        .collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        let a = policy.action(s);
        for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
            if p > 0.0 && !seen[s2] {
                seen[s2] = true;
                stack.push(s2);
            }
        }
    }
    (0..mdp.n_states).filter(|&s| seen[s]).collect()
}

/// Evidence returned by the MDP robustness-set membership check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MembershipEvidence {
    pub is_member: bool,
    /// Near-optimality on the base MDP: `R_base(opt_base) - R_base(opt_candidate) <= epsilon`.
    pub condition_near_optimal: bool,
    /// Trajectory-distribution equality of the candidate's optimal policy
    /// across both MDPs (next-state rows equal on every reachable state).
    pub condition_same_trajectories: bool,
    pub candidate_optimal: DeterministicPolicy,
    pub gap_on_base: f64,
    pub base_optimal_value: f64,
    /// States where the dynamics rows differ under the candidate's optimal
    /// policy (named evidence for condition-2 failures).
    pub mismatched_states: Vec<usize>,
    /// States where the candidate's optimal action is tied within tolerance;
    /// the verdict is reported under the recorded lowest-index tie-break.
    pub tie_states: Vec<usize>,
    /// Verdicts under alternate optimal-action choices at tied states, when
    /// they disagree with the canonical verdict.
    pub alternate_verdicts: Vec<AlternateVerdict>,
}

/// A tie-break alternative that changes the membership verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlternateVerdict {
    pub policy: DeterministicPolicy,
    pub is_member: bool,
}

/// Decide whether `candidate` belongs to the MDP robustness set of `base` at
/// slack `epsilon`.
///
/// Preconditions: both MDPs share states, actions, discount, horizon and
/// initial distribution; only infinite-horizon discounted MDPs are accepted
/// (the optimal policy must be stationary for the trajectory condition to be
/// well-posed over enumeration).
pub fn check_mdp_membership(
    base: &FiniteMdp,
    candidate: &FiniteMdp,
    epsilon: f64,
) -> Result<MembershipEvidence> {
    if !base.same_skeleton(candidate) {
        return Err(CoreError::InvalidArgument(
            "base and candidate MDPs have mismatched spaces".into(),
        ));
    }
    if base.horizon.is_some() {
        return Err(CoreError::Unsupported(
            "membership checks require infinite-horizon discounted MDPs".into(),
        ));
    }
    let base_opt = optimal_value(base)?;
    let cand_opt = optimal_value(candidate)?;
    let cand_policy = cand_opt
        .stationary
        .clone()
        .expect("infinite-horizon solutions are stationary");

    let verdict_for = |policy: &DeterministicPolicy| -> Result<(bool, bool, f64, Vec<usize>)> {
        let value_on_base = exact_policy_value(base, policy)?;
        let gap = base_opt.value - value_on_base;
        let condition1 = gap <= epsilon + GAP_TOL;
        let mut mismatched = Vec::new();
        for s in reachable_states(candidate, policy) {
            let a = policy.action(s);
            let differ = base
                .transition_row(s, a)
                .iter()
                .zip(candidate.transition_row(s, a))
                .any(|(&p, &q)| (p - q).abs() > PROB_TOL);
            if differ {
                mismatched.push(s);
            }
        }
        let condition2 = mismatched.is_empty();
        Ok((condition1, condition2, gap, mismatched))
    };

    let (condition1, condition2, gap, mismatched) = verdict_for(&cand_policy)?;
    let is_member = condition1 && condition2;

    // Where the candidate's optimum is non-unique, report alternates whose
    // verdict differs from the canonical one.
    let mut alternate_verdicts = Vec::new();
    if !cand_opt.tie_states.is_empty() {
        let q = cand_opt.q_values.as_ref().expect("q values present");
        for &s in &cand_opt.tie_states {
            let row = &q[s * candidate.n_actions..(s + 1) * candidate.n_actions];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for a in 0..candidate.n_actions {
                if best - row[a] <= GAP_TOL && a != cand_policy.action(s) {
                    let mut alt_actions = cand_policy.actions().to_vec();
                    alt_actions[s] = a;
                    let alt = DeterministicPolicy::new(alt_actions);
                    let (c1, c2, _, _) = verdict_for(&alt)?;
                    if (c1 && c2) != is_member {
                        alternate_verdicts.push(AlternateVerdict {
                            policy: alt,
                            is_member: c1 && c2,
                        });
                    }
                }
            }
        }
    }

    Ok(MembershipEvidence {
        is_member,
        condition_near_optimal: condition1,
        condition_same_trajectories: condition2,
        candidate_optimal: cand_policy,
        gap_on_base: gap,
        base_optimal_value: base_opt.value,
        mismatched_states: mismatched,
        tie_states: cand_opt.tie_states,
        alternate_verdicts,
    })
}

/// A violation of the first containment: a member MDP whose optimal policy
/// falls outside the policy robustness set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainmentViolation {
    pub candidate_index: usize,
    pub policy: DeterministicPolicy,
    pub gap_on_base: f64,
    pub epsilon: f64,
    pub detail: String,
}

/// Check, for every member M' of the MDP robustness set, that its optimal
/// policy lies in the policy robustness set. Returns the violations
/// (expected empty: the containment is a theorem; this is the machine check).
pub fn verify_proposition_1(
    base: &FiniteMdp,
    epsilon: f64,
    members: &[FiniteMdp],
    cap: u128,
) -> Result<Vec<ContainmentViolation>> {
    let policy_set = build_policy_robustness_set(base, epsilon, cap)?;
    let mut violations = Vec::new();
    for (i, candidate) in members.iter().enumerate() {
        let opt = optimal_value(candidate)?;
        let policy = opt
            .stationary
            .expect("infinite-horizon solutions are stationary");
        let gap = policy_set.optimal_value - exact_policy_value(base, &policy)?;
        if !policy_set.contains(&policy) {
            violations.push(ContainmentViolation {
                candidate_index: i,
                policy,
                gap_on_base: gap,
                epsilon,
                detail: "optimal policy of member MDP not in policy robustness set".into(),
            });
        }
    }
    Ok(violations)
}

/// Construct the witness MDP certifying the second containment for `policy`:
/// identical dynamics and initial distribution, reward 1 exactly on the
/// policy's own action at every state. The policy is the unique optimal
/// policy of the witness, and the witness is a member of the MDP robustness
/// set whenever `policy` lies in the policy robustness set.
pub fn construct_witness_mdp(
    base: &FiniteMdp,
    policy: &DeterministicPolicy,
    epsilon: f64,
) -> Result<FiniteMdp> {
    policy.check_for(base)?;
    let base_opt = optimal_value(base)?;
    let gap = base_opt.value - exact_policy_value(base, policy)?;
    if gap > epsilon + GAP_TOL {
        return Err(CoreError::Precondition(format!(
            "policy gap {gap:.6} exceeds epsilon {epsilon:.6}: not in the policy robustness set"
        )));
    }
    let mut reward = vec![0.0; base.n_states * base.n_actions];
    for s in 0..base.n_states {
        reward[s * base.n_actions + policy.action(s)] = 1.0;
    }
    base.with_reward(reward)
}

/// A violation of the second containment: a witness that fails membership or
/// whose optimum is not the intended policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessViolation {
    pub policy: DeterministicPolicy,
    pub detail: String,
}

/// For every policy in the policy robustness set, construct the witness MDP
/// and check both that the witness is a member of the MDP robustness set and
/// that the policy is its optimum. Returns violations (expected empty).
pub fn verify_proposition_2(
    base: &FiniteMdp,
    epsilon: f64,
    cap: u128,
) -> Result<Vec<WitnessViolation>> {
    let set = build_policy_robustness_set(base, epsilon, cap)?;
    let mut violations = Vec::new();
    for (policy, _) in &set.members {
        let witness = construct_witness_mdp(base, policy, epsilon)?;
        let evidence = check_mdp_membership(base, &witness, epsilon)?;
        if !evidence.is_member {
            violations.push(WitnessViolation {
                policy: policy.clone(),
                detail: format!(
                    "witness not a member (near_optimal={}, same_trajectories={})",
                    evidence.condition_near_optimal, evidence.condition_same_trajectories
                ),
            });
            continue;
        }
        // The witness's optimum must be the given policy on every state it
        // can actually visit; elsewhere any action-value tie is impossible
        // by construction, so require exact equality.
        if evidence.candidate_optimal != *policy {
            violations.push(WitnessViolation {
                policy: policy.clone(),
                detail: "witness optimum differs from the certified policy".into(),
            });
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::builders;

    fn single_state_mdp(reward: f64, discount: f64) -> FiniteMdp {
        FiniteMdp::new(1, 1, vec![1.0], vec![reward], discount, vec![1.0], None).unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state_mdp(1.0, 0.5);
        let v = exact_policy_value(&mdp, &DeterministicPolicy::new(vec![0])).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_value_zero() {
        let mdp = single_state_mdp(0.0, 0.9);
        let v = exact_policy_value(&mdp, &DeterministicPolicy::new(vec![0])).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn enumeration_counts() {
        let mdp = builders::deterministic(
            &[vec![0, 1, 0], vec![1, 0, 1]],
            &[vec![0.0; 3], vec![0.0; 3]],
            0.9,
            0,
            None,
        )
        .unwrap();
        let policies = enumerate_policies(&mdp, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(policies.len(), 9);
        // Lexicographic order: first policy all zeros, last all max.
        assert_eq!(policies[0].actions(), &[0, 0]);
        assert_eq!(policies[8].actions(), &[2, 2]);

        let tiny = single_state_mdp(0.0, 0.5);
        assert_eq!(enumerate_policies(&tiny, 10).unwrap().len(), 1);
    }

    #[test]
    fn enumeration_cap_enforced() {
        let mdp = builders::deterministic(
            &[vec![0, 1], vec![1, 0]],
            &[vec![0.0; 2], vec![0.0; 2]],
            0.9,
            0,
            None,
        )
        .unwrap();
        match enumerate_policies(&mdp, 3) {
            Err(CoreError::EnumerationCap { count, cap }) => {
                assert_eq!(count, 4);
                assert_eq!(cap, 3);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn policy_iteration_matches_enumeration() {
        // Cross-oracle agreement on a fixed 3-state MDP.
        let mdp = builders::deterministic(
            &[vec![1, 2], vec![0, 2], vec![2, 2]],
            &[vec![0.0, 0.2], vec![1.0, -0.5], vec![0.3, 0.0]],
            0.9,
            0,
            None,
        )
        .unwrap();
        let opt = optimal_value(&mdp).unwrap();
        let policies = enumerate_policies(&mdp, DEFAULT_ENUMERATION_CAP).unwrap();
        let best = policies
            .iter()
            .map(|p| exact_policy_value(&mdp, p).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((opt.value - best).abs() < 1e-9);
        let canonical = opt.stationary.unwrap();
        assert!(policies.contains(&canonical));
        assert!(
            (exact_policy_value(&mdp, &canonical).unwrap() - best).abs() < 1e-9,
            "canonical policy attains the enumerated maximum"
        );
    }

    #[test]
    fn robustness_set_sizes() {
        // s0: action 0 loops with reward 1 (optimal), action 1 moves to s1
        // with reward 0; s1 loops with reward 0.9 under either action.
        let mdp = builders::deterministic(
            &[vec![0, 1], vec![1, 1]],
            &[vec![1.0, 0.0], vec![0.9, 0.9]],
            0.5,
            0,
            None,
        )
        .unwrap();
        let zero = build_policy_robustness_set(&mdp, 0.0, 1000).unwrap();
        // Unique optimum at s0 (action 0), but s1 is unreachable and both
        // actions there give the same value, so two policies tie exactly.
        assert_eq!(zero.len(), 2);
        let all = build_policy_robustness_set(&mdp, f64::INFINITY, 1000).unwrap();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn unique_optimum_gives_singleton_zero_set() {
        // Every policy has a distinct value and visits every state it needs.
        let mdp = builders::deterministic(
            &[vec![1, 1], vec![1, 1]],
            &[vec![0.0, -1.0], vec![1.0, 0.0]],
            0.9,
            0,
            None,
        )
        .unwrap();
        let set = build_policy_robustness_set(&mdp, 0.0, 1000).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.members[0].0.actions(), &[0, 0]);
    }

    #[test]
    fn two_equal_paths_both_in_zero_set() {
        // 3x3 open grid, start corner to opposite corner: discounted
        // infinite-horizon version where both monotone paths are optimal.
        let gw = crate::gridworld::GridWorld::new(
            2,
            2,
            (0, 0),
            (1, 1),
            -1.0,
            0.0,
            Default::default(),
            20,
        )
        .unwrap();
        let lowered = gw.to_finite_mdp().unwrap();
        // Strip the horizon and discount it so the set is well-defined.
        let mdp = FiniteMdp::new(
            lowered.n_states,
            lowered.n_actions,
            lowered.transition_tensor().to_vec(),
            lowered.reward_table().to_vec(),
            0.9,
            lowered.initial_dist().to_vec(),
            None,
        )
        .unwrap();
        let set = build_policy_robustness_set(&mdp, 0.0, DEFAULT_ENUMERATION_CAP).unwrap();
        // Both routes (up-then-right, right-then-up) must appear.
        let up_first = set.members.iter().any(|(p, _)| {
            p.action(gw.cell_id((0, 0))) == crate::gridworld::ACTION_UP
        });
        let right_first = set.members.iter().any(|(p, _)| {
            p.action(gw.cell_id((0, 0))) == crate::gridworld::ACTION_RIGHT
        });
        assert!(up_first && right_first, "both equal-length paths present");
    }

    #[test]
    fn membership_self_and_reward_only() {
        let mdp = builders::deterministic(
            &[vec![1, 0], vec![0, 1]],
            &[vec![0.5, 0.1], vec![0.2, 0.9]],
            0.8,
            0,
            None,
        )
        .unwrap();
        let self_evidence = check_mdp_membership(&mdp, &mdp, 0.0).unwrap();
        assert!(self_evidence.is_member, "an MDP is a member of its own set");

        // Small reward-only modification: dynamics untouched so the
        // trajectory condition holds automatically.
        let mut reward = mdp.reward_table().to_vec();
        for r in reward.iter_mut() {
            *r += 0.01;
        }
        let candidate = mdp.with_reward(reward).unwrap();
        let evidence = check_mdp_membership(&mdp, &candidate, 1.0).unwrap();
        assert!(evidence.condition_same_trajectories);
        assert!(evidence.is_member);
    }

    #[test]
    fn membership_names_dynamics_mismatch() {
        let mdp = builders::deterministic(
            &[vec![1, 0], vec![0, 1]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            0.8,
            0,
            None,
        )
        .unwrap();
        // Alter the dynamics at a state the candidate's optimum visits.
        let opt = optimal_value(&mdp).unwrap().stationary.unwrap();
        let visited = reachable_states(&mdp, &opt);
        let s = visited[0];
        let a = opt.action(s);
        let mut transition = mdp.transition_tensor().to_vec();
        let row = (s * mdp.n_actions + a) * mdp.n_states;
        // Swap the row's mass between the two states.
        transition[row] = 1.0 - transition[row];
        transition[row + 1] = 1.0 - transition[row + 1];
        let candidate = mdp.with_transition(transition).unwrap();
        let evidence = check_mdp_membership(&mdp, &candidate, 10.0).unwrap();
        if !evidence.condition_same_trajectories {
            assert!(!evidence.mismatched_states.is_empty(), "evidence names a state");
            assert!(!evidence.is_member);
        }
    }

    #[test]
    fn witness_accepts_optimal_policy_at_zero_epsilon() {
        let mdp = builders::deterministic(
            &[vec![1, 0], vec![0, 1]],
            &[vec![0.5, 0.1], vec![0.2, 0.9]],
            0.8,
            0,
            None,
        )
        .unwrap();
        let opt = optimal_value(&mdp).unwrap().stationary.unwrap();
        let witness = construct_witness_mdp(&mdp, &opt, 0.0).unwrap();
        let evidence = check_mdp_membership(&mdp, &witness, 0.0).unwrap();
        assert!(evidence.is_member);
        assert_eq!(evidence.candidate_optimal, opt);
    }

    #[test]
    fn witness_rejects_policy_outside_set() {
        // Make action 1 at s0 clearly suboptimal.
        let mdp = builders::deterministic(
            &[vec![0, 1], vec![1, 1]],
            &[vec![1.0, 0.0], vec![0.0, 0.0]],
            0.5,
            0,
            None,
        )
        .unwrap();
        let bad = DeterministicPolicy::new(vec![1, 0]);
        match construct_witness_mdp(&mdp, &bad, 0.1) {
            Err(CoreError::Precondition(_)) => {}
            other => panic!("expected precondition violation, got {other:?}"),
        }
    }

    #[test]
    fn plan_evaluation_matches_stationary_on_fixed_policy() {
        let gw = crate::gridworld::two_corridor_grid(30);
        let mdp = gw.to_finite_mdp().unwrap();
        let opt = optimal_value(&mdp).unwrap();
        assert_eq!(opt.value, -7.0);
        let plan = opt.plan.unwrap();
        let replay = evaluate_plan(&mdp, &plan).unwrap();
        assert_eq!(replay, -7.0);
    }

    #[test]
    fn finite_horizon_dp_matches_linear_solve_at_long_horizon() {
        // Discounted value approximated by a long finite horizon.
        let mdp = builders::deterministic(
            &[vec![1, 0], vec![0, 1]],
            &[vec![0.5, 0.1], vec![0.2, 0.9]],
            0.95,
            0,
            None,
        )
        .unwrap();
        let policy = DeterministicPolicy::new(vec![0, 1]);
        let exact = exact_policy_value(&mdp, &policy).unwrap();
        let horizoned = FiniteMdp::new(
            mdp.n_states,
            mdp.n_actions,
            mdp.transition_tensor().to_vec(),
            mdp.reward_table().to_vec(),
            mdp.discount,
            mdp.initial_dist().to_vec(),
            Some(1000),
        )
        .unwrap();
        let truncated = exact_policy_value(&horizoned, &policy).unwrap();
        assert!(
            (exact - truncated).abs() < 1e-6,
            "residual {}",
            (exact - truncated).abs()
        );
    }
}
