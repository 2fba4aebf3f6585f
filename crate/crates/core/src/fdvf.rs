//! Constructors for future-dependent value functions and effective history
//! weights, with residual verifiers.
//!
//! A future-dependent value function at step `h` is any solution of the
//! underdetermined linear system `M_F,h V_h = V_S,h` where `M_F,h` is the
//! outcome matrix and `V_S,h` the latent value vector of the evaluation
//! policy. Four explicit solutions are built here: cumulative importance
//! weighting of the reward-to-go, the pseudo-inverse (minimum plain 2-norm)
//! solution, the minimum `Z`-weighted-norm solution, and the reward-weighted
//! variant that swaps `Z(f)` for `Z(f)/R^+(f)`. A fifth generalizes the
//! weighted solution to an arbitrary positive latent prior.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exact::{Scenario, StepAlgebra};
use crate::index::{decode_future, FutureIndex, SpaceDims};
use crate::linalg::{pseudo_solve_psd, solve_spd};
use crate::pomdp::TabularPomdp;
use crate::stepfn::{FutureWeighting, HistoryFunction, StepFunction, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Construction {
    ImportanceSampling,
    PseudoInverse,
    WeightedL2,
    RewardWeighted,
    PriorWeighted,
}

impl Construction {
    pub fn label(&self) -> &'static str {
        match self {
            Construction::ImportanceSampling => "is",
            Construction::PseudoInverse => "pinv",
            Construction::WeightedL2 => "l2_weighted",
            Construction::RewardWeighted => "reward_weighted",
            Construction::PriorWeighted => "prior_weighted",
        }
    }
}

/// One constructed solution together with its parameters and norms.
#[derive(Debug, Clone)]
pub struct FdvfSolution {
    pub construction: Construction,
    pub value: ValueFunction,
    /// Per-step parameter vector for the feature-linear constructions.
    pub theta: Option<Vec<DVector<f64>>>,
    pub per_step_sup: Vec<f64>,
    pub per_step_z_norm: Vec<f64>,
    pub sup_norm: f64,
}

/// Effective history weights: belief-linear functions whose behavior-weighted
/// belief average matches the evaluation policy's mean belief.
#[derive(Debug, Clone)]
pub struct HistoryWeights {
    pub weights: HistoryFunction,
    pub theta: Vec<DVector<f64>>,
    pub per_step_sup: Vec<f64>,
    pub per_step_behavior_l2: Vec<f64>,
    pub sup_norm: f64,
}

/// Weighted covariance of outcome columns: `sum_f u(f) u(f)^T / Z(f)`,
/// skipping unreachable futures (`Z(f) = 0`).
pub fn sigma_f(alg: &StepAlgebra) -> DMatrix<f64> {
    accumulate_outcome_gram(alg, |f| {
        if alg.z[f] > 0.0 {
            Some(1.0 / alg.z[f])
        } else {
            None
        }
    })
}

/// Reward-weighted covariance: `sum_f u(f) u(f)^T R^+(f) / Z(f)`.
pub fn sigma_f_r(alg: &StepAlgebra) -> DMatrix<f64> {
    accumulate_outcome_gram(alg, |f| {
        if alg.z[f] > 0.0 {
            Some(alg.reward_to_go[f] / alg.z[f])
        } else {
            None
        }
    })
}

/// Plain Gram matrix `M_F,h M_F,h^T`.
pub fn outcome_gram(alg: &StepAlgebra) -> DMatrix<f64> {
    accumulate_outcome_gram(alg, |_| Some(1.0))
}

fn accumulate_outcome_gram<W: Fn(usize) -> Option<f64>>(alg: &StepAlgebra, weight: W) -> DMatrix<f64> {
    let s_count = alg.outcomes.nrows();
    let mut gram = DMatrix::zeros(s_count, s_count);
    for f in 0..alg.future_count() {
        let Some(w) = weight(f) else { continue };
        let col = alg.outcomes.column(f);
        for i in 0..s_count {
            let wi = w * col[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..s_count {
                gram[(i, j)] += wi * col[j];
            }
        }
    }
    gram
}

/// Behavior-weighted belief covariance `sum_tau d^{pi_b}(tau) b(tau) b(tau)^T`.
pub fn sigma_h(alg: &StepAlgebra) -> DMatrix<f64> {
    let s_count = alg.beliefs.nrows();
    let mut gram = DMatrix::zeros(s_count, s_count);
    for tau in 0..alg.history_count() {
        let d = alg.behavior_history_marginal[tau];
        if d == 0.0 {
            continue;
        }
        let col = alg.beliefs.column(tau);
        for i in 0..s_count {
            let wi = d * col[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..s_count {
                gram[(i, j)] += wi * col[j];
            }
        }
    }
    gram
}

/// Cumulative reward of a future, summed symbol by symbol from the decoded
/// pair sequence.
pub fn reward_to_go(model: &TabularPomdp, index: FutureIndex) -> f64 {
    let dims = SpaceDims::of(model);
    decode_future(&dims, index)
        .iter()
        .enumerate()
        .map(|(k, &(o, a))| model.reward_at(index.step + k, o, a))
        .sum()
}

fn finish_solution(
    scn: &Scenario,
    construction: Construction,
    steps: Vec<StepFunction>,
    theta: Option<Vec<DVector<f64>>>,
) -> FdvfSolution {
    let value = ValueFunction { steps };
    let per_step_sup = value.per_step_sup(&scn.algebras);
    let per_step_z_norm = value.per_step_z_norm(&scn.algebras);
    let sup_norm = per_step_sup.iter().copied().fold(0.0, f64::max);
    FdvfSolution {
        construction,
        value,
        theta,
        per_step_sup,
        per_step_z_norm,
        sup_norm,
    }
}

/// Cumulative-importance-weighted reward-to-go:
/// `V(f_h) = R^+(f_h) * prod_{h' >= h} mu(o_{h'}, a_{h'})`.
pub fn construct_is_fdvf(scn: &Scenario) -> Result<FdvfSolution> {
    let horizon = scn.horizon();
    let dims = scn.dims();
    // mu products per future, built backward like the reward-to-go tables.
    let mut tables: Vec<Vec<f64>> = vec![Vec::new(); horizon + 1];
    for h in (1..=horizon).rev() {
        let tail_len = if h == horizon {
            1
        } else {
            dims.future_count(h + 1) as usize
        };
        let mut t = vec![0.0; dims.future_count(h) as usize];
        for o in 0..scn.model.obs_count {
            for a in 0..scn.model.action_count {
                let mu = crate::pomdp::action_ratio(&scn.pi_e, &scn.pi_b, h, o, a)?;
                let offset = (o * scn.model.action_count + a) * tail_len;
                if h == horizon {
                    t[offset] = mu;
                } else {
                    for j in 0..tail_len {
                        t[offset + j] = mu * tables[h + 1][j];
                    }
                }
            }
        }
        tables[h] = t;
    }
    let steps = (1..=horizon)
        .map(|h| {
            let alg = scn.algebra(h);
            let dense: Vec<f64> = tables[h]
                .iter()
                .enumerate()
                .map(|(f, &mu_prod)| mu_prod * alg.reward_to_go[f])
                .collect();
            StepFunction::Dense(dense)
        })
        .collect();
    Ok(finish_solution(scn, Construction::ImportanceSampling, steps, None))
}

/// Minimum plain-2-norm solution `V_h = M^T (M M^T)^{-1} V_S,h`.
pub fn construct_pinv_fdvf(scn: &Scenario) -> Result<FdvfSolution> {
    let mut steps = Vec::with_capacity(scn.horizon());
    let mut thetas = Vec::with_capacity(scn.horizon());
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let gram = outcome_gram(alg);
        let rhs = DVector::from_column_slice(&scn.v_s_e[h - 1]);
        let theta = solve_spd(&gram, &rhs, "outcome_gram", h).map_err(|e| match e {
            Error::IllConditioned { matrix, step, sigma_min } => Error::IllConditioned {
                matrix,
                step,
                // Report the singular value of the wide matrix itself.
                sigma_min: sigma_min.max(0.0).sqrt(),
            },
            other => other,
        })?;
        steps.push(StepFunction::OutcomeLinear {
            theta: theta.clone(),
            weighting: FutureWeighting::Plain,
        });
        thetas.push(theta);
    }
    Ok(finish_solution(scn, Construction::PseudoInverse, steps, Some(thetas)))
}

/// Minimum `Z_h`-weighted-norm solution `V_h = Z^{-1} M^T Sigma_F^{-1} V_S,h`.
pub fn construct_l2_weighted_fdvf(scn: &Scenario) -> Result<FdvfSolution> {
    let mut steps = Vec::with_capacity(scn.horizon());
    let mut thetas = Vec::with_capacity(scn.horizon());
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let sigma = sigma_f(alg);
        let rhs = DVector::from_column_slice(&scn.v_s_e[h - 1]);
        let theta = solve_spd(&sigma, &rhs, "sigma_f", h)?;
        steps.push(StepFunction::OutcomeLinear {
            theta: theta.clone(),
            weighting: FutureWeighting::InverseZ,
        });
        thetas.push(theta);
    }
    Ok(finish_solution(scn, Construction::WeightedL2, steps, Some(thetas)))
}

/// Reward-weighted solution `V_h = (Z^R)^{-1} M^T (Sigma_F^R)^{-1} V_S,h`
/// with `Z^R(f) = Z(f) / R^+(f)`. Requires strictly positive rewards.
pub fn construct_reward_weighted_fdvf(scn: &Scenario) -> Result<FdvfSolution> {
    for (hi, slice) in scn.model.reward.iter().enumerate() {
        for row in slice {
            for &r in row {
                if r <= 0.0 {
                    return Err(Error::Positivity(format!(
                        "reward-weighted construction needs strictly positive rewards; step {} has {r}",
                        hi + 1
                    )));
                }
            }
        }
    }
    let mut steps = Vec::with_capacity(scn.horizon());
    let mut thetas = Vec::with_capacity(scn.horizon());
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let sigma = sigma_f_r(alg);
        let rhs = DVector::from_column_slice(&scn.v_s_e[h - 1]);
        let theta = solve_spd(&sigma, &rhs, "sigma_f_r", h)?;
        steps.push(StepFunction::OutcomeLinear {
            theta: theta.clone(),
            weighting: FutureWeighting::InverseZReward,
        });
        thetas.push(theta);
    }
    Ok(finish_solution(scn, Construction::RewardWeighted, steps, Some(thetas)))
}

/// Prior-weighted generalization: the minimum `Z^p`-weighted solution of the
/// prior-rescaled system, where `Z^p(f) = <p, u(f)>`. A uniform prior
/// recovers [`construct_l2_weighted_fdvf`].
pub fn construct_prior_weighted_fdvf(scn: &Scenario, priors: &[DVector<f64>]) -> Result<FdvfSolution> {
    let s_count = scn.model.state_count;
    if priors.len() != scn.horizon() {
        return Err(Error::InvalidArgument(format!(
            "need one prior per step, got {} for horizon {}",
            priors.len(),
            scn.horizon()
        )));
    }
    for (hi, p) in priors.iter().enumerate() {
        if p.len() != s_count || p.iter().any(|&x| x <= 0.0) {
            return Err(Error::Positivity(format!(
                "prior at step {} must be strictly positive over {s_count} states",
                hi + 1
            )));
        }
    }
    let mut steps = Vec::with_capacity(scn.horizon());
    let mut thetas = Vec::with_capacity(scn.horizon());
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let p = &priors[h - 1];
        // Covariance of prior-rescaled outcome columns.
        let mut sigma = DMatrix::zeros(s_count, s_count);
        let mut zp = vec![0.0; alg.future_count()];
        for f in 0..alg.future_count() {
            let col = alg.outcomes.column(f);
            let z: f64 = (0..s_count).map(|s| p[s] * col[s]).sum();
            zp[f] = z;
            if z == 0.0 {
                continue;
            }
            for i in 0..s_count {
                let wi = p[i] * col[i] / z;
                if wi == 0.0 {
                    continue;
                }
                for j in 0..s_count {
                    sigma[(i, j)] += wi * p[j] * col[j];
                }
            }
        }
        let rhs = DVector::from_fn(s_count, |s, _| p[s] * scn.v_s_e[h - 1][s]);
        let theta = solve_spd(&sigma, &rhs, "sigma_prior", h)?;
        let dense: Vec<f64> = (0..alg.future_count())
            .map(|f| {
                if zp[f] == 0.0 {
                    0.0
                } else {
                    let col = alg.outcomes.column(f);
                    let dot: f64 = (0..s_count).map(|s| p[s] * col[s] * theta[s]).sum();
                    dot / zp[f]
                }
            })
            .collect();
        steps.push(StepFunction::Dense(dense));
        thetas.push(theta);
    }
    Ok(finish_solution(scn, Construction::PriorWeighted, steps, Some(thetas)))
}

/// Belief-matching history weights `w(tau) = b(tau)^T Sigma_H^+ b^{pi_e}`.
///
/// The belief covariance is inverted on its numerical range: it is rank one
/// at the first step by construction, and padded unreachable states add null
/// directions at any step. The mean belief always lies in the range when the
/// behavior policy covers the evaluation policy, so mean matching is exact.
pub fn construct_history_weights(scn: &Scenario) -> Result<HistoryWeights> {
    let mut steps = Vec::with_capacity(scn.horizon());
    let mut thetas = Vec::with_capacity(scn.horizon());
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let sigma = sigma_h(alg);
        let rhs = DVector::from_column_slice(&alg.mean_belief);
        let theta = pseudo_solve_psd(&sigma, &rhs, "sigma_h", h)?;
        steps.push(StepFunction::BeliefLinear { theta: theta.clone() });
        thetas.push(theta);
    }
    let weights = HistoryFunction { steps };
    let per_step_behavior_l2 = weights.per_step_behavior_l2(&scn.algebras);
    let per_step_sup: Vec<f64> = weights
        .steps
        .iter()
        .zip(scn.algebras.iter())
        .map(|(func, alg)| {
            (0..alg.history_count() as u64)
                .filter(|&t| alg.history_reachable[t as usize])
                .map(|t| func.eval_history(alg, t).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let sup_norm = per_step_sup.iter().copied().fold(0.0, f64::max);
    Ok(HistoryWeights {
        weights,
        theta: thetas,
        per_step_sup,
        per_step_behavior_l2,
        sup_norm,
    })
}

/// Largest per-step defining-equation residual
/// `max_h ||M_F,h V_h - V_S,h||_inf` of any value function.
pub fn fdvf_residual(scn: &Scenario, value: &ValueFunction) -> f64 {
    let mut worst = 0.0_f64;
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let dense = value.steps[h - 1].materialize_futures(alg);
        let image = &alg.outcomes * DVector::from_column_slice(&dense);
        for s in 0..scn.model.state_count {
            worst = worst.max((image[s] - scn.v_s_e[h - 1][s]).abs());
        }
    }
    worst
}

/// Residual of a constructed solution.
pub fn verify_fdvf(scn: &Scenario, solution: &FdvfSolution) -> f64 {
    fdvf_residual(scn, &solution.value)
}

/// Largest mean-matching residual
/// `max_h ||E_{pi_b}[w(tau_h) b(tau_h)] - b_h^{pi_e}||_inf`.
pub fn weights_residual(scn: &Scenario, weights: &HistoryFunction) -> f64 {
    let mut worst = 0.0_f64;
    for h in 1..=scn.horizon() {
        let alg = scn.algebra(h);
        let mut matched = vec![0.0; scn.model.state_count];
        for tau in 0..alg.history_count() {
            let d = alg.behavior_history_marginal[tau];
            if d == 0.0 {
                continue;
            }
            let w = weights.steps[h - 1].eval_history(alg, tau as u64);
            for s in 0..scn.model.state_count {
                matched[s] += d * w * alg.beliefs[(s, tau)];
            }
        }
        for s in 0..scn.model.state_count {
            worst = worst.max((matched[s] - alg.mean_belief[s]).abs());
        }
    }
    worst
}

pub fn verify_weights(scn: &Scenario, weights: &HistoryWeights) -> f64 {
    weights_residual(scn, &weights.weights)
}

/// All four policy-pair constructions in a fixed order (the prior-weighted
/// variant is parameterized and built separately).
pub fn all_constructions(scn: &Scenario) -> Result<Vec<FdvfSolution>> {
    Ok(vec![
        construct_is_fdvf(scn)?,
        construct_pinv_fdvf(scn)?,
        construct_l2_weighted_fdvf(scn)?,
        construct_reward_weighted_fdvf(scn)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::fixtures::{bandit_fixture, onpolicy_fixture, random_fixture, reveal_fixture, FixtureParams};
    use crate::index::encode_future;
    use crate::tol::{DEFAULT_BUDGET, DERIVED_TOL};

    #[test]
    fn reward_to_go_on_bandit_futures() {
        let fx = bandit_fixture();
        let dims = SpaceDims::of(&fx.model);
        let f0 = encode_future(&dims, 1, &[(0, 0)]).unwrap();
        let f1 = encode_future(&dims, 1, &[(0, 1)]).unwrap();
        assert!((reward_to_go(&fx.model, f0) - 0.2).abs() < 1e-15);
        assert!((reward_to_go(&fx.model, f1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn reward_to_go_of_unit_rewards_counts_steps() {
        let mut fx = bandit_fixture();
        fx.model.horizon = 2;
        fx.model.transition = vec![vec![vec![vec![1.0]; 2]]];
        fx.model.emission.push(fx.model.emission[0].clone());
        fx.model.reward = vec![vec![vec![1.0, 1.0]]; 2];
        let dims = SpaceDims::of(&fx.model);
        let f = encode_future(&dims, 1, &[(0, 1), (0, 0)]).unwrap();
        assert_eq!(reward_to_go(&fx.model, f), 2.0);
        let f2 = encode_future(&dims, 2, &[(0, 0)]).unwrap();
        assert_eq!(reward_to_go(&fx.model, f2), 1.0);
    }

    #[test]
    fn reward_to_go_table_matches_decode_loop() {
        let fx = random_fixture(&FixtureParams::small(), 31).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let dims = scn.dims();
        for h in 1..=scn.horizon() {
            let alg = scn.algebra(h);
            for f in 0..alg.future_count() as u64 {
                let direct = reward_to_go(&scn.model, FutureIndex { step: h, id: f });
                assert!((direct - alg.reward_to_go[f as usize]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bandit_constructions_match_hand_values() {
        let fx = bandit_fixture();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let alg = scn.algebra(1);

        let is = construct_is_fdvf(&scn).unwrap();
        let is_dense = is.value.steps[0].materialize_futures(alg);
        assert!((is_dense[0] - 0.0).abs() < 1e-12);
        assert!((is_dense[1] - 1.6).abs() < 1e-12);

        let pinv = construct_pinv_fdvf(&scn).unwrap();
        let pinv_dense = pinv.value.steps[0].materialize_futures(alg);
        assert!((pinv_dense[0] - 0.8).abs() < 1e-12);
        assert!((pinv_dense[1] - 0.8).abs() < 1e-12);

        let l2 = construct_l2_weighted_fdvf(&scn).unwrap();
        let l2_dense = l2.value.steps[0].materialize_futures(alg);
        assert!((l2_dense[0] - 0.8).abs() < 1e-12);
        assert!((l2_dense[1] - 0.8).abs() < 1e-12);

        let rw = construct_reward_weighted_fdvf(&scn).unwrap();
        let rw_dense = rw.value.steps[0].materialize_futures(alg);
        assert!((rw_dense[0] - 0.32).abs() < 1e-12);
        assert!((rw_dense[1] - 1.28).abs() < 1e-12);
        assert!((rw.theta.as_ref().unwrap()[0][0] - 1.6).abs() < 1e-12);

        for sol in [&is, &pinv, &l2, &rw] {
            assert!(verify_fdvf(&scn, sol) < DERIVED_TOL, "{:?}", sol.construction);
        }
    }

    #[test]
    fn every_construction_satisfies_the_defining_equation() {
        for seed in 0..8 {
            let fx = random_fixture(&FixtureParams::small(), 60 + seed).unwrap();
            let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
            for sol in all_constructions(&scn).unwrap() {
                let residual = verify_fdvf(&scn, &sol);
                assert!(
                    residual < DERIVED_TOL,
                    "seed {seed} {:?}: residual {residual}",
                    sol.construction
                );
            }
        }
    }

    #[test]
    fn on_policy_is_and_reward_weighted_reduce_to_reward_to_go() {
        let fx = onpolicy_fixture(&FixtureParams::small(), 5).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let is = construct_is_fdvf(&scn).unwrap();
        let rw = construct_reward_weighted_fdvf(&scn).unwrap();
        for h in 1..=scn.horizon() {
            let alg = scn.algebra(h);
            let is_dense = is.value.steps[h - 1].materialize_futures(alg);
            let rw_dense = rw.value.steps[h - 1].materialize_futures(alg);
            for f in 0..alg.future_count() {
                if alg.z[f] == 0.0 {
                    continue;
                }
                assert!((is_dense[f] - alg.reward_to_go[f]).abs() < DERIVED_TOL);
                assert!((rw_dense[f] - alg.reward_to_go[f]).abs() < DERIVED_TOL);
            }
        }
    }

    #[test]
    fn is_sup_norm_respects_cumulative_ratio_bound() {
        let fx = random_fixture(&FixtureParams::small(), 77).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let is = construct_is_fdvf(&scn).unwrap();
        let horizon = scn.horizon() as f64;
        for (hi, sup) in is.per_step_sup.iter().enumerate() {
            let len = scn.horizon() - hi;
            let bound = horizon * scn.c_mu.powi(len as i32 + 1);
            assert!(*sup <= bound + 1e-9, "step {}: {sup} > {bound}", hi + 1);
        }
    }

    #[test]
    fn minimum_norm_properties_hold_pairwise() {
        for seed in 0..5 {
            let fx = random_fixture(&FixtureParams::small(), 90 + seed).unwrap();
            let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
            let sols = all_constructions(&scn).unwrap();
            let pinv_l2: Vec<f64> = sols[1].value.per_step_l2_norm(&scn.algebras);
            let weighted_z = &sols[2].per_step_z_norm;
            for other in &sols {
                let other_l2 = other.value.per_step_l2_norm(&scn.algebras);
                for h in 0..scn.horizon() {
                    assert!(
                        pinv_l2[h] <= other_l2[h] + 1e-9,
                        "pinv 2-norm beaten by {:?} at step {}",
                        other.construction,
                        h + 1
                    );
                    assert!(
                        weighted_z[h] <= other.per_step_z_norm[h] + 1e-9,
                        "weighted Z-norm beaten by {:?} at step {}",
                        other.construction,
                        h + 1
                    );
                }
            }
        }
    }

    #[test]
    fn uniform_prior_recovers_weighted_solution() {
        let fx = random_fixture(&FixtureParams::small(), 14).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let s = scn.model.state_count;
        let uniform: Vec<DVector<f64>> =
            (0..scn.horizon()).map(|_| DVector::from_element(s, 1.0 / s as f64)).collect();
        let prior = construct_prior_weighted_fdvf(&scn, &uniform).unwrap();
        let l2 = construct_l2_weighted_fdvf(&scn).unwrap();
        for h in 1..=scn.horizon() {
            let alg = scn.algebra(h);
            let a = prior.value.steps[h - 1].materialize_futures(alg);
            let b = l2.value.steps[h - 1].materialize_futures(alg);
            for f in 0..alg.future_count() {
                assert!((a[f] - b[f]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn occupancy_prior_still_solves_the_original_equation() {
        let fx = random_fixture(&FixtureParams::small(), 15).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let priors: Vec<DVector<f64>> = scn
            .occ_b
            .iter()
            .map(|d| DVector::from_fn(d.len(), |s, _| d[s].max(1e-6)))
            .collect();
        let sol = construct_prior_weighted_fdvf(&scn, &priors).unwrap();
        assert!(verify_fdvf(&scn, &sol) < DERIVED_TOL);
    }

    #[test]
    fn scalar_state_ignores_the_prior() {
        let fx = bandit_fixture();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let priors = vec![DVector::from_vec(vec![0.37])];
        let sol = construct_prior_weighted_fdvf(&scn, &priors).unwrap();
        let dense = sol.value.steps[0].materialize_futures(scn.algebra(1));
        assert!((dense[0] - 0.8).abs() < 1e-12);
        assert!((dense[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_entry_is_rejected() {
        let fx = bandit_fixture();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let priors = vec![DVector::from_vec(vec![0.0])];
        match construct_prior_weighted_fdvf(&scn, &priors) {
            Err(Error::Positivity(_)) => {}
            other => panic!("expected positivity error, got {other:?}"),
        }
    }

    #[test]
    fn history_weights_are_all_one_on_policy() {
        let fx = onpolicy_fixture(&FixtureParams::small(), 8).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let w = construct_history_weights(&scn).unwrap();
        for h in 1..=scn.horizon() {
            let alg = scn.algebra(h);
            for tau in 0..alg.history_count() as u64 {
                if !alg.history_reachable[tau as usize] {
                    continue;
                }
                let value = w.weights.steps[h - 1].eval_history(alg, tau);
                assert!((value - 1.0).abs() < DERIVED_TOL, "step {h} tau {tau}: {value}");
            }
        }
        assert!(verify_weights(&scn, &w) < DERIVED_TOL);
    }

    #[test]
    fn history_weight_transfer_identity_for_random_values() {
        use crate::residual::{bellman_residual_h_dense, bellman_residual_s_dense};
        use rand::{Rng, SeedableRng};
        let fx = random_fixture(&FixtureParams::small(), 23).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let weights = construct_history_weights(&scn).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let dense: Vec<Vec<f64>> = scn
                .algebras
                .iter()
                .map(|alg| (0..alg.future_count()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let hist = bellman_residual_h_dense(&scn, &dense).unwrap();
            let latent = bellman_residual_s_dense(&scn, &dense).unwrap();
            for h in 1..=scn.horizon() {
                let alg = scn.algebra(h);
                let weighted: f64 = (0..alg.history_count())
                    .map(|tau| {
                        alg.behavior_history_marginal[tau]
                            * weights.weights.steps[h - 1].eval_history(alg, tau as u64)
                            * hist[h - 1][tau]
                    })
                    .sum();
                let target: f64 = (0..scn.model.state_count)
                    .map(|s| scn.occ_e[h - 1][s] * latent[h - 1][s])
                    .sum();
                assert!((weighted - target).abs() < DERIVED_TOL, "step {h}");
            }
        }
    }

    #[test]
    fn perturbed_solution_residual_grows_linearly() {
        let fx = random_fixture(&FixtureParams::small(), 33).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let base = construct_l2_weighted_fdvf(&scn).unwrap();
        let mut residuals = Vec::new();
        for eps in [0.1, 0.2] {
            let steps: Vec<StepFunction> = base
                .theta
                .as_ref()
                .unwrap()
                .iter()
                .map(|theta| StepFunction::OutcomeLinear {
                    theta: theta.add_scalar(eps),
                    weighting: FutureWeighting::InverseZ,
                })
                .collect();
            residuals.push(fdvf_residual(&scn, &ValueFunction { steps }));
        }
        assert!(residuals[0] > 1e-6);
        assert!((residuals[1] / residuals[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_function_residual_is_value_sup() {
        let fx = random_fixture(&FixtureParams::small(), 44).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let zero = ValueFunction::zero(&scn.algebras);
        let expected = scn
            .v_s_e
            .iter()
            .flat_map(|row| row.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        assert!((fdvf_residual(&scn, &zero) - expected).abs() < 1e-12);
    }

    #[test]
    fn reveal_fixture_identity_covariance_and_bounded_solution() {
        let fx = reveal_fixture(3, 3, 14).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        for h in 1..=scn.horizon() {
            let sigma = sigma_f(scn.algebra(h));
            for i in 0..scn.model.state_count {
                for j in 0..scn.model.state_count {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((sigma[(i, j)] - expected).abs() < DERIVED_TOL, "step {h}");
                }
            }
            // Reward-weighted covariance collapses to the behavior values.
            let sigma_r = sigma_f_r(scn.algebra(h));
            for i in 0..scn.model.state_count {
                for j in 0..scn.model.state_count {
                    let expected = if i == j { scn.v_s_b[h - 1][i] } else { 0.0 };
                    assert!((sigma_r[(i, j)] - expected).abs() < DERIVED_TOL);
                }
            }
        }
        let l2 = construct_l2_weighted_fdvf(&scn).unwrap();
        assert!(l2.sup_norm <= scn.horizon() as f64 + 1e-9);
    }
}
