//! Bellman residual operators on latent states and on histories, and the
//! telescoping evaluation-error identity that connects them to the policy
//! value.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exact::Scenario;
use crate::stepfn::ValueFunction;
use crate::tol::CROSS_TOL;

/// `E_{pi_b}[V(f_h) | s_h]` for every step: the outcome matrix applied to the
/// dense value table.
fn conditional_value_means(scn: &Scenario, dense: &[Vec<f64>]) -> Vec<DVector<f64>> {
    scn.algebras
        .iter()
        .zip(dense.iter())
        .map(|(alg, table)| &alg.outcomes * DVector::from_column_slice(table))
        .collect()
}

/// Residual of a candidate value function on latent states.
///
/// Computed twice, in the one-step evaluation-policy form and in the
/// importance-weighted behavior-policy form; the two are algebraically equal
/// and must agree numerically, otherwise an internal cross-check error is
/// returned. The value after the final step is identically zero.
pub fn bellman_residual_s_dense(scn: &Scenario, dense: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let horizon = scn.horizon();
    let s_count = scn.model.state_count;
    let means = conditional_value_means(scn, dense);
    let mut out = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        let mut rows = vec![0.0; s_count];
        for s in 0..s_count {
            let mut direct = 0.0;
            let mut weighted = 0.0;
            for (o, &po) in scn.model.emission_row(h, s).iter().enumerate() {
                if po == 0.0 {
                    continue;
                }
                for a in 0..scn.model.action_count {
                    let pe = scn.pi_e.prob(h, o, a);
                    let pb = scn.pi_b.prob(h, o, a);
                    if pe == 0.0 && pb == 0.0 {
                        continue;
                    }
                    let mut q = scn.model.reward_at(h, o, a);
                    if h < horizon {
                        for (s_next, &pt) in scn.model.transition_row(h, s, a).iter().enumerate() {
                            q += pt * means[h][s_next];
                        }
                    }
                    direct += po * pe * q;
                    if pb > 0.0 {
                        // mu * pb = pe, written out so the two routes really
                        // differ in floating point.
                        weighted += po * pb * (pe / pb) * q;
                    }
                }
            }
            let second = means[h - 1][s];
            let a_form = direct - second;
            let b_form = weighted - second;
            if (a_form - b_form).abs() > CROSS_TOL * (1.0 + a_form.abs()) {
                return Err(Error::CrossCheck {
                    context: format!("latent residual at step {h}, state {s}"),
                    difference: (a_form - b_form).abs(),
                });
            }
            rows[s] = a_form;
        }
        out.push(rows);
    }
    Ok(out)
}

pub fn bellman_residual_s(scn: &Scenario, value: &ValueFunction) -> Result<Vec<Vec<f64>>> {
    bellman_residual_s_dense(scn, &value.to_dense(&scn.algebras))
}

/// Residual projected onto histories: the belief-weighted image of the latent
/// residual. Unreachable histories get zero.
pub fn bellman_residual_h_dense(scn: &Scenario, dense: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let latent = bellman_residual_s_dense(scn, dense)?;
    Ok(project_latent_residual(scn, &latent))
}

/// `<b(tau), residual_h>` per history, for an already computed latent table.
pub fn project_latent_residual(scn: &Scenario, latent: &[Vec<f64>]) -> Vec<Vec<f64>> {
    scn.algebras
        .iter()
        .zip(latent.iter())
        .map(|(alg, res)| {
            let res = DVector::from_column_slice(res);
            (0..alg.history_count())
                .map(|tau| {
                    if alg.history_reachable[tau] {
                        alg.beliefs.column(tau).dot(&res)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn bellman_residual_h(scn: &Scenario, value: &ValueFunction) -> Result<Vec<Vec<f64>>> {
    bellman_residual_h_dense(scn, &value.to_dense(&scn.algebras))
}

/// Independent route for the history residual: conditional expectations over
/// enumerated futures, with the one-step evaluation-policy modification baked
/// into a modified outcome matrix. Used to verify the projected form.
pub fn bellman_residual_h_direct(scn: &Scenario, dense: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let horizon = scn.horizon();
    let s_count = scn.model.state_count;
    let dims = scn.dims();
    let mut out = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        let alg = scn.algebra(h);
        let f_count = alg.future_count();
        let tail_count = if h == horizon {
            1
        } else {
            dims.future_count(h + 1) as usize
        };
        // Modified outcome columns: first action drawn from pi_e, remainder
        // from pi_b. Entry (s, f) is the probability of f given s under that
        // mixed draw; paired with the immediate reward plus tail value.
        let mut gains = vec![0.0; f_count];
        let mut modified = nalgebra::DMatrix::zeros(s_count, f_count);
        for o in 0..scn.model.obs_count {
            for a in 0..scn.model.action_count {
                let digit = o * scn.model.action_count + a;
                for j in 0..tail_count {
                    let f = digit * tail_count + j;
                    gains[f] = scn.model.reward_at(h, o, a)
                        + if h == horizon { 0.0 } else { dense[h][j] };
                }
                for s in 0..s_count {
                    let head = scn.model.emission_row(h, s)[o] * scn.pi_e.prob(h, o, a);
                    if head == 0.0 {
                        continue;
                    }
                    if h == horizon {
                        modified[(s, digit)] = head;
                    } else {
                        let trans = scn.model.transition_row(h, s, a);
                        for j in 0..tail_count {
                            let mut cont = 0.0;
                            for (s_next, &pt) in trans.iter().enumerate() {
                                // Probability of the tail under pi_b given s_next.
                                cont += pt * tail_probability(scn, h + 1, s_next, j as u64);
                            }
                            modified[(s, digit * tail_count + j)] = head * cont;
                        }
                    }
                }
            }
        }
        let mut rows = vec![0.0; alg.history_count()];
        for tau in 0..alg.history_count() {
            if !alg.history_reachable[tau] {
                continue;
            }
            let b = alg.beliefs.column(tau);
            let mut first = 0.0;
            let mut second = 0.0;
            for f in 0..f_count {
                let p_mod: f64 = (0..s_count).map(|s| b[s] * modified[(s, f)]).sum();
                first += p_mod * gains[f];
                let p: f64 = (0..s_count).map(|s| b[s] * alg.outcomes[(s, f)]).sum();
                second += p * dense[h - 1][f];
            }
            rows[tau] = first - second;
        }
        out.push(rows);
    }
    out
}

fn tail_probability(scn: &Scenario, h: usize, s: usize, f: u64) -> f64 {
    scn.algebra(h).outcomes[(s, f as usize)]
}

/// Both sides of the telescoping identity: the left side is
/// `J(pi_e) - E_{pi_b}[V(f_1)]`, the right side the sum over steps of the
/// evaluation-policy expectation of the latent residual. They are equal for
/// every value function.
pub fn evaluation_error_identity(scn: &Scenario, value: &ValueFunction) -> Result<(f64, f64)> {
    let dense = value.to_dense(&scn.algebras);
    evaluation_error_identity_dense(scn, &dense)
}

pub fn evaluation_error_identity_dense(scn: &Scenario, dense: &[Vec<f64>]) -> Result<(f64, f64)> {
    let lhs = scn.true_value() - scn.behavior_mean_initial(&dense[0]);
    let latent = bellman_residual_s_dense(scn, dense)?;
    let rhs = latent
        .iter()
        .enumerate()
        .map(|(hi, res)| {
            res.iter()
                .zip(scn.occ_e[hi].iter())
                .map(|(r, d)| r * d)
                .sum::<f64>()
        })
        .sum();
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bandit_fixture, mdp_fixture, random_fixture, FixtureParams};
    use crate::stepfn::StepFunction;
    use crate::tol::{DEFAULT_BUDGET, DERIVED_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dense(scn: &Scenario, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        scn.algebras
            .iter()
            .map(|alg| (0..alg.future_count()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_value_residual_is_one_step_reward() {
        let fx = random_fixture(&FixtureParams::small(), 7).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let zero = ValueFunction::zero(&scn.algebras);
        let res = bellman_residual_s(&scn, &zero).unwrap();
        for h in 1..=scn.horizon() {
            for s in 0..scn.model.state_count {
                let mut expected = 0.0;
                for (o, &po) in scn.model.emission_row(h, s).iter().enumerate() {
                    for (a, &pa) in scn.pi_e.action_probs(h, o).iter().enumerate() {
                        expected += po * pa * scn.model.reward_at(h, o, a);
                    }
                }
                assert!((res[h - 1][s] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn both_routes_agree_on_random_values() {
        for seed in 0..5 {
            let fx = random_fixture(&FixtureParams::small(), 40 + seed).unwrap();
            let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
            let dense = random_dense(&scn, seed);
            // The cross-check runs inside; an Ok result is the assertion.
            bellman_residual_s_dense(&scn, &dense).unwrap();
        }
    }

    #[test]
    fn history_residual_matches_direct_route() {
        let fx = random_fixture(&FixtureParams::small(), 11).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let dense = random_dense(&scn, 5);
        let projected = bellman_residual_h_dense(&scn, &dense).unwrap();
        let direct = bellman_residual_h_direct(&scn, &dense);
        for h in 0..scn.horizon() {
            for tau in 0..projected[h].len() {
                assert!(
                    (projected[h][tau] - direct[h][tau]).abs() < 1e-10,
                    "step {} tau {}: {} vs {}",
                    h + 1,
                    tau,
                    projected[h][tau],
                    direct[h][tau]
                );
            }
        }
    }

    #[test]
    fn step_one_history_residual_is_d1_average() {
        let fx = bandit_fixture();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let dense = random_dense(&scn, 9);
        let latent = bellman_residual_s_dense(&scn, &dense).unwrap();
        let hist = bellman_residual_h_dense(&scn, &dense).unwrap();
        let expected: f64 = scn
            .model
            .d1
            .iter()
            .zip(latent[0].iter())
            .map(|(d, r)| d * r)
            .sum();
        assert!((hist[0][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn one_hot_beliefs_make_both_residuals_coincide() {
        let fx = mdp_fixture(2, 2, 3, 13).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let dense = random_dense(&scn, 3);
        let latent = bellman_residual_s_dense(&scn, &dense).unwrap();
        let hist = bellman_residual_h_dense(&scn, &dense).unwrap();
        for h in 1..=scn.horizon() {
            let alg = scn.algebra(h);
            for tau in 0..alg.history_count() {
                if !alg.history_reachable[tau] {
                    continue;
                }
                let revealed = (0..scn.model.state_count)
                    .max_by(|&a, &b| {
                        alg.beliefs[(a, tau)]
                            .partial_cmp(&alg.beliefs[(b, tau)])
                            .unwrap()
                    })
                    .unwrap();
                assert!((hist[h - 1][tau] - latent[h - 1][revealed]).abs() < DERIVED_TOL);
            }
        }
    }

    #[test]
    fn exact_solutions_have_vanishing_residuals() {
        let fx = random_fixture(&FixtureParams::small(), 19).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        for sol in crate::fdvf::all_constructions(&scn).unwrap() {
            let latent = bellman_residual_s(&scn, &sol.value).unwrap();
            for row in &latent {
                for r in row {
                    assert!(r.abs() < DERIVED_TOL, "{:?}", sol.construction);
                }
            }
            let hist = bellman_residual_h(&scn, &sol.value).unwrap();
            for row in &hist {
                for r in row {
                    assert!(r.abs() < DERIVED_TOL);
                }
            }
            let (lhs, rhs) = evaluation_error_identity(&scn, &sol.value).unwrap();
            assert!(lhs.abs() < DERIVED_TOL && rhs.abs() < DERIVED_TOL);
        }
    }

    #[test]
    fn identity_holds_for_zero_and_random_values() {
        let fx = random_fixture(&FixtureParams::small(), 21).unwrap();
        let scn = fx.scenario(DEFAULT_BUDGET).unwrap();
        let zero = ValueFunction::zero(&scn.algebras);
        let (lhs, rhs) = evaluation_error_identity(&scn, &zero).unwrap();
        assert!((lhs - scn.true_value()).abs() < 1e-12);
        assert!((lhs - rhs).abs() < DERIVED_TOL);

        for seed in 0..10 {
            let dense = random_dense(&scn, 100 + seed);
            let value = ValueFunction {
                steps: dense.into_iter().map(StepFunction::Dense).collect(),
            };
            let (lhs, rhs) = evaluation_error_identity(&scn, &value).unwrap();
            assert!((lhs - rhs).abs() < DERIVED_TOL, "seed {seed}: {lhs} vs {rhs}");
        }
    }
}
