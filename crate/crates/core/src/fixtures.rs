//! Fixture generators: small models with machine-verified structural
//! properties, used by the verification suite, the studies, and the tests.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::Scenario;
use crate::fdvf::{sigma_f, sigma_h};
use crate::linalg::{gram_rank, pseudo_solve_psd};
use crate::pomdp::{per_step_max_ratio, validate_model, MemorylessPolicy, TabularPomdp};
use crate::tol::{DEFAULT_BUDGET, DERIVED_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Bandit,
    Random,
    OnPolicy,
    Mdp,
    Reveal,
    Uniform,
    Chain,
}

impl FixtureKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "bandit" => FixtureKind::Bandit,
            "random" => FixtureKind::Random,
            "onpolicy" => FixtureKind::OnPolicy,
            "mdp" => FixtureKind::Mdp,
            "reveal" => FixtureKind::Reveal,
            "uniform" => FixtureKind::Uniform,
            "chain" => FixtureKind::Chain,
            other => return Err(Error::InvalidArgument(format!("unknown fixture kind '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureParams {
    pub states: usize,
    pub obs: usize,
    pub actions: usize,
    pub horizon: usize,
    /// Raw rewards are mapped into `[r_min, 1]`.
    pub r_min: f64,
    /// Multiplicative deviation from uniformity allowed in the `uniform` kind.
    pub c_stoch: f64,
    pub max_attempts: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            states: 2,
            obs: 2,
            actions: 2,
            horizon: 3,
            r_min: 0.05,
            c_stoch: 1.5,
            max_attempts: 1000,
        }
    }
}

impl FixtureParams {
    pub fn small() -> Self {
        Self::default()
    }

    pub fn with_dims(states: usize, obs: usize, actions: usize, horizon: usize) -> Self {
        Self {
            states,
            obs,
            actions,
            horizon,
            ..Self::default()
        }
    }
}

/// A named evaluation problem with the properties its tags promise, verified
/// at generation time.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub model: TabularPomdp,
    pub pi_e: MemorylessPolicy,
    pub pi_b: MemorylessPolicy,
    pub tags: Vec<String>,
}

impl Fixture {
    pub fn scenario(&self, budget: u64) -> Result<Scenario> {
        Scenario::build(self.model.clone(), self.pi_e.clone(), self.pi_b.clone(), budget)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    row
}

fn random_policy(rng: &mut ChaCha8Rng, horizon: usize, obs: usize, actions: usize) -> MemorylessPolicy {
    MemorylessPolicy {
        pi: (0..horizon)
            .map(|_| (0..obs).map(|_| random_distribution(rng, actions)).collect())
            .collect(),
    }
}

fn random_model(rng: &mut ChaCha8Rng, params: &FixtureParams, point_mass_d1: bool) -> TabularPomdp {
    let (s, o, a, horizon) = (params.states, params.obs, params.actions, params.horizon);
    let d1 = if point_mass_d1 {
        let mut d = vec![0.0; s];
        d[0] = 1.0;
        d
    } else {
        random_distribution(rng, s)
    };
    TabularPomdp {
        horizon,
        state_count: s,
        obs_count: o,
        action_count: a,
        d1,
        transition: (0..horizon - 1)
            .map(|_| {
                (0..s)
                    .map(|_| (0..a).map(|_| random_distribution(rng, s)).collect())
                    .collect()
            })
            .collect(),
        emission: (0..horizon)
            .map(|_| (0..s).map(|_| random_distribution(rng, o)).collect())
            .collect(),
        reward: (0..horizon)
            .map(|_| {
                (0..o)
                    .map(|_| {
                        (0..a)
                            .map(|_| params.r_min + (1.0 - params.r_min) * rng.random::<f64>())
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Full-rank outcome matrices at every step and passing structural
/// validation. Positive future marginals are additionally required unless
/// the fixture has deterministic structure that makes some futures
/// impossible by design.
fn satisfies_rank_conditions(fx: &Fixture, require_positive_futures: bool) -> bool {
    let Ok(scn) = fx.scenario(DEFAULT_BUDGET) else {
        return false;
    };
    if !validate_model(&fx.model).map(|r| r.all_passed()).unwrap_or(false) {
        return false;
    }
    for alg in &scn.algebras {
        let gram = crate::fdvf::outcome_gram(alg);
        if gram_rank(&gram, 1e-10) != scn.model.state_count {
            return false;
        }
        if require_positive_futures && alg.future_marginal.iter().any(|&p| p <= 0.0) {
            return false;
        }
    }
    true
}

/// The two-armed single-observation fixture used throughout the tests:
/// `S = O = 1`, `A = 2`, `H = 1`, rewards `(0.2, 0.8)`, uniform behavior
/// policy, evaluation policy pinned to the second arm. Every derived value is
/// hand-checkable: `J(pi_e) = 0.8`, `J(pi_b) = 0.5`.
pub fn bandit_fixture() -> Fixture {
    Fixture {
        name: "bandit".into(),
        model: TabularPomdp {
            horizon: 1,
            state_count: 1,
            obs_count: 1,
            action_count: 2,
            d1: vec![1.0],
            transition: vec![],
            emission: vec![vec![vec![1.0]]],
            reward: vec![vec![vec![0.2, 0.8]]],
        },
        pi_e: MemorylessPolicy {
            pi: vec![vec![vec![0.0, 1.0]]],
        },
        pi_b: MemorylessPolicy {
            pi: vec![vec![vec![0.5, 0.5]]],
        },
        tags: vec!["bandit".into()],
    }
}

/// Rejection-sampled random fixture with full-support tables.
pub fn random_fixture(params: &FixtureParams, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..params.max_attempts {
        let model = random_model(&mut rng, params, false);
        let pi_e = random_policy(&mut rng, params.horizon, params.obs, params.actions);
        let pi_b = random_policy(&mut rng, params.horizon, params.obs, params.actions);
        let fx = Fixture {
            name: format!("random-{seed}"),
            model,
            pi_e,
            pi_b,
            tags: vec!["random".into()],
        };
        if satisfies_rank_conditions(&fx, true) {
            let _ = attempt;
            return Ok(fx);
        }
    }
    Err(Error::Generation {
        attempts: params.max_attempts,
        reason: "random model never passed the rank/positivity checks".into(),
    })
}

/// Random fixture with `pi_e = pi_b` and a point-mass initial state, so the
/// belief covariance stays invertible at every step and the on-policy
/// identities can be checked in their solved form.
pub fn onpolicy_fixture(params: &FixtureParams, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..params.max_attempts {
        let model = random_model(&mut rng, params, true);
        let pi = random_policy(&mut rng, params.horizon, params.obs, params.actions);
        let fx = Fixture {
            name: format!("onpolicy-{seed}"),
            model,
            pi_e: pi.clone(),
            pi_b: pi,
            tags: vec!["onpolicy".into()],
        };
        if !satisfies_rank_conditions(&fx, true) {
            continue;
        }
        let scn = fx.scenario(DEFAULT_BUDGET)?;
        // Active-block invertibility of the belief covariance at every step.
        let invertible = scn.algebras.iter().all(|alg| {
            let sigma = sigma_h(alg);
            let active: Vec<usize> = (0..scn.model.state_count)
                .filter(|&s| alg.behavior_mean_belief[s] > 0.0)
                .collect();
            let block = sigma.select_rows(active.iter()).select_columns(active.iter());
            gram_rank(&block, 1e-10) == active.len()
        });
        if invertible {
            return Ok(fx);
        }
    }
    Err(Error::Generation {
        attempts: params.max_attempts,
        reason: "on-policy model never reached an invertible belief covariance".into(),
    })
}

/// Identity-emission fixture with deterministic dynamics (next state equals
/// the action taken), so every belief column is one-hot and the belief-side
/// coverage collapses to plain density ratios. Requires `A >= S`.
pub fn mdp_fixture(states: usize, actions: usize, horizon: usize, seed: u64) -> Result<Fixture> {
    if actions < states {
        return Err(Error::InvalidArgument(format!(
            "one-hot fixture needs A >= S, got A={actions} S={states}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FixtureParams {
        states,
        obs: states,
        actions,
        horizon,
        ..FixtureParams::default()
    };
    for _ in 0..params.max_attempts {
        let mut model = random_model(&mut rng, &params, true);
        for slice in model.emission.iter_mut() {
            for (s, row) in slice.iter_mut().enumerate() {
                row.iter_mut().for_each(|p| *p = 0.0);
                row[s] = 1.0;
            }
        }
        for slice in model.transition.iter_mut() {
            for per_state in slice.iter_mut() {
                for (a, row) in per_state.iter_mut().enumerate() {
                    row.iter_mut().for_each(|p| *p = 0.0);
                    row[a % states] = 1.0;
                }
            }
        }
        let pi_e = random_policy(&mut rng, horizon, states, actions);
        let pi_b = random_policy(&mut rng, horizon, states, actions);
        let fx = Fixture {
            name: format!("mdp-{seed}"),
            model,
            pi_e,
            pi_b,
            tags: vec!["mdp".into(), "onehot".into()],
        };
        let scn = fx.scenario(DEFAULT_BUDGET)?;
        let one_hot = scn.algebras.iter().all(|alg| {
            (0..alg.history_count()).all(|tau| {
                !alg.history_reachable[tau]
                    || alg
                        .beliefs
                        .column(tau)
                        .iter()
                        .all(|&b| b.abs() < 1e-9 || (b - 1.0).abs() < 1e-9)
            })
        });
        if one_hot && satisfies_rank_conditions(&fx, false) {
            return Ok(fx);
        }
    }
    Err(Error::Generation {
        attempts: params.max_attempts,
        reason: "one-hot fixture generation failed".into(),
    })
}

/// Fixture where the future always reveals the current latent state: the
/// latent state is frozen (identity dynamics) and the final observation has
/// disjoint per-state support, so every outcome column touches exactly one
/// state and the weighted outcome covariance is the identity.
pub fn reveal_fixture(states: usize, horizon: usize, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = FixtureParams {
        states,
        obs: states,
        actions: 2,
        horizon,
        ..FixtureParams::default()
    };
    for _ in 0..params.max_attempts {
        let mut model = random_model(&mut rng, &params, false);
        for slice in model.transition.iter_mut() {
            for (s, per_state) in slice.iter_mut().enumerate() {
                for row in per_state.iter_mut() {
                    row.iter_mut().for_each(|p| *p = 0.0);
                    row[s] = 1.0;
                }
            }
        }
        // Early emissions stay informative enough to keep beliefs varied; the
        // final emission pins the (frozen) state exactly.
        for h in 0..horizon - 1 {
            for (s, row) in model.emission[h].iter_mut().enumerate() {
                for (o, p) in row.iter_mut().enumerate() {
                    *p = 0.7 / states as f64 + if o == s { 0.3 } else { 0.0 };
                }
            }
        }
        for (s, row) in model.emission[horizon - 1].iter_mut().enumerate() {
            row.iter_mut().for_each(|p| *p = 0.0);
            row[s] = 1.0;
        }
        let pi_e = random_policy(&mut rng, horizon, states, 2);
        let pi_b = random_policy(&mut rng, horizon, states, 2);
        let fx = Fixture {
            name: format!("reveal-{seed}"),
            model,
            pi_e,
            pi_b,
            tags: vec!["reveal".into()],
        };
        let scn = fx.scenario(DEFAULT_BUDGET)?;
        let revealing = scn.algebras.iter().all(|alg| {
            let sigma = sigma_f(alg);
            (0..states).all(|i| {
                (0..states).all(|j| {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    (sigma[(i, j)] - expected).abs() < DERIVED_TOL
                })
            })
        });
        if revealing && satisfies_rank_conditions(&fx, true) {
            return Ok(fx);
        }
    }
    Err(Error::Generation {
        attempts: params.max_attempts,
        reason: "revealing-future fixture generation failed".into(),
    })
}

/// Near-uniform emissions and behavior policy: every outcome entry stays
/// within a `c_stoch` factor of the uniform distribution over futures, which
/// forces the plain singular values of the outcome matrix to decay
/// exponentially in the remaining length.
pub fn uniform_fixture(params: &FixtureParams, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = 0.04;
    for _ in 0..params.max_attempts {
        let mut model = random_model(&mut rng, params, false);
        for slice in model.emission.iter_mut() {
            for row in slice.iter_mut() {
                let mut raw: Vec<f64> = (0..params.obs)
                    .map(|_| 1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.iter_mut().for_each(|x| *x /= sum);
                row.copy_from_slice(&raw);
            }
        }
        let near_uniform_policy = |rng: &mut ChaCha8Rng| MemorylessPolicy {
            pi: (0..params.horizon)
                .map(|_| {
                    (0..params.obs)
                        .map(|_| {
                            let mut raw: Vec<f64> = (0..params.actions)
                                .map(|_| 1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0))
                                .collect();
                            let sum: f64 = raw.iter().sum();
                            raw.iter_mut().for_each(|x| *x /= sum);
                            raw
                        })
                        .collect()
                })
                .collect(),
        };
        let pi_b = near_uniform_policy(&mut rng);
        let pi_e = near_uniform_policy(&mut rng);
        let fx = Fixture {
            name: format!("uniform-{seed}"),
            model,
            pi_e,
            pi_b,
            tags: vec!["uniform".into()],
        };
        let scn = fx.scenario(DEFAULT_BUDGET)?;
        let pair_base = (params.obs * params.actions) as f64;
        let within = scn.algebras.iter().all(|alg| {
            let len = (params.horizon - alg.step + 1) as i32;
            let cap = params.c_stoch / pair_base.powi(len);
            alg.outcomes.iter().all(|&p| p <= cap)
        });
        if within && satisfies_rank_conditions(&fx, true) {
            return Ok(fx);
        }
    }
    Err(Error::Generation {
        attempts: params.max_attempts,
        reason: "near-uniform fixture exceeded the stochasticity envelope".into(),
    })
}

/// Long-horizon two-state chain: uniform behavior policy against a
/// deterministic observation-matching evaluation policy. Per-step ratios
/// reach 2, so cumulative weights reach `2^H`, while the latent occupancy
/// ratios and the belief-side coverage stay small.
pub fn chain_fixture() -> Result<Fixture> {
    let horizon = 8;
    let beta = 0.15;
    let model = TabularPomdp {
        horizon,
        state_count: 2,
        obs_count: 2,
        action_count: 2,
        d1: vec![0.5, 0.5],
        transition: (0..horizon - 1)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        vec![
                            vec![0.5 + beta, 0.5 - beta],
                            vec![0.5 - beta, 0.5 + beta],
                        ]
                    })
                    .collect()
            })
            .collect(),
        emission: (0..horizon)
            .map(|_| vec![vec![0.8, 0.2], vec![0.2, 0.8]])
            .collect(),
        reward: (0..horizon)
            .map(|h| {
                (0..2)
                    .map(|o| {
                        (0..2)
                            .map(|a| 0.1 + 0.8 * (((h + o + 2 * a) % 4) as f64) / 4.0 + 0.05)
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    let pi_b = MemorylessPolicy::uniform(horizon, 2, 2);
    let pi_e = MemorylessPolicy {
        pi: (0..horizon)
            .map(|_| vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .collect(),
    };
    let fx = Fixture {
        name: "chain".into(),
        model,
        pi_e,
        pi_b,
        tags: vec!["chain".into()],
    };
    let scn = fx.scenario(DEFAULT_BUDGET)?;
    // Cumulative weight ceiling is exactly 2^H.
    let per_step = per_step_max_ratio(&fx.pi_e, &fx.pi_b)?;
    let cumulative: f64 = per_step.iter().product();
    if (cumulative - 256.0).abs() > 1e-9 {
        return Err(Error::Generation {
            attempts: 1,
            reason: format!("cumulative weight {cumulative} != 256"),
        });
    }
    for (hi, (occ_e, occ_b)) in scn.occ_e.iter().zip(scn.occ_b.iter()).enumerate() {
        for s in 0..2 {
            let ratio = occ_e[s] / occ_b[s];
            if !(ratio.is_finite() && ratio <= 3.0) {
                return Err(Error::Generation {
                    attempts: 1,
                    reason: format!("occupancy ratio {ratio} at step {} too large", hi + 1),
                });
            }
        }
    }
    for alg in &scn.algebras {
        let sigma = sigma_h(alg);
        let rhs = DVector::from_column_slice(&alg.mean_belief);
        let x = pseudo_solve_psd(&sigma, &rhs, "sigma_h", alg.step)?;
        if x.amax() > 5.0 {
            return Err(Error::Generation {
                attempts: 1,
                reason: format!("belief coverage {} exceeds 5 at step {}", x.amax(), alg.step),
            });
        }
    }
    Ok(fx)
}

/// Dispatch by kind; `params` is ignored where a kind pins its own shape.
pub fn generate_fixture(kind: FixtureKind, params: &FixtureParams, seed: u64) -> Result<Fixture> {
    match kind {
        FixtureKind::Bandit => Ok(bandit_fixture()),
        FixtureKind::Random => random_fixture(params, seed),
        FixtureKind::OnPolicy => onpolicy_fixture(params, seed),
        FixtureKind::Mdp => mdp_fixture(params.states, params.actions.max(params.states), params.horizon, seed),
        FixtureKind::Reveal => reveal_fixture(params.states, params.horizon, seed),
        FixtureKind::Uniform => uniform_fixture(params, seed),
        FixtureKind::Chain => chain_fixture(),
    }
}

/// The fixture set the verification suite runs on by default.
pub fn default_suite() -> Result<Vec<Fixture>> {
    Ok(vec![
        bandit_fixture(),
        onpolicy_fixture(&FixtureParams::small(), 101)?,
        mdp_fixture(2, 2, 3, 102)?,
        reveal_fixture(3, 3, 103)?,
        uniform_fixture(&FixtureParams::with_dims(2, 2, 2, 3), 104)?,
        chain_fixture()?,
        random_fixture(&FixtureParams::small(), 105)?,
        // Full-rank outcome matrices need O >= S: at the last step the
        // outcome columns are scaled emission columns, so their span has
        // dimension at most O.
        random_fixture(&FixtureParams::with_dims(3, 3, 2, 3), 106)?,
    ])
}
