//! Exact enumeration-based computation of all distributional objects:
//! latent occupancies and values, belief and outcome matrices per step, and
//! an independent brute-force trajectory-enumeration oracle.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::index::SpaceDims;
use crate::pomdp::{c_mu, MemorylessPolicy, TabularPomdp};

/// Fail unless `count <= budget`.
fn check_budget(count: u64, budget: u64) -> Result<()> {
    if count > budget {
        return Err(Error::BudgetExceeded {
            needed: count,
            budget,
        });
    }
    Ok(())
}

/// Latent state value function `V_S^pi[h][s]` for `h = 1..=H`, computed by
/// the backward recursion with the value after the last step pinned to zero.
pub fn latent_value(model: &TabularPomdp, pi: &MemorylessPolicy) -> Vec<Vec<f64>> {
    let (horizon, s_count) = (model.horizon, model.state_count);
    let mut values = vec![vec![0.0; s_count]; horizon + 1];
    for h in (1..=horizon).rev() {
        for s in 0..s_count {
            let mut total = 0.0;
            for (o, &po) in model.emission_row(h, s).iter().enumerate() {
                if po == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for (a, &pa) in pi.action_probs(h, o).iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let mut q = model.reward_at(h, o, a);
                    if h < horizon {
                        for (s_next, &pt) in model.transition_row(h, s, a).iter().enumerate() {
                            q += pt * values[h + 1][s_next];
                        }
                    }
                    inner += pa * q;
                }
                total += po * inner;
            }
            values[h][s] = total;
        }
    }
    values.truncate(horizon + 1);
    values.remove(0);
    values
}

/// `J(pi) = <d1, V_S^pi at h=1>`.
pub fn policy_value(model: &TabularPomdp, pi: &MemorylessPolicy) -> f64 {
    let values = latent_value(model, pi);
    model.d1.iter().zip(values[0].iter()).map(|(d, v)| d * v).sum()
}

/// Marginal latent-state occupancy `d^pi[h][s]` for `h = 1..=H`.
pub fn latent_occupancy(model: &TabularPomdp, pi: &MemorylessPolicy) -> Vec<Vec<f64>> {
    let (horizon, s_count) = (model.horizon, model.state_count);
    let mut occ = Vec::with_capacity(horizon);
    occ.push(model.d1.clone());
    for h in 1..horizon {
        let mut next = vec![0.0; s_count];
        for s in 0..s_count {
            let mass = occ[h - 1][s];
            if mass == 0.0 {
                continue;
            }
            for (o, &po) in model.emission_row(h, s).iter().enumerate() {
                if po == 0.0 {
                    continue;
                }
                for (a, &pa) in pi.action_probs(h, o).iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    let w = mass * po * pa;
                    for (s_next, &pt) in model.transition_row(h, s, a).iter().enumerate() {
                        next[s_next] += w * pt;
                    }
                }
            }
        }
        occ.push(next);
    }
    occ
}

/// Independent oracle for `J(pi)`: exact sum over every latent/observable
/// path of probability times return. Shares no code with the recursive
/// engine above.
pub fn brute_force_j(model: &TabularPomdp, pi: &MemorylessPolicy, budget: u64) -> Result<f64> {
    let dims = SpaceDims::of(model);
    let paths = dims
        .pair_base()
        .checked_pow(model.horizon as u32)
        .ok_or(Error::BudgetExceeded {
            needed: u64::MAX,
            budget,
        })?;
    check_budget(paths, budget)?;

    fn recurse(
        model: &TabularPomdp,
        pi: &MemorylessPolicy,
        h: usize,
        s: usize,
        prob: f64,
        partial_return: f64,
    ) -> f64 {
        if prob == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (o, &po) in model.emission_row(h, s).iter().enumerate() {
            for (a, &pa) in pi.action_probs(h, o).iter().enumerate() {
                let p = prob * po * pa;
                if p == 0.0 {
                    continue;
                }
                let ret = partial_return + model.reward_at(h, o, a);
                if h == model.horizon {
                    total += p * ret;
                } else {
                    for (s_next, &pt) in model.transition_row(h, s, a).iter().enumerate() {
                        total += recurse(model, pi, h + 1, s_next, p * pt, ret);
                    }
                }
            }
        }
        total
    }

    let mut value = 0.0;
    for (s, &p0) in model.d1.iter().enumerate() {
        value += recurse(model, pi, 1, s, p0, 0.0);
    }
    Ok(value)
}

/// Per-step linear-algebraic view of one `(model, pi, pi_b)` triple.
///
/// Belief columns are conditional distributions of `s_h` given the history;
/// they are policy-independent wherever the history has positive probability
/// under either policy. Histories unreachable under both policies are flagged
/// in `history_reachable` and carry an all-zero column.
#[derive(Debug, Clone)]
pub struct StepAlgebra {
    /// 1-based step.
    pub step: usize,
    /// `S x |H_h|`; column `tau` is the belief state `b(tau)`.
    pub beliefs: DMatrix<f64>,
    /// False for histories with zero probability under both policies.
    pub history_reachable: Vec<bool>,
    /// `d^pi(tau_h)` under the evaluation policy passed to the builder.
    pub history_marginal: Vec<f64>,
    /// `d^{pi_b}(tau_h)` under the behavior policy.
    pub behavior_history_marginal: Vec<f64>,
    /// `S x |F_h|`; entry `(s, f)` is `Pr_{pi_b}(f_h = f | s_h = s)`.
    pub outcomes: DMatrix<f64>,
    /// Column sums of `outcomes`.
    pub z: Vec<f64>,
    /// `Pr_{pi_b}(f_h = f)`.
    pub future_marginal: Vec<f64>,
    /// Mean belief under the evaluation policy (equals `d^pi(s_h)`).
    pub mean_belief: Vec<f64>,
    /// Mean belief under the behavior policy.
    pub behavior_mean_belief: Vec<f64>,
    /// Reward-to-go `R^+(f)` per future (model-only quantity).
    pub reward_to_go: Vec<f64>,
}

impl StepAlgebra {
    pub fn history_count(&self) -> usize {
        self.beliefs.ncols()
    }

    pub fn future_count(&self) -> usize {
        self.outcomes.ncols()
    }
}

/// Cumulative reward of the future with id `f` at step `h`, via the shared
/// backward recursion used when building all steps at once.
fn reward_to_go_tables(model: &TabularPomdp) -> Vec<Vec<f64>> {
    let dims = SpaceDims::of(model);
    let horizon = model.horizon;
    let base = dims.pair_base() as usize;
    let mut tables: Vec<Vec<f64>> = vec![Vec::new(); horizon + 1];
    tables[horizon] = {
        let mut t = vec![0.0; base];
        for o in 0..model.obs_count {
            for a in 0..model.action_count {
                t[o * model.action_count + a] = model.reward_at(horizon, o, a);
            }
        }
        t
    };
    for h in (1..horizon).rev() {
        let tail = std::mem::take(&mut tables[h + 1]);
        let mut t = vec![0.0; base * tail.len()];
        for o in 0..model.obs_count {
            for a in 0..model.action_count {
                let r = model.reward_at(h, o, a);
                let offset = (o * model.action_count + a) * tail.len();
                for (j, &rest) in tail.iter().enumerate() {
                    t[offset + j] = r + rest;
                }
            }
        }
        tables[h + 1] = tail;
        tables[h] = t;
    }
    tables.remove(0);
    tables
}

/// Builds the algebra for every step in one forward/backward sweep.
pub fn build_all_step_algebras(
    model: &TabularPomdp,
    pi: &MemorylessPolicy,
    pi_b: &MemorylessPolicy,
    budget: u64,
) -> Result<Vec<StepAlgebra>> {
    let dims = SpaceDims::of(model);
    let horizon = model.horizon;
    let s_count = model.state_count;
    for h in 1..=horizon {
        check_budget(dims.history_count(h), budget)?;
        check_budget(dims.future_count(h), budget)?;
    }

    let occ_e = latent_occupancy(model, pi);
    let occ_b = latent_occupancy(model, pi_b);
    let rtg = reward_to_go_tables(model);

    // Backward sweep: outcome matrices under pi_b.
    let mut outcomes: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); horizon + 1];
    for h in (1..=horizon).rev() {
        let f_count = dims.future_count(h) as usize;
        let mut m = DMatrix::zeros(s_count, f_count);
        let tail_count = if h == horizon {
            1
        } else {
            dims.future_count(h + 1) as usize
        };
        for o in 0..model.obs_count {
            for a in 0..model.action_count {
                let digit = o * model.action_count + a;
                for s in 0..s_count {
                    let head = model.emission_row(h, s)[o] * pi_b.prob(h, o, a);
                    if head == 0.0 {
                        for j in 0..tail_count {
                            m[(s, digit * tail_count + j)] = 0.0;
                        }
                        continue;
                    }
                    if h == horizon {
                        m[(s, digit)] = head;
                    } else {
                        let trans = model.transition_row(h, s, a);
                        let tail = &outcomes[h + 1];
                        for j in 0..tail_count {
                            let mut cont = 0.0;
                            for (s_next, &pt) in trans.iter().enumerate() {
                                cont += pt * tail[(s_next, j)];
                            }
                            m[(s, digit * tail_count + j)] = head * cont;
                        }
                    }
                }
            }
        }
        outcomes[h] = m;
    }

    // Forward sweep: policy-free joint weights gamma(tau, s) and cumulative
    // action probabilities under each policy. Action probabilities factor out
    // of the joint, so beliefs come from gamma alone.
    let mut gammas: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut cum_e: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut cum_b: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    gammas.push(DMatrix::from_fn(s_count, 1, |s, _| model.d1[s]));
    cum_e.push(vec![1.0]);
    cum_b.push(vec![1.0]);
    for h in 1..horizon {
        let prev = &gammas[h - 1];
        let prev_count = prev.ncols();
        let next_count = dims.history_count(h + 1) as usize;
        let mut gamma = DMatrix::zeros(s_count, next_count);
        let mut ce = vec![0.0; next_count];
        let mut cb = vec![0.0; next_count];
        let base = dims.pair_base() as usize;
        for tau in 0..prev_count {
            for o in 0..model.obs_count {
                for a in 0..model.action_count {
                    let col = tau * base + o * model.action_count + a;
                    ce[col] = cum_e[h - 1][tau] * pi.prob(h, o, a);
                    cb[col] = cum_b[h - 1][tau] * pi_b.prob(h, o, a);
                    for s in 0..s_count {
                        let w = prev[(s, tau)] * model.emission_row(h, s)[o];
                        if w == 0.0 {
                            continue;
                        }
                        for (s_next, &pt) in model.transition_row(h, s, a).iter().enumerate() {
                            gamma[(s_next, col)] += w * pt;
                        }
                    }
                }
            }
        }
        gammas.push(gamma);
        cum_e.push(ce);
        cum_b.push(cb);
    }

    let mut steps = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        let gamma = &gammas[h - 1];
        let h_count = gamma.ncols();
        let mut beliefs = DMatrix::zeros(s_count, h_count);
        let mut reachable = vec![false; h_count];
        let mut marg_e = vec![0.0; h_count];
        let mut marg_b = vec![0.0; h_count];
        for tau in 0..h_count {
            let mass: f64 = gamma.column(tau).iter().sum();
            marg_e[tau] = cum_e[h - 1][tau] * mass;
            marg_b[tau] = cum_b[h - 1][tau] * mass;
            if mass > 0.0 && (marg_e[tau] > 0.0 || marg_b[tau] > 0.0) {
                reachable[tau] = true;
                for s in 0..s_count {
                    beliefs[(s, tau)] = gamma[(s, tau)] / mass;
                }
            }
        }
        let m = std::mem::replace(&mut outcomes[h], DMatrix::zeros(0, 0));
        let f_count = m.ncols();
        let mut z = vec![0.0; f_count];
        let mut future_marginal = vec![0.0; f_count];
        for f in 0..f_count {
            let mut col_sum = 0.0;
            let mut marginal = 0.0;
            for s in 0..s_count {
                col_sum += m[(s, f)];
                marginal += occ_b[h - 1][s] * m[(s, f)];
            }
            z[f] = col_sum;
            future_marginal[f] = marginal;
        }
        steps.push(StepAlgebra {
            step: h,
            beliefs,
            history_reachable: reachable,
            history_marginal: marg_e,
            behavior_history_marginal: marg_b,
            outcomes: m,
            z,
            future_marginal,
            mean_belief: occ_e[h - 1].clone(),
            behavior_mean_belief: occ_b[h - 1].clone(),
            reward_to_go: rtg[h - 1].clone(),
        });
    }
    Ok(steps)
}

/// Builds the algebra for a single step.
pub fn build_step_algebra(
    model: &TabularPomdp,
    pi: &MemorylessPolicy,
    pi_b: &MemorylessPolicy,
    h: usize,
    budget: u64,
) -> Result<StepAlgebra> {
    let mut all = build_all_step_algebras(model, pi, pi_b, budget)?;
    Ok(all.remove(h - 1))
}

/// One evaluation problem: a model together with the evaluation and behavior
/// policies, plus every exact object derived from them.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: TabularPomdp,
    pub pi_e: MemorylessPolicy,
    pub pi_b: MemorylessPolicy,
    pub budget: u64,
    pub algebras: Vec<StepAlgebra>,
    /// Latent values of the evaluation policy, `[h-1][s]`.
    pub v_s_e: Vec<Vec<f64>>,
    /// Latent values of the behavior policy, `[h-1][s]`.
    pub v_s_b: Vec<Vec<f64>>,
    pub occ_e: Vec<Vec<f64>>,
    pub occ_b: Vec<Vec<f64>>,
    pub c_mu: f64,
}

impl Scenario {
    pub fn build(
        model: TabularPomdp,
        pi_e: MemorylessPolicy,
        pi_b: MemorylessPolicy,
        budget: u64,
    ) -> Result<Self> {
        model.check_shape()?;
        pi_e.check_shape(model.horizon, model.obs_count, model.action_count)?;
        pi_b.check_shape(model.horizon, model.obs_count, model.action_count)?;
        let c_mu = c_mu(&pi_e, &pi_b)?;
        let algebras = build_all_step_algebras(&model, &pi_e, &pi_b, budget)?;
        let v_s_e = latent_value(&model, &pi_e);
        let v_s_b = latent_value(&model, &pi_b);
        let occ_e = latent_occupancy(&model, &pi_e);
        let occ_b = latent_occupancy(&model, &pi_b);
        Ok(Self {
            model,
            pi_e,
            pi_b,
            budget,
            algebras,
            v_s_e,
            v_s_b,
            occ_e,
            occ_b,
            c_mu,
        })
    }

    pub fn dims(&self) -> SpaceDims {
        SpaceDims::of(&self.model)
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon
    }

    pub fn algebra(&self, h: usize) -> &StepAlgebra {
        &self.algebras[h - 1]
    }

    /// `J(pi_e)` from the exact latent values.
    pub fn true_value(&self) -> f64 {
        self.model
            .d1
            .iter()
            .zip(self.v_s_e[0].iter())
            .map(|(d, v)| d * v)
            .sum()
    }

    /// `E_{pi_b}[V(f_1)]` for a dense step-1 future table.
    pub fn behavior_mean_initial(&self, table: &[f64]) -> f64 {
        self.algebras[0]
            .future_marginal
            .iter()
            .zip(table.iter())
            .map(|(p, v)| p * v)
            .sum()
    }
}
